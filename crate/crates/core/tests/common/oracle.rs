//! Exact-rational recomputation of the trust formulas, written directly from
//! the definitions with no shared code paths.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn int(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}

fn half() -> BigRational {
    BigRational::new(BigInt::from(1), BigInt::from(2))
}

/// `counts[i] / sum(counts)`, uniform when the sum is zero.
pub fn weights(counts: &[BigRational]) -> Vec<BigRational> {
    let mut total = BigRational::zero();
    for c in counts {
        total += c;
    }
    if total.is_zero() {
        let n = int(counts.len() as i64);
        return counts.iter().map(|_| BigRational::one() / &n).collect();
    }
    counts.iter().map(|c| c / &total).collect()
}

/// `((sum a*r*fs) / (sum fs) + 1) / 2` over records `(a, r, fs)` with `r != 0`.
pub fn reputation(history: &[(i64, i64, BigRational)]) -> BigRational {
    let mut num = BigRational::zero();
    let mut den = BigRational::zero();
    for (a, r, fs) in history {
        if *r == 0 {
            continue;
        }
        num += int(a * r) * fs;
        den += fs;
    }
    if den.is_zero() {
        return half();
    }
    half() * (num / den + BigRational::one())
}

pub fn final_score(votes: &[i64], reps: &[BigRational], weights: &[BigRational]) -> BigRational {
    let mut num = BigRational::zero();
    let mut den = BigRational::zero();
    for i in 0..votes.len() {
        let m = &reps[i] * &weights[i];
        num += int(votes[i]) * &m;
        den += m;
    }
    if den.is_zero() {
        return half();
    }
    half() * (num / den + BigRational::one())
}

/// 1 agree, -1 disagree, 0 neutral.
pub fn agreement(k: usize, votes: &[i64], reps: &[BigRational], weights: &[BigRational]) -> i8 {
    let own = int(votes[k]) * &reps[k] * &weights[k];
    let mut rest = BigRational::zero();
    for i in 0..votes.len() {
        if i != k {
            rest += int(votes[i]) * &reps[i] * &weights[i];
        }
    }
    let s = |x: &BigRational| if x.is_positive() { 1 } else if x.is_negative() { -1 } else { 0 };
    match (s(&own), s(&rest)) {
        (0, _) | (_, 0) => 0,
        (a, b) if a == b => 1,
        _ => -1,
    }
}

pub fn decide(fs: &BigRational, q: &BigRational) -> i64 {
    if fs > q {
        1
    } else if *fs < BigRational::one() - q {
        -1
    } else {
        0
    }
}
