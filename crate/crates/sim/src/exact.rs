//! Exact-rational arithmetic for trace verification.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn from_f64(x: f64) -> Q {
    Q::from_float(x).unwrap_or_else(Q::zero)
}

pub fn from_int(x: i64) -> Q {
    Q::from_integer(BigInt::from(x))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn half() -> Q {
    Q::new(BigInt::from(1), BigInt::from(2))
}

pub fn weights(counts: &[Q]) -> Vec<Q> {
    let total = counts.iter().fold(Q::zero(), |acc, c| acc + c);
    if total.is_zero() {
        let n = from_int(counts.len() as i64);
        return counts.iter().map(|_| Q::one() / &n).collect();
    }
    counts.iter().map(|c| c / &total).collect()
}

/// Records are `(vote, result, final score)`; annulled records are skipped.
pub fn reputation(history: &[(i64, i64, Q)]) -> Q {
    let mut num = Q::zero();
    let mut den = Q::zero();
    for (a, r, fs) in history.iter().filter(|h| h.1 != 0) {
        num += from_int(a * r) * fs;
        den += fs;
    }
    if den.is_zero() {
        half()
    } else {
        half() * (num / den + Q::one())
    }
}

pub fn final_score(votes: &[i64], reps: &[Q], weights: &[Q]) -> Q {
    let mut num = Q::zero();
    let mut den = Q::zero();
    for ((v, r), w) in votes.iter().zip(reps).zip(weights) {
        let m = r * w;
        num += from_int(*v) * &m;
        den += m;
    }
    if den.is_zero() {
        half()
    } else {
        half() * (num / den + Q::one())
    }
}

/// Own term and leave-one-out rest for player `k`, plus the total mass of
/// the rest (for judging how close to zero it sits).
pub fn agreement_terms(k: usize, votes: &[i64], reps: &[Q], weights: &[Q]) -> (Q, Q, Q) {
    let mut rest = Q::zero();
    let mut mass = Q::zero();
    for i in (0..votes.len()).filter(|i| *i != k) {
        let t = from_int(votes[i]) * &reps[i] * &weights[i];
        mass += t.abs();
        rest += t;
    }
    (from_int(votes[k]) * &reps[k] * &weights[k], rest, mass)
}

pub fn sign(x: &Q) -> i8 {
    if x.is_positive() {
        1
    } else if x.is_negative() {
        -1
    } else {
        0
    }
}

/// `C*/(2q*^2)` or `2C*/(x^2 + x)` with `x = 2q* - 1`, in micro-units.
pub fn reward_micro(effort_micro: i64, q: f64, derivation: bool) -> Q {
    let c = from_int(effort_micro);
    let q = from_f64(q);
    if derivation {
        let x = from_int(2) * &q - Q::one();
        from_int(2) * c / (&x * &x + &x)
    } else {
        c / (from_int(2) * &q * &q)
    }
}
