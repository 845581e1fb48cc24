//! Scenario files.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! rounds = 4
//!
//! [constants]
//! quality_threshold = 0.75
//! effort_cost = 1.0
//! epsilon = 0.001
//! delta_commit = 10
//! delta_reveal = 10
//! payment_variant = "simplified"
//! feedback_players = 5
//!
//! [[designs]]
//! valid = true
//!
//! [[players]]
//! id = "alice"
//! strategy = { kind = "truthful_effort", quality = 0.9 }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use attest_core::agents::Strategy;
use attest_core::money::Money;
use attest_core::trust::{self, PaymentSchedule, PaymentVariant, Vote};
use serde::{Deserialize, Serialize};
use toml::Spanned;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FEEDBACK_PLAYERS: usize = 5;
pub const DEFAULT_PLAYER_BALANCE: Money = Money::from_units(100);

/// Account names the runner reserves for the protocol parties.
pub const VENDOR: &str = "vendor";
pub const MANAGER: &str = "manager";
pub const ESCROW: &str = "escrow";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Number of designs announced; `designs` is cycled to fill them.
    pub rounds: u64,
    pub constants: Constants,
    pub designs: Vec<DesignConfig>,
    pub players: Vec<PlayerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub quality_threshold: f64,
    pub effort_cost: Money,
    pub epsilon: Money,
    pub delta_commit: u64,
    pub delta_reveal: u64,
    pub payment_variant: PaymentVariant,
    pub feedback_players: usize,
    pub vendor_balance: Option<Money>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignConfig {
    pub valid: bool,
    pub collateral: Option<Money>,
    /// The vendor hands the manager bytes that do not match the announced hash.
    pub tampered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerConfig {
    pub id: String,
    pub strategy: Strategy,
    pub deposit: Option<Money>,
    pub balance: Money,
    pub evaluates: Assignment,
    pub buys: Assignment,
}

/// Which designs a player is assigned to, by design index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    All,
    None,
    Designs(BTreeSet<u64>),
}

impl Assignment {
    pub fn includes(&self, j: u64) -> bool {
        match self {
            Assignment::All => true,
            Assignment::None => false,
            Assignment::Designs(set) => set.contains(&j),
        }
    }
}

impl ScenarioConfig {
    pub fn schedule(&self) -> PaymentSchedule {
        let c = &self.constants;
        PaymentSchedule::new(c.effort_cost, c.quality_threshold, c.epsilon, c.payment_variant)
            .expect("validated at load time")
    }

    pub fn design(&self, j: u64) -> &DesignConfig {
        &self.designs[(j % self.designs.len() as u64) as usize]
    }

    /// Players assigned to evaluate design `j`, in file order.
    pub fn evaluators(&self, j: u64) -> Vec<usize> {
        (0..self.players.len()).filter(|i| self.players[*i].evaluates.includes(j)).collect()
    }

    /// Buyers giving feedback on design `j`: the first `feedback_players`
    /// assigned buyers in file order.
    pub fn feedback_roster(&self, j: u64) -> Vec<usize> {
        (0..self.players.len())
            .filter(|i| self.players[*i].buys.includes(j))
            .take(self.constants.feedback_players)
            .collect()
    }

    /// Collateral for design `j`; by default enough for every assigned evaluator.
    pub fn collateral(&self, j: u64) -> Money {
        self.design(j)
            .collateral
            .unwrap_or_else(|| self.schedule().reward * self.evaluators(j).len().max(1) as i64)
    }

    pub fn vendor_balance(&self) -> Money {
        self.constants.vendor_balance.unwrap_or_else(|| (0..self.rounds).map(|j| self.collateral(j)).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text)
}

// Raw file shapes. Spans locate violations found after parsing.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Spanned<u32>,
    seed: u64,
    rounds: Option<Spanned<u64>>,
    constants: Spanned<RawConstants>,
    designs: Spanned<Vec<Spanned<RawDesign>>>,
    players: Spanned<Vec<Spanned<RawPlayer>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    quality_threshold: Spanned<f64>,
    effort_cost: Spanned<Units>,
    epsilon: Spanned<Units>,
    delta_commit: Spanned<u64>,
    delta_reveal: Spanned<u64>,
    #[serde(default)]
    payment_variant: Option<Spanned<String>>,
    #[serde(default)]
    feedback_players: Option<Spanned<usize>>,
    #[serde(default)]
    vendor_balance: Option<Spanned<Units>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    valid: bool,
    #[serde(default)]
    collateral: Option<Spanned<Units>>,
    #[serde(default)]
    tampered: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlayer {
    id: Spanned<String>,
    strategy: Spanned<Strategy>,
    #[serde(default)]
    deposit: Option<Spanned<Units>>,
    #[serde(default)]
    balance: Option<Spanned<Units>>,
    #[serde(default)]
    evaluates: Option<Spanned<RawAssignment>>,
    #[serde(default)]
    buys: Option<Spanned<RawAssignment>>,
}

/// Monetary amounts in whole units: an integer, a float or a decimal string.
#[derive(Deserialize)]
#[serde(untagged)]
enum Units {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Units {
    fn to_money(&self) -> Option<Money> {
        match self {
            Units::Int(i) => i.checked_mul(attest_core::money::MICROS_PER_UNIT).map(Money::from_micro),
            Units::Float(f) => Money::from_units_f64(*f),
            Units::Text(s) => s.parse().ok(),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawAssignment {
    Word(String),
    Designs(Vec<u64>),
}

struct Checker<'a> {
    src: &'a str,
    violations: Vec<Violation>,
}

impl Checker<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.src[..span.start.min(self.src.len())].matches('\n').count() + 1
    }

    fn at(&mut self, span: Range<usize>, message: impl Into<String>) {
        let line = Some(self.line(span));
        self.violations.push(Violation { line, message: message.into() });
    }

    fn money(&mut self, field: &str, v: &Spanned<Units>) -> Money {
        match v.get_ref().to_money() {
            Some(m) => m,
            None => {
                self.at(v.span(), format!("{field} is not a valid amount (at most 6 decimal places)"));
                Money::ZERO
            }
        }
    }

    fn assignment(&mut self, field: &str, v: &Option<Spanned<RawAssignment>>, default: Assignment) -> Assignment {
        let Some(v) = v else { return default };
        match v.get_ref() {
            RawAssignment::Word(w) if w == "all" => Assignment::All,
            RawAssignment::Word(w) if w == "none" => Assignment::None,
            RawAssignment::Word(w) => {
                self.at(v.span(), format!("{field} must be \"all\", \"none\" or a list of design indices, not {w:?}"));
                default
            }
            RawAssignment::Designs(list) => Assignment::Designs(list.iter().copied().collect()),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut ck = Checker { src: text, violations: Vec::new() };

    if *raw.schema_version.get_ref() != SCHEMA_VERSION {
        ck.at(
            raw.schema_version.span(),
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", raw.schema_version.get_ref()),
        );
    }

    let rc = raw.constants.get_ref();
    let q = *rc.quality_threshold.get_ref();
    if trust::validate_quality_threshold(q).is_err() {
        ck.at(rc.quality_threshold.span(), format!("quality_threshold {q} must satisfy 1/2 < q* <= 1"));
    }
    let effort_cost = ck.money("effort_cost", &rc.effort_cost);
    if !effort_cost.is_positive() {
        ck.at(rc.effort_cost.span(), "effort_cost must be positive");
    }
    let epsilon = ck.money("epsilon", &rc.epsilon);
    if !epsilon.is_positive() {
        ck.at(rc.epsilon.span(), "epsilon must be positive");
    }
    let delta_commit = *rc.delta_commit.get_ref();
    if delta_commit < 3 {
        ck.at(rc.delta_commit.span(), "delta_commit must be at least 3 ticks (registration, distribution, commit)");
    }
    let delta_reveal = *rc.delta_reveal.get_ref();
    if delta_reveal < 1 {
        ck.at(rc.delta_reveal.span(), "delta_reveal must be at least 1 tick");
    }
    let payment_variant = match &rc.payment_variant {
        None => PaymentVariant::default(),
        Some(v) => v.get_ref().parse().unwrap_or_else(|_| {
            ck.at(v.span(), format!("payment_variant must be \"simplified\" or \"derivation\", not {:?}", v.get_ref()));
            PaymentVariant::default()
        }),
    };
    let feedback_players = match &rc.feedback_players {
        None => DEFAULT_FEEDBACK_PLAYERS,
        Some(v) => {
            if *v.get_ref() == 0 {
                ck.at(v.span(), "feedback_players must be at least 1");
            }
            *v.get_ref()
        }
    };
    let vendor_balance = rc.vendor_balance.as_ref().map(|v| {
        let m = ck.money("vendor_balance", v);
        if m.is_negative() {
            ck.at(v.span(), "vendor_balance must not be negative");
        }
        m
    });
    if ck.violations.is_empty() {
        if let Err(e) = PaymentSchedule::new(effort_cost, q, epsilon, payment_variant) {
            ck.at(raw.constants.span(), format!("payment schedule: {e}"));
        }
    }

    let designs_span = raw.designs.span();
    let mut designs = Vec::new();
    for d in raw.designs.get_ref() {
        let rd = d.get_ref();
        let collateral = rd.collateral.as_ref().map(|c| {
            let m = ck.money("collateral", c);
            if !m.is_positive() {
                ck.at(c.span(), "collateral must be positive");
            }
            m
        });
        designs.push(DesignConfig { valid: rd.valid, collateral, tampered: rd.tampered });
    }
    if designs.is_empty() {
        ck.at(designs_span, "at least one design is required");
    }
    let rounds = match &raw.rounds {
        None => designs.len() as u64,
        Some(r) => {
            if *r.get_ref() == 0 {
                ck.at(r.span(), "rounds must be at least 1");
            }
            *r.get_ref()
        }
    };

    let players_span = raw.players.span();
    let mut players = Vec::new();
    let mut spans = Vec::new();
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<String, (Vote, Range<usize>)> = BTreeMap::new();
    for p in raw.players.get_ref() {
        let rp = p.get_ref();
        let id = rp.id.get_ref().clone();
        if id.is_empty() {
            ck.at(rp.id.span(), "player id must not be empty");
        } else if [VENDOR, MANAGER, ESCROW].contains(&id.as_str()) {
            ck.at(rp.id.span(), format!("player id {id:?} is reserved"));
        } else if !seen.insert(id.clone()) {
            ck.at(rp.id.span(), format!("duplicate player id {id:?}"));
        }
        let strategy = rp.strategy.get_ref().clone();
        if let Err(e) = strategy.validate() {
            ck.at(rp.strategy.span(), format!("player {id}: {e}"));
        }
        if let Strategy::Colluder { group, target } = &strategy {
            match groups.get(group) {
                Some((t, first)) if t != target => {
                    let first_line = ck.line(first.clone());
                    ck.at(
                        rp.strategy.span(),
                        format!("colluder group {group:?} targets {t:?} on line {first_line}; {id} targets {target:?}"),
                    );
                }
                Some(_) => {}
                None => {
                    groups.insert(group.clone(), (*target, rp.strategy.span()));
                }
            }
        }
        let deposit = rp.deposit.as_ref().map(|d| {
            let m = ck.money("deposit", d);
            if m.is_negative() {
                ck.at(d.span(), "deposit must not be negative");
            }
            m
        });
        let balance = match &rp.balance {
            None => DEFAULT_PLAYER_BALANCE,
            Some(b) => {
                let m = ck.money("balance", b);
                if m.is_negative() {
                    ck.at(b.span(), "balance must not be negative");
                }
                m
            }
        };
        let evaluates = ck.assignment("evaluates", &rp.evaluates, Assignment::All);
        let buys = ck.assignment("buys", &rp.buys, Assignment::None);
        for (field, a, raw) in [("evaluates", &evaluates, &rp.evaluates), ("buys", &buys, &rp.buys)] {
            if let (Assignment::Designs(set), Some(raw)) = (a, raw) {
                if let Some(bad) = set.iter().find(|j| **j >= rounds) {
                    ck.at(raw.span(), format!("player {id}: {field} names design {bad}, but only {rounds} are run"));
                }
            }
        }
        if let Some(j) = (0..rounds).find(|j| evaluates.includes(*j) && buys.includes(*j)) {
            ck.at(p.span(), format!("player {id} is assigned to both evaluation and feedback of design {j}"));
        }
        spans.push(p.span());
        players.push(PlayerConfig { id, strategy, deposit, balance, evaluates, buys });
    }
    if players.is_empty() {
        ck.at(players_span.clone(), "at least one player is required");
    }

    if !designs.is_empty() {
        let mut short = Vec::new();
        for j in 0..rounds {
            let n = players.iter().filter(|p| p.evaluates.includes(j) && p.strategy.participates()).count();
            if n < 2 {
                short.push(j);
            }
            if short.len() > 8 {
                break;
            }
        }
        for j in short {
            ck.at(players_span.clone(), format!("design {j} has fewer than 2 evaluation players"));
        }
    }

    if !ck.violations.is_empty() {
        return Err(ConfigError::Invalid(ck.violations));
    }
    Ok(ScenarioConfig {
        seed: raw.seed,
        rounds,
        constants: Constants {
            quality_threshold: q,
            effort_cost,
            epsilon,
            delta_commit,
            delta_reveal,
            payment_variant,
            feedback_players,
            vendor_balance,
        },
        designs,
        players,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 1

[constants]
quality_threshold = 0.75
effort_cost = 1
epsilon = "0.001"
delta_commit = 10
delta_reveal = 10

[[designs]]
valid = true

[[players]]
id = "a"
strategy = { kind = "truthful_effort", quality = 0.9 }

[[players]]
id = "b"
strategy = { kind = "truthful_effort", quality = 0.9 }

[[players]]
id = "c"
strategy = { kind = "truthful_effort", quality = 0.9 }
"#;

    #[test]
    fn minimal_config_loads() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.rounds, 1);
        assert_eq!(c.constants.epsilon, Money::from_micro(1_000));
        assert_eq!(c.constants.feedback_players, DEFAULT_FEEDBACK_PLAYERS);
        assert_eq!(c.evaluators(0), vec![0, 1, 2]);
        assert_eq!(c.collateral(0), c.schedule().reward * 3);
    }

    #[test]
    fn half_threshold_rejected_with_line() {
        let text = MINIMAL.replace("quality_threshold = 0.75", "quality_threshold = 0.5");
        let err = parse_config(&text).unwrap_err();
        let v = err.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].line, Some(6));
        assert!(v[0].message.contains("1/2 < q*"));
    }

    #[test]
    fn overlap_rejected() {
        let text = MINIMAL.replacen(
            "id = \"c\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }",
            "id = \"c\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }\nbuys = [0]",
            1,
        );
        let err = parse_config(&text).unwrap_err();
        assert!(err.violations().iter().any(|v| v.message.contains("both evaluation and feedback")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\ncolour = \"red\"");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(ref m) if m.contains("colour")), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = MINIMAL
            .replace("quality_threshold = 0.75", "quality_threshold = 1.5")
            .replace("delta_commit = 10", "delta_commit = 2")
            .replace("id = \"b\"", "id = \"a\"")
            .replace("quality = 0.9 }\n\n[[players]]\nid = \"c\"", "quality = 0.3 }\n\n[[players]]\nid = \"c\"");
        let err = parse_config(&text).unwrap_err();
        let msgs: Vec<_> = err.violations().iter().map(|v| v.message.clone()).collect();
        assert!(msgs.iter().any(|m| m.contains("quality_threshold")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("delta_commit")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("duplicate")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("quality 0.3")), "{msgs:?}");
        assert!(err.violations().iter().all(|v| v.line.is_some()));
    }

    #[test]
    fn colluders_must_share_a_target() {
        let text = MINIMAL
            .replace(
                "id = \"a\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }",
                "id = \"a\"\nstrategy = { kind = \"colluder\", group = \"g\", target = -1 }",
            )
            .replace(
                "id = \"b\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }",
                "id = \"b\"\nstrategy = { kind = \"colluder\", group = \"g\", target = 1 }",
            );
        let err = parse_config(&text).unwrap_err();
        assert!(err.violations()[0].message.contains("colluder group"));
    }

    #[test]
    fn too_few_evaluators_rejected() {
        let text = MINIMAL.replace(
            "id = \"b\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }",
            "id = \"b\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }\nevaluates = \"none\"",
        )
        .replace(
            "id = \"c\"\nstrategy = { kind = \"truthful_effort\", quality = 0.9 }",
            "id = \"c\"\nstrategy = { kind = \"abstain\" }",
        );
        let err = parse_config(&text).unwrap_err();
        assert!(err.violations()[0].message.contains("fewer than 2"));
    }
}
