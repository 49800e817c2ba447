//! Verification reports shared by every checker, plus content hashing for
//! reproducibility stamps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Outcome of a report. Only `Fail` affects exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    BelowRegime,
}

/// One inequality or identity tested at its worst point. `margin` is
/// positive when the check holds (slack in the natural units of the check).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub location: String,
}

impl Check {
    /// Infinite margins are stored as `+-f64::MAX` so that JSON keeps a number.
    pub fn new(name: impl Into<String>, pass: bool, margin: f64, location: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            pass,
            margin: margin.clamp(-f64::MAX, f64::MAX),
            location: location.into(),
        }
    }

    /// A check that passes iff `margin >= 0`.
    pub fn from_margin(name: impl Into<String>, margin: f64, location: impl Into<String>) -> Check {
        Check::new(name, margin >= 0.0, margin, location)
    }
}

/// A verifier's output: the statement tested, the parameters it was tested
/// with, and one entry per check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub lemma: String,
    pub block: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<Check>,
    /// Set when the asymptotic statement was exercised below its regime of
    /// validity; failing checks then yield `below-regime` instead of `fail`.
    pub below_regime: bool,
    pub status: Status,
}

impl Report {
    pub fn new(lemma: impl Into<String>) -> Report {
        Report {
            lemma: lemma.into(),
            block: BTreeMap::new(),
            checks: Vec::new(),
            below_regime: false,
            status: Status::Pass,
        }
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Report {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.block.insert(key.to_string(), v);
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
        self.status = self.compute_status();
    }

    pub fn set_below_regime(&mut self, flag: bool) {
        self.below_regime = flag;
        self.status = self.compute_status();
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn compute_status(&self) -> Status {
        if self.all_pass() {
            Status::Pass
        } else if self.below_regime {
            Status::BelowRegime
        } else {
            Status::Fail
        }
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

/// Hex SHA-256 of a byte string.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's canonical JSON (struct fields in declaration order,
/// maps sorted by key).
pub fn json_hash<T: Serialize>(value: &T) -> crate::Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(content_hash(serde_json::to_string(&v)?.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_checks() {
        let mut r = Report::new("demo").param("alpha", 2.0);
        r.push(Check::from_margin("ok", 0.5, "x = 1"));
        assert_eq!(r.status, Status::Pass);
        r.push(Check::from_margin("bad", -0.1, "x = 2"));
        assert_eq!(r.status, Status::Fail);
        r.set_below_regime(true);
        assert_eq!(r.status, Status::BelowRegime);
        assert_eq!(r.failing(), vec!["bad"]);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"below-regime\""));
    }

    #[test]
    fn hash_is_key_order_independent() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":2}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":2,"b":1}"#).unwrap();
        assert_eq!(json_hash(&a).unwrap(), json_hash(&b).unwrap());
        assert_eq!(content_hash(b"").len(), 64);
    }
}
