//! Machine-readable result records.
//!
//! Every record carries the tolerances it was judged against, so a report
//! file is self-describing. Maps are ordered, which keeps serialized output
//! byte-stable for identical inputs.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Digest of the canonical JSON form of `inputs`.
pub fn inputs_digest<T: Serialize + ?Sized>(inputs: &T) -> String {
    let canonical = serde_json::to_value(inputs)
        .map(|v| v.to_string())
        .unwrap_or_default();
    sha256_hex(canonical.as_bytes())
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub op: String,
    pub inputs_digest: String,
    pub outputs: Value,
    pub residuals: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    /// `None` when the op makes no pass/fail claim.
    pub passed: Option<bool>,
}

impl Record {
    pub fn new<I: Serialize + ?Sized>(op: &str, inputs: &I) -> Self {
        Self {
            op: op.to_string(),
            inputs_digest: inputs_digest(inputs),
            outputs: Value::Null,
            residuals: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            passed: None,
        }
    }

    pub fn outputs<O: Serialize + ?Sized>(mut self, outputs: &O) -> Self {
        self.outputs = serde_json::to_value(outputs).unwrap_or(Value::Null);
        self
    }

    /// Records `residual` with its tolerance; the record fails if any
    /// residual exceeds its tolerance or is not finite.
    pub fn check(mut self, name: &str, residual: f64, tolerance: f64) -> Self {
        self.residuals.insert(name.to_string(), residual);
        self.tolerances.insert(name.to_string(), tolerance);
        let ok = residual.is_finite() && residual <= tolerance;
        self.passed = Some(self.passed.unwrap_or(true) && ok);
        self
    }

    /// A boolean claim, stored as residual 0 (holds) or 1 (fails) against tolerance 0.
    pub fn claim(self, name: &str, holds: bool) -> Self {
        self.check(name, if holds { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn passed(&self) -> bool {
        self.passed != Some(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_known_and_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(inputs_digest(&[1.0, 2.0]), inputs_digest(&vec![1.0, 2.0]));
    }

    #[test]
    fn checks_accumulate() {
        let r = Record::new("x", &0).check("a", 1e-12, 1e-10);
        assert!(r.passed());
        let r = r.check("b", f64::NAN, 1.0);
        assert!(!r.passed());
        assert!(Record::new("y", &0).passed.is_none());
        assert!(!Record::new("z", &0).claim("c", false).passed());
        let s = serde_json::to_string(
            &Record::new("x", &0)
                .check("b", 0.0, 1.0)
                .check("a", 0.0, 1.0),
        )
        .unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
    }
}
