//! Buffer hierarchy and compute array description.
//!
//! Level 0 is the off-chip memory; higher indices sit closer to compute.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid architecture: {0}")]
    Invalid(String),
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub name: String,
    /// Words; absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u64>,
    /// Words per cycle.
    pub bandwidth: u64,
    pub read_energy: f64,
    pub write_energy: f64,
    #[serde(default = "one")]
    pub fanout: u64,
    #[serde(default)]
    pub hop_energy: f64,
}

fn one() -> u64 {
    1
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compute {
    pub units: u64,
    #[serde(default = "one")]
    pub ops_per_cycle_per_unit: u64,
    pub op_energy: f64,
    #[serde(default = "one")]
    pub pipeline_stages_supported: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub levels: Vec<Level>,
    pub compute: Compute,
}

impl Architecture {
    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let a: Architecture = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
                ArchError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
            }
            _ => ArchError::Invalid(e.to_string()),
        })?;
        a.check()?;
        Ok(a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    pub fn check(&self) -> Result<(), ArchError> {
        if self.levels.is_empty() {
            return Err(ArchError::Invalid("at least one level (off-chip) is required".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.name.is_empty() {
                return Err(ArchError::Invalid(format!("level {i} has an empty name")));
            }
            if self.levels[..i].iter().any(|o| o.name == l.name) {
                return Err(ArchError::Invalid(format!("duplicate level name {}", l.name)));
            }
            if l.capacity == Some(0) {
                return Err(ArchError::Invalid(format!("level {} has zero capacity", l.name)));
            }
            if l.fanout == 0 {
                return Err(ArchError::Invalid(format!("level {} has zero fanout", l.name)));
            }
            let energies = [l.read_energy, l.write_energy, l.hop_energy];
            if energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
                return Err(ArchError::Invalid(format!("level {} has a negative energy", l.name)));
            }
        }
        if self.compute.units == 0 || self.compute.ops_per_cycle_per_unit == 0 {
            return Err(ArchError::Invalid("compute needs at least one unit and one op per cycle".into()));
        }
        if !self.compute.op_energy.is_finite() || self.compute.op_energy < 0.0 {
            return Err(ArchError::Invalid("op_energy must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.name == name)
    }

    /// Index of the level next to compute.
    pub fn innermost(&self) -> usize {
        self.levels.len() - 1
    }

    /// Copy with every on-chip level's capacity replaced.
    pub fn with_capacity(&self, capacity: Option<u64>) -> Self {
        let mut a = self.clone();
        for l in a.levels.iter_mut().skip(1) {
            l.capacity = capacity;
        }
        a
    }
}
