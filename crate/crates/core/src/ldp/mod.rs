//! Rate-function evaluation and small-noise diagnostics.
//!
//! * [`rate_function`] approximates `I(h) = inf { |g|^2 / 2 : Gamma0(g) = h }`
//!   by penalty continuation over a coarse control lattice.
//! * [`condition_a_suite`] measures how the skeleton map reacts to weakly
//!   convergent controls.
//! * [`condition_b_suite`] measures `E ||u^eps - Gamma0(g)||^p` as `eps -> 0`.
//! * [`ldp_probability_scan`] estimates `eps log P(||u^eps - Gamma0(0)|| > c)`.

mod conditions;
mod rate;
mod scan;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::fmt17;

pub use conditions::{
    condition_a_suite, condition_b_suite, oscillation_response_oracle, ConditionAConfig, ConditionBConfig,
    PerturbationFamily,
};
pub use rate::{rate_function, ControlLattice, ForwardMap, RateOptions, RateResult};
pub use scan::{ldp_probability_scan, EventWindow, ScanConfig, ScanEntry, ScanReport, HIT_GUARD};

/// Named pass/fail outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    /// The measured quantity the check was decided on.
    pub value: f64,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, value: f64, detail: impl Into<String>) -> Self {
        Verdict { name: name.to_string(), passed, value, detail: detail.into() }
    }
}

/// One row of a condition report: the discrepancy at one index (`n` or `eps`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub index: f64,
    /// Moment order, for moment-type discrepancies.
    pub p: Option<f64>,
    pub value: f64,
    pub std_error: Option<f64>,
    pub aux: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub entries: Vec<ConditionEntry>,
    /// Discrepancies decrease along the index sequence.
    pub monotone: bool,
    /// Fitted log-log slope of discrepancy against index.
    pub decay_rate: f64,
    pub verdicts: Vec<Verdict>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Entries with moment order `p` (or all entries for `None`).
    pub fn series(&self, p: Option<f64>) -> Vec<&ConditionEntry> {
        self.entries.iter().filter(|e| e.p == p).collect()
    }

    /// Columns `index,p,value,std_error` followed by the auxiliary keys.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let keys: Vec<&String> = self.entries.first().map(|e| e.aux.keys().collect()).unwrap_or_default();
        write!(out, "index,p,value,std_error")?;
        for k in &keys {
            write!(out, ",{k}")?;
        }
        writeln!(out)?;
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for e in &self.entries {
            write!(out, "{},{},{},{}", fmt17(e.index), opt(e.p), fmt17(e.value), opt(e.std_error))?;
            for k in &keys {
                write!(out, ",{}", opt(e.aux.get(*k).copied()))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
