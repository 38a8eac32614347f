//! Test reports and their JSON form.

use serde::{Deserialize, Serialize};

use crate::data::RiskTable;
use crate::weights::WeightSpec;

/// Result of one homogeneity test, serializable to JSON and back without
/// loss (floats round-trip exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// `"logrank"` or `"cvm"`.
    pub test: String,
    pub statistic: f64,
    /// Degrees of freedom (log-rank only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    /// Eigenvalue weights of the null mixture, descending (CVM only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    pub p_value: f64,
    pub weight: WeightSpec,
    /// First category with a pooled event.
    pub d_lo: usize,
    /// Last category used by the statistic.
    pub d_hi: usize,
    pub n_observable: usize,
    /// Label of the group whose component is dropped (CVM only; controlled
    /// by input ordering — the last group is dropped).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped_group: Option<String>,
    /// Reciprocal condition estimate of the inverted covariance (log-rank).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rcond: Option<f64>,
    /// Whether the covariance operator estimate passed the non-negativity
    /// gate (CVM).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate: Option<bool>,
    pub version: String,
    /// FNV-1a 64 fingerprint of the risk-table counts, hex encoded.
    pub input_digest: String,
}

pub fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

/// FNV-1a 64 over the canonical risk-table contents (labels and count
/// arrays); identifies the input data in reports.
pub fn input_digest(rt: &RiskTable) -> String {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&(rt.n_groups() as u64).to_le_bytes());
    eat(&(rt.max_cat() as u64).to_le_bytes());
    for g in 0..rt.n_groups() {
        eat(rt.group_labels()[g].as_bytes());
        eat(&[0]);
        for l in 1..=rt.max_cat() {
            eat(&(rt.events(g, l) as u64).to_le_bytes());
            eat(&(rt.censored(g, l) as u64).to_le_bytes());
        }
    }
    format!("{h:016x}")
}
