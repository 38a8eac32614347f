//! Predictable weight processes of the product class: the scalar factor
//! `u(ℓ)` (unit, Tarone-Ware, or Fleming-Harrington) and the pairwise weight
//!
//! `U_{q,q1}(ℓ) = n^{-1/2} · u(ℓ) · V_q(ℓ) V_{q1}(ℓ) / V★(ℓ)`.
//!
//! Ratios follow the indicator convention: any `1/V` with `V = 0` is read as
//! zero. The conventions `ΔR★(0) = 0` and `V★(0) = n` make the
//! Fleming-Harrington ratio vanish at j = 0 and its survival product start
//! at 1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::RiskTable;
use crate::error::Error;

/// Choice of the scalar weight function `u(ℓ)`.
///
/// `TaroneWare { gamma }` is `(V★(ℓ)/n)^gamma` (the classical case is
/// `gamma = 1/2`). `FlemingHarrington { beta, delta }` is
/// `(ΔR★(ℓ−1)/V★(ℓ−1))^beta · (Π_{j<ℓ} (1 − ΔR★(j)/V★(j)))^delta` with
/// `0^0 := 1`, so `beta = 0` disables the first factor. Note that
/// `beta > 0` makes `u(1) = 0` because `ΔR★(0) = 0` by convention, so the
/// first category contributes nothing to the statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSpec {
    Unit,
    TaroneWare { gamma: f64 },
    FlemingHarrington { beta: f64, delta: f64 },
}

impl WeightSpec {
    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            WeightSpec::Unit => Ok(()),
            WeightSpec::TaroneWare { gamma } => {
                if gamma.is_finite() && gamma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "Tarone-Ware exponent must be finite and > 0, got {gamma}"
                    )))
                }
            }
            WeightSpec::FlemingHarrington { beta, delta } => {
                if beta.is_finite() && delta.is_finite() && beta >= 0.0 && delta >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "Fleming-Harrington parameters must be finite and >= 0, got ({beta}, {delta})"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::Unit => write!(f, "unit"),
            WeightSpec::TaroneWare { gamma } => write!(f, "tw:{gamma}"),
            WeightSpec::FlemingHarrington { beta, delta } => write!(f, "fh:{beta},{delta}"),
        }
    }
}

impl FromStr for WeightSpec {
    type Err = Error;

    /// Grammar: `unit | tw:<gamma> | fh:<beta>,<delta>`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = |s: &str| Error::InvalidInput(format!(
            "invalid weight `{s}`; expected unit, tw:<gamma>, or fh:<beta>,<delta>"
        ));
        let spec = if s == "unit" {
            WeightSpec::Unit
        } else if let Some(rest) = s.strip_prefix("tw:") {
            let gamma: f64 = rest.parse().map_err(|_| bad(s))?;
            WeightSpec::TaroneWare { gamma }
        } else if let Some(rest) = s.strip_prefix("fh:") {
            let (b, d) = rest.split_once(',').ok_or_else(|| bad(s))?;
            let beta: f64 = b.parse().map_err(|_| bad(s))?;
            let delta: f64 = d.parse().map_err(|_| bad(s))?;
            WeightSpec::FlemingHarrington { beta, delta }
        } else {
            return Err(bad(s));
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for WeightSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 0^0 := 1 so that a zero exponent disables its factor.
#[inline]
fn pow00(base: f64, exp: f64) -> f64 {
    if exp == 0.0 {
        1.0
    } else {
        base.powf(exp)
    }
}

/// Evaluate `u(ℓ)` for one category.
pub fn u_eval(spec: &WeightSpec, rt: &RiskTable, cat: usize) -> f64 {
    debug_assert!(cat >= 1);
    match *spec {
        WeightSpec::Unit => 1.0,
        WeightSpec::TaroneWare { gamma } => {
            let ratio = rt.pooled_at_risk(cat) as f64 / rt.total_n() as f64;
            ratio.powf(gamma)
        }
        WeightSpec::FlemingHarrington { beta, delta } => {
            let event_ratio = pooled_event_ratio(rt, cat - 1);
            let mut survival = 1.0;
            for j in 0..cat {
                survival *= 1.0 - pooled_event_ratio(rt, j);
            }
            pow00(event_ratio, beta) * pow00(survival, delta)
        }
    }
}

/// Evaluate `u(ℓ)` for every category `1..=rt.max_cat()` in one pass; entry
/// `l-1` equals `u_eval(spec, rt, l)` bit for bit.
pub fn u_profile(spec: &WeightSpec, rt: &RiskTable) -> Vec<f64> {
    match *spec {
        WeightSpec::Unit => vec![1.0; rt.max_cat()],
        WeightSpec::TaroneWare { .. } => {
            (1..=rt.max_cat()).map(|l| u_eval(spec, rt, l)).collect()
        }
        WeightSpec::FlemingHarrington { beta, delta } => {
            let mut survival = 1.0;
            (1..=rt.max_cat())
                .map(|l| {
                    survival *= 1.0 - pooled_event_ratio(rt, l - 1);
                    pow00(pooled_event_ratio(rt, l - 1), beta) * pow00(survival, delta)
                })
                .collect()
        }
    }
}

/// ΔR★(j)/V★(j) under the indicator convention (0/0 := 0).
#[inline]
fn pooled_event_ratio(rt: &RiskTable, j: usize) -> f64 {
    let v = rt.pooled_at_risk(j);
    if v > 0 {
        rt.pooled_events(j) as f64 / v as f64
    } else {
        0.0
    }
}

/// The pairwise weight `U_{q,q1}(ℓ)`; zero when V★(ℓ) = 0.
pub fn pair_weight(spec: &WeightSpec, rt: &RiskTable, q: usize, q1: usize, cat: usize) -> f64 {
    debug_assert!(q != q1);
    pair_weight_given_u(rt, u_eval(spec, rt, cat), q, q1, cat)
}

/// Same as [`pair_weight`] with `u(ℓ)` already evaluated (hot-loop form).
#[inline]
pub fn pair_weight_given_u(rt: &RiskTable, u: f64, q: usize, q1: usize, cat: usize) -> f64 {
    let v_star = rt.pooled_at_risk(cat);
    if v_star == 0 {
        return 0.0;
    }
    let n = rt.total_n() as f64;
    u * (rt.at_risk(q, cat) as f64 * rt.at_risk(q1, cat) as f64 / v_star as f64) / n.sqrt()
}
