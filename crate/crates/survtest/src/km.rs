//! Discrete Kaplan–Meier estimators: per-category hazard, cumulative hazard,
//! and probability mass, per group.

use crate::data::RiskTable;

/// ĥ_p(ℓ) = ΔR_p(ℓ) / V_p(ℓ) when V_p(ℓ) > 0, else 0. Index 0 holds
/// category 1; the array spans `1..=rt.max_cat()`.
pub fn hazard_hat(rt: &RiskTable, p: usize) -> Vec<f64> {
    (1..=rt.max_cat())
        .map(|l| {
            let v = rt.at_risk(p, l);
            if v > 0 {
                rt.events(p, l) as f64 / v as f64
            } else {
                0.0
            }
        })
        .collect()
}

/// Ĥ_p(i) = Σ_{ℓ≤i} ĥ_p(ℓ).
pub fn cumulative_hazard_hat(hazard: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    hazard
        .iter()
        .map(|h| {
            acc += h;
            acc
        })
        .collect()
}

/// π̂_p(i) = ĥ_p(i) · Π_{ℓ<i} (1 − ĥ_p(ℓ)), the estimated probability mass.
pub fn pmf_hat(hazard: &[f64]) -> Vec<f64> {
    let mut survival = 1.0;
    hazard
        .iter()
        .map(|h| {
            let mass = h * survival;
            survival *= 1.0 - h;
            mass
        })
        .collect()
}

/// All three Kaplan–Meier estimates for every group of a risk table.
#[derive(Debug, Clone)]
pub struct HazardEstimate {
    hazard: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
    pmf: Vec<Vec<f64>>,
}

impl HazardEstimate {
    pub fn from_risk_table(rt: &RiskTable) -> Self {
        let hazard: Vec<Vec<f64>> = (0..rt.n_groups()).map(|p| hazard_hat(rt, p)).collect();
        let cumulative = hazard.iter().map(|h| cumulative_hazard_hat(h)).collect();
        let pmf = hazard.iter().map(|h| pmf_hat(h)).collect();
        HazardEstimate {
            hazard,
            cumulative,
            pmf,
        }
    }

    /// ĥ_p(ℓ), 1-based category; 0 outside the table.
    #[inline]
    pub fn hazard(&self, p: usize, cat: usize) -> f64 {
        if cat == 0 || cat > self.hazard[p].len() {
            0.0
        } else {
            self.hazard[p][cat - 1]
        }
    }

    pub fn hazard_array(&self, p: usize) -> &[f64] {
        &self.hazard[p]
    }

    pub fn cumulative_array(&self, p: usize) -> &[f64] {
        &self.cumulative[p]
    }

    pub fn pmf_array(&self, p: usize) -> &[f64] {
        &self.pmf[p]
    }
}
