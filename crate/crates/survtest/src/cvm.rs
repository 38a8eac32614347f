//! The discrete Cramér–von Mises test: the weighted random field over
//! observable categories, its squared ℓ²-norm, the blocked covariance
//! operator estimate, and the weighted-chi-square p-value.
//!
//! With K = J−1 components and observable categories r_1 < … < r_L, the
//! field is `g_q(r) = φ̂_q(r) · LR_q(r)` and the statistic is
//! `CVM = Σ_{r,q} g_q(r)²`. Its null law is approximated by
//! `Σ_s λ̂_s χ²_{1,s}` where λ̂ are the eigenvalues of the blocked operator
//! `Ŷ₀` with (K×K) blocks `M̂₀(r_i) Γ̂₀(r_min(i,j)) M̂₀(r_j)`,
//! `M̂₀(r) = diag(φ̂_1(r), …, φ̂_K(r))`. The p-value is defined only when
//! `Ŷ₀` is numerically non-negative (the gate).

use crate::data::{category_range, CategoryRange, RiskTable};
use crate::error::{Error, Result};
use crate::km::HazardEstimate;
use crate::logrank::LogRankState;
use crate::numerics::{imhof_tail, sym_eigenvalues, SymMatrix};
use crate::report::{input_digest, tool_version, TestReport};
use crate::weights::{u_profile, WeightSpec};

/// Relative tolerance below which a negative eigenvalue is attributed to
/// rounding and clipped to zero; anything worse fails the gate.
pub const GATE_EPS: f64 = 1e-10;

/// Eigenvalues below `1e-12 · max λ̂` are dropped from the mixture.
pub const LAMBDA_CUT_REL: f64 = 1e-12;

/// Field values `g_q(r_i)` for the observable categories, row i holding the
/// K = J−1 components at r_i.
pub fn glr_field(state: &LogRankState, range: &CategoryRange) -> Vec<Vec<f64>> {
    let k = state.n_groups() - 1;
    range
        .observable
        .iter()
        .map(|&r| (0..k).map(|q| state.phi(q, r) * state.lr(q, r)).collect())
        .collect()
}

/// The CVM statistic: sum of squares of the field.
pub fn cvm_statistic(field: &[Vec<f64>]) -> f64 {
    field
        .iter()
        .map(|row| row.iter().map(|g| g * g).sum::<f64>())
        .sum()
}

/// The blocked covariance operator estimate `Ŷ₀`, dimension K·L.
/// Block (i, j) is `M̂₀(r_i) Γ̂₀(r_min(i,j)) M̂₀(r_j)`; rows are laid out as
/// index `i·K + q`.
pub fn y0_matrix(state: &LogRankState, range: &CategoryRange) -> SymMatrix {
    let k = state.n_groups() - 1;
    let cats = &range.observable;
    let phis: Vec<Vec<f64>> = cats
        .iter()
        .map(|&r| (0..k).map(|q| state.phi(q, r)).collect())
        .collect();
    let gammas: Vec<SymMatrix> = cats.iter().map(|&r| state.gamma0(r)).collect();

    SymMatrix::from_upper(k * cats.len(), |row, col| {
        let (i, a) = (row / k, row % k);
        let (j, b) = (col / k, col % k);
        // row <= col implies i <= j, so the earlier category is i's.
        phis[i][a] * gammas[i.min(j)].get(a, b) * phis[j][b]
    })
}

/// Everything the CVM test computes, exposed for inspection.
#[derive(Debug, Clone)]
pub struct CvmComputation {
    pub components: usize,
    pub range: CategoryRange,
    pub field: Vec<Vec<f64>>,
    pub statistic: f64,
    pub y0: SymMatrix,
    /// Eigenvalues of `Ŷ₀`, descending, rounding-level negatives clipped.
    pub eigenvalues: Vec<f64>,
    pub gate: bool,
}

impl CvmComputation {
    pub fn from_state(state: &LogRankState, range: CategoryRange) -> Result<CvmComputation> {
        let field = glr_field(state, &range);
        let statistic = cvm_statistic(&field);
        let y0 = y0_matrix(state, &range);
        let mut eigenvalues = sym_eigenvalues(&y0)?;
        let max_eig = eigenvalues.first().copied().unwrap_or(0.0);
        let min_eig = eigenvalues.last().copied().unwrap_or(0.0);
        let gate = min_eig >= -GATE_EPS * max_eig.max(1.0);
        if gate {
            for l in &mut eigenvalues {
                if *l < 0.0 {
                    *l = 0.0;
                }
            }
        }
        Ok(CvmComputation {
            components: state.n_groups() - 1,
            range,
            field,
            statistic,
            y0,
            eigenvalues,
            gate,
        })
    }

    /// Weights entering the p-value mixture (those above the relative cut).
    pub fn mixture_weights(&self) -> Vec<f64> {
        let max_eig = self.eigenvalues.first().copied().unwrap_or(0.0);
        let cut = LAMBDA_CUT_REL * max_eig;
        self.eigenvalues
            .iter()
            .copied()
            .filter(|&l| l > cut)
            .collect()
    }

    pub fn p_value(&self) -> Result<f64> {
        if !self.gate {
            return Err(Error::GateFailed {
                min_eigenvalue: self.eigenvalues.last().copied().unwrap_or(0.0),
            });
        }
        let weights = self.mixture_weights();
        if weights.is_empty() {
            // Fully degenerate operator (all hazards 0 or 1): the mixture is
            // the point mass at zero and the statistic is zero as well.
            return Ok(if self.statistic > 0.0 { 0.0 } else { 1.0 });
        }
        imhof_tail(&weights, self.statistic)
    }
}

/// The discrete Cramér–von Mises homogeneity test.
pub fn cvm_test(rt: &RiskTable, spec: &WeightSpec) -> Result<TestReport> {
    spec.validate()?;
    cvm_test_with_profile(rt, &u_profile(spec, rt), *spec)
}

/// CVM test with an explicit weight profile; `echo` is recorded in the
/// report.
pub fn cvm_test_with_profile(rt: &RiskTable, u: &[f64], echo: WeightSpec) -> Result<TestReport> {
    let range = category_range(rt)?;
    let hz = HazardEstimate::from_risk_table(rt);
    let state = LogRankState::compute_with_profile(rt, &hz, u);
    let comp = CvmComputation::from_state(&state, range)?;
    let p = comp.p_value()?;
    Ok(TestReport {
        test: "cvm".into(),
        statistic: comp.statistic,
        df: None,
        eigenvalues: Some(comp.eigenvalues.clone()),
        p_value: p,
        weight: echo,
        d_lo: comp.range.d_lo,
        d_hi: comp.range.d_hi,
        n_observable: comp.range.observable.len(),
        dropped_group: Some(rt.group_labels()[rt.n_groups() - 1].clone()),
        rcond: None,
        gate: Some(comp.gate),
        version: tool_version(),
        input_digest: input_digest(rt),
    })
}
