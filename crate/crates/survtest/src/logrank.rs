//! Weighted log-rank processes, their covariance estimators, and the
//! chi-square homogeneity test.
//!
//! For group q the cumulative process is
//!
//! `LR_q(j) = Σ_{ℓ≤j} n^{-1/2} u(ℓ) V_q(ℓ) [ΔR_q(ℓ)/V_q(ℓ) − ΔR★(ℓ)/V★(ℓ)]`.
//!
//! Its estimated covariance is assembled per category: variances `φ̂²_q(ℓ)`
//! on the diagonal of `Q̂(ℓ)` and symmetrized cross terms `ψ̂(k,r,ℓ)` off the
//! diagonal (for two populations the off-diagonal is not used and `Q̂` is
//! diagonal). `Γ̂(j) = Σ_{ℓ≤j} Q̂(ℓ)` accumulates. The test statistic inverts
//! `Γ̂₀` — `Γ̂` without the last row and column — at the last category where
//! every group is still at risk.

use crate::data::{category_range, type2_stop, RiskTable};
use crate::error::{Error, Result};
use crate::km::HazardEstimate;
use crate::numerics::{chisq_sf, spd_solve, SymMatrix};
use crate::report::{input_digest, tool_version, TestReport};
use crate::weights::{pair_weight_given_u, u_eval, u_profile, WeightSpec};

/// Pairwise weights `U_{q,q1}(ℓ)` for one category, densely stored.
struct PairWeights {
    n_groups: usize,
    w: Vec<f64>,
}

impl PairWeights {
    fn at_category(rt: &RiskTable, u: f64, cat: usize) -> Self {
        let j = rt.n_groups();
        let mut w = vec![0.0; j * j];
        for q in 0..j {
            for q1 in (q + 1)..j {
                let v = pair_weight_given_u(rt, u, q, q1, cat);
                w[q * j + q1] = v;
                w[q1 * j + q] = v;
            }
        }
        PairWeights { n_groups: j, w }
    }

    #[inline]
    fn get(&self, q: usize, q1: usize) -> f64 {
        self.w[q * self.n_groups + q1]
    }
}

#[inline]
fn hazard_var(hz: &HazardEstimate, q: usize, cat: usize) -> f64 {
    let h = hz.hazard(q, cat);
    h * (1.0 - h)
}

/// 1/V under the indicator convention.
#[inline]
fn inv_risk(rt: &RiskTable, q: usize, cat: usize) -> f64 {
    let v = rt.at_risk(q, cat);
    if v > 0 {
        1.0 / v as f64
    } else {
        0.0
    }
}

fn phi2_from_weights(
    rt: &RiskTable,
    hz: &HazardEstimate,
    uw: &PairWeights,
    q: usize,
    cat: usize,
) -> f64 {
    let j = rt.n_groups();
    let own_var = hazard_var(hz, q, cat) * inv_risk(rt, q, cat);
    let mut total = 0.0;
    for q1 in 0..j {
        if q1 == q {
            continue;
        }
        let u2 = uw.get(q, q1) * uw.get(q, q1);
        total += u2 * inv_risk(rt, q1, cat) * hazard_var(hz, q1, cat);
        total += u2 * own_var;
    }
    // Ordered pairs (q1, q2), q1 < q2, both different from q.
    for q1 in 0..j {
        for q2 in (q1 + 1)..j {
            if q1 == q || q2 == q {
                continue;
            }
            total += 2.0 * uw.get(q, q1) * uw.get(q, q2) * own_var;
        }
    }
    total
}

fn psi_from_weights(
    rt: &RiskTable,
    hz: &HazardEstimate,
    uw: &PairWeights,
    k: usize,
    r: usize,
    cat: usize,
) -> f64 {
    let j = rt.n_groups();
    let mut total = 0.0;
    for q1 in 0..j {
        if q1 == k || q1 == r {
            continue;
        }
        total += uw.get(k, q1) * uw.get(r, q1) * inv_risk(rt, q1, cat) * hazard_var(hz, q1, cat);
    }
    let k_var = hazard_var(hz, k, cat) * inv_risk(rt, k, cat);
    for q1 in 0..j {
        if q1 == k {
            continue;
        }
        total -= uw.get(k, q1) * uw.get(r, k) * k_var;
    }
    let r_var = hazard_var(hz, r, cat) * inv_risk(rt, r, cat);
    for q2 in 0..j {
        if q2 == r {
            continue;
        }
        total -= uw.get(r, q2) * uw.get(k, r) * r_var;
    }
    total
}

/// Per-category variance estimate `φ̂²_q(ℓ)` of the log-rank increment.
pub fn phi2_hat(
    rt: &RiskTable,
    hz: &HazardEstimate,
    spec: &WeightSpec,
    q: usize,
    cat: usize,
) -> f64 {
    let uw = PairWeights::at_category(rt, u_eval(spec, rt, cat), cat);
    phi2_from_weights(rt, hz, &uw, q, cat)
}

/// Per-category cross-covariance estimate `ψ̂(k,r,ℓ)`, `k ≠ r`, for three or
/// more populations. Arguments are evaluated in canonical order so
/// `psi_hat(k, r, ·) == psi_hat(r, k, ·)` bit for bit.
pub fn psi_hat(
    rt: &RiskTable,
    hz: &HazardEstimate,
    spec: &WeightSpec,
    k: usize,
    r: usize,
    cat: usize,
) -> f64 {
    assert!(k != r, "psi_hat requires k != r");
    assert!(rt.n_groups() >= 3, "psi_hat is defined for J >= 3");
    let (k, r) = (k.min(r), k.max(r));
    let uw = PairWeights::at_category(rt, u_eval(spec, rt, cat), cat);
    psi_from_weights(rt, hz, &uw, k, r, cat)
}

/// Cumulative covariance matrices `Γ̂(j) = Σ_{ℓ≤j} Q̂(ℓ)` from the
/// per-category matrices.
pub fn gamma_hat(q_hat: &[SymMatrix]) -> Vec<SymMatrix> {
    let mut out = Vec::with_capacity(q_hat.len());
    let mut acc: Option<SymMatrix> = None;
    for q in q_hat {
        let next = match acc {
            None => q.clone(),
            Some(ref prev) => {
                let mut m = prev.clone();
                m.add_assign(q);
                m
            }
        };
        out.push(next.clone());
        acc = Some(next);
    }
    out
}

/// Log-rank processes and covariance estimates of one study, evaluated over
/// all categories `1..=max_cat`.
#[derive(Debug, Clone)]
pub struct LogRankState {
    n_groups: usize,
    lr: Vec<Vec<f64>>,
    phi2: Vec<Vec<f64>>,
    q_hat: Vec<SymMatrix>,
    gamma: Vec<SymMatrix>,
}

impl LogRankState {
    pub fn compute(rt: &RiskTable, hz: &HazardEstimate, spec: &WeightSpec) -> Self {
        Self::compute_with_profile(rt, hz, &u_profile(spec, rt))
    }

    /// Build the state from an explicit weight profile `u(ℓ)` (entry `ℓ-1`
    /// holds category ℓ). This is the general product-class form; the named
    /// weight specs are conveniences over it.
    pub fn compute_with_profile(rt: &RiskTable, hz: &HazardEstimate, u: &[f64]) -> Self {
        assert_eq!(u.len(), rt.max_cat(), "weight profile length mismatch");
        let j = rt.n_groups();
        let max_cat = rt.max_cat();
        let sqrt_n = (rt.total_n() as f64).sqrt();

        let mut lr = vec![vec![0.0; max_cat]; j];
        let mut phi2 = vec![vec![0.0; max_cat]; j];
        let mut q_hat = Vec::with_capacity(max_cat);
        let mut gamma = Vec::with_capacity(max_cat);
        let mut gamma_acc = SymMatrix::zeros(j);

        for cat in 1..=max_cat {
            let uw = PairWeights::at_category(rt, u[cat - 1], cat);
            let v_star = rt.pooled_at_risk(cat);
            let pooled_ratio = if v_star > 0 {
                rt.pooled_events(cat) as f64 / v_star as f64
            } else {
                0.0
            };
            for q in 0..j {
                let prev = if cat > 1 { lr[q][cat - 2] } else { 0.0 };
                let v_q = rt.at_risk(q, cat);
                let inc = if v_q > 0 && v_star > 0 {
                    u[cat - 1] * (rt.events(q, cat) as f64 - v_q as f64 * pooled_ratio) / sqrt_n
                } else {
                    0.0
                };
                lr[q][cat - 1] = prev + inc;
                phi2[q][cat - 1] = phi2_from_weights(rt, hz, &uw, q, cat);
            }
            let mut qm = SymMatrix::zeros(j);
            for q in 0..j {
                qm.set(q, q, phi2[q][cat - 1]);
            }
            // For two populations the covariance reduces to the diagonal.
            if j >= 3 {
                for k in 0..j {
                    for r in (k + 1)..j {
                        qm.set(k, r, psi_from_weights(rt, hz, &uw, k, r, cat));
                    }
                }
            }
            gamma_acc.add_assign(&qm);
            q_hat.push(qm);
            gamma.push(gamma_acc.clone());
        }

        LogRankState {
            n_groups: j,
            lr,
            phi2,
            q_hat,
            gamma,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Cumulative `LR_q(j)`; 0 at j = 0.
    pub fn lr(&self, q: usize, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.lr[q][j - 1]
        }
    }

    pub fn lr_array(&self, q: usize) -> &[f64] {
        &self.lr[q]
    }

    pub fn phi2(&self, q: usize, cat: usize) -> f64 {
        self.phi2[q][cat - 1]
    }

    /// Diagonal weight `φ̂_q(ℓ) = sqrt(φ̂²_q(ℓ))`.
    pub fn phi(&self, q: usize, cat: usize) -> f64 {
        self.phi2(q, cat).sqrt()
    }

    pub fn q_hat(&self, cat: usize) -> &SymMatrix {
        &self.q_hat[cat - 1]
    }

    /// Cumulative `Γ̂(j)`.
    pub fn gamma(&self, j: usize) -> &SymMatrix {
        &self.gamma[j - 1]
    }

    /// `Γ̂₀(j)`: the cumulative covariance without the last row and column.
    pub fn gamma0(&self, j: usize) -> SymMatrix {
        self.gamma(j).drop_last()
    }
}

/// The cumulative processes `LR_q(j)` for every group and category.
pub fn lr_process(rt: &RiskTable, hz: &HazardEstimate, spec: &WeightSpec) -> Vec<Vec<f64>> {
    LogRankState::compute(rt, hz, spec).lr
}

fn logrank_report(
    rt: &RiskTable,
    state: &LogRankState,
    eval_cat: usize,
    d_lo: usize,
    n_observable: usize,
    echo: WeightSpec,
) -> Result<TestReport> {
    let j = rt.n_groups();
    let lr0: Vec<f64> = (0..j - 1).map(|q| state.lr(q, eval_cat)).collect();
    let gamma0 = state.gamma0(eval_cat);
    let sol = match spd_solve(&gamma0, &lr0) {
        Ok(sol) => sol,
        Err(Error::Singular { rcond }) => return Err(Error::DegenerateCovariance { rcond }),
        Err(e) => return Err(e),
    };
    let x2: f64 = lr0.iter().zip(&sol.x).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    let p = chisq_sf(x2, j - 1)?;
    Ok(TestReport {
        test: "logrank".into(),
        statistic: x2,
        df: Some(j - 1),
        eigenvalues: None,
        p_value: p,
        weight: echo,
        d_lo,
        d_hi: eval_cat,
        n_observable,
        dropped_group: None,
        rcond: Some(sol.rcond),
        gate: None,
        version: tool_version(),
        input_digest: input_digest(rt),
    })
}

/// The weighted log-rank homogeneity test: `X² = LR₀ᵀ Γ̂₀⁻¹ LR₀` evaluated at
/// the last category where every group is at risk, referred to chi-square
/// with J−1 degrees of freedom.
pub fn logrank_test(rt: &RiskTable, spec: &WeightSpec) -> Result<TestReport> {
    spec.validate()?;
    logrank_test_with_profile(rt, &u_profile(spec, rt), *spec)
}

/// Log-rank test with an explicit weight profile; `echo` is recorded in the
/// report.
pub fn logrank_test_with_profile(
    rt: &RiskTable,
    u: &[f64],
    echo: WeightSpec,
) -> Result<TestReport> {
    let range = category_range(rt)?;
    let hz = HazardEstimate::from_risk_table(rt);
    let state = LogRankState::compute_with_profile(rt, &hz, u);
    logrank_report(rt, &state, range.d_hi, range.d_lo, range.observable.len(), echo)
}

/// Log-rank test under Type-2 stopping: all sums stop at the earlier of the
/// beta-quantile category and the usual evaluation category.
pub fn logrank_test_type2(rt: &RiskTable, spec: &WeightSpec, beta: f64) -> Result<TestReport> {
    spec.validate()?;
    let range = category_range(rt)?;
    let stop = type2_stop(rt, beta)?.min(range.d_hi);
    let hz = HazardEstimate::from_risk_table(rt);
    let state = LogRankState::compute(rt, &hz, spec);
    let n_observable = range.observable.iter().filter(|&&l| l <= stop).count();
    logrank_report(rt, &state, stop, range.d_lo, n_observable, *spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_risk_table, fixtures, Observation};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn d1_state() -> (RiskTable, LogRankState) {
        let rt = build_risk_table(&fixtures::d1()).unwrap();
        let hz = HazardEstimate::from_risk_table(&rt);
        let state = LogRankState::compute(&rt, &hz, &WeightSpec::Unit);
        (rt, state)
    }

    #[test]
    fn lr_d1_unit() {
        let (_, state) = d1_state();
        let s8 = 8.0f64.sqrt();
        close(state.lr(0, 1), 0.5 / s8, 1e-15);
        close(state.lr(0, 2), 0.0, 1e-15);
        close(state.lr(0, 3), (1.0 / 3.0) / s8, 1e-15);
        // J = 2 sum-to-zero.
        for j in 1..=4 {
            close(state.lr(1, j), -state.lr(0, j), 1e-15);
        }
    }

    #[test]
    fn lr_identical_groups_is_zero() {
        let obs = vec![
            Observation::new(1, true, 0),
            Observation::new(2, true, 0),
            Observation::new(1, true, 1),
            Observation::new(2, true, 1),
        ];
        let rt = build_risk_table(&obs).unwrap();
        let hz = HazardEstimate::from_risk_table(&rt);
        let lr = lr_process(&rt, &hz, &WeightSpec::Unit);
        for row in &lr {
            for v in row {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn phi2_d1_unit() {
        let (rt, state) = d1_state();
        close(state.phi2(0, 1), 3.0 / 128.0, 1e-16);
        close(state.phi2(0, 2), 1.0 / 24.0, 1e-16);
        close(state.phi2(0, 3), 1.0 / 144.0, 1e-16);
        // Standalone operation agrees with the state bit for bit.
        let hz = HazardEstimate::from_risk_table(&rt);
        for l in 1..=4 {
            assert_eq!(phi2_hat(&rt, &hz, &WeightSpec::Unit, 0, l), state.phi2(0, l));
        }
        // Two-group symmetry of the product-class variance.
        for l in 1..=4 {
            assert_eq!(state.phi2(0, l), state.phi2(1, l));
        }
    }

    #[test]
    fn phi2_vanishes_for_degenerate_hazards() {
        // Both groups: everyone fails at category 1, so ĥ ∈ {0, 1}
        // everywhere that matters.
        let obs = vec![Observation::new(1, true, 0), Observation::new(1, true, 1)];
        let rt = build_risk_table(&obs).unwrap();
        let hz = HazardEstimate::from_risk_table(&rt);
        assert_eq!(phi2_hat(&rt, &hz, &WeightSpec::Unit, 0, 1), 0.0);
    }

    #[test]
    fn psi_symmetric_on_three_groups() {
        let obs = vec![
            Observation::new(1, true, 0),
            Observation::new(2, true, 0),
            Observation::new(1, true, 1),
            Observation::new(3, false, 1),
            Observation::new(2, true, 2),
            Observation::new(3, true, 2),
        ];
        let rt = build_risk_table(&obs).unwrap();
        let hz = HazardEstimate::from_risk_table(&rt);
        for l in 1..=3 {
            for k in 0..3 {
                for r in 0..3 {
                    if k != r {
                        assert_eq!(
                            psi_hat(&rt, &hz, &WeightSpec::Unit, k, r, l),
                            psi_hat(&rt, &hz, &WeightSpec::Unit, r, k, l)
                        );
                    }
                }
            }
        }
        // All hazards in {0, 1} at a category kill the cross term.
        let all_fail = vec![
            Observation::new(1, true, 0),
            Observation::new(1, true, 1),
            Observation::new(1, true, 2),
        ];
        let rt = build_risk_table(&all_fail).unwrap();
        let hz = HazardEstimate::from_risk_table(&rt);
        assert_eq!(psi_hat(&rt, &hz, &WeightSpec::Unit, 0, 1, 1), 0.0);
    }

    #[test]
    fn gamma_d1_accumulates() {
        let (_, state) = d1_state();
        let expect = 3.0 / 128.0 + 1.0 / 24.0 + 1.0 / 144.0;
        close(state.gamma(3).get(0, 0), expect, 1e-15);
        // J = 2: equal diagonal entries, zero off-diagonal.
        for j in 1..=4 {
            let g = state.gamma(j);
            assert_eq!(g.get(0, 0), g.get(1, 1));
            assert_eq!(g.get(0, 1), 0.0);
        }
        // gamma_hat over the per-category matrices re-adds to the same.
        let qs: Vec<SymMatrix> = (1..=4).map(|l| state.q_hat(l).clone()).collect();
        let cum = gamma_hat(&qs);
        for j in 1..=4 {
            assert_eq!(cum[j - 1].get(0, 0), state.gamma(j).get(0, 0));
        }
    }

    #[test]
    fn x2_d1_unit() {
        let rt = build_risk_table(&fixtures::d1()).unwrap();
        let report = logrank_test(&rt, &WeightSpec::Unit).unwrap();
        close(report.statistic, 16.0 / 83.0, 1e-12);
        close(report.p_value, 0.6606202063671978, 1e-9);
        assert_eq!(report.df, Some(1));
        assert_eq!((report.d_lo, report.d_hi), (1, 3));
        assert_eq!(report.n_observable, 3);
    }

    #[test]
    fn x2_zero_for_identical_groups() {
        let obs = vec![
            Observation::new(1, true, 0),
            Observation::new(2, true, 0),
            Observation::new(2, false, 0),
            Observation::new(1, true, 1),
            Observation::new(2, true, 1),
            Observation::new(2, false, 1),
        ];
        let rt = build_risk_table(&obs).unwrap();
        let report = logrank_test(&rt, &WeightSpec::Unit).unwrap();
        close(report.statistic, 0.0, 1e-24);
        assert_eq!(report.p_value, 1.0);
    }

    #[test]
    fn x2_invariant_under_weight_scaling() {
        let rt = build_risk_table(&fixtures::d1()).unwrap();
        let base = logrank_test(&rt, &WeightSpec::Unit).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let profile = vec![c; rt.max_cat()];
            let scaled = logrank_test_with_profile(&rt, &profile, WeightSpec::Unit).unwrap();
            close(
                scaled.statistic,
                base.statistic,
                1e-9 * base.statistic.abs(),
            );
        }
    }

    #[test]
    fn x2_j2_reduction() {
        let (_, state) = d1_state();
        let manual = state.lr(0, 3) * state.lr(0, 3) / state.gamma(3).get(0, 0);
        let rt = build_risk_table(&fixtures::d1()).unwrap();
        let report = logrank_test(&rt, &WeightSpec::Unit).unwrap();
        close(report.statistic, manual, 1e-15);
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let obs = vec![Observation::new(1, true, 0), Observation::new(1, true, 1)];
        let rt = build_risk_table(&obs).unwrap();
        match logrank_test(&rt, &WeightSpec::Unit) {
            Err(Error::DegenerateCovariance { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type2_stops_accumulation() {
        let rt = build_risk_table(&fixtures::d1()).unwrap();
        // beta = 0.5 stops at category 2, where LR_A = 0.
        let report = logrank_test_type2(&rt, &WeightSpec::Unit, 0.5).unwrap();
        assert_eq!(report.d_hi, 2);
        close(report.statistic, 0.0, 1e-24);

        // beta small: single-category test.
        let report = logrank_test_type2(&rt, &WeightSpec::Unit, 0.125).unwrap();
        assert_eq!(report.d_hi, 1);

        // stop beyond d_hi: identical to the unstopped test.
        let full = logrank_test(&rt, &WeightSpec::Unit).unwrap();
        let report = logrank_test_type2(&rt, &WeightSpec::Unit, 0.625).unwrap();
        assert_eq!(report.statistic, full.statistic);
        assert_eq!(report.d_hi, full.d_hi);

        assert!(logrank_test_type2(&rt, &WeightSpec::Unit, 0.99).is_err());
    }

    #[test]
    fn sum_of_lr_components_is_zero() {
        // Random-ish 3-group fixture; the sum over groups must vanish at
        // every category for every weight.
        let obs = vec![
            Observation::new(1, true, 0),
            Observation::new(3, false, 0),
            Observation::new(4, true, 0),
            Observation::new(2, true, 1),
            Observation::new(2, false, 1),
            Observation::new(5, true, 1),
            Observation::new(1, false, 2),
            Observation::new(3, true, 2),
            Observation::new(4, true, 2),
        ];
        let rt = build_risk_table(&obs).unwrap();
        let hz = HazardEstimate::from_risk_table(&rt);
        for spec in [
            WeightSpec::Unit,
            WeightSpec::TaroneWare { gamma: 0.5 },
            WeightSpec::FlemingHarrington {
                beta: 0.5,
                delta: 1.0,
            },
        ] {
            let lr = lr_process(&rt, &hz, &spec);
            for j in 0..rt.max_cat() {
                let total: f64 = lr.iter().map(|row| row[j]).sum();
                let scale: f64 = lr.iter().map(|row| row[j].abs()).sum::<f64>().max(1.0);
                assert!(total.abs() <= 1e-12 * scale, "category {}", j + 1);
            }
        }
    }
}
