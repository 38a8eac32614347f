//! Monte Carlo harness: Poisson populations under Poisson (or no) censoring,
//! replicated homogeneity tests, empirical rejection rates.
//!
//! Every replication derives its own xoshiro256** stream from the master
//! seed and the replication index (see [`crate::rng`]), so results are a
//! pure function of the configuration — independent of thread count and
//! scheduling. Replications whose test is degenerate (singular covariance or
//! failed gate) are flagged and excluded from the rejection denominator.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{category_range, Observation, RiskTable};
use crate::error::{Error, Result};
use crate::km::HazardEstimate;
use crate::logrank::{logrank_report, LogRankState};
use crate::cvm::CvmComputation;
use crate::rng::Xoshiro256;
use crate::weights::WeightSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupConfig {
    /// Poisson mean of the event variable, conditioned on being >= 1.
    pub lambda: f64,
    /// Sample size of the group.
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CensoringSpec {
    None,
    Poisson { lambda: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub groups: Vec<GroupConfig>,
    pub censoring: CensoringSpec,
    pub replications: usize,
    pub alpha: f64,
    pub weight: WeightSpec,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::InvalidInput("need at least 2 groups".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if !(g.lambda.is_finite() && g.lambda > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "group {i}: lambda must be finite and > 0"
                )));
            }
            if g.n == 0 {
                return Err(Error::InvalidInput(format!("group {i}: n must be >= 1")));
            }
        }
        if let CensoringSpec::Poisson { lambda } = self.censoring {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::InvalidInput(
                    "censoring lambda must be finite and > 0".into(),
                ));
            }
        }
        if self.replications < 1 {
            return Err(Error::InvalidInput("replications must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        self.weight.validate()
    }
}

/// Poisson sample by CDF inversion with sequential search from 0. Chosen
/// over rejection samplers because it consumes exactly one uniform per draw,
/// which keeps streams reproducible.
pub fn sample_poisson(rng: &mut Xoshiro256, lambda: f64) -> usize {
    let u = rng.next_f64();
    let mut k = 0usize;
    let mut p = (-lambda).exp();
    let mut cum = p;
    // Guard against the cumulative sum topping out just below 1.0.
    let k_max = (10.0 * lambda + 100.0) as usize;
    while u > cum && k < k_max {
        k += 1;
        p *= lambda / k as f64;
        cum += p;
    }
    k
}

/// Poisson conditioned on >= 1, by resampling zeros (the model excludes
/// category 0; at the rates used here P[0] is of order e^{-90}).
pub fn sample_poisson_positive(rng: &mut Xoshiro256, lambda: f64) -> usize {
    loop {
        let k = sample_poisson(rng, lambda);
        if k >= 1 {
            return k;
        }
    }
}

/// Draw `n` censored observations for one group: X = min(W, C) with the tie
/// X = W = C recorded as an event.
pub fn sample_group(
    rng: &mut Xoshiro256,
    lambda_event: f64,
    censoring: &CensoringSpec,
    n: usize,
    group: usize,
) -> Vec<Observation> {
    (0..n)
        .map(|_| {
            let w = sample_poisson_positive(rng, lambda_event);
            match censoring {
                CensoringSpec::None => Observation::new(w, true, group),
                CensoringSpec::Poisson { lambda } => {
                    let c = sample_poisson_positive(rng, *lambda);
                    Observation::new(w.min(c), w <= c, group)
                }
            }
        })
        .collect()
}

/// P-values of one replication; `None` marks a flagged (degenerate) test.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub p_logrank: Option<f64>,
    pub p_cvm: Option<f64>,
}

/// Run one replication: draw every group's sample from the stream keyed by
/// `(cfg.seed, index)`, then run both tests.
pub fn run_replication(cfg: &SimConfig, index: usize) -> ReplicationOutcome {
    let mut rng = Xoshiro256::for_replication(cfg.seed, index as u64);
    let mut obs = Vec::with_capacity(cfg.groups.iter().map(|g| g.n).sum());
    for (g, group_cfg) in cfg.groups.iter().enumerate() {
        obs.extend(sample_group(
            &mut rng,
            group_cfg.lambda,
            &cfg.censoring,
            group_cfg.n,
            g,
        ));
    }
    let rt = match RiskTable::build(&obs, None) {
        Ok(rt) => rt,
        Err(_) => {
            return ReplicationOutcome {
                p_logrank: None,
                p_cvm: None,
            }
        }
    };
    let (range, hz) = match category_range(&rt) {
        Ok(range) => (range, HazardEstimate::from_risk_table(&rt)),
        Err(_) => {
            return ReplicationOutcome {
                p_logrank: None,
                p_cvm: None,
            }
        }
    };
    let state = LogRankState::compute(&rt, &hz, &cfg.weight);

    let p_logrank = logrank_report(
        &rt,
        &state,
        range.d_hi,
        range.d_lo,
        range.observable.len(),
        cfg.weight,
    )
    .ok()
    .map(|r| r.p_value);
    let p_cvm = CvmComputation::from_state(&state, range)
        .and_then(|c| c.p_value())
        .ok();
    ReplicationOutcome { p_logrank, p_cvm }
}

/// Rejection counts for one test across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub rejections: usize,
    /// Replications that produced a p-value.
    pub valid: usize,
    /// Flagged replications (degenerate covariance or failed gate).
    pub failures: usize,
    /// rejections / valid.
    pub empirical_level: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub logrank: TestSummary,
    pub cvm: TestSummary,
    /// Wall time of the run; excluded from serialized output so identical
    /// configurations produce identical JSON.
    #[serde(skip)]
    pub wall_time: Duration,
}

fn summarize(counts: (usize, usize), total: usize, alpha_label: &str) -> Result<TestSummary> {
    let (rejections, valid) = counts;
    if valid == 0 {
        return Err(Error::InvalidInput(format!(
            "all {total} replications flagged for the {alpha_label} test"
        )));
    }
    Ok(TestSummary {
        rejections,
        valid,
        failures: total - valid,
        empirical_level: rejections as f64 / valid as f64,
    })
}

/// All replication outcomes, in replication order, computed in parallel.
pub fn collect_outcomes(cfg: &SimConfig) -> Vec<ReplicationOutcome> {
    (0..cfg.replications)
        .into_par_iter()
        .map(|i| run_replication(cfg, i))
        .collect()
}

/// Empirical significance levels at `cfg.alpha` for both tests.
pub fn empirical_level(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let start = Instant::now();
    let tally = |acc: (usize, usize, usize, usize), o: &ReplicationOutcome| {
        let mut acc = acc;
        if let Some(p) = o.p_logrank {
            acc.0 += usize::from(p <= cfg.alpha);
            acc.1 += 1;
        }
        if let Some(p) = o.p_cvm {
            acc.2 += usize::from(p <= cfg.alpha);
            acc.3 += 1;
        }
        acc
    };
    // Order-free reduction over counts keeps the result independent of
    // scheduling.
    let counts = (0..cfg.replications)
        .into_par_iter()
        .map(|i| run_replication(cfg, i))
        .fold(
            || (0usize, 0usize, 0usize, 0usize),
            |acc, o| tally(acc, &o),
        )
        .reduce(
            || (0, 0, 0, 0),
            |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3),
        );
    Ok(SimResult {
        logrank: summarize((counts.0, counts.1), cfg.replications, "log-rank")?,
        cvm: summarize((counts.2, counts.3), cfg.replications, "CVM")?,
        wall_time: start.elapsed(),
    })
}
