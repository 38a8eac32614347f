//! Censored discrete observations and the per-group / pooled risk tables the
//! tests are built from.
//!
//! Categories are positive integers `1..=max_cat`. Public arrays indexed by
//! category use offset 0 for category 1. All types are immutable after
//! construction.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

/// One censored record: the observed category `time = min(W, C)`, an event
/// flag (`true` when the event of interest occurred, `false` when censored),
/// and a 0-based group index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub time: usize,
    pub event: bool,
    pub group: usize,
}

impl Observation {
    pub fn new(time: usize, event: bool, group: usize) -> Self {
        Observation { time, event, group }
    }
}

/// Parsed dataset: observations plus the group labels in first-appearance
/// order (`group_labels[g]` is the label of group index `g`).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub group_labels: Vec<String>,
}

impl Dataset {
    pub fn risk_table(&self) -> Result<RiskTable> {
        RiskTable::build(&self.observations, Some(self.group_labels.clone()))
    }
}

fn valid_label(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Parse CSV with header `group,time,event` into observations. Group labels
/// are mapped to indices in first-appearance order. `event` must be 0 or 1;
/// `time` must be a positive integer (category 0 is excluded by the model).
pub fn ingest_csv<R: std::io::Read>(source: R) -> Result<Dataset> {
    let reader = std::io::BufReader::new(source);
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut observations = Vec::new();
    let mut saw_header = false;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != "group,time,event" {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected header `group,time,event`, found `{line}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let label = fields[0].trim();
        if !valid_label(label) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("invalid group label `{label}`"),
            });
        }
        let time: i64 = fields[1].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("time `{}` is not an integer", fields[1].trim()),
        })?;
        if time < 1 {
            return Err(Error::Parse {
                line: lineno,
                message: "category must be ≥ 1".into(),
            });
        }
        let event = match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("event flag `{other}` must be 0 or 1"),
                });
            }
        };
        let group = *index.entry(label.to_string()).or_insert_with(|| {
            labels.push(label.to_string());
            labels.len() - 1
        });
        observations.push(Observation::new(time as usize, event, group));
    }

    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            message: "empty input: expected header `group,time,event`".into(),
        });
    }
    if labels.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 distinct groups, found {}",
            labels.len()
        )));
    }
    Ok(Dataset {
        observations,
        group_labels: labels,
    })
}

/// Per-group and pooled at-risk / event / censor counts over the categories
/// `1..=max_cat`.
///
/// With `V_p(ℓ)` the number of subjects of group `p` observed at or beyond
/// category `ℓ`, `ΔR_p(ℓ)` the events and `ΔR^C_p(ℓ)` the censorings at `ℓ`,
/// the counts satisfy `V_p(ℓ+1) = V_p(ℓ) − ΔR_p(ℓ) − ΔR^C_p(ℓ)` and the
/// pooled arrays are the group-wise sums.
#[derive(Debug, Clone)]
pub struct RiskTable {
    labels: Vec<String>,
    max_cat: usize,
    n_per_group: Vec<usize>,
    max_cat_per_group: Vec<usize>,
    at_risk: Vec<Vec<usize>>,
    events: Vec<Vec<usize>>,
    censored: Vec<Vec<usize>>,
    pooled_at_risk: Vec<usize>,
    pooled_events: Vec<usize>,
}

/// Build the risk table for a set of observations (spec operation
/// `build_risk_table`). Group indices must cover `0..J` for some `J >= 2`.
pub fn build_risk_table(obs: &[Observation]) -> Result<RiskTable> {
    RiskTable::build(obs, None)
}

impl RiskTable {
    pub fn build(obs: &[Observation], labels: Option<Vec<String>>) -> Result<RiskTable> {
        if obs.is_empty() {
            return Err(Error::InvalidInput("no observations".into()));
        }
        let n_groups = obs.iter().map(|o| o.group).max().unwrap() + 1;
        if n_groups < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 distinct groups, found {n_groups}"
            )));
        }
        let labels = match labels {
            Some(l) => {
                assert_eq!(l.len(), n_groups, "label count must match group count");
                l
            }
            None => (1..=n_groups).map(|g| g.to_string()).collect(),
        };
        let max_cat = obs.iter().map(|o| o.time).max().unwrap();
        debug_assert!(obs.iter().all(|o| o.time >= 1), "category 0 is excluded");

        let mut events = vec![vec![0usize; max_cat]; n_groups];
        let mut censored = vec![vec![0usize; max_cat]; n_groups];
        let mut n_per_group = vec![0usize; n_groups];
        let mut max_cat_per_group = vec![0usize; n_groups];
        for o in obs {
            n_per_group[o.group] += 1;
            max_cat_per_group[o.group] = max_cat_per_group[o.group].max(o.time);
            if o.event {
                events[o.group][o.time - 1] += 1;
            } else {
                censored[o.group][o.time - 1] += 1;
            }
        }
        if let Some(g) = n_per_group.iter().position(|&n| n == 0) {
            return Err(Error::InvalidInput(format!(
                "group index {g} has no observations"
            )));
        }

        // V_p(1) = n_p; V_p(ℓ+1) = V_p(ℓ) − ΔR_p(ℓ) − ΔR^C_p(ℓ).
        let mut at_risk = vec![vec![0usize; max_cat]; n_groups];
        for g in 0..n_groups {
            let mut v = n_per_group[g];
            for l in 0..max_cat {
                at_risk[g][l] = v;
                v -= events[g][l] + censored[g][l];
            }
        }
        let pooled_at_risk = (0..max_cat)
            .map(|l| (0..n_groups).map(|g| at_risk[g][l]).sum())
            .collect();
        let pooled_events = (0..max_cat)
            .map(|l| (0..n_groups).map(|g| events[g][l]).sum())
            .collect();

        Ok(RiskTable {
            labels,
            max_cat,
            n_per_group,
            max_cat_per_group,
            at_risk,
            events,
            censored,
            pooled_at_risk,
            pooled_events,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_per_group.len()
    }

    pub fn group_labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_size(&self, p: usize) -> usize {
        self.n_per_group[p]
    }

    /// Total sample size n across groups.
    pub fn total_n(&self) -> usize {
        self.n_per_group.iter().sum()
    }

    pub fn max_cat(&self) -> usize {
        self.max_cat
    }

    pub fn max_cat_of_group(&self, p: usize) -> usize {
        self.max_cat_per_group[p]
    }

    /// V_p(ℓ); V_p(0) := n_p, and 0 beyond max_cat.
    #[inline]
    pub fn at_risk(&self, p: usize, cat: usize) -> usize {
        if cat == 0 {
            self.n_per_group[p]
        } else if cat <= self.max_cat {
            self.at_risk[p][cat - 1]
        } else {
            0
        }
    }

    /// ΔR_p(ℓ); 0 at ℓ = 0 and beyond max_cat.
    #[inline]
    pub fn events(&self, p: usize, cat: usize) -> usize {
        if cat == 0 || cat > self.max_cat {
            0
        } else {
            self.events[p][cat - 1]
        }
    }

    /// ΔR^C_p(ℓ).
    #[inline]
    pub fn censored(&self, p: usize, cat: usize) -> usize {
        if cat == 0 || cat > self.max_cat {
            0
        } else {
            self.censored[p][cat - 1]
        }
    }

    /// V★(ℓ) = Σ_p V_p(ℓ); V★(0) := n.
    #[inline]
    pub fn pooled_at_risk(&self, cat: usize) -> usize {
        if cat == 0 {
            self.total_n()
        } else if cat <= self.max_cat {
            self.pooled_at_risk[cat - 1]
        } else {
            0
        }
    }

    /// ΔR★(ℓ) = Σ_p ΔR_p(ℓ); by convention ΔR★(0) := 0.
    #[inline]
    pub fn pooled_events(&self, cat: usize) -> usize {
        if cat == 0 || cat > self.max_cat {
            0
        } else {
            self.pooled_events[cat - 1]
        }
    }
}

/// The category range the tests operate on: `d_lo` is the first category with
/// a pooled event, `d_hi` the last category at which every group is still at
/// risk, and `observable` the categories in `[d_lo, d_hi]` carrying at least
/// one pooled event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRange {
    pub d_lo: usize,
    pub d_hi: usize,
    pub observable: Vec<usize>,
}

pub fn category_range(rt: &RiskTable) -> Result<CategoryRange> {
    let d_hi = (1..=rt.max_cat())
        .filter(|&l| (0..rt.n_groups()).all(|g| rt.at_risk(g, l) > 0))
        .max();
    let d_hi = match d_hi {
        Some(d) => d,
        None => return Err(Error::NoObservableCategories),
    };
    let d_lo = (1..=d_hi).find(|&l| rt.pooled_events(l) > 0);
    let d_lo = match d_lo {
        Some(d) => d,
        None => return Err(Error::NoObservableCategories),
    };
    let observable: Vec<usize> = (d_lo..=d_hi).filter(|&l| rt.pooled_events(l) > 0).collect();
    Ok(CategoryRange {
        d_lo,
        d_hi,
        observable,
    })
}

/// Type-2 stopping category: the smallest ℓ at which the cumulative pooled
/// event count reaches the fraction `beta` of the total sample size.
pub fn type2_stop(rt: &RiskTable, beta: f64) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    let n = rt.total_n() as f64;
    let mut cumulative = 0usize;
    for l in 1..=rt.max_cat() {
        cumulative += rt.pooled_events(l);
        if cumulative as f64 / n >= beta {
            return Ok(l);
        }
    }
    Err(Error::BetaQuantileNotAttained {
        max_fraction: cumulative as f64 / n,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::Observation;

    /// Small two-group reference dataset used throughout the test suite:
    /// group A: (1,event), (2,event), (3,censored), (3,event);
    /// group B: (1,censored), (2,event), (2,event), (4,event).
    pub fn d1() -> Vec<Observation> {
        vec![
            Observation::new(1, true, 0),
            Observation::new(2, true, 0),
            Observation::new(3, false, 0),
            Observation::new(3, true, 0),
            Observation::new(1, false, 1),
            Observation::new(2, true, 1),
            Observation::new(2, true, 1),
            Observation::new(4, true, 1),
        ]
    }

    pub const D1_CSV: &str = "group,time,event\n\
        A,1,1\nA,2,1\nA,3,0\nA,3,1\n\
        B,1,0\nB,2,1\nB,2,1\nB,4,1\n";
}
