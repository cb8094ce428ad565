//! k-induction over a partitioned state space.
//!
//! For each region the driver looks for the smallest `k` such that no start
//! state in the region (outside the goal) keeps both the position and the
//! velocity L1 norms from dropping by `eps` after `k` closed-loop steps.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{affine_transition, DynParams, State};
use crate::error::{invalid, Result};
use crate::netgraph::{compose_closed_loop, Mlp};
use crate::properties::{encode_kind_property, kind_property_holds, GoalSpec};
use crate::simulation::{rollout, Trajectory};
use crate::verifier::{check, Budget, Hyperbox, Status};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindParams {
    pub eps: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub f_max: f64,
    /// Limits for each individual verifier query.
    pub per_k_budget: Budget,
    /// Timed-out regions are bisected at most this many times.
    pub max_depth: usize,
    /// Wall-clock limit for the whole run.
    pub global_timeout_s: f64,
    /// Excluded from start states when set.
    pub goal: Option<GoalSpec>,
}

impl Default for KindParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            k_min: 1,
            k_max: 20,
            f_max: 1.0,
            per_k_budget: Budget::branches(200_000),
            max_depth: 8,
            global_timeout_s: 7200.0,
            goal: Some(GoalSpec::default()),
        }
    }
}

impl KindParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(invalid(format!("need 1 ≤ k_min ≤ k_max, got {}..{}", self.k_min, self.k_max)));
        }
        if !(self.f_max > 0.0) {
            return Err(invalid("f_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Lineage, e.g. `r01_03.0.1` for the second half of the first half of
    /// grid cell (1, 3).
    pub id: String,
    #[serde(rename = "box")]
    pub bx: Hyperbox,
}

impl Region {
    /// Halves along the wider positional dimension (x on ties).
    pub fn bisect(&self) -> Result<(Region, Region)> {
        let d = if self.bx.width(1) > self.bx.width(0) { 1 } else { 0 };
        let (a, b) = self.bx.split(d)?;
        Ok((
            Region {
                id: format!("{}.0", self.id),
                bx: a,
            },
            Region {
                id: format!("{}.1", self.id),
                bx: b,
            },
        ))
    }

    fn depth(&self) -> usize {
        self.id.matches('.').count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KStat {
    pub k: usize,
    pub status: Status,
    pub branches: u64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "UPPERCASE")]
pub enum RegionStatus {
    Unsat {
        k: usize,
    },
    Sat {
        k: usize,
        counterexample: Vec<f64>,
        trace: Trajectory,
    },
    Timeout {
        k: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub id: String,
    #[serde(rename = "box")]
    pub bx: Hyperbox,
    pub result: RegionStatus,
    pub per_k: Vec<KStat>,
}

impl RegionResult {
    pub fn wall_time_s(&self) -> f64 {
        self.per_k.iter().map(|s| s.wall_time_s).sum()
    }
}

/// Tries `k = k_min..=k_max` in order and stops at the first UNSAT or
/// TIMEOUT.
pub fn verify_region(r: &Region, net: &Mlp, p: &DynParams, params: &KindParams) -> Result<RegionResult> {
    params.validate()?;
    let plant = affine_transition(p, params.f_max)?;
    let mut per_k = Vec::new();
    let mut last_cex = None;
    for k in params.k_min..=params.k_max {
        let cl = compose_closed_loop(net, &plant, k)?;
        let q = encode_kind_property(&cl, params.eps, params.goal.as_ref(), r.bx.clone())?;
        let v = check(&q, &params.per_k_budget)?;
        per_k.push(KStat {
            k,
            status: v.status,
            branches: v.branches,
            wall_time_s: v.wall_time_s,
        });
        let result = match v.status {
            Status::Unsat => Some(RegionStatus::Unsat { k }),
            Status::Timeout => Some(RegionStatus::Timeout { k }),
            Status::Sat => {
                last_cex = v.counterexample;
                None
            }
        };
        if let Some(result) = result {
            return Ok(RegionResult {
                id: r.id.clone(),
                bx: r.bx.clone(),
                result,
                per_k,
            });
        }
    }
    let counterexample = last_cex.expect("SAT verdicts carry a counterexample");
    let s0 = State::from_slice(&counterexample)?;
    let trace = rollout(net, p, params.f_max, s0, params.k_max, None)?;
    Ok(RegionResult {
        id: r.id.clone(),
        bx: r.bx.clone(),
        result: RegionStatus::Sat {
            k: params.k_max,
            counterexample,
            trace,
        },
        per_k,
    })
}

/// The `nx × ny` positional grid over `domain`, velocities undivided.
pub fn initial_regions(domain: &Hyperbox, nx: usize, ny: usize) -> Result<Vec<Region>> {
    if domain.dim() != 4 {
        return Err(invalid("k-induction domain must be 4-dimensional"));
    }
    let cells = domain.grid(&[nx, ny, 1, 1])?;
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, bx)| Region {
            id: format!("r{:02}_{:02}", i / ny, i % ny),
            bx,
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub regions: usize,
    pub unsat: usize,
    pub sat: usize,
    pub timeout: usize,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub k_mean: Option<f64>,
    pub k_median: Option<f64>,
    pub runtime_min_s: f64,
    pub runtime_max_s: f64,
    pub runtime_mean_s: f64,
    pub runtime_total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub summary: KindSummary,
    /// Leaf regions, sorted by id.
    pub regions: Vec<RegionResult>,
}

impl KindReport {
    /// `(k, count)` over UNSAT regions, ascending in `k`.
    pub fn k_frequencies(&self) -> Vec<(usize, usize)> {
        let mut m = BTreeMap::new();
        for r in &self.regions {
            if let RegionStatus::Unsat { k } = r.result {
                *m.entry(k).or_insert(0) += 1;
            }
        }
        m.into_iter().collect()
    }

    pub fn all_unsat(&self) -> bool {
        !self.regions.is_empty() && self.summary.unsat == self.regions.len()
    }
}

pub fn summarize(regions: &[RegionResult]) -> KindSummary {
    let mut ks: Vec<usize> = regions
        .iter()
        .filter_map(|r| match r.result {
            RegionStatus::Unsat { k } => Some(k),
            _ => None,
        })
        .collect();
    ks.sort_unstable();
    let times: Vec<f64> = regions.iter().map(RegionResult::wall_time_s).collect();
    let count = |f: fn(&RegionStatus) -> bool| regions.iter().filter(|r| f(&r.result)).count();
    let median = if ks.is_empty() {
        None
    } else if ks.len() % 2 == 1 {
        Some(ks[ks.len() / 2] as f64)
    } else {
        Some(0.5 * (ks[ks.len() / 2 - 1] + ks[ks.len() / 2]) as f64)
    };
    let total: f64 = times.iter().sum();
    KindSummary {
        regions: regions.len(),
        unsat: ks.len(),
        sat: count(|s| matches!(s, RegionStatus::Sat { .. })),
        timeout: count(|s| matches!(s, RegionStatus::Timeout { .. })),
        k_min: ks.first().copied(),
        k_max: ks.last().copied(),
        k_mean: (!ks.is_empty()).then(|| ks.iter().sum::<usize>() as f64 / ks.len() as f64),
        k_median: median,
        runtime_min_s: times.iter().cloned().fold(f64::INFINITY, f64::min).min(total),
        runtime_max_s: times.iter().cloned().fold(0.0, f64::max),
        runtime_mean_s: if times.is_empty() { 0.0 } else { total / times.len() as f64 },
        runtime_total_s: total,
    }
}

/// Verifies every cell of an `nx × ny` positional grid, bisecting regions
/// that time out until `max_depth` or the global time limit.
pub fn drive(domain: &Hyperbox, grid: (usize, usize), net: &Mlp, p: &DynParams, params: &KindParams) -> Result<KindReport> {
    params.validate()?;
    let start = Instant::now();
    let mut pending = initial_regions(domain, grid.0, grid.1)?;
    let mut done: Vec<RegionResult> = Vec::new();
    while !pending.is_empty() {
        if start.elapsed().as_secs_f64() > params.global_timeout_s {
            for r in pending.drain(..) {
                done.push(RegionResult {
                    id: r.id,
                    bx: r.bx,
                    result: RegionStatus::Timeout { k: params.k_min },
                    per_k: Vec::new(),
                });
            }
            break;
        }
        let results: Vec<Result<RegionResult>> = pending.par_iter().map(|r| verify_region(r, net, p, params)).collect();
        let regions = std::mem::take(&mut pending);
        for (r, res) in regions.into_iter().zip(results) {
            let res = res?;
            let splittable = r.depth() < params.max_depth;
            match (&res.result, splittable) {
                (RegionStatus::Timeout { .. }, true) => match r.bisect() {
                    Ok((a, b)) => pending.extend([a, b]),
                    Err(_) => done.push(res),
                },
                _ => done.push(res),
            }
        }
    }
    done.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(KindReport {
        summary: summarize(&done),
        regions: done,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub samples: usize,
    /// `(k, count)` of the smallest `k` at which the step property held.
    pub k_frequencies: Vec<(usize, usize)>,
    /// Starts for which no `k ≤ k_max` worked.
    pub violations: Vec<State>,
}

fn sample_outside_goal(rng: &mut ChaCha8Rng, domain: &Hyperbox, goal: Option<&GoalSpec>) -> Result<State> {
    for _ in 0..100_000 {
        let v: Vec<f64> = (0..4)
            .map(|d| {
                if domain.width(d) > 0.0 {
                    rng.gen_range(domain.lo[d]..=domain.hi[d])
                } else {
                    domain.lo[d]
                }
            })
            .collect();
        let s = State::from_slice(&v)?;
        if !goal.is_some_and(|g| g.contains(&s)) {
            return Ok(s);
        }
    }
    Err(crate::error::Error::Sampling("domain lies inside the goal".into()))
}

/// Smallest `k ≤ k_max` at which the step property holds from `s0`.
pub fn minimal_k(net: &Mlp, p: &DynParams, f_max: f64, s0: State, k_max: usize, eps: f64) -> Result<Option<usize>> {
    let t = rollout(net, p, f_max, s0, k_max, None)?;
    Ok((1..=k_max).find(|&k| kind_property_holds(&t.states[0], &t.states[k], eps)))
}

pub fn empirical_check(
    net: &Mlp,
    p: &DynParams,
    domain: &Hyperbox,
    params: &KindParams,
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalReport> {
    if n_samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut freq = BTreeMap::new();
    let mut violations = Vec::new();
    for _ in 0..n_samples {
        let s0 = sample_outside_goal(&mut rng, domain, params.goal.as_ref())?;
        match minimal_k(net, p, params.f_max, s0, params.k_max, params.eps)? {
            Some(k) => *freq.entry(k).or_insert(0) += 1,
            None => violations.push(s0),
        }
    }
    Ok(EmpiricalReport {
        samples: n_samples,
        k_frequencies: freq.into_iter().collect(),
        violations,
    })
}

/// Empirical only: among starts whose first step reduces the position L1
/// norm, those that never reduce it by `eps` within `k_max` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondPropertyReport {
    pub samples: usize,
    pub qualifying: usize,
    pub violations: Vec<State>,
}

pub fn empirical_second_property(
    net: &Mlp,
    p: &DynParams,
    domain: &Hyperbox,
    params: &KindParams,
    n_samples: usize,
    seed: u64,
) -> Result<SecondPropertyReport> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qualifying = 0;
    let mut violations = Vec::new();
    for _ in 0..n_samples {
        let s0 = sample_outside_goal(&mut rng, domain, params.goal.as_ref())?;
        let t = rollout(net, p, params.f_max, s0, params.k_max, None)?;
        if let Some(v) = second_property_violated(&t, params.eps) {
            qualifying += 1;
            if v {
                violations.push(s0);
            }
        }
    }
    Ok(SecondPropertyReport {
        samples: n_samples,
        qualifying,
        violations,
    })
}

/// `None` when the first step does not move inbound; otherwise whether no
/// step reaches an `eps` decrease.
pub fn second_property_violated(t: &Trajectory, eps: f64) -> Option<bool> {
    let d0 = t.states.first()?.position_l1();
    if t.states.get(1)?.position_l1() >= d0 {
        return None;
    }
    Some(!t.states[1..].iter().any(|s| s.position_l1() - d0 <= -eps))
}
