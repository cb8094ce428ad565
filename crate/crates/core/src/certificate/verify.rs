use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::task::{RwaTask, Witness};
use crate::dynamics::LinearPlant;
use crate::error::{invalid, Error, Result};
use crate::netgraph::{Mlp, PwlGraph};
use crate::properties::{encode_rwa_condition, RwaCondition};
use crate::verifier::{check, find_min_output, Budget, Hyperbox, LinearConstraint, Query, Relation, Status};

/// Certified minimum of `V` over `domain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaResult {
    pub gamma: f64,
    pub witness: Vec<f64>,
    pub witness_value: f64,
    pub branches: u64,
    /// Queries issued by the linear search; zero for the accelerated one.
    pub queries: usize,
}

fn value_graph(v: &Mlp) -> Result<PwlGraph> {
    if v.output_dim() != 1 {
        return Err(invalid("certificate must have one output"));
    }
    PwlGraph::from_mlp(v)
}

fn below(graph: &PwlGraph, domain: &Hyperbox, gamma: f64, budget: &Budget) -> Result<crate::verifier::Verdict> {
    let q = Query::new(
        graph.clone(),
        domain.clone(),
        vec![vec![LinearConstraint::on(0, Relation::Lt, gamma)]],
    )?;
    check(&q, budget)
}

/// Largest certified `gamma` with `V ≥ gamma` on `domain`, found by
/// best-first minimisation to within `tol` and confirmed by a query.
pub fn gamma_search(v: &Mlp, domain: &Hyperbox, tol: f64, budget: &Budget) -> Result<GammaResult> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let g = value_graph(v)?;
    let m = find_min_output(&g, domain, 0, tol, budget)?;
    let verdict = below(&g, domain, m.lower, budget)?;
    if verdict.status != Status::Unsat {
        return Err(Error::Budget {
            branches: m.branches + verdict.branches,
            best_bound: m.lower,
        });
    }
    Ok(GammaResult {
        gamma: m.lower,
        witness: m.witness,
        witness_value: m.witness_value,
        branches: m.branches + verdict.branches,
        queries: 0,
    })
}

/// The plain search: start at `start`, and while some state has
/// `V < gamma`, lower `gamma` to that state's value.
pub fn gamma_linear_search(
    v: &Mlp,
    domain: &Hyperbox,
    start: f64,
    max_queries: usize,
    budget: &Budget,
) -> Result<GammaResult> {
    let g = value_graph(v)?;
    let mut gamma = start;
    let mut best = (domain.center(), v.forward(&domain.center())?[0]);
    let mut branches = 0;
    for q in 1..=max_queries {
        let verdict = below(&g, domain, gamma, budget)?;
        branches += verdict.branches;
        match verdict.status {
            Status::Unsat => {
                return Ok(GammaResult {
                    gamma,
                    witness: best.0,
                    witness_value: best.1,
                    branches,
                    queries: q,
                })
            }
            Status::Sat => {
                let x = verdict.counterexample.expect("SAT verdicts carry a witness");
                gamma = v.forward(&x)?[0];
                best = (x, gamma);
            }
            Status::Timeout => break,
        }
    }
    Err(Error::Budget {
        branches,
        best_bound: gamma,
    })
}

/// Grid counts used to split each condition's region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub lower_bound: Vec<usize>,
    pub initial: Vec<usize>,
    pub decrease: Vec<usize>,
    pub unsafe_: Vec<usize>,
}

impl PartitionPlan {
    pub fn uniform(dim: usize, per_dim: usize) -> Self {
        let c = vec![per_dim; dim];
        Self {
            lower_bound: c.clone(),
            initial: c.clone(),
            decrease: c.clone(),
            unsafe_: c,
        }
    }

    pub fn counts(&self, cond: RwaCondition) -> &[usize] {
        match cond {
            RwaCondition::LowerBound => &self.lower_bound,
            RwaCondition::Initial => &self.initial,
            RwaCondition::Decrease | RwaCondition::Escape => &self.decrease,
            RwaCondition::Unsafe => &self.unsafe_,
        }
    }

    pub fn cells(&self, task: &RwaTask) -> Result<Vec<(RwaCondition, Vec<Hyperbox>)>> {
        RwaCondition::ALL
            .iter()
            .map(|&c| Ok((c, c.region(task).grid(self.counts(c))?)))
            .collect()
    }
}

/// Checks that `cells` cover `region` without overlapping.
pub fn check_tiling(region: &Hyperbox, cells: &[Hyperbox]) -> Result<()> {
    if cells.is_empty() {
        return Err(invalid("empty partition"));
    }
    for (i, c) in cells.iter().enumerate() {
        if c.dim() != region.dim() || !region.contains_box(c) {
            return Err(invalid(format!("partition cell {i} leaves the region")));
        }
        for (j, d) in cells.iter().enumerate().skip(i + 1) {
            if c.overlap_volume(d) > 0.0 {
                return Err(invalid(format!("partition cells {i} and {j} overlap")));
            }
        }
    }
    let total: f64 = cells.iter().map(Hyperbox::volume).sum();
    let vol = region.volume();
    if (total - vol).abs() > 1e-9 * vol.max(1.0) {
        return Err(invalid(format!("partition covers volume {total} of {vol}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Overall {
    Pass,
    Fail,
    Inconclusive,
}

fn combine(statuses: impl IntoIterator<Item = Status>) -> Overall {
    let (mut sat, mut timeout) = (false, false);
    for s in statuses {
        sat |= s == Status::Sat;
        timeout |= s == Status::Timeout;
    }
    if sat {
        Overall::Fail
    } else if timeout {
        Overall::Inconclusive
    } else {
        Overall::Pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    #[serde(rename = "box")]
    pub cell: Hyperbox,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counterexample: Option<Vec<f64>>,
    pub branches: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: RwaCondition,
    pub result: Overall,
    pub cells: Vec<CellOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub witness: Witness,
    pub overall: Overall,
    pub conditions: Vec<ConditionReport>,
    pub wall_time_s: f64,
}

impl CertReport {
    /// Counterexamples with the condition they violate.
    pub fn counterexamples(&self) -> Vec<(RwaCondition, Vec<f64>)> {
        self.conditions
            .iter()
            .flat_map(|c| {
                c.cells
                    .iter()
                    .filter_map(move |o| o.counterexample.clone().map(|x| (c.condition, x)))
            })
            .collect()
    }

    /// Cells whose query ran out of budget.
    pub fn timeouts(&self) -> Vec<(RwaCondition, Hyperbox)> {
        self.conditions
            .iter()
            .flat_map(|c| {
                c.cells
                    .iter()
                    .filter(|o| o.status == Status::Timeout)
                    .map(move |o| (c.condition, o.cell.clone()))
            })
            .collect()
    }
}

/// Checks every condition on every cell of its partition. Cells must tile
/// each condition's region.
pub fn verify_certificate(
    v: &Mlp,
    controller: &Mlp,
    plant: &LinearPlant,
    task: &RwaTask,
    w: &Witness,
    partitions: &[(RwaCondition, Vec<Hyperbox>)],
    budget: &Budget,
) -> Result<CertReport> {
    let start = Instant::now();
    w.validate()?;
    task.validate()?;
    for (cond, cells) in partitions {
        check_tiling(&cond.region(task), cells)?;
    }
    let jobs: Vec<(usize, &Hyperbox)> = partitions
        .iter()
        .enumerate()
        .flat_map(|(i, (_, cells))| cells.iter().map(move |c| (i, c)))
        .collect();
    let outcomes: Vec<(usize, CellOutcome)> = jobs
        .par_iter()
        .map(|&(i, cell)| {
            let q = encode_rwa_condition(v, controller, plant, partitions[i].0, w, cell, task)?;
            let verdict = check(&q, budget)?;
            Ok((
                i,
                CellOutcome {
                    cell: cell.clone(),
                    status: verdict.status,
                    counterexample: verdict.counterexample,
                    branches: verdict.branches,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let mut conditions: Vec<ConditionReport> = partitions
        .iter()
        .map(|(c, _)| ConditionReport {
            condition: *c,
            result: Overall::Pass,
            cells: Vec::new(),
        })
        .collect();
    for (i, o) in outcomes {
        conditions[i].cells.push(o);
    }
    for c in &mut conditions {
        c.result = combine(c.cells.iter().map(|o| o.status));
    }
    let overall = combine(conditions.iter().flat_map(|c| c.cells.iter().map(|o| o.status)));
    Ok(CertReport {
        witness: *w,
        overall,
        conditions,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
