use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossHyper;
use super::task::{RwaTask, SampleSets, Witness};
use super::train::{train, Schedule};
use super::verify::{gamma_search, verify_certificate, Overall, PartitionPlan};
use crate::dynamics::LinearPlant;
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::netgraph::{Activation, Layer, Mlp};
use crate::properties::RwaCondition;
use crate::verifier::Budget;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RetrainStatus {
    Pass,
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub gamma: f64,
    pub verdict: Overall,
    pub counterexamples: usize,
    pub timeouts: usize,
    /// Loss after the retraining that followed this round, if any.
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RetrainResult {
    pub v: Mlp,
    pub witness: Witness,
    pub rounds: usize,
    pub status: RetrainStatus,
    pub history: Vec<RoundRecord>,
    pub sets: SampleSets,
}

/// Settings shared by the verification rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainSettings {
    pub schedule: Schedule,
    pub partitions: PartitionPlan,
    pub gamma_tol: f64,
    pub budget: Budget,
}

/// Where a counterexample goes in the training data. States whose
/// successor escapes are treated like unsafe states, pushing them out of
/// the `beta` sublevel set.
fn add_counterexample(sets: &mut SampleSets, cond: RwaCondition, x: Vec<f64>, w_ce: f64) {
    match cond {
        RwaCondition::Initial => sets.initial.push(x, w_ce),
        RwaCondition::Decrease => sets.free.push(x, w_ce),
        RwaCondition::Unsafe | RwaCondition::Escape => sets.unsafe_.push(x, w_ce),
        RwaCondition::LowerBound => {}
    }
}

/// Alternates verification and training until verification passes or
/// `max_rounds` verification rounds have run. `gamma` is recomputed each
/// round and capped at `beta`.
#[allow(clippy::too_many_arguments)]
pub fn retrain_loop(
    v: &Mlp,
    controller: &Mlp,
    plant: &LinearPlant,
    task: &RwaTask,
    w: &Witness,
    h: &LossHyper,
    sets: &SampleSets,
    settings: &RetrainSettings,
    max_rounds: usize,
) -> Result<RetrainResult> {
    if max_rounds == 0 {
        return Err(invalid("retraining needs at least one round"));
    }
    let partitions = settings.partitions.cells(task)?;
    let mut v = v.clone();
    let mut sets = sets.clone();
    let mut history = Vec::new();
    let mut witness = *w;
    for round in 1..=max_rounds {
        let g = gamma_search(&v, &task.domain, settings.gamma_tol, &settings.budget)?;
        witness.gamma = g.gamma.min(witness.beta);
        let report = verify_certificate(&v, controller, plant, task, &witness, &partitions, &settings.budget)?;
        let cexs = report.counterexamples();
        let mut record = RoundRecord {
            round,
            gamma: witness.gamma,
            verdict: report.overall,
            counterexamples: cexs.len(),
            timeouts: report.timeouts().len(),
            final_loss: None,
        };
        if report.overall == Overall::Pass {
            history.push(record);
            return Ok(RetrainResult {
                v,
                witness,
                rounds: round,
                status: RetrainStatus::Pass,
                history,
                sets,
            });
        }
        if round == max_rounds {
            history.push(record);
            break;
        }
        for (cond, x) in cexs {
            add_counterexample(&mut sets, cond, x, h.w_ce);
        }
        let (next, tr) = train(&v, controller, plant, task, &sets, &witness, h, &settings.schedule)?;
        record.final_loss = Some(tr.final_loss);
        history.push(record);
        v = next;
    }
    Ok(RetrainResult {
        v,
        witness,
        rounds: max_rounds,
        status: RetrainStatus::Exhausted,
        history,
        sets,
    })
}

/// Returns `v - depth · max(0, 1 - ‖x - center‖₁ / radius)`, a copy of `v`
/// with a dent around `center`. Needs at least two hidden ReLU layers.
pub fn dent(v: &Mlp, center: &[f64], radius: f64, depth: f64) -> Result<Mlp> {
    let layers = v.layers();
    let n = v.input_dim();
    if layers.len() < 3 || center.len() != n || !(radius > 0.0) {
        return Err(invalid("dent needs a network with two hidden layers and a matching centre"));
    }
    if layers[..layers.len() - 1].iter().any(|l| l.activation != Activation::Relu) {
        return Err(invalid("dent needs ReLU hidden layers"));
    }
    let mut out = Vec::with_capacity(layers.len());
    // First layer: ±(x_i - c_i) units.
    let l0 = &layers[0];
    let h0 = l0.out_dim();
    let mut w = Matrix::zeros(h0 + 2 * n, n);
    let mut b = l0.bias.clone();
    for r in 0..h0 {
        for c in 0..n {
            w[(r, c)] = l0.weights[(r, c)];
        }
    }
    for i in 0..n {
        w[(h0 + 2 * i, i)] = 1.0;
        w[(h0 + 2 * i + 1, i)] = -1.0;
        b.push(-center[i]);
        b.push(center[i]);
    }
    out.push(Layer::new(w, b, Activation::Relu));
    // Second layer: relu(1 - Σ|x_i - c_i| / radius) in one extra unit.
    let l1 = &layers[1];
    let h1 = l1.out_dim();
    let mut w = Matrix::zeros(h1 + 1, h0 + 2 * n);
    for r in 0..h1 {
        for c in 0..h0 {
            w[(r, c)] = l1.weights[(r, c)];
        }
    }
    for c in h0..h0 + 2 * n {
        w[(h1, c)] = -1.0 / radius;
    }
    let mut b = l1.bias.clone();
    b.push(1.0);
    out.push(Layer::new(w, b, Activation::Relu));
    // Carry the dent unit through any further hidden layers.
    let mut carry = h1;
    for l in &layers[2..layers.len() - 1] {
        let h = l.out_dim();
        let mut w = Matrix::zeros(h + 1, carry + 1);
        for r in 0..h {
            for c in 0..carry {
                w[(r, c)] = l.weights[(r, c)];
            }
        }
        w[(h, carry)] = 1.0;
        let mut b = l.bias.clone();
        b.push(0.0);
        out.push(Layer::new(w, b, Activation::Relu));
        carry = h;
    }
    let last = layers.last().unwrap();
    let mut w = Matrix::zeros(last.out_dim(), carry + 1);
    for r in 0..last.out_dim() {
        for c in 0..carry {
            w[(r, c)] = last.weights[(r, c)];
        }
        w[(r, carry)] = -depth;
    }
    out.push(Layer::new(w, last.bias.clone(), last.activation));
    Mlp::new(n, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Lemma1Violation {
    Unsafe { start: Vec<f64>, step: usize },
    LeftDomain { start: Vec<f64>, step: usize },
    NotReached { start: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub rollouts: usize,
    pub draws: usize,
    pub reached: usize,
    pub max_steps_to_goal: usize,
    pub violations: Vec<Lemma1Violation>,
}

/// Simulates from random states with `V ≤ beta` outside the goal and
/// records every rollout that enters the unsafe set, leaves the domain, or
/// misses the goal within `horizon` steps.
#[allow(clippy::too_many_arguments)]
pub fn check_lemma1(
    v: &Mlp,
    controller: &Mlp,
    plant: &LinearPlant,
    task: &RwaTask,
    w: &Witness,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<Lemma1Report> {
    use rand::Rng;
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Lemma1Report {
        rollouts: 0,
        draws: 0,
        reached: 0,
        max_steps_to_goal: 0,
        violations: Vec::new(),
    };
    let max_draws = 1000 * n_rollouts.max(1);
    while report.rollouts < n_rollouts && report.draws < max_draws {
        report.draws += 1;
        let x0: Vec<f64> = task
            .domain
            .lo
            .iter()
            .zip(&task.domain.hi)
            .map(|(l, h)| if l < h { rng.gen_range(*l..*h) } else { *l })
            .collect();
        if task.goal.contains(&x0) || v.forward(&x0)?[0] > w.beta {
            continue;
        }
        report.rollouts += 1;
        let mut x = x0.clone();
        let mut outcome = Some(Lemma1Violation::NotReached { start: x0.clone() });
        for step in 0..=horizon {
            if task.is_unsafe(&x) {
                outcome = Some(Lemma1Violation::Unsafe { start: x0.clone(), step });
                break;
            }
            if !task.domain.contains(&x) {
                outcome = Some(Lemma1Violation::LeftDomain { start: x0.clone(), step });
                break;
            }
            if task.goal.contains(&x) {
                report.reached += 1;
                report.max_steps_to_goal = report.max_steps_to_goal.max(step);
                outcome = None;
                break;
            }
            let u = plant.clamp_control(&controller.forward(&x)?);
            x = plant.apply(&x, &u);
        }
        report.violations.extend(outcome);
    }
    Ok(report)
}
