use serde::{Deserialize, Serialize};

use super::task::{Batch, RwaTask, SampleSets, Witness};
use crate::dynamics::LinearPlant;
use crate::error::{invalid, Result};
use crate::netgraph::{Mlp, MlpGrads};

/// Weights and margins of the certificate objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossHyper {
    pub c_s: f64,
    pub c_d: f64,
    pub c_u: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Sample weight given to verifier counterexamples.
    pub w_ce: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            c_s: 1.0,
            c_d: 1.0,
            c_u: 1.0,
            delta1: 0.01,
            delta2: 0.01,
            delta3: 0.01,
            w_ce: 10.0,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        if [self.c_s, self.c_d, self.c_u].iter().any(|c| !(*c >= 0.0)) {
            return Err(invalid("loss weights must be nonnegative"));
        }
        if [self.delta1, self.delta2, self.delta3].iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("loss margins must be positive"));
        }
        if !(self.w_ce >= 1.0) {
            return Err(invalid("counterexample weight must be at least 1"));
        }
        Ok(())
    }
}

/// Objective value, its three terms, and the gradient with respect to the
/// certificate parameters.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub o_s: f64,
    pub o_d: f64,
    pub o_u: f64,
    pub grads: MlpGrads,
}

/// Samples with closed-loop successors attached. The controller is frozen,
/// so successors are computed once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub sets: SampleSets,
    pub successors: Vec<Vec<f64>>,
    /// Successor lies in the unbounded unsafe set.
    pub masked: Vec<bool>,
}

impl Prepared {
    pub fn new(sets: SampleSets, controller: &Mlp, plant: &LinearPlant, task: &RwaTask) -> Result<Self> {
        let mut successors = Vec::with_capacity(sets.free.len());
        let mut masked = Vec::with_capacity(sets.free.len());
        for x in &sets.free.points {
            let u = plant.clamp_control(&controller.forward(x)?);
            let next = plant.apply(x, &u);
            masked.push(task.is_unsafe(&next));
            successors.push(next);
        }
        Ok(Self {
            sets,
            successors,
            masked,
        })
    }
}

fn value(trace: &[Vec<f64>]) -> f64 {
    trace.last().unwrap()[0]
}

/// Weighted mean hinge `Σ wᵢ relu(hᵢ) / Σ wᵢ` over the selected samples of
/// one batch. `hinge` returns the pre-activation and the traces it depends
/// on, each with its sign.
fn hinge_term(
    v: &Mlp,
    batch: &Batch,
    coeff: f64,
    grads: &mut MlpGrads,
    mut select: impl FnMut(usize, &[Vec<f64>]) -> bool,
    mut hinge: impl FnMut(usize, &[Vec<f64>]) -> (f64, Vec<(Vec<Vec<f64>>, f64)>),
) -> f64 {
    let mut total_w = 0.0;
    let mut rows = Vec::new();
    for (i, x) in batch.points.iter().enumerate() {
        let trace = v.forward_trace(x);
        if !select(i, &trace) {
            continue;
        }
        total_w += batch.weights[i];
        let (h, parts) = hinge(i, &trace);
        rows.push((i, h, parts));
    }
    if total_w == 0.0 || coeff == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, h, parts) in rows {
        if h <= 0.0 {
            continue;
        }
        let w = batch.weights[i] * coeff / total_w;
        sum += w * h;
        for (t, sign) in parts {
            v.backward(&t, &[1.0], sign * w, grads);
        }
    }
    sum
}

pub(crate) fn loss_prepared(v: &Mlp, p: &Prepared, task: &RwaTask, w: &Witness, h: &LossHyper) -> Result<LossEval> {
    if v.input_dim() != task.dim() || v.output_dim() != 1 {
        return Err(invalid("certificate must map the state to one value"));
    }
    let mut grads = v.zero_grads();

    let o_s = hinge_term(v, &p.sets.initial, h.c_s, &mut grads, |_, _| true, |_, t| {
        (h.delta1 + value(t) - w.beta, vec![(t.to_vec(), 1.0)])
    });

    let o_d = hinge_term(
        v,
        &p.sets.free,
        h.c_d,
        &mut grads,
        |_, t| value(t) < w.beta,
        |i, t| {
            if p.masked[i] {
                (h.delta2 + w.epsilon + w.alpha - value(t), vec![(t.to_vec(), -1.0)])
            } else {
                let tn = v.forward_trace(&p.successors[i]);
                let pre = h.delta2 + w.epsilon + value(&tn) - value(t);
                (pre, vec![(tn, 1.0), (t.to_vec(), -1.0)])
            }
        },
    );

    let o_u = hinge_term(v, &p.sets.unsafe_, h.c_u, &mut grads, |_, _| true, |_, t| {
        (h.delta3 - value(t) + w.alpha, vec![(t.to_vec(), -1.0)])
    });

    Ok(LossEval {
        loss: o_s + o_d + o_u,
        o_s,
        o_d,
        o_u,
        grads,
    })
}

/// Certificate objective `O_s + O_d + O_u` and its gradient.
///
/// The decrease term only covers free samples with `V(x) < beta`; a
/// successor in the unsafe set contributes `alpha` in place of its value.
pub fn rwa_loss(
    v: &Mlp,
    controller: &Mlp,
    plant: &LinearPlant,
    task: &RwaTask,
    sets: &SampleSets,
    w: &Witness,
    h: &LossHyper,
) -> Result<LossEval> {
    w.validate()?;
    h.validate()?;
    let p = Prepared::new(sets.clone(), controller, plant, task)?;
    loss_prepared(v, &p, task, w, h)
}
