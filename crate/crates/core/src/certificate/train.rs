use serde::{Deserialize, Serialize};

use super::loss::{loss_prepared, LossHyper, Prepared};
use super::task::{RwaTask, SampleSets, Witness};
use crate::dynamics::LinearPlant;
use crate::error::{invalid, Error, Result};
use crate::netgraph::Mlp;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub iterations: usize,
    /// Iterations during which only the certificate is updated. The
    /// controller is frozen throughout here, so this only marks the phase
    /// boundary in the report.
    pub warmup: usize,
    pub step_size: f64,
    pub optimizer: Optimizer,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: 2000,
            warmup: 200,
            step_size: 1e-3,
            optimizer: Optimizer::Sgd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-batch loss before each update, then after the last one.
    pub history: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub warmup: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;

/// Full-batch gradient descent on the certificate objective. The
/// controller never changes.
pub fn train(
    v0: &Mlp,
    controller: &Mlp,
    plant: &LinearPlant,
    task: &RwaTask,
    sets: &SampleSets,
    w: &Witness,
    h: &LossHyper,
    schedule: &Schedule,
) -> Result<(Mlp, TrainReport)> {
    w.validate()?;
    h.validate()?;
    if !(schedule.step_size > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    let prepared = Prepared::new(sets.clone(), controller, plant, task)?;
    let mut v = v0.clone();
    let mut history = Vec::with_capacity(schedule.iterations + 1);
    let mut adam = Adam {
        m: vec![0.0; v.param_count()],
        v: vec![0.0; v.param_count()],
        t: 0,
    };
    for it in 0..=schedule.iterations {
        let eval = loss_prepared(&v, &prepared, task, w, h)?;
        if !eval.loss.is_finite() {
            return Err(Error::Divergence { iteration: it, history });
        }
        history.push(eval.loss);
        if it == schedule.iterations || eval.loss == 0.0 {
            break;
        }
        let lr = schedule.step_size;
        match schedule.optimizer {
            Optimizer::Sgd => v.for_each_param_mut(&eval.grads, |p, g| *p -= lr * g),
            Optimizer::Adam => {
                adam.t += 1;
                let (c1, c2) = (1.0 - BETA1.powi(adam.t), 1.0 - BETA2.powi(adam.t));
                let mut i = 0;
                v.for_each_param_mut(&eval.grads, |p, g| {
                    adam.m[i] = BETA1 * adam.m[i] + (1.0 - BETA1) * g;
                    adam.v[i] = BETA2 * adam.v[i] + (1.0 - BETA2) * g * g;
                    *p -= lr * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + 1e-8);
                    i += 1;
                });
            }
        }
    }
    let report = TrainReport {
        initial_loss: history[0],
        final_loss: *history.last().unwrap(),
        history,
        warmup: schedule.warmup.min(schedule.iterations),
    };
    Ok((v, report))
}
