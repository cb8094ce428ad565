//! Concrete rollouts and the checks that back the formal results.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{from_polar, step_closed_form, to_polar, Control, DynParams, LinearPlant, PolarState, State};
use crate::error::{invalid, Error, Result};
use crate::netgraph::Mlp;
use crate::properties::{GoalSpec, SafetySpec};

/// A closed-loop rollout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    /// Controller output before saturation.
    pub raw_controls: Vec<Control>,
    /// Control actually applied; one fewer than `states`.
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    /// Largest componentwise deviation from re-stepping each recorded
    /// state under its recorded control.
    pub fn replay_error(&self, p: &DynParams) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (t, u) in self.controls.iter().enumerate() {
            let next = step_closed_form(&self.states[t], u, p)?.to_array();
            for (a, b) in next.iter().zip(self.states[t + 1].to_array()) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }

    /// CSV with columns `t,x,y,vx,vy,fx,fy`; the final row has empty
    /// control fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "vx", "vy", "fx", "fy"])?;
        for (t, s) in self.states.iter().enumerate() {
            let mut rec = vec![t.to_string(), s.x.to_string(), s.y.to_string(), s.vx.to_string(), s.vy.to_string()];
            match self.controls.get(t) {
                Some(u) => rec.extend([u.fx.to_string(), u.fy.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Controller output at `s`, before saturation.
pub fn control_at(net: &Mlp, s: &State) -> Result<Control> {
    let u = net.forward(&s.to_array())?;
    match u.as_slice() {
        [fx, fy] => Ok(Control::new(*fx, *fy)),
        _ => Err(Error::Schema(format!("controller must have 2 outputs, has {}", u.len()))),
    }
}

/// Runs the controller in closed loop for up to `max_steps` steps. With a
/// goal given, stops as soon as a state lies in it.
pub fn rollout(
    net: &Mlp,
    p: &DynParams,
    f_max: f64,
    s0: State,
    max_steps: usize,
    stop_at: Option<&GoalSpec>,
) -> Result<Trajectory> {
    if max_steps == 0 {
        return Err(invalid("rollout needs at least one step"));
    }
    let mut traj = Trajectory {
        states: vec![s0],
        ..Trajectory::default()
    };
    let fail = |step, message: String, traj: Trajectory| Error::Simulation {
        step,
        message,
        partial: Box::new(traj),
    };
    if !s0.is_finite() {
        return Err(fail(0, "non-finite start state".into(), traj));
    }
    let mut s = s0;
    for step in 0..max_steps {
        if stop_at.is_some_and(|g| g.contains(&s)) {
            break;
        }
        let raw = control_at(net, &s)?;
        let u = raw.clamped(f_max);
        let next = match step_closed_form(&s, &u, p) {
            Ok(n) => n,
            Err(e) => return Err(fail(step, e.to_string(), traj)),
        };
        traj.raw_controls.push(raw);
        traj.controls.push(u);
        traj.states.push(next);
        if !next.is_finite() {
            return Err(fail(step + 1, "state became non-finite".into(), traj));
        }
        s = next;
    }
    Ok(traj)
}

/// Rollout of a generic linear plant: `x_{t+1} = A x_t + B clamp(net(x_t))`.
pub fn rollout_plant(net: &Mlp, plant: &LinearPlant, x0: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if x0.len() != plant.state_dim() {
        return Err(invalid("start state has the wrong dimension"));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for _ in 0..steps {
        let x = out.last().unwrap();
        let u = plant.clamp_control(&net.forward(x)?);
        out.push(plant.apply(x, &u));
    }
    Ok(out)
}

/// Speed limit check with the default constants.
pub fn exact_safety(s: &State) -> bool {
    SafetySpec::default().is_safe(s)
}

const A1: f64 = std::f64::consts::LN_2 / 5.0;
const A2: f64 = std::f64::consts::LN_2 / 0.5;

/// Shaped reward for the change in Manhattan distance to the origin.
pub fn reward_distance(prev: &State, cur: &State) -> f64 {
    let (d0, d1) = (prev.position_l1(), cur.position_l1());
    2.0 * ((-A1 * d1).exp() - (-A1 * d0).exp()) + 2.0 * ((-A2 * d1).exp() - (-A2 * d0).exp())
}

/// Cartesian rollout mirrored through polar coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarComparison {
    pub trajectory: Trajectory,
    pub polar: Vec<PolarState>,
    /// Per-step L2 distance between each state and its polar round trip.
    pub divergence: Vec<f64>,
    pub max_divergence: f64,
}

pub fn compare_polar(net: &Mlp, p: &DynParams, f_max: f64, s0: State, steps: usize) -> Result<PolarComparison> {
    let trajectory = rollout(net, p, f_max, s0, steps, None)?;
    let mut polar = Vec::with_capacity(trajectory.len());
    let mut divergence = Vec::with_capacity(trajectory.len());
    for s in &trajectory.states {
        let ps = to_polar(s)?;
        let back = from_polar(&ps).to_array();
        let d = back
            .iter()
            .zip(s.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        polar.push(ps);
        divergence.push(d);
    }
    let max_divergence = divergence.iter().cloned().fold(0.0, f64::max);
    Ok(PolarComparison {
        trajectory,
        polar,
        divergence,
        max_divergence,
    })
}
