//! Clohessy-Wiltshire relative motion in Hill's frame.
//!
//! The deputy state is `(x, y, vx, vy)` with the chief at the origin. Thrust
//! is held constant over each timestep, which makes the one-step map affine
//! in `(state, control)`; [`step_closed_form`] evaluates that map from its
//! analytic coefficients and [`step_ode_oracle`] integrates the ODE
//!
//! ```text
//! ẍ =  2n ẏ + 3n² x + Fx/m
//! ÿ = -2n ẋ        + Fy/m
//! ```
//!
//! with classical RK4 as an independent reference.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl State {
    pub const ORIGIN: State = State::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x, y, vx, vy] => Ok(Self::new(*x, *y, *vx, *vy)),
            _ => Err(invalid(format!("state needs 4 components, got {}", v.len()))),
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.vx, self.vy]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn position_l1(&self) -> f64 {
        self.x.abs() + self.y.abs()
    }

    pub fn velocity_l1(&self) -> f64 {
        self.vx.abs() + self.vy.abs()
    }

    pub fn position_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub fx: f64,
    pub fy: f64,
}

impl Control {
    pub const ZERO: Control = Control { fx: 0.0, fy: 0.0 };

    pub const fn new(fx: f64, fy: f64) -> Self {
        Self { fx, fy }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.fx, self.fy]
    }

    pub fn clamped(self, f_max: f64) -> Self {
        Self::new(self.fx.clamp(-f_max, f_max), self.fy.clamp(-f_max, f_max))
    }
}

/// Plant constants: deputy mass, chief mean motion, control period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynParams {
    pub mass: f64,
    pub mean_motion: f64,
    pub timestep: f64,
}

impl Default for DynParams {
    fn default() -> Self {
        Self {
            mass: 12.0,
            mean_motion: 0.001027,
            timestep: 1.0,
        }
    }
}

impl DynParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass", self.mass),
            ("mean_motion", self.mean_motion),
            ("timestep", self.timestep),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub r: f64,
    pub theta: f64,
    pub rdot: f64,
    pub thetadot: f64,
}

/// `θ - sin θ` without cancellation for small angles.
fn theta_minus_sin(theta: f64) -> f64 {
    if theta.abs() < 0.1 {
        let t2 = theta * theta;
        // Taylor series through θ⁹; truncation error below θ¹¹/4e7.
        theta * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)))
    } else {
        theta - theta.sin()
    }
}

/// Analytic one-step coefficients: `s' = phi·s + gamma·u`.
#[derive(Clone, Debug)]
struct Transition {
    phi: [[f64; 4]; 4],
    gamma: [[f64; 2]; 4],
}

impl Transition {
    fn new(p: &DynParams) -> Self {
        let n = p.mean_motion;
        let t = p.timestep;
        let m = p.mass;
        let th = n * t;
        let (s, c) = th.sin_cos();
        let half = (0.5 * th).sin();
        let omc = 2.0 * half * half; // 1 - cos θ
        let tms = theta_minus_sin(th); // θ - sin θ
        let n2 = n * n;

        let phi = [
            [4.0 - 3.0 * c, 0.0, s / n, 2.0 * omc / n],
            [-6.0 * tms, 1.0, -2.0 * omc / n, (4.0 * s - 3.0 * th) / n],
            [3.0 * n * s, 0.0, c, 2.0 * s],
            [-6.0 * n * omc, 0.0, -2.0 * s, 4.0 * c - 3.0],
        ];
        let gamma = [
            [omc / (m * n2), 2.0 * tms / (m * n2)],
            [-2.0 * tms / (m * n2), (4.0 * omc - 1.5 * th * th) / (m * n2)],
            [s / (m * n), 2.0 * omc / (m * n)],
            [-2.0 * omc / (m * n), (4.0 * s - 3.0 * th) / (m * n)],
        ];
        Self { phi, gamma }
    }

    fn apply(&self, s: &[f64; 4], u: &[f64; 2]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += self.phi[r][j] * s[j];
            }
            for k in 0..2 {
                acc += self.gamma[r][k] * u[k];
            }
            *o = acc;
        }
        out
    }
}

fn check_finite(s: &State, u: &Control) -> Result<()> {
    if !s.is_finite() || !u.fx.is_finite() || !u.fy.is_finite() {
        return Err(invalid("non-finite state or control"));
    }
    Ok(())
}

/// Exact zero-order-hold transition over one timestep.
pub fn step_closed_form(s: &State, u: &Control, p: &DynParams) -> Result<State> {
    p.validate()?;
    check_finite(s, u)?;
    let next = Transition::new(p).apply(&s.to_array(), &u.to_array());
    State::from_slice(&next)
}

fn cw_derivative(s: &[f64; 4], u: &[f64; 2], p: &DynParams) -> [f64; 4] {
    let n = p.mean_motion;
    [
        s[2],
        s[3],
        2.0 * n * s[3] + 3.0 * n * n * s[0] + u[0] / p.mass,
        -2.0 * n * s[2] + u[1] / p.mass,
    ]
}

/// RK4 integration of the continuous dynamics over one timestep.
pub fn step_ode_oracle(s: &State, u: &Control, p: &DynParams, substeps: usize) -> Result<State> {
    if substeps == 0 {
        return Err(invalid("substeps must be at least 1"));
    }
    p.validate()?;
    check_finite(s, u)?;
    let h = p.timestep / substeps as f64;
    let uu = u.to_array();
    let mut x = s.to_array();
    let axpy = |a: &[f64; 4], k: &[f64; 4], f: f64| -> [f64; 4] {
        [a[0] + f * k[0], a[1] + f * k[1], a[2] + f * k[2], a[3] + f * k[3]]
    };
    for _ in 0..substeps {
        let k1 = cw_derivative(&x, &uu, p);
        let k2 = cw_derivative(&axpy(&x, &k1, 0.5 * h), &uu, p);
        let k3 = cw_derivative(&axpy(&x, &k2, 0.5 * h), &uu, p);
        let k4 = cw_derivative(&axpy(&x, &k3, h), &uu, p);
        for i in 0..4 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    State::from_slice(&x)
}

/// A discrete-time linear plant `s' = A·s + B·u` with per-axis thrust bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant {
    pub a: Matrix,
    pub b: Matrix,
    pub f_max: f64,
}

impl LinearPlant {
    pub fn new(a: Matrix, b: Matrix, f_max: f64) -> Result<Self> {
        if a.rows() != a.cols() || b.rows() != a.rows() {
            return Err(Error::Schema(format!(
                "plant matrices do not chain: A is {}x{}, B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if !(f_max > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(invalid("plant constants must be finite and f_max positive"));
        }
        Ok(Self { a, b, f_max })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.cols()
    }

    /// `A·s + B·u`, accumulated in the same order as [`step_closed_form`].
    pub fn apply(&self, s: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.state_dim())
            .map(|r| {
                let mut acc = 0.0;
                for (w, x) in self.a.row(r).iter().zip(s) {
                    acc += w * x;
                }
                for (w, x) in self.b.row(r).iter().zip(u) {
                    acc += w * x;
                }
                acc
            })
            .collect()
    }

    pub fn clamp_control(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| v.clamp(-self.f_max, self.f_max)).collect()
    }

    /// Plant whose state never changes.
    pub fn frozen(state_dim: usize, control_dim: usize) -> Self {
        Self {
            a: Matrix::identity(state_dim),
            b: Matrix::zeros(state_dim, control_dim),
            f_max: 1.0,
        }
    }
}

/// Linear map of the closed-form step, read off by evaluating it on unit
/// basis inputs.
pub fn affine_transition(p: &DynParams, f_max: f64) -> Result<LinearPlant> {
    p.validate()?;
    let mut a = Matrix::zeros(4, 4);
    let mut b = Matrix::zeros(4, 2);
    for j in 0..4 {
        let mut e = [0.0; 4];
        e[j] = 1.0;
        let col = step_closed_form(&State::from_slice(&e)?, &Control::ZERO, p)?.to_array();
        for r in 0..4 {
            a[(r, j)] = col[r];
        }
    }
    for k in 0..2 {
        let mut e = [0.0; 2];
        e[k] = 1.0;
        let col = step_closed_form(&State::ORIGIN, &Control::new(e[0], e[1]), p)?.to_array();
        for r in 0..4 {
            b[(r, k)] = col[r];
        }
    }
    LinearPlant::new(a, b, f_max)
}

pub fn to_polar(s: &State) -> Result<PolarState> {
    let r = s.x.hypot(s.y);
    if r == 0.0 {
        return Err(Error::DegenerateInput("polar angle undefined at the origin".into()));
    }
    let mut theta = s.y.atan2(s.x);
    if theta <= -PI {
        theta = PI;
    }
    Ok(PolarState {
        r,
        theta,
        rdot: (s.x * s.vx + s.y * s.vy) / r,
        thetadot: (s.x * s.vy - s.y * s.vx) / (r * r),
    })
}

pub fn from_polar(ps: &PolarState) -> State {
    let (sin, cos) = ps.theta.sin_cos();
    State::new(
        ps.r * cos,
        ps.r * sin,
        ps.rdot * cos - ps.r * ps.thetadot * sin,
        ps.rdot * sin + ps.r * ps.thetadot * cos,
    )
}
