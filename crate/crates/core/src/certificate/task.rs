use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::LinearPlant;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::netgraph::{Activation, Layer, Mlp};
use crate::properties::SamplingRegion;
use crate::verifier::Hyperbox;

/// Level values of a certificate: `V ≥ gamma` everywhere, `V ≤ beta` on
/// initial states, `V ≥ alpha` on unsafe states, and a decrease of at
/// least `epsilon` per step inside the `beta` sublevel set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Witness {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for Witness {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.0,
            epsilon: 1e-3,
        }
    }
}

impl Witness {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.epsilon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("witness values must be finite"));
        }
        if !(self.alpha > self.beta && self.beta >= self.gamma) {
            return Err(invalid(format!(
                "witness needs alpha > beta >= gamma, got {} / {} / {}",
                self.alpha, self.beta, self.gamma
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("witness epsilon must be positive"));
        }
        Ok(())
    }
}

/// A signed state coordinate `sign · x[index]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnsafeFeature {
    pub index: usize,
    pub sign: f64,
}

impl UnsafeFeature {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.sign * x[self.index]
    }
}

/// Reach-while-avoid task over box-shaped sets.
///
/// A state is unsafe when some feature exceeds its bound `p`; the bounded
/// version used for sampling and verification also requires every feature
/// to stay below `p + margin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwaTask {
    pub domain: Hyperbox,
    pub initial: Hyperbox,
    pub goal: Hyperbox,
    pub features: Vec<UnsafeFeature>,
    pub unsafe_region: SamplingRegion,
}

impl RwaTask {
    pub fn validate(&self) -> Result<()> {
        let n = self.domain.dim();
        if self.initial.dim() != n || self.goal.dim() != n {
            return Err(invalid("task sets must share the domain dimension"));
        }
        if !self.domain.contains_box(&self.initial) || !self.domain.contains_box(&self.goal) {
            return Err(invalid("initial and goal sets must lie in the domain"));
        }
        self.unsafe_region.validate()?;
        if self.features.len() != self.unsafe_region.dim() {
            return Err(invalid("one unsafe bound per feature required"));
        }
        for f in &self.features {
            if f.index >= n || (f.sign != 1.0 && f.sign != -1.0) {
                return Err(invalid(format!("bad unsafe feature {f:?}")));
            }
        }
        for (name, b) in [("initial", &self.initial), ("goal", &self.goal)] {
            if self.box_max_features(b).iter().zip(&self.unsafe_region.p).any(|(g, p)| g > p) {
                return Err(invalid(format!("{name} set intersects the unsafe set")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn features_at(&self, x: &[f64]) -> Vec<f64> {
        self.features.iter().map(|f| f.eval(x)).collect()
    }

    fn box_max_features(&self, b: &Hyperbox) -> Vec<f64> {
        self.features
            .iter()
            .map(|f| if f.sign > 0.0 { b.hi[f.index] } else { -b.lo[f.index] })
            .collect()
    }

    /// The unbounded unsafe set.
    pub fn is_unsafe(&self, x: &[f64]) -> bool {
        self.unsafe_region.above_some(&self.features_at(x))
    }

    /// The bounded unsafe set used for sampling and condition 22.
    pub fn in_sampled_unsafe(&self, x: &[f64]) -> bool {
        self.domain.contains(x) && self.unsafe_region.contains(&self.features_at(x))
    }

    /// Domain minus goal minus unsafe set.
    pub fn is_free(&self, x: &[f64]) -> bool {
        self.domain.contains(x) && !self.goal.contains(x) && !self.is_unsafe(x)
    }

    /// `domain ∩ {g_j ≤ p_j}`; with coordinate features this is a box.
    pub fn safe_box(&self) -> Hyperbox {
        self.clip(|j| self.unsafe_region.p[j])
    }

    /// Closure of the bounded unsafe set's enclosing box.
    pub fn unsafe_box(&self) -> Hyperbox {
        self.clip(|j| self.unsafe_region.p[j] + self.unsafe_region.margins[j])
    }

    fn clip(&self, bound: impl Fn(usize) -> f64) -> Hyperbox {
        let mut b = self.domain.clone();
        for (j, f) in self.features.iter().enumerate() {
            let c = bound(j);
            if f.sign > 0.0 {
                b.hi[f.index] = b.hi[f.index].min(c);
            } else {
                b.lo[f.index] = b.lo[f.index].max(-c);
            }
        }
        b
    }

    /// One-dimensional double integrator: position and velocity on
    /// `[-2, 2]²`, goal `[-0.1, 0.1]²`, unsafe `|position| > 1.5`.
    pub fn toy() -> Self {
        Self {
            domain: Hyperbox::symmetric(&[2.0, 2.0]).unwrap(),
            initial: Hyperbox::symmetric(&[0.5, 0.25]).unwrap(),
            goal: Hyperbox::symmetric(&[0.1, 0.1]).unwrap(),
            features: vec![UnsafeFeature { index: 0, sign: 1.0 }, UnsafeFeature { index: 0, sign: -1.0 }],
            unsafe_region: SamplingRegion::new(vec![1.5, 1.5], vec![0.5, 0.5]).unwrap(),
        }
    }
}

/// Exact discretisation of the double integrator with timestep `dt`.
pub fn toy_plant(dt: f64) -> Result<LinearPlant> {
    LinearPlant::new(
        Matrix::from_rows(&[vec![1.0, dt], vec![0.0, 1.0]]),
        Matrix::from_rows(&[vec![0.5 * dt * dt], vec![dt]]),
        1.0,
    )
}

/// Affine feedback `u = -kp·pos - kd·vel` as a one-layer network.
pub fn affine_controller(kp: f64, kd: f64) -> Mlp {
    Mlp::new(2, vec![Layer::new(Matrix::from_rows(&[vec![-kp, -kd]]), vec![0.0], Activation::Identity)])
        .expect("2->1 affine layer")
}

/// Sample counts per set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCounts {
    pub initial: usize,
    pub free: usize,
    pub unsafe_: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            initial: 500,
            free: 4000,
            unsafe_: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn unweighted(points: Vec<Vec<f64>>) -> Self {
        let weights = vec![1.0; points.len()];
        Self { points, weights }
    }

    pub fn push(&mut self, x: Vec<f64>, weight: f64) {
        self.points.push(x);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Labelled training samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSets {
    pub initial: Batch,
    /// Samples from the domain outside goal and unsafe sets.
    pub free: Batch,
    /// Samples from the bounded unsafe set.
    pub unsafe_: Batch,
}

fn uniform_in(b: &Hyperbox, rng: &mut impl Rng) -> Vec<f64> {
    b.lo.iter()
        .zip(&b.hi)
        .map(|(l, h)| if l < h { rng.gen_range(*l..*h) } else { *l })
        .collect()
}

fn rejection(
    b: &Hyperbox,
    n: usize,
    rng: &mut impl Rng,
    accept: impl Fn(&[f64]) -> bool,
    what: &str,
) -> Result<Vec<Vec<f64>>> {
    let max_tries = 1000 * n.max(1);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > max_tries {
            return Err(Error::Sampling(format!(
                "{what}: accepted {} of {n} after {max_tries} draws",
                out.len()
            )));
        }
        let x = uniform_in(b, rng);
        if accept(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Uniform samples from the initial set, the free set and the bounded
/// unsafe set, by rejection from enclosing boxes.
pub fn sample_sets(task: &RwaTask, counts: &SampleCounts, seed: u64) -> Result<SampleSets> {
    task.validate()?;
    if counts.initial == 0 || counts.free == 0 || counts.unsafe_ == 0 {
        return Err(invalid("every sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = (0..counts.initial).map(|_| uniform_in(&task.initial, &mut rng)).collect();
    let free = rejection(&task.safe_box(), counts.free, &mut rng, |x| task.is_free(x), "free set")?;
    let unsafe_ = rejection(
        &task.unsafe_box(),
        counts.unsafe_,
        &mut rng,
        |x| task.in_sampled_unsafe(x),
        "bounded unsafe set",
    )?;
    Ok(SampleSets {
        initial: Batch::unweighted(initial),
        free: Batch::unweighted(free),
        unsafe_: Batch::unweighted(unsafe_),
    })
}
