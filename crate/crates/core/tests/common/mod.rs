#![allow(dead_code)]

use dockver_core::netgraph::{Activation, Layer, Mlp, PwlGraph};
use dockver_core::linalg::Matrix;
use dockver_core::verifier::{Hyperbox, LinearConstraint, Relation};
use rand::Rng;

/// Small 2-input network with `hidden` ReLU layers and one linear output.
pub fn random_net(rng: &mut impl Rng, hidden: &[usize]) -> Mlp {
    let mut layers = Vec::new();
    let mut fan_in = 2;
    for &h in hidden {
        let w = Matrix::from_fn(h, fan_in, |_, _| rng.gen_range(-1.5..1.5));
        let b = (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layers.push(Layer::new(w, b, Activation::Relu));
        fan_in = h;
    }
    let w = Matrix::from_fn(1, fan_in, |_, _| rng.gen_range(-1.5..1.5));
    layers.push(Layer::new(w, vec![rng.gen_range(-0.5..0.5)], Activation::Identity));
    Mlp::new(2, layers).unwrap()
}

pub fn random_shape(rng: &mut impl Rng, max_relus: usize) -> Vec<usize> {
    let depth = rng.gen_range(1..=2);
    let per = max_relus / depth;
    (0..depth).map(|_| rng.gen_range(1..=per)).collect()
}

/// `n × n` grid over a 2-D box, including the boundary.
pub fn grid_points(b: &Hyperbox, n: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
    (0..n).flat_map(move |i| {
        (0..n).map(move |j| {
            let t = i as f64 / (n - 1) as f64;
            let s = j as f64 / (n - 1) as f64;
            [b.lo[0] + t * b.width(0), b.lo[1] + s * b.width(1)]
        })
    })
}

pub fn random_constraint(rng: &mut impl Rng, g: &PwlGraph, b: &Hyperbox) -> LinearConstraint {
    let vals: Vec<f64> = grid_points(b, 21).map(|p| g.eval(&p).unwrap()[0]).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rel = [Relation::Le, Relation::Lt, Relation::Ge, Relation::Gt][rng.gen_range(0..4)];
    // Thresholds spread a little past the sampled range so both verdicts occur.
    let span = (hi - lo).max(1e-3);
    let rhs = rng.gen_range(lo - 0.2 * span..hi + 0.2 * span);
    LinearConstraint::on(0, rel, rhs)
}
