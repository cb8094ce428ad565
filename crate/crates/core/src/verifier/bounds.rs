//! Bound propagation over a [`PwlGraph`].
//!
//! Two passes share one sweep over the nodes: plain interval arithmetic
//! with outward rounding, and linear bounds in terms of the graph input
//! (one lower and one upper affine function per scalar). Every scalar ends
//! up with the intersection of both.

use crate::error::{invalid, Result};
use crate::netgraph::{Op, PwlGraph};

use super::types::Hyperbox;

/// Relative slack added when a linear bound is turned into a number, to
/// cover rounding in the coefficient arithmetic.
const LINEAR_PAD: f64 = 1e-9;

/// Concrete bounds for every flat scalar of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn down(x: f64) -> f64 {
    x.next_down()
}

fn up(x: f64) -> f64 {
    x.next_up()
}

/// Outward-rounded interval of `w * [l, h]`.
fn scale_interval(w: f64, l: f64, h: f64) -> (f64, f64) {
    if w >= 0.0 {
        (down(w * l), up(w * h))
    } else {
        (down(w * h), up(w * l))
    }
}

fn check_domain(graph: &PwlGraph, domain: &Hyperbox) -> Result<()> {
    if domain.dim() != graph.input_dim() {
        return Err(invalid(format!(
            "domain has {} dimensions, graph takes {} inputs",
            domain.dim(),
            graph.input_dim()
        )));
    }
    Ok(())
}

/// Interval bound propagation. Sound under floating point: every sum and
/// product is rounded away from the interval.
pub fn interval_bounds(graph: &PwlGraph, domain: &Hyperbox) -> Result<Bounds> {
    check_domain(graph, domain)?;
    let n = graph.scalar_count();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for node in graph.nodes() {
        let off = node.offset;
        match &node.op {
            Op::Input { start, len } => {
                lo[off..off + len].copy_from_slice(&domain.lo[*start..start + len]);
                hi[off..off + len].copy_from_slice(&domain.hi[*start..start + len]);
            }
            Op::Affine { bias, .. } => {
                for (r, row) in node.rows.iter().enumerate() {
                    let (mut l, mut h) = (bias[r], bias[r]);
                    for &(src, w) in row {
                        let (tl, th) = scale_interval(w, lo[src], hi[src]);
                        l = down(l + tl);
                        h = up(h + th);
                    }
                    lo[off + r] = l;
                    hi[off + r] = node.cap.map_or(h, |c| h.min(c));
                }
            }
            Op::Relu { input } => {
                let src = graph.nodes()[*input].offset;
                for i in 0..node.dim {
                    lo[off + i] = lo[src + i].max(0.0);
                    hi[off + i] = hi[src + i].max(0.0);
                }
            }
            Op::Clamp { input, lo: a, hi: b } => {
                let src = graph.nodes()[*input].offset;
                for i in 0..node.dim {
                    lo[off + i] = lo[src + i].clamp(*a, *b);
                    hi[off + i] = hi[src + i].clamp(*a, *b);
                }
            }
        }
    }
    Ok(Bounds { lo, hi })
}

/// Interval and linear bounds for every scalar.
///
/// Linear functions are stored densely with `input_dim + 1` entries per
/// scalar; the last entry is the constant term.
#[derive(Clone, Debug)]
pub(crate) struct LinearBounds {
    pub width: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearBounds {
    /// Replaces a linear function by its concrete bound when the function
    /// overshoots the interval by more than the interval's own width.
    fn flatten_loose(&mut self, s: usize, sym_lo: f64, sym_hi: f64) {
        let w = self.width;
        let span = self.hi[s] - self.lo[s];
        if sym_hi > self.hi[s] + span {
            let f = &mut self.upper[s * w..(s + 1) * w];
            f.fill(0.0);
            f[w - 1] = self.hi[s];
        }
        if sym_lo < self.lo[s] - span {
            let f = &mut self.lower[s * w..(s + 1) * w];
            f.fill(0.0);
            f[w - 1] = self.lo[s];
        }
    }

    pub fn lower_fn(&self, s: usize) -> &[f64] {
        &self.lower[s * self.width..(s + 1) * self.width]
    }

    pub fn upper_fn(&self, s: usize) -> &[f64] {
        &self.upper[s * self.width..(s + 1) * self.width]
    }
}

/// Minimum of the affine function `f` over `domain`, padded downwards.
pub(crate) fn concretize_min(f: &[f64], domain: &Hyperbox) -> f64 {
    let n = domain.dim();
    let mut acc = f[n];
    let mut mass = f[n].abs();
    for d in 0..n {
        let c = f[d];
        let v = if c >= 0.0 { c * domain.lo[d] } else { c * domain.hi[d] };
        acc += v;
        mass += c.abs() * domain.lo[d].abs().max(domain.hi[d].abs());
    }
    acc - LINEAR_PAD * mass - f64::MIN_POSITIVE
}

/// Maximum of the affine function `f` over `domain`, padded upwards.
pub(crate) fn concretize_max(f: &[f64], domain: &Hyperbox) -> f64 {
    let n = domain.dim();
    let mut acc = f[n];
    let mut mass = f[n].abs();
    for d in 0..n {
        let c = f[d];
        let v = if c >= 0.0 { c * domain.hi[d] } else { c * domain.lo[d] };
        acc += v;
        mass += c.abs() * domain.lo[d].abs().max(domain.hi[d].abs());
    }
    acc + LINEAR_PAD * mass + f64::MIN_POSITIVE
}

/// Corner of `domain` minimizing the affine function `f`.
pub(crate) fn minimizing_corner(f: &[f64], domain: &Hyperbox) -> Vec<f64> {
    (0..domain.dim())
        .map(|d| if f[d] >= 0.0 { domain.lo[d] } else { domain.hi[d] })
        .collect()
}

pub(crate) fn linear_bounds(graph: &PwlGraph, domain: &Hyperbox) -> Result<LinearBounds> {
    check_domain(graph, domain)?;
    let n_in = graph.input_dim();
    let width = n_in + 1;
    let n = graph.scalar_count();
    let mut lb = LinearBounds {
        width,
        lo: vec![0.0; n],
        hi: vec![0.0; n],
        lower: vec![0.0; n * width],
        upper: vec![0.0; n * width],
    };
    let mut lrow = vec![0.0; width];
    let mut urow = vec![0.0; width];
    for node in graph.nodes() {
        let off = node.offset;
        match &node.op {
            Op::Input { start, len } => {
                for i in 0..*len {
                    let s = off + i;
                    lb.lo[s] = domain.lo[start + i];
                    lb.hi[s] = domain.hi[start + i];
                    lb.lower[s * width + start + i] = 1.0;
                    lb.upper[s * width + start + i] = 1.0;
                }
            }
            Op::Affine { bias, .. } => {
                for (r, row) in node.rows.iter().enumerate() {
                    let s = off + r;
                    let (mut l, mut h) = (bias[r], bias[r]);
                    lrow.fill(0.0);
                    urow.fill(0.0);
                    lrow[n_in] = bias[r];
                    urow[n_in] = bias[r];
                    for &(src, w) in row {
                        let (tl, th) = scale_interval(w, lb.lo[src], lb.hi[src]);
                        l = down(l + tl);
                        h = up(h + th);
                        let (for_lower, for_upper) = if w >= 0.0 {
                            (&lb.lower, &lb.upper)
                        } else {
                            (&lb.upper, &lb.lower)
                        };
                        let fl = &for_lower[src * width..(src + 1) * width];
                        let fu = &for_upper[src * width..(src + 1) * width];
                        for j in 0..width {
                            lrow[j] += w * fl[j];
                            urow[j] += w * fu[j];
                        }
                    }
                    lb.lower[s * width..(s + 1) * width].copy_from_slice(&lrow);
                    lb.upper[s * width..(s + 1) * width].copy_from_slice(&urow);
                    let (sym_lo, sym_hi) = (concretize_min(&lrow, domain), concretize_max(&urow, domain));
                    lb.lo[s] = l.max(sym_lo);
                    lb.hi[s] = h.min(sym_hi);
                    if let Some(c) = node.cap {
                        lb.hi[s] = lb.hi[s].min(c);
                    }
                    if lb.lo[s] > lb.hi[s] {
                        // Only possible through padding noise on a point box.
                        let m = 0.5 * (lb.lo[s] + lb.hi[s]);
                        lb.lo[s] = down(m);
                        lb.hi[s] = up(m);
                    }
                    lb.flatten_loose(s, sym_lo, sym_hi);
                }
            }
            Op::Relu { input } => {
                let src = graph.nodes()[*input].offset;
                for i in 0..node.dim {
                    let (p, s) = (src + i, off + i);
                    let (l, h) = (lb.lo[p], lb.hi[p]);
                    lb.lo[s] = l.max(0.0);
                    lb.hi[s] = h.max(0.0);
                    let (ps, ss) = (p * width, s * width);
                    if l >= 0.0 {
                        lb.lower.copy_within(ps..ps + width, ss);
                        lb.upper.copy_within(ps..ps + width, ss);
                    } else if h <= 0.0 {
                        // Zero rows are already in place.
                    } else {
                        // Upper: relu(z) ≤ λ(z - l) on [l, h], and z ≤ U(x).
                        let lam = h / (h - l);
                        for j in 0..width {
                            lb.upper[ss + j] = lam * lb.upper[ps + j];
                        }
                        lb.upper[ss + n_in] -= lam * l;
                        // Lower: relu(z) ≥ α z for α in {0, 1}.
                        if h > -l {
                            lb.lower.copy_within(ps..ps + width, ss);
                        }
                    }
                }
            }
            Op::Clamp { input, lo: a, hi: b } => {
                let src = graph.nodes()[*input].offset;
                for i in 0..node.dim {
                    let (p, s) = (src + i, off + i);
                    let (l, h) = (lb.lo[p], lb.hi[p]);
                    lb.lo[s] = l.clamp(*a, *b);
                    lb.hi[s] = h.clamp(*a, *b);
                    let (ps, ss) = (p * width, s * width);
                    if *a <= l && h <= *b {
                        lb.lower.copy_within(ps..ps + width, ss);
                        lb.upper.copy_within(ps..ps + width, ss);
                    } else {
                        lb.lower[ss + n_in] = lb.lo[s];
                        lb.upper[ss + n_in] = lb.hi[s];
                    }
                }
            }
        }
    }
    Ok(lb)
}

/// Sound enclosure of the graph outputs over `domain`, using the tighter of
/// interval and linear bounds for every scalar.
pub fn output_bounds(graph: &PwlGraph, domain: &Hyperbox) -> Result<Bounds> {
    let lb = linear_bounds(graph, domain)?;
    let idx: Vec<usize> = graph.outputs().iter().map(|&s| graph.flat_index(s)).collect();
    Ok(Bounds {
        lo: idx.iter().map(|&i| lb.lo[i]).collect(),
        hi: idx.iter().map(|&i| lb.hi[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{GraphBuilder, Mlp, Scalar};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_box(rng: &mut ChaCha8Rng, dim: usize) -> Hyperbox {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for _ in 0..dim {
            let c: f64 = rng.gen_range(-2.0..2.0);
            let r: f64 = rng.gen_range(0.0..1.0);
            lo.push(c - r);
            hi.push(c + r);
        }
        Hyperbox::new(lo, hi).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, b: &Hyperbox) -> Vec<f64> {
        (0..b.dim())
            .map(|d| if b.width(d) > 0.0 { rng.gen_range(b.lo[d]..=b.hi[d]) } else { b.lo[d] })
            .collect()
    }

    #[test]
    fn both_bounds_enclose_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let net = Mlp::random(&[3, 8, 8, 2], &mut rng).unwrap();
            let mut b = GraphBuilder::new(3);
            let x = b.input(0, 3).unwrap();
            let y = b.mlp(&net, x).unwrap();
            let c = b.clamp_gadget(y, -0.5, 0.5).unwrap();
            let a = b.abs(c).unwrap();
            let outputs = b.components(a);
            let g = b.finish(outputs).unwrap();
            let dom = random_box(&mut rng, 3);
            let ibp = interval_bounds(&g, &dom).unwrap();
            let lin = linear_bounds(&g, &dom).unwrap();
            for _ in 0..200 {
                let p = random_point(&mut rng, &dom);
                let v = g.eval_all(&p).unwrap();
                for s in 0..v.len() {
                    assert!(ibp.lo[s] <= v[s] && v[s] <= ibp.hi[s]);
                    assert!(lin.lo[s] <= v[s] && v[s] <= lin.hi[s]);
                    assert!(lin.lo[s] >= ibp.lo[s] && lin.hi[s] <= ibp.hi[s]);
                }
            }
        }
    }

    #[test]
    fn linear_bounds_keep_correlation() {
        // x - x is exactly zero; intervals give [-2, 2] for x in [-1, 1].
        let mut b = GraphBuilder::new(1);
        let x = b.input(0, 1).unwrap();
        let s = b.components(x)[0];
        let copy = b.stack(&[s]).unwrap();
        let d = b.linear(&[(Scalar::new(copy, 0), 1.0), (s, -1.0)], 0.0).unwrap();
        let g = b.finish(vec![Scalar::new(d, 0)]).unwrap();
        let dom = Hyperbox::new(vec![-1.0], vec![1.0]).unwrap();
        let out = g.flat_index(g.outputs()[0]);
        let ibp = interval_bounds(&g, &dom).unwrap();
        let lin = linear_bounds(&g, &dom).unwrap();
        assert!(ibp.hi[out] >= 2.0);
        assert!(lin.hi[out] < 1e-6 && lin.lo[out] > -1e-6);
    }

    #[test]
    fn point_box_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::random(&[2, 10, 1], &mut rng).unwrap();
        let g = PwlGraph::from_mlp(&net).unwrap();
        let p = [0.3, -0.7];
        let dom = Hyperbox::point(&p).unwrap();
        let v = g.eval(&p).unwrap()[0];
        let ibp = interval_bounds(&g, &dom).unwrap();
        let s = g.flat_index(g.outputs()[0]);
        assert!(ibp.hi[s] - ibp.lo[s] < 1e-12);
        assert!(ibp.lo[s] <= v && v <= ibp.hi[s]);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let g = PwlGraph::from_mlp(&Mlp::random(&[2, 3, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap()).unwrap();
        assert!(interval_bounds(&g, &Hyperbox::new(vec![0.0], vec![1.0]).unwrap()).is_err());
    }
}
