use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::netgraph::PwlGraph;

use super::bounds::{concretize_min, linear_bounds, minimizing_corner};
use super::types::{Budget, Hyperbox};

/// Certified minimum of one graph output over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinBound {
    /// The output is at least this value everywhere on the box.
    pub lower: f64,
    /// Input at which the smallest output was observed.
    pub witness: Vec<f64>,
    pub witness_value: f64,
    pub branches: u64,
}

struct Entry {
    bound: f64,
    seq: u64,
    bx: Hyperbox,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Max-heap: smallest bound first, then oldest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Best-first branch and bound on output `output` of `graph`.
///
/// Stops once the best observed value is within `tol` of the certified
/// lower bound. Running out of budget yields [`Error::Budget`] with the
/// bound reached so far.
pub fn find_min_output(
    graph: &PwlGraph,
    domain: &Hyperbox,
    output: usize,
    tol: f64,
    budget: &Budget,
) -> Result<MinBound> {
    if output >= graph.output_dim() {
        return Err(invalid(format!("output {output} out of range")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let start = Instant::now();
    let s = graph.flat_index(graph.outputs()[output]);
    let value = |x: &[f64]| -> Result<f64> { Ok(graph.eval(x)?[output]) };

    let mut witness = domain.center();
    let mut best = value(&witness)?;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut branches = 0u64;
    // Smallest bound among boxes dropped for being within `tol` of `best`.
    let mut pruned = f64::INFINITY;

    let mut bound_box = |bx: Hyperbox, best: &mut f64, witness: &mut Vec<f64>| -> Result<Option<Entry>> {
        let lb = linear_bounds(graph, &bx)?;
        let f = lb.lower_fn(s);
        let bound = lb.lo[s].max(concretize_min(f, &bx));
        for p in [bx.center(), minimizing_corner(f, &bx)] {
            let v = value(&p)?;
            if v < *best {
                *best = v;
                *witness = p;
            }
        }
        seq += 1;
        Ok(Some(Entry { bound, seq, bx }))
    };

    if let Some(e) = bound_box(domain.clone(), &mut best, &mut witness)? {
        heap.push(e);
    }
    branches += 1;
    loop {
        let lower = heap.peek().map_or(best, |e| e.bound.min(best)).min(pruned);
        if best - lower <= tol {
            return Ok(MinBound {
                lower,
                witness,
                witness_value: best,
                branches,
            });
        }
        if branches >= budget.max_branches || start.elapsed().as_secs_f64() > budget.timeout_s {
            return Err(Error::Budget {
                branches,
                best_bound: lower,
            });
        }
        let e = heap.pop().expect("non-empty while gap is open");
        let d = (0..e.bx.dim())
            .filter(|&d| e.bx.split(d).is_ok())
            .fold(None, |acc: Option<usize>, d| match acc {
                Some(b) if e.bx.width(b) >= e.bx.width(d) => Some(b),
                _ => Some(d),
            });
        let Some(d) = d else {
            // Point-sized box: its bound is as good as it gets.
            if e.bound < best - tol {
                return Err(Error::Budget {
                    branches,
                    best_bound: e.bound,
                });
            }
            pruned = pruned.min(e.bound);
            continue;
        };
        let (a, b) = e.bx.split(d)?;
        for child in [a, b] {
            if let Some(c) = bound_box(child, &mut best, &mut witness)? {
                if c.bound < best - tol {
                    heap.push(c);
                } else {
                    pruned = pruned.min(c.bound);
                }
            }
            branches += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{GraphBuilder, Mlp, Scalar};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn abs_minimum_is_zero() {
        let mut b = GraphBuilder::new(1);
        let x = b.input(0, 1).unwrap();
        let a = b.abs(x).unwrap();
        let g = b.finish(vec![Scalar::new(a, 0)]).unwrap();
        let m = find_min_output(&g, &Hyperbox::new(vec![-1.0], vec![3.0]).unwrap(), 0, 1e-6, &Budget::default())
            .unwrap();
        assert!(m.lower <= 0.0 && m.lower > -1e-6);
        assert!(m.witness_value <= m.lower + 1e-6);
    }

    #[test]
    fn bound_is_below_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let net = Mlp::random(&[2, 10, 10, 1], &mut rng).unwrap();
            let g = PwlGraph::from_mlp(&net).unwrap();
            let dom = Hyperbox::symmetric(&[1.0, 1.0]).unwrap();
            let m = find_min_output(&g, &dom, 0, 1e-4, &Budget::default()).unwrap();
            assert!(m.witness_value - m.lower <= 1e-4);
            assert_eq!(g.eval(&m.witness).unwrap()[0], m.witness_value);
            for _ in 0..2000 {
                let p = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
                assert!(g.eval(&p).unwrap()[0] >= m.lower);
            }
        }
    }

    #[test]
    fn coarse_tolerance_bound_is_certified() {
        use crate::verifier::{check, LinearConstraint, Query, Relation, Status};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let net = Mlp::random(&[2, 16, 16, 1], &mut rng).unwrap();
            let g = PwlGraph::from_mlp(&net).unwrap();
            let dom = Hyperbox::symmetric(&[2.0, 2.0]).unwrap();
            let m = find_min_output(&g, &dom, 0, 1e-2, &Budget::default()).unwrap();
            let q = Query::new(g, dom, vec![vec![LinearConstraint::on(0, Relation::Lt, m.lower)]]).unwrap();
            assert_eq!(check(&q, &Budget::default()).unwrap().status, Status::Unsat);
        }
    }

    #[test]
    fn budget_exhaustion_reports_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::random(&[2, 30, 30, 1], &mut rng).unwrap();
        let g = PwlGraph::from_mlp(&net).unwrap();
        let dom = Hyperbox::symmetric(&[3.0, 3.0]).unwrap();
        match find_min_output(&g, &dom, 0, 1e-9, &Budget::branches(5)) {
            Err(Error::Budget { branches, best_bound }) => {
                assert!(branches >= 5);
                assert!(best_bound.is_finite());
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
