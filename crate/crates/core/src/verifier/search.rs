use std::time::Instant;

use rayon::prelude::*;

use crate::error::Result;
use crate::netgraph::{Op, PwlGraph};

use super::bounds::{concretize_max, concretize_min, linear_bounds, minimizing_corner, LinearBounds};
use super::types::{Budget, Hyperbox, Query, Status, Verdict};

/// Boxes taken off the stack per round. Fixed so that the explored tree
/// does not depend on the number of worker threads.
const BATCH: usize = 32;

/// Root boxes with at most this many dimensions have all corners tried.
const ROOT_CORNER_DIMS: usize = 10;

/// Constraint in `coeffs · flat_values ≤ rhs` form.
#[derive(Clone, Debug)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

struct Problem<'a> {
    graph: &'a PwlGraph,
    clauses: Vec<Vec<Row>>,
    /// For every unstable-capable ReLU, the flat index of its pre-activation.
    relu_inputs: Vec<usize>,
}

enum Outcome {
    Unsat,
    Sat(Vec<f64>),
    Split(Hyperbox, Hyperbox),
    /// Could not be decided and cannot be split further.
    Stuck,
}

#[derive(Clone, Copy, PartialEq)]
enum Truth {
    True,
    False,
    Unknown,
}

impl<'a> Problem<'a> {
    fn new(q: &'a Query) -> Self {
        let outs = q.graph.outputs();
        let clauses = q
            .clauses
            .iter()
            .map(|clause| {
                clause
                    .iter()
                    .map(|c| {
                        let (coeffs, rhs) = c.normalized();
                        let coeffs = coeffs
                            .into_iter()
                            .map(|(i, v)| (q.graph.flat_index(outs[i]), v))
                            .collect();
                        Row { coeffs, rhs }
                    })
                    .collect()
            })
            .collect();
        let mut relu_inputs = Vec::new();
        for node in q.graph.nodes() {
            if let Op::Relu { input } = node.op {
                let src = q.graph.nodes()[input].offset;
                relu_inputs.extend(src..src + node.dim);
            }
        }
        Self {
            graph: &q.graph,
            clauses,
            relu_inputs,
        }
    }

    fn satisfied(&self, x: &[f64], vals: &mut [f64]) -> bool {
        self.graph.eval_into(x, vals);
        self.clauses.iter().all(|clause| {
            clause
                .iter()
                .any(|r| r.coeffs.iter().map(|(i, c)| c * vals[*i]).sum::<f64>() <= r.rhs)
        })
    }

    /// Lower linear function of `row.coeffs · values` over the box.
    fn row_lower_fn(&self, row: &Row, lb: &LinearBounds) -> Vec<f64> {
        let mut f = vec![0.0; lb.width];
        for &(s, c) in &row.coeffs {
            let src = if c >= 0.0 { lb.lower_fn(s) } else { lb.upper_fn(s) };
            for (fj, sj) in f.iter_mut().zip(src) {
                *fj += c * sj;
            }
        }
        f
    }

    fn row_upper_fn(&self, row: &Row, lb: &LinearBounds) -> Vec<f64> {
        let mut f = vec![0.0; lb.width];
        for &(s, c) in &row.coeffs {
            let src = if c >= 0.0 { lb.upper_fn(s) } else { lb.lower_fn(s) };
            for (fj, sj) in f.iter_mut().zip(src) {
                *fj += c * sj;
            }
        }
        f
    }

    /// Interval range of `row.coeffs · values`, rounded outwards.
    fn row_interval(row: &Row, lb: &LinearBounds) -> (f64, f64) {
        let (mut l, mut h) = (0.0f64, 0.0f64);
        for &(s, c) in &row.coeffs {
            let (a, b) = if c >= 0.0 {
                (c * lb.lo[s], c * lb.hi[s])
            } else {
                (c * lb.hi[s], c * lb.lo[s])
            };
            l = (l + a.next_down()).next_down();
            h = (h + b.next_up()).next_up();
        }
        (l, h)
    }

    fn process(&self, bx: &Hyperbox, root: bool) -> Result<Outcome> {
        let lb = linear_bounds(self.graph, bx)?;
        let mut undecided_fns: Vec<Vec<f64>> = Vec::new();
        // Clauses left with a single undecided disjunct, as (lower fn, rhs).
        let mut units: Vec<(Vec<f64>, f64)> = Vec::new();
        for clause in &self.clauses {
            let mut clause_truth = Truth::False;
            let mut open = Vec::new();
            for row in clause {
                let (il, ih) = Self::row_interval(row, &lb);
                let lf = self.row_lower_fn(row, &lb);
                let lo = il.max(concretize_min(&lf, bx));
                let hi = ih.min(concretize_max(&self.row_upper_fn(row, &lb), bx));
                let t = if hi <= row.rhs {
                    Truth::True
                } else if lo > row.rhs {
                    Truth::False
                } else {
                    open.push((lf.clone(), row.rhs));
                    undecided_fns.push(lf);
                    Truth::Unknown
                };
                if t == Truth::True {
                    clause_truth = Truth::True;
                    break;
                }
                if t == Truth::Unknown {
                    clause_truth = Truth::Unknown;
                }
            }
            match clause_truth {
                Truth::False => return Ok(Outcome::Unsat),
                Truth::Unknown if open.len() == 1 => units.extend(open),
                Truth::Unknown | Truth::True => {}
            }
        }
        for i in 0..units.len() {
            for j in i + 1..units.len() {
                if pair_infeasible(&units[i], &units[j], bx) {
                    return Ok(Outcome::Unsat);
                }
            }
        }

        let mut vals = vec![0.0; self.graph.scalar_count()];
        let center = bx.center();
        if self.satisfied(&center, &mut vals) {
            return Ok(Outcome::Sat(center));
        }
        for f in &undecided_fns {
            let p = minimizing_corner(f, bx);
            if self.satisfied(&p, &mut vals) {
                return Ok(Outcome::Sat(p));
            }
        }
        if root && bx.dim() <= ROOT_CORNER_DIMS {
            for mask in 0..(1u64 << bx.dim()) {
                let p = bx.corner(mask);
                if self.satisfied(&p, &mut vals) {
                    return Ok(Outcome::Sat(p));
                }
            }
        }

        match self.split_dim(bx, &lb, &undecided_fns) {
            Some(d) => {
                let (a, b) = bx.split(d)?;
                Ok(Outcome::Split(a, b))
            }
            None => Ok(Outcome::Stuck),
        }
    }

    /// Widest dimension weighted by how strongly it drives unstable ReLUs;
    /// ties go to the lowest index.
    fn split_dim(&self, bx: &Hyperbox, lb: &LinearBounds, undecided: &[Vec<f64>]) -> Option<usize> {
        let n = bx.dim();
        let splittable = |d: usize| {
            let mid = 0.5 * (bx.lo[d] + bx.hi[d]);
            bx.lo[d] < mid && mid < bx.hi[d]
        };
        let mut sens = vec![0.0; n];
        for &p in &self.relu_inputs {
            if lb.lo[p] < 0.0 && lb.hi[p] > 0.0 {
                let f = lb.upper_fn(p);
                for d in 0..n {
                    sens[d] += f[d].abs();
                }
            }
        }
        if sens.iter().all(|s| *s == 0.0) {
            for f in undecided {
                for d in 0..n {
                    sens[d] += f[d].abs();
                }
            }
        }
        let weighted = sens.iter().any(|s| *s > 0.0);
        let mut best: Option<(usize, f64)> = None;
        for d in (0..n).filter(|&d| splittable(d)) {
            let score = if weighted { bx.width(d) * sens[d] } else { bx.width(d) };
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((d, score));
            }
        }
        // A dimension with zero weight may still be the only splittable one.
        best.map(|(d, _)| d)
    }
}

/// Can `f(x) ≤ a` and `g(x) ≤ b` hold together somewhere on the box?
///
/// Both fail together exactly when some convex combination
/// `λ(f - a) + (1 - λ)(g - b)` is positive on the whole box. Its box minimum
/// is concave and piecewise linear in `λ`, with kinks where a coefficient
/// changes sign, so checking the ends and the kinks is exhaustive.
fn pair_infeasible((f, a): &(Vec<f64>, f64), (g, b): &(Vec<f64>, f64), bx: &Hyperbox) -> bool {
    let n = bx.dim();
    let mut lambdas = vec![0.0, 1.0];
    for d in 0..n {
        if (f[d] > 0.0) != (g[d] > 0.0) && f[d] != g[d] {
            let l = g[d] / (g[d] - f[d]);
            if l > 0.0 && l < 1.0 {
                lambdas.push(l);
            }
        }
    }
    let mut h = vec![0.0; n + 1];
    lambdas.iter().any(|&l| {
        for d in 0..=n {
            h[d] = l * f[d] + (1.0 - l) * g[d];
        }
        h[n] -= l * a + (1.0 - l) * b;
        concretize_min(&h, bx) > 0.0
    })
}

/// Decides whether some input in the query domain satisfies every clause.
///
/// UNSAT is a proof (all bounds are sound); SAT carries a concrete input that
/// was checked by direct evaluation; TIMEOUT means the budget ran out or a
/// region could not be refined further.
pub fn check(query: &Query, budget: &Budget) -> Result<Verdict> {
    query.validate()?;
    let start = Instant::now();
    let problem = Problem::new(query);
    let mut stack = vec![query.domain.clone()];
    let mut branches: u64 = 0;
    let mut stuck = false;
    let mut first = true;
    let verdict = |status, counterexample, branches| Verdict {
        status,
        counterexample,
        branches,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    while !stack.is_empty() {
        if branches >= budget.max_branches || start.elapsed().as_secs_f64() > budget.timeout_s {
            return Ok(verdict(Status::Timeout, None, branches));
        }
        let take = BATCH.min(stack.len()).min((budget.max_branches - branches) as usize);
        let batch: Vec<Hyperbox> = stack.split_off(stack.len() - take);
        let root = first;
        first = false;
        let outcomes: Vec<Result<Outcome>> = if batch.len() == 1 {
            vec![problem.process(&batch[0], root)]
        } else {
            batch.par_iter().map(|b| problem.process(b, root)).collect()
        };
        branches += batch.len() as u64;
        // The batch was popped from the top of the stack, so its last box is
        // the most recent one; handle it first to keep the order LIFO.
        let mut children = Vec::new();
        for outcome in outcomes.into_iter().rev() {
            match outcome? {
                Outcome::Unsat => {}
                Outcome::Sat(x) => return Ok(verdict(Status::Sat, Some(x), branches)),
                Outcome::Split(a, b) => {
                    children.push(b);
                    children.push(a);
                }
                Outcome::Stuck => stuck = true,
            }
        }
        // Children of the most recent box end on top.
        for pair in children.chunks(2).rev() {
            stack.extend_from_slice(pair);
        }
    }
    let status = if stuck { Status::Timeout } else { Status::Unsat };
    Ok(verdict(status, None, branches))
}
