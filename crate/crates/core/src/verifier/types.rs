use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netgraph::PwlGraph;

/// Axis-aligned box `lo ≤ x ≤ hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Hyperbox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(invalid("box bounds differ in length"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(invalid(format!("box dimension {i}: bad bounds [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Box `[-r, r]` in every coordinate of `radii`.
    pub fn symmetric(radii: &[f64]) -> Result<Self> {
        Self::new(radii.iter().map(|r| -r).collect(), radii.to_vec())
    }

    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec(), p.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn contains_box(&self, other: &Hyperbox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|d| self.lo[d] <= other.lo[d] && other.hi[d] <= self.hi[d])
    }

    pub fn intersects(&self, other: &Hyperbox) -> bool {
        other.dim() == self.dim() && (0..self.dim()).all(|d| self.lo[d] <= other.hi[d] && other.lo[d] <= self.hi[d])
    }

    /// Intersection with positive volume, if any.
    pub fn overlap_volume(&self, other: &Hyperbox) -> f64 {
        (0..self.dim())
            .map(|d| (self.hi[d].min(other.hi[d]) - self.lo[d].max(other.lo[d])).max(0.0))
            .product()
    }

    /// Corner selected by a bit mask (bit `d` set means `hi[d]`).
    pub fn corner(&self, mask: u64) -> Vec<f64> {
        (0..self.dim())
            .map(|d| if mask >> d & 1 == 1 { self.hi[d] } else { self.lo[d] })
            .collect()
    }

    /// Bisects dimension `dim` at its midpoint.
    pub fn split(&self, dim: usize) -> Result<(Hyperbox, Hyperbox)> {
        if dim >= self.dim() {
            return Err(invalid(format!("split dimension {dim} out of range")));
        }
        let mid = 0.5 * (self.lo[dim] + self.hi[dim]);
        if !(self.lo[dim] < mid && mid < self.hi[dim]) {
            return Err(invalid(format!("dimension {dim} is too narrow to split")));
        }
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[dim] = mid;
        right.lo[dim] = mid;
        Ok((left, right))
    }

    /// Uniform grid of `counts[d]` cells per dimension, in row-major order
    /// (last dimension fastest).
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<Hyperbox>> {
        if counts.len() != self.dim() || counts.iter().any(|&c| c == 0) {
            return Err(invalid("grid needs a positive count per dimension"));
        }
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            let mut lo = Vec::with_capacity(self.dim());
            let mut hi = Vec::with_capacity(self.dim());
            for d in 0..self.dim() {
                let w = self.width(d) / counts[d] as f64;
                lo.push(if idx[d] == 0 { self.lo[d] } else { self.lo[d] + w * idx[d] as f64 });
                hi.push(if idx[d] + 1 == counts[d] {
                    self.hi[d]
                } else {
                    self.lo[d] + w * (idx[d] + 1) as f64
                });
            }
            out.push(Hyperbox { lo, hi });
            for d in (0..self.dim()).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`Hyperbox::split`].
pub fn split_box(b: &Hyperbox, dim: usize) -> Result<(Hyperbox, Hyperbox)> {
    b.split(dim)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

/// Strict inequalities are decided with this margin: `a < c` is checked as
/// `a ≤ c - STRICT_MARGIN`.
pub const STRICT_MARGIN: f64 = 1e-9;

/// `Σ coeffs[i].1 · out[coeffs[i].0]  (relation)  rhs` over graph outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
        }
    }

    /// Single-output constraint `out[i] (rel) rhs`.
    pub fn on(output: usize, relation: Relation, rhs: f64) -> Self {
        Self::new(vec![(output, 1.0)], relation, rhs)
    }

    /// Equivalent `a·out ≤ b` form with the strict margin applied.
    pub(crate) fn normalized(&self) -> (Vec<(usize, f64)>, f64) {
        match self.relation {
            Relation::Le => (self.coeffs.clone(), self.rhs),
            Relation::Lt => (self.coeffs.clone(), self.rhs - STRICT_MARGIN),
            Relation::Ge => (self.negated_coeffs(), -self.rhs),
            Relation::Gt => (self.negated_coeffs(), -self.rhs - STRICT_MARGIN),
        }
    }

    fn negated_coeffs(&self) -> Vec<(usize, f64)> {
        self.coeffs.iter().map(|(i, c)| (*i, -c)).collect()
    }

    /// `b - a·out` in normalized form; non-negative means satisfied.
    pub fn slack(&self, outputs: &[f64]) -> f64 {
        let (coeffs, rhs) = self.normalized();
        rhs - coeffs.iter().map(|(i, c)| c * outputs[*i]).sum::<f64>()
    }

    pub fn holds(&self, outputs: &[f64]) -> bool {
        self.slack(outputs) >= 0.0
    }
}

/// Disjunction of linear constraints.
pub type Clause = Vec<LinearConstraint>;

pub fn clause_holds(clause: &Clause, outputs: &[f64]) -> bool {
    clause.iter().any(|c| c.holds(outputs))
}

/// Is there an input in `domain` whose graph outputs satisfy every clause?
#[derive(Clone, Debug)]
pub struct Query {
    pub graph: PwlGraph,
    pub domain: Hyperbox,
    pub clauses: Vec<Clause>,
}

impl Query {
    pub fn new(graph: PwlGraph, domain: Hyperbox, clauses: Vec<Clause>) -> Result<Self> {
        let q = Self {
            graph,
            domain,
            clauses,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.dim() != self.graph.input_dim() {
            return Err(invalid(format!(
                "domain has {} dimensions, graph takes {} inputs",
                self.domain.dim(),
                self.graph.input_dim()
            )));
        }
        for (ci, clause) in self.clauses.iter().enumerate() {
            if clause.is_empty() {
                return Err(invalid(format!("clause {ci} is an empty disjunction")));
            }
            for c in clause {
                if c.coeffs.iter().all(|(_, v)| *v == 0.0) {
                    return Err(invalid(format!("clause {ci} has a constraint with no nonzero coefficient")));
                }
                if !c.rhs.is_finite() || c.coeffs.iter().any(|(_, v)| !v.is_finite()) {
                    return Err(invalid(format!("clause {ci} has non-finite constants")));
                }
                if let Some((i, _)) = c.coeffs.iter().find(|(i, _)| *i >= self.graph.output_dim()) {
                    return Err(invalid(format!("clause {ci} references output {i}")));
                }
            }
        }
        Ok(())
    }

    /// Do the graph outputs at `x` satisfy every clause?
    pub fn satisfied_by(&self, x: &[f64]) -> Result<bool> {
        let out = self.graph.eval(x)?;
        Ok(self.clauses.iter().all(|c| clause_holds(c, &out)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Unsat,
    Sat,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counterexample: Option<Vec<f64>>,
    pub branches: u64,
    pub wall_time_s: f64,
}

impl Verdict {
    pub fn is_unsat(&self) -> bool {
        self.status == Status::Unsat
    }

    pub fn is_sat(&self) -> bool {
        self.status == Status::Sat
    }
}

/// Search limits for one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub timeout_s: f64,
    pub max_branches: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            timeout_s: 5000.0,
            max_branches: 5_000_000,
        }
    }
}

impl Budget {
    pub fn branches(max_branches: u64) -> Self {
        Self {
            max_branches,
            ..Self::default()
        }
    }
}
