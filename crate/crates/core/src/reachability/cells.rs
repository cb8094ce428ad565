use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::netgraph::{compose_closed_loop, ClosedLoop, Mlp};
use crate::dynamics::LinearPlant;
use crate::verifier::{check, Budget, Hyperbox, LinearConstraint, Query, Relation, Status};

/// Grid over the state space given by per-dimension breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    /// Sorted breakpoints per dimension, from the domain's lower to upper
    /// bound.
    pub edges: Vec<Vec<f64>>,
    /// Dimensions treated as velocities.
    pub velocity_dims: Vec<usize>,
    /// Index of the narrow band around zero, for velocity dimensions whose
    /// range straddles zero.
    pub zero_band: Vec<Option<usize>>,
}

impl CellSpec {
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.zero_band.len() || self.edges.is_empty() {
            return Err(invalid("cell spec needs edges and a zero-band entry per dimension"));
        }
        if self.velocity_dims.iter().any(|&d| d >= self.edges.len()) {
            return Err(invalid("velocity dimension out of range"));
        }
        for (d, e) in self.edges.iter().enumerate() {
            if e.len() < 2 {
                return Err(invalid(format!("dimension {d} needs at least one band")));
            }
            if e.windows(2).any(|w| !(w[0] < w[1]) && !(e.len() == 2 && w[0] == w[1])) {
                return Err(invalid(format!("dimension {d} has non-increasing breakpoints")));
            }
            if self.zero_band[d].is_some() && !self.velocity_dims.contains(&d) {
                return Err(invalid(format!("dimension {d} has a zero band but is not a velocity")));
            }
            if let Some(z) = self.zero_band[d] {
                if z + 1 >= e.len() {
                    return Err(invalid(format!("dimension {d} zero band out of range")));
                }
            }
        }
        Ok(())
    }

    /// Uniform bands; a degenerate domain dimension gets one band.
    pub fn uniform(domain: &Hyperbox, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() || counts.iter().any(|&c| c == 0) {
            return Err(invalid("one positive count per dimension required"));
        }
        let edges = (0..domain.dim())
            .map(|d| uniform_edges(domain.lo[d], domain.hi[d], if domain.width(d) > 0.0 { counts[d] } else { 1 }))
            .collect();
        Ok(Self {
            edges,
            velocity_dims: Vec::new(),
            zero_band: vec![None; domain.dim()],
        })
    }

    pub fn dim(&self) -> usize {
        self.edges.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn domain(&self) -> Hyperbox {
        Hyperbox {
            lo: self.edges.iter().map(|e| e[0]).collect(),
            hi: self.edges.iter().map(|e| *e.last().unwrap()).collect(),
        }
    }

    /// Per-dimension band indices of cell `id` (last dimension fastest).
    pub fn index_of(&self, mut id: usize) -> Vec<usize> {
        let counts = self.counts();
        let mut idx = vec![0; counts.len()];
        for d in (0..counts.len()).rev() {
            idx[d] = id % counts[d];
            id /= counts[d];
        }
        idx
    }

    pub fn id_of(&self, idx: &[usize]) -> usize {
        let counts = self.counts();
        idx.iter().zip(&counts).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn cell_box(&self, id: usize) -> Hyperbox {
        let idx = self.index_of(id);
        Hyperbox {
            lo: idx.iter().zip(&self.edges).map(|(i, e)| e[*i]).collect(),
            hi: idx.iter().zip(&self.edges).map(|(i, e)| e[i + 1]).collect(),
        }
    }

    /// Cell containing `x`, with half-open bands except the last.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = Vec::with_capacity(x.len());
        for (v, e) in x.iter().zip(&self.edges) {
            let last = e.len() - 1;
            if !(*v >= e[0] && *v <= e[last]) {
                return None;
            }
            let i = e.partition_point(|b| b <= v).clamp(1, last) - 1;
            idx.push(i);
        }
        Some(self.id_of(&idx))
    }

    /// Self-loops are only considered for cells lying in the zero band of
    /// every velocity dimension. A velocity that cannot change sign moves
    /// the state out of its cell eventually.
    pub fn self_loop_candidate(&self, id: usize) -> bool {
        let idx = self.index_of(id);
        self.velocity_dims
            .iter()
            .all(|&d| self.zero_band[d] == Some(idx[d]))
    }

    /// Cells whose band index differs by at most one in every dimension,
    /// excluding `id` itself.
    pub fn neighbours(&self, id: usize) -> Vec<usize> {
        let counts = self.counts();
        let base = self.index_of(id);
        let mut out = Vec::new();
        let total = 3usize.pow(counts.len() as u32);
        for code in 0..total {
            let mut c = code;
            let mut idx = base.clone();
            let mut ok = true;
            for d in (0..counts.len()).rev() {
                let off = (c % 3) as isize - 1;
                c /= 3;
                let v = base[d] as isize + off;
                if v < 0 || v >= counts[d] as isize {
                    ok = false;
                    break;
                }
                idx[d] = v as usize;
            }
            if ok {
                let n = self.id_of(&idx);
                if n != id {
                    out.push(n);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| if i == n { hi } else { lo + w * i as f64 })
        .collect()
}

/// Bands of width at least `step` over `[lo, hi]`, with a band of width
/// `zero` centred on 0 when the range straddles it.
fn velocity_edges(lo: f64, hi: f64, zero: f64, coarse: f64) -> (Vec<f64>, Option<usize>) {
    if !(lo < 0.0 && 0.0 < hi) {
        let n = (((hi - lo) / coarse).floor() as usize).max(1);
        return (uniform_edges(lo, hi, n), None);
    }
    let half = 0.5 * zero;
    let mut edges = Vec::new();
    let neg = -half - lo;
    let n_neg = if neg >= zero { ((neg / coarse).floor() as usize).max(1) } else { 0 };
    let pos = hi - half;
    let n_pos = if pos >= zero { ((pos / coarse).floor() as usize).max(1) } else { 0 };
    if n_neg > 0 {
        edges.extend(uniform_edges(lo, -half, n_neg));
    } else {
        edges.push(lo);
    }
    let zero_idx = edges.len() - 1;
    if n_pos > 0 {
        edges.extend(uniform_edges(half, hi, n_pos));
    } else {
        edges.push(hi);
    }
    (edges, Some(zero_idx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    pub velocity_dims: Vec<usize>,
    /// Non-zero velocity bands are this many times the zero band.
    pub coarse_factor: f64,
    /// Lower cap on cell widths, as a fraction of the domain width.
    pub max_cells_per_dim: usize,
    pub budget: Budget,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            velocity_dims: vec![2, 3],
            coarse_factor: 4.0,
            max_cells_per_dim: 64,
            budget: Budget::branches(200_000),
        }
    }
}

/// Largest `w` searched for is the domain width; the returned value is a
/// verified strict bound on `|s_k[d] - s_0[d]|` over the domain.
fn calibrate_dim(cl: &ClosedLoop, domain: &Hyperbox, d: usize, tol: f64, budget: &Budget) -> Result<f64> {
    let n = cl.state_dim();
    let k = cl.steps();
    let cap = domain.width(d).max(f64::MIN_POSITIVE);
    let floor = cap * 1e-6;
    let moves_at_least = |w: f64| -> Result<Status> {
        let clause = vec![
            LinearConstraint::new(vec![(k * n + d, 1.0), (d, -1.0)], Relation::Ge, w),
            LinearConstraint::new(vec![(k * n + d, -1.0), (d, 1.0)], Relation::Ge, w),
        ];
        let q = Query::new(cl.graph.clone(), domain.clone(), vec![clause])?;
        Ok(check(&q, budget)?.status)
    };
    // Grow the upper end until the move bound is certified.
    let mut hi = cap;
    loop {
        match moves_at_least(hi)? {
            Status::Unsat => break,
            Status::Sat if hi < cap * 1e6 => hi *= 2.0,
            status => {
                return Err(Error::Calibration(format!(
                    "dimension {d}: could not certify a move bound (last width {hi}, {status:?})"
                )))
            }
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol * hi && hi > floor {
        let mid = 0.5 * (lo + hi);
        match moves_at_least(mid)? {
            Status::Unsat => hi = mid,
            // An uncertified width is treated like a refuted one; `hi`
            // stays verified either way.
            Status::Sat | Status::Timeout => lo = mid,
        }
    }
    Ok(hi)
}

/// Chooses cell sizes such that, in `k` steps, no state can move farther
/// than one band in any dimension.
pub fn calibrate_cell_size(
    net: &Mlp,
    plant: &LinearPlant,
    domain: &Hyperbox,
    k: usize,
    tol: f64,
    opts: &CalibrationOptions,
) -> Result<CellSpec> {
    if k == 0 {
        return Err(invalid("calibration needs k ≥ 1"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(invalid("calibration tolerance must lie in (0, 1)"));
    }
    if domain.dim() != plant.state_dim() {
        return Err(invalid("domain and plant dimensions differ"));
    }
    let cl = compose_closed_loop(net, plant, k)?;
    let n = domain.dim();
    let mut edges = vec![Vec::new(); n];
    let mut zero_band = vec![None; n];
    for d in 0..n {
        let width = domain.width(d);
        if width == 0.0 {
            edges[d] = vec![domain.lo[d], domain.hi[d]];
            continue;
        }
        let min_width = width / opts.max_cells_per_dim as f64;
        let step = calibrate_dim(&cl, domain, d, tol, &opts.budget)?.max(min_width);
        if opts.velocity_dims.contains(&d) {
            let coarse = (step * opts.coarse_factor).max(step);
            let (e, z) = velocity_edges(domain.lo[d], domain.hi[d], step, coarse);
            edges[d] = e;
            zero_band[d] = z;
        } else {
            let count = ((width / step).floor() as usize).max(1);
            edges[d] = uniform_edges(domain.lo[d], domain.hi[d], count);
        }
    }
    let spec = CellSpec {
        edges,
        velocity_dims: opts.velocity_dims.clone(),
        zero_band,
    };
    spec.validate()?;
    Ok(spec)
}
