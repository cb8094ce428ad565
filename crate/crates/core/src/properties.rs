//! Encoders from docking and certificate properties to verifier queries.
//!
//! Encoders work on a [`GraphBuilder`] and produce [`ScalarClause`]s that
//! refer to graph scalars directly; [`assemble_query`] turns them into a
//! [`Query`] by exposing the referenced scalars as outputs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::certificate::{RwaTask, Witness};
use crate::dynamics::{LinearPlant, State};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::netgraph::{compose_closed_loop, ClosedLoop, GraphBuilder, Mlp, Scalar};
use crate::verifier::{Hyperbox, LinearConstraint, Query, Relation};

/// Sampled first-quadrant directions for the polyhedral norm bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    n_directions: usize,
    dirs: Vec<(f64, f64)>,
    over_factor: f64,
}

impl DirectionSet {
    pub fn new(n_directions: usize) -> Result<Self> {
        if n_directions == 0 || n_directions % 4 != 0 {
            return Err(invalid(format!(
                "n_directions must be a positive multiple of 4, got {n_directions}"
            )));
        }
        let dirs = (0..=n_directions / 4)
            .map(|i| {
                let t = 2.0 * i as f64 * PI / n_directions as f64;
                (t.cos(), t.sin())
            })
            .collect();
        // Rounded up so that `over` never undershoots the true norm.
        let over_factor = (1.0 / (PI / n_directions as f64).cos()).next_up();
        Ok(Self {
            n_directions,
            dirs,
            over_factor,
        })
    }

    pub fn n_directions(&self) -> usize {
        self.n_directions
    }

    pub fn directions(&self) -> &[(f64, f64)] {
        &self.dirs
    }

    pub fn over_factor(&self) -> f64 {
        self.over_factor
    }

    /// `max_i |u₁| cos θᵢ + |u₂| sin θᵢ`, a lower bound on `‖u‖₂`.
    pub fn under(&self, u1: f64, u2: f64) -> f64 {
        let (a, b) = (u1.abs(), u2.abs());
        let mut best = a * self.dirs[0].0 + b * self.dirs[0].1;
        for &(c, s) in &self.dirs[1..] {
            best = best.max(a * c + b * s);
        }
        best
    }

    /// `under / cos(π / n)`, an upper bound on `‖u‖₂`.
    pub fn over(&self, u1: f64, u2: f64) -> f64 {
        self.under(u1, u2) * self.over_factor
    }
}

/// Distance-dependent speed limit `‖v‖ ≤ v0 + slope·‖p‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySpec {
    pub v0: f64,
    pub slope: f64,
    pub n_directions: usize,
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self {
            v0: 0.2,
            slope: 2.0 * 0.001027,
            n_directions: 400,
        }
    }
}

impl SafetySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.v0 > 0.0 && self.slope > 0.0) {
            return Err(invalid("safety v0 and slope must be positive"));
        }
        DirectionSet::new(self.n_directions).map(|_| ())
    }

    pub fn directions(&self) -> Result<DirectionSet> {
        DirectionSet::new(self.n_directions)
    }

    /// Exact nonlinear check; the boundary counts as safe.
    pub fn is_safe(&self, s: &State) -> bool {
        s.speed() <= self.v0 + self.slope * s.position_norm()
    }
}

/// Docking square `|x|, |y| ≤ half_side`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalSpec {
    pub half_side: f64,
}

impl Default for GoalSpec {
    fn default() -> Self {
        Self { half_side: 0.35 }
    }
}

impl GoalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_side > 0.0 && self.half_side.is_finite()) {
            return Err(invalid("goal half_side must be positive"));
        }
        Ok(())
    }

    pub fn contains(&self, s: &State) -> bool {
        s.x.abs() <= self.half_side && s.y.abs() <= self.half_side
    }
}

/// Linear constraint over graph scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarConstraint {
    pub terms: Vec<(Scalar, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl ScalarConstraint {
    pub fn new(terms: Vec<(Scalar, f64)>, relation: Relation, rhs: f64) -> Self {
        Self {
            terms,
            relation,
            rhs,
        }
    }

    pub fn on(s: Scalar, relation: Relation, rhs: f64) -> Self {
        Self::new(vec![(s, 1.0)], relation, rhs)
    }
}

/// Disjunction of scalar constraints.
pub type ScalarClause = Vec<ScalarConstraint>;

/// Finishes `b` with every scalar referenced by `clauses` as an output.
pub fn assemble_query(b: GraphBuilder, domain: Hyperbox, clauses: &[ScalarClause]) -> Result<Query> {
    let mut outputs: Vec<Scalar> = Vec::new();
    let index = |s: Scalar, outputs: &mut Vec<Scalar>| match outputs.iter().position(|o| *o == s) {
        Some(i) => i,
        None => {
            outputs.push(s);
            outputs.len() - 1
        }
    };
    let mut mapped = Vec::with_capacity(clauses.len());
    for clause in clauses {
        let mut out = Vec::with_capacity(clause.len());
        for c in clause {
            let coeffs = c.terms.iter().map(|(s, w)| (index(*s, &mut outputs), *w)).collect();
            out.push(LinearConstraint::new(coeffs, c.relation, c.rhs));
        }
        mapped.push(out);
    }
    let graph = b.finish(outputs)?;
    Query::new(graph, domain, mapped)
}

fn abs_pair(b: &mut GraphBuilder, u: [Scalar; 2]) -> Result<[Scalar; 2]> {
    let v = b.stack(&u)?;
    let a = b.abs(v)?;
    Ok([Scalar::new(a, 0), Scalar::new(a, 1)])
}

/// Lower polyhedral bound on `‖(u₀, u₁)‖₂`.
pub fn encode_norm_under(b: &mut GraphBuilder, u: [Scalar; 2], d: &DirectionSet) -> Result<Scalar> {
    let [a0, a1] = abs_pair(b, u)?;
    let rows: Vec<Vec<(Scalar, f64)>> = d.directions().iter().map(|&(c, s)| vec![(a0, c), (a1, s)]).collect();
    let dots = b.linear_rows(&rows, &vec![0.0; rows.len()])?;
    let items: Vec<Scalar> = b.components(dots);
    b.max(&items)
}

/// Upper polyhedral bound on `‖(u₀, u₁)‖₂`.
pub fn encode_norm_over(b: &mut GraphBuilder, u: [Scalar; 2], d: &DirectionSet) -> Result<Scalar> {
    let under = encode_norm_under(b, u, d)?;
    let over = b.linear(&[(under, d.over_factor())], 0.0)?;
    Ok(Scalar::new(over, 0))
}

/// Clause that holds whenever the state violates the speed limit (and
/// possibly in a thin band of safe states as well).
pub fn encode_unsafe_overapprox(b: &mut GraphBuilder, state: [Scalar; 4], spec: &SafetySpec) -> Result<ScalarClause> {
    spec.validate()?;
    let d = spec.directions()?;
    let speed = encode_norm_over(b, [state[2], state[3]], &d)?;
    let dist = encode_norm_under(b, [state[0], state[1]], &d)?;
    Ok(vec![ScalarConstraint::new(
        vec![(speed, 1.0), (dist, -spec.slope)],
        Relation::Gt,
        spec.v0,
    )])
}

/// Goal membership as four unit clauses, and its negation as one
/// four-way disjunction.
pub fn encode_goal(state: [Scalar; 4], g: &GoalSpec) -> Result<(Vec<ScalarClause>, ScalarClause)> {
    g.validate()?;
    let h = g.half_side;
    let inside = vec![
        vec![ScalarConstraint::on(state[0], Relation::Le, h)],
        vec![ScalarConstraint::on(state[0], Relation::Ge, -h)],
        vec![ScalarConstraint::on(state[1], Relation::Le, h)],
        vec![ScalarConstraint::on(state[1], Relation::Ge, -h)],
    ];
    let outside = vec![
        ScalarConstraint::on(state[0], Relation::Gt, h),
        ScalarConstraint::on(state[0], Relation::Lt, -h),
        ScalarConstraint::on(state[1], Relation::Gt, h),
        ScalarConstraint::on(state[1], Relation::Lt, -h),
    ];
    Ok((inside, outside))
}

/// The step property: position or velocity L1 norm drops by more than
/// `eps` between `s0` and `sk`.
pub fn kind_property_holds(s0: &State, sk: &State, eps: f64) -> bool {
    sk.position_l1() - s0.position_l1() < -eps || sk.velocity_l1() - s0.velocity_l1() < -eps
}

/// Query whose solutions are start states in `domain` (outside the goal,
/// if given) for which the k-step property fails.
pub fn encode_kind_property(cl: &ClosedLoop, eps: f64, goal: Option<&GoalSpec>, domain: Hyperbox) -> Result<Query> {
    if !(eps > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {eps}")));
    }
    if cl.steps() == 0 {
        return Err(invalid("k-step property needs k ≥ 1"));
    }
    if cl.state_dim() != 4 {
        return Err(invalid("k-step property needs a 4-dimensional state"));
    }
    let mut b = cl.builder();
    let s0 = cl.states[0];
    let sk = *cl.states.last().unwrap();
    let both = b.affine(&[s0, sk], Matrix::identity(8), vec![0.0; 8])?;
    let a = b.abs(both)?;
    // Rows: Δ position L1, Δ velocity L1.
    let diff = Matrix::from_rows(&[
        vec![-1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 1.0, 1.0],
    ]);
    let d = b.affine(&[a], diff, vec![0.0; 2])?;
    let mut clauses = vec![
        vec![ScalarConstraint::on(Scalar::new(d, 0), Relation::Ge, -eps)],
        vec![ScalarConstraint::on(Scalar::new(d, 1), Relation::Ge, -eps)],
    ];
    if let Some(g) = goal {
        let st = cl.state(0);
        let (_, outside) = encode_goal([st[0], st[1], st[2], st[3]], g)?;
        clauses.push(outside);
    }
    assemble_query(b, domain, &clauses)
}

/// Bounded unsafe band: some feature exceeds its lower bound `p` and every
/// feature stays below `p + margin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRegion {
    pub p: Vec<f64>,
    pub margins: Vec<f64>,
}

impl SamplingRegion {
    pub fn new(p: Vec<f64>, margins: Vec<f64>) -> Result<Self> {
        let r = Self { p, margins };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != self.margins.len() || self.p.is_empty() {
            return Err(invalid("sampling region needs one margin per bound"));
        }
        if let Some(m) = self.margins.iter().find(|m| !(**m > 0.0)) {
            return Err(invalid(format!("sampling margins must be positive, got {m}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Some feature exceeds its bound.
    pub fn above_some(&self, g: &[f64]) -> bool {
        g.iter().zip(&self.p).any(|(v, p)| v > p)
    }

    /// Every feature is below its upper bound.
    pub fn below_all(&self, g: &[f64]) -> bool {
        g.iter().zip(self.p.iter().zip(&self.margins)).all(|(v, (p, m))| *v < p + m)
    }

    pub fn contains(&self, g: &[f64]) -> bool {
        self.above_some(g) && self.below_all(g)
    }
}

/// Clauses for [`SamplingRegion::contains`] over feature scalars.
pub fn encode_sampling_region(feats: &[Scalar], r: &SamplingRegion) -> Result<Vec<ScalarClause>> {
    r.validate()?;
    if feats.len() != r.dim() {
        return Err(invalid("one feature scalar per bound required"));
    }
    let mut clauses = vec![feats
        .iter()
        .zip(&r.p)
        .map(|(s, p)| ScalarConstraint::on(*s, Relation::Gt, *p))
        .collect::<ScalarClause>()];
    for (s, (p, m)) in feats.iter().zip(r.p.iter().zip(&r.margins)) {
        clauses.push(vec![ScalarConstraint::on(*s, Relation::Lt, p + m)]);
    }
    Ok(clauses)
}

/// Certificate conditions, plus the one-step check that the verified
/// sublevel set cannot jump past the bounded unsafe set or leave the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RwaCondition {
    LowerBound,
    Initial,
    Decrease,
    Unsafe,
    Escape,
}

impl RwaCondition {
    pub const ALL: [RwaCondition; 5] = [
        RwaCondition::LowerBound,
        RwaCondition::Initial,
        RwaCondition::Decrease,
        RwaCondition::Unsafe,
        RwaCondition::Escape,
    ];

    /// The box this condition ranges over.
    pub fn region(self, task: &RwaTask) -> Hyperbox {
        match self {
            RwaCondition::LowerBound => task.domain.clone(),
            RwaCondition::Initial => task.initial.clone(),
            RwaCondition::Decrease | RwaCondition::Escape => task.safe_box(),
            RwaCondition::Unsafe => task.unsafe_box(),
        }
    }
}

/// `x` outside the box `b`, as one disjunction.
pub fn encode_outside_box(x: &[Scalar], b: &Hyperbox) -> ScalarClause {
    x.iter()
        .enumerate()
        .flat_map(|(d, s)| {
            [
                ScalarConstraint::on(*s, Relation::Lt, b.lo[d]),
                ScalarConstraint::on(*s, Relation::Gt, b.hi[d]),
            ]
        })
        .collect()
}

fn feature_terms(task: &RwaTask, x: &[Scalar]) -> Vec<(Scalar, f64)> {
    task.features.iter().map(|f| (x[f.index], f.sign)).collect()
}

/// Query whose solutions in `region` violate `cond`.
///
/// 19: `V(x) < gamma`. 20: `V(x) > beta`. 21: outside the goal, not
/// unsafe, `V(x) ≤ beta` and `V(x) - V(x') < epsilon` for the closed-loop
/// successor `x'`. 22: in the bounded unsafe set and `V(x) < alpha`. The
/// escape check shares the premise of 21 and asks for `x'` beyond the
/// bounded unsafe set or outside the domain.
pub fn encode_rwa_condition(
    v: &Mlp,
    controller: &Mlp,
    plant: &LinearPlant,
    cond: RwaCondition,
    w: &Witness,
    region: &Hyperbox,
    task: &RwaTask,
) -> Result<Query> {
    w.validate()?;
    task.validate()?;
    let n = task.dim();
    if v.input_dim() != n || v.output_dim() != 1 {
        return Err(invalid("certificate must map the state to one value"));
    }
    if region.dim() != n {
        return Err(invalid("region dimension differs from the task"));
    }
    let mut clauses: Vec<ScalarClause> = Vec::new();
    let b = match cond {
        RwaCondition::LowerBound | RwaCondition::Initial | RwaCondition::Unsafe => {
            let mut b = GraphBuilder::new(n);
            let x = b.input(0, n)?;
            let vx = Scalar::new(b.mlp(v, x)?, 0);
            let xs = b.components(x);
            match cond {
                RwaCondition::LowerBound => clauses.push(vec![ScalarConstraint::on(vx, Relation::Lt, w.gamma)]),
                RwaCondition::Initial => clauses.push(vec![ScalarConstraint::on(vx, Relation::Gt, w.beta)]),
                _ => {
                    let r = &task.unsafe_region;
                    let terms = feature_terms(task, &xs);
                    clauses.push(
                        terms
                            .iter()
                            .zip(&r.p)
                            .map(|(t, p)| ScalarConstraint::new(vec![*t], Relation::Gt, *p))
                            .collect(),
                    );
                    for (t, (p, m)) in terms.iter().zip(r.p.iter().zip(&r.margins)) {
                        clauses.push(vec![ScalarConstraint::new(vec![*t], Relation::Lt, p + m)]);
                    }
                    clauses.push(vec![ScalarConstraint::on(vx, Relation::Lt, w.alpha)]);
                }
            }
            b
        }
        RwaCondition::Decrease | RwaCondition::Escape => {
            let cl = compose_closed_loop(controller, plant, 1)?;
            let mut b = cl.builder();
            let x0 = cl.state(0);
            let x1 = cl.state(1);
            let v0 = Scalar::new(b.mlp(v, cl.states[0])?, 0);
            clauses.push(encode_outside_box(&x0, &task.goal));
            for (term, p) in feature_terms(task, &x0).into_iter().zip(&task.unsafe_region.p) {
                clauses.push(vec![ScalarConstraint::new(vec![term], Relation::Le, *p)]);
            }
            clauses.push(vec![ScalarConstraint::on(v0, Relation::Le, w.beta)]);
            if cond == RwaCondition::Decrease {
                let v1 = Scalar::new(b.mlp(v, cl.states[1])?, 0);
                clauses.push(vec![ScalarConstraint::new(
                    vec![(v0, 1.0), (v1, -1.0)],
                    Relation::Lt,
                    w.epsilon,
                )]);
            } else {
                let mut away = encode_outside_box(&x1, &task.domain);
                let bounds = task.unsafe_region.p.iter().zip(&task.unsafe_region.margins);
                for (term, (p, m)) in feature_terms(task, &x1).into_iter().zip(bounds) {
                    away.push(ScalarConstraint::new(vec![term], Relation::Ge, p + m));
                }
                clauses.push(away);
            }
            b
        }
    };
    assemble_query(b, region.clone(), &clauses)
}
