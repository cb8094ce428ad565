use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cells::CellSpec;
use crate::dynamics::LinearPlant;
use crate::error::{invalid, Error, Result};
use crate::netgraph::{compose_closed_loop, ClosedLoop, Mlp};
use crate::verifier::{check, output_bounds, Budget, Clause, Hyperbox, LinearConstraint, Query, Relation, Status};

/// One-step reachability between grid cells.
///
/// Cells are half-open: band `[e_i, e_{i+1})`, except that the last band of
/// each dimension includes its upper end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphFile", try_from = "GraphFile")]
pub struct CellGraph {
    pub spec: CellSpec,
    pub k: usize,
    pub successors: Vec<Vec<usize>>,
    /// Cells with a state whose successor leaves the domain.
    pub escapes: Vec<bool>,
    /// Edges added because the verifier ran out of budget.
    pub timeout_edges: Vec<(usize, usize)>,
    pub timeout_escapes: Vec<usize>,
    pub queries: u64,
}

impl CellGraph {
    pub fn cell_count(&self) -> usize {
        self.successors.len()
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.successors
            .iter()
            .enumerate()
            .flat_map(|(a, s)| s.iter().map(move |&b| (a, b)))
    }

    pub fn has_self_loop(&self, id: usize) -> bool {
        self.successors[id].contains(&id)
    }

    /// Cells from which some path reaches an escaping cell.
    pub fn escape_reachable(&self) -> Vec<bool> {
        let n = self.cell_count();
        let mut preds = vec![Vec::new(); n];
        for (a, b) in self.edges() {
            preds[b].push(a);
        }
        let mut seen = self.escapes.clone();
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| seen[i]).collect();
        while let Some(v) = queue.pop_front() {
            for &p in &preds[v] {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(p);
                }
            }
        }
        seen
    }

    /// CSV of edges with columns `from,to,timed_out`.
    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "timed_out"])?;
        for (a, b) in self.edges() {
            let t = self.timeout_edges.binary_search(&(a, b)).is_ok();
            w.write_record([a.to_string(), b.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV of cells: id, centre, box corners, escape flag.
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.spec.dim();
        let mut header = vec!["id".to_string()];
        header.extend((0..n).map(|d| format!("c{d}")));
        header.extend((0..n).map(|d| format!("lo{d}")));
        header.extend((0..n).map(|d| format!("hi{d}")));
        header.push("escapes".into());
        w.write_record(&header)?;
        for id in 0..self.cell_count() {
            let b = self.spec.cell_box(id);
            let mut rec = vec![id.to_string()];
            rec.extend(b.center().iter().map(f64::to_string));
            rec.extend(b.lo.iter().map(f64::to_string));
            rec.extend(b.hi.iter().map(f64::to_string));
            rec.push(self.escapes[id].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CellEntry {
    id: usize,
    #[serde(rename = "box")]
    bx: Hyperbox,
}

#[derive(Serialize, Deserialize)]
struct Flags {
    self_loop_possible: Vec<usize>,
    escapes: Vec<usize>,
    timeout_edges: Vec<(usize, usize)>,
    timeout_escapes: Vec<usize>,
}

/// On-disk layout of a cell graph.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    k: usize,
    spec: CellSpec,
    cells: Vec<CellEntry>,
    edges: Vec<(usize, usize)>,
    flags: Flags,
    queries: u64,
}

impl From<CellGraph> for GraphFile {
    fn from(g: CellGraph) -> Self {
        let n = g.cell_count();
        GraphFile {
            k: g.k,
            cells: (0..n).map(|id| CellEntry { id, bx: g.spec.cell_box(id) }).collect(),
            edges: g.edges().collect(),
            flags: Flags {
                self_loop_possible: (0..n).filter(|&i| g.spec.self_loop_candidate(i)).collect(),
                escapes: (0..n).filter(|&i| g.escapes[i]).collect(),
                timeout_edges: g.timeout_edges,
                timeout_escapes: g.timeout_escapes,
            },
            queries: g.queries,
            spec: g.spec,
        }
    }
}

impl TryFrom<GraphFile> for CellGraph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Self> {
        f.spec.validate()?;
        let n = f.spec.cell_count();
        if f.cells.len() != n || f.cells.iter().enumerate().any(|(i, c)| c.id != i || c.bx != f.spec.cell_box(i)) {
            return Err(Error::Schema("cell list does not match the cell spec".into()));
        }
        let mut successors = vec![Vec::new(); n];
        for &(a, b) in &f.edges {
            if a >= n || b >= n {
                return Err(Error::Schema(format!("edge ({a}, {b}) out of range")));
            }
            successors[a].push(b);
        }
        for s in &mut successors {
            s.sort_unstable();
            s.dedup();
        }
        let mut escapes = vec![false; n];
        for &c in &f.flags.escapes {
            *escapes.get_mut(c).ok_or_else(|| Error::Schema(format!("escape flag on missing cell {c}")))? = true;
        }
        Ok(CellGraph {
            spec: f.spec,
            k: f.k,
            successors,
            escapes,
            timeout_edges: f.flags.timeout_edges,
            timeout_escapes: f.flags.timeout_escapes,
            queries: f.queries,
        })
    }
}

struct CellResult {
    successors: Vec<usize>,
    timeouts: Vec<usize>,
    escapes: bool,
    escape_timeout: bool,
    queries: u64,
}

/// Membership of `s_t` in the half-open cell `b`, as unit clauses.
fn in_cell(spec: &CellSpec, b: &Hyperbox, base: usize, out: &mut Vec<Clause>) {
    let top = spec.domain();
    for d in 0..b.dim() {
        out.push(vec![LinearConstraint::on(base + d, Relation::Ge, b.lo[d])]);
        let rel = if b.hi[d] == top.hi[d] { Relation::Le } else { Relation::Lt };
        out.push(vec![LinearConstraint::on(base + d, rel, b.hi[d])]);
    }
}

fn run(cl: &ClosedLoop, domain: &Hyperbox, clauses: Vec<Clause>, budget: &Budget) -> Result<Status> {
    let q = Query::new(cl.graph.clone(), domain.clone(), clauses)?;
    Ok(check(&q, budget)?.status)
}

fn explore_cell(cl: &ClosedLoop, spec: &CellSpec, id: usize, budget: &Budget) -> Result<CellResult> {
    let n = spec.dim();
    let base = cl.steps() * n;
    let top = spec.domain();
    let cell = spec.cell_box(id);
    let image = output_bounds(&cl.graph, &cell)?;
    let image = Hyperbox {
        lo: image.lo[base..].to_vec(),
        hi: image.hi[base..].to_vec(),
    };
    let mut source = Vec::new();
    in_cell(spec, &cell, 0, &mut source);
    let mut res = CellResult {
        successors: Vec::new(),
        timeouts: Vec::new(),
        escapes: false,
        escape_timeout: false,
        queries: 0,
    };

    let mut targets = spec.neighbours(id);
    if spec.self_loop_candidate(id) {
        targets.push(id);
        targets.sort_unstable();
    }
    for t in targets {
        let tb = spec.cell_box(t);
        if !tb.intersects(&image) {
            continue;
        }
        let mut clauses = source.clone();
        in_cell(spec, &tb, base, &mut clauses);
        res.queries += 1;
        match run(cl, &cell, clauses, budget)? {
            Status::Unsat => {}
            Status::Sat => res.successors.push(t),
            Status::Timeout => {
                res.successors.push(t);
                res.timeouts.push(t);
            }
        }
    }

    // Leaving the domain.
    if !top.contains_box(&image) {
        let mut exit = Vec::new();
        for d in 0..n {
            exit.push(LinearConstraint::on(base + d, Relation::Lt, top.lo[d]));
            exit.push(LinearConstraint::on(base + d, Relation::Gt, top.hi[d]));
        }
        let mut clauses = source.clone();
        clauses.push(exit);
        res.queries += 1;
        match run(cl, &cell, clauses, budget)? {
            Status::Unsat => {}
            Status::Sat => res.escapes = true,
            Status::Timeout => {
                res.escapes = true;
                res.escape_timeout = true;
            }
        }
    }

    // Landing inside the domain but beyond the neighbourhood would mean the
    // cell sizes were not calibrated for this controller.
    let hood = neighbourhood_hull(spec, id);
    let inside = Hyperbox {
        lo: image.lo.iter().zip(&top.lo).map(|(a, b)| a.max(*b)).collect(),
        hi: image.hi.iter().zip(&top.hi).map(|(a, b)| a.min(*b)).collect(),
    };
    if inside.lo.iter().zip(&inside.hi).all(|(a, b)| a <= b) && !hood.contains_box(&inside) {
        let mut far = Vec::new();
        for d in 0..n {
            if hood.lo[d] > top.lo[d] {
                far.push(LinearConstraint::on(base + d, Relation::Lt, hood.lo[d]));
            }
            if hood.hi[d] < top.hi[d] {
                far.push(LinearConstraint::on(base + d, Relation::Ge, hood.hi[d]));
            }
        }
        let mut clauses = source;
        in_cell(spec, &top, base, &mut clauses);
        clauses.push(far);
        res.queries += 1;
        if run(cl, &cell, clauses, budget)? != Status::Unsat {
            return Err(Error::Calibration(format!(
                "cell {id} may reach a non-adjacent cell; the grid is too fine for this controller"
            )));
        }
    }
    Ok(res)
}

fn neighbourhood_hull(spec: &CellSpec, id: usize) -> Hyperbox {
    let idx = spec.index_of(id);
    let counts = spec.counts();
    Hyperbox {
        lo: (0..spec.dim()).map(|d| spec.edges[d][idx[d].saturating_sub(1)]).collect(),
        hi: (0..spec.dim())
            .map(|d| spec.edges[d][(idx[d] + 2).min(counts[d])])
            .collect(),
    }
}

/// Builds the cell graph with one verifier query per candidate edge.
/// Candidates are neighbouring cells the sound image bound touches; an edge
/// whose query times out is kept and flagged.
pub fn build_cell_graph(
    net: &Mlp,
    plant: &LinearPlant,
    spec: &CellSpec,
    k: usize,
    budget: &Budget,
) -> Result<CellGraph> {
    spec.validate()?;
    if k == 0 {
        return Err(invalid("cell graph needs k ≥ 1"));
    }
    if spec.dim() != plant.state_dim() {
        return Err(invalid("cell spec and plant dimensions differ"));
    }
    let cl = compose_closed_loop(net, plant, k)?;
    let results: Vec<CellResult> = (0..spec.cell_count())
        .into_par_iter()
        .map(|id| explore_cell(&cl, spec, id, budget))
        .collect::<Result<_>>()?;
    let mut g = CellGraph {
        spec: spec.clone(),
        k,
        successors: Vec::with_capacity(results.len()),
        escapes: Vec::with_capacity(results.len()),
        timeout_edges: Vec::new(),
        timeout_escapes: Vec::new(),
        queries: 0,
    };
    for (id, r) in results.into_iter().enumerate() {
        g.timeout_edges.extend(r.timeouts.iter().map(|&t| (id, t)));
        if r.escape_timeout {
            g.timeout_escapes.push(id);
        }
        g.successors.push(r.successors);
        g.escapes.push(r.escapes);
        g.queries += r.queries;
    }
    Ok(g)
}

/// Strongly connected components by iterative Tarjan, each sorted, in
/// reverse topological order.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    comps
}

/// One simple cycle per cyclic strongly connected component, starting at
/// its smallest vertex. Self-loops are cycles of length one.
pub fn cycles_in(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut cycles = Vec::new();
    let mut comp_of = vec![usize::MAX; adj.len()];
    let comps = strongly_connected_components(adj);
    for (c, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = c;
        }
    }
    for (c, comp) in comps.iter().enumerate() {
        let start = comp[0];
        if comp.len() == 1 {
            if adj[start].contains(&start) {
                cycles.push(vec![start]);
            }
            continue;
        }
        // Shortest path back to `start` inside the component.
        let mut parent = vec![usize::MAX; adj.len()];
        let mut queue = VecDeque::from([start]);
        let mut closing = None;
        'bfs: while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if comp_of[w] != c {
                    continue;
                }
                if w == start {
                    closing = Some(v);
                    break 'bfs;
                }
                if parent[w] == usize::MAX {
                    parent[w] = v;
                    queue.push_back(w);
                }
            }
        }
        let mut v = closing.expect("a component with two vertices has a cycle");
        let mut cyc = vec![v];
        while v != start {
            v = parent[v];
            cyc.push(v);
        }
        cyc.reverse();
        cycles.push(cyc);
    }
    cycles.sort();
    cycles
}

pub fn find_cycles(g: &CellGraph) -> Vec<Vec<usize>> {
    cycles_in(&g.successors)
}

/// Cells whose box lies inside `region`.
pub fn cells_inside(spec: &CellSpec, region: &Hyperbox) -> Vec<usize> {
    (0..spec.cell_count())
        .filter(|&id| region.contains_box(&spec.cell_box(id)))
        .collect()
}

/// Cells from which every path stays in the domain and reaches a goal
/// cell. Paths stop at goal cells, so only cycles through non-goal cells
/// matter; if any exist the question cannot be answered this way.
pub fn liveness_cells(g: &CellGraph, goal_cells: &[usize]) -> Result<Vec<usize>> {
    live_set(&g.successors, &g.escapes, goal_cells)
}

/// [`liveness_cells`] on a bare adjacency list.
pub fn live_set(successors: &[Vec<usize>], escapes: &[bool], goal_cells: &[usize]) -> Result<Vec<usize>> {
    let n = successors.len();
    if escapes.len() != n {
        return Err(invalid("one escape flag per vertex required"));
    }
    let mut is_goal = vec![false; n];
    for &c in goal_cells {
        if c >= n {
            return Err(invalid(format!("goal cell {c} out of range")));
        }
        is_goal[c] = true;
    }
    let restricted: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            if is_goal[v] {
                Vec::new()
            } else {
                successors[v].iter().copied().filter(|&w| !is_goal[w]).collect()
            }
        })
        .collect();
    let cycles = cycles_in(&restricted);
    if let Some(first) = cycles.first() {
        return Err(Error::Cycles {
            count: cycles.len(),
            example: first.clone(),
        });
    }
    // Without cycles, a reverse topological sweep settles every cell.
    let mut live = is_goal.clone();
    for comp in strongly_connected_components(&restricted) {
        let v = comp[0];
        if !is_goal[v] {
            live[v] = !escapes[v] && !successors[v].is_empty() && successors[v].iter().all(|&w| live[w]);
        }
    }
    Ok((0..n).filter(|&v| live[v]).collect())
}

/// Headline numbers for a cell graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub cells: usize,
    pub edges: usize,
    pub self_loops: usize,
    pub cycles: usize,
    pub escaping_cells: usize,
    pub cells_reaching_escape: usize,
    pub timeout_edges: usize,
    pub timeout_escapes: usize,
    pub queries: u64,
}

pub fn summarize_grid(g: &CellGraph) -> GridSummary {
    GridSummary {
        cells: g.cell_count(),
        edges: g.edge_count(),
        self_loops: (0..g.cell_count()).filter(|&i| g.has_self_loop(i)).count(),
        cycles: find_cycles(g).len(),
        escaping_cells: g.escapes.iter().filter(|&&e| e).count(),
        cells_reaching_escape: g.escape_reachable().iter().filter(|&&e| e).count(),
        timeout_edges: g.timeout_edges.len(),
        timeout_escapes: g.timeout_escapes.len(),
        queries: g.queries,
    }
}
