//! Piecewise-linear computation graphs.
//!
//! Every node produces a vector. Nodes are stored in topological order and
//! may only reference earlier nodes, so a graph is acyclic by construction.
//! Scalar values of all nodes live in one flat buffer; [`Scalar`] addresses
//! a single component.

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

use super::mlp::{Activation, Mlp};

pub type NodeId = usize;

/// One component of a node's output vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub node: NodeId,
    pub index: usize,
}

impl Scalar {
    pub fn new(node: NodeId, index: usize) -> Self {
        Self { node, index }
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    /// Slice `[start, start + len)` of the graph input vector.
    Input { start: usize, len: usize },
    /// `W · concat(inputs) + b`.
    Affine {
        inputs: Vec<NodeId>,
        weights: Matrix,
        bias: Vec<f64>,
    },
    Relu { input: NodeId },
    Clamp { input: NodeId, lo: f64, hi: f64 },
}

/// Sparse row of an affine node: flat source index and weight.
pub(crate) type Row = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub dim: usize,
    /// Position of this node's first component in the flat value buffer.
    pub offset: usize,
    pub(crate) rows: Vec<Row>,
    /// Upper bound on every component that holds by construction.
    pub(crate) cap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PwlGraph {
    input_dim: usize,
    nodes: Vec<Node>,
    outputs: Vec<Scalar>,
    n_scalars: usize,
}

impl PwlGraph {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn outputs(&self) -> &[Scalar] {
        &self.outputs
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn scalar_count(&self) -> usize {
        self.n_scalars
    }

    pub fn flat_index(&self, s: Scalar) -> usize {
        self.nodes[s.node].offset + s.index
    }

    pub fn relu_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu { .. }))
            .map(|n| n.dim)
            .sum()
    }

    /// Same graph with a different output list.
    pub fn with_outputs(&self, outputs: Vec<Scalar>) -> Result<Self> {
        for s in &outputs {
            self.check_scalar(*s)?;
        }
        Ok(Self {
            outputs,
            ..self.clone()
        })
    }

    fn check_scalar(&self, s: Scalar) -> Result<()> {
        match self.nodes.get(s.node) {
            Some(n) if s.index < n.dim => Ok(()),
            _ => Err(invalid(format!("scalar {s:?} does not exist"))),
        }
    }

    /// Values of every node component for `input`.
    pub fn eval_all(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(invalid(format!(
                "graph expects {} inputs, got {}",
                self.input_dim,
                input.len()
            )));
        }
        let mut vals = vec![0.0; self.n_scalars];
        self.eval_into(input, &mut vals);
        Ok(vals)
    }

    pub(crate) fn eval_into(&self, input: &[f64], vals: &mut [f64]) {
        for node in &self.nodes {
            let off = node.offset;
            match &node.op {
                Op::Input { start, len } => {
                    vals[off..off + len].copy_from_slice(&input[*start..start + len]);
                }
                Op::Affine { bias, .. } => {
                    for (r, row) in node.rows.iter().enumerate() {
                        let mut acc = 0.0;
                        for &(src, w) in row {
                            acc += w * vals[src];
                        }
                        vals[off + r] = acc + bias[r];
                    }
                }
                Op::Relu { input } => {
                    let src = self.nodes[*input].offset;
                    for i in 0..node.dim {
                        vals[off + i] = vals[src + i].max(0.0);
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    let src = self.nodes[*input].offset;
                    for i in 0..node.dim {
                        vals[off + i] = vals[src + i].clamp(*lo, *hi);
                    }
                }
            }
        }
    }

    /// Output vector for `input`.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        let vals = self.eval_all(input)?;
        Ok(self.outputs.iter().map(|s| vals[self.flat_index(*s)]).collect())
    }

    /// Graph computing `net` on the whole input vector.
    pub fn from_mlp(net: &Mlp) -> Result<Self> {
        let mut b = GraphBuilder::new(net.input_dim());
        let x = b.input(0, net.input_dim())?;
        let y = b.mlp(net, x)?;
        let outputs = b.components(y);
        b.finish(outputs)
    }
}

/// Incremental construction of a [`PwlGraph`], including the abs/max
/// gadgets used to express norms and clamps with ReLUs only.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    input_dim: usize,
    nodes: Vec<Node>,
    n_scalars: usize,
}

impl GraphBuilder {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            nodes: Vec::new(),
            n_scalars: 0,
        }
    }

    /// Starts from an existing graph so more nodes can be appended.
    pub fn extend(graph: &PwlGraph) -> Self {
        Self {
            input_dim: graph.input_dim,
            nodes: graph.nodes.clone(),
            n_scalars: graph.n_scalars,
        }
    }

    fn push(&mut self, op: Op, dim: usize, rows: Vec<Row>) -> NodeId {
        let offset = self.n_scalars;
        self.n_scalars += dim;
        self.nodes.push(Node {
            op,
            dim,
            offset,
            rows,
            cap: None,
        });
        self.nodes.len() - 1
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| invalid(format!("node {id} does not exist yet")))
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.nodes[id].dim
    }

    pub fn components(&self, id: NodeId) -> Vec<Scalar> {
        (0..self.nodes[id].dim).map(|i| Scalar::new(id, i)).collect()
    }

    pub fn input(&mut self, start: usize, len: usize) -> Result<NodeId> {
        if len == 0 || start + len > self.input_dim {
            return Err(invalid(format!(
                "input slice {start}..{} outside 0..{}",
                start + len,
                self.input_dim
            )));
        }
        Ok(self.push(Op::Input { start, len }, len, Vec::new()))
    }

    pub fn affine(&mut self, inputs: &[NodeId], weights: Matrix, bias: Vec<f64>) -> Result<NodeId> {
        let mut cols = Vec::new();
        for &id in inputs {
            let n = self.node(id)?;
            cols.extend(n.offset..n.offset + n.dim);
        }
        if weights.cols() != cols.len() || weights.rows() != bias.len() {
            return Err(Error::Schema(format!(
                "affine node: weights {}x{}, bias {}, inputs provide {} values",
                weights.rows(),
                weights.cols(),
                bias.len(),
                cols.len()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(invalid("affine node constants must be finite"));
        }
        let rows = (0..weights.rows())
            .map(|r| {
                weights
                    .row(r)
                    .iter()
                    .zip(&cols)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(w, c)| (*c, *w))
                    .collect()
            })
            .collect();
        let dim = weights.rows();
        Ok(self.push(
            Op::Affine {
                inputs: inputs.to_vec(),
                weights,
                bias,
            },
            dim,
            rows,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let dim = self.node(input)?.dim;
        Ok(self.push(Op::Relu { input }, dim, Vec::new()))
    }

    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("bad clamp range [{lo}, {hi}]")));
        }
        let dim = self.node(input)?.dim;
        Ok(self.push(Op::Clamp { input, lo, hi }, dim, Vec::new()))
    }

    /// Scalar node `Σ wᵢ·sᵢ + bias`.
    pub fn linear(&mut self, terms: &[(Scalar, f64)], bias: f64) -> Result<NodeId> {
        self.linear_rows(&[terms.to_vec()], &[bias])
    }

    /// Gathers scalars into one vector node.
    pub fn stack(&mut self, scalars: &[Scalar]) -> Result<NodeId> {
        let rows: Vec<Vec<(Scalar, f64)>> = scalars.iter().map(|s| vec![(*s, 1.0)]).collect();
        self.linear_rows(&rows, &vec![0.0; scalars.len()])
    }

    /// Vector node whose row `r` is `Σ rows[r] + bias[r]`.
    pub fn linear_rows(&mut self, rows: &[Vec<(Scalar, f64)>], bias: &[f64]) -> Result<NodeId> {
        let mut inputs: Vec<NodeId> = Vec::new();
        for (s, _) in rows.iter().flatten() {
            if s.index >= self.node(s.node)?.dim {
                return Err(invalid(format!("scalar {s:?} does not exist")));
            }
            if !inputs.contains(&s.node) {
                inputs.push(s.node);
            }
        }
        let mut base = Vec::with_capacity(inputs.len());
        let mut acc = 0;
        for &id in &inputs {
            base.push(acc);
            acc += self.nodes[id].dim;
        }
        let mut w = Matrix::zeros(rows.len(), acc);
        for (r, row) in rows.iter().enumerate() {
            for (s, coef) in row {
                let k = inputs.iter().position(|id| *id == s.node).unwrap();
                w[(r, base[k] + s.index)] += coef;
            }
        }
        self.affine(&inputs, w, bias.to_vec())
    }

    /// Appends `net` applied to node `input`; returns the output node.
    pub fn mlp(&mut self, net: &Mlp, input: NodeId) -> Result<NodeId> {
        if self.node(input)?.dim != net.input_dim() {
            return Err(Error::Schema(format!(
                "network expects {} inputs, node provides {}",
                net.input_dim(),
                self.nodes[input].dim
            )));
        }
        let mut cur = input;
        for layer in net.layers() {
            cur = self.affine(&[cur], layer.weights.clone(), layer.bias.clone())?;
            if layer.activation == Activation::Relu {
                cur = self.relu(cur)?;
            }
        }
        Ok(cur)
    }

    /// Elementwise `|v| = relu(v) + relu(-v)`.
    pub fn abs(&mut self, input: NodeId) -> Result<NodeId> {
        let d = self.node(input)?.dim;
        let split = Matrix::from_fn(2 * d, d, |r, c| {
            if r == c {
                1.0
            } else if r == c + d {
                -1.0
            } else {
                0.0
            }
        });
        let pre = self.affine(&[input], split, vec![0.0; 2 * d])?;
        let r = self.relu(pre)?;
        let sum = Matrix::from_fn(d, 2 * d, |r, c| if c == r || c == r + d { 1.0 } else { 0.0 });
        self.affine(&[r], sum, vec![0.0; d])
    }

    /// `max(a, b) = a + relu(b - a)`, folded left over `items`.
    pub fn max(&mut self, items: &[Scalar]) -> Result<Scalar> {
        let (first, rest) = items
            .split_first()
            .ok_or_else(|| invalid("max of an empty list"))?;
        let mut acc = *first;
        for &b in rest {
            let diff = self.linear(&[(b, 1.0), (acc, -1.0)], 0.0)?;
            let r = self.relu(diff)?;
            let m = self.linear(&[(acc, 1.0), (Scalar::new(r, 0), 1.0)], 0.0)?;
            acc = Scalar::new(m, 0);
        }
        Ok(acc)
    }

    /// Elementwise `min(max(v, lo), hi)` built from the min/max gadgets:
    /// `min(v, hi) = v - relu(v - hi)` then `max(w, lo) = lo + relu(w - lo)`.
    pub fn clamp_gadget(&mut self, input: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo <= hi) {
            return Err(invalid(format!("bad clamp range [{lo}, {hi}]")));
        }
        let d = self.node(input)?.dim;
        let over = self.affine(&[input], Matrix::identity(d), vec![-hi; d])?;
        let over = self.relu(over)?;
        let id_neg = Matrix::identity(d).hconcat(&Matrix::identity(d).scaled(-1.0));
        let lifted = self.affine(&[input, over], id_neg, vec![-lo; d])?;
        // min(x, hi) - lo never exceeds hi - lo; bounds cannot see that.
        self.nodes[lifted].cap = Some((hi - lo).next_up());
        let lifted = self.relu(lifted)?;
        self.affine(&[lifted], Matrix::identity(d), vec![lo; d])
    }

    pub fn finish(self, outputs: Vec<Scalar>) -> Result<PwlGraph> {
        let g = PwlGraph {
            input_dim: self.input_dim,
            nodes: self.nodes,
            outputs: Vec::new(),
            n_scalars: self.n_scalars,
        };
        g.with_outputs(outputs)
    }
}
