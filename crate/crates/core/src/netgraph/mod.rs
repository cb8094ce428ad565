//! Networks, piecewise-linear graphs and closed-loop unrolling.

mod closed_loop;
mod graph;
mod mlp;

pub use closed_loop::{compose_closed_loop, ClosedLoop};
pub use graph::{GraphBuilder, Node, NodeId, Op, PwlGraph, Scalar};
pub use mlp::{load_network, save_network, Activation, Layer, LayerGrads, Mlp, MlpGrads};
