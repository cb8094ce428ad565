use crate::dynamics::LinearPlant;
use crate::error::{Error, Result};

use super::graph::{GraphBuilder, NodeId, PwlGraph, Scalar};
use super::mlp::Mlp;

/// A k-step unrolling of controller plus plant.
///
/// The graph input is the initial state `s₀`; the outputs are the
/// concatenated states `s₀, s₁, …, s_k` with
/// `s_{t+1} = A·s_t + B·clamp(net(s_t), -f_max, f_max)`.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub graph: PwlGraph,
    /// Node holding `s_t`, for `t = 0..=k`.
    pub states: Vec<NodeId>,
    /// Node holding the clamped control applied at step `t`.
    pub controls: Vec<NodeId>,
}

impl ClosedLoop {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.graph.input_dim()
    }

    pub fn state(&self, t: usize) -> Vec<Scalar> {
        (0..self.state_dim()).map(|i| Scalar::new(self.states[t], i)).collect()
    }

    /// A builder positioned after the unrolling, for attaching property
    /// gadgets.
    pub fn builder(&self) -> GraphBuilder {
        GraphBuilder::extend(&self.graph)
    }
}

pub fn compose_closed_loop(net: &Mlp, plant: &LinearPlant, k: usize) -> Result<ClosedLoop> {
    let n = plant.state_dim();
    if net.input_dim() != n || net.output_dim() != plant.control_dim() {
        return Err(Error::Schema(format!(
            "controller is {}->{}, plant needs {}->{}",
            net.input_dim(),
            net.output_dim(),
            n,
            plant.control_dim()
        )));
    }
    let mut b = GraphBuilder::new(n);
    let s0 = b.input(0, n)?;
    let mut states = vec![s0];
    let mut controls = Vec::with_capacity(k);
    let ab = plant.a.hconcat(&plant.b);
    for _ in 0..k {
        let s = *states.last().unwrap();
        let raw = b.mlp(net, s)?;
        let u = b.clamp_gadget(raw, -plant.f_max, plant.f_max)?;
        let next = b.affine(&[s, u], ab.clone(), vec![0.0; n])?;
        controls.push(u);
        states.push(next);
    }
    let outputs = states.iter().flat_map(|&s| b.components(s)).collect();
    Ok(ClosedLoop {
        graph: b.finish(outputs)?,
        states,
        controls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{affine_transition, step_closed_form, Control, DynParams, State};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Mlp, LinearPlant, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = Mlp::random(&[4, 20, 20, 2], &mut rng).unwrap();
        let plant = affine_transition(&DynParams::default(), 1.0).unwrap();
        (net, plant, rng)
    }

    #[test]
    fn zero_steps_is_identity() {
        let (net, plant, _) = setup();
        let cl = compose_closed_loop(&net, &plant, 0).unwrap();
        let x = [1.0, -2.0, 0.1, 0.3];
        assert_eq!(cl.graph.eval(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn one_step_matches_dynamics() {
        let (net, plant, mut rng) = setup();
        let p = DynParams::default();
        let cl = compose_closed_loop(&net, &plant, 1).unwrap();
        for _ in 0..1000 {
            let s = State::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            );
            let u = net.forward(&s.to_array()).unwrap();
            let u = Control::new(u[0], u[1]).clamped(1.0);
            let expect = step_closed_form(&s, &u, &p).unwrap().to_array();
            let got = cl.graph.eval(&s.to_array()).unwrap();
            for (a, b) in got[4..].iter().zip(expect) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn node_count_grows_linearly() {
        let (net, plant, _) = setup();
        let base = compose_closed_loop(&net, &plant, 0).unwrap().graph.node_count();
        let one = compose_closed_loop(&net, &plant, 1).unwrap().graph.node_count();
        let three = compose_closed_loop(&net, &plant, 3).unwrap();
        // Per step: 3 affine + 2 relu for the controller, 5 for the clamp,
        // 1 for the plant.
        assert_eq!(one - base, 11);
        assert_eq!(three.graph.node_count(), base + 3 * 11);
        assert_eq!(three.graph.relu_count(), 3 * (net.relu_count() + 4));
    }

    #[test]
    fn rejects_mismatched_controller() {
        let (_, plant, mut rng) = setup();
        let net = Mlp::random(&[3, 5, 2], &mut rng).unwrap();
        assert!(matches!(compose_closed_loop(&net, &plant, 2), Err(Error::Schema(_))));
    }
}
