use serde::{Deserialize, Serialize};

use crate::dynamics::LinearPlant;
use crate::error::{invalid, Result};
use crate::netgraph::{compose_closed_loop, Mlp};
use crate::verifier::{output_bounds, Hyperbox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    /// `boxes[i]` encloses every state reachable after `i·k` steps.
    pub boxes: Vec<Hyperbox>,
    pub reached_goal_at: Option<usize>,
    pub left_domain_at: Option<usize>,
}

/// Propagates a start box forward `k` steps at a time with sound output
/// bounds, stopping once the box lies in the goal or leaves the domain.
pub fn forward_tube(
    net: &Mlp,
    plant: &LinearPlant,
    start: &Hyperbox,
    k: usize,
    n_iter: usize,
    domain: &Hyperbox,
    goal: Option<&Hyperbox>,
) -> Result<TubeReport> {
    if k == 0 {
        return Err(invalid("tube needs k ≥ 1"));
    }
    if start.dim() != plant.state_dim() || domain.dim() != plant.state_dim() {
        return Err(invalid("start box, domain and plant dimensions differ"));
    }
    let cl = compose_closed_loop(net, plant, k)?;
    let base = k * plant.state_dim();
    let mut report = TubeReport {
        boxes: vec![start.clone()],
        reached_goal_at: None,
        left_domain_at: None,
    };
    for i in 0..=n_iter {
        let cur = report.boxes.last().unwrap();
        if goal.is_some_and(|g| g.contains_box(cur)) {
            report.reached_goal_at = Some(i);
            break;
        }
        if !domain.contains_box(cur) || cur.lo.iter().chain(&cur.hi).any(|v| !v.is_finite()) {
            report.left_domain_at = Some(i);
            break;
        }
        if i == n_iter {
            break;
        }
        let b = output_bounds(&cl.graph, cur)?;
        report.boxes.push(Hyperbox {
            lo: b.lo[base..].to_vec(),
            hi: b.hi[base..].to_vec(),
        });
    }
    Ok(report)
}
