//! Regenerates `data/desk_controller.json`: a 4→20→20→2 ReLU network fitted
//! to the saturating PD law `u = clamp(-kp·p - kd·v, -1, 1)` per axis.
//!
//! cargo run -p dockver-core --release --example train_desk_controller [out]

use dockver_core::netgraph::{save_network, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KP: f64 = 1.08;
const KD: f64 = 7.2;
const SEED: u64 = 20240611;
const STEPS: usize = 60_000;
const BATCH: usize = 128;

fn target(s: &[f64; 4]) -> [f64; 2] {
    [
        (-KP * s[0] - KD * s[2]).clamp(-1.0, 1.0),
        (-KP * s[1] - KD * s[3]).clamp(-1.0, 1.0),
    ]
}

fn sample(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [
        rng.gen_range(-6.0..6.0),
        rng.gen_range(-6.0..6.0),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
    ]
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_controller.json").to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut net = Mlp::random(&[4, 20, 20, 2], &mut rng).unwrap();
    let n = net.param_count();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2): (f64, f64) = (0.9, 0.999);
    for step in 1..=STEPS {
        let lr = 1e-3 * (1.0 - step as f64 / STEPS as f64).max(0.02);
        let mut grads = net.zero_grads();
        let mut loss = 0.0;
        for _ in 0..BATCH {
            let s = sample(&mut rng);
            let trace = net.forward_trace(&s);
            let y = trace.last().unwrap();
            let t = target(&s);
            let d = [y[0] - t[0], y[1] - t[1]];
            loss += d[0] * d[0] + d[1] * d[1];
            net.backward(&trace, &d, 2.0 / BATCH as f64, &mut grads);
        }
        let mut i = 0;
        let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
        net.for_each_param_mut(&grads, |w, g| {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
            i += 1;
        });
        if step % 10_000 == 0 {
            println!("step {step}: batch mse {:.3e}", loss / BATCH as f64);
        }
    }
    save_network(&net, &out).unwrap();
    println!("wrote {out}");
}
