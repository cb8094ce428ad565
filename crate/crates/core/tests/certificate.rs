mod common;

use common::{grid_points, random_net};
use dockver_core::certificate::*;
use dockver_core::config::RunConfig;
use dockver_core::linalg::Matrix;
use dockver_core::netgraph::{Activation, Layer, Mlp};
use dockver_core::properties::{encode_rwa_condition, RwaCondition, SamplingRegion};
use dockver_core::run::initial_certificate;
use dockver_core::verifier::{check, Budget, Hyperbox, Status};
use dockver_core::{Error, LinearPlant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn budget() -> Budget {
    Budget::branches(200_000)
}

fn constant(c: f64) -> Mlp {
    Mlp::new(2, vec![Layer::new(Matrix::zeros(1, 2), vec![c], Activation::Identity)]).unwrap()
}

/// `slope · |pos|` through two ReLU layers.
fn abs_pos(slope: f64) -> Mlp {
    Mlp::new(
        2,
        vec![
            Layer::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]), vec![0.0; 2], Activation::Relu),
            Layer::new(Matrix::from_rows(&[vec![1.0, 1.0]]), vec![0.0], Activation::Relu),
            Layer::new(Matrix::from_rows(&[vec![slope]]), vec![0.0], Activation::Identity),
        ],
    )
    .unwrap()
}

fn toy_parts() -> (RwaTask, LinearPlant, Mlp) {
    let c = RunConfig::default().certificate;
    (c.task, toy_plant(c.dt).unwrap(), affine_controller(c.kp, c.kd))
}

// 1% critical values of χ² for 99 and 63 degrees of freedom.
const CHI2_99: f64 = 134.642;
const CHI2_63: f64 = 92.010;

fn chi2(counts: &[f64], expected: &[f64]) -> f64 {
    counts.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum()
}

#[test]
fn samples_land_in_their_sets() {
    let task = RwaTask::toy();
    let s = sample_sets(&task, &SampleCounts::default(), 5).unwrap();
    assert!(s.initial.points.iter().all(|x| task.initial.contains(x)));
    assert!(s.free.points.iter().all(|x| task.is_free(x)));
    for x in &s.unsafe_.points {
        let g = task.features_at(x);
        let p = &task.unsafe_region.p;
        let m = &task.unsafe_region.margins;
        assert!(g.iter().zip(p).any(|(g, p)| g > p));
        assert!(g.iter().zip(p).zip(m).all(|((g, p), m)| *g < p + m));
    }
    assert_eq!(s, sample_sets(&task, &SampleCounts::default(), 5).unwrap());
    assert_ne!(s, sample_sets(&task, &SampleCounts::default(), 6).unwrap());
}

#[test]
fn initial_samples_are_uniform() {
    let task = RwaTask::toy();
    let n = 100_000;
    let counts = SampleCounts {
        initial: n,
        free: 1,
        unsafe_: 1,
    };
    let s = sample_sets(&task, &counts, 11).unwrap();
    let bins = task.initial.grid(&[10, 10]).unwrap();
    let mut obs = vec![0.0; bins.len()];
    for x in &s.initial.points {
        let i = bins.iter().position(|b| b.contains(x)).unwrap();
        obs[i] += 1.0;
    }
    let exp = vec![n as f64 / bins.len() as f64; bins.len()];
    let stat = chi2(&obs, &exp);
    assert!(stat < CHI2_99, "chi2 {stat}");
}

#[test]
fn free_samples_are_uniform_on_the_free_set() {
    let task = RwaTask::toy();
    let n = 100_000;
    let counts = SampleCounts {
        initial: 1,
        free: n,
        unsafe_: 1,
    };
    let s = sample_sets(&task, &counts, 12).unwrap();
    let region = task.safe_box();
    let bins = region.grid(&[8, 8]).unwrap();
    let free_area: Vec<f64> = bins.iter().map(|b| b.volume() - b.overlap_volume(&task.goal)).collect();
    let total: f64 = free_area.iter().sum();
    let mut obs = vec![0.0; bins.len()];
    for x in &s.free.points {
        let i = bins.iter().position(|b| b.contains(x)).unwrap();
        obs[i] += 1.0;
    }
    let exp: Vec<f64> = free_area.iter().map(|a| n as f64 * a / total).collect();
    let stat = chi2(&obs, &exp);
    assert!(stat < CHI2_63, "chi2 {stat}");
}

#[test]
fn empty_free_set_is_a_sampling_error() {
    let mut task = RwaTask::toy();
    task.goal = Hyperbox::new(vec![-1.5, -2.0], vec![1.5, 2.0]).unwrap();
    task.initial = Hyperbox::symmetric(&[0.1, 0.1]).unwrap();
    assert!(matches!(
        sample_sets(&task, &SampleCounts::default(), 0),
        Err(Error::Sampling(_))
    ));
}

#[test]
fn task_rejects_overlapping_unsafe_set() {
    let mut task = RwaTask::toy();
    task.initial = Hyperbox::symmetric(&[1.6, 0.2]).unwrap();
    assert!(task.validate().is_err());
    let mut task = RwaTask::toy();
    task.unsafe_region = SamplingRegion::new(vec![0.05, 1.5], vec![0.5, 0.5]).unwrap();
    assert!(task.validate().is_err());
}

#[test]
fn satisfied_batch_has_zero_loss_and_gradient() {
    let (task, plant, ctrl) = toy_parts();
    let v = abs_pos(0.8);
    let sets = SampleSets {
        initial: Batch::unweighted(vec![vec![0.5, 0.2], vec![-0.3, -0.25], vec![0.0, 0.0]]),
        // V ≥ beta here, so the decrease term is inactive.
        free: Batch::unweighted(vec![vec![0.7, 0.0], vec![-1.2, 1.9]]),
        unsafe_: Batch::unweighted(vec![vec![1.6, 0.0], vec![-1.9, -1.0]]),
    };
    let e = rwa_loss(&v, &ctrl, &plant, &task, &sets, &Witness::default(), &LossHyper::default()).unwrap();
    assert_eq!(e.loss, 0.0);
    assert!(e.grads.flat().iter().all(|g| *g == 0.0));
}

#[test]
fn initial_term_hand_example() {
    let (task, plant, ctrl) = toy_parts();
    let w = Witness::default();
    let v = constant(w.beta + 0.1);
    let sets = SampleSets {
        initial: Batch::unweighted(vec![vec![0.1, 0.1]]),
        ..SampleSets::default()
    };
    let e = rwa_loss(&v, &ctrl, &plant, &task, &sets, &w, &LossHyper::default()).unwrap();
    assert!((e.o_s - 0.11).abs() < 1e-12, "{}", e.o_s);
    assert_eq!((e.o_d, e.o_u), (0.0, 0.0));
    assert!((e.loss - 0.11).abs() < 1e-12);
}

fn params(v: &Mlp) -> Vec<f64> {
    let mut out = Vec::new();
    let mut v = v.clone();
    let g = v.zero_grads();
    v.for_each_param_mut(&g, |p, _| out.push(*p));
    out
}

fn with_param(v: &Mlp, i: usize, delta: f64) -> Mlp {
    let mut v = v.clone();
    let g = v.zero_grads();
    let mut k = 0;
    v.for_each_param_mut(&g, |p, _| {
        if k == i {
            *p += delta;
        }
        k += 1;
    });
    v
}

#[test]
fn gradient_matches_finite_differences() {
    let (task, plant, ctrl) = toy_parts();
    let w = Witness::default();
    let h = LossHyper::default();
    let counts = SampleCounts {
        initial: 40,
        free: 200,
        unsafe_: 60,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..5 {
        let sets = sample_sets(&task, &counts, 100 + trial).unwrap();
        let v = Mlp::random(&[2, 8, 8, 1], &mut rng).unwrap();
        let e = rwa_loss(&v, &ctrl, &plant, &task, &sets, &w, &h).unwrap();
        let analytic = e.grads.flat();
        assert_eq!(analytic.len(), params(&v).len());
        let step = 1e-5;
        for (i, a) in analytic.iter().enumerate() {
            let up = rwa_loss(&with_param(&v, i, step), &ctrl, &plant, &task, &sets, &w, &h).unwrap();
            let dn = rwa_loss(&with_param(&v, i, -step), &ctrl, &plant, &task, &sets, &w, &h).unwrap();
            let num = (up.loss - dn.loss) / (2.0 * step);
            // A hinge or ReLU crossed inside the stencil shows up as a
            // one-sided slope mismatch; skip those parameters.
            let fwd = (up.loss - e.loss) / step;
            let bwd = (e.loss - dn.loss) / step;
            if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()).max(1e-3) {
                continue;
            }
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-3);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} parameters checked");
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn masking_ignores_values_inside_unsafe_set() {
    let (task, plant, ctrl) = toy_parts();
    let w = Witness::default();
    let h = LossHyper::default();
    let sets = sample_sets(&task, &SampleCounts::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = Mlp::random(&[2, 16, 16, 1], &mut rng).unwrap();
    // The dent's support is |pos - 1.8| + |vel| < 0.25, strictly unsafe.
    let bent = dent(&v, &[1.8, 0.0], 0.25, 5.0).unwrap();
    for x in grid_points(&task.safe_box(), 41) {
        assert_eq!(v.forward(&x).unwrap(), bent.forward(&x).unwrap());
    }
    let a = rwa_loss(&v, &ctrl, &plant, &task, &sets, &w, &h).unwrap();
    let b = rwa_loss(&bent, &ctrl, &plant, &task, &sets, &w, &h).unwrap();
    assert_eq!(a.o_d, b.o_d);
    assert_eq!(a.o_s, b.o_s);
    assert!(b.o_u > a.o_u);
}

#[test]
fn zero_iterations_leave_network_unchanged() {
    let (task, plant, ctrl) = toy_parts();
    let sets = sample_sets(&task, &SampleCounts::default(), 1).unwrap();
    let v0 = Mlp::random(&[2, 8, 8, 1], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let schedule = Schedule {
        iterations: 0,
        ..Schedule::default()
    };
    let (v, rep) = train(&v0, &ctrl, &plant, &task, &sets, &Witness::default(), &LossHyper::default(), &schedule)
        .unwrap();
    assert_eq!(v, v0);
    assert_eq!(v.to_json().to_string(), v0.to_json().to_string());
    assert_eq!(rep.history.len(), 1);
}

#[test]
fn small_steps_descend() {
    let (task, plant, ctrl) = toy_parts();
    let counts = SampleCounts {
        initial: 50,
        free: 300,
        unsafe_: 100,
    };
    let sets = sample_sets(&task, &counts, 2).unwrap();
    let v0 = Mlp::random(&[2, 8, 8, 1], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let schedule = Schedule {
        iterations: 100,
        warmup: 0,
        step_size: 1e-4,
        optimizer: Optimizer::Sgd,
    };
    let (_, rep) = train(&v0, &ctrl, &plant, &task, &sets, &Witness::default(), &LossHyper::default(), &schedule)
        .unwrap();
    for pair in rep.history.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
    }
    assert!(rep.final_loss < rep.initial_loss);
}

#[test]
fn nan_loss_is_a_divergence_error() {
    let (task, plant, ctrl) = toy_parts();
    let sets = sample_sets(&task, &SampleCounts::default(), 1).unwrap();
    let mut v = Mlp::random(&[2, 4, 1], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    v.layers_mut()[1].bias[0] = f64::NAN;
    let r = train(&v, &ctrl, &plant, &task, &sets, &Witness::default(), &LossHyper::default(), &Schedule::default());
    assert!(matches!(r, Err(Error::Divergence { iteration: 0, .. })));
}

#[test]
fn gamma_of_affine_function() {
    let v = Mlp::new(2, vec![Layer::new(Matrix::from_rows(&[vec![1.0, 1.0]]), vec![0.0], Activation::Identity)])
        .unwrap();
    let unit = Hyperbox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let tol = 1e-3;
    let g = gamma_search(&v, &unit, tol, &budget()).unwrap();
    assert!(g.gamma >= -tol && g.gamma <= 0.0, "{}", g.gamma);
}

#[test]
fn gamma_is_translation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dom = Hyperbox::symmetric(&[1.0, 1.0]).unwrap();
    let tol = 1e-3;
    for _ in 0..10 {
        let v = random_net(&mut rng, &[8, 8]);
        let c = rng.gen_range(-5.0..5.0);
        let mut shifted = v.clone();
        let last = shifted.layers().len() - 1;
        shifted.layers_mut()[last].bias[0] += c;
        let a = gamma_search(&v, &dom, tol, &budget()).unwrap().gamma;
        let b = gamma_search(&shifted, &dom, tol, &budget()).unwrap().gamma;
        assert!((b - (a + c)).abs() <= tol + 1e-9, "{a} + {c} vs {b}");
    }
}

#[test]
fn gamma_matches_grid_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dom = Hyperbox::symmetric(&[1.0, 1.0]).unwrap();
    let tol = 1e-3;
    for _ in 0..20 {
        let v = random_net(&mut rng, &[8, 8]);
        let g = gamma_search(&v, &dom, tol, &budget()).unwrap();
        let grid_min = grid_points(&dom, 401).map(|p| v.forward(&p).unwrap()[0]).fold(f64::INFINITY, f64::min);
        assert!(g.gamma <= grid_min, "{} above grid min {grid_min}", g.gamma);
        // Grid spacing 0.005 with slopes of a few units.
        assert!(grid_min - g.gamma <= tol + 0.05, "{} vs {grid_min}", g.gamma);
        assert!(g.witness_value - g.gamma <= tol);
        let lin = gamma_linear_search(&v, &dom, 10.0, 500, &budget()).unwrap();
        assert!(lin.gamma >= g.gamma - 1e-9 && lin.gamma <= g.gamma + tol + 1e-9, "{} vs {}", lin.gamma, g.gamma);
        assert!(lin.queries >= 1);
    }
}

#[test]
fn gamma_bounds_lower_bound_condition() {
    let (task, plant, ctrl) = toy_parts();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tol = 1e-3;
    for _ in 0..5 {
        let v = random_net(&mut rng, &[8, 8]);
        let g = gamma_search(&v, &task.domain, tol, &budget()).unwrap();
        let at = |gamma: f64| {
            let w = Witness {
                alpha: gamma + 2.0,
                beta: gamma + 1.0,
                gamma,
                epsilon: 1e-3,
            };
            let q = encode_rwa_condition(&v, &ctrl, &plant, RwaCondition::LowerBound, &w, &task.domain, &task).unwrap();
            check(&q, &budget()).unwrap()
        };
        assert_eq!(at(g.gamma).status, Status::Unsat);
        let above = at(g.gamma + 10.0 * tol);
        assert_eq!(above.status, Status::Sat);
        let x = above.counterexample.unwrap();
        assert!(v.forward(&x).unwrap()[0] < g.gamma + 10.0 * tol);
    }
}

#[test]
fn conditions_on_constant_certificates() {
    let (task, plant, ctrl) = toy_parts();
    let w = Witness::default();
    let status = |c: f64, cond: RwaCondition| {
        let q = encode_rwa_condition(&constant(c), &ctrl, &plant, cond, &w, &cond.region(&task), &task).unwrap();
        check(&q, &budget()).unwrap().status
    };
    assert_eq!(status(0.1, RwaCondition::LowerBound), Status::Unsat);
    assert_eq!(status(-0.1, RwaCondition::LowerBound), Status::Sat);
    assert_eq!(status(0.4, RwaCondition::Initial), Status::Unsat);
    assert_eq!(status(0.6, RwaCondition::Initial), Status::Sat);
    assert_eq!(status(1.1, RwaCondition::Unsafe), Status::Unsat);
    assert_eq!(status(0.9, RwaCondition::Unsafe), Status::Sat);
    // A constant never decreases, so every state below beta violates.
    assert_eq!(status(0.3, RwaCondition::Decrease), Status::Sat);
    assert_eq!(status(0.6, RwaCondition::Decrease), Status::Unsat);
}

#[test]
fn initial_condition_agrees_with_grid() {
    let (task, plant, ctrl) = toy_parts();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = Witness::default();
    let mut seen = [0, 0];
    for _ in 0..30 {
        let v = random_net(&mut rng, &[6, 6]);
        let q = encode_rwa_condition(&v, &ctrl, &plant, RwaCondition::Initial, &w, &task.initial, &task).unwrap();
        let r = check(&q, &budget()).unwrap();
        let grid_violation = grid_points(&task.initial, 101).any(|p| v.forward(&p).unwrap()[0] > w.beta);
        match r.status {
            Status::Unsat => {
                assert!(!grid_violation);
                seen[0] += 1;
            }
            Status::Sat => {
                let x = r.counterexample.unwrap();
                assert!(task.initial.contains(&x) && v.forward(&x).unwrap()[0] > w.beta);
                seen[1] += 1;
            }
            Status::Timeout => panic!("timeout"),
        }
    }
    assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
}

#[test]
fn decrease_counterexamples_replay() {
    let (task, plant, ctrl) = toy_parts();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = Witness::default();
    let region = RwaCondition::Decrease.region(&task);
    for _ in 0..10 {
        let v = random_net(&mut rng, &[6, 6]);
        let q = encode_rwa_condition(&v, &ctrl, &plant, RwaCondition::Decrease, &w, &region, &task).unwrap();
        let r = check(&q, &budget()).unwrap();
        if let Some(x) = r.counterexample {
            let u = plant.clamp_control(&ctrl.forward(&x).unwrap());
            let next = plant.apply(&x, &u);
            let (v0, v1) = (v.forward(&x).unwrap()[0], v.forward(&next).unwrap()[0]);
            assert!(!task.goal.contains(&x) || x.iter().zip(&task.goal.hi).any(|(a, b)| a == b));
            assert!(v0 <= w.beta + 1e-9 && v0 - v1 < w.epsilon + 1e-9);
        }
    }
}

#[test]
fn partitions_must_tile() {
    let region = Hyperbox::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
    let good = region.grid(&[2, 1]).unwrap();
    assert!(check_tiling(&region, &good).is_ok());
    let gap = vec![good[0].clone()];
    assert!(check_tiling(&region, &gap).is_err());
    let overlap = vec![good[0].clone(), good[0].clone(), good[1].clone()];
    assert!(check_tiling(&region, &overlap).is_err());
    let outside = vec![Hyperbox::new(vec![-1.0, 0.0], vec![2.0, 1.0]).unwrap()];
    assert!(check_tiling(&region, &outside).is_err());

    let (task, plant, ctrl) = toy_parts();
    let parts = vec![(RwaCondition::Initial, gap)];
    let r = verify_certificate(&constant(0.0), &ctrl, &plant, &task, &Witness::default(), &parts, &budget());
    assert!(r.is_err());
}

#[test]
fn dent_subtracts_a_bump() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let v = random_net(&mut rng, &[5, 5, 5]);
    let d = dent(&v, &[0.2, -0.1], 0.3, 2.0).unwrap();
    for _ in 0..500 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let l1 = (x[0] - 0.2_f64).abs() + (x[1] + 0.1_f64).abs();
        let bump = 2.0 * (1.0 - l1 / 0.3).max(0.0);
        let diff = v.forward(&x).unwrap()[0] - d.forward(&x).unwrap()[0];
        assert!((diff - bump).abs() < 1e-12);
    }
    assert!(dent(&constant(0.0), &[0.0, 0.0], 0.3, 1.0).is_err());
}

#[test]
fn sabotaged_certificate_violates_unsafe_condition() {
    let (task, plant, ctrl) = toy_parts();
    let w = Witness::default();
    let v = abs_pos(0.8);
    let cells = RwaCondition::Unsafe.region(&task).grid(&[2, 2]).unwrap();
    let good = verify_certificate(&v, &ctrl, &plant, &task, &w, &[(RwaCondition::Unsafe, cells.clone())], &budget())
        .unwrap();
    assert_eq!(good.overall, Overall::Pass);
    let bad = dent(&v, &[1.75, 0.5], 0.2, 1.0).unwrap();
    let r = verify_certificate(&bad, &ctrl, &plant, &task, &w, &[(RwaCondition::Unsafe, cells)], &budget()).unwrap();
    assert_eq!(r.overall, Overall::Fail);
    let cex = r.counterexamples();
    assert!(!cex.is_empty());
    for (cond, x) in cex {
        assert_eq!(cond, RwaCondition::Unsafe);
        assert!(task.in_sampled_unsafe(&x) || task.is_unsafe(&x));
        assert!(bad.forward(&x).unwrap()[0] < w.alpha);
    }
}

#[test]
fn retrain_contract() {
    let (task, plant, ctrl) = toy_parts();
    let sets = sample_sets(&task, &SampleCounts::default(), 0).unwrap();
    let settings = RetrainSettings {
        schedule: Schedule {
            iterations: 20,
            ..Schedule::default()
        },
        partitions: PartitionPlan::uniform(2, 2),
        gamma_tol: 1e-3,
        budget: budget(),
    };
    let w = Witness::default();
    let h = LossHyper::default();
    assert!(retrain_loop(&constant(0.0), &ctrl, &plant, &task, &w, &h, &sets, &settings, 0).is_err());
    let v = Mlp::random(&[2, 8, 8, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let r = retrain_loop(&v, &ctrl, &plant, &task, &w, &h, &sets, &settings, 2).unwrap();
    assert!(r.history.len() <= 2 && r.rounds <= 2);
    assert!(matches!(r.status, RetrainStatus::Pass | RetrainStatus::Exhausted));
}

#[test]
fn untrained_certificate_violations_are_reported() {
    let (task, plant, ctrl) = toy_parts();
    let v = Mlp::random(&[2, 8, 8, 1], &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let w = Witness {
        alpha: 10.0,
        beta: 5.0,
        gamma: -10.0,
        epsilon: 1e-3,
    };
    let r = check_lemma1(&v, &ctrl, &plant, &task, &w, 200, 50, 1).unwrap();
    assert!(r.rollouts <= 200);
    assert_eq!(r.reached + r.violations.len(), r.rollouts);
    // A controller that pushes away leaves the domain from everywhere.
    let away = affine_controller(-1.0, -1.0);
    let r = check_lemma1(&v, &away, &plant, &task, &w, 100, 50, 1).unwrap();
    assert_eq!(r.violations.len(), r.rollouts);
}

/// Train, bound, verify and simulate the toy task, then check retraining
/// on an already-passing and on a dented certificate.
#[test]
fn toy_pipeline_end_to_end() {
    let cfg = RunConfig::default();
    let c = &cfg.certificate;
    let (task, plant, ctrl) = toy_parts();
    let sets = sample_sets(&task, &c.counts, cfg.seed).unwrap();
    let v0 = initial_certificate(&cfg).unwrap();
    let (v, tr) = train(&v0, &ctrl, &plant, &task, &sets, &c.witness, &c.hyper, &c.schedule).unwrap();
    assert!(tr.final_loss < 0.01 * tr.initial_loss, "{} vs {}", tr.final_loss, tr.initial_loss);

    let g = gamma_search(&v, &task.domain, c.gamma_tol, &c.budget).unwrap();
    let mut w = c.witness;
    w.gamma = g.gamma.min(w.beta);
    let parts = c.partitions.cells(&task).unwrap();
    let r = verify_certificate(&v, &ctrl, &plant, &task, &w, &parts, &c.budget).unwrap();
    assert_eq!(r.overall, Overall::Pass, "{:?}", r.counterexamples());
    assert_eq!(r.conditions.len(), 5);

    let l = check_lemma1(&v, &ctrl, &plant, &task, &w, 1000, c.lemma1_horizon, 1).unwrap();
    assert_eq!(l.rollouts, 1000);
    assert!(l.violations.is_empty(), "{:?}", &l.violations[..l.violations.len().min(3)]);

    let settings = RetrainSettings {
        schedule: c.retrain_schedule,
        partitions: c.partitions.clone(),
        gamma_tol: c.gamma_tol,
        budget: c.budget,
    };
    let again = retrain_loop(&v, &ctrl, &plant, &task, &c.witness, &c.hyper, &sets, &settings, 3).unwrap();
    assert_eq!((again.status, again.rounds), (RetrainStatus::Pass, 1));
    assert_eq!(again.v, v);

    let bad = dent(&v, &[1.75, 0.0], 0.2, 1.0).unwrap();
    let fixed = retrain_loop(&bad, &ctrl, &plant, &task, &c.witness, &c.hyper, &sets, &settings, 10).unwrap();
    assert_eq!(fixed.status, RetrainStatus::Pass, "{:?}", fixed.history);
    assert!(fixed.history[0].counterexamples > 0);
}
