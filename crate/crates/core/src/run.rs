//! One function per command: configuration in, [`Report`] out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::certificate::{
    affine_controller, check_lemma1, dent, gamma_linear_search, gamma_search, retrain_loop, sample_sets, toy_plant,
    train, CertReport, Overall, RetrainSettings, RetrainStatus,
};
use crate::config::RunConfig;
use crate::dynamics::{affine_transition, State};
use crate::error::{invalid, Error, Result};
use crate::kinduction::{drive, empirical_check, RegionStatus};
use crate::netgraph::Mlp;
use crate::reachability::{
    build_cell_graph, calibrate_cell_size, cells_inside, find_cycles, forward_tube, liveness_cells, summarize_grid,
};
use crate::report::{fmt_f64, fmt_opt, Outcome, Report, Table};
use crate::simulation::{compare_polar, reward_distance, rollout};
use crate::verifier::Hyperbox;

pub const COMMANDS: [&str; 9] = [
    "simulate",
    "kinduct",
    "kinduct-empirical",
    "gridreach",
    "tube",
    "cert-train",
    "cert-verify",
    "cert-retrain",
    "gamma",
];

pub fn run_command(name: &str, cfg: &RunConfig) -> Result<Report> {
    match name {
        "simulate" => simulate(cfg),
        "kinduct" => kinduct(cfg),
        "kinduct-empirical" => kinduct_empirical(cfg),
        "gridreach" => gridreach(cfg),
        "tube" => tube(cfg),
        "cert-train" => cert_train(cfg),
        "cert-verify" => cert_verify(cfg),
        "cert-retrain" => cert_retrain(cfg),
        "gamma" => gamma(cfg),
        _ => Err(invalid(format!("unknown command {name:?}"))),
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Schema(e.to_string()))
}

fn box_cells(b: &Hyperbox) -> Vec<String> {
    b.lo.iter().chain(&b.hi).map(|v| fmt_f64(*v)).collect()
}

fn box_header(prefix: &[&str], n: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((0..n).map(|d| format!("lo{d}")));
    h.extend((0..n).map(|d| format!("hi{d}")));
    h
}

fn table_with(name: &str, header: Vec<String>) -> Table {
    Table {
        name: name.into(),
        header,
        rows: Vec::new(),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Report> {
    let net = cfg.load_controller()?;
    let s = &cfg.simulate;
    let s0 = State::from_slice(&s.start)?;
    let t = rollout(&net, &cfg.dynamics, cfg.f_max, s0, s.steps, Some(&cfg.goal))?;
    let replay = t.replay_error(&cfg.dynamics)?;
    let mut traj = Table::new("trajectory", &["t", "x", "y", "vx", "vy", "fx", "fy", "safe", "reward"]);
    let mut unsafe_steps = Vec::new();
    let mut total_reward = 0.0;
    for (i, st) in t.states.iter().enumerate() {
        let safe = cfg.safety.is_safe(st);
        if !safe {
            unsafe_steps.push(i);
        }
        let r = if i == 0 { 0.0 } else { reward_distance(&t.states[i - 1], st) };
        total_reward += r;
        let u = t.controls.get(i);
        traj.push(vec![
            i.to_string(),
            fmt_f64(st.x),
            fmt_f64(st.y),
            fmt_f64(st.vx),
            fmt_f64(st.vy),
            fmt_opt(u.map(|u| u.fx)),
            fmt_opt(u.map(|u| u.fy)),
            safe.to_string(),
            fmt_f64(r),
        ]);
    }
    let reached = t.last().is_some_and(|l| cfg.goal.contains(l));
    let mut result = json!({
        "steps": t.len() - 1,
        "reached_goal": reached,
        "unsafe_steps": unsafe_steps,
        "total_reward": total_reward,
        "replay_error": replay,
        "final_state": t.last(),
    });
    let mut tables = vec![traj];
    if s.polar {
        let pc = compare_polar(&net, &cfg.dynamics, cfg.f_max, s0, s.steps)?;
        let mut pt = Table::new("polar", &["t", "r", "theta", "rdot", "thetadot", "divergence"]);
        for (i, (p, d)) in pc.polar.iter().zip(&pc.divergence).enumerate() {
            pt.push(vec![
                i.to_string(),
                fmt_f64(p.r),
                fmt_f64(p.theta),
                fmt_f64(p.rdot),
                fmt_f64(p.thetadot),
                fmt_f64(*d),
            ]);
        }
        result["polar_max_divergence"] = json!(pc.max_divergence);
        tables.push(pt);
    }
    let outcome = if !unsafe_steps.is_empty() {
        Outcome::Fail
    } else if reached {
        Outcome::Pass
    } else {
        Outcome::Inconclusive
    };
    let mut rep = Report::new("simulate", cfg.seed, outcome, result);
    rep.tables = tables;
    Ok(rep)
}

pub fn kinduct(cfg: &RunConfig) -> Result<Report> {
    let net = cfg.load_controller()?;
    let k = &cfg.kinduction;
    let report = drive(&k.domain, (k.grid[0], k.grid[1]), &net, &cfg.dynamics, &k.params)?;
    let mut regions = table_with("regions", box_header(&["id", "status", "k", "branches", "wall_time_s"], 4));
    let mut replay_errors = Vec::new();
    for r in &report.regions {
        let (status, kk) = match &r.result {
            RegionStatus::Unsat { k } => ("UNSAT", *k),
            RegionStatus::Sat { k, trace, .. } => {
                replay_errors.push(json!({"id": r.id, "replay_error": trace.replay_error(&cfg.dynamics)?}));
                ("SAT", *k)
            }
            RegionStatus::Timeout { k } => ("TIMEOUT", *k),
        };
        let mut row = vec![
            r.id.clone(),
            status.into(),
            kk.to_string(),
            r.per_k.iter().map(|s| s.branches).sum::<u64>().to_string(),
            fmt_f64(r.wall_time_s()),
        ];
        row.extend(box_cells(&r.bx));
        regions.push(row);
    }
    let outcome = if report.summary.sat > 0 {
        Outcome::Fail
    } else if report.all_unsat() {
        Outcome::Pass
    } else {
        Outcome::Inconclusive
    };
    let freq = report.k_frequencies();
    let mut rep = Report::new(
        "kinduct",
        cfg.seed,
        outcome,
        json!({
            "summary": report.summary,
            "k_frequencies": freq,
            "counterexample_replay": replay_errors,
            "regions": report.regions,
        }),
    );
    rep.tables = vec![regions, Table::k_frequency("k_frequency", &freq)];
    Ok(rep)
}

pub fn kinduct_empirical(cfg: &RunConfig) -> Result<Report> {
    let net = cfg.load_controller()?;
    let k = &cfg.kinduction;
    let e = empirical_check(&net, &cfg.dynamics, &k.domain, &k.params, k.empirical_samples, cfg.seed)?;
    let mut viol = Table::new("violations", &["x", "y", "vx", "vy"]);
    for s in &e.violations {
        viol.push(s.to_array().iter().map(|v| fmt_f64(*v)).collect());
    }
    let outcome = if e.violations.is_empty() {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    let mut rep = Report::new("kinduct-empirical", cfg.seed, outcome, to_value(&e));
    rep.tables = vec![Table::k_frequency("k_frequency", &e.k_frequencies), viol];
    Ok(rep)
}

pub fn gridreach(cfg: &RunConfig) -> Result<Report> {
    let net = cfg.load_controller()?;
    let g = &cfg.grid;
    let plant = affine_transition(&cfg.dynamics, cfg.f_max)?;
    let spec = calibrate_cell_size(&net, &plant, &g.domain, g.k, g.tol, &g.calibration)?;
    let graph = build_cell_graph(&net, &plant, &spec, g.k, &g.calibration.budget)?;
    let summary = summarize_grid(&graph);
    let cycles = find_cycles(&graph);
    let goal_cells = cells_inside(&spec, &g.goal);
    let (live, liveness_error) = match liveness_cells(&graph, &goal_cells) {
        Ok(l) => (Some(l), None),
        Err(e @ Error::Cycles { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let all_escape = summary.cells_reaching_escape == summary.cells;
    let outcome = if summary.timeout_edges + summary.timeout_escapes > 0 {
        Outcome::Inconclusive
    } else if live.as_ref().is_some_and(|l| l.len() == spec.cell_count()) {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    let mut cyc = Table::new("cycles", &["cycle", "position", "cell"]);
    for (i, c) in cycles.iter().enumerate() {
        for (j, v) in c.iter().enumerate() {
            cyc.push(vec![i.to_string(), j.to_string(), v.to_string()]);
        }
    }
    let mut rep = Report::new(
        "gridreach",
        cfg.seed,
        outcome,
        json!({
            "counts": spec.counts(),
            "edges_per_dim": spec.edges,
            "summary": summary,
            "all_cells_reach_escape": all_escape,
            "cycles": cycles.len(),
            "goal_cells": goal_cells.len(),
            "live_cells": live.as_ref().map(Vec::len),
            "liveness_error": liveness_error,
        }),
    );
    rep.tables = vec![cyc];
    rep.artifacts = vec![
        ("graph.json".into(), serde_json::to_string(&graph)?),
        ("cells.csv".into(), csv_string(|b| graph.write_cells_csv(b))?),
        ("edges.csv".into(), csv_string(|b| graph.write_edges_csv(b))?),
    ];
    Ok(rep)
}

pub fn tube(cfg: &RunConfig) -> Result<Report> {
    let net = cfg.load_controller()?;
    let t = &cfg.tube;
    let plant = affine_transition(&cfg.dynamics, cfg.f_max)?;
    let h = cfg.goal.half_side;
    let goal = Hyperbox::new(
        vec![-h, -h, t.domain.lo[2], t.domain.lo[3]],
        vec![h, h, t.domain.hi[2], t.domain.hi[3]],
    )?;
    let r = forward_tube(&net, &plant, &t.start, t.k, t.iterations, &t.domain, Some(&goal))?;
    let mut boxes = table_with("tube", box_header(&["step"], 4));
    for (i, b) in r.boxes.iter().enumerate() {
        let mut row = vec![(i * t.k).to_string()];
        row.extend(box_cells(b));
        boxes.push(row);
    }
    let outcome = if r.reached_goal_at.is_some() {
        Outcome::Pass
    } else if r.left_domain_at.is_some() {
        Outcome::Fail
    } else {
        Outcome::Inconclusive
    };
    let mut rep = Report::new("tube", cfg.seed, outcome, to_value(&r));
    rep.tables = vec![boxes];
    Ok(rep)
}

struct Toy {
    controller: Mlp,
    plant: crate::dynamics::LinearPlant,
}

fn toy(cfg: &RunConfig) -> Result<Toy> {
    let c = &cfg.certificate;
    Ok(Toy {
        controller: affine_controller(c.kp, c.kd),
        plant: toy_plant(c.dt)?,
    })
}

/// Initial certificate network, seeded from the run seed.
pub fn initial_certificate(cfg: &RunConfig) -> Result<Mlp> {
    let c = &cfg.certificate;
    let mut sizes = vec![c.task.dim()];
    sizes.extend(&c.hidden);
    sizes.push(1);
    Mlp::random(&sizes, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

fn trained(cfg: &RunConfig, t: &Toy) -> Result<(Mlp, crate::certificate::TrainReport)> {
    let c = &cfg.certificate;
    let sets = sample_sets(&c.task, &c.counts, cfg.seed)?;
    let v0 = initial_certificate(cfg)?;
    train(&v0, &t.controller, &t.plant, &c.task, &sets, &c.witness, &c.hyper, &c.schedule)
}

/// The configured certificate, or a freshly trained one.
fn certificate(cfg: &RunConfig, t: &Toy) -> Result<Mlp> {
    match &cfg.certificate.certificate {
        Some(p) => crate::netgraph::load_network(p),
        None => Ok(trained(cfg, t)?.0),
    }
}

fn weights_json(v: &Mlp) -> Result<String> {
    Ok(serde_json::to_string_pretty(&v.to_json())?)
}

pub fn cert_train(cfg: &RunConfig) -> Result<Report> {
    let t = toy(cfg)?;
    let (v, tr) = trained(cfg, &t)?;
    let ratio = if tr.initial_loss > 0.0 {
        tr.final_loss / tr.initial_loss
    } else {
        0.0
    };
    let outcome = if ratio < 0.01 {
        Outcome::Pass
    } else {
        Outcome::Inconclusive
    };
    let mut hist = Table::new("loss_history", &["iteration", "loss"]);
    for (i, l) in tr.history.iter().enumerate() {
        hist.push(vec![i.to_string(), fmt_f64(*l)]);
    }
    let mut rep = Report::new(
        "cert-train",
        cfg.seed,
        outcome,
        json!({
            "initial_loss": tr.initial_loss,
            "final_loss": tr.final_loss,
            "loss_ratio": ratio,
            "iterations_run": tr.history.len() - 1,
            "warmup": tr.warmup,
        }),
    );
    rep.tables = vec![hist];
    rep.artifacts = vec![("certificate.json".into(), weights_json(&v)?)];
    Ok(rep)
}

pub fn gamma(cfg: &RunConfig) -> Result<Report> {
    let t = toy(cfg)?;
    let c = &cfg.certificate;
    let v = certificate(cfg, &t)?;
    let g = gamma_search(&v, &c.task.domain, c.gamma_tol, &c.budget)?;
    let lin = gamma_linear_search(&v, &c.task.domain, c.witness.alpha, 1000, &c.budget)?;
    let mut rep = Report::new(
        "gamma",
        cfg.seed,
        Outcome::Pass,
        json!({ "accelerated": g, "linear": lin, "beta": c.witness.beta }),
    );
    rep.artifacts = vec![("certificate.json".into(), weights_json(&v)?)];
    Ok(rep)
}

fn cells_table(r: &CertReport, n: usize) -> Table {
    let mut header = box_header(&["condition", "status", "branches"], n);
    header.extend((0..n).map(|d| format!("cex{d}")));
    let mut t = table_with("cells", header);
    for c in &r.conditions {
        for o in &c.cells {
            let mut row = vec![
                to_value(&c.condition).as_str().unwrap_or_default().to_string(),
                format!("{:?}", o.status).to_uppercase(),
                o.branches.to_string(),
            ];
            row.extend(box_cells(&o.cell));
            match &o.counterexample {
                Some(x) => row.extend(x.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat(String::new()).take(n)),
            }
            t.push(row);
        }
    }
    t
}

fn overall_outcome(o: Overall) -> Outcome {
    match o {
        Overall::Pass => Outcome::Pass,
        Overall::Fail => Outcome::Fail,
        Overall::Inconclusive => Outcome::Inconclusive,
    }
}

pub fn cert_verify(cfg: &RunConfig) -> Result<Report> {
    let t = toy(cfg)?;
    let c = &cfg.certificate;
    let v = certificate(cfg, &t)?;
    let g = gamma_search(&v, &c.task.domain, c.gamma_tol, &c.budget)?;
    let mut w = c.witness;
    w.gamma = g.gamma.min(w.beta);
    w.validate()?;
    let parts = c.partitions.cells(&c.task)?;
    let r = crate::certificate::verify_certificate(&v, &t.controller, &t.plant, &c.task, &w, &parts, &c.budget)?;
    let lemma = check_lemma1(
        &v,
        &t.controller,
        &t.plant,
        &c.task,
        &w,
        c.lemma1_rollouts,
        c.lemma1_horizon,
        cfg.seed,
    )?;
    let mut rep = Report::new(
        "cert-verify",
        cfg.seed,
        overall_outcome(r.overall),
        json!({
            "gamma": g,
            "witness": w,
            "overall": r.overall,
            "conditions": r.conditions.iter().map(|c| json!({
                "condition": c.condition,
                "result": c.result,
                "cells": c.cells.len(),
                "branches": c.cells.iter().map(|o| o.branches).sum::<u64>(),
            })).collect::<Vec<_>>(),
            "counterexamples": r.counterexamples(),
            "timeouts": r.timeouts(),
            "wall_time_s": r.wall_time_s,
            "lemma1": lemma,
        }),
    );
    rep.tables = vec![cells_table(&r, c.task.dim())];
    rep.artifacts = vec![("certificate.json".into(), weights_json(&v)?)];
    Ok(rep)
}

pub fn cert_retrain(cfg: &RunConfig) -> Result<Report> {
    let t = toy(cfg)?;
    let c = &cfg.certificate;
    let mut v = certificate(cfg, &t)?;
    if let Some(x) = &c.inject {
        v = dent(&v, x, c.inject_radius, c.inject_depth)?;
    }
    let sets = sample_sets(&c.task, &c.counts, cfg.seed)?;
    let settings = RetrainSettings {
        schedule: c.retrain_schedule,
        partitions: c.partitions.clone(),
        gamma_tol: c.gamma_tol,
        budget: c.budget,
    };
    let r = retrain_loop(&v, &t.controller, &t.plant, &c.task, &c.witness, &c.hyper, &sets, &settings, c.max_rounds)?;
    let mut rounds = Table::new(
        "rounds",
        &["round", "gamma", "verdict", "counterexamples", "timeouts", "final_loss"],
    );
    for h in &r.history {
        rounds.push(vec![
            h.round.to_string(),
            fmt_f64(h.gamma),
            to_value(&h.verdict).as_str().unwrap_or_default().to_string(),
            h.counterexamples.to_string(),
            h.timeouts.to_string(),
            fmt_opt(h.final_loss),
        ]);
    }
    let outcome = match r.status {
        RetrainStatus::Pass => Outcome::Pass,
        RetrainStatus::Exhausted => match r.history.last().map(|h| h.verdict) {
            Some(Overall::Inconclusive) => Outcome::Inconclusive,
            _ => Outcome::Fail,
        },
    };
    let mut rep = Report::new(
        "cert-retrain",
        cfg.seed,
        outcome,
        json!({
            "status": r.status,
            "rounds": r.rounds,
            "witness": r.witness,
            "history": r.history,
            "injected": c.inject,
        }),
    );
    rep.tables = vec![rounds];
    rep.artifacts = vec![("certificate.json".into(), weights_json(&r.v)?)];
    Ok(rep)
}

