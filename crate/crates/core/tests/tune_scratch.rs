//! Manual tuning probes, ignored by default.
//! Run: cargo test -p swarmframe --test tune_scratch -- --ignored --nocapture

use swarmframe::config::ScenarioConfig;
use swarmframe::sim;

fn run_stats(cfg: &ScenarioConfig, label: &str) {
    match sim::run(cfg) {
        Ok(trace) => {
            let max_u = trace
                .records
                .iter()
                .flat_map(|r| r.u.iter().map(|u| u.norm()))
                .fold(0.0_f64, f64::max);
            let statuses: Vec<&str> = trace
                .records
                .iter()
                .map(|r| r.qp_status.as_str())
                .collect();
            let n_bad = statuses.iter().filter(|s| **s != "solved").count();
            let fp_r_final = trace.records.last().map(|r| r.fp_r).unwrap_or(0.0);
            let fp_r_max = trace.records.iter().map(|r| r.fp_r).fold(0.0_f64, f64::max);
            let h_cov: f64 = trace.records.last().unwrap().task_abs_h[0].iter().sum::<f64>() / 6.0;
            let h_form: f64 =
                trace.records.last().unwrap().task_abs_h[1].iter().sum::<f64>() / 6.0;
            let min_e_nonfailed = trace
                .records
                .iter()
                .flat_map(|r| {
                    r.energies
                        .iter()
                        .zip(&r.failed)
                        .filter(|(_, f)| !**f)
                        .map(|(e, _)| *e)
                })
                .fold(f64::INFINITY, f64::min);
            let min_e_any = trace
                .records
                .iter()
                .flat_map(|r| r.energies.iter().copied())
                .fold(f64::INFINITY, f64::min);
            println!(
                "{label}: max|u|={max_u:.2} bad_qp={n_bad} fpr_final={fp_r_final:.1} fpr_max={fp_r_max:.1} |h_cov|={h_cov:.4} |h_form|={h_form:.4} min_e_ok={min_e_nonfailed:.2} min_e_any={min_e_any:.2}"
            );
        }
        Err(e) => println!("{label}: ERROR {e}"),
    }
}

#[test]
#[ignore]
fn probe_default_paper_scenario() {
    let cfg = ScenarioConfig::paper_scenario();
    run_stats(&cfg, "default kappa_r=1e3 seed42");
}

#[test]
#[ignore]
fn probe_isolation() {
    // tasks only
    let mut cfg = ScenarioConfig::paper_scenario();
    cfg.resilience.enabled = false;
    cfg.failures.clear();
    cfg.energy = None;
    run_stats(&cfg, "tasks-only");

    // tasks + energy, no resilience, no failures
    let mut cfg = ScenarioConfig::paper_scenario();
    cfg.resilience.enabled = false;
    cfg.failures.clear();
    run_stats(&cfg, "tasks+energy");

    // tasks + energy + failures, no resilience
    let mut cfg = ScenarioConfig::paper_scenario();
    cfg.resilience.enabled = false;
    run_stats(&cfg, "tasks+energy+failures");

    // tasks + resilience, no energy, no failures
    for kr in [1e3, 1.0, 1e-2] {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.energy = None;
        cfg.failures.clear();
        cfg.gains.kappa_r = Some(kr);
        run_stats(&cfg, &format!("tasks+resilience kr={kr:.0e}"));
    }
}

#[test]
#[ignore]
fn probe_failure_impact() {
    // does the failure schedule actually degrade the tasks?
    for seed in [1000u64, 1003, 1007, 1011] {
        let mut nofail = ScenarioConfig::paper_scenario();
        nofail.resilience.enabled = false;
        nofail.robots.seed = seed;
        let mut fail = nofail.clone();
        nofail.failures.clear();
        let t_nf = sim::run(&nofail).unwrap();
        let t_f = sim::run(&fail).unwrap();
        let last_nf = t_nf.records.last().unwrap();
        let last_f = t_f.records.last().unwrap();
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / 6.0;
        println!(
            "seed {seed}: cov nf/f = {:.4}/{:.4}  form nf/f = {:.4}/{:.4}",
            mean(&last_nf.task_abs_h[0]),
            mean(&last_f.task_abs_h[0]),
            mean(&last_nf.task_abs_h[1]),
            mean(&last_f.task_abs_h[1]),
        );
        let dead: Vec<usize> = (0..6).filter(|&i| last_f.failed[i]).collect();
        println!(
            "  failed {:?}: per-robot cov {:?}",
            dead,
            last_f.task_abs_h[0]
                .iter()
                .map(|v| (v * 1e4).round() / 1e4)
                .collect::<Vec<f64>>()
        );
    }
}

#[test]
#[ignore]
fn probe_resilient_spike_anatomy() {
    let mut cfg = ScenarioConfig::paper_scenario();
    cfg.gains.gamma_resilience = 0.02;
    cfg.gains.kappa_r = Some(1e-2);
    cfg.robots.seed = 1004;
    let trace = sim::run(&cfg).unwrap();
    let (worst_step, worst_robot, worst_u) = trace
        .records
        .iter()
        .enumerate()
        .flat_map(|(s, r)| r.u.iter().enumerate().map(move |(i, u)| (s, i, u.norm())))
        .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();
    println!("worst |u| = {worst_u:.1} robot {worst_robot} step {worst_step}");
    for s in worst_step.saturating_sub(2)..(worst_step + 2).min(trace.records.len()) {
        let r = &trace.records[s];
        println!(
            "step {s}: pos=({:.3},{:.3}) e={:.2} |u|={:.2} fpr={:.1} status={}",
            r.positions[worst_robot].x,
            r.positions[worst_robot].y,
            r.energies[worst_robot],
            r.u[worst_robot].norm(),
            r.fp_r,
            r.qp_status,
        );
    }
}

#[test]
#[ignore]
fn probe_spike_anatomy() {
    let mut cfg = ScenarioConfig::paper_scenario();
    cfg.resilience.enabled = false;
    cfg.failures.clear();
    let trace = sim::run(&cfg).unwrap();
    // find the worst step
    let (worst_step, worst_robot, _) = trace
        .records
        .iter()
        .enumerate()
        .flat_map(|(s, r)| r.u.iter().enumerate().map(move |(i, u)| (s, i, u.norm())))
        .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();
    for s in worst_step.saturating_sub(3)..(worst_step + 3).min(trace.records.len()) {
        let r = &trace.records[s];
        let st = &cfg.energy.as_ref().unwrap().stations[worst_robot];
        let d = (r.positions[worst_robot] - nalgebra::Vector2::new(st.x, st.y)).norm();
        println!(
            "step {s}: robot {worst_robot} pos=({:.3},{:.3}) e={:.2} d_station={d:.3} |u|={:.2} u=({:.2},{:.2}) status={} |h_f|={:.3}",
            r.positions[worst_robot].x,
            r.positions[worst_robot].y,
            r.energies[worst_robot],
            r.u[worst_robot].norm(),
            r.u[worst_robot].x,
            r.u[worst_robot].y,
            r.qp_status,
            r.task_abs_h[1][worst_robot],
        );
    }
    // energy trajectory minima per robot
    for i in 0..6 {
        let (min_s, min_e) = trace
            .records
            .iter()
            .enumerate()
            .map(|(s, r)| (s, r.energies[i]))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        println!("robot {i}: min e = {min_e:.2} at step {min_s}");
    }
}

#[test]
#[ignore]
fn probe_kappa_r_sweep() {
    for kr in [1e3, 1e1, 1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.gains.kappa_r = Some(kr);
        run_stats(&cfg, &format!("kappa_r={kr:.0e}"));
    }
}

#[test]
#[ignore]
fn probe_resilience_benefit() {
    use rayon::prelude::*;
    let seeds: Vec<u64> = (0..20).map(|s| 1000 + s).collect();
    for gamma_r in [0.5, 0.1, 0.02] {
        for kr in [1e-1, 1e-2, 1e-3] {
            let stats: Vec<(f64, f64, f64, f64, f64, f64)> = seeds
                .par_iter()
                .map(|&seed| {
                    let mut on = ScenarioConfig::paper_scenario();
                    on.gains.kappa_r = Some(kr);
                    on.gains.gamma_resilience = gamma_r;
                    on.robots.seed = seed;
                    on.resilience.enabled = true;
                    let mut off = on.clone();
                    off.resilience.enabled = false;
                    let t_on = sim::run(&on).expect("on run");
                    let t_off = sim::run(&off).expect("off run");
                    let last_on = t_on.records.last().unwrap();
                    let last_off = t_off.records.last().unwrap();
                    let min_e_on = t_on
                        .records
                        .iter()
                        .flat_map(|r| {
                            r.energies
                                .iter()
                                .zip(&r.failed)
                                .filter(|(_, f)| !**f)
                                .map(|(e, _)| *e)
                        })
                        .fold(f64::INFINITY, f64::min);
                    let max_u_on = t_on
                        .records
                        .iter()
                        .flat_map(|r| r.u.iter().map(|u| u.norm()))
                        .fold(0.0_f64, f64::max);
                    (
                        last_on.task_abs_h[0].iter().sum::<f64>() / 6.0,
                        last_off.task_abs_h[0].iter().sum::<f64>() / 6.0,
                        last_on.task_abs_h[1].iter().sum::<f64>() / 6.0,
                        last_off.task_abs_h[1].iter().sum::<f64>() / 6.0,
                        min_e_on,
                        max_u_on,
                    )
                })
                .collect();
            let n = stats.len() as f64;
            let sum = |f: fn(&(f64, f64, f64, f64, f64, f64)) -> f64| {
                stats.iter().map(f).sum::<f64>() / n
            };
            let min_e = stats.iter().map(|s| s.4).fold(f64::INFINITY, f64::min);
            let max_u = stats.iter().map(|s| s.5).fold(0.0_f64, f64::max);
            println!(
                "gR={gamma_r} kr={kr:.0e}: cov {:.4}/{:.4} form {:.4}/{:.4} min_e_on={min_e:.1} max_u_on={max_u:.1}",
                sum(|s| s.0),
                sum(|s| s.1),
                sum(|s| s.2),
                sum(|s| s.3),
            );
        }
    }
}
