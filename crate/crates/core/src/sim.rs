//! Discrete-time simulation engine: assemble → solve → failure mask →
//! integrate → battery update → record, with deterministic seeding, failure
//! schedules, and batch averaging.
//!
//! A run is fully determined by (config, seed). Batch runs are independent
//! and execute in parallel; their aggregation is order-independent means.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::control::{
    assemble_qp, task_constraint_rows, ClassKappa, ControlAffineModel, TaskRow,
};
use crate::energy::{
    battery_step, energy_cbf, energy_constraint_row, BatteryRates, BatteryState, ChargingStation,
    EnergyRow,
};
use crate::frames::modified_frame_potential_regularized;
use crate::qp::{self, QpStatus, SolverSettings};
use crate::resilience::{
    build_frame, resilience_cbf, resilience_constraint_rows, NORM_REGULARIZATION,
};
use crate::tasks::{evaluate_all, geometry::Polygon, TaskSpec};
use crate::{Error, Result};

/// Positions, batteries, failure flags, and the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time_step: usize,
    pub positions: Vec<Vector2<f64>>,
    pub batteries: Vec<BatteryState>,
    pub failed: Vec<bool>,
    pub rng_seed: u64,
}

/// Everything a run needs that does not change between steps.
pub struct SimEnv {
    pub domain: Polygon,
    pub tasks: Vec<TaskSpec>,
    pub models: Vec<ControlAffineModel>,
    pub stations: Option<Vec<ChargingStation>>,
    pub rates: Option<BatteryRates>,
    pub alpha_task: ClassKappa,
    pub alpha_energy: ClassKappa,
    pub alpha_resilience: ClassKappa,
    pub kappa: f64,
    pub kappa_r: f64,
    pub settings: SolverSettings,
    pub resilience_enabled: bool,
    pub eps_fd: f64,
    /// Earliest failure iteration per robot, if any.
    pub fail_at: Vec<Option<usize>>,
    pub horizon: usize,
    pub dt: f64,
}

impl SimEnv {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let n = config.robots.count;
        let mut fail_at = vec![None; n];
        for f in &config.failures {
            let slot = &mut fail_at[f.robot];
            *slot = Some(slot.map_or(f.iteration, |prev: usize| prev.min(f.iteration)));
        }
        Ok(Self {
            domain: config.domain_polygon()?,
            tasks: config.task_specs()?,
            models: (0..n).map(|_| ControlAffineModel::single_integrator(2)).collect(),
            stations: config.stations(),
            rates: config.battery_rates(),
            alpha_task: config.alpha_task()?,
            alpha_energy: config.alpha_energy()?,
            alpha_resilience: config.alpha_resilience()?,
            kappa: config.gains.kappa,
            kappa_r: config.effective_kappa_r(),
            settings: config.solver_settings(),
            resilience_enabled: config.resilience.enabled,
            eps_fd: config.effective_epsilon_fd()?,
            fail_at,
            horizon: config.horizon,
            dt: config.dt,
        })
    }

    fn n_robots(&self) -> usize {
        self.models.len()
    }
}

/// Everything recorded about one completed step: the state the QP saw, the
/// inputs it produced, and the per-task CBF magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub positions: Vec<Vector2<f64>>,
    pub energies: Vec<f64>,
    pub failed: Vec<bool>,
    pub u: Vec<Vector2<f64>>,
    pub slacks: Vec<f64>,
    /// |h_{ij}| for every task j and robot i, indexed [task][robot].
    pub task_abs_h: Vec<Vec<f64>>,
    pub fp_r: f64,
    pub qp_status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
    pub final_state: WorldState,
}

/// Initial world state: fixed or seed-sampled positions (uniform in the
/// domain, minimum separation enforced), full batteries, no failures.
pub fn init_scenario(config: &ScenarioConfig) -> Result<WorldState> {
    config.validate()?;
    let domain = config.domain_polygon()?;
    let n = config.robots.count;
    let positions = match &config.robots.initial_positions {
        Some(fixed) => fixed.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
        None => sample_positions(&domain, n, config.robots.seed)?,
    };
    let batteries = match &config.energy {
        Some(en) => vec![BatteryState::full(en.e_min, en.e_max)?; n],
        None => vec![BatteryState { energy: 1.0, e_min: 0.0, e_max: 1.0, charging: false }; n],
    };
    Ok(WorldState {
        time_step: 0,
        positions,
        batteries,
        failed: vec![false; n],
        rng_seed: config.robots.seed,
    })
}

fn sample_positions(domain: &Polygon, n: usize, seed: u64) -> Result<Vec<Vector2<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounds();
    let min_sep = 0.01 * domain.diagonal();
    let mut positions: Vec<Vector2<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while positions.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Numeric(format!(
                "could not place {n} robots with separation {min_sep}"
            )));
        }
        let p = Vector2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if !domain.contains(p, 0.0) {
            continue;
        }
        if positions.iter().any(|q| (p - q).norm() < min_sep) {
            continue;
        }
        positions.push(p);
    }
    Ok(positions)
}

/// Point robots may land on top of each other after boundary projection
/// (both clamped to the same corner), which would make the Voronoi partition
/// ill-posed. Nudge overlapping movable robots a few microns toward the
/// domain interior, deterministically.
fn enforce_separation(positions: &mut [Vector2<f64>], failed: &[bool], domain: &Polygon) {
    let sep = 1e-6 * domain.diagonal();
    let center = domain
        .centroid()
        .unwrap_or_else(|_| 0.5 * (domain.bounds().0 + domain.bounds().1));
    for _pass in 0..8 {
        let mut clean = true;
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if (positions[i] - positions[j]).norm() >= sep {
                    continue;
                }
                let movable = if !failed[j] {
                    j
                } else if !failed[i] {
                    i
                } else {
                    continue; // both frozen; they cannot have moved into overlap
                };
                clean = false;
                let inward = center - positions[movable];
                let dir = if inward.norm() > 1e-9 {
                    inward / inward.norm()
                } else {
                    Vector2::new(1.0, 0.0)
                };
                positions[movable] += sep * dir;
            }
        }
        if clean {
            break;
        }
    }
}

/// One control-and-integrate cycle. Returns the successor state and the
/// record of this step (pre-step state plus the inputs applied to it).
pub fn step(state: &WorldState, env: &SimEnv) -> Result<(WorldState, StepRecord)> {
    let n = env.n_robots();
    let t = state.time_step;

    // failure flags are monotone: once failed, always failed
    let failed: Vec<bool> = (0..n)
        .map(|i| state.failed[i] || env.fail_at[i].is_some_and(|at| at <= t))
        .collect();
    let active: Vec<usize> = (0..n).filter(|&i| !failed[i]).collect();

    let evals = evaluate_all(&env.tasks, &state.positions)?;
    let task_abs_h: Vec<Vec<f64>> = evals
        .iter()
        .map(|per_robot| per_robot.iter().map(|e| e.value.abs()).collect())
        .collect();

    let mut u = vec![Vector2::zeros(); n];
    let mut slacks = Vec::new();
    let mut fp_r = 0.0;
    let mut qp_status = "solved".to_string();

    if !active.is_empty() {
        let states_dyn: Vec<DVector<f64>> = state
            .positions
            .iter()
            .map(|p| DVector::from_vec(vec![p.x, p.y]))
            .collect();
        let mut task_rows: Vec<TaskRow> = Vec::with_capacity(env.tasks.len());
        for per_robot in &evals {
            let active_evals: Vec<_> =
                active.iter().map(|&i| per_robot[i].clone()).collect();
            task_rows.push(task_constraint_rows(
                &active_evals,
                &env.models,
                &states_dyn,
                &env.alpha_task,
            )?);
        }

        let energy_rows: Vec<EnergyRow> = match (&env.stations, &env.rates) {
            (Some(stations), Some(rates)) => active
                .iter()
                .map(|&i| {
                    let st = &stations[i];
                    let charging = st.covers(state.positions[i]);
                    let eval =
                        energy_cbf(i, state.positions[i], &state.batteries[i], st, rates.k_alpha);
                    energy_constraint_row(&eval, charging, rates, &env.alpha_energy)
                })
                .collect(),
            _ => Vec::new(),
        };

        let resilience_eval = if env.resilience_enabled {
            let eval =
                resilience_cbf(&state.positions, &failed, &env.tasks, &env.domain, env.eps_fd)?;
            fp_r = eval.fp_r_value;
            Some(eval)
        } else {
            let frame = build_frame(&state.positions, &failed, &env.tasks)?;
            fp_r = modified_frame_potential_regularized(&frame, NORM_REGULARIZATION);
            None
        };
        let resilience_rows = resilience_eval
            .as_ref()
            .map(|e| resilience_constraint_rows(e, &failed, &env.alpha_resilience));

        let assembled = assemble_qp(
            &task_rows,
            &energy_rows,
            resilience_rows.as_deref(),
            &active,
            env.tasks.len(),
            env.kappa,
            env.kappa_r,
        )?;
        let solution = qp::solve(&assembled.problem, &env.settings)?;
        qp_status = solution.status.as_str().to_string();
        match solution.status {
            QpStatus::Solved => {
                u = assembled.layout.extract_inputs(&solution.z_star, n);
                slacks = assembled.layout.extract_slacks(&solution.z_star);
            }
            // freeze fallback: no feasible input, stay put and keep logging
            QpStatus::Infeasible(_) | QpStatus::MaxIter => {}
        }
    }

    let record = StepRecord {
        step: t,
        positions: state.positions.clone(),
        energies: state.batteries.iter().map(|b| b.energy).collect(),
        failed: failed.clone(),
        u: u.clone(),
        slacks,
        task_abs_h,
        fp_r,
        qp_status,
    };

    let mut positions = state.positions.clone();
    for &i in &active {
        positions[i] = env.domain.project(state.positions[i] + env.dt * u[i]);
    }
    enforce_separation(&mut positions, &failed, &env.domain);
    let batteries = match (&env.stations, &env.rates) {
        (Some(stations), Some(rates)) => (0..n)
            .map(|i| {
                let at_station = stations[i].covers(state.positions[i]);
                battery_step(&state.batteries[i], u[i], at_station, env.dt, rates)
            })
            .collect(),
        _ => state.batteries.clone(),
    };

    let next = WorldState {
        time_step: t + 1,
        positions,
        batteries,
        failed,
        rng_seed: state.rng_seed,
    };
    Ok((next, record))
}

/// Runs the configured horizon from the seeded initial state.
pub fn run(config: &ScenarioConfig) -> Result<RunTrace> {
    let env = SimEnv::new(config)?;
    let mut state = init_scenario(config)?;
    let mut records = Vec::with_capacity(env.horizon);
    for s in 0..env.horizon {
        let (next, record) = step(&state, &env)
            .map_err(|e| Error::Step { step: s, source: Box::new(e) })?;
        records.push(record);
        state = next;
    }
    Ok(RunTrace { records, final_state: state })
}

/// Per-step means across a batch of independent seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub task_ids: Vec<String>,
    /// Mean |h_j| over robots and runs, indexed [task][step].
    pub task_abs_h: Vec<Vec<f64>>,
    /// Mean battery energy over robots and runs, per step.
    pub energy: Vec<f64>,
    /// Mean FP_R over runs, per step.
    pub fp_r: Vec<f64>,
    pub n_runs: usize,
}

/// Runs `n_runs` independent copies with seeds base_seed..base_seed+n_runs−1
/// and averages the recorded metrics step-wise.
pub fn batch(config: &ScenarioConfig, n_runs: usize, base_seed: u64) -> Result<BatchMetrics> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("batch needs n_runs >= 1".into()));
    }
    let task_ids: Vec<String> =
        config.task_specs()?.iter().map(|t| t.id.clone()).collect();
    let traces: Vec<RunTrace> = (0..n_runs)
        .into_par_iter()
        .map(|idx| {
            let mut run_config = config.clone();
            run_config.robots.seed = base_seed + idx as u64;
            run(&run_config).map_err(|e| Error::Run { run: idx, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;

    let horizon = config.horizon;
    let n_tasks = task_ids.len();
    let n_robots = config.robots.count;
    let mut task_abs_h = vec![vec![0.0; horizon]; n_tasks];
    let mut energy = vec![0.0; horizon];
    let mut fp_r = vec![0.0; horizon];
    for trace in &traces {
        for (s, rec) in trace.records.iter().enumerate() {
            for j in 0..n_tasks {
                let robot_mean: f64 =
                    rec.task_abs_h[j].iter().sum::<f64>() / n_robots as f64;
                task_abs_h[j][s] += robot_mean;
            }
            energy[s] += rec.energies.iter().sum::<f64>() / n_robots as f64;
            fp_r[s] += rec.fp_r;
        }
    }
    let scale = 1.0 / n_runs as f64;
    for series in task_abs_h.iter_mut() {
        series.iter_mut().for_each(|v| *v *= scale);
    }
    energy.iter_mut().for_each(|v| *v *= scale);
    fp_r.iter_mut().for_each(|v| *v *= scale);

    Ok(BatchMetrics { task_ids, task_abs_h, energy, fp_r, n_runs })
}
