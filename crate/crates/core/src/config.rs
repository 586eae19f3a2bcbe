//! Scenario configuration: a single declarative description of an experiment
//! (robots, domain, tasks, energy model, gains, solver settings, resilience
//! options, failure schedule, horizon). Deserialized from JSON by the CLI;
//! built programmatically in tests.
//!
//! Unknown keys are rejected everywhere. [`ScenarioConfig::validate`] checks
//! every semantic rule and reports the offending field path.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::control::ClassKappa;
use crate::energy::{BatteryRates, ChargingStation};
use crate::qp::SolverSettings;
use crate::tasks::geometry::Polygon;
use crate::tasks::{hexagon_edges, FormationEdge, TaskKind, TaskSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub robots: RobotsConfig,
    /// Convex counterclockwise polygon, `[[x, y], ...]`, in meters.
    pub domain: Vec<[f64; 2]>,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub energy: Option<EnergyConfig>,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub resilience: ResilienceConfig,
    #[serde(default)]
    pub failures: Vec<FailureEvent>,
    pub horizon: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsConfig {
    pub count: usize,
    /// Fixed starting positions; sampled uniformly in the domain when absent.
    #[serde(default)]
    pub initial_positions: Option<Vec<[f64; 2]>>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Coverage {
        #[serde(default)]
        id: Option<String>,
        /// Defaults to the scenario domain.
        #[serde(default)]
        domain: Option<Vec<[f64; 2]>>,
        #[serde(default)]
        weight: Option<f64>,
    },
    Formation {
        #[serde(default)]
        id: Option<String>,
        #[serde(default)]
        edges: Option<Vec<EdgeConfig>>,
        /// Shorthand for the 6-robot hexagon graph (6-cycle + main diagonals).
        #[serde(default)]
        hexagon_circumradius: Option<f64>,
        #[serde(default)]
        weight: Option<f64>,
    },
    Consensus {
        #[serde(default)]
        id: Option<String>,
        #[serde(default)]
        weight: Option<f64>,
    },
}

impl TaskConfig {
    fn weight(&self) -> Option<f64> {
        match self {
            TaskConfig::Coverage { weight, .. }
            | TaskConfig::Formation { weight, .. }
            | TaskConfig::Consensus { weight, .. } => *weight,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub i: usize,
    pub k: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub e_min: f64,
    pub e_max: f64,
    /// Station-distance-to-energy gain of the energy CBF reserve term.
    pub k_alpha: f64,
    /// Idle drain per second.
    pub k_static: f64,
    /// Drain per squared speed.
    pub k_motion: f64,
    /// Charge rate per second while on a station.
    pub k_charge: f64,
    /// Speed bound assumed by the constraint's modeled discharge.
    #[serde(default = "default_speed_margin")]
    pub speed_margin: f64,
    /// One dedicated station per robot, in robot order.
    pub stations: Vec<StationConfig>,
}

fn default_speed_margin() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    #[serde(default = "default_gamma_task")]
    pub gamma_task: f64,
    #[serde(default = "default_gamma_energy")]
    pub gamma_energy: f64,
    #[serde(default = "default_gamma_resilience")]
    pub gamma_resilience: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Weight of the resilience slack block; defaults to kappa / 10.
    #[serde(default)]
    pub kappa_r: Option<f64>,
}

fn default_gamma_task() -> f64 {
    1.0
}
fn default_gamma_energy() -> f64 {
    1.0
}
fn default_gamma_resilience() -> f64 {
    0.5
}
fn default_kappa() -> f64 {
    1e4
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self {
            gamma_task: default_gamma_task(),
            gamma_energy: default_gamma_energy(),
            gamma_resilience: default_gamma_resilience(),
            kappa: default_kappa(),
            kappa_r: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub feas_tol: f64,
    #[serde(default = "default_tol")]
    pub opt_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { feas_tol: default_tol(), opt_tol: default_tol(), max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ResilienceConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Finite-difference step for the h_R state gradient; defaults to
    /// 1e-4 times the domain diagonal.
    #[serde(default)]
    pub epsilon_fd: Option<f64>,
}

/// Robot `robot`'s input is forced to zero from step `iteration` onward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    pub robot: usize,
    pub iteration: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();

        if self.robots.count == 0 {
            problems.push("robots.count: must be at least 1".to_string());
        }
        let domain = self.domain_polygon();
        if let Err(e) = &domain {
            problems.push(format!("domain: {e}"));
        }

        if let Some(pos) = &self.robots.initial_positions {
            if pos.len() != self.robots.count {
                problems.push(format!(
                    "robots.initial_positions: {} entries for {} robots",
                    pos.len(),
                    self.robots.count
                ));
            }
            if let Ok(domain) = &domain {
                for (i, p) in pos.iter().enumerate() {
                    if !domain.contains(Vector2::new(p[0], p[1]), 1e-9) {
                        problems.push(format!(
                            "robots.initial_positions[{i}]: outside the domain"
                        ));
                    }
                }
            }
            for i in 0..pos.len() {
                for j in (i + 1)..pos.len() {
                    let d = Vector2::new(pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]).norm();
                    if d < 1e-6 {
                        problems.push(format!(
                            "robots.initial_positions: entries {i} and {j} coincide"
                        ));
                    }
                }
            }
        }

        if self.tasks.is_empty() {
            problems.push("tasks: at least one task is required".to_string());
        }
        for (j, t) in self.tasks.iter().enumerate() {
            if let Some(w) = t.weight() {
                if !(w > 0.0) {
                    problems.push(format!("tasks[{j}].weight: must be > 0"));
                }
            }
            match t {
                TaskConfig::Coverage { domain: Some(d), .. } => {
                    let verts = d.iter().map(|p| Vector2::new(p[0], p[1])).collect();
                    if let Err(e) = Polygon::new(verts) {
                        problems.push(format!("tasks[{j}].domain: {e}"));
                    }
                }
                TaskConfig::Formation { edges, hexagon_circumradius, .. } => {
                    match (edges, hexagon_circumradius) {
                        (Some(_), Some(_)) => problems.push(format!(
                            "tasks[{j}]: give either edges or hexagon_circumradius, not both"
                        )),
                        (None, None) => problems.push(format!(
                            "tasks[{j}]: formation needs edges or hexagon_circumradius"
                        )),
                        (None, Some(r)) => {
                            if !(*r > 0.0) {
                                problems.push(format!(
                                    "tasks[{j}].hexagon_circumradius: must be > 0"
                                ));
                            }
                            if self.robots.count != 6 {
                                problems.push(format!(
                                    "tasks[{j}]: the hexagon formation needs exactly 6 robots"
                                ));
                            }
                        }
                        (Some(edges), None) => {
                            for (e_idx, e) in edges.iter().enumerate() {
                                if e.i == e.k {
                                    problems.push(format!(
                                        "tasks[{j}].edges[{e_idx}]: self-edge on robot {}",
                                        e.i
                                    ));
                                }
                                if e.i >= self.robots.count || e.k >= self.robots.count {
                                    problems.push(format!(
                                        "tasks[{j}].edges[{e_idx}]: robot index out of range"
                                    ));
                                }
                                if !(e.distance > 0.0) {
                                    problems.push(format!(
                                        "tasks[{j}].edges[{e_idx}].distance: must be > 0"
                                    ));
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }

        if let Some(en) = &self.energy {
            if !(en.e_min < en.e_max) {
                problems.push("energy: e_min must be below e_max".to_string());
            }
            for (name, v) in [
                ("k_alpha", en.k_alpha),
                ("k_static", en.k_static),
                ("k_charge", en.k_charge),
            ] {
                if !(v > 0.0) {
                    problems.push(format!("energy.{name}: must be > 0"));
                }
            }
            if !(en.k_motion >= 0.0) {
                problems.push("energy.k_motion: must be >= 0".to_string());
            }
            if !(en.speed_margin >= 0.0) {
                problems.push("energy.speed_margin: must be >= 0".to_string());
            }
            if en.stations.len() != self.robots.count {
                problems.push(format!(
                    "energy.stations: {} stations for {} robots (one each)",
                    en.stations.len(),
                    self.robots.count
                ));
            }
            for (s_idx, s) in en.stations.iter().enumerate() {
                if !(s.radius > 0.0) {
                    problems.push(format!("energy.stations[{s_idx}].radius: must be > 0"));
                }
                if let Ok(domain) = &domain {
                    if !domain.contains(Vector2::new(s.x, s.y), 1e-9) {
                        problems.push(format!(
                            "energy.stations[{s_idx}]: outside the domain"
                        ));
                    }
                }
            }
            for i in 0..en.stations.len() {
                for j in (i + 1)..en.stations.len() {
                    let a = &en.stations[i];
                    let b = &en.stations[j];
                    let d = Vector2::new(a.x - b.x, a.y - b.y).norm();
                    if d <= a.radius + b.radius {
                        problems.push(format!(
                            "energy.stations: stations {i} and {j} overlap"
                        ));
                    }
                }
            }
        }

        for (name, v) in [
            ("gains.gamma_task", self.gains.gamma_task),
            ("gains.gamma_energy", self.gains.gamma_energy),
            ("gains.gamma_resilience", self.gains.gamma_resilience),
            ("gains.kappa", self.gains.kappa),
        ] {
            if !(v > 0.0) {
                problems.push(format!("{name}: must be > 0"));
            }
        }
        if let Some(kr) = self.gains.kappa_r {
            if !(kr > 0.0) {
                problems.push("gains.kappa_r: must be > 0".to_string());
            }
        }

        for (name, v) in [
            ("solver.feas_tol", self.solver.feas_tol),
            ("solver.opt_tol", self.solver.opt_tol),
        ] {
            if !(v > 0.0) {
                problems.push(format!("{name}: must be > 0"));
            }
        }
        if self.solver.max_iter == 0 {
            problems.push("solver.max_iter: must be at least 1".to_string());
        }
        if let Some(eps) = self.resilience.epsilon_fd {
            if !(eps > 0.0) {
                problems.push("resilience.epsilon_fd: must be > 0".to_string());
            }
        }
        for (f_idx, f) in self.failures.iter().enumerate() {
            if f.robot >= self.robots.count {
                problems.push(format!(
                    "failures[{f_idx}].robot: index {} out of 0..{}",
                    f.robot, self.robots.count
                ));
            }
        }
        if !(self.dt > 0.0) {
            problems.push("dt: must be > 0".to_string());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn domain_polygon(&self) -> Result<Polygon> {
        Polygon::new(self.domain.iter().map(|p| Vector2::new(p[0], p[1])).collect())
    }

    /// Materializes the task list (hexagon shorthand expanded, coverage
    /// domains defaulted to the scenario domain).
    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        let scenario_domain = self.domain_polygon()?;
        self.tasks
            .iter()
            .map(|t| {
                let weight = t.weight().unwrap_or(1.0);
                match t {
                    TaskConfig::Coverage { id, domain, .. } => {
                        let poly = match domain {
                            Some(d) => Polygon::new(
                                d.iter().map(|p| Vector2::new(p[0], p[1])).collect(),
                            )?,
                            None => scenario_domain.clone(),
                        };
                        Ok(TaskSpec::new(
                            id.clone().unwrap_or_else(|| "coverage".into()),
                            TaskKind::Coverage { domain: poly },
                        )
                        .with_weight(weight))
                    }
                    TaskConfig::Formation { id, edges, hexagon_circumradius, .. } => {
                        let edge_list: Vec<FormationEdge> = match (edges, hexagon_circumradius) {
                            (Some(list), None) => list
                                .iter()
                                .map(|e| FormationEdge { i: e.i, k: e.k, distance: e.distance })
                                .collect(),
                            (None, Some(r)) => hexagon_edges(*r),
                            _ => {
                                return Err(Error::InvalidConfig(
                                    "formation needs exactly one of edges / hexagon_circumradius"
                                        .into(),
                                ))
                            }
                        };
                        let spec = TaskSpec::new(
                            id.clone().unwrap_or_else(|| "formation".into()),
                            TaskKind::Formation { edges: edge_list },
                        )
                        .with_weight(weight);
                        spec.validate(self.robots.count)?;
                        Ok(spec)
                    }
                    TaskConfig::Consensus { id, .. } => Ok(TaskSpec::new(
                        id.clone().unwrap_or_else(|| "consensus".into()),
                        TaskKind::Consensus,
                    )
                    .with_weight(weight)),
                }
            })
            .collect()
    }

    pub fn stations(&self) -> Option<Vec<ChargingStation>> {
        self.energy.as_ref().map(|en| {
            en.stations
                .iter()
                .enumerate()
                .map(|(i, s)| ChargingStation {
                    position: Vector2::new(s.x, s.y),
                    radius: s.radius,
                    robot: i,
                })
                .collect()
        })
    }

    pub fn battery_rates(&self) -> Option<BatteryRates> {
        self.energy.as_ref().map(|en| BatteryRates {
            k_alpha: en.k_alpha,
            k_static: en.k_static,
            k_motion: en.k_motion,
            k_charge: en.k_charge,
            speed_margin: en.speed_margin,
        })
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            feas_tol: self.solver.feas_tol,
            opt_tol: self.solver.opt_tol,
            max_iter: self.solver.max_iter,
        }
    }

    pub fn effective_kappa_r(&self) -> f64 {
        self.gains.kappa_r.unwrap_or(self.gains.kappa / 10.0)
    }

    pub fn effective_epsilon_fd(&self) -> Result<f64> {
        match self.resilience.epsilon_fd {
            Some(eps) => Ok(eps),
            None => Ok(1e-4 * self.domain_polygon()?.diagonal()),
        }
    }

    pub fn alpha_task(&self) -> Result<ClassKappa> {
        ClassKappa::linear(self.gains.gamma_task)
    }

    pub fn alpha_energy(&self) -> Result<ClassKappa> {
        ClassKappa::linear(self.gains.gamma_energy)
    }

    pub fn alpha_resilience(&self) -> Result<ClassKappa> {
        ClassKappa::linear(self.gains.gamma_resilience)
    }

    /// The bundled 6-robot, 2-task failure-injection experiment: coverage plus
    /// hexagon formation in a 3.2 m × 2 m arena, dedicated charging stations,
    /// robots 5 and 1 (0-based) failing at steps 180 and 240, horizon 360.
    pub fn paper_scenario() -> Self {
        Self {
            robots: RobotsConfig { count: 6, initial_positions: None, seed: 42 },
            domain: vec![[-1.6, -1.0], [1.6, -1.0], [1.6, 1.0], [-1.6, 1.0]],
            tasks: vec![
                TaskConfig::Coverage { id: None, domain: None, weight: None },
                TaskConfig::Formation {
                    id: None,
                    edges: None,
                    hexagon_circumradius: Some(0.7),
                    weight: Some(0.05),
                },
            ],
            energy: Some(EnergyConfig {
                e_min: 50.0,
                e_max: 100.0,
                k_alpha: 10.0,
                k_static: 4.5,
                k_motion: 0.002,
                k_charge: 30.0,
                speed_margin: 2.0,
                stations: vec![
                    StationConfig { x: -1.2, y: -0.8, radius: 0.3 },
                    StationConfig { x: 0.0, y: -0.8, radius: 0.3 },
                    StationConfig { x: 1.2, y: -0.8, radius: 0.3 },
                    StationConfig { x: -1.2, y: 0.8, radius: 0.3 },
                    StationConfig { x: 0.0, y: 0.8, radius: 0.3 },
                    StationConfig { x: 1.2, y: 0.8, radius: 0.3 },
                ],
            }),
            gains: GainsConfig { kappa: 4.0, kappa_r: Some(1e-2), ..GainsConfig::default() },
            solver: SolverConfig::default(),
            resilience: ResilienceConfig { enabled: true, epsilon_fd: None },
            failures: vec![
                FailureEvent { robot: 5, iteration: 180 },
                FailureEvent { robot: 1, iteration: 240 },
            ],
            horizon: 360,
            dt: 0.05,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scenario_validates() {
        let cfg = ScenarioConfig::paper_scenario();
        cfg.validate().unwrap();
        assert_eq!(cfg.robots.count, 6);
        assert_eq!(cfg.task_specs().unwrap().len(), 2);
        assert_eq!(cfg.horizon, 360);
        assert_eq!(
            cfg.failures,
            vec![
                FailureEvent { robot: 5, iteration: 180 },
                FailureEvent { robot: 1, iteration: 240 }
            ]
        );
    }

    #[test]
    fn empty_tasks_are_rejected() {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.tasks.clear();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("at least one task"), "{err}");
    }

    #[test]
    fn negative_kappa_is_rejected() {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.gains.kappa = -1.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("gains.kappa"), "{err}");
    }

    #[test]
    fn misplaced_stations_are_rejected() {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.energy.as_mut().unwrap().stations[0].x = 99.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("stations[0]"), "{err}");
    }

    #[test]
    fn hexagon_requires_six_robots() {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.robots.count = 5;
        cfg.energy = None;
        cfg.failures.clear();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("6 robots"), "{err}");
    }

    #[test]
    fn out_of_range_failure_robot_is_rejected() {
        let mut cfg = ScenarioConfig::paper_scenario();
        cfg.failures.push(FailureEvent { robot: 17, iteration: 10 });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("failures[2]"), "{err}");
    }

    #[test]
    fn kappa_r_defaults_to_a_tenth_of_kappa() {
        let cfg = ScenarioConfig::paper_scenario();
        assert_eq!(cfg.effective_kappa_r(), cfg.gains.kappa / 10.0);
    }
}
