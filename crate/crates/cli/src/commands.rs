//! One function per subcommand. Each reads its inputs, writes its artifacts
//! under the output directory and returns the paths it wrote.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::ValueEnum;
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use gpbas::barrier::{BarrierConfig, EmbeddedModel};
use gpbas::control::{
    ddp_optimize, gpbas_lqr, rollout_policy, AffinePolicy, DdpSolution, LinearFeedback, Plant, Policy,
    QuadraticCost, Rollout,
};
use gpbas::dynamics::DynamicsModel;
use gpbas::environments::{generate_training_data, DataRecipe, Environment};
use gpbas::gp::{train_gp, GpModelFile, ModelMetadata};
use gpbas::uncertainty::{mc_rollout, SafetyReport};

use crate::config::{Resolved, SCHEMA};
use crate::error::{CliError, Result};
use crate::files::{self, num, output_path};

/// Which dynamics a controller is synthesized against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsSource {
    /// The trained GP model.
    #[default]
    Learned,
    /// The simulator's exact dynamics.
    True,
}

/// Where `simulate` takes its transitions from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum PlantChoice {
    /// True dynamics, integrated with RK4.
    #[default]
    True,
    /// The controller's own mean model.
    Model,
}

#[derive(Debug, Serialize)]
struct DatasetProvenance<'a> {
    environment: &'a str,
    course: &'a str,
    seed: u64,
    recipe: &'a DataRecipe,
    rows: usize,
    columns: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Controller {
    LinearFeedback {
        gain: DMatrix<f64>,
        target: DVector<f64>,
        u_eq: DVector<f64>,
    },
    Affine(AffinePolicy),
}

impl Controller {
    fn policy(&self) -> Box<dyn Policy> {
        match self {
            Controller::LinearFeedback { gain, target, u_eq } => Box::new(LinearFeedback {
                gain: gain.clone(),
                target: target.clone(),
                u_eq: u_eq.clone(),
            }),
            Controller::Affine(p) => Box::new(p.clone()),
        }
    }
}

/// A solved controller together with the model context it was solved in.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub environment: String,
    pub course: String,
    pub dynamics: DynamicsSource,
    pub dt: f64,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub barrier: BarrierConfig,
    pub controller: Controller,
}

#[derive(Debug, Serialize)]
struct SolveMetrics {
    environment: String,
    course: String,
    solver: &'static str,
    dynamics: DynamicsSource,
    phi: f64,
    horizon: usize,
    dt: f64,
    converged: bool,
    iterations: usize,
    final_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_v: Option<f64>,
    min_h_model: f64,
    min_h_true: f64,
    min_clearance_model: f64,
    min_clearance_true: f64,
    violation_step_model: Option<usize>,
    violation_step_true: Option<usize>,
    final_state_true: Vec<f64>,
    final_distance_true: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SimulateMetrics {
    environment: String,
    plant: &'static str,
    steps: usize,
    cost: f64,
    min_h: f64,
    min_clearance: f64,
    violation_step: Option<usize>,
    final_state: Vec<f64>,
    final_distance: f64,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub environment: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: SafetyReport,
    pub standard_error: f64,
    pub confidence_interval: [f64; 2],
    pub rho: f64,
    /// `fraction_safe ≥ rho − 2·SE`.
    pub meets_rho: bool,
}

fn out_dir(r: &Resolved) -> Result<&Path> {
    files::create_dir(&r.output_dir)?;
    Ok(&r.output_dir)
}

fn course_name(env: &Environment) -> String {
    env.course().name.clone()
}

fn load_model_file(path: &Path, env: &Environment) -> Result<GpModelFile> {
    let file = GpModelFile::from_json(&files::read_text(path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if let Some(name) = &file.metadata.environment {
        if name != env.name().as_str() {
            return Err(CliError::usage(format!(
                "{}: model was trained for the {name} environment, not {}",
                path.display(),
                env.name()
            )));
        }
    }
    Ok(file)
}

fn dynamics(
    r: &Resolved,
    source: DynamicsSource,
    model: Option<&Path>,
) -> Result<Arc<dyn DynamicsModel>> {
    match source {
        DynamicsSource::True => Ok(r.env.true_model()),
        DynamicsSource::Learned => {
            let default = output_path(&r.output_dir, "model.json");
            let path = model.unwrap_or(&default);
            let gp = load_model_file(path, &r.env)?.to_model()?;
            Ok(r.env.learned_model(gp)?)
        }
    }
}

fn embedded(r: &Resolved, dynamics: Arc<dyn DynamicsModel>, barrier: BarrierConfig) -> Result<EmbeddedModel> {
    Ok(EmbeddedModel::new(dynamics, r.env.safety(), barrier, r.env.dt())?)
}

fn distance_to_goal(env: &Environment, x: &DVector<f64>) -> f64 {
    (x - env.goal()).norm()
}

/// `gen-data`: sample the environment's recipe into `dataset.csv` and a
/// provenance sidecar.
pub fn gen_data(r: &Resolved) -> Result<Vec<PathBuf>> {
    let dir = out_dir(r)?;
    let data = generate_training_data(&r.env, r.config.seed)?;
    let csv = output_path(dir, "dataset.csv");
    files::write_dataset(&csv, &r.env, &data)?;
    let course = course_name(&r.env);
    let prov = DatasetProvenance {
        environment: r.env.name().as_str(),
        course: &course,
        seed: r.config.seed,
        recipe: &r.env.course().recipe,
        rows: data.len(),
        columns: files::dataset_header(&r.env),
    };
    let json = output_path(dir, "dataset.json");
    files::write_json(&json, &prov)?;
    info!("wrote {} rows to {}", data.len(), csv.display());
    Ok(vec![csv, json])
}

/// `train`: fit and tune one GP per output and write `model.json`.
pub fn train(r: &Resolved, data: Option<&Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir(r)?;
    let default = output_path(dir, "dataset.csv");
    let path = data.unwrap_or(&default);
    let mut dataset = files::read_dataset(path, &r.env)?;
    if let Some(max) = r.config.gp.max_rows {
        dataset = dataset.subsample(max, r.config.seed)?;
    }
    let (gp, report) = train_gp(&dataset, &r.config.train_options(&r.env))?;
    if let (Some(rmse), Some(std)) = (&report.validation_rmse, &report.validation_target_std) {
        info!("validation rmse {rmse:?} against target std {std:?}");
    }
    let meta = ModelMetadata {
        environment: Some(r.env.name().as_str().to_string()),
        seed: Some(r.config.seed),
        input_names: r.env.input_names(),
        target_names: r.env.target_names(),
        training: Some(report),
    };
    let out = output_path(dir, "model.json");
    let mut text = GpModelFile::from_model(&gp, meta).to_json()?;
    text.push('\n');
    files::write_text(&out, &text)?;
    Ok(vec![out])
}

struct Replay {
    model: Rollout,
    truth: Rollout,
}

fn replay(r: &Resolved, em: &EmbeddedModel, policy: &dyn Policy, cost: &QuadraticCost) -> Result<Replay> {
    let (x0, h) = (r.env.x0(), r.env.horizon());
    let model = rollout_policy(em, Plant::Model, policy, &x0, h, true, Some(cost))?;
    let plant = r.env.plant();
    let truth = rollout_policy(em, Plant::True(&plant), policy, &x0, h, true, Some(cost))?;
    Ok(Replay { model, truth })
}

#[allow(clippy::too_many_arguments)]
fn write_solution(
    r: &Resolved,
    solver: &'static str,
    source: DynamicsSource,
    em: &EmbeddedModel,
    cost: &QuadraticCost,
    controller: Controller,
    solve: (bool, usize, f64, Option<f64>),
    started: Instant,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir(r)?;
    let (converged, iterations, solver_cost, delta_v) = solve;
    let rep = replay(r, em, controller.policy().as_ref(), cost)?;
    let traj = output_path(dir, &format!("{solver}_trajectory.csv"));
    let traj_true = output_path(dir, &format!("{solver}_trajectory_true.csv"));
    files::write_trajectory(&traj, &rep.model, cost, r.env.dt())?;
    files::write_trajectory(&traj_true, &rep.truth, cost, r.env.dt())?;

    let xf = &rep.truth.final_state().x;
    let metrics = SolveMetrics {
        environment: r.env.name().as_str().to_string(),
        course: course_name(&r.env),
        solver,
        dynamics: source,
        phi: r.phi,
        horizon: r.env.horizon(),
        dt: r.env.dt(),
        converged,
        iterations,
        final_cost: solver_cost,
        delta_v,
        min_h_model: rep.model.report.min_h,
        min_h_true: rep.truth.report.min_h,
        min_clearance_model: rep.model.report.min_clearance,
        min_clearance_true: rep.truth.report.min_clearance,
        violation_step_model: rep.model.report.violation_step,
        violation_step_true: rep.truth.report.violation_step,
        final_state_true: xf.iter().copied().collect(),
        final_distance_true: distance_to_goal(&r.env, xf),
        wall_time_s: r.timing.then(|| started.elapsed().as_secs_f64()),
    };
    let metrics_path = output_path(dir, &format!("{solver}_metrics.json"));
    files::write_json(&metrics_path, &metrics)?;

    let policy = PolicyFile {
        environment: r.env.name().as_str().to_string(),
        course: course_name(&r.env),
        dynamics: source,
        dt: r.env.dt(),
        horizon: r.env.horizon(),
        x0: r.env.x0().iter().copied().collect(),
        barrier: em.config().clone(),
        controller,
    };
    let policy_path = output_path(dir, &format!("{solver}_policy.json"));
    files::write_json(&policy_path, &policy)?;
    Ok(vec![traj, traj_true, metrics_path, policy_path])
}

/// `lqr`: GP-BaS-LQR around the goal, replayed on the model and the true
/// system.
pub fn lqr(r: &Resolved, source: DynamicsSource, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let barrier = r.config.barrier_config(&r.env, r.phi);
    let em = embedded(r, dynamics(r, source, model)?, barrier)?;
    let cost = r.env.cost(em.barrier_dim(), r.config.barrier.barrier_weight)?;
    let goal = r.env.goal();
    let gains = gpbas_lqr(&em, &cost, &goal, &r.env.u_eq(), r.env.discretization())?;
    let target = em.initial_state(&goal)?.to_vector();
    let controller = Controller::LinearFeedback {
        gain: gains.k,
        target,
        u_eq: r.env.u_eq(),
    };
    // The infinite-horizon cost-to-go at x0 stands in for the solver cost.
    let s0 = em.initial_state(&r.env.x0())?.to_vector();
    let err = &s0 - em.initial_state(&goal)?.to_vector();
    let final_cost = (err.transpose() * &gains.p * &err)[(0, 0)];
    write_solution(r, "lqr", source, &em, &cost, controller, (true, 1, final_cost, None), started)
}

/// `ddp`: GP-BaS-DDP over the course horizon. A stalled or unconverged
/// solve still writes every artifact, then exits with the non-convergence
/// code.
pub fn ddp(r: &Resolved, source: DynamicsSource, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let barrier = r.config.barrier_config(&r.env, r.phi);
    let em = embedded(r, dynamics(r, source, model)?, barrier)?;
    let cost = r.env.cost(em.barrier_dim(), r.config.barrier.barrier_weight)?;
    let x0 = em.initial_state(&r.env.x0())?;
    let u0 = r.env.initial_controls(r.env.horizon());
    let opts = r.config.ddp_options();
    let (sol, stalled): (DdpSolution, bool) = match ddp_optimize(&em, &cost, &x0, &u0, &opts) {
        Ok(s) => (s, false),
        Err(gpbas::Error::Stalled(s)) => (*s, true),
        Err(e) => return Err(e.into()),
    };
    let dir = out_dir(r)?;
    let history = output_path(dir, "ddp_cost_history.csv");
    let rows: Vec<Vec<String>> = sol
        .cost_history
        .iter()
        .enumerate()
        .map(|(i, c)| vec![i.to_string(), num(*c)])
        .collect();
    files::write_csv(&history, &["iteration".into(), "cost".into()], &rows)?;

    let converged = sol.converged && !stalled;
    let summary = (converged, sol.iterations, sol.cost(), Some(sol.delta_v));
    let mut written = write_solution(r, "ddp", source, &em, &cost, Controller::Affine(sol.policy()), summary, started)?;
    written.push(history);
    if !converged {
        let why = if stalled { "line search stalled at maximum regularization" } else { "iteration limit reached" };
        warn!("ddp did not converge: {why}");
        return Err(CliError::NotConverged(format!(
            "ddp did not converge after {} iterations ({why}); best-so-far artifacts written to {}",
            sol.iterations,
            dir.display()
        )));
    }
    Ok(written)
}

fn load_policy(r: &Resolved, path: &Path) -> Result<PolicyFile> {
    let p: PolicyFile = files::read_json(path)?;
    if p.environment != r.env.name().as_str() {
        return Err(CliError::usage(format!(
            "{}: policy is for the {} environment, not {}",
            path.display(),
            p.environment,
            r.env.name()
        )));
    }
    Ok(p)
}

/// `simulate`: replay a saved policy on the true system or its own model.
pub fn simulate(r: &Resolved, policy: &Path, plant: PlantChoice, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let p = load_policy(r, policy)?;
    let em = embedded(r, dynamics(r, p.dynamics, model)?, p.barrier.clone())?;
    let cost = r.env.cost(em.barrier_dim(), r.config.barrier.barrier_weight)?;
    let x0 = DVector::from_vec(p.x0.clone());
    let pol = p.controller.policy();
    let truth = r.env.plant();
    let (plant, label) = match plant {
        PlantChoice::True => (Plant::True(&truth), "true"),
        PlantChoice::Model => (Plant::Model, "model"),
    };
    let ro = rollout_policy(&em, plant, pol.as_ref(), &x0, r.env.horizon(), true, Some(&cost))?;
    let dir = out_dir(r)?;
    let traj = output_path(dir, "simulate_trajectory.csv");
    files::write_trajectory(&traj, &ro, &cost, r.env.dt())?;
    let xf = &ro.final_state().x;
    let metrics = SimulateMetrics {
        environment: p.environment.clone(),
        plant: label,
        steps: ro.controls.len(),
        cost: ro.report.cost.unwrap_or(f64::NAN),
        min_h: ro.report.min_h,
        min_clearance: ro.report.min_clearance,
        violation_step: ro.report.violation_step,
        final_state: xf.iter().copied().collect(),
        final_distance: distance_to_goal(&r.env, xf),
    };
    let mpath = output_path(dir, "simulate_metrics.json");
    files::write_json(&mpath, &metrics)?;
    Ok(vec![traj, mpath])
}

/// `verify`: Monte Carlo over GP-posterior transitions of a saved policy.
pub fn verify(r: &Resolved, policy: &Path, model: Option<&Path>) -> Result<Vec<PathBuf>> {
    let p = load_policy(r, policy)?;
    let em = embedded(r, dynamics(r, p.dynamics, model)?, p.barrier.clone())?;
    let x0 = DVector::from_vec(p.x0.clone());
    let pol = p.controller.policy();
    let report = mc_rollout(&em, pol.as_ref(), &x0, r.env.horizon(), r.config.verify.samples, r.config.seed)?;
    let rho = r.config.target_rho();
    let se = report.standard_error();
    let (lo, hi) = report.confidence_interval();
    let out = VerifyReport {
        environment: p.environment.clone(),
        seed: r.config.seed,
        meets_rho: report.fraction_safe >= rho - 2.0 * se,
        report,
        standard_error: se,
        confidence_interval: [lo, hi],
        rho,
    };
    info!(
        "fraction safe {} (95% CI [{lo}, {hi}]) against rho {rho}",
        out.report.fraction_safe
    );
    let dir = out_dir(r)?;
    let path = output_path(dir, "verify_report.json");
    files::write_json(&path, &out)?;
    Ok(vec![path])
}

/// `export`: write the resolved config, the active course and the config
/// schema.
pub fn export(r: &Resolved) -> Result<Vec<PathBuf>> {
    let dir = out_dir(r)?;
    let config = output_path(dir, "config.json");
    files::write_json(&config, &r.config)?;
    let course = output_path(dir, "course.json");
    files::write_json(&course, r.env.course())?;
    let schema = output_path(dir, "experiment_config.schema.json");
    files::write_text(&schema, SCHEMA)?;
    Ok(vec![config, course, schema])
}
