//! Experiment configuration: JSON file, then command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use gpbas::barrier::{quantile_phi, BarrierConfig};
use gpbas::control::DdpOptions;
use gpbas::environments::{Environment, EnvironmentName};
use gpbas::gp::TrainOptions;

use crate::error::{CliError, Result};

/// JSON schema of [`ExperimentConfig`], as published in `schema/`.
pub const SCHEMA: &str = include_str!("../schema/experiment_config.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub environment: String,
    pub course: Option<String>,
    pub seed: u64,
    pub gp: GpSettings,
    pub barrier: BarrierSettings,
    pub solver: SolverSettings,
    pub verify: VerifySettings,
    /// Relative paths are resolved under the output root, when one is set.
    pub output_dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSettings {
    /// Subsample the dataset to at most this many rows before training.
    pub max_rows: Option<usize>,
    /// Rows used for the hyperparameter search; the quadrotor defaults to 300.
    pub hyperopt_rows: Option<usize>,
    pub optimizer_iters: usize,
    pub validation_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSettings {
    pub gamma: f64,
    pub discrete_gamma: f64,
    /// Quantile multiplier φ_ρ. Mutually exclusive with `rho`.
    pub phi: Option<f64>,
    /// Confidence level; sets φ_ρ when `phi` is absent.
    pub rho: Option<f64>,
    /// Overrides the course's barrier-state weights.
    pub barrier_weight: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
    pub reg_init: f64,
    pub reg_max: f64,
    pub alpha_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub samples: usize,
    /// Target safety probability; falls back to `barrier.rho`, then 0.95.
    pub rho: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            environment: "linear".into(),
            course: None,
            seed: 0,
            gp: GpSettings::default(),
            barrier: BarrierSettings::default(),
            solver: SolverSettings::default(),
            verify: VerifySettings::default(),
            output_dir: "out".into(),
        }
    }
}

impl Default for GpSettings {
    fn default() -> Self {
        Self {
            max_rows: None,
            hyperopt_rows: None,
            optimizer_iters: 200,
            validation_fraction: 0.2,
        }
    }
}

impl Default for BarrierSettings {
    fn default() -> Self {
        let b = BarrierConfig::default();
        Self {
            gamma: b.gamma,
            discrete_gamma: b.discrete_gamma,
            phi: None,
            rho: None,
            barrier_weight: None,
        }
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = DdpOptions::default();
        Self {
            horizon: None,
            dt: None,
            epsilon: d.epsilon,
            max_iters: d.max_iters,
            reg_init: d.reg_init,
            reg_max: d.reg_max,
            alpha_min: d.alpha_min,
        }
    }
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            samples: 2000,
            rho: None,
        }
    }
}

/// Flags shared by every command. Each mirrors a config key and wins over
/// the config file.
#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment: linear, dubins or quadrotor.
    #[arg(long = "env")]
    pub environment: Option<String>,
    /// Dubins course: single or multi.
    #[arg(long)]
    pub course: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<String>,
    /// Root for relative output directories.
    #[arg(long, env = "GPBAS_OUTPUT_ROOT")]
    pub output_root: Option<PathBuf>,
    #[arg(long)]
    pub max_rows: Option<usize>,
    #[arg(long)]
    pub hyperopt_rows: Option<usize>,
    #[arg(long)]
    pub optimizer_iters: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub discrete_gamma: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub barrier_weight: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Record wall-clock time in metrics (makes outputs non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

/// Fully validated settings for one command invocation.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub env: Environment,
    pub output_dir: PathBuf,
    pub phi: f64,
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    fn apply(&mut self, a: &ConfigArgs) {
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.environment, a.environment);
        if a.course.is_some() {
            self.course = a.course.clone();
        }
        set!(self.seed, a.seed);
        set!(self.output_dir, a.output_dir);
        if a.max_rows.is_some() {
            self.gp.max_rows = a.max_rows;
        }
        if a.hyperopt_rows.is_some() {
            self.gp.hyperopt_rows = a.hyperopt_rows;
        }
        set!(self.gp.optimizer_iters, a.optimizer_iters);
        set!(self.barrier.gamma, a.gamma);
        set!(self.barrier.discrete_gamma, a.discrete_gamma);
        // A flag for one of phi/rho replaces whatever the file said about both.
        if a.phi.is_some() || a.rho.is_some() {
            self.barrier.phi = a.phi;
            self.barrier.rho = a.rho;
        }
        if a.barrier_weight.is_some() {
            self.barrier.barrier_weight = a.barrier_weight;
        }
        if a.horizon.is_some() {
            self.solver.horizon = a.horizon;
        }
        if a.dt.is_some() {
            self.solver.dt = a.dt;
        }
        set!(self.solver.epsilon, a.epsilon);
        set!(self.solver.max_iters, a.max_iters);
        set!(self.verify.samples, a.samples);
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CliError::usage(format!("invalid config: {msg}")));
        if self.gp.optimizer_iters == 0 {
            return bad("gp.optimizer_iters must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gp.validation_fraction) {
            return bad("gp.validation_fraction must lie in [0, 1)");
        }
        if self.gp.max_rows == Some(0) || self.gp.hyperopt_rows == Some(0) {
            return bad("gp row limits must be positive");
        }
        if self.barrier.phi.is_some() && self.barrier.rho.is_some() {
            return bad("set either barrier.phi or barrier.rho, not both");
        }
        if let Some(w) = self.barrier.barrier_weight {
            if !(w.is_finite() && w >= 0.0) {
                return bad("barrier.barrier_weight must be nonnegative");
            }
        }
        if self.solver.horizon == Some(0) {
            return bad("solver.horizon must be at least 1");
        }
        if let Some(dt) = self.solver.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return bad("solver.dt must be positive");
            }
        }
        if !(self.solver.epsilon > 0.0) || self.solver.max_iters == 0 {
            return bad("solver.epsilon must be positive and solver.max_iters at least 1");
        }
        if !(self.solver.reg_init >= 0.0 && self.solver.reg_max > 0.0) {
            return bad("solver regularization bounds must be nonnegative");
        }
        if !(self.solver.alpha_min > 0.0 && self.solver.alpha_min <= 1.0) {
            return bad("solver.alpha_min must lie in (0, 1]");
        }
        if self.verify.samples == 0 {
            return bad("verify.samples must be at least 1");
        }
        for rho in [self.barrier.rho, self.verify.rho].into_iter().flatten() {
            if !(rho > 0.0 && rho < 1.0) {
                return bad("rho must lie in (0, 1)");
            }
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment> {
        let name: EnvironmentName = self.environment.parse().map_err(|e: gpbas::Error| CliError::usage(e.to_string()))?;
        let env = Environment::by_name(name, self.course.as_deref()).map_err(|e| CliError::usage(e.to_string()))?;
        let mut course = env.course().clone();
        if let Some(h) = self.solver.horizon {
            course.horizon = h;
        }
        if let Some(dt) = self.solver.dt {
            course.dt = dt;
        }
        Ok(env.with_course(course)?)
    }

    pub fn phi(&self) -> Result<f64> {
        match (self.barrier.phi, self.barrier.rho) {
            (Some(phi), _) if phi.is_finite() && phi >= 0.0 => Ok(phi),
            (Some(_), _) => Err(CliError::usage("invalid config: barrier.phi must be nonnegative")),
            (None, Some(rho)) => Ok(quantile_phi(rho)?),
            (None, None) => Ok(0.0),
        }
    }

    pub fn target_rho(&self) -> f64 {
        self.verify.rho.or(self.barrier.rho).unwrap_or(0.95)
    }

    pub fn barrier_config(&self, env: &Environment, phi: f64) -> BarrierConfig {
        BarrierConfig {
            gamma: self.barrier.gamma,
            discrete_gamma: self.barrier.discrete_gamma,
            ..env.barrier_config(phi)
        }
    }

    pub fn train_options(&self, env: &Environment) -> TrainOptions {
        let hyperopt = self
            .gp
            .hyperopt_rows
            .or((env.name() == EnvironmentName::Quadrotor).then_some(300));
        TrainOptions {
            optimizer_iters: self.gp.optimizer_iters,
            hyperopt_subsample: hyperopt,
            validation_fraction: self.gp.validation_fraction,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn ddp_options(&self) -> DdpOptions {
        DdpOptions {
            max_iters: self.solver.max_iters,
            epsilon: self.solver.epsilon,
            reg_init: self.solver.reg_init,
            reg_max: self.solver.reg_max,
            alpha_min: self.solver.alpha_min,
            ..Default::default()
        }
    }
}

/// Load the config file (if any), apply flags, validate.
pub fn resolve(args: &ConfigArgs) -> Result<Resolved> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.apply(args);
    config.validate()?;
    let env = config.environment()?;
    let phi = config.phi()?;
    let dir = PathBuf::from(&config.output_dir);
    let output_dir = match &args.output_root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir,
    };
    Ok(Resolved {
        config,
        env,
        output_dir,
        phi,
        timing: args.timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"environment":"linear","colour":1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"solver":{"horizon":5,"steps":3}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut c = ExperimentConfig {
            seed: 3,
            ..Default::default()
        };
        c.barrier.rho = Some(0.9);
        c.apply(&ConfigArgs {
            seed: Some(9),
            phi: Some(1.0),
            ..Default::default()
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.barrier.phi, Some(1.0));
        assert_eq!(c.barrier.rho, None);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_zero_horizon_and_both_phi_and_rho() {
        let mut c = ExperimentConfig::default();
        c.solver.horizon = Some(0);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.barrier.phi = Some(1.0);
        c.barrier.rho = Some(0.9);
        assert!(c.validate().is_err());
    }

    /// Property names in the published schema must match the config structs.
    #[test]
    fn schema_matches_config() {
        fn keys(v: &serde_json::Value) -> Vec<String> {
            let mut out = Vec::new();
            if let Some(obj) = v.as_object() {
                for (k, child) in obj {
                    out.push(k.clone());
                    for sub in keys(child) {
                        out.push(format!("{k}.{sub}"));
                    }
                }
            }
            out.sort();
            out
        }
        fn schema_keys(s: &serde_json::Value) -> Vec<String> {
            let mut out = Vec::new();
            if let Some(props) = s.get("properties").and_then(|p| p.as_object()) {
                for (k, child) in props {
                    out.push(k.clone());
                    for sub in schema_keys(child) {
                        out.push(format!("{k}.{sub}"));
                    }
                }
            }
            out.sort();
            out
        }
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        assert_eq!(schema["additionalProperties"], serde_json::Value::Bool(false));
        let config = serde_json::to_value(ExperimentConfig::default()).unwrap();
        assert_eq!(keys(&config), schema_keys(&schema));
    }
}
