//! Benchmark systems: ground-truth dynamics, obstacle courses, cost
//! weights and training-data recipes.
//!
//! Courses (start, goal, obstacles, weights, data recipe) live as JSON
//! under `courses/` and are compiled into the crate.

mod dubins;
mod linear;
mod quadrotor;

pub use dubins::{DubinsCar, DubinsCourse};
pub use linear::LinearSystem;
pub use quadrotor::{Quadrotor, QuadrotorGreyBox, QuadrotorParams};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierConfig, Constraint, ConstraintSet, SafetyFunction};
use crate::control::{Discretization, QuadraticCost, TrueSystem};
use crate::dynamics::{check_dims, DynamicsModel, GpDynamics};
use crate::error::{Error, Result};
use crate::gp::{Dataset, GpModel, Posterior, TargetMode};
use crate::rng::{substream, Stream};

/// Known continuous-time dynamics `ẋ = f(x, u)` with analytic Jacobians.
pub trait ContinuousDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(∂f/∂x, ∂f/∂u)`
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// One classical Runge-Kutta step with the control held constant.
pub fn rk4_step(sys: &dyn ContinuousDynamics, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = sys.f(x, u);
    let k2 = sys.f(&(x + &k1 * (h / 2.0)), u);
    let k3 = sys.f(&(x + &k2 * (h / 2.0)), u);
    let k4 = sys.f(&(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Ground-truth plant: RK4 over each control interval.
#[derive(Clone)]
pub struct Rk4Plant {
    sys: Arc<dyn ContinuousDynamics>,
    substeps: usize,
}

impl Rk4Plant {
    pub fn new(sys: Arc<dyn ContinuousDynamics>, substeps: usize) -> Self {
        Self {
            sys,
            substeps: substeps.max(1),
        }
    }
}

impl TrueSystem for Rk4Plant {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.sys.control_dim()
    }

    fn advance(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
        let h = dt / self.substeps as f64;
        (0..self.substeps).fold(x.clone(), |x, _| rk4_step(self.sys.as_ref(), &x, u, h))
    }
}

/// Known dynamics seen as a zero-variance Gaussian model. Used to build the
/// "true model" BaS controllers that the learned ones are compared with.
#[derive(Clone)]
pub struct KnownDynamics(pub Arc<dyn ContinuousDynamics>);

impl DynamicsModel for KnownDynamics {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.0.control_dim()
    }

    fn mode(&self) -> TargetMode {
        TargetMode::ContinuousDerivative
    }

    fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Posterior> {
        check_dims(self, x, u)?;
        Ok(Posterior {
            mean: self.0.f(x, u),
            variance: DVector::zeros(self.state_dim()),
        })
    }

    fn mean_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dims(self, x, u)?;
        Ok(self.0.jacobians(x, u))
    }
}

/// Diagonal cost weights of a course. The barrier weights apply to every
/// barrier state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub state_weights: Vec<f64>,
    pub control_weights: Vec<f64>,
    pub terminal_state_weights: Vec<f64>,
    pub barrier_weight: f64,
    pub terminal_barrier_weight: f64,
}

/// How training data is collected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataRecipe {
    /// Independent uniform draws of every state and control entry.
    UniformBox { count: usize, low: f64, high: f64 },
    /// Open-loop runs of `u_j(t) = center + amplitude sin(ω_j t + φ_j)` with
    /// random phases and frequencies, sampled every `sample_every` steps.
    Sinusoids {
        trajectories: usize,
        points_per_trajectory: usize,
        sample_every: usize,
        center: f64,
        amplitude: f64,
        /// Frequencies are drawn uniformly from this range (rad/s).
        frequency: [f64; 2],
        /// Start positions, one per trajectory (cycled).
        starts: Vec<Vec<f64>>,
    },
    /// Hover flights with an attitude stabilizer and random sinusoidal
    /// excitation of thrust and torques, then uniformly subsampled.
    HoverExcitation {
        trajectories: usize,
        steps: usize,
        thrust_amplitude: f64,
        torque_amplitude: f64,
        max_rows: usize,
    },
}

/// A versioned course file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseFile {
    pub name: String,
    pub version: u32,
    pub dt: f64,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub goal: Vec<f64>,
    /// Equilibrium (and reference) control; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_eq: Option<Vec<f64>>,
    pub constraints: Vec<Constraint>,
    pub cost: CostSpec,
    pub recipe: DataRecipe,
}

impl CourseFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentName {
    Linear,
    Dubins,
    Quadrotor,
}

impl EnvironmentName {
    pub const ALL: [EnvironmentName; 3] = [Self::Linear, Self::Dubins, Self::Quadrotor];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Dubins => "dubins",
            Self::Quadrotor => "quadrotor",
        }
    }
}

impl fmt::Display for EnvironmentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvironmentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|e| e.as_str()).collect();
            Error::invalid(format!("unknown environment `{s}`; valid names: {}", names.join(", ")))
        })
    }
}

/// A benchmark: true dynamics plus its course.
#[derive(Clone)]
pub struct Environment {
    name: EnvironmentName,
    course: CourseFile,
    dynamics: Arc<dyn ContinuousDynamics>,
    constraints: ConstraintSet,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("name", &self.name)
            .field("course", &self.course.name)
            .finish()
    }
}

fn vector(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::invalid(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl Environment {
    /// Assemble an environment and check its course against the dynamics.
    pub fn new(name: EnvironmentName, course: CourseFile, dynamics: Arc<dyn ContinuousDynamics>) -> Result<Self> {
        let (n, m) = (dynamics.state_dim(), dynamics.control_dim());
        if !(course.dt.is_finite() && course.dt > 0.0) {
            return Err(Error::invalid("course dt must be positive"));
        }
        let x0 = vector(&course.x0, n, "x0")?;
        let goal = vector(&course.goal, n, "goal")?;
        if let Some(u) = &course.u_eq {
            vector(u, m, "u_eq")?;
        }
        let c = &course.cost;
        if c.state_weights.len() != n || c.terminal_state_weights.len() != n || c.control_weights.len() != m {
            return Err(Error::invalid("cost weights do not match the state/control dimensions"));
        }
        let constraints = ConstraintSet::new(n, &course.constraints)?;
        if !constraints.is_safe(&x0) || !constraints.is_safe(&goal) {
            return Err(Error::invalid("x0 and goal must be strictly safe"));
        }
        Ok(Self {
            name,
            course,
            dynamics,
            constraints,
        })
    }

    pub fn linear() -> Self {
        let course = CourseFile::from_json(include_str!("../../courses/linear.json")).expect("bundled course");
        Self::new(EnvironmentName::Linear, course, Arc::new(LinearSystem::benchmark())).expect("bundled course")
    }

    pub fn dubins(course: DubinsCourse) -> Self {
        let text = match course {
            DubinsCourse::Single => include_str!("../../courses/dubins_single.json"),
            DubinsCourse::Multi => include_str!("../../courses/dubins_multi.json"),
        };
        let course = CourseFile::from_json(text).expect("bundled course");
        Self::new(EnvironmentName::Dubins, course, Arc::new(DubinsCar::default())).expect("bundled course")
    }

    pub fn quadrotor() -> Self {
        let course = CourseFile::from_json(include_str!("../../courses/quadrotor.json")).expect("bundled course");
        Self::new(EnvironmentName::Quadrotor, course, Arc::new(Quadrotor::default())).expect("bundled course")
    }

    /// Environment by name. `course` selects the Dubins layout
    /// (`single` or `multi`, default `single`) and must be absent otherwise.
    pub fn by_name(name: EnvironmentName, course: Option<&str>) -> Result<Self> {
        match (name, course) {
            (EnvironmentName::Dubins, c) => Ok(Self::dubins(c.unwrap_or("single").parse()?)),
            (_, Some(c)) => Err(Error::invalid(format!("environment `{name}` has no course `{c}`"))),
            (EnvironmentName::Linear, None) => Ok(Self::linear()),
            (EnvironmentName::Quadrotor, None) => Ok(Self::quadrotor()),
        }
    }

    /// Same dynamics on a different course.
    pub fn with_course(&self, course: CourseFile) -> Result<Self> {
        Self::new(self.name, course, self.dynamics.clone())
    }

    pub fn name(&self) -> EnvironmentName {
        self.name
    }

    pub fn course(&self) -> &CourseFile {
        &self.course
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn dt(&self) -> f64 {
        self.course.dt
    }

    pub fn horizon(&self) -> usize {
        self.course.horizon
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.course.x0)
    }

    pub fn goal(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.course.goal)
    }

    pub fn u_eq(&self) -> DVector<f64> {
        match &self.course.u_eq {
            Some(u) => DVector::from_column_slice(u),
            None => DVector::zeros(self.control_dim()),
        }
    }

    pub fn true_dynamics(&self) -> &Arc<dyn ContinuousDynamics> {
        &self.dynamics
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn safety(&self) -> Arc<dyn SafetyFunction> {
        Arc::new(self.constraints.clone())
    }

    pub fn plant(&self) -> Rk4Plant {
        Rk4Plant::new(self.dynamics.clone(), 1)
    }

    pub fn true_model(&self) -> Arc<dyn DynamicsModel> {
        Arc::new(KnownDynamics(self.dynamics.clone()))
    }

    /// Exact ZOH for the linear benchmark, Euler otherwise.
    pub fn discretization(&self) -> Discretization {
        match self.name {
            EnvironmentName::Linear => Discretization::ZeroOrderHold,
            _ => Discretization::Euler,
        }
    }

    /// Wrap a GP trained on [`generate_training_data`] output as the
    /// environment's dynamics model.
    pub fn learned_model(&self, gp: GpModel) -> Result<Arc<dyn DynamicsModel>> {
        if gp.mode() != TargetMode::ContinuousDerivative {
            return Err(Error::invalid("environment models are trained on continuous derivatives"));
        }
        match self.name {
            EnvironmentName::Quadrotor => Ok(Arc::new(QuadrotorGreyBox::new(gp)?)),
            _ => Ok(Arc::new(GpDynamics::new(gp, self.state_dim())?)),
        }
    }

    /// Barrier configuration shifted at the goal.
    pub fn barrier_config(&self, phi: f64) -> BarrierConfig {
        BarrierConfig {
            shift_point: Some(self.course.goal.clone()),
            phi,
            ..Default::default()
        }
    }

    /// The course cost over `[x; z]` with `barrier_dim` barrier states.
    /// `barrier_weight` overrides the course's running and terminal
    /// barrier weights.
    pub fn cost(&self, barrier_dim: usize, barrier_weight: Option<f64>) -> Result<QuadraticCost> {
        let c = &self.course.cost;
        let x_goal = self.goal();
        let goal = x_goal.iter().copied().chain(std::iter::repeat_n(0.0, barrier_dim));
        QuadraticCost::diagonal(
            &c.state_weights,
            barrier_weight.unwrap_or(c.barrier_weight),
            barrier_dim,
            &c.control_weights,
            &c.terminal_state_weights,
            barrier_weight.unwrap_or(c.terminal_barrier_weight),
            DVector::from_iterator(self.state_dim() + barrier_dim, goal),
        )?
        .with_control_goal(self.u_eq())
    }

    pub fn initial_controls(&self, horizon: usize) -> Vec<DVector<f64>> {
        vec![self.u_eq(); horizon]
    }

    /// Names of the GP input columns.
    pub fn input_names(&self) -> Vec<String> {
        match self.name {
            EnvironmentName::Linear => names(&["x1", "x2", "u"]),
            EnvironmentName::Dubins => names(&["x", "y", "theta", "u1", "u2"]),
            EnvironmentName::Quadrotor => names(quadrotor::FEATURE_NAMES),
        }
    }

    /// Names of the GP target columns.
    pub fn target_names(&self) -> Vec<String> {
        match self.name {
            EnvironmentName::Linear => names(&["dx1", "dx2"]),
            EnvironmentName::Dubins => names(&["dx", "dy", "dtheta"]),
            EnvironmentName::Quadrotor => names(quadrotor::TARGET_NAMES),
        }
    }

    /// GP input row and target row for one `(x, u)` pair.
    fn sample_row(&self, x: &DVector<f64>, u: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let f = self.dynamics.f(x, u);
        match self.name {
            EnvironmentName::Quadrotor => (
                quadrotor::features(x, u),
                f.rows(6, 6).iter().copied().collect(),
            ),
            _ => (x.iter().chain(u.iter()).copied().collect(), f.iter().copied().collect()),
        }
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Run the environment's data recipe. Targets are exact derivatives from
/// the simulator; constraints are ignored during collection.
pub fn generate_training_data(env: &Environment, seed: u64) -> Result<Dataset> {
    let (n, m) = (env.state_dim(), env.control_dim());
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut push = |x: &DVector<f64>, u: &DVector<f64>| {
        let (i, t) = env.sample_row(x, u);
        inputs.push(i);
        targets.push(t);
    };
    match &env.course.recipe {
        DataRecipe::UniformBox { count, low, high } => {
            if !(low < high) || *count == 0 {
                return Err(Error::invalid("uniform box needs low < high and a positive count"));
            }
            let mut rng = substream(seed, Stream::Data, 0);
            for _ in 0..*count {
                let x = DVector::from_fn(n, |_, _| rng.random_range(*low..*high));
                let u = DVector::from_fn(m, |_, _| rng.random_range(*low..*high));
                push(&x, &u);
            }
        }
        DataRecipe::Sinusoids {
            trajectories,
            points_per_trajectory,
            sample_every,
            center,
            amplitude,
            frequency,
            starts,
        } => {
            if starts.is_empty() || *sample_every == 0 || !(frequency[0] <= frequency[1]) {
                return Err(Error::invalid("sinusoid recipe needs starts, a sampling stride and a frequency range"));
            }
            let plant = env.plant();
            let dt = env.dt();
            for j in 0..*trajectories {
                let mut rng = substream(seed, Stream::Data, j as u64);
                let omega: Vec<f64> = (0..m).map(|_| rng.random_range(frequency[0]..=frequency[1])).collect();
                let phase: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                let mut x = vector(&starts[j % starts.len()], n, "recipe start")?;
                let mut t = 0.0;
                for k in 0..points_per_trajectory * sample_every {
                    let u = DVector::from_fn(m, |i, _| center + amplitude * (omega[i] * t + phase[i]).sin());
                    if k % sample_every == 0 {
                        push(&x, &u);
                    }
                    x = plant.advance(&x, &u, dt);
                    t += dt;
                }
            }
        }
        DataRecipe::HoverExcitation {
            trajectories,
            steps,
            thrust_amplitude,
            torque_amplitude,
            ..
        } => {
            if env.name != EnvironmentName::Quadrotor {
                return Err(Error::invalid("hover excitation applies to the quadrotor only"));
            }
            let params = QuadrotorParams::default();
            let plant = env.plant();
            let dt = env.dt();
            for j in 0..*trajectories {
                let mut rng = substream(seed, Stream::Data, j as u64);
                let mut x = env.x0();
                for i in 3..6 {
                    x[i] = rng.random_range(-0.1..0.1);
                }
                let omega: Vec<f64> = (0..4).map(|_| rng.random_range(1.0..8.0)).collect();
                let phase: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                for k in 0..*steps {
                    let t = k as f64 * dt;
                    let excite = |i: usize, a: f64| a * (omega[i] * t + phase[i]).sin();
                    let mut u = quadrotor::attitude_hold(&params, &x);
                    u[0] += excite(0, *thrust_amplitude);
                    for i in 1..4 {
                        u[i] += excite(i, *torque_amplitude);
                    }
                    push(&x, &u);
                    x = plant.advance(&x, &u, dt);
                }
            }
        }
    }
    let data = Dataset::from_rows(&inputs, &targets, TargetMode::ContinuousDerivative)?;
    match &env.course.recipe {
        DataRecipe::HoverExcitation { max_rows, .. } => data.subsample(*max_rows, seed),
        _ => Ok(data),
    }
}
