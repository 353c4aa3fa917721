use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constraint functions `h_i(x)`; the safe set is `{x | h_i(x) > 0 ∀i}`.
pub trait SafetyFunction: Send + Sync {
    fn state_dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Row `i` is `∂h_i/∂x`.
    fn grad(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn labels(&self) -> Vec<String>;

    fn min_h(&self, x: &DVector<f64>) -> f64 {
        self.eval(x).iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn is_safe(&self, x: &DVector<f64>) -> bool {
        self.eval(x).iter().all(|&h| h > 0.0)
    }

    /// Signed distance-like margin to the boundary; defaults to `min_h`.
    fn clearance(&self, x: &DVector<f64>) -> f64 {
        self.min_h(x)
    }
}

/// One constraint as it appears in a course file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Constraint {
    /// Keep out of a ball: `‖x_I - c‖² - (r + margin)² > 0`.
    Circle {
        center: Vec<f64>,
        radius: f64,
        #[serde(default)]
        margin: f64,
        /// State indices of the position coordinates; defaults to `0..center.len()`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        indices: Option<Vec<usize>>,
    },
    /// `normal · x_I - offset > 0`
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
        indices: Vec<usize>,
    },
    /// A named built-in constraint.
    Expression {
        name: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        params: Vec<f64>,
    },
}

pub const BUILTIN_EXPRESSIONS: &[&str] = &["linear_benchmark_obstacle", "altitude_floor"];

impl Constraint {
    pub fn circle(center: Vec<f64>, radius: f64) -> Self {
        Constraint::Circle {
            center,
            radius,
            margin: 0.0,
            indices: None,
        }
    }

    /// Expand named expressions into primitive constraints.
    fn resolve(&self) -> Result<Constraint> {
        match self {
            Constraint::Expression { name, params } => match name.as_str() {
                // (x₁ - 2)² + (x₂ - 2.2)² - 1
                "linear_benchmark_obstacle" => Ok(Constraint::circle(vec![2.0, 2.2], 1.0)),
                // altitude x[idx] above `floor`; params = [idx, floor]
                "altitude_floor" => {
                    let (idx, floor) = match params.as_slice() {
                        [i, f] if *i >= 0.0 && i.fract() == 0.0 => (*i as usize, *f),
                        _ => return Err(Error::invalid("altitude_floor needs params [index, floor]")),
                    };
                    Ok(Constraint::HalfSpace {
                        normal: vec![1.0],
                        offset: floor,
                        indices: vec![idx],
                    })
                }
                other => Err(Error::invalid(format!(
                    "unknown expression constraint `{other}`; valid names: {}",
                    BUILTIN_EXPRESSIONS.join(", ")
                ))),
            },
            c => Ok(c.clone()),
        }
    }

    fn indices(&self) -> Vec<usize> {
        match self {
            Constraint::Circle {
                center, indices, ..
            } => indices.clone().unwrap_or_else(|| (0..center.len()).collect()),
            Constraint::HalfSpace { indices, .. } => indices.clone(),
            Constraint::Expression { .. } => Vec::new(),
        }
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        let idx = self.indices();
        if idx.iter().any(|&i| i >= state_dim) {
            return Err(Error::invalid(format!(
                "constraint references a state index outside 0..{state_dim}"
            )));
        }
        match self {
            Constraint::Circle {
                center,
                radius,
                margin,
                ..
            } => {
                if center.len() != idx.len() || center.is_empty() {
                    return Err(Error::invalid("circle center and indices differ in length"));
                }
                if !(radius.is_finite() && *radius > 0.0 && margin.is_finite() && radius + margin > 0.0) {
                    return Err(Error::invalid("circle radius (plus margin) must be positive"));
                }
            }
            Constraint::HalfSpace { normal, offset, .. } => {
                if normal.len() != idx.len() || !offset.is_finite() {
                    return Err(Error::invalid("half-space normal and indices differ in length"));
                }
            }
            Constraint::Expression { .. } => unreachable!("resolved before validation"),
        }
        Ok(())
    }

    fn label(&self) -> String {
        match self {
            Constraint::Circle {
                center, radius, ..
            } => format!("circle(c={center:?}, r={radius})"),
            Constraint::HalfSpace {
                normal, offset, ..
            } => format!("half_space(n={normal:?}, b={offset})"),
            Constraint::Expression { name, .. } => name.clone(),
        }
    }

    fn eval_and_grad(&self, x: &DVector<f64>, grad_row: &mut [f64]) -> f64 {
        let idx = self.indices();
        match self {
            Constraint::Circle {
                center,
                radius,
                margin,
                ..
            } => {
                let mut s = 0.0;
                for (k, &i) in idx.iter().enumerate() {
                    let d = x[i] - center[k];
                    s += d * d;
                    grad_row[i] = 2.0 * d;
                }
                let r = radius + margin;
                s - r * r
            }
            Constraint::HalfSpace { normal, offset, .. } => {
                let mut s = -offset;
                for (k, &i) in idx.iter().enumerate() {
                    s += normal[k] * x[i];
                    grad_row[i] = normal[k];
                }
                s
            }
            Constraint::Expression { .. } => unreachable!("resolved before evaluation"),
        }
    }
}

/// A list of constraints over an `n`-dimensional state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    state_dim: usize,
    constraints: Vec<Constraint>,
    labels: Vec<String>,
}

impl ConstraintSet {
    pub fn new(state_dim: usize, constraints: &[Constraint]) -> Result<Self> {
        let resolved = constraints
            .iter()
            .map(Constraint::resolve)
            .collect::<Result<Vec<_>>>()?;
        for c in &resolved {
            c.validate(state_dim)?;
        }
        Ok(Self {
            state_dim,
            labels: constraints.iter().map(Constraint::label).collect(),
            constraints: resolved,
        })
    }

    pub fn empty(state_dim: usize) -> Self {
        Self {
            state_dim,
            constraints: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }
}

impl SafetyFunction for ConstraintSet {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut scratch = vec![0.0; self.state_dim];
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| c.eval_and_grad(x, &mut scratch)),
        )
    }

    fn grad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.constraints.len(), self.state_dim);
        let mut row = vec![0.0; self.state_dim];
        for (i, c) in self.constraints.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            c.eval_and_grad(x, &mut row);
            for (j, v) in row.iter().enumerate() {
                g[(i, j)] = *v;
            }
        }
        g
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    /// Signed distance to the nearest circle boundary, in state units
    /// (`‖x_I - c‖ - (r + margin)`), or `min_h` when there are no circles.
    fn clearance(&self, x: &DVector<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for c in &self.constraints {
            let d = match c {
                Constraint::Circle {
                    center,
                    radius,
                    margin,
                    ..
                } => {
                    let idx = c.indices();
                    let s: f64 = idx
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| (x[i] - center[k]).powi(2))
                        .sum();
                    s.sqrt() - (radius + margin)
                }
                other => {
                    let mut g = vec![0.0; self.state_dim];
                    other.eval_and_grad(x, &mut g)
                }
            };
            best = best.min(d);
        }
        best
    }
}
