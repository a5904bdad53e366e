//! TOML experiment description for `mpode solve`.
//!
//! ```toml
//! scheme = "rk4"
//! steps = 400
//! fmt_low = "float16"
//! policy = "dynamic"
//! seed = 0
//! output = "gradients.csv"
//! x = [363.9111111111111]
//!
//! [grid]
//! t_final = 2.65
//!
//! [field]
//! kind = "poly"
//! theta = [8.0, -11.0, 1.52587890625e-05]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::adjoint::{
    backward, BackwardOptions, Gradients, HalfSquaredNorm, Objective, QuadraticRunning, ScalingPolicy, TerminalState,
};
use crate::dynamics::{LinearField, MlpField, Params, PolyDecayField, VelocityField};
use crate::error::{Error, Result};
use crate::integrate::{forward, Scheme, TimeGrid, Trajectory};
use crate::precision::FloatFormat;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub steps: usize,
    pub fmt_low: String,
    #[serde(default = "default_high")]
    pub fmt_high: String,
    pub policy: String,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    /// Optional CSV of the stored trajectory.
    #[serde(default)]
    pub trajectory: Option<PathBuf>,
    #[serde(default)]
    pub terminal: TerminalState,
    pub x: Vec<f64>,
    pub grid: GridSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub running: Option<RunningSpec>,
}

fn default_high() -> String {
    "float32".into()
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_final: f64,
    #[serde(default = "default_true")]
    pub equidistant: bool,
    /// Explicit time points when `equidistant = false`.
    #[serde(default)]
    pub points: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    Poly {
        theta: [f64; 3],
    },
    Linear {
        /// Row-major `n × n` matrix.
        a: Vec<f64>,
    },
    Mlp {
        #[serde(default)]
        widths: Option<Vec<usize>>,
        /// Weight file written by `MlpField::save`; random initialization from `seed` otherwise.
        #[serde(default)]
        weights: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningSpec {
    pub state_weight: f64,
    pub param_weight: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        self.low()?;
        self.high()?;
        self.policy()?;
        Ok(())
    }

    pub fn low(&self) -> Result<FloatFormat> {
        parse_format(&self.fmt_low)
    }

    pub fn high(&self) -> Result<FloatFormat> {
        let hi = parse_format(&self.fmt_high)?;
        let lo = self.low()?;
        Ok(if lo.is_subset_of(&hi) { hi } else { lo })
    }

    pub fn policy(&self) -> Result<ScalingPolicy> {
        ScalingPolicy::from_name(&self.policy)
            .ok_or_else(|| Error::Config(format!("unknown policy {:?}; expected none, safe or dynamic", self.policy)))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        if self.grid.equidistant {
            TimeGrid::equidistant(self.grid.t_final, self.steps)
        } else {
            let points = self.grid.points.clone().ok_or_else(|| Error::Config("grid.points required".into()))?;
            if points.len() != self.steps + 1 || points.last() != Some(&self.grid.t_final) {
                return Err(Error::Config("grid.points must hold steps + 1 values ending at t_final".into()));
            }
            TimeGrid::new(points)
        }
    }

    fn objective(&self) -> Objective {
        match &self.running {
            Some(r) => Objective::with_running(
                HalfSquaredNorm,
                QuadraticRunning {
                    state_weight: r.state_weight,
                    param_weight: r.param_weight,
                },
            ),
            None => Objective::terminal_only(HalfSquaredNorm),
        }
    }

    /// Runs the forward and backward pass described by the configuration.
    pub fn solve(&self) -> Result<(Trajectory, Gradients)> {
        match &self.field {
            FieldSpec::Poly { theta } => {
                self.solve_with(&PolyDecayField::with_dim(self.x.len()), &Params::new(theta.to_vec())?)
            }
            FieldSpec::Linear { a } => {
                let n = self.x.len();
                self.solve_with(&LinearField::new(n), &Params::new(a.clone())?)
            }
            FieldSpec::Mlp { widths, weights } => {
                let (field, params) = match (weights, widths) {
                    (Some(path), _) => MlpField::load(path)?,
                    (None, Some(w)) => {
                        let field = MlpField::new(w.clone())?;
                        let params = field.init_params(self.seed);
                        (field, params)
                    }
                    (None, None) => return Err(Error::Config("mlp field needs widths or weights".into())),
                };
                self.solve_with(&field, &params)
            }
        }
    }

    fn solve_with<F: VelocityField>(&self, field: &F, params: &Params) -> Result<(Trajectory, Gradients)> {
        let grid = self.time_grid()?;
        let traj = forward(self.scheme, field, &self.x, &grid, params, self.low()?, self.high()?)?;
        let options = BackwardOptions {
            policy: self.policy()?,
            terminal: self.terminal,
            ..BackwardOptions::default()
        };
        let grads = backward(self.scheme, field, &traj, params, &self.objective(), &options)?;
        Ok((traj, grads))
    }
}

pub fn parse_format(name: &str) -> Result<FloatFormat> {
    FloatFormat::from_name(name)
        .ok_or_else(|| Error::Config(format!("unknown format {name:?}; expected float16, bfloat16, float32 or float64")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
scheme = "rk4"
steps = 40
fmt_low = "float16"
policy = "dynamic"
output = "g.csv"
x = [1.5]

[grid]
t_final = 1.0

[field]
kind = "poly"
theta = [0.5, -1.0, 0.8]
"#;

    #[test]
    fn parses_and_solves() {
        let config = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(config.high().unwrap(), FloatFormat::FLOAT32);
        assert_eq!(config.terminal, TerminalState::Stored);
        let (traj, grads) = config.solve().unwrap();
        assert_eq!(traj.states.len(), 41);
        assert_eq!(grads.d_t.len(), 41);
        assert!(grads.is_finite());
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("steps = 40", "steps = 0"),
            ("\"float16\"", "\"float8\""),
            ("\"dynamic\"", "\"sometimes\""),
            ("kind = \"poly\"", "kind = \"cubic\""),
        ] {
            assert!(ExperimentConfig::from_toml(&EXAMPLE.replace(from, to)).is_err(), "{to}");
        }
    }

    #[test]
    fn explicit_grid_points() {
        let text = EXAMPLE
            .replace("steps = 40", "steps = 3")
            .replace("t_final = 1.0", "t_final = 1.0\nequidistant = false\npoints = [0.0, 0.2, 0.7, 1.0]");
        let config = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config.time_grid().unwrap().points(), &[0.0, 0.2, 0.7, 1.0]);
    }
}
