//! Discrete objectives `L = Σ_i w_i R(t_i, y_i, θ) + C(y_N)`.

use crate::error::{Error, Result};
use crate::integrate::{TimeGrid, Trajectory};

pub trait TerminalCost: Send + Sync {
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
}

pub trait RunningCost: Send + Sync {
    fn value(&self, t: f64, y: &[f64], theta: &[f64]) -> f64;
    fn grad_y(&self, t: f64, y: &[f64], theta: &[f64]) -> Vec<f64>;
    fn grad_theta(&self, t: f64, y: &[f64], theta: &[f64]) -> Vec<f64>;
    fn grad_t(&self, _t: f64, _y: &[f64], _theta: &[f64]) -> f64 {
        0.0
    }
}

/// `C(y) = ½‖y‖²`.
#[derive(Clone, Debug, Default)]
pub struct HalfSquaredNorm;

impl TerminalCost for HalfSquaredNorm {
    fn value(&self, y: &[f64]) -> f64 {
        0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
}

/// `C(y) = weight · ½‖y − target‖²`.
#[derive(Clone, Debug)]
pub struct SquaredError {
    pub target: Vec<f64>,
    pub weight: f64,
}

impl TerminalCost for SquaredError {
    fn value(&self, y: &[f64]) -> f64 {
        0.5 * self.weight * y.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.target).map(|(a, b)| self.weight * (a - b)).collect()
    }
}

/// `R(t, y, θ) = ½ state_weight ‖y‖² + ½ param_weight ‖θ‖²`.
#[derive(Clone, Debug)]
pub struct QuadraticRunning {
    pub state_weight: f64,
    pub param_weight: f64,
}

impl RunningCost for QuadraticRunning {
    fn value(&self, _t: f64, y: &[f64], theta: &[f64]) -> f64 {
        0.5 * self.state_weight * y.iter().map(|v| v * v).sum::<f64>()
            + 0.5 * self.param_weight * theta.iter().map(|v| v * v).sum::<f64>()
    }

    fn grad_y(&self, _t: f64, y: &[f64], _theta: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.state_weight * v).collect()
    }

    fn grad_theta(&self, _t: f64, _y: &[f64], theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|v| self.param_weight * v).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Quadrature {
    /// Composite trapezoidal rule on the solver grid.
    Trapezoid,
    /// Fixed weights, one per grid point, independent of the grid.
    Custom(Vec<f64>),
}

/// Which copy of the terminal state the terminal cost sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalState {
    /// The stored low-precision `y_N`.
    #[default]
    Stored,
    /// The high-precision accumulator after the last step.
    Accumulator,
}

pub struct Objective {
    pub terminal: Box<dyn TerminalCost>,
    pub running: Option<Box<dyn RunningCost>>,
    pub quadrature: Quadrature,
}

impl Objective {
    pub fn terminal_only(terminal: impl TerminalCost + 'static) -> Self {
        Objective {
            terminal: Box::new(terminal),
            running: None,
            quadrature: Quadrature::Trapezoid,
        }
    }

    pub fn with_running(terminal: impl TerminalCost + 'static, running: impl RunningCost + 'static) -> Self {
        Objective {
            terminal: Box::new(terminal),
            running: Some(Box::new(running)),
            quadrature: Quadrature::Trapezoid,
        }
    }

    pub fn weights(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        match &self.quadrature {
            Quadrature::Trapezoid => Ok(trapezoid_weights(grid.points())),
            Quadrature::Custom(w) => {
                if w.len() != grid.points().len() {
                    return Err(Error::Dimension(format!(
                        "{} quadrature weights for {} grid points",
                        w.len(),
                        grid.points().len()
                    )));
                }
                if w.iter().any(|&v| v.is_nan() || v < 0.0) {
                    return Err(Error::Config("quadrature weights must be nonnegative".into()));
                }
                Ok(w.clone())
            }
        }
    }

    /// Explicit partial `∂L/∂t` at fixed states: running-cost time derivatives
    /// plus the dependence of the trapezoid weights on the grid.
    pub(crate) fn explicit_time_partials(&self, grid: &TimeGrid, states: &[Vec<f64>], theta: &[f64], w: &[f64]) -> Vec<f64> {
        let t = grid.points();
        let n = t.len() - 1;
        let mut out = vec![0.0; n + 1];
        let Some(r) = &self.running else { return out };
        for i in 0..=n {
            out[i] += w[i] * r.grad_t(t[i], &states[i], theta);
        }
        if self.quadrature == Quadrature::Trapezoid {
            for i in 0..=n {
                let half = 0.5 * r.value(t[i], &states[i], theta);
                // w_i = (t_{min(i+1,N)} − t_{max(i−1,0)}) / 2
                out[(i + 1).min(n)] += half;
                out[i.saturating_sub(1)] -= half;
            }
        }
        out
    }

    /// `L` evaluated on a trajectory's stored states.
    pub fn value(&self, traj: &Trajectory, theta: &[f64], terminal: TerminalState) -> Result<f64> {
        let y_n = match terminal {
            TerminalState::Stored => traj.terminal(),
            TerminalState::Accumulator => &traj.final_hp[..],
        };
        let mut l = self.terminal.value(y_n);
        if let Some(r) = &self.running {
            let w = self.weights(&traj.grid)?;
            for (i, (&ti, y)) in traj.grid.points().iter().zip(&traj.states).enumerate() {
                l += w[i] * r.value(ti, y, theta);
            }
        }
        Ok(l)
    }
}

pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len() - 1;
    (0..=n)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i < n { t[i + 1] - t[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_weights_sum_to_interval_length() {
        let grid = TimeGrid::new(vec![0.0, 0.1, 0.4, 1.0, 2.5]).unwrap();
        let w = trapezoid_weights(grid.points());
        assert_eq!(w[0], 0.05);
        assert!((w.iter().sum::<f64>() - 2.5).abs() < 1e-15);
        assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn custom_weights_are_validated() {
        let grid = TimeGrid::equidistant(1.0, 2).unwrap();
        let mut obj = Objective::terminal_only(HalfSquaredNorm);
        obj.quadrature = Quadrature::Custom(vec![1.0, 2.0]);
        assert!(obj.weights(&grid).is_err());
        obj.quadrature = Quadrature::Custom(vec![1.0, -2.0, 0.0]);
        assert!(obj.weights(&grid).is_err());
        obj.quadrature = Quadrature::Custom(vec![1.0, 2.0, 0.0]);
        assert_eq!(obj.weights(&grid).unwrap(), vec![1.0, 2.0, 0.0]);
    }

    #[test]
    fn squared_error_gradient() {
        let c = SquaredError {
            target: vec![1.0, 2.0],
            weight: 4.0,
        };
        assert_eq!(c.value(&[2.0, 2.0]), 2.0);
        assert_eq!(c.gradient(&[2.0, 1.0]), vec![4.0, -4.0]);
    }
}
