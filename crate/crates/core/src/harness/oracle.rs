//! Reference values: closed forms for the polynomial-decay problem and
//! central finite differences of the float64 discrete objective.

use crate::adjoint::{Objective, TerminalState};
use crate::dynamics::{Params, VelocityField};
use crate::error::Result;
use crate::integrate::{forward, Scheme, TimeGrid};
use crate::parallel::ExecMode;
use crate::precision::FloatFormat;

const F64: FloatFormat = FloatFormat::FLOAT64;

fn decay_exponent(t: f64, theta: &[f64; 3]) -> f64 {
    -(theta[0] / 3.0 * t.powi(3) + theta[1] / 2.0 * t * t + theta[2] * t)
}

/// `y(t) = x exp(−(θ₁t³/3 + θ₂t²/2 + θ₃t))`.
pub fn analytic_solution(t: f64, x: f64, theta: &[f64; 3]) -> f64 {
    x * decay_exponent(t, theta).exp()
}

/// `(dL/dx, dL/dθ₁, dL/dθ₂, dL/dθ₃)` of `L = ½ y(T)²`.
pub fn analytic_gradient(t_final: f64, x: f64, theta: &[f64; 3]) -> [f64; 4] {
    let e = decay_exponent(t_final, theta).exp();
    let y = x * e;
    let y2 = y * y;
    [x * e * e, -y2 * t_final.powi(3) / 3.0, -y2 * t_final * t_final / 2.0, -y2 * t_final]
}

/// Float64 value of the discrete objective.
pub fn discrete_objective<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    x: &[f64],
    grid: &TimeGrid,
    params: &Params,
    objective: &Objective,
) -> Result<f64> {
    let traj = forward(scheme, field, x, grid, params, F64, F64)?;
    objective.value(&traj, params.as_slice(), TerminalState::Stored)
}

/// Central differences of the float64 discrete objective, over `x` then `θ`.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    x: &[f64],
    grid: &TimeGrid,
    params: &Params,
    objective: &Objective,
    eps: f64,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let n = x.len();
    let parts = mode.map_range(n + params.len(), |k| -> Result<f64> {
        let eval = |delta: f64| {
            let mut xp = x.to_vec();
            let mut pp = params.clone();
            if k < n {
                xp[k] += delta;
            } else {
                pp.as_mut_slice()[k - n] += delta;
            }
            discrete_objective(scheme, field, &xp, grid, &pp, objective)
        };
        Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
    });
    parts.into_iter().collect()
}

/// Finite differences of the float64 discrete objective with respect to each
/// grid point: central, or second-order one-sided where `t_i − eps < 0`.
pub fn fd_time_gradient<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    x: &[f64],
    grid: &TimeGrid,
    params: &Params,
    objective: &Objective,
    eps: f64,
) -> Result<Vec<f64>> {
    let t = grid.points();
    (0..t.len())
        .map(|i| {
            let eval = |delta: f64| {
                let mut tp = t.to_vec();
                tp[i] += delta;
                discrete_objective(scheme, field, x, &TimeGrid::new(tp)?, params, objective)
            };
            if t[i] - eps < 0.0 {
                Ok((-3.0 * eval(0.0)? + 4.0 * eval(eps)? - eval(2.0 * eps)?) / (2.0 * eps))
            } else {
                Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
            }
        })
        .collect()
}

/// `‖approx − exact‖∞ / ‖exact‖∞`; `∞` when `approx` is not finite.
pub fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
    assert_eq!(approx.len(), exact.len());
    if approx.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let num = approx.iter().zip(exact).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
    let den = exact.iter().map(|e| e.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub fn scalar_relative_error(approx: f64, exact: f64) -> f64 {
    relative_error(&[approx], &[exact])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::HalfSquaredNorm;
    use crate::dynamics::LinearField;

    #[test]
    fn analytic_edge_cases() {
        let theta = [1.0, -2.0, 0.5];
        assert_eq!(analytic_solution(0.0, 3.0, &theta), 3.0);
        assert_eq!(analytic_solution(1.7, 3.0, &[0.0; 3]), 3.0);
        let g = analytic_gradient(2.0, 3.0, &[0.0; 3]);
        assert_eq!(g[0], 3.0);
        assert_eq!(g[3], -18.0);
        assert_eq!(analytic_gradient(2.0, 0.0, &theta), [0.0, -0.0, -0.0, -0.0]);
    }

    #[test]
    fn analytic_gradient_matches_differences_of_solution() {
        let (t, x, theta) = (1.3, 0.8, [0.4, -0.7, 0.2]);
        let loss = |x: f64, th: [f64; 3]| 0.5 * analytic_solution(t, x, &th).powi(2);
        let g = analytic_gradient(t, x, &theta);
        let eps = 1e-6;
        let fd_x = (loss(x + eps, theta) - loss(x - eps, theta)) / (2.0 * eps);
        assert!(scalar_relative_error(g[0], fd_x) < 1e-8);
        for k in 0..3 {
            let (mut p, mut m) = (theta, theta);
            p[k] += eps;
            m[k] -= eps;
            let fd = (loss(x, p) - loss(x, m)) / (2.0 * eps);
            assert!(scalar_relative_error(g[k + 1], fd) < 1e-8, "theta{k}");
        }
    }

    #[test]
    fn fd_on_zero_field_returns_state() {
        let f = LinearField::new(2);
        let grid = TimeGrid::equidistant(1.0, 3).unwrap();
        let obj = Objective::terminal_only(HalfSquaredNorm);
        let g = fd_gradient(Scheme::Rk4, &f, &[0.5, -2.0], &grid, &Params::zeros(4), &obj, 1e-4, ExecMode::Sequential).unwrap();
        assert!(relative_error(&g[..2], &[0.5, -2.0]) <= 1e-9);
    }

    #[test]
    fn relative_error_conventions() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[f64::NAN], &[1.0]), f64::INFINITY);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 3.0], &[1.0, 4.0]), 0.25);
    }
}
