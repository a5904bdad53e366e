//! Relative errors of the polynomial-decay problem against its closed-form solution.

use std::io::Write;

use super::oracle::{analytic_gradient, analytic_solution, scalar_relative_error};
use super::run_once;
use crate::adjoint::{HalfSquaredNorm, Objective, ScalingPolicy};
use crate::csvio::format_value;
use crate::dynamics::{Params, PolyDecayField};
use crate::error::Result;
use crate::integrate::{Scheme, TimeGrid};
use crate::parallel::ExecMode;
use crate::precision::FloatFormat;

#[derive(Clone, Debug, PartialEq)]
pub struct TableConfig {
    pub scheme: Scheme,
    pub steps: usize,
    pub t_final: f64,
    pub x: f64,
    pub theta: [f64; 3],
    pub formats: Vec<FloatFormat>,
    pub policies: Vec<ScalingPolicy>,
    pub high: FloatFormat,
}

impl Default for TableConfig {
    /// The stiff-looking decay problem whose initial state sits near the float16
    /// maximum scaled down by 180, with `θ₃ = 2^-16` subnormal in float16.
    fn default() -> Self {
        TableConfig {
            scheme: Scheme::Rk4,
            steps: 400,
            t_final: 2.65,
            x: 65504.0 / 180.0,
            theta: [8.0, -11.0, 2f64.powi(-16)],
            formats: vec![FloatFormat::FLOAT32, FloatFormat::FLOAT16, FloatFormat::BFLOAT16],
            policies: vec![ScalingPolicy::Unscaled, ScalingPolicy::dynamic()],
            high: FloatFormat::FLOAT32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub fmt: String,
    pub policy: String,
    pub steps: usize,
    pub re_y: f64,
    pub re_dx: f64,
    pub re_dtheta: [f64; 3],
    pub status: String,
}

impl ErrorRow {
    pub const HEADER: &'static str = "fmt,policy,N,RE_y(T),RE_dy0,RE_dtheta1,RE_dtheta2,RE_dtheta3,status";

    /// `[RE_y(T), RE_dy0, RE_dθ₁, RE_dθ₂, RE_dθ₃]`.
    pub fn errors(&self) -> [f64; 5] {
        [self.re_y, self.re_dx, self.re_dtheta[0], self.re_dtheta[1], self.re_dtheta[2]]
    }
}

pub fn run_table(config: &TableConfig, mode: ExecMode) -> Result<Vec<ErrorRow>> {
    let field = PolyDecayField::new();
    let grid = TimeGrid::equidistant(config.t_final, config.steps)?;
    let params = Params::new(config.theta.to_vec())?;
    let objective = Objective::terminal_only(HalfSquaredNorm);
    let y_exact = analytic_solution(config.t_final, config.x, &config.theta);
    let g_exact = analytic_gradient(config.t_final, config.x, &config.theta);

    let cells: Vec<(FloatFormat, ScalingPolicy)> = config
        .formats
        .iter()
        .flat_map(|&f| config.policies.iter().map(move |&p| (f, p)))
        .collect();
    let rows = mode.map_range(cells.len(), |k| -> Result<ErrorRow> {
        let (lo, policy) = cells[k];
        let hi = if lo.is_subset_of(&config.high) { config.high } else { lo };
        let out = run_once(config.scheme, &field, &[config.x], &grid, &params, &objective, lo, hi, policy)?;
        let re_y = out.terminal.map_or(f64::INFINITY, |y| scalar_relative_error(y[0], y_exact));
        let (re_dx, re_dtheta) = match &out.gradients {
            Some(g) => (
                scalar_relative_error(g.d_x[0], g_exact[0]),
                [0, 1, 2].map(|j| scalar_relative_error(g.d_theta[j], g_exact[j + 1])),
            ),
            None => (f64::INFINITY, [f64::INFINITY; 3]),
        };
        Ok(ErrorRow {
            fmt: lo.name().to_string(),
            policy: policy.name().to_string(),
            steps: config.steps,
            re_y,
            re_dx,
            re_dtheta,
            status: out.status.to_string(),
        })
    });
    rows.into_iter().collect()
}

pub fn write_table_csv<W: Write>(rows: &[ErrorRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", ErrorRow::HEADER)?;
    for r in rows {
        write!(out, "{},{},{}", r.fmt, r.policy, r.steps)?;
        for e in r.errors() {
            write!(out, ",{}", format_value(e))?;
        }
        writeln!(out, ",{}", r.status)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float64_cell_matches_closed_form_closely() {
        let config = TableConfig {
            formats: vec![FloatFormat::FLOAT64],
            policies: vec![ScalingPolicy::Unscaled],
            high: FloatFormat::FLOAT64,
            ..TableConfig::default()
        };
        let rows = run_table(&config, ExecMode::Sequential).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[0].errors().iter().all(|&e| e < 1e-4), "{:?}", rows[0]);
    }

    #[test]
    fn csv_has_one_line_per_cell() {
        let rows = run_table(&TableConfig::default(), ExecMode::Parallel).unwrap();
        assert_eq!(rows.len(), 6);
        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with(ErrorRow::HEADER));
        assert!(text.lines().nth(1).unwrap().starts_with("float32,none,400,"));
    }
}
