//! Roundoff sweeps over the number of time steps.
//!
//! Every cell is compared with a float64 run of the same scheme on the same
//! grid, integrated independently of the low-precision trajectory.

use std::io::Write;

use super::oracle::relative_error;
use super::run_once;
use crate::adjoint::{HalfSquaredNorm, Objective, ScalingPolicy};
use crate::csvio::format_value;
use crate::dynamics::{MlpField, Params, PolyDecayField, VelocityField};
use crate::error::{Error, Result};
use crate::integrate::{Scheme, TimeGrid};
use crate::parallel::ExecMode;
use crate::precision::FloatFormat;

#[derive(Clone, Debug, PartialEq)]
pub enum SweepField {
    Poly { x: Vec<f64>, theta: [f64; 3] },
    Mlp { widths: Vec<usize>, seed: u64, x: Vec<f64> },
}

impl SweepField {
    /// Decay of eight independent components, every quantity well inside
    /// the float16 normal range.
    pub fn mild_poly() -> Self {
        SweepField::Poly {
            x: (0..8).map(|k| 0.5 + 0.2 * k as f64).collect(),
            theta: [0.5, -1.0, 0.8],
        }
    }

    pub fn default_mlp() -> Self {
        SweepField::Mlp {
            widths: vec![2, 32, 32, 2],
            seed: 0,
            x: vec![0.6, -0.4],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepField::Poly { .. } => "poly",
            SweepField::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub field: SweepField,
    pub schemes: Vec<Scheme>,
    pub formats: Vec<FloatFormat>,
    pub policy: ScalingPolicy,
    pub steps: Vec<usize>,
    pub t_final: f64,
    pub high: FloatFormat,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            field: SweepField::mild_poly(),
            schemes: vec![Scheme::Euler, Scheme::Rk4],
            formats: vec![FloatFormat::FLOAT16, FloatFormat::BFLOAT16],
            policy: ScalingPolicy::dynamic(),
            steps: (6..=12).map(|k| 1usize << k).collect(),
            t_final: 1.0,
            high: FloatFormat::FLOAT32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub field: String,
    pub scheme: Scheme,
    pub fmt: String,
    pub policy: String,
    pub steps: usize,
    pub re_y: f64,
    pub re_dx: f64,
    pub re_dtheta: f64,
    pub status: String,
}

impl SweepRow {
    pub const HEADER: &'static str = "field,scheme,fmt,policy,N,RE_y(T),RE_dx,RE_dtheta,status";

    pub fn errors(&self) -> [f64; 3] {
        [self.re_y, self.re_dx, self.re_dtheta]
    }
}

pub fn run_sweep(config: &SweepConfig, mode: ExecMode) -> Result<Vec<SweepRow>> {
    if config.steps.is_empty() || config.steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("step counts must be non-empty and strictly increasing".into()));
    }
    match &config.field {
        SweepField::Poly { x, theta } => {
            let params = Params::new(theta.to_vec())?;
            sweep_field(config, &PolyDecayField::with_dim(x.len()), x, &params, mode)
        }
        SweepField::Mlp { widths, seed, x } => {
            let field = MlpField::new(widths.clone())?;
            let params = field.init_params(*seed);
            sweep_field(config, &field, x, &params, mode)
        }
    }
}

fn sweep_field<F: VelocityField>(
    config: &SweepConfig,
    field: &F,
    x: &[f64],
    params: &Params,
    mode: ExecMode,
) -> Result<Vec<SweepRow>> {
    let objective = Objective::terminal_only(HalfSquaredNorm);
    let mut cells = Vec::new();
    for &scheme in &config.schemes {
        for &fmt in &config.formats {
            for &n in &config.steps {
                cells.push((scheme, fmt, n));
            }
        }
    }
    let f64_ = FloatFormat::FLOAT64;
    let rows = mode.map_range(cells.len(), |k| -> Result<SweepRow> {
        let (scheme, lo, n) = cells[k];
        let grid = TimeGrid::equidistant(config.t_final, n)?;
        let reference = run_once(scheme, field, x, &grid, params, &objective, f64_, f64_, ScalingPolicy::Unscaled)?;
        let (Some(y_ref), Some(g_ref)) = (reference.terminal, reference.gradients) else {
            return Err(Error::Config(format!("float64 reference failed: {}", reference.status)));
        };
        let hi = if lo.is_subset_of(&config.high) { config.high } else { lo };
        let out = run_once(scheme, field, x, &grid, params, &objective, lo, hi, config.policy)?;
        let re_y = out.terminal.map_or(f64::INFINITY, |y| relative_error(&y, &y_ref));
        let (re_dx, re_dtheta) = out.gradients.map_or((f64::INFINITY, f64::INFINITY), |g| {
            (relative_error(&g.d_x, &g_ref.d_x), relative_error(&g.d_theta, &g_ref.d_theta))
        });
        Ok(SweepRow {
            field: config.field.name().to_string(),
            scheme,
            fmt: lo.name().to_string(),
            policy: config.policy.name().to_string(),
            steps: n,
            re_y,
            re_dx,
            re_dtheta,
            status: out.status.to_string(),
        })
    });
    rows.into_iter().collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", SweepRow::HEADER)?;
    for r in rows {
        write!(out, "{},{},{},{},{}", r.field, r.scheme.name(), r.fmt, r.policy, r.steps)?;
        for e in r.errors() {
            write!(out, ",{}", format_value(e))?;
        }
        writeln!(out, ",{}", r.status)?;
    }
    Ok(())
}

/// Largest over smallest value of each error column, grouped by (scheme, fmt).
pub fn flatness_ratios(rows: &[SweepRow]) -> Vec<(Scheme, String, [f64; 3])> {
    let mut out: Vec<(Scheme, String, [f64; 3])> = Vec::new();
    for r in rows {
        if out.iter().any(|(s, f, _)| *s == r.scheme && *f == r.fmt) {
            continue;
        }
        let group: Vec<&SweepRow> = rows.iter().filter(|q| q.scheme == r.scheme && q.fmt == r.fmt).collect();
        let ratio = |j: usize| {
            let vals = group.iter().map(|q| q.errors()[j]);
            let max = vals.clone().fold(0.0, f64::max);
            let min = vals.fold(f64::INFINITY, f64::min);
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        };
        out.push((r.scheme, r.fmt.clone(), [ratio(0), ratio(1), ratio(2)]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float64_self_comparison_is_exact_enough() {
        for field in [SweepField::mild_poly(), SweepField::Mlp {
            widths: vec![2, 8, 2],
            seed: 1,
            x: vec![0.5, 0.1],
        }] {
            let config = SweepConfig {
                field,
                formats: vec![FloatFormat::FLOAT64],
                steps: vec![4, 16, 64],
                high: FloatFormat::FLOAT64,
                ..SweepConfig::default()
            };
            let rows = run_sweep(&config, ExecMode::Parallel).unwrap();
            assert_eq!(rows.len(), 6);
            for r in rows {
                assert!(r.errors().iter().all(|&e| e <= 1e-12), "{r:?}");
            }
        }
    }

    #[test]
    fn rows_are_ordered_and_csv_matches() {
        let config = SweepConfig {
            steps: vec![8, 16],
            ..SweepConfig::default()
        };
        let rows = run_sweep(&config, ExecMode::Parallel).unwrap();
        let seq = run_sweep(&config, ExecMode::Sequential).unwrap();
        assert_eq!(rows, seq);
        let keys: Vec<(Scheme, &str, usize)> = rows.iter().map(|r| (r.scheme, r.fmt.as_str(), r.steps)).collect();
        assert_eq!(keys[0], (Scheme::Euler, "float16", 8));
        assert_eq!(keys[7], (Scheme::Rk4, "bfloat16", 16));
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
    }

    #[test]
    fn unsorted_step_list_is_rejected() {
        let config = SweepConfig {
            steps: vec![16, 8],
            ..SweepConfig::default()
        };
        assert!(run_sweep(&config, ExecMode::Sequential).is_err());
    }
}
