//! Experiment runners, oracles and configuration for the `mpode` CLI.

use crate::adjoint::{backward_with_report, BackwardOptions, BackwardReport, Gradients, Objective, ScalingPolicy};
use crate::dynamics::{Params, VelocityField};
use crate::error::Error;
use crate::integrate::{forward, Scheme, TimeGrid};
use crate::precision::FloatFormat;

pub mod config;
pub mod oracle;
pub mod sgd_demo;
pub mod sweep;
pub mod table;

pub use config::{ExperimentConfig, FieldSpec};
pub use sgd_demo::{run_sgd_demo, SgdConfig, SgdRecord, SgdResult};
pub use sweep::{run_sweep, SweepConfig, SweepField, SweepRow};
pub use table::{run_table, ErrorRow, TableConfig};

/// Outcome of one forward plus backward run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Stored terminal state, or `None` if the forward pass overflowed.
    pub terminal: Option<Vec<f64>>,
    pub gradients: Option<Gradients>,
    pub report: Option<BackwardReport>,
    pub status: &'static str,
}

/// Forward and backward in `(lo, hi)`, folding solver errors into a status string.
#[allow(clippy::too_many_arguments)]
pub fn run_once<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    x: &[f64],
    grid: &TimeGrid,
    params: &Params,
    objective: &Objective,
    lo: FloatFormat,
    hi: FloatFormat,
    policy: ScalingPolicy,
) -> crate::error::Result<RunOutcome> {
    let traj = match forward(scheme, field, x, grid, params, lo, hi) {
        Ok(t) => t,
        Err(Error::NonFiniteState { .. }) => {
            return Ok(RunOutcome {
                terminal: None,
                gradients: None,
                report: None,
                status: "forward_overflow",
            })
        }
        Err(e) => return Err(e),
    };
    let terminal = Some(traj.terminal().to_vec());
    let options = BackwardOptions::with_policy(policy);
    match backward_with_report(scheme, field, &traj, params, objective, &options) {
        Ok((g, report)) => Ok(RunOutcome {
            terminal,
            gradients: Some(g),
            report: Some(report),
            status: "ok",
        }),
        Err(Error::ExhaustedRescale { .. }) => Ok(RunOutcome {
            terminal,
            gradients: None,
            report: None,
            status: "exhausted_rescale",
        }),
        Err(Error::NonFiniteAccumulator { .. }) => Ok(RunOutcome {
            terminal,
            gradients: None,
            report: None,
            status: "nonfinite_accumulator",
        }),
        Err(e) => Err(e),
    }
}
