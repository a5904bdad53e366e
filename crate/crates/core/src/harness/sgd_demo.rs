//! Fits an MLP velocity field to the flow of a linear teacher with SGD and a
//! dynamic loss scale.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{backward, sgd_step, BackwardOptions, LossScaler, Objective, ScalingPolicy, SquaredError, TerminalState};
use crate::csvio::format_value;
use crate::dynamics::{LinearField, MlpField, Params};
use crate::error::{Error, Result};
use crate::integrate::{forward, Scheme, TimeGrid};
use crate::parallel::ExecMode;
use crate::precision::FloatFormat;

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub fmt: FloatFormat,
    pub policy: ScalingPolicy,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub widths: Vec<usize>,
    pub scheme: Scheme,
    pub time_steps: usize,
    pub t_final: f64,
    /// Row-major teacher matrix.
    pub teacher: Vec<f64>,
    pub initial_loss_scale: f64,
    pub growth_window: u32,
}

impl SgdConfig {
    /// Float16 training guarded by infinite-gradient signalling and a loss scale.
    pub fn float16() -> Self {
        SgdConfig {
            fmt: FloatFormat::FLOAT16,
            policy: ScalingPolicy::UnscaledSafe,
            steps: 500,
            seed: 0,
            lr: 0.5,
            batch: 16,
            widths: vec![2, 16, 16, 2],
            scheme: Scheme::Rk4,
            time_steps: 8,
            t_final: 1.0,
            teacher: vec![-0.1, -1.0, 1.0, -0.1],
            initial_loss_scale: 65536.0,
            growth_window: 2000,
        }
    }

    /// The float64 baseline: no scaling needed.
    pub fn float64() -> Self {
        SgdConfig {
            fmt: FloatFormat::FLOAT64,
            policy: ScalingPolicy::Unscaled,
            initial_loss_scale: 1.0,
            ..Self::float16()
        }
    }

    pub fn for_format(fmt: FloatFormat) -> Self {
        if fmt == FloatFormat::FLOAT64 {
            Self::float64()
        } else {
            SgdConfig {
                fmt,
                ..Self::float16()
            }
        }
    }

    fn high(&self) -> FloatFormat {
        if self.fmt.is_subset_of(&FloatFormat::FLOAT32) {
            FloatFormat::FLOAT32
        } else {
            self.fmt
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdRecord {
    pub iteration: usize,
    /// Mean batch loss of the iteration's forward pass.
    pub loss: f64,
    pub loss_scale: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct SgdResult {
    pub records: Vec<SgdRecord>,
    pub params: Params,
    /// Float64 loss of the final parameters on a held-out batch.
    pub final_loss: f64,
}

impl SgdResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,loss,loss_scale,accepted")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.iteration,
                format_value(r.loss),
                format_value(r.loss_scale),
                r.accepted
            )?;
        }
        Ok(())
    }
}

struct Problem {
    student: MlpField,
    teacher: LinearField,
    teacher_params: Params,
    grid: TimeGrid,
}

impl Problem {
    fn target(&self, scheme: Scheme, x: &[f64]) -> Result<Vec<f64>> {
        let f64_ = FloatFormat::FLOAT64;
        Ok(forward(scheme, &self.teacher, x, &self.grid, &self.teacher_params, f64_, f64_)?.final_hp)
    }
}

fn sample_batch(rng: &mut ChaCha8Rng, batch: usize) -> Vec<[f64; 2]> {
    (0..batch).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

/// Mean loss and `scale`-weighted gradient sum over a batch. A failed forward
/// pass yields an infinite gradient.
fn batch_gradient(
    config: &SgdConfig,
    problem: &Problem,
    params: &Params,
    batch: &[([f64; 2], Vec<f64>)],
    scale: f64,
    mode: ExecMode,
) -> Result<(f64, Vec<f64>)> {
    let (lo, hi) = (config.fmt, config.high());
    let weight = scale / batch.len() as f64;
    let parts = mode.map_range(batch.len(), |k| -> Result<(f64, Vec<f64>)> {
        let (x, target) = &batch[k];
        let traj = match forward(config.scheme, &problem.student, x, &problem.grid, params, lo, hi) {
            Ok(t) => t,
            Err(Error::NonFiniteState { .. }) => return Ok((f64::INFINITY, vec![f64::INFINITY; params.len()])),
            Err(e) => return Err(e),
        };
        let objective = Objective::terminal_only(SquaredError {
            target: target.clone(),
            weight,
        });
        let loss = objective.value(&traj, params.as_slice(), TerminalState::Stored)? / scale;
        let options = BackwardOptions::with_policy(config.policy);
        match backward(config.scheme, &problem.student, &traj, params, &objective, &options) {
            Ok(g) => Ok((loss, g.d_theta)),
            Err(Error::ExhaustedRescale { .. } | Error::NonFiniteAccumulator { .. }) => {
                Ok((loss, vec![f64::INFINITY; params.len()]))
            }
            Err(e) => Err(e),
        }
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

pub fn run_sgd_demo(config: &SgdConfig, mode: ExecMode) -> Result<SgdResult> {
    if config.teacher.len() != 4 || config.widths.first() != Some(&2) {
        return Err(Error::Config("the demo fits a two-dimensional teacher".into()));
    }
    let student = MlpField::new(config.widths.clone())?;
    let problem = Problem {
        teacher: LinearField::new(2),
        teacher_params: Params::new(config.teacher.clone())?,
        grid: TimeGrid::equidistant(config.t_final, config.time_steps)?,
        student,
    };
    let mut params = problem.student.init_params(config.seed);
    let mut scaler = LossScaler::new(config.initial_loss_scale, config.growth_window);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let held_out: Vec<([f64; 2], Vec<f64>)> = sample_batch(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed), 64)
        .into_iter()
        .map(|x| Ok((x, problem.target(config.scheme, &x)?)))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(config.steps);
    for iteration in 0..config.steps {
        let batch: Vec<([f64; 2], Vec<f64>)> = sample_batch(&mut rng, config.batch)
            .into_iter()
            .map(|x| Ok((x, problem.target(config.scheme, &x)?)))
            .collect::<Result<_>>()?;
        let mut loss = f64::NAN;
        let mut failure = None;
        let snapshot = params.clone();
        let outcome = sgd_step(&mut params, &mut scaler, config.lr, 0.0, config.high(), |scale| {
            match batch_gradient(config, &problem, &snapshot, &batch, scale, mode) {
                Ok((l, g)) => {
                    loss = l;
                    g
                }
                Err(e) => {
                    failure = Some(e);
                    vec![f64::NAN; snapshot.len()]
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        records.push(SgdRecord {
            iteration,
            loss,
            loss_scale: outcome.loss_scale,
            accepted: outcome.accepted,
        });
    }

    let eval = SgdConfig {
        fmt: FloatFormat::FLOAT64,
        policy: ScalingPolicy::Unscaled,
        ..config.clone()
    };
    let (final_loss, _) = batch_gradient(&eval, &problem, &params, &held_out, 1.0, mode)?;
    Ok(SgdResult {
        records,
        params,
        final_loss,
    })
}
