//! Mixed-precision discrete adjoint with dynamic adjoint scaling.
//!
//! The backward pass walks the stored low-precision trajectory in reverse.
//! For every step it re-evaluates the increment once in low precision,
//! then applies the reverse sweep to the scaled covector `Q_lo(S a)`. When the
//! sweep produces an infinity or NaN, the scale is halved and only the reverse
//! sweep is repeated. The results are unscaled and accumulated into the adjoint
//! `a`, the weight gradient `g` and the time gradient `t′` in high precision.
//!
//! The scale `S` is always a power of two, so scaling touches only exponents:
//! absent underflow and overflow, a run with every scale doubled produces
//! bit-identical gradients.

use std::io::Write;

use crate::csvio::format_value;
use crate::dynamics::{Params, VelocityField};
use crate::error::{Error, Result};
use crate::integrate::{self, check_dims, record_increment, Scheme, StepVjp, Trajectory};
use crate::precision::{self, all_finite, inf_norm, ExceptionFlags, FloatFormat};

mod objective;
mod sgd;

pub use objective::{
    trapezoid_weights, HalfSquaredNorm, Objective, Quadrature, QuadraticRunning, RunningCost, SquaredError, TerminalCost,
    TerminalState,
};
pub use sgd::{sgd_step, LossScaler, StepOutcome};

/// Default number of halvings tried per step before giving up.
pub const DEFAULT_K_MAX: u32 = 24;
/// Default smallest admissible adjoint scale, `2^-24`.
pub const DEFAULT_S_FLOOR: f64 = 1.0 / 16_777_216.0;

/// How the backward pass guards the low-precision vector-Jacobian products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalingPolicy {
    /// `S ≡ 1`, no finiteness checks.
    Unscaled,
    /// `S ≡ 1`; a non-finite product turns every returned gradient into `+∞`
    /// so that an outer loss scaler can reject the step.
    UnscaledSafe,
    /// Per-step power-of-two scale, halved on overflow and doubled while the adjoint is small.
    Dynamic { k_max: u32, s_floor: f64 },
}

impl ScalingPolicy {
    pub fn dynamic() -> Self {
        ScalingPolicy::Dynamic {
            k_max: DEFAULT_K_MAX,
            s_floor: DEFAULT_S_FLOOR,
        }
    }

    /// Parses `none`, `safe` or `dynamic`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" | "unscaled" => Some(ScalingPolicy::Unscaled),
            "safe" | "unscaled-safe" | "unscaled_safe" => Some(ScalingPolicy::UnscaledSafe),
            "dynamic" => Some(Self::dynamic()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalingPolicy::Unscaled => "none",
            ScalingPolicy::UnscaledSafe => "safe",
            ScalingPolicy::Dynamic { .. } => "dynamic",
        }
    }

    fn validate(&self) -> Result<()> {
        if let ScalingPolicy::Dynamic { k_max, s_floor } = *self {
            if k_max < 1 {
                return Err(Error::Config("k_max must be at least 1".into()));
            }
            if !is_power_of_two(s_floor) {
                return Err(Error::Config(format!("scale floor {s_floor:e} is not a power of two")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    pub policy: ScalingPolicy,
    pub terminal: TerminalState,
    /// Multiplies every scale applied in the reverse sweeps without changing
    /// the halving and doubling decisions. Must be a power of two. Used to check
    /// that the gradients do not depend on the scale sequence.
    pub scale_multiplier: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            policy: ScalingPolicy::dynamic(),
            terminal: TerminalState::Stored,
            scale_multiplier: 1.0,
        }
    }
}

impl BackwardOptions {
    pub fn with_policy(policy: ScalingPolicy) -> Self {
        BackwardOptions {
            policy,
            ..Self::default()
        }
    }
}

/// Total derivatives of the discrete objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// `dL/dx`, the adjoint at step 0.
    pub d_x: Vec<f64>,
    /// `dL/dθ`.
    pub d_theta: Vec<f64>,
    /// `dL/dt`, one entry per grid point.
    pub d_t: Vec<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        all_finite(&self.d_x) && all_finite(&self.d_theta) && all_finite(&self.d_t)
    }

    fn overflowed(n: usize, p: usize, points: usize) -> Self {
        Gradients {
            d_x: vec![f64::INFINITY; n],
            d_theta: vec![f64::INFINITY; p],
            d_t: vec![f64::INFINITY; points],
        }
    }

    /// Writes `component,value` rows: `x[i]`, then `theta[k]`, then `t[i]`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "component,value")?;
        for (name, values) in [("x", &self.d_x), ("theta", &self.d_theta), ("t", &self.d_t)] {
            for (i, v) in values.iter().enumerate() {
                writeln!(out, "{name}[{i}],{}", format_value(*v))?;
            }
        }
        Ok(())
    }
}

/// Per-step instrumentation of a backward pass, indexed by step `i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BackwardReport {
    pub initial_scale: f64,
    /// Scale used for the accepted reverse sweep of each step.
    pub scales: Vec<f64>,
    /// Reverse sweeps performed per step (1 means no rescale).
    pub attempts: Vec<u32>,
    /// Overflow/underflow raised inside the reverse sweeps of each step, all attempts included.
    pub vjp_flags: Vec<ExceptionFlags>,
}

impl BackwardReport {
    pub fn rescaled(&self) -> bool {
        self.attempts.iter().any(|&k| k > 1)
    }

    pub fn total_rescales(&self) -> u32 {
        self.attempts.iter().map(|&k| k - 1).sum()
    }

    pub fn any_vjp_exception(&self) -> bool {
        self.vjp_flags.iter().any(|f| !f.is_clear())
    }
}

pub fn is_power_of_two(s: f64) -> bool {
    s.is_finite() && s > 0.0 && s.to_bits() & ((1u64 << 52) - 1) == 0 && s >= f64::MIN_POSITIVE
}

/// Largest power of two `S` with `‖S a‖∞ ≤ 1/u_lo`, which places `‖S a‖∞` in
/// `(1/(2u_lo), 1/u_lo]`. Returns 1 for a zero adjoint.
pub fn init_scale(a: &[f64], lo: FloatFormat) -> f64 {
    let norm = inf_norm(a);
    if norm == 0.0 || !norm.is_finite() {
        return 1.0;
    }
    // norm = m 2^e with m in [1, 2); 1/u = 2^p
    let p = lo.mantissa_bits() as i32 + 1;
    let (m_is_one, e) = if norm >= f64::MIN_POSITIVE {
        let bits = norm.to_bits();
        (bits & ((1u64 << 52) - 1) == 0, ((bits >> 52) as i32) - 1023)
    } else {
        let e = norm.log2().floor() as i32;
        (norm == 2f64.powi(e), e)
    };
    let k = if m_is_one { p - e } else { p - e - 1 };
    2f64.powi(k.clamp(-1022, 1023))
}

/// `Q_lo(S a)ᵀ ∂Φ/∂(y, t, h, θ)` for one step; records and sweeps in one call.
#[allow(clippy::too_many_arguments)]
pub fn scheme_vjp<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    y: &[f64],
    t: f64,
    h: f64,
    theta: &[f64],
    a_scaled: &[f64],
    lo: FloatFormat,
) -> StepVjp {
    let record = record_increment(scheme, field, y, t, h, theta, lo);
    integrate::increment_vjp(field, &record, theta, a_scaled, lo)
}

pub fn backward<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    traj: &Trajectory,
    params: &Params,
    objective: &Objective,
    options: &BackwardOptions,
) -> Result<Gradients> {
    backward_with_report(scheme, field, traj, params, objective, options).map(|(g, _)| g)
}

/// The backward pass, also returning the per-step scale history.
pub fn backward_with_report<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    traj: &Trajectory,
    params: &Params,
    objective: &Objective,
    options: &BackwardOptions,
) -> Result<(Gradients, BackwardReport)> {
    options.policy.validate()?;
    if !is_power_of_two(options.scale_multiplier) {
        return Err(Error::Config("scale multiplier must be a power of two".into()));
    }
    let n_state = traj.states[0].len();
    check_dims(field, n_state, params.len())?;
    let lo = traj.fmt_low;
    let hi = traj.fmt_high;
    let grid = &traj.grid;
    let steps = grid.steps();
    let t = grid.points();
    let theta_low = params.quantized(lo);
    let theta_hp = params.as_slice();
    let w = objective.weights(grid)?;

    let y_terminal = match options.terminal {
        TerminalState::Stored => traj.terminal(),
        TerminalState::Accumulator => &traj.final_hp[..],
    };
    let mut a = objective.terminal.gradient(y_terminal);
    let mut g = vec![0.0; params.len()];
    if let Some(r) = &objective.running {
        let y_n = traj.terminal();
        for (aj, rj) in a.iter_mut().zip(r.grad_y(t[steps], y_n, theta_hp)) {
            *aj += w[steps] * rj;
        }
        for (gk, rk) in g.iter_mut().zip(r.grad_theta(t[steps], y_n, theta_hp)) {
            *gk += w[steps] * rk;
        }
    }
    hi.quantize_in_place(&mut a);
    hi.quantize_in_place(&mut g);
    let mut t_grad = hi.quantize_slice(&objective.explicit_time_partials(grid, &traj.states, theta_hp, &w));
    if !all_finite(&a) {
        return Err(Error::NonFiniteAccumulator { step: steps });
    }

    let mut scale = match options.policy {
        ScalingPolicy::Dynamic { .. } => init_scale(&a, lo),
        _ => 1.0,
    };
    let forced = options.scale_multiplier;
    let mut report = BackwardReport {
        initial_scale: scale * forced,
        scales: vec![0.0; steps],
        attempts: vec![0; steps],
        vjp_flags: vec![ExceptionFlags::default(); steps],
    };
    let small_adjoint = 0.5 / lo.unit_roundoff();
    let mut cov = vec![0.0; n_state];

    for i in (0..steps).rev() {
        let (ti, h) = grid.step(i, hi);
        let record = record_increment(scheme, field, &traj.states[i], ti, h, &theta_low, lo);

        let saved_flags = precision::take_flags();
        let mut attempts = 0u32;
        let vjp = loop {
            attempts += 1;
            let applied = scale * forced;
            for (c, &aj) in cov.iter_mut().zip(&a) {
                *c = lo.quantize(applied * aj);
            }
            let v = integrate::increment_vjp(field, &record, &theta_low, &cov, lo);
            match options.policy {
                ScalingPolicy::Unscaled => break v,
                ScalingPolicy::UnscaledSafe => {
                    if !v.is_finite() {
                        precision::take_flags();
                        return Ok((Gradients::overflowed(n_state, params.len(), t.len()), report));
                    }
                    break v;
                }
                ScalingPolicy::Dynamic { k_max, s_floor } => {
                    if v.is_finite() {
                        break v;
                    }
                    if attempts >= k_max || scale * 0.5 < s_floor {
                        precision::take_flags();
                        return Err(Error::ExhaustedRescale { step: i, scale });
                    }
                    scale *= 0.5;
                }
            }
        };
        report.vjp_flags[i] = precision::take_flags();
        precision::raise_flags(saved_flags.union(report.vjp_flags[i]));
        let applied = scale * forced;
        report.scales[i] = applied;
        report.attempts[i] = attempts;

        let phi_a = hi.dot(&hi.quantize_slice(record.increment()), &a);
        let unscale = |x: f64| hi.div(hi.quantize(x), applied);
        t_grad[i] = hi.sub(hi.add(t_grad[i], hi.mul(h, unscale(vjp.dt - vjp.dh))), phi_a);
        t_grad[i + 1] = hi.add(hi.add(t_grad[i + 1], hi.mul(h, unscale(vjp.dh))), phi_a);
        if let Some(r) = &objective.running {
            let y_i = &traj.states[i];
            for (aj, rj) in a.iter_mut().zip(r.grad_y(t[i], y_i, theta_hp)) {
                *aj = hi.add(*aj, hi.mul(w[i], hi.quantize(rj)));
            }
            for (gk, rk) in g.iter_mut().zip(r.grad_theta(t[i], y_i, theta_hp)) {
                *gk = hi.add(*gk, hi.mul(w[i], hi.quantize(rk)));
            }
        }
        for (aj, &d) in a.iter_mut().zip(&vjp.da) {
            *aj = hi.add(*aj, hi.mul(h, unscale(d)));
        }
        for (gk, &d) in g.iter_mut().zip(&vjp.dtheta) {
            *gk = hi.add(*gk, hi.mul(h, unscale(d)));
        }

        if options.policy != ScalingPolicy::Unscaled
            && !(all_finite(&a) && all_finite(&g) && t_grad[i].is_finite() && t_grad[i + 1].is_finite())
        {
            return Err(Error::NonFiniteAccumulator { step: i });
        }
        if let ScalingPolicy::Dynamic { .. } = options.policy {
            // room to double: ‖S a‖ stays below 1/u_lo afterwards
            if attempts == 1 && scale * inf_norm(&a) <= small_adjoint {
                scale *= 2.0;
            }
        }
    }

    Ok((
        Gradients {
            d_x: a,
            d_theta: g,
            d_t: t_grad,
        },
        report,
    ))
}
