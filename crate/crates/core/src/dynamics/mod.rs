//! Velocity fields `f(t, y, θ)` evaluated and differentiated under an emulated precision.
//!
//! Evaluation is split into a recording pass that returns the value together
//! with whatever the reverse sweep needs (the tape), and a reverse sweep that
//! consumes the tape. Re-running only the reverse sweep with a different
//! covector is what lets the dynamically scaled backward pass retry a step
//! without evaluating the field again.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::precision::{FloatFormat, LowArray};

mod linear;
mod mlp;
mod poly;

pub use linear::LinearField;
pub use mlp::{MlpField, MlpTape, WeightsSidecar};
pub use poly::{PolyDecayField, PolyDecayTape};

/// Output of a vector-Jacobian product `cᵀ ∂f/∂(y, t, θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVjp {
    pub dy: Vec<f64>,
    pub dt: f64,
    pub dtheta: Vec<f64>,
}

impl FieldVjp {
    pub fn is_finite(&self) -> bool {
        self.dt.is_finite() && self.dy.iter().chain(&self.dtheta).all(|x| x.is_finite())
    }
}

pub trait VelocityField: Send + Sync {
    type Tape: Send + Sync;

    fn dim_state(&self) -> usize;

    fn dim_params(&self) -> usize;

    /// Evaluates `f(t, y, θ)` with every primitive rounded into `fmt`, and
    /// returns the intermediate values the reverse sweep needs.
    fn eval_recorded(&self, t: f64, y: &[f64], theta: &[f64], fmt: FloatFormat) -> (Vec<f64>, Self::Tape);

    /// Reverse sweep over a recorded evaluation: `covᵀ ∂f/∂(y, t, θ)`, every
    /// primitive rounded into `fmt`. `theta` must be the values used when recording.
    fn vjp_recorded(&self, tape: &Self::Tape, theta: &[f64], cov: &[f64], fmt: FloatFormat) -> FieldVjp;

    fn eval(&self, t: f64, y: &[f64], theta: &[f64], fmt: FloatFormat) -> Vec<f64> {
        self.eval_recorded(t, y, theta, fmt).0
    }

    fn vjp(&self, t: f64, y: &[f64], theta: &[f64], cov: &[f64], fmt: FloatFormat) -> FieldVjp {
        let (_, tape) = self.eval_recorded(t, y, theta, fmt);
        self.vjp_recorded(&tape, theta, cov, fmt)
    }
}

/// High-precision master copy of the field parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    master: Vec<f64>,
}

impl Params {
    pub fn new(master: Vec<f64>) -> Result<Self> {
        if let Some(i) = master.iter().position(|x| !x.is_finite()) {
            return Err(Error::Config(format!("parameter {i} is not finite")));
        }
        Ok(Params { master })
    }

    pub fn zeros(len: usize) -> Self {
        Params { master: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.master.len()
    }

    pub fn is_empty(&self) -> bool {
        self.master.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.master
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.master
    }

    /// The on-demand low-precision view used for field evaluations.
    pub fn quantized(&self, fmt: FloatFormat) -> LowArray {
        LowArray::quantize(&self.master, fmt)
    }
}

/// Wraps a field and counts recorded evaluations.
#[derive(Debug)]
pub struct CountingField<F> {
    inner: F,
    evals: AtomicUsize,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        CountingField {
            inner,
            evals: AtomicUsize::new(0),
        }
    }

    pub fn evals(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: VelocityField> VelocityField for CountingField<F> {
    type Tape = F::Tape;

    fn dim_state(&self) -> usize {
        self.inner.dim_state()
    }

    fn dim_params(&self) -> usize {
        self.inner.dim_params()
    }

    fn eval_recorded(&self, t: f64, y: &[f64], theta: &[f64], fmt: FloatFormat) -> (Vec<f64>, F::Tape) {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_recorded(t, y, theta, fmt)
    }

    fn vjp_recorded(&self, tape: &F::Tape, theta: &[f64], cov: &[f64], fmt: FloatFormat) -> FieldVjp {
        self.inner.vjp_recorded(tape, theta, cov, fmt)
    }
}
