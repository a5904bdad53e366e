//! Plain SGD with a dynamic loss scale for low-precision training.

use crate::dynamics::Params;
use crate::precision::{all_finite, FloatFormat};

/// Power-of-two loss scale: halved when a gradient overflows, doubled after
/// `growth_window` consecutive accepted steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LossScaler {
    scale: f64,
    growth_window: u32,
    streak: u32,
    min_scale: f64,
}

impl Default for LossScaler {
    fn default() -> Self {
        LossScaler::new(65536.0, 2000)
    }
}

impl LossScaler {
    pub fn new(initial: f64, growth_window: u32) -> Self {
        assert!(crate::adjoint::is_power_of_two(initial), "loss scale must be a power of two");
        LossScaler {
            scale: initial,
            growth_window: growth_window.max(1),
            streak: 0,
            min_scale: 2f64.powi(-24),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn reject(&mut self) {
        self.streak = 0;
        self.scale = (0.5 * self.scale).max(self.min_scale);
    }

    fn accept(&mut self) {
        self.streak += 1;
        if self.streak >= self.growth_window {
            self.streak = 0;
            self.scale *= 2.0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Scale the gradient was computed with.
    pub loss_scale: f64,
}

/// One SGD step. `grad_fn(S)` returns the gradient of `S · L`; a non-finite
/// result rejects the step and halves the scale. An accepted step applies
/// `θ ← θ − lr (g/S + weight_decay θ)` in `hi`.
pub fn sgd_step(
    params: &mut Params,
    scaler: &mut LossScaler,
    lr: f64,
    weight_decay: f64,
    hi: FloatFormat,
    grad_fn: impl FnOnce(f64) -> Vec<f64>,
) -> StepOutcome {
    let scale = scaler.scale();
    let g = grad_fn(scale);
    assert_eq!(g.len(), params.len(), "gradient length");
    if !all_finite(&g) {
        scaler.reject();
        return StepOutcome {
            accepted: false,
            loss_scale: scale,
        };
    }
    for (p, &gk) in params.as_mut_slice().iter_mut().zip(&g) {
        let d = hi.add(hi.div(gk, scale), hi.mul(weight_decay, *p));
        *p = hi.sub(*p, hi.mul(lr, d));
    }
    scaler.accept();
    StepOutcome {
        accepted: true,
        loss_scale: scale,
    }
}
