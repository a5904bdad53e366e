use super::{FieldVjp, VelocityField};
use crate::precision::FloatFormat;

/// `f(t, y, θ) = -(θ₁t² + θ₂t + θ₃) y`, applied component-wise.
///
/// With `y(0) = x` the exact solution is `x exp(-(θ₁t³/3 + θ₂t²/2 + θ₃t))`.
#[derive(Clone, Debug)]
pub struct PolyDecayField {
    dim: usize,
}

#[derive(Clone, Debug)]
pub struct PolyDecayTape {
    t: f64,
    t2: f64,
    rate: f64,
    y: Vec<f64>,
}

impl PolyDecayField {
    pub fn new() -> Self {
        PolyDecayField { dim: 1 }
    }

    pub fn with_dim(dim: usize) -> Self {
        PolyDecayField { dim }
    }
}

impl Default for PolyDecayField {
    fn default() -> Self {
        Self::new()
    }
}

impl VelocityField for PolyDecayField {
    type Tape = PolyDecayTape;

    fn dim_state(&self) -> usize {
        self.dim
    }

    fn dim_params(&self) -> usize {
        3
    }

    fn eval_recorded(&self, t: f64, y: &[f64], theta: &[f64], fmt: FloatFormat) -> (Vec<f64>, PolyDecayTape) {
        let t = fmt.quantize(t);
        let t2 = fmt.mul(t, t);
        let rate = fmt.add(fmt.add(fmt.mul(theta[0], t2), fmt.mul(theta[1], t)), theta[2]);
        let out = y.iter().map(|&yi| -fmt.mul(rate, yi)).collect();
        (
            out,
            PolyDecayTape {
                t,
                t2,
                rate,
                y: y.to_vec(),
            },
        )
    }

    fn vjp_recorded(&self, tape: &PolyDecayTape, theta: &[f64], cov: &[f64], fmt: FloatFormat) -> FieldVjp {
        let dy = cov.iter().map(|&c| -fmt.mul(tape.rate, c)).collect();
        // covector of the rate: -Σ y c
        let d_rate = -fmt.dot(&tape.y, cov);
        let d_rate_dt = fmt.add(fmt.mul(fmt.mul(2.0, theta[0]), tape.t), theta[1]);
        FieldVjp {
            dy,
            dt: fmt.mul(d_rate_dt, d_rate),
            dtheta: vec![fmt.mul(tape.t2, d_rate), fmt.mul(tape.t, d_rate), d_rate],
        }
    }
}
