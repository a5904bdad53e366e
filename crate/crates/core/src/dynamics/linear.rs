use super::{FieldVjp, VelocityField};
use crate::precision::FloatFormat;

/// `f(t, y, θ) = A y` with `A` read row-major from the parameters (`p = n²`).
#[derive(Clone, Debug)]
pub struct LinearField {
    n: usize,
}

impl LinearField {
    pub fn new(n: usize) -> Self {
        LinearField { n }
    }

    pub fn identity_params(n: usize) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        a
    }
}

impl VelocityField for LinearField {
    type Tape = Vec<f64>;

    fn dim_state(&self) -> usize {
        self.n
    }

    fn dim_params(&self) -> usize {
        self.n * self.n
    }

    fn eval_recorded(&self, _t: f64, y: &[f64], theta: &[f64], fmt: FloatFormat) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let out = (0..n).map(|i| fmt.dot(&theta[i * n..(i + 1) * n], y)).collect();
        (out, y.to_vec())
    }

    fn vjp_recorded(&self, y: &Vec<f64>, theta: &[f64], cov: &[f64], fmt: FloatFormat) -> FieldVjp {
        let n = self.n;
        let dy = (0..n)
            .map(|k| (0..n).fold(0.0, |acc, i| fmt.dot_step(acc, theta[i * n + k], cov[i])))
            .collect();
        let mut dtheta = Vec::with_capacity(n * n);
        for &c in cov {
            dtheta.extend(y.iter().map(|&yk| fmt.mul(c, yk)));
        }
        FieldVjp { dy, dt: 0.0, dtheta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_maps_state_to_itself() {
        let f = LinearField::new(2);
        let out = f.eval(0.0, &[1.0, 2.0], &LinearField::identity_params(2), FloatFormat::FLOAT16);
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn vjp_is_transpose_product() {
        let f = LinearField::new(2);
        let a = [1.0, 2.0, 3.0, 4.0];
        let v = f.vjp(0.0, &[5.0, 6.0], &a, &[1.0, -1.0], FloatFormat::FLOAT64);
        assert_eq!(v.dy, vec![1.0 - 3.0, 2.0 - 4.0]);
        assert_eq!(v.dtheta, vec![5.0, 6.0, -5.0, -6.0]);
        assert_eq!(v.dt, 0.0);
    }
}
