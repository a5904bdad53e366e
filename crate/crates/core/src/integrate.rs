//! Explicit one-step schemes and the mixed-precision forward pass.
//!
//! A step reads `y_{i+1} = y_i + h_i Φ(f, y_i, t_i, h_i, θ)`. The increment Φ
//! is evaluated entirely in the low precision, from the low-precision copy of
//! the state and parameters. Only the accumulation `y + h Φ` runs in the high
//! precision, and the stored trajectory holds the low-precision copies.

use std::io::Write;

use crate::csvio::format_value;
use crate::dynamics::{Params, VelocityField};
use crate::error::{Error, Result};
use crate::precision::FloatFormat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

impl Scheme {
    pub fn stages(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk4 => 4,
        }
    }

    /// Butcher nodes `c`.
    pub fn nodes(self) -> &'static [f64] {
        match self {
            Scheme::Euler => &[0.0],
            Scheme::Rk4 => &[0.0, 0.5, 0.5, 1.0],
        }
    }

    /// Butcher weights `b`.
    pub fn weights(self) -> &'static [f64] {
        match self {
            Scheme::Euler => &[1.0],
            Scheme::Rk4 => &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        }
    }

    /// Classical convergence order.
    pub fn order(self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "euler" => Some(Scheme::Euler),
            "rk4" => Some(Scheme::Rk4),
            _ => None,
        }
    }
}

/// Strictly increasing time points `t₀ < t₁ < … < t_N`, `t₀ ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::InvalidGrid("need at least two time points".into()));
        }
        if !t.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time point".into()));
        }
        if t[0] < 0.0 {
            return Err(Error::InvalidGrid(format!("t0 = {} is negative", t[0])));
        }
        if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!("not strictly increasing at index {i}")));
        }
        Ok(TimeGrid { t })
    }

    /// `N` equal steps on `[0, T]`.
    pub fn equidistant(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        if t_final.is_nan() || t_final <= 0.0 {
            return Err(Error::InvalidGrid(format!("terminal time {t_final} must be positive")));
        }
        Self::new((0..=steps).map(|i| t_final * i as f64 / steps as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.t
    }

    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn t_final(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// `(t_i, h_i)` as seen by a solver whose high precision is `hi`.
    pub fn step(&self, i: usize, hi: FloatFormat) -> (f64, f64) {
        let t0 = hi.quantize(self.t[i]);
        let t1 = hi.quantize(self.t[i + 1]);
        (t0, hi.sub(t1, t0))
    }
}

/// Stored low-precision states of a forward pass.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub grid: TimeGrid,
    /// High-precision accumulator after the last completed step.
    pub final_hp: Vec<f64>,
    pub fmt_low: FloatFormat,
    pub fmt_high: FloatFormat,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    /// Writes `i,t,y0,y1,…` with 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        write!(out, "i,t")?;
        for j in 0..n {
            write!(out, ",y{j}")?;
        }
        writeln!(out)?;
        for (i, y) in self.states.iter().enumerate() {
            write!(out, "{i},{}", format_value(self.grid.points()[i]))?;
            for v in y {
                write!(out, ",{}", format_value(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Everything the reverse sweep of one increment needs.
#[derive(Clone, Debug)]
pub struct StepRecord<T> {
    scheme: Scheme,
    h_low: f64,
    h_half_low: f64,
    tapes: Vec<T>,
    slopes: Vec<Vec<f64>>,
    increment: Vec<f64>,
}

impl<T> StepRecord<T> {
    pub fn increment(&self) -> &[f64] {
        &self.increment
    }

    pub fn into_increment(self) -> Vec<f64> {
        self.increment
    }
}

/// `covᵀ ∂Φ/∂(y, t, h, θ)` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepVjp {
    pub da: Vec<f64>,
    pub dt: f64,
    pub dh: f64,
    pub dtheta: Vec<f64>,
}

impl StepVjp {
    pub fn is_finite(&self) -> bool {
        self.dt.is_finite() && self.dh.is_finite() && self.da.iter().chain(&self.dtheta).all(|x| x.is_finite())
    }
}

fn axpy_low(y: &[f64], alpha: f64, x: &[f64], lo: FloatFormat) -> Vec<f64> {
    y.iter().zip(x).map(|(&yi, &xi)| lo.add(yi, lo.mul(alpha, xi))).collect()
}

/// Evaluates Φ in `lo` and keeps the stage tapes for [`increment_vjp`].
///
/// Stage times `t + c_j h` are formed in the carrier; the field rounds them
/// into `lo` where they meet low-precision operands.
pub fn record_increment<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    y: &[f64],
    t: f64,
    h: f64,
    theta: &[f64],
    lo: FloatFormat,
) -> StepRecord<F::Tape> {
    match scheme {
        Scheme::Euler => {
            let (k1, tape) = field.eval_recorded(t, y, theta, lo);
            StepRecord {
                scheme,
                h_low: lo.quantize(h),
                h_half_low: lo.quantize(0.5 * h),
                tapes: vec![tape],
                slopes: Vec::new(),
                increment: k1,
            }
        }
        Scheme::Rk4 => {
            let h_low = lo.quantize(h);
            let h_half_low = lo.quantize(0.5 * h);
            let t_mid = t + 0.5 * h;
            let (k1, tape1) = field.eval_recorded(t, y, theta, lo);
            let (k2, tape2) = field.eval_recorded(t_mid, &axpy_low(y, h_half_low, &k1, lo), theta, lo);
            let (k3, tape3) = field.eval_recorded(t_mid, &axpy_low(y, h_half_low, &k2, lo), theta, lo);
            let (k4, tape4) = field.eval_recorded(t + h, &axpy_low(y, h_low, &k3, lo), theta, lo);
            // weights applied before summing: k₁ + 2k₂ + 2k₃ + k₄ can leave the
            // low-precision range while Φ itself stays inside it
            let increment = (0..y.len())
                .map(|j| {
                    let s = lo.add(lo.div(k1[j], 6.0), lo.div(k2[j], 3.0));
                    lo.add(lo.add(s, lo.div(k3[j], 3.0)), lo.div(k4[j], 6.0))
                })
                .collect();
            StepRecord {
                scheme,
                h_low,
                h_half_low,
                tapes: vec![tape1, tape2, tape3, tape4],
                slopes: vec![k1, k2, k3],
                increment,
            }
        }
    }
}

/// Φ(f, y, t, h, θ) evaluated in `lo`.
pub fn increment<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    y: &[f64],
    t: f64,
    h: f64,
    theta: &[f64],
    lo: FloatFormat,
) -> Vec<f64> {
    record_increment(scheme, field, y, t, h, theta, lo).into_increment()
}

/// Reverse sweep through a recorded increment. Does not evaluate the field.
pub fn increment_vjp<F: VelocityField>(
    field: &F,
    record: &StepRecord<F::Tape>,
    theta: &[f64],
    cov: &[f64],
    lo: FloatFormat,
) -> StepVjp {
    match record.scheme {
        Scheme::Euler => {
            let v = field.vjp_recorded(&record.tapes[0], theta, cov, lo);
            StepVjp {
                da: v.dy,
                dt: v.dt,
                dh: 0.0,
                dtheta: v.dtheta,
            }
        }
        Scheme::Rk4 => {
            let sixth: Vec<f64> = cov.iter().map(|&c| lo.div(c, 6.0)).collect();
            let third: Vec<f64> = cov.iter().map(|&c| lo.div(c, 3.0)).collect();
            let [k1, k2, k3] = [&record.slopes[0], &record.slopes[1], &record.slopes[2]];

            // stage 4: y4 = y + h k3, t4 = t + h
            let v4 = field.vjp_recorded(&record.tapes[3], theta, &sixth, lo);
            let mut da = v4.dy.clone();
            let mut dt = v4.dt;
            let mut dh = lo.add(lo.dot(k3, &v4.dy), v4.dt);
            let mut dtheta = v4.dtheta;
            let cov3: Vec<f64> = third.iter().zip(&v4.dy).map(|(&c, &g)| lo.add(c, lo.mul(record.h_low, g))).collect();

            // stage 3: y3 = y + (h/2) k2, t3 = t + h/2
            let v3 = field.vjp_recorded(&record.tapes[2], theta, &cov3, lo);
            accumulate(&mut da, &v3.dy, lo);
            accumulate(&mut dtheta, &v3.dtheta, lo);
            dt = lo.add(dt, v3.dt);
            dh = lo.add(dh, lo.mul(0.5, lo.add(lo.dot(k2, &v3.dy), v3.dt)));
            let cov2: Vec<f64> = third.iter().zip(&v3.dy).map(|(&c, &g)| lo.add(c, lo.mul(record.h_half_low, g))).collect();

            // stage 2: y2 = y + (h/2) k1, t2 = t + h/2
            let v2 = field.vjp_recorded(&record.tapes[1], theta, &cov2, lo);
            accumulate(&mut da, &v2.dy, lo);
            accumulate(&mut dtheta, &v2.dtheta, lo);
            dt = lo.add(dt, v2.dt);
            dh = lo.add(dh, lo.mul(0.5, lo.add(lo.dot(k1, &v2.dy), v2.dt)));
            let cov1: Vec<f64> = sixth.iter().zip(&v2.dy).map(|(&c, &g)| lo.add(c, lo.mul(record.h_half_low, g))).collect();

            // stage 1: y1 = y, t1 = t
            let v1 = field.vjp_recorded(&record.tapes[0], theta, &cov1, lo);
            accumulate(&mut da, &v1.dy, lo);
            accumulate(&mut dtheta, &v1.dtheta, lo);
            dt = lo.add(dt, v1.dt);

            StepVjp { da, dt, dh, dtheta }
        }
    }
}

fn accumulate(acc: &mut [f64], x: &[f64], lo: FloatFormat) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a = lo.add(*a, b);
    }
}

/// Mixed-precision forward pass.
///
/// The accumulator starts at `Q_hi(x)`; each step evaluates
/// `dy = Φ(f, Q_lo(y), t_i, h_i, Q_lo(θ))` in `lo`, updates `y ← y + h_i Q_hi(dy)`
/// in `hi` and stores `Q_lo(y)`.
pub fn forward<F: VelocityField>(
    scheme: Scheme,
    field: &F,
    x: &[f64],
    grid: &TimeGrid,
    params: &Params,
    lo: FloatFormat,
    hi: FloatFormat,
) -> Result<Trajectory> {
    check_dims(field, x.len(), params.len())?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Config("initial state is not finite".into()));
    }
    let theta = params.quantized(lo);
    let mut y = hi.quantize_slice(x);
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(lo.quantize_slice(&y));
    for i in 0..grid.steps() {
        let (t, h) = grid.step(i, hi);
        let dy = increment(scheme, field, &states[i], t, h, &theta, lo);
        for (yj, &d) in y.iter_mut().zip(&dy) {
            *yj = hi.add(*yj, hi.mul(h, hi.quantize(d)));
        }
        let stored = lo.quantize_slice(&y);
        let finite = stored.iter().all(|v| v.is_finite());
        states.push(stored);
        if !finite {
            return Err(Error::NonFiniteState {
                step: i + 1,
                partial: Box::new(Trajectory {
                    states,
                    grid: grid.clone(),
                    final_hp: y,
                    fmt_low: lo,
                    fmt_high: hi,
                }),
            });
        }
    }
    Ok(Trajectory {
        states,
        grid: grid.clone(),
        final_hp: y,
        fmt_low: lo,
        fmt_high: hi,
    })
}

pub(crate) fn check_dims<F: VelocityField>(field: &F, n: usize, p: usize) -> Result<()> {
    if n != field.dim_state() {
        return Err(Error::Dimension(format!("state has {n} entries, field expects {}", field.dim_state())));
    }
    if p != field.dim_params() {
        return Err(Error::Dimension(format!("{p} parameters given, field expects {}", field.dim_params())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearField, MlpField, PolyDecayField};

    const F64: FloatFormat = FloatFormat::FLOAT64;
    const F16: FloatFormat = FloatFormat::FLOAT16;
    const F32: FloatFormat = FloatFormat::FLOAT32;

    #[test]
    fn butcher_tableau_is_consistent() {
        for s in [Scheme::Euler, Scheme::Rk4] {
            assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert_eq!(s.nodes().len(), s.stages());
        }
        assert_eq!(Scheme::Rk4.nodes(), &[0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![-1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::equidistant(1.0, 0).is_err());
        let g = TimeGrid::equidistant(2.65, 400).unwrap();
        assert_eq!(g.steps(), 400);
        assert_eq!(g.t_final(), 2.65);
    }

    #[test]
    fn zero_dynamics_give_zero_increment() {
        let f = PolyDecayField::new();
        for s in [Scheme::Euler, Scheme::Rk4] {
            assert_eq!(increment(s, &f, &[3.0], 0.2, 0.1, &[0.0; 3], F16), vec![0.0]);
        }
    }

    #[test]
    fn rk4_step_on_scalar_decay_is_taylor_polynomial() {
        let f = LinearField::new(1);
        let h = 0.1;
        let phi = increment(Scheme::Rk4, &f, &[1.0], 0.0, h, &[-1.0], F64);
        let step = 1.0 + h * phi[0];
        let taylor: f64 = (0..=4).map(|j| (-h).powi(j) / (1..=j).product::<i32>() as f64).sum();
        assert!((step - taylor).abs() < 1e-15);
        assert!((step - 0.9048375).abs() < 1e-9);
    }

    #[test]
    fn first_euler_increment_of_example_problem() {
        let f = PolyDecayField::new();
        let theta = F16.quantize_slice(&[8.0, -11.0, 2f64.powi(-16)]);
        let y0 = F16.quantize(65504.0 / 180.0);
        let phi = increment(Scheme::Euler, &f, &[y0], 0.0, 2.65 / 400.0, &theta, F16);
        assert_eq!(phi[0], -F16.quantize(2f64.powi(-16) * y0));
    }

    #[test]
    fn identity_flow_keeps_state() {
        let f = PolyDecayField::new();
        let grid = TimeGrid::equidistant(1.0, 7).unwrap();
        let traj = forward(Scheme::Rk4, &f, &[0.1], &grid, &Params::zeros(3), F16, F32).unwrap();
        assert!(traj.states.iter().all(|s| s[0] == F16.quantize(0.1)));
        assert_eq!(traj.final_hp, vec![F32.quantize(0.1)]);
        assert_eq!(traj.states.len(), grid.points().len());
    }

    #[test]
    fn float64_forward_matches_plain_integrator() {
        let f = MlpField::new(vec![2, 8, 2]).unwrap();
        let p = f.init_params(1);
        let grid = TimeGrid::new(vec![0.0, 0.1, 0.25, 0.3, 0.5]).unwrap();
        let x = [0.4, -0.3];
        let traj = forward(Scheme::Rk4, &f, &x, &grid, &p, F64, F64).unwrap();
        let th = p.as_slice();
        let mut y = x.to_vec();
        for w in grid.points().windows(2) {
            let (t, h) = (w[0], w[1] - w[0]);
            let k1 = f.eval(t, &y, th, F64);
            let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + (0.5 * h) * k).collect();
            let k2 = f.eval(t + 0.5 * h, &y2, th, F64);
            let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + (0.5 * h) * k).collect();
            let k3 = f.eval(t + 0.5 * h, &y3, th, F64);
            let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
            let k4 = f.eval(t + h, &y4, th, F64);
            for j in 0..2 {
                y[j] += h * (k1[j] / 6.0 + k2[j] / 3.0 + k3[j] / 3.0 + k4[j] / 6.0);
            }
        }
        assert_eq!(traj.final_hp, y);
        assert_eq!(traj.terminal(), &y[..]);
    }

    #[test]
    fn overflow_reports_step_and_partial_trajectory() {
        let f = LinearField::new(1);
        let grid = TimeGrid::equidistant(10.0, 10).unwrap();
        let err = forward(Scheme::Euler, &f, &[1000.0], &grid, &Params::new(vec![3.0]).unwrap(), F16, F32).unwrap_err();
        match err {
            Error::NonFiniteState { step, partial } => {
                assert_eq!(partial.states.len(), step + 1);
                assert!(partial.states[step][0].is_infinite());
                assert!(partial.states[step - 1][0].is_finite());
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = LinearField::new(2);
        let grid = TimeGrid::equidistant(1.0, 2).unwrap();
        assert!(forward(Scheme::Euler, &f, &[1.0], &grid, &Params::zeros(4), F64, F64).is_err());
        assert!(forward(Scheme::Euler, &f, &[1.0, 2.0], &grid, &Params::zeros(3), F64, F64).is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let f = LinearField::new(2);
        let grid = TimeGrid::equidistant(1.0, 2).unwrap();
        let traj = forward(Scheme::Euler, &f, &[1.0, 2.0], &grid, &Params::zeros(4), F64, F64).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,t,y0,y1");
        assert_eq!(lines[2], "1,5.0000000000000000e-1,1.0000000000000000e0,2.0000000000000000e0");
        assert_eq!(lines.len(), 4);
    }
}
