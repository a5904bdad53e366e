//! Time-augmented multilayer perceptron with tanh hidden activations.
//!
//! The network maps `[y; t]` to a velocity of the same dimension as `y`.
//! Parameters are packed layer by layer: the weight matrix row-major
//! (`out x in`), followed by the bias vector.
//!
//! # Weight files
//!
//! [`MlpField::save`] writes two files. The binary file holds the packed
//! parameters as consecutive IEEE 754 binary64 values in little-endian byte
//! order, with no header. The sidecar at `<path>.json` describes the layout:
//!
//! ```json
//! {"widths": [2, 32, 32, 2], "dtype": "f64-le", "len": 1250}
//! ```
//!
//! `widths` lists the state dimension, the hidden widths and the output
//! dimension; the first layer additionally receives time as one extra input.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FieldVjp, Params, VelocityField};
use crate::error::{Error, Result};
use crate::precision::FloatFormat;

#[derive(Clone, Debug)]
pub struct MlpField {
    widths: Vec<usize>,
    // (weight offset, bias offset, fan_in, fan_out) per layer
    layers: Vec<(usize, usize, usize, usize)>,
    dim_params: usize,
}

/// Layer inputs and hidden activations of one recorded evaluation.
#[derive(Clone, Debug)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsSidecar {
    pub widths: Vec<usize>,
    pub dtype: String,
    pub len: usize,
}

impl MlpField {
    /// `widths = [n, h₁, …, h_k, n]`.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        if widths.first() != widths.last() {
            return Err(Error::Config(format!(
                "output width {} must equal the state dimension {}",
                widths[widths.len() - 1],
                widths[0]
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config("zero layer width".into()));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for (l, pair) in widths.windows(2).enumerate() {
            let fan_in = if l == 0 { pair[0] + 1 } else { pair[0] };
            let fan_out = pair[1];
            layers.push((offset, offset + fan_in * fan_out, fan_in, fan_out));
            offset += fan_in * fan_out + fan_out;
        }
        Ok(MlpField {
            widths,
            layers,
            dim_params: offset,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Uniform `±1/sqrt(fan_in)` initialization from a seeded ChaCha8 stream.
    pub fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.dim_params];
        for &(w, b, fan_in, fan_out) in &self.layers {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut theta[w..b + fan_out] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Params::new(theta).expect("finite initialization")
    }

    pub fn save(&self, path: &Path, params: &Params) -> Result<()> {
        if params.len() != self.dim_params {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.dim_params,
                params.len()
            )));
        }
        let bytes: Vec<u8> = params.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes)?;
        let sidecar = WeightsSidecar {
            widths: self.widths.clone(),
            dtype: "f64-le".into(),
            len: params.len(),
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Params)> {
        let sidecar: WeightsSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        if sidecar.dtype != "f64-le" {
            return Err(Error::Config(format!("unsupported weight dtype {}", sidecar.dtype)));
        }
        let field = MlpField::new(sidecar.widths)?;
        let bytes = fs::read(path)?;
        if bytes.len() != 8 * field.dim_params || sidecar.len != field.dim_params {
            return Err(Error::Dimension(format!(
                "weight file holds {} bytes, layout needs {} parameters",
                bytes.len(),
                field.dim_params
            )));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((field, Params::new(theta)?))
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl VelocityField for MlpField {
    type Tape = MlpTape;

    fn dim_state(&self) -> usize {
        self.widths[0]
    }

    fn dim_params(&self) -> usize {
        self.dim_params
    }

    fn eval_recorded(&self, t: f64, y: &[f64], theta: &[f64], fmt: FloatFormat) -> (Vec<f64>, MlpTape) {
        let mut x: Vec<f64> = y.to_vec();
        x.push(fmt.quantize(t));
        let mut inputs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, &(w, b, fan_in, fan_out)) in self.layers.iter().enumerate() {
            let z: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let row = &theta[w + j * fan_in..w + (j + 1) * fan_in];
                    fmt.add(fmt.dot(row, &x), theta[b + j])
                })
                .collect();
            inputs.push(x);
            x = if l == last { z } else { z.into_iter().map(|v| fmt.tanh(v)).collect() };
        }
        (x, MlpTape { inputs })
    }

    fn vjp_recorded(&self, tape: &MlpTape, theta: &[f64], cov: &[f64], fmt: FloatFormat) -> FieldVjp {
        let mut dtheta = vec![0.0; self.dim_params];
        let mut g: Vec<f64> = cov.to_vec();
        let last = self.layers.len() - 1;
        for (l, &(w, b, fan_in, fan_out)) in self.layers.iter().enumerate().rev() {
            if l != last {
                // g is the covector of tanh(z); tape.inputs[l + 1] holds tanh(z)
                let act = &tape.inputs[l + 1];
                for (gj, &s) in g.iter_mut().zip(act) {
                    *gj = fmt.mul(*gj, fmt.sub(1.0, fmt.mul(s, s)));
                }
            }
            let x = &tape.inputs[l];
            for j in 0..fan_out {
                let row = &mut dtheta[w + j * fan_in..w + (j + 1) * fan_in];
                for (d, &xk) in row.iter_mut().zip(x) {
                    *d = fmt.mul(g[j], xk);
                }
                dtheta[b + j] = g[j];
            }
            g = (0..fan_in)
                .map(|k| (0..fan_out).fold(0.0, |acc, j| fmt.dot_step(acc, theta[w + j * fan_in + k], g[j])))
                .collect();
        }
        let dt = g.pop().expect("time input");
        FieldVjp { dy: g, dt, dtheta }
    }
}
