#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Round-to-nearest-even of `x` into a binary format with `mant_bits` stored
/// significand bits and minimum normal exponent `emin`, using only integer
/// arithmetic on the significand of `x`.
pub fn integer_round(x: f64, mant_bits: u32, emin: i32, emax: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    // |x| = m · 2^e exactly
    let (m, e) = if exp_field == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp_field - 1075) };
    let bit_len = 64 - m.leading_zeros() as i32;
    let value_exp = e + bit_len - 1;
    let quantum = value_exp.max(emin) - mant_bits as i32;
    let magnitude = if quantum <= e {
        x.abs()
    } else {
        let shift = (quantum - e) as u32;
        let r = if shift > 60 {
            0
        } else {
            let q = m >> shift;
            let rem = m & ((1u64 << shift) - 1);
            let half = 1u64 << (shift - 1);
            if rem > half || (rem == half && q & 1 == 1) {
                q + 1
            } else {
                q
            }
        };
        r as f64 * 2f64.powi(quantum)
    };
    let max_finite = (2.0 - 2f64.powi(-(mant_bits as i32))) * 2f64.powi(emax);
    let magnitude = if magnitude > max_finite { f64::INFINITY } else { magnitude };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

/// Random finite doubles spread over the exponent range around a target
/// format, a quarter of them exact rounding midpoints.
pub fn sample_values(seed: u64, count: usize, mant_bits: u32, emin: i32, emax: i32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let exp = rng.gen_range(emin - mant_bits as i32 - 4..=emax + 1);
            let sign = if rng.gen::<bool>() { -1.0 } else { 1.0 };
            let significand = if k % 4 == 0 {
                // on a midpoint between two representable neighbours
                let grid = 1u64 << mant_bits;
                let j = rng.gen_range(0..grid);
                1.0 + (2 * j + 1) as f64 / (2 * grid) as f64
            } else {
                1.0 + rng.gen::<u64>() as f64 / 2f64.powi(64)
            };
            sign * significand * 2f64.powi(exp)
        })
        .collect()
}
