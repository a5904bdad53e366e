//! Software emulation of IEEE-style binary floating-point formats.
//!
//! Emulated values live in an `f64` carrier that is constrained to the set of
//! numbers representable in the target format. Every primitive is computed in
//! the carrier and then rounded once, to nearest with ties to even. For
//! `+ - * /` the carrier carries at least `2p + 2` significand bits for every
//! emulated format with `p <= 24`, so the double rounding is innocuous and the
//! result is correctly rounded. `tanh` and `exp` go through the platform libm in
//! `f64` before the final rounding.
//!
//! Overflow and underflow are not errors. They are recorded in thread-local
//! sticky [`ExceptionFlags`], much like the status word of a hardware FPU.

use std::cell::Cell;
use std::fmt;

const fn pow2(k: i32) -> f64 {
    // valid for the normal f64 exponent range
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Bit-level description of a binary floating-point format.
#[derive(Clone, Copy)]
pub struct FloatFormat {
    name: &'static str,
    exponent_bits: u32,
    mantissa_bits: u32,
    emin: i32,
    max_finite: f64,
    min_normal: f64,
    unit_roundoff: f64,
    carrier: bool,
}

impl FloatFormat {
    /// IEEE 754 binary16.
    pub const FLOAT16: FloatFormat = FloatFormat::new("float16", 5, 10);
    /// Brain floating point: float32 range, 8-bit significand.
    pub const BFLOAT16: FloatFormat = FloatFormat::new("bfloat16", 8, 7);
    /// IEEE 754 binary32.
    pub const FLOAT32: FloatFormat = FloatFormat::new("float32", 8, 23);
    /// IEEE 754 binary64, the carrier itself. Quantizing to it is the identity.
    pub const FLOAT64: FloatFormat = FloatFormat::new("float64", 11, 52);

    pub const fn new(name: &'static str, exponent_bits: u32, mantissa_bits: u32) -> Self {
        assert!(exponent_bits >= 2 && exponent_bits <= 11);
        assert!(mantissa_bits >= 1 && mantissa_bits <= 52);
        let carrier = exponent_bits == 11 && mantissa_bits == 52;
        let emax = (1i32 << (exponent_bits - 1)) - 1;
        let emin = 1 - emax;
        // the rounding scale 2^(mantissa_bits - emin) must be a normal f64
        assert!(carrier || mantissa_bits as i32 - emin <= 1023);
        let m = mantissa_bits as i32;
        // (2 - 2^-m) * 2^emax, assembled without overflowing the carrier
        let max_finite = (2.0 - pow2(-m)) * pow2(emax);
        FloatFormat {
            name,
            exponent_bits,
            mantissa_bits,
            emin,
            max_finite,
            min_normal: pow2(emin),
            unit_roundoff: pow2(-(m + 1)),
            carrier,
        }
    }

    /// Looks up one of the built-in formats by name.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "float16" | "fp16" | "half" => Some(Self::FLOAT16),
            "bfloat16" | "bf16" => Some(Self::BFLOAT16),
            "float32" | "fp32" | "single" => Some(Self::FLOAT32),
            "float64" | "fp64" | "double" => Some(Self::FLOAT64),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    /// `2^-(mantissa_bits + 1)`.
    pub fn unit_roundoff(&self) -> f64 {
        self.unit_roundoff
    }

    pub fn max_finite(&self) -> f64 {
        self.max_finite
    }

    pub fn min_normal(&self) -> f64 {
        self.min_normal
    }

    pub fn min_subnormal(&self) -> f64 {
        self.min_normal * pow2(-(self.mantissa_bits as i32))
    }

    pub fn emin(&self) -> i32 {
        self.emin
    }

    pub fn emax(&self) -> i32 {
        1 - self.emin
    }

    /// Total storage width in bits, sign included.
    pub fn total_bits(&self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    /// True when every value of `self` is exactly representable in `other`.
    pub fn is_subset_of(&self, other: &FloatFormat) -> bool {
        self.mantissa_bits <= other.mantissa_bits && self.emin >= other.emin && self.emax() <= other.emax()
    }

    /// Rounds `x` to the nearest representable value, ties to even.
    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        if self.carrier {
            return x;
        }
        if !x.is_finite() {
            return x;
        }
        let ax = x.abs();
        if ax == 0.0 {
            return x;
        }
        // f64 subnormals have biased exponent 0; they lie far below every
        // emulated format's subnormal range and round to zero below.
        let e = ((ax.to_bits() >> 52) as i32 - 1023).max(self.emin);
        let ulp_exp = e - self.mantissa_bits as i32;
        let r = (ax * pow2(-ulp_exp)).round_ties_even() * pow2(ulp_exp);
        if r > self.max_finite {
            raise(ExceptionFlags::OVERFLOW);
            return f64::INFINITY.copysign(x);
        }
        if r < self.min_normal && r != ax {
            raise(ExceptionFlags::UNDERFLOW);
        }
        r.copysign(x)
    }

    /// Quantizes every element of a slice.
    pub fn quantize_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.quantize(x)).collect()
    }

    pub fn quantize_in_place(&self, xs: &mut [f64]) {
        for x in xs {
            *x = self.quantize(*x);
        }
    }

    /// True when `x` is already a value of this format (NaN and infinities included).
    pub fn is_representable(&self, x: f64) -> bool {
        if x.is_nan() {
            return true;
        }
        let saved = FLAGS.with(|f| f.get());
        let q = self.quantize(x);
        FLAGS.with(|f| f.set(saved));
        q == x
    }

    #[inline]
    pub fn add(&self, a: f64, b: f64) -> f64 {
        self.quantize(a + b)
    }

    #[inline]
    pub fn sub(&self, a: f64, b: f64) -> f64 {
        self.quantize(a - b)
    }

    #[inline]
    pub fn mul(&self, a: f64, b: f64) -> f64 {
        self.quantize(a * b)
    }

    #[inline]
    pub fn div(&self, a: f64, b: f64) -> f64 {
        self.quantize(a / b)
    }

    /// `acc + a * b` with the product rounded before the sum (no fused multiply-add).
    #[inline]
    pub fn dot_step(&self, acc: f64, a: f64, b: f64) -> f64 {
        self.quantize(acc + self.quantize(a * b))
    }

    #[inline]
    pub fn tanh(&self, a: f64) -> f64 {
        self.quantize(a.tanh())
    }

    #[inline]
    pub fn exp(&self, a: f64) -> f64 {
        self.quantize(a.exp())
    }

    /// Left-to-right dot product, rounding after every product and every partial sum.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).fold(0.0, |acc, (&x, &y)| self.dot_step(acc, x, y))
    }

    /// Left-to-right sum, rounding after every partial sum.
    pub fn sum(&self, a: &[f64]) -> f64 {
        a.iter().fold(0.0, |acc, &x| self.add(acc, x))
    }

    /// Decodes a bit pattern laid out as sign | exponent | mantissa.
    pub fn decode(&self, bits: u64) -> f64 {
        let m = self.mantissa_bits;
        let e = self.exponent_bits;
        let frac = bits & ((1u64 << m) - 1);
        let biased = ((bits >> m) & ((1u64 << e) - 1)) as i32;
        let negative = (bits >> (m + e)) & 1 == 1;
        let all_ones = (1i32 << e) - 1;
        let mag = if biased == all_ones {
            if frac == 0 {
                f64::INFINITY
            } else {
                f64::NAN
            }
        } else if biased == 0 {
            frac as f64 * self.min_subnormal()
        } else {
            (frac as f64 * pow2(-(m as i32)) + 1.0) * pow2(biased + self.emin - 1)
        };
        if negative {
            -mag
        } else {
            mag
        }
    }

    /// Encodes a representable value as sign | exponent | mantissa bits.
    /// Non-representable inputs are quantized first; NaN encodes as the canonical quiet NaN.
    pub fn encode(&self, x: f64) -> u64 {
        let m = self.mantissa_bits;
        let e = self.exponent_bits;
        let sign = if x.is_sign_negative() { 1u64 << (m + e) } else { 0 };
        let all_ones = (1u64 << e) - 1;
        if x.is_nan() {
            return (all_ones << m) | (1u64 << (m - 1));
        }
        let q = self.quantize(x).abs();
        if q.is_infinite() {
            return sign | (all_ones << m);
        }
        if q < self.min_normal {
            return sign | (q / self.min_subnormal()) as u64;
        }
        let exp = (q.to_bits() >> 52) as i32 - 1023;
        let frac = ((q * pow2(-exp) - 1.0) * pow2(m as i32)) as u64;
        sign | (((exp - self.emin + 1) as u64) << m) | frac
    }
}

impl PartialEq for FloatFormat {
    fn eq(&self, other: &Self) -> bool {
        self.exponent_bits == other.exponent_bits && self.mantissa_bits == other.mantissa_bits
    }
}

impl fmt::Debug for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(e{}m{})", self.name, self.exponent_bits, self.mantissa_bits)
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// Sticky overflow/underflow status raised by [`FloatFormat::quantize`] on the current thread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExceptionFlags(u8);

impl ExceptionFlags {
    pub const OVERFLOW: ExceptionFlags = ExceptionFlags(1);
    /// Tiny (below `min_normal`) and inexact.
    pub const UNDERFLOW: ExceptionFlags = ExceptionFlags(2);

    pub fn overflow(self) -> bool {
        self.0 & Self::OVERFLOW.0 != 0
    }

    pub fn underflow(self) -> bool {
        self.0 & Self::UNDERFLOW.0 != 0
    }

    pub fn is_clear(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: ExceptionFlags) -> ExceptionFlags {
        ExceptionFlags(self.0 | other.0)
    }
}

thread_local! {
    static FLAGS: Cell<u8> = const { Cell::new(0) };
}

#[cold]
fn raise(flag: ExceptionFlags) {
    FLAGS.with(|f| f.set(f.get() | flag.0));
}

/// Returns and clears the calling thread's exception flags.
pub fn take_flags() -> ExceptionFlags {
    ExceptionFlags(FLAGS.with(|f| f.replace(0)))
}

/// Raises `flags` on the calling thread in addition to those already set.
pub fn raise_flags(flags: ExceptionFlags) {
    if !flags.is_clear() {
        raise(flags);
    }
}

/// Returns the calling thread's exception flags without clearing them.
pub fn peek_flags() -> ExceptionFlags {
    ExceptionFlags(FLAGS.with(|f| f.get()))
}

/// Values exactly representable in a given format.
#[derive(Clone, Debug, PartialEq)]
pub struct LowArray {
    data: Vec<f64>,
    fmt: FloatFormat,
}

impl LowArray {
    /// Rounds `xs` into `fmt`.
    pub fn quantize(xs: &[f64], fmt: FloatFormat) -> Self {
        LowArray {
            data: fmt.quantize_slice(xs),
            fmt,
        }
    }

    /// Wraps values that are already representable; returns `None` otherwise.
    pub fn from_representable(data: Vec<f64>, fmt: FloatFormat) -> Option<Self> {
        if data.iter().all(|&x| fmt.is_representable(x)) {
            Some(LowArray { data, fmt })
        } else {
            None
        }
    }

    pub fn format(&self) -> FloatFormat {
        self.fmt
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Deref for LowArray {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

/// Element-wise primitives available under emulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `acc + a * b`, three operands, product rounded first.
    DotStep,
    Tanh,
    Exp,
    Abs,
    Max,
}

impl LowOp {
    pub fn arity(self) -> usize {
        match self {
            LowOp::Tanh | LowOp::Exp | LowOp::Abs => 1,
            LowOp::Add | LowOp::Sub | LowOp::Mul | LowOp::Div | LowOp::Max => 2,
            LowOp::DotStep => 3,
        }
    }
}

/// Applies `op` element-wise, correctly rounding each result into `fmt`.
///
/// Panics if the number of operands does not match the op's arity or the
/// operands differ in length.
pub fn low_op(op: LowOp, args: &[&[f64]], fmt: FloatFormat) -> LowArray {
    assert_eq!(args.len(), op.arity(), "{op:?} takes {} operands", op.arity());
    let n = args[0].len();
    assert!(args.iter().all(|a| a.len() == n), "operand length mismatch");
    let data = (0..n)
        .map(|i| match op {
            LowOp::Add => fmt.add(args[0][i], args[1][i]),
            LowOp::Sub => fmt.sub(args[0][i], args[1][i]),
            LowOp::Mul => fmt.mul(args[0][i], args[1][i]),
            LowOp::Div => fmt.div(args[0][i], args[1][i]),
            LowOp::DotStep => fmt.dot_step(args[0][i], args[1][i], args[2][i]),
            LowOp::Tanh => fmt.tanh(args[0][i]),
            LowOp::Exp => fmt.exp(args[0][i]),
            LowOp::Abs => fmt.quantize(args[0][i].abs()),
            LowOp::Max => {
                let (a, b) = (args[0][i], args[1][i]);
                if a.is_nan() || b.is_nan() {
                    f64::NAN
                } else {
                    fmt.quantize(a.max(b))
                }
            }
        })
        .collect();
    LowArray { data, fmt }
}

/// Infinity norm; NaN if any entry is NaN.
pub fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, &x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F16: FloatFormat = FloatFormat::FLOAT16;
    const BF16: FloatFormat = FloatFormat::BFLOAT16;

    #[test]
    fn format_constants() {
        assert_eq!(F16.unit_roundoff(), 2f64.powi(-11));
        assert_eq!(F16.max_finite(), 65504.0);
        assert_eq!(F16.min_normal(), 2f64.powi(-14));
        assert_eq!(F16.min_subnormal(), 2f64.powi(-24));
        assert_eq!(BF16.unit_roundoff(), 2f64.powi(-8));
        assert_eq!(BF16.min_normal(), 2f64.powi(-126));
        assert_eq!(FloatFormat::FLOAT32.unit_roundoff(), 2f64.powi(-24));
        assert_eq!(FloatFormat::FLOAT32.max_finite(), f32::MAX as f64);
        assert_eq!(FloatFormat::FLOAT32.min_subnormal(), 2f64.powi(-149));
        assert_eq!(FloatFormat::FLOAT64.max_finite(), f64::MAX);
        assert!(F16.is_subset_of(&FloatFormat::FLOAT32));
        assert!(BF16.is_subset_of(&FloatFormat::FLOAT32));
        assert!(!F16.is_subset_of(&BF16));
    }

    #[test]
    fn float16_rounding_examples() {
        assert_eq!(F16.quantize(1.0), 1.0);
        assert_eq!(F16.quantize(65504.0 * (1.0 + 1e-6)), 65504.0);
        assert_eq!(F16.quantize(65519.99), 65504.0);
        assert_eq!(F16.quantize(65520.0), f64::INFINITY);
        assert_eq!(F16.quantize(-65520.0), f64::NEG_INFINITY);
        assert_eq!(F16.quantize(1.0 + 2f64.powi(-11)), 1.0);
        assert_eq!(F16.quantize(1.0 + 3.0 * 2f64.powi(-11)), 1.0 + 2f64.powi(-9));
        assert_eq!(F16.quantize(2f64.powi(-25)), 0.0);
        assert_eq!(F16.quantize(1.5 * 2f64.powi(-25)), 2f64.powi(-24));
        assert!(F16.quantize(f64::NAN).is_nan());
        assert!(F16.quantize(-0.0).is_sign_negative());
        assert!(F16.quantize(-2f64.powi(-30)).is_sign_negative());
    }

    #[test]
    fn low_op_examples() {
        assert_eq!(low_op(LowOp::Add, &[&[1.0], &[2f64.powi(-12)]], F16).as_slice(), &[1.0]);
        assert_eq!(low_op(LowOp::Mul, &[&[2.0], &[3.0]], F16).as_slice(), &[6.0]);
        assert_eq!(low_op(LowOp::Add, &[&[65504.0], &[65504.0]], F16).as_slice(), &[f64::INFINITY]);
        let nan = low_op(LowOp::Sub, &[&[f64::INFINITY], &[f64::INFINITY]], F16);
        assert!(nan[0].is_nan());
        assert_eq!(low_op(LowOp::DotStep, &[&[1.0], &[1.0], &[2f64.powi(-11)]], F16).as_slice(), &[1.0]);
    }

    #[test]
    fn flags_track_overflow_and_underflow() {
        take_flags();
        F16.quantize(1.0);
        F16.quantize(2f64.powi(-24));
        assert!(take_flags().is_clear(), "exact subnormal is not an underflow");
        F16.quantize(1e6);
        let f = take_flags();
        assert!(f.overflow() && !f.underflow());
        F16.quantize(1e-7 / 3.0);
        assert!(take_flags().underflow());
        assert!(take_flags().is_clear());
    }

    #[test]
    fn encode_decode_known_patterns() {
        assert_eq!(F16.encode(1.0), 0x3c00);
        assert_eq!(F16.encode(65504.0), 0x7bff);
        assert_eq!(F16.encode(-2.0), 0xc000);
        assert_eq!(F16.encode(2f64.powi(-24)), 0x0001);
        assert_eq!(F16.encode(f64::INFINITY), 0x7c00);
        assert_eq!(F16.decode(0x3555), 0.333251953125);
        assert_eq!(BF16.encode(1.0), 0x3f80);
        assert_eq!(BF16.decode(0x4049), 3.140625);
    }

    #[test]
    fn reductions_round_every_step() {
        // 2048 + 1 + 1 in float16: each partial sum rounds back to 2048
        assert_eq!(F16.sum(&[2048.0, 1.0, 1.0]), 2048.0);
        assert_eq!(F16.sum(&[1.0, 1.0, 2048.0]), 2050.0);
        assert_eq!(F16.dot(&[1.0, 1.0], &[2048.0, 1.0]), 2048.0);
    }

    #[test]
    fn low_array_rejects_unrepresentable() {
        assert!(LowArray::from_representable(vec![1.0, 0.5], F16).is_some());
        assert!(LowArray::from_representable(vec![0.1], F16).is_none());
        let q = LowArray::quantize(&[0.1, 3.0], F16);
        assert_eq!(q.format(), F16);
        assert!(LowArray::from_representable(q.into_vec(), F16).is_some());
    }

    fn formats() -> impl Strategy<Value = FloatFormat> {
        prop_oneof![Just(F16), Just(BF16), Just(FloatFormat::FLOAT32)]
    }

    proptest! {
        #[test]
        fn idempotent(fmt in formats(), x in any::<f64>()) {
            let q = fmt.quantize(x);
            let qq = fmt.quantize(q);
            prop_assert!(q.to_bits() == qq.to_bits() || (q.is_nan() && qq.is_nan()));
        }

        #[test]
        fn monotone(fmt in formats(), a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fmt.quantize(x) <= fmt.quantize(y));
        }

        #[test]
        fn relative_error_within_unit_roundoff(fmt in formats(), m in 1.0f64..2.0, e in -14i32..15) {
            let x = m * 2f64.powi(e);
            let q = fmt.quantize(x);
            prop_assert!((q - x).abs() <= fmt.unit_roundoff() * x.abs());
        }

        #[test]
        fn power_of_two_scaling_commutes(m in 1.0f64..2.0, e in -10i32..5, s in -4i32..5) {
            let x = m * 2f64.powi(e);
            let scale = 2f64.powi(s);
            prop_assert_eq!(F16.quantize(scale * x), scale * F16.quantize(x));
        }
    }
}
