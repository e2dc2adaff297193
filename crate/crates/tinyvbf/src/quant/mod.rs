//! Fixed-point arithmetic: Q-formats, rounding rules and quantization
//! schemes.
//!
//! A [`FixedFormat`] is a signed two's-complement format with `total_bits`
//! (4..=32) and `frac_bits` fractional bits; codes live in `i64` working
//! storage. The rounding contract, shared with the accelerator model, is:
//!
//! * **quantize** (float to code): round to nearest, ties to even, then
//!   saturate;
//! * **rescale** (code to code): right shifts round half up — add half then
//!   arithmetic shift, so -1.5 rounds to -1 — left shifts saturate;
//! * **addition**: saturating at the format width.
//!
//! Dot products accumulate 16-lane chunks through a fixed pairwise adder
//! tree ([`adder_tree16`]); each chunk result is rescaled to the arithmetic
//! format before joining the running sum. This order is part of the bit-
//! exactness contract with the accelerator simulator.

mod kernels;
mod qmodel;

pub use kernels::{qlayer_norm, qsoftmax, qsqrt_recip};
pub use qmodel::{
    chunked_dot, qforward, qforward_line, QBlockWeights, QDense, QHeadWeights, QLayerNorm,
    QuantizedModel,
};
pub(crate) use qmodel::{dot_shift as qmodel_dot_shift, store_inter as qmodel_store_inter};

use crate::error::{Error, Result};

/// Signed fixed-point format: `total_bits` wide with `frac_bits` fractional
/// bits (so one sign bit and `total_bits - 1 - frac_bits` integer bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
}

impl FixedFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(4..=32).contains(&total_bits) {
            return Err(Error::Argument(format!(
                "total_bits must lie in [4, 32], got {total_bits}"
            )));
        }
        if frac_bits > total_bits - 1 {
            return Err(Error::Argument(format!(
                "frac_bits {frac_bits} leaves no sign bit in {total_bits}-bit format"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    /// Largest representable code.
    pub fn max_code(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Smallest (most negative) representable code.
    pub fn min_code(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    /// Value of one code step.
    pub fn step(&self) -> f64 {
        (self.frac_bits as f64).exp2().recip()
    }

    /// Largest representable value.
    pub fn max_value(&self) -> f64 {
        self.max_code() as f64 * self.step()
    }

    /// Smallest representable value.
    pub fn min_value(&self) -> f64 {
        self.min_code() as f64 * self.step()
    }
}

/// Clamps a wide intermediate to the representable range of `fmt`.
#[inline]
pub fn saturate(v: i128, fmt: FixedFormat) -> i64 {
    let max = fmt.max_code() as i128;
    let min = fmt.min_code() as i128;
    v.clamp(min, max) as i64
}

/// Float to code: scale, round to nearest even, saturate.
pub fn quantize(x: f64, fmt: FixedFormat) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::Numeric(format!(
            "cannot quantize non-finite value {x}"
        )));
    }
    let scaled = x * (fmt.frac_bits as f64).exp2();
    let rounded = scaled.round_ties_even();
    if rounded >= fmt.max_code() as f64 {
        return Ok(fmt.max_code());
    }
    if rounded <= fmt.min_code() as f64 {
        return Ok(fmt.min_code());
    }
    Ok(rounded as i64)
}

/// Code to float (exact).
pub fn dequantize(code: i64, fmt: FixedFormat) -> f64 {
    code as f64 * fmt.step()
}

/// Full-precision product of two codes; the result carries
/// `a_fmt.frac_bits + b_fmt.frac_bits` fractional bits and is exact
/// (24-bit x 24-bit products stay far inside `i64`).
#[inline]
pub fn qmul(a: i64, b: i64) -> i64 {
    a * b
}

/// Shifts a code right (`shift > 0`, rounding half up) or left
/// (`shift <= 0`), saturating to `fmt`.
///
/// Round half up means adding half an output step before an arithmetic
/// shift: 1.5 steps round to 2, -1.5 steps round to -1.
pub fn rescale_shift(v: i64, shift: i32, fmt: FixedFormat) -> i64 {
    let wide = v as i128;
    let shifted = if shift > 0 {
        if shift >= 127 {
            0
        } else {
            (wide + (1i128 << (shift - 1))) >> shift
        }
    } else {
        let left = (-shift) as u32;
        if left >= 64 {
            // Any nonzero value has saturated long before this point.
            if wide == 0 {
                0
            } else if wide > 0 {
                i128::MAX >> 1
            } else {
                i128::MIN >> 1
            }
        } else {
            wide << left
        }
    };
    saturate(shifted, fmt)
}

/// Saturating addition of two codes in the same format.
#[inline]
pub fn sat_add(a: i64, b: i64, fmt: FixedFormat) -> i64 {
    saturate(a as i128 + b as i128, fmt)
}

/// Round-half-up integer division for a positive divisor:
/// `rhu_div(3, 2) = 2`, `rhu_div(-3, 2) = -1`.
#[inline]
pub fn rhu_div(a: i64, b: i64) -> i64 {
    debug_assert!(b > 0);
    let num = 2i128 * a as i128 + b as i128;
    num.div_euclid(2 * b as i128) as i64
}

/// Number of multiplier lanes reduced by one adder tree pass.
pub const DOT_LANES: usize = 16;

/// Fixed-order pairwise reduction of 16 lane products (depth-4 binary
/// tree). Inputs are exact wide products, so no intermediate saturation is
/// applied; callers guarantee headroom (24-bit operands leave 13 free bits).
#[inline]
pub fn adder_tree16(p: &[i64; DOT_LANES]) -> i64 {
    let l0: [i64; 8] = core::array::from_fn(|i| p[2 * i] + p[2 * i + 1]);
    let l1: [i64; 4] = core::array::from_fn(|i| l0[2 * i] + l0[2 * i + 1]);
    let l2: [i64; 2] = core::array::from_fn(|i| l1[2 * i] + l1[2 * i + 1]);
    l2[0] + l2[1]
}

/// One named set of formats for the model's tensor classes.
///
/// `weights` also applies to LayerNorm gains; biases and LayerNorm offsets
/// are stored in `arith`. Activations rest in `inter` between layers and
/// attention probabilities in `softmax`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantScheme {
    pub name: &'static str,
    pub weights: FixedFormat,
    pub softmax: FixedFormat,
    pub arith: FixedFormat,
    pub inter: FixedFormat,
}

macro_rules! fmt {
    ($t:expr, $f:expr) => {
        FixedFormat {
            total_bits: $t,
            frac_bits: $f,
        }
    };
}

impl QuantScheme {
    /// Uniform 24-bit: weights Q1.22, arithmetic Q4.19.
    pub fn q24() -> Self {
        Self {
            name: "q24",
            weights: fmt!(24, 22),
            softmax: fmt!(24, 22),
            arith: fmt!(24, 19),
            inter: fmt!(24, 19),
        }
    }

    /// Uniform 20-bit: weights Q1.18, arithmetic Q4.15.
    pub fn q20() -> Self {
        Self {
            name: "q20",
            weights: fmt!(20, 18),
            softmax: fmt!(20, 18),
            arith: fmt!(20, 15),
            inter: fmt!(20, 15),
        }
    }

    /// Uniform 16-bit: weights Q1.14, arithmetic Q4.11.
    pub fn q16() -> Self {
        Self {
            name: "q16",
            weights: fmt!(16, 14),
            softmax: fmt!(16, 14),
            arith: fmt!(16, 11),
            inter: fmt!(16, 11),
        }
    }

    /// Hybrid: 8-bit weights, 24-bit softmax, 20-bit arithmetic.
    pub fn hybrid1() -> Self {
        Self {
            name: "hybrid1",
            weights: fmt!(8, 6),
            softmax: fmt!(24, 22),
            arith: fmt!(20, 15),
            inter: fmt!(20, 15),
        }
    }

    /// Hybrid: 8-bit weights, 24-bit softmax, 16-bit arithmetic.
    pub fn hybrid2() -> Self {
        Self {
            name: "hybrid2",
            weights: fmt!(8, 6),
            softmax: fmt!(24, 22),
            arith: fmt!(16, 11),
            inter: fmt!(16, 11),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "q24" => Some(Self::q24()),
            "q20" => Some(Self::q20()),
            "q16" => Some(Self::q16()),
            "hybrid1" => Some(Self::hybrid1()),
            "hybrid2" => Some(Self::hybrid2()),
            _ => None,
        }
    }

    /// Every built-in scheme, widest first.
    pub fn all() -> Vec<Self> {
        vec![
            Self::q24(),
            Self::q20(),
            Self::q16(),
            Self::hybrid1(),
            Self::hybrid2(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_bounds() {
        assert!(FixedFormat::new(3, 1).is_err());
        assert!(FixedFormat::new(33, 1).is_err());
        assert!(FixedFormat::new(8, 8).is_err());
        let f = FixedFormat::new(8, 6).unwrap();
        assert_eq!(f.max_code(), 127);
        assert_eq!(f.min_code(), -128);
        assert_eq!(f.max_value(), 127.0 / 64.0);
    }

    #[test]
    fn quantize_frozen_examples() {
        // 0.5 in an 8-bit format with 6 fractional bits is code 32.
        let f86 = FixedFormat::new(8, 6).unwrap();
        assert_eq!(quantize(0.5, f86).unwrap(), 32);
        // 1.0 in an 8-bit format with 7 fractional bits saturates to 127.
        let f87 = FixedFormat::new(8, 7).unwrap();
        assert_eq!(quantize(1.0, f87).unwrap(), 127);
        assert_eq!(quantize(-1.0, f87).unwrap(), -128);
    }

    #[test]
    fn quantize_rounds_ties_to_even() {
        let f = FixedFormat::new(8, 0).unwrap();
        assert_eq!(quantize(2.5, f).unwrap(), 2);
        assert_eq!(quantize(3.5, f).unwrap(), 4);
        assert_eq!(quantize(-2.5, f).unwrap(), -2);
        assert_eq!(quantize(-3.5, f).unwrap(), -4);
    }

    #[test]
    fn quantize_rejects_non_finite() {
        let f = FixedFormat::new(16, 8).unwrap();
        assert!(quantize(f64::NAN, f).is_err());
        assert!(quantize(f64::INFINITY, f).is_err());
    }

    #[test]
    fn dequantize_inverts_representable_values() {
        let f = FixedFormat::new(16, 9).unwrap();
        for code in [-256i64, -1, 0, 1, 100, 255, f.max_code(), f.min_code()] {
            let v = dequantize(code, f);
            assert_eq!(quantize(v, f).unwrap(), code);
        }
    }

    #[test]
    fn qmul_matches_wide_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = rng.random_range(-(1i64 << 23)..(1i64 << 23));
            let b = rng.random_range(-(1i64 << 23)..(1i64 << 23));
            assert_eq!(qmul(a, b) as i128, a as i128 * b as i128);
        }
    }

    #[test]
    fn rescale_rounds_half_up() {
        let f = FixedFormat::new(24, 19).unwrap();
        assert_eq!(rescale_shift(3, 1, f), 2); // 1.5 -> 2
        assert_eq!(rescale_shift(-3, 1, f), -1); // -1.5 -> -1
        assert_eq!(rescale_shift(5, 1, f), 3); // 2.5 -> 3
        assert_eq!(rescale_shift(-5, 1, f), -2); // -2.5 -> -2
        assert_eq!(rescale_shift(4, 2, f), 1);
        assert_eq!(rescale_shift(100, 0, f), 100);
    }

    #[test]
    fn rescale_left_shift_saturates() {
        let f = FixedFormat::new(8, 0).unwrap();
        assert_eq!(rescale_shift(100, -2, f), 127);
        assert_eq!(rescale_shift(-100, -2, f), -128);
        assert_eq!(rescale_shift(3, -2, f), 12);
        assert_eq!(rescale_shift(1, -100, f), 127);
        assert_eq!(rescale_shift(0, -100, f), 0);
    }

    #[test]
    fn rescale_huge_right_shift_is_zero() {
        let f = FixedFormat::new(24, 19).unwrap();
        assert_eq!(rescale_shift(12345, 60, f), 0);
    }

    #[test]
    fn sat_add_clamps() {
        let f = FixedFormat::new(8, 0).unwrap();
        assert_eq!(sat_add(100, 100, f), 127);
        assert_eq!(sat_add(-100, -100, f), -128);
        assert_eq!(sat_add(50, -20, f), 30);
    }

    #[test]
    fn rhu_div_examples() {
        assert_eq!(rhu_div(3, 2), 2);
        assert_eq!(rhu_div(-3, 2), -1);
        assert_eq!(rhu_div(7, 3), 2);
        assert_eq!(rhu_div(-7, 3), -2);
        assert_eq!(rhu_div(0, 5), 0);
    }

    #[test]
    fn adder_tree_equals_plain_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p: [i64; 16] =
                core::array::from_fn(|_| rng.random_range(-(1i64 << 46)..(1i64 << 46)));
            assert_eq!(adder_tree16(&p), p.iter().sum::<i64>());
        }
    }

    #[test]
    fn scheme_presets_have_expected_widths() {
        let q24 = QuantScheme::q24();
        assert_eq!(q24.weights, fmt!(24, 22));
        assert_eq!(q24.arith, fmt!(24, 19));
        let h1 = QuantScheme::hybrid1();
        assert_eq!(h1.weights, fmt!(8, 6));
        assert_eq!(h1.softmax, fmt!(24, 22));
        assert_eq!(h1.arith, fmt!(20, 15));
        let h2 = QuantScheme::hybrid2();
        assert_eq!(h2.arith, fmt!(16, 11));
        assert!(QuantScheme::by_name("q20").is_some());
        assert!(QuantScheme::by_name("q12").is_none());
        assert_eq!(QuantScheme::all().len(), 5);
    }

    #[test]
    fn quantize_saturation_sweep() {
        let f = FixedFormat::new(12, 4).unwrap();
        assert_eq!(quantize(1e9, f).unwrap(), f.max_code());
        assert_eq!(quantize(-1e9, f).unwrap(), f.min_code());
        assert_eq!(quantize(f.max_value(), f).unwrap(), f.max_code());
        assert_eq!(quantize(f.min_value(), f).unwrap(), f.min_code());
    }
}
