//! Integer-only nonlinear kernels: softmax, inverse square root and
//! LayerNorm.
//!
//! All three work on `i64` codes and an internal 30-bit fixed-point scale,
//! using only adds, multiplies, shifts, table lookups and one integer
//! division per softmax element — the operation set the accelerator's
//! special-function unit provides.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::LN_EPS;

use super::{quantize, rescale_shift, rhu_div, sat_add, FixedFormat, QuantScheme};

/// Internal working precision of the kernel pipelines.
const KERNEL_FRAC: u32 = 30;

/// Scores this far below the row maximum (in value) flush to zero.
const SOFTMAX_CLAMP: i64 = 16;

/// Round-half-up right shift for non-negative intermediates.
#[inline]
fn rhu_pos(v: i64, shift: u32) -> i64 {
    debug_assert!(v >= 0);
    if shift == 0 {
        return v;
    }
    (v + (1i64 << (shift - 1))) >> shift
}

/// log2(e) at the kernel scale.
fn log2e_q30() -> i64 {
    (std::f64::consts::LOG2_E * (1u64 << KERNEL_FRAC) as f64).round() as i64
}

/// 2^(-i/256) for i = 0..=256 at the kernel scale; entry 256 is exactly
/// one half, so interpolation never needs a wrap-around special case.
fn exp2_lut() -> &'static [i64; 257] {
    static LUT: OnceLock<[i64; 257]> = OnceLock::new();
    LUT.get_or_init(|| {
        core::array::from_fn(|i| {
            ((-(i as f64) / 256.0).exp2() * (1u64 << KERNEL_FRAC) as f64).round() as i64
        })
    })
}

/// exp(t) for t <= 0, range-reduced through the power-of-two table.
///
/// `t` carries `frac` fractional bits; the result carries [`KERNEL_FRAC`].
/// Values at or below -16 return zero.
fn qexp_neg(t: i64, frac: u32) -> i64 {
    debug_assert!(t <= 0);
    if t <= -(SOFTMAX_CLAMP << frac) {
        return 0;
    }
    // u = -t * log2(e), reduced to u = n + g with integer n and g in [0, 1).
    let u = rhu_pos((-t) * log2e_q30(), frac);
    let n = (u >> KERNEL_FRAC) as u32;
    let g = u & ((1i64 << KERNEL_FRAC) - 1);
    // Linear interpolation on the 256-entry table over g's top 8 bits.
    let lut = exp2_lut();
    let idx = (g >> (KERNEL_FRAC - 8)) as usize;
    let rem = g & ((1i64 << (KERNEL_FRAC - 8)) - 1);
    let lo = lut[idx];
    let hi = lut[idx + 1];
    let val = lo - rhu_pos((lo - hi) * rem, KERNEL_FRAC - 8);
    // Apply the integer part: divide by 2^n, rounding half up.
    rhu_pos(val, n)
}

/// Integer softmax over one row of scores.
///
/// `scores` are codes in `in_fmt`; the result is codes in `out_fmt` that
/// sum to exactly `2^out_fmt.frac_bits`: after per-element rounding the
/// residual is added to the first maximal element. Scores more than 16
/// below the row maximum flush to zero probability.
pub fn qsoftmax(scores: &[i64], in_fmt: FixedFormat, out_fmt: FixedFormat) -> Result<Vec<i64>> {
    if scores.is_empty() {
        return Err(Error::Argument("softmax of an empty row".into()));
    }
    if out_fmt.frac_bits > out_fmt.total_bits - 2 {
        return Err(Error::Argument(
            "softmax output format cannot represent probability one".into(),
        ));
    }
    let max = *scores.iter().max().unwrap();
    let argmax = scores.iter().position(|&s| s == max).unwrap();

    let one = 1i64 << out_fmt.frac_bits;
    let q: Vec<i64> = scores
        .iter()
        .map(|&s| {
            let e = qexp_neg(s - max, in_fmt.frac_bits);
            rhu_pos(e, KERNEL_FRAC - out_fmt.frac_bits)
        })
        .collect();
    let total: i64 = q.iter().sum();
    debug_assert!(total >= one, "max element always contributes full weight");

    // Normalize with round-half-up division, then repair the rounding
    // residual on the dominant element so the row sums exactly to one.
    let mut p: Vec<i64> = q
        .iter()
        .map(|&qi| rhu_div(qi << out_fmt.frac_bits, total))
        .collect();
    let psum: i64 = p.iter().sum();
    p[argmax] += one - psum;
    Ok(p.into_iter()
        .map(|v| v.clamp(out_fmt.min_code(), out_fmt.max_code()))
        .collect())
}

/// Integer inverse square root: `x` is a positive code in `in_fmt`, the
/// result approximates `1/sqrt(value)` in `out_fmt`.
///
/// The argument is normalized to `m * 4^p` with `m` in [1, 4); a minimax
/// linear seed (`1.1033556 - m/6`, max error 0.063) followed by three
/// Newton-Raphson steps `y <- y (3 - m y^2) / 2` converges the relative
/// error below 1e-8, after which output rounding dominates.
pub fn qsqrt_recip(x: i64, in_fmt: FixedFormat, out_fmt: FixedFormat) -> Result<i64> {
    if x <= 0 {
        return Err(Error::Numeric(format!(
            "inverse square root domain error: code {x} is not positive"
        )));
    }
    let bit = 63 - x.leading_zeros() as i32; // floor(log2(x))
    let ebits = bit - in_fmt.frac_bits as i32;
    let mut p = ebits.div_euclid(2);
    let sh = KERNEL_FRAC as i32 - in_fmt.frac_bits as i32 - 2 * p;
    let mut m = if sh >= 0 {
        x << sh
    } else {
        rhu_pos(x, (-sh) as u32)
    };
    // Rounding can push m up to exactly 4.0; fold back into the exponent.
    if m >= 1i64 << (KERNEL_FRAC + 2) {
        m >>= 2;
        p += 1;
    }
    debug_assert!((1i64 << KERNEL_FRAC..1i64 << (KERNEL_FRAC + 2)).contains(&m));

    let seed_a = (1.103_355_6 * (1u64 << KERNEL_FRAC) as f64).round() as i64;
    let inv6 = ((1u64 << KERNEL_FRAC) as f64 / 6.0).round() as i64;
    let mut y = seed_a - rhu_pos(m * inv6, KERNEL_FRAC);
    for _ in 0..3 {
        let y2 = rhu_pos(y * y, KERNEL_FRAC);
        let t = rhu_pos(m * y2, KERNEL_FRAC);
        y = rhu_pos(y * (3 * (1i64 << KERNEL_FRAC) - t), KERNEL_FRAC + 1);
    }
    // Result value is y * 2^-p; re-express at the output scale.
    Ok(rescale_shift(
        y,
        KERNEL_FRAC as i32 + p - out_fmt.frac_bits as i32,
        out_fmt,
    ))
}

/// Integer LayerNorm over one token.
///
/// `x` holds codes in the scheme's intermediate format; `gamma` is stored
/// in the weight format with a power-of-two tensor scale `gamma_scale`;
/// `beta` is stored in the arithmetic format. Output codes are in the
/// intermediate format. Mean and variance use round-half-up division; the
/// variance epsilon is the arithmetic-format quantization of the float
/// epsilon, floored at one code so the rsqrt argument stays positive.
pub fn qlayer_norm(
    x: &[i64],
    gamma: &[i64],
    gamma_scale: i32,
    beta: &[i64],
    scheme: &QuantScheme,
) -> Result<Vec<i64>> {
    let d = x.len();
    if d == 0 {
        return Err(Error::Argument("layer norm of an empty token".into()));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Argument(
            "layer norm parameter length mismatch".into(),
        ));
    }
    let f_i = scheme.inter.frac_bits as i32;
    let f_a = scheme.arith.frac_bits as i32;
    let f_w = scheme.weights.frac_bits as i32;

    let sum: i64 = x.iter().sum();
    let mu = rhu_div(sum, d as i64);
    let dev: Vec<i64> = x.iter().map(|&v| v - mu).collect();
    let var_sum: i64 = dev.iter().map(|&dv| dv * dv).sum();
    let var = rhu_div(var_sum, d as i64); // 2 * f_i fractional bits
    let var_a = rescale_shift(var, 2 * f_i - f_a, scheme.arith);
    let eps = quantize(LN_EPS, scheme.arith)?.max(1);
    let v = sat_add(var_a, eps, scheme.arith);
    let inv = qsqrt_recip(v, scheme.arith, scheme.arith)?;

    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let t1 = rescale_shift(dev[j] * inv, f_i, scheme.arith);
        let t2 = rescale_shift(t1 * gamma[j], f_w - gamma_scale, scheme.arith);
        let t3 = sat_add(t2, beta[j], scheme.arith);
        out.push(rescale_shift(t3, f_a - f_i, scheme.inter));
    }
    Ok(out)
}
