//! Hybrid-quantized model storage and the integer forward pass.
//!
//! Storage rules: weight matrices and LayerNorm gains are quantized
//! per-tensor into the scheme's weight format after normalization by a
//! power-of-two tensor scale `2^scale` (so magnitudes land in [0.5, 1]);
//! biases and LayerNorm offsets live in the arithmetic format; activations
//! rest in the intermediate format between layers; attention probabilities
//! use the softmax format.
//!
//! Every dot product follows the canonical accumulation order defined by
//! [`chunked_dot`]: 16-lane chunks in ascending lane order, exact products,
//! a fixed pairwise adder tree, a round-half-up rescale of the chunk sum to
//! the arithmetic format (folding in the tensor scale), then a saturating
//! add into an accumulator seeded with the bias. The accelerator simulator
//! replays exactly this arithmetic, so any reordering here is a breaking
//! change.

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::data::{IQImage, TofTensor};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};

use super::kernels::qlayer_norm as qlayer_norm_impl;
use super::{
    adder_tree16, dequantize, qsoftmax, quantize, rescale_shift, sat_add, FixedFormat, QuantScheme,
    DOT_LANES,
};

/// Quantized dense layer: codes in the weight format with a power-of-two
/// tensor scale, bias codes in the arithmetic format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QDense {
    pub w: Array2<i64>,
    pub w_scale: i32,
    pub b: Array1<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QLayerNorm {
    pub gamma: Array1<i64>,
    pub gamma_scale: i32,
    pub beta: Array1<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QHeadWeights {
    pub wq: QDense,
    pub wk: QDense,
    pub wv: QDense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QBlockWeights {
    pub ln1: QLayerNorm,
    pub heads: Vec<QHeadWeights>,
    pub wo: QDense,
    pub ln2: QLayerNorm,
    pub mlp1: QDense,
    pub mlp2: QDense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub scheme: QuantScheme,
    pub encoder: QDense,
    pub blocks: Vec<QBlockWeights>,
    pub decoder: Vec<QDense>,
    /// `1/sqrt(head_dim)` as an arithmetic-format code.
    pub score_scale: i64,
}

/// Power-of-two tensor scale: smallest `s` with `max|w| / 2^s <= 1`.
fn po2_scale(max_abs: f64) -> i32 {
    if max_abs == 0.0 {
        0
    } else {
        max_abs.log2().ceil() as i32
    }
}

fn quantize_dense(w: &Array2<f32>, b: &Array1<f32>, scheme: &QuantScheme) -> Result<QDense> {
    let max_abs = w.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let w_scale = po2_scale(max_abs);
    let norm = (w_scale as f64).exp2();
    let wq = w
        .mapv(|v| quantize(v as f64 / norm, scheme.weights))
        .into_iter();
    let mut codes = Vec::with_capacity(w.len());
    for c in wq {
        codes.push(c?);
    }
    let wq = Array2::from_shape_vec(w.dim(), codes).expect("same shape");
    let mut bq = Vec::with_capacity(b.len());
    for &v in b {
        bq.push(quantize(v as f64, scheme.arith)?);
    }
    Ok(QDense {
        w: wq,
        w_scale,
        b: Array1::from_vec(bq),
    })
}

fn quantize_ln(
    gamma: &Array1<f32>,
    beta: &Array1<f32>,
    scheme: &QuantScheme,
) -> Result<QLayerNorm> {
    let max_abs = gamma.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let gamma_scale = po2_scale(max_abs);
    let norm = (gamma_scale as f64).exp2();
    let mut g = Vec::with_capacity(gamma.len());
    for &v in gamma {
        g.push(quantize(v as f64 / norm, scheme.weights)?);
    }
    let mut bt = Vec::with_capacity(beta.len());
    for &v in beta {
        bt.push(quantize(v as f64, scheme.arith)?);
    }
    Ok(QLayerNorm {
        gamma: Array1::from_vec(g),
        gamma_scale,
        beta: Array1::from_vec(bt),
    })
}

impl QuantizedModel {
    /// Quantizes trained float weights under `scheme`.
    pub fn from_float(weights: &ModelWeights, scheme: QuantScheme) -> Result<Self> {
        weights.validate()?;
        let encoder = quantize_dense(&weights.encoder.w, &weights.encoder.b, &scheme)?;
        let mut blocks = Vec::with_capacity(weights.blocks.len());
        for blk in &weights.blocks {
            let mut heads = Vec::with_capacity(blk.heads.len());
            for h in &blk.heads {
                heads.push(QHeadWeights {
                    wq: quantize_dense(&h.wq, &h.bq, &scheme)?,
                    wk: quantize_dense(&h.wk, &h.bk, &scheme)?,
                    wv: quantize_dense(&h.wv, &h.bv, &scheme)?,
                });
            }
            blocks.push(QBlockWeights {
                ln1: quantize_ln(&blk.ln1.gamma, &blk.ln1.beta, &scheme)?,
                heads,
                wo: quantize_dense(&blk.wo.w, &blk.wo.b, &scheme)?,
                ln2: quantize_ln(&blk.ln2.gamma, &blk.ln2.beta, &scheme)?,
                mlp1: quantize_dense(&blk.mlp1.w, &blk.mlp1.b, &scheme)?,
                mlp2: quantize_dense(&blk.mlp2.w, &blk.mlp2.b, &scheme)?,
            });
        }
        let mut decoder = Vec::with_capacity(weights.decoder.len());
        for layer in &weights.decoder {
            decoder.push(quantize_dense(&layer.w, &layer.b, &scheme)?);
        }
        let k = weights.config.head_dim();
        let score_scale = quantize(1.0 / (k as f64).sqrt(), scheme.arith)?;
        Ok(Self {
            config: weights.config.clone(),
            scheme,
            encoder,
            blocks,
            decoder,
            score_scale,
        })
    }
}

/// Canonical chunked dot product.
///
/// Lanes are consumed in ascending offset, 16 at a time (zero-padded tail);
/// each chunk's exact products are reduced by the fixed pairwise tree, the
/// chunk sum is right-shifted by `shift` (round half up) into `out_fmt`,
/// and chunk results join the accumulator with saturating adds. `seed` is
/// the accumulator's initial code (the bias, or zero).
pub fn chunked_dot(x: &[i64], w: &[i64], shift: i32, seed: i64, out_fmt: FixedFormat) -> i64 {
    debug_assert_eq!(x.len(), w.len());
    let mut acc = seed;
    let mut off = 0;
    while off < x.len() {
        let mut p = [0i64; DOT_LANES];
        for (l, slot) in p.iter_mut().enumerate() {
            if off + l < x.len() {
                *slot = x[off + l] * w[off + l];
            }
        }
        let chunk = adder_tree16(&p);
        acc = sat_add(acc, rescale_shift(chunk, shift, out_fmt), out_fmt);
        off += DOT_LANES;
    }
    acc
}

/// Rescale shift for a dot of `x_frac`-bit inputs against a tensor-scaled
/// weight matrix, accumulating in the arithmetic format.
#[inline]
pub(crate) fn dot_shift(x_frac: u32, scheme: &QuantScheme, w_scale: i32) -> i32 {
    x_frac as i32 + scheme.weights.frac_bits as i32 - w_scale - scheme.arith.frac_bits as i32
}

/// Moves an arithmetic-format code into intermediate storage.
#[inline]
pub(crate) fn store_inter(v: i64, scheme: &QuantScheme) -> i64 {
    rescale_shift(
        v,
        scheme.arith.frac_bits as i32 - scheme.inter.frac_bits as i32,
        scheme.inter,
    )
}

/// Dense layer on intermediate-format activations; returns arithmetic-
/// format codes.
fn qdense(layer: &QDense, x: &[i64], scheme: &QuantScheme) -> Vec<i64> {
    let shift = dot_shift(scheme.inter.frac_bits, scheme, layer.w_scale);
    (0..layer.w.nrows())
        .map(|o| {
            let row = layer.w.row(o);
            chunked_dot(x, row.as_slice().unwrap(), shift, layer.b[o], scheme.arith)
        })
        .collect()
}

/// Integer forward pass for one lateral line of normalized samples.
///
/// Returns the raw output codes `[rows][output_per_pixel]` in the
/// arithmetic format.
pub fn qforward_line(model: &QuantizedModel, line: &Array2<f64>) -> Result<Array2<i64>> {
    let cfg = &model.config;
    let scheme = &model.scheme;
    let (rows, ch) = line.dim();
    if rows != cfg.rows() || ch != cfg.input_channels {
        return Err(Error::Argument(format!(
            "line shape ({rows}, {ch}) does not match model ({}, {})",
            cfg.rows(),
            cfg.input_channels
        )));
    }
    let np = cfg.patches;
    let d = cfg.d_model;
    let f_i = scheme.inter.frac_bits;
    let f_a = scheme.arith.frac_bits;
    let f_s = scheme.softmax.frac_bits;

    // Tokenize and quantize the input (row outer, channel inner).
    let mut tokens: Vec<Vec<i64>> = Vec::with_capacity(np);
    for p in 0..np {
        let mut tok = Vec::with_capacity(cfg.token_len());
        for r in 0..cfg.patch_rows {
            for c in 0..ch {
                tok.push(quantize(line[[p * cfg.patch_rows + r, c]], scheme.inter)?);
            }
        }
        tokens.push(tok);
    }

    // Encoder.
    let mut x: Vec<Vec<i64>> = tokens
        .iter()
        .map(|tok| {
            qdense(&model.encoder, tok, scheme)
                .into_iter()
                .map(|v| store_inter(v, scheme))
                .collect()
        })
        .collect();

    // Transformer blocks.
    for blk in &model.blocks {
        // Pre-norm attention branch.
        let normed: Vec<Vec<i64>> = x
            .iter()
            .map(|t| {
                qlayer_norm_impl(
                    t,
                    blk.ln1.gamma.as_slice().unwrap(),
                    blk.ln1.gamma_scale,
                    blk.ln1.beta.as_slice().unwrap(),
                    scheme,
                )
            })
            .collect::<Result<_>>()?;
        let k_dim = cfg.head_dim();
        let mut concat: Vec<Vec<i64>> = vec![vec![0; d]; np];
        for (hi, head) in blk.heads.iter().enumerate() {
            let q: Vec<Vec<i64>> = normed
                .iter()
                .map(|t| {
                    qdense(&head.wq, t, scheme)
                        .into_iter()
                        .map(|v| store_inter(v, scheme))
                        .collect()
                })
                .collect();
            let kk: Vec<Vec<i64>> = normed
                .iter()
                .map(|t| {
                    qdense(&head.wk, t, scheme)
                        .into_iter()
                        .map(|v| store_inter(v, scheme))
                        .collect()
                })
                .collect();
            let v: Vec<Vec<i64>> = normed
                .iter()
                .map(|t| {
                    qdense(&head.wv, t, scheme)
                        .into_iter()
                        .map(|v| store_inter(v, scheme))
                        .collect()
                })
                .collect();
            // Scaled scores and attention probabilities, row by row.
            let score_shift = (2 * f_i) as i32 - f_a as i32;
            for i in 0..np {
                let mut row = Vec::with_capacity(np);
                for kj in kk.iter() {
                    let raw = chunked_dot(&q[i], kj, score_shift, 0, scheme.arith);
                    row.push(rescale_shift(
                        raw * model.score_scale,
                        f_a as i32,
                        scheme.arith,
                    ));
                }
                let probs = qsoftmax(&row, scheme.arith, scheme.softmax)?;
                // Context: probability-weighted sum of value vectors.
                let ctx_shift = (f_s + f_i) as i32 - f_a as i32;
                for c in 0..k_dim {
                    let col: Vec<i64> = (0..np).map(|j| v[j][c]).collect();
                    let ctx = chunked_dot(&probs, &col, ctx_shift, 0, scheme.arith);
                    concat[i][hi * k_dim + c] = store_inter(ctx, scheme);
                }
            }
        }
        // Output projection and first residual.
        for i in 0..np {
            let proj = qdense(&blk.wo, &concat[i], scheme);
            for (xi, pv) in x[i].iter_mut().zip(proj) {
                *xi = sat_add(*xi, store_inter(pv, scheme), scheme.inter);
            }
        }
        // Pre-norm MLP branch and second residual.
        for tok in x.iter_mut() {
            let normed = qlayer_norm_impl(
                tok,
                blk.ln2.gamma.as_slice().unwrap(),
                blk.ln2.gamma_scale,
                blk.ln2.beta.as_slice().unwrap(),
                scheme,
            )?;
            let hidden: Vec<i64> = qdense(&blk.mlp1, &normed, scheme)
                .into_iter()
                .map(|v| store_inter(v.max(0), scheme))
                .collect();
            let out = qdense(&blk.mlp2, &hidden, scheme);
            for (xi, ov) in tok.iter_mut().zip(out) {
                *xi = sat_add(*xi, store_inter(ov, scheme), scheme.inter);
            }
        }
    }

    // Decoder: ReLU between layers, final layer left in arithmetic format.
    let mut out = Array2::zeros((cfg.rows(), cfg.output_per_pixel));
    for (p, tok) in x.iter().enumerate() {
        let mut act: Vec<i64> = tok.clone();
        let mut final_codes: Vec<i64> = Vec::new();
        for (li, layer) in model.decoder.iter().enumerate() {
            let y = qdense(layer, &act, scheme);
            if li + 1 < model.decoder.len() {
                act = y
                    .into_iter()
                    .map(|v| store_inter(v.max(0), scheme))
                    .collect();
            } else {
                final_codes = y;
            }
        }
        for r in 0..cfg.patch_rows {
            for c in 0..cfg.output_per_pixel {
                out[[p * cfg.patch_rows + r, c]] = final_codes[r * cfg.output_per_pixel + c];
            }
        }
    }
    Ok(out)
}

/// Integer forward pass over every lateral line of a normalized tensor.
///
/// Returns the dequantized image and the raw output codes
/// `[rows][cols][output_per_pixel]` (arithmetic format) for bit-exact
/// comparison against the accelerator simulator.
pub fn qforward(model: &QuantizedModel, tensor: &TofTensor) -> Result<(IQImage, Array3<i64>)> {
    let cfg = &model.config;
    let (rows, cols, ch) = tensor.data.dim();
    if rows != cfg.rows() || ch != cfg.input_channels {
        return Err(Error::Argument(format!(
            "tensor shape ({rows}, {cols}, {ch}) does not match model rows {} x channels {}",
            cfg.rows(),
            cfg.input_channels
        )));
    }
    if cfg.output_per_pixel != 2 {
        return Err(Error::Config(
            "image synthesis requires output_per_pixel = 2".into(),
        ));
    }
    let columns: Vec<Array2<i64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let line = Array2::from_shape_fn((rows, ch), |(r, e)| tensor.data[[r, c, e]]);
            qforward_line(model, &line)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut codes = Array3::zeros((rows, cols, cfg.output_per_pixel));
    let mut pixels = Array2::from_elem((rows, cols), Complex64::new(0.0, 0.0));
    for (c, col) in columns.iter().enumerate() {
        for r in 0..rows {
            codes[[r, c, 0]] = col[[r, 0]];
            codes[[r, c, 1]] = col[[r, 1]];
            pixels[[r, c]] = Complex64::new(
                dequantize(col[[r, 0]], model.scheme.arith),
                dequantize(col[[r, 1]], model.scheme.arith),
            );
        }
    }
    Ok((IQImage::new(pixels, tensor.grid.clone())?, codes))
}
