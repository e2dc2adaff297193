//! The tiny transformer beamformer: configuration, weights, float forward
//! pass and compute budgets.
//!
//! The network maps one delay-corrected lateral line `[rows][channels]` to
//! per-pixel (I, Q) pairs. Rows are grouped into `patches` axial patches of
//! `patch_rows` rows; each patch is flattened row-major (row outer, channel
//! inner) into a token. An encoder dense layer reduces the token to
//! `d_model`, two pre-norm transformer blocks mix tokens, and a decoder
//! dense stack expands each token back to `patch_rows * output_per_pixel`
//! values, flattened row-major (row outer, component inner).
//!
//! Weight matrices are stored `[out][in]`; `y = W x + b` throughout.
//! Float inference keeps stored parameters in f32 but computes all
//! activations in f64, so the reference path is a stable, deterministic
//! golden model for the fixed-point implementations.

mod io;

pub use io::{load_weights, save_weights, WEIGHTS_MAGIC};

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::data::{IQImage, TofTensor};
use crate::error::{Error, Result};

/// Number of transformer blocks; the architecture fixes this at two.
pub const TRANSFORMER_BLOCKS: usize = 2;

/// LayerNorm variance epsilon (shared by float and fixed-point paths).
pub const LN_EPS: f64 = 1e-5;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Receive channels per lateral line.
    pub input_channels: usize,
    /// Axial rows per token.
    pub patch_rows: usize,
    /// Tokens per lateral line; `patches * patch_rows` must equal the grid
    /// row count.
    pub patches: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_width: usize,
    /// Output widths of the decoder dense stack; the last entry must equal
    /// `patch_rows * output_per_pixel`.
    pub decoder_widths: Vec<usize>,
    /// Values emitted per pixel (2: in-phase and quadrature).
    pub output_per_pixel: usize,
}

impl ModelConfig {
    /// The shipped configuration: 128 channels, one 368-row token per line,
    /// d_model 31 with a single head, MLP width 126 and a single 736-wide
    /// decoder layer.
    pub fn default_config() -> Self {
        Self {
            input_channels: 128,
            patch_rows: 368,
            patches: 1,
            d_model: 31,
            heads: 1,
            mlp_width: 126,
            decoder_widths: vec![736],
            output_per_pixel: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_channels", self.input_channels),
            ("patch_rows", self.patch_rows),
            ("patches", self.patches),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("mlp_width", self.mlp_width),
            ("output_per_pixel", self.output_per_pixel),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.decoder_widths.is_empty() {
            return Err(Error::Config("decoder must have at least one layer".into()));
        }
        if self.decoder_widths.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        let want = self.patch_rows * self.output_per_pixel;
        let last = *self.decoder_widths.last().unwrap();
        if last != want {
            return Err(Error::Config(format!(
                "final decoder width {last} must equal patch_rows * output_per_pixel = {want}"
            )));
        }
        Ok(())
    }

    /// Flattened token length fed to the encoder.
    pub fn token_len(&self) -> usize {
        self.patch_rows * self.input_channels
    }

    /// Per-head key/query/value width.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Image rows covered by one lateral line.
    pub fn rows(&self) -> usize {
        self.patches * self.patch_rows
    }
}

/// `y = W x + b` with `W` stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl DenseWeights {
    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

/// Per-head projection weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub wq: Array2<f32>,
    pub bq: Array1<f32>,
    pub wk: Array2<f32>,
    pub bk: Array1<f32>,
    pub wv: Array2<f32>,
    pub bv: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1: LayerNormWeights,
    pub heads: Vec<HeadWeights>,
    pub wo: DenseWeights,
    pub ln2: LayerNormWeights,
    pub mlp1: DenseWeights,
    pub mlp2: DenseWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub encoder: DenseWeights,
    pub blocks: Vec<BlockWeights>,
    pub decoder: Vec<DenseWeights>,
}

impl ModelWeights {
    /// Checks every tensor against the shapes implied by the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let d = c.d_model;
        let k = c.head_dim();
        let check = |name: &str, got: (usize, usize), want: (usize, usize)| -> Result<()> {
            if got != want {
                return Err(Error::Config(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
            Ok(())
        };
        let check_vec = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::Config(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
            Ok(())
        };
        check("encoder.w", self.encoder.w.dim(), (d, c.token_len()))?;
        check_vec("encoder.b", self.encoder.b.len(), d)?;
        if self.blocks.len() != TRANSFORMER_BLOCKS {
            return Err(Error::Config(format!(
                "model must have {TRANSFORMER_BLOCKS} blocks, got {}",
                self.blocks.len()
            )));
        }
        for (bi, blk) in self.blocks.iter().enumerate() {
            check_vec(&format!("block{bi}.ln1.gamma"), blk.ln1.gamma.len(), d)?;
            check_vec(&format!("block{bi}.ln1.beta"), blk.ln1.beta.len(), d)?;
            if blk.heads.len() != c.heads {
                return Err(Error::Config(format!(
                    "block{bi} has {} heads, expected {}",
                    blk.heads.len(),
                    c.heads
                )));
            }
            for (hi, h) in blk.heads.iter().enumerate() {
                for (nm, m, bvec) in [
                    ("wq", &h.wq, &h.bq),
                    ("wk", &h.wk, &h.bk),
                    ("wv", &h.wv, &h.bv),
                ] {
                    check(&format!("block{bi}.head{hi}.{nm}"), m.dim(), (k, d))?;
                    check_vec(&format!("block{bi}.head{hi}.b{nm}"), bvec.len(), k)?;
                }
            }
            check(&format!("block{bi}.wo"), blk.wo.w.dim(), (d, d))?;
            check_vec(&format!("block{bi}.wo.b"), blk.wo.b.len(), d)?;
            check_vec(&format!("block{bi}.ln2.gamma"), blk.ln2.gamma.len(), d)?;
            check_vec(&format!("block{bi}.ln2.beta"), blk.ln2.beta.len(), d)?;
            check(
                &format!("block{bi}.mlp1"),
                blk.mlp1.w.dim(),
                (c.mlp_width, d),
            )?;
            check_vec(&format!("block{bi}.mlp1.b"), blk.mlp1.b.len(), c.mlp_width)?;
            check(
                &format!("block{bi}.mlp2"),
                blk.mlp2.w.dim(),
                (d, c.mlp_width),
            )?;
            check_vec(&format!("block{bi}.mlp2.b"), blk.mlp2.b.len(), d)?;
        }
        if self.decoder.len() != c.decoder_widths.len() {
            return Err(Error::Config(format!(
                "decoder has {} layers, expected {}",
                self.decoder.len(),
                c.decoder_widths.len()
            )));
        }
        let mut prev = d;
        for (li, (layer, &width)) in self.decoder.iter().zip(&c.decoder_widths).enumerate() {
            check(&format!("decoder{li}"), layer.w.dim(), (width, prev))?;
            check_vec(&format!("decoder{li}.b"), layer.b.len(), width)?;
            prev = width;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Parameter and compute budgets
// ---------------------------------------------------------------------------

/// Total learnable parameters.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let k = cfg.head_dim();
    let encoder = cfg.token_len() * d + d;
    let per_block = 2 * d                              // ln1
        + cfg.heads * 3 * (k * d + k)                  // q, k, v projections
        + d * d + d                                    // output projection
        + 2 * d                                        // ln2
        + d * cfg.mlp_width + cfg.mlp_width            // mlp expand
        + cfg.mlp_width * d + d; // mlp contract
    let mut decoder = 0;
    let mut prev = d;
    for &w in &cfg.decoder_widths {
        decoder += prev * w + w;
        prev = w;
    }
    encoder + TRANSFORMER_BLOCKS * per_block + decoder
}

/// Multiply-accumulate operations for one frame of `lateral_lines` lines.
pub fn mac_count(cfg: &ModelConfig, lateral_lines: usize) -> usize {
    let d = cfg.d_model;
    let k = cfg.head_dim();
    let np = cfg.patches;
    let encoder = np * cfg.token_len() * d;
    let per_block = np * 3 * cfg.heads * k * d          // q, k, v projections
        + cfg.heads * np * np * k                       // score dot products
        + cfg.heads * np * np * k                       // prob-weighted values
        + np * d * d                                    // output projection
        + 2 * np * d * cfg.mlp_width; // mlp
    let mut decoder = 0;
    let mut prev = d;
    for &w in &cfg.decoder_widths {
        decoder += np * prev * w;
        prev = w;
    }
    (encoder + TRANSFORMER_BLOCKS * per_block + decoder) * lateral_lines
}

/// Floating-point operations per frame under the MAC-dominated convention
/// (one multiply-accumulate = two FLOPs; elementwise and normalization ops
/// are excluded).
pub fn flops_count(cfg: &ModelConfig, lateral_lines: usize) -> usize {
    2 * mac_count(cfg, lateral_lines)
}

// ---------------------------------------------------------------------------
// Float forward pass
// ---------------------------------------------------------------------------

#[inline]
fn dot_f64(w: &[f32], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

/// Dense layer over token rows: `x [tokens][in] -> [tokens][out]`.
pub fn dense_forward(layer: &DenseWeights, x: &Array2<f64>) -> Array2<f64> {
    let (tokens, d_in) = x.dim();
    assert_eq!(d_in, layer.in_dim(), "dense input width mismatch");
    let mut out = Array2::zeros((tokens, layer.out_dim()));
    for t in 0..tokens {
        let xt = x.row(t);
        let xs = xt.as_slice().unwrap();
        for o in 0..layer.out_dim() {
            let wr = layer.w.row(o);
            out[[t, o]] = layer.b[o] as f64 + dot_f64(wr.as_slice().unwrap(), xs);
        }
    }
    out
}

/// Per-token LayerNorm with learned scale and shift.
pub fn layer_norm(ln: &LayerNormWeights, x: &Array2<f64>) -> Array2<f64> {
    let (tokens, d) = x.dim();
    assert_eq!(d, ln.gamma.len(), "layer norm width mismatch");
    let mut out = Array2::zeros((tokens, d));
    for t in 0..tokens {
        let row = x.row(t);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..d {
            let norm = (x[[t, i]] - mean) * inv;
            out[[t, i]] = norm * ln.gamma[i] as f64 + ln.beta[i] as f64;
        }
    }
    out
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        for &e in &exps {
            sum += e;
        }
        for (v, e) in row.iter_mut().zip(exps) {
            *v = e / sum;
        }
    }
}

/// Multi-head self-attention with scaled dot-product scores.
pub fn mha_forward(heads: &[HeadWeights], wo: &DenseWeights, x: &Array2<f64>) -> Array2<f64> {
    let (tokens, d) = x.dim();
    let k = heads[0].wq.nrows();
    let scale = 1.0 / (k as f64).sqrt();
    let mut concat = Array2::zeros((tokens, d));
    for (hi, h) in heads.iter().enumerate() {
        let q = dense_forward(
            &DenseWeights {
                w: h.wq.clone(),
                b: h.bq.clone(),
            },
            x,
        );
        let key = dense_forward(
            &DenseWeights {
                w: h.wk.clone(),
                b: h.bk.clone(),
            },
            x,
        );
        let v = dense_forward(
            &DenseWeights {
                w: h.wv.clone(),
                b: h.bv.clone(),
            },
            x,
        );
        let mut scores = Array2::zeros((tokens, tokens));
        for i in 0..tokens {
            for j in 0..tokens {
                let qi = q.row(i);
                let kj = key.row(j);
                scores[[i, j]] =
                    dot_f64_pair(qi.as_slice().unwrap(), kj.as_slice().unwrap()) * scale;
            }
        }
        softmax_rows(&mut scores);
        for i in 0..tokens {
            for c in 0..k {
                let mut acc = 0.0f64;
                for j in 0..tokens {
                    acc += scores[[i, j]] * v[[j, c]];
                }
                concat[[i, hi * k + c]] = acc;
            }
        }
    }
    dense_forward(wo, &concat)
}

#[inline]
fn dot_f64_pair(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// One pre-norm transformer block:
/// `u = x + MHA(LN1(x)); y = u + MLP2(relu(MLP1(LN2(u))))`.
pub fn transformer_block(blk: &BlockWeights, x: &Array2<f64>) -> Array2<f64> {
    let attn = mha_forward(&blk.heads, &blk.wo, &layer_norm(&blk.ln1, x));
    let u = x + &attn;
    let mut hidden = dense_forward(&blk.mlp1, &layer_norm(&blk.ln2, &u));
    hidden.mapv_inplace(|v| v.max(0.0));
    let mlp = dense_forward(&blk.mlp2, &hidden);
    &u + &mlp
}

/// Splits one lateral line `[rows][channels]` into flattened patch tokens.
pub fn tokenize_line(cfg: &ModelConfig, line: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, ch) = line.dim();
    if rows != cfg.rows() || ch != cfg.input_channels {
        return Err(Error::Argument(format!(
            "line shape ({rows}, {ch}) does not match model ({}, {})",
            cfg.rows(),
            cfg.input_channels
        )));
    }
    let mut tokens = Array2::zeros((cfg.patches, cfg.token_len()));
    for p in 0..cfg.patches {
        for r in 0..cfg.patch_rows {
            for c in 0..ch {
                tokens[[p, r * ch + c]] = line[[p * cfg.patch_rows + r, c]];
            }
        }
    }
    Ok(tokens)
}

/// Full forward pass for one lateral line; returns `[rows][output_per_pixel]`.
pub fn vbf_line_forward(weights: &ModelWeights, line: &Array2<f64>) -> Result<Array2<f64>> {
    let cfg = &weights.config;
    let tokens = tokenize_line(cfg, line)?;
    let mut x = dense_forward(&weights.encoder, &tokens);
    for blk in &weights.blocks {
        x = transformer_block(blk, &x);
    }
    for (li, layer) in weights.decoder.iter().enumerate() {
        x = dense_forward(layer, &x);
        if li + 1 < weights.decoder.len() {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }
    // Un-flatten decoder output: row outer, component inner.
    let mut out = Array2::zeros((cfg.rows(), cfg.output_per_pixel));
    for p in 0..cfg.patches {
        for r in 0..cfg.patch_rows {
            for c in 0..cfg.output_per_pixel {
                out[[p * cfg.patch_rows + r, c]] = x[[p, r * cfg.output_per_pixel + c]];
            }
        }
    }
    Ok(out)
}

/// Applies the model to every lateral line of a normalized tensor.
///
/// The tensor must already be normalized to [-1, 1] (see
/// [`TofTensor::normalized`]); rows must equal `patches * patch_rows` and
/// channels must equal `input_channels`.
pub fn vbf_forward(weights: &ModelWeights, tensor: &TofTensor) -> Result<IQImage> {
    weights.validate()?;
    let cfg = &weights.config;
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
    let columns: Vec<Array2<f64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let line = Array2::from_shape_fn((rows, ch), |(r, e)| tensor.data[[r, c, e]]);
            vbf_line_forward(weights, &line)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pixels = Array2::from_elem((rows, cols), Complex64::new(0.0, 0.0));
    for (c, col) in columns.iter().enumerate() {
        for r in 0..rows {
            pixels[[r, c]] = Complex64::new(col[[r, 0]], col[[r, 1]]);
        }
    }
    IQImage::new(pixels, tensor.grid.clone())
}

// ---------------------------------------------------------------------------
// Random initialization
// ---------------------------------------------------------------------------

fn random_dense(rng: &mut ChaCha20Rng, out: usize, inp: usize) -> DenseWeights {
    let bound = 1.0 / (inp as f32).sqrt();
    DenseWeights {
        w: Array2::from_shape_fn((out, inp), |_| rng.random_range(-bound..bound)),
        b: Array1::from_shape_fn(out, |_| rng.random_range(-bound..bound)),
    }
}

fn random_ln(rng: &mut ChaCha20Rng, d: usize) -> LayerNormWeights {
    LayerNormWeights {
        gamma: Array1::from_shape_fn(d, |_| rng.random_range(0.5f32..1.5)),
        beta: Array1::from_shape_fn(d, |_| rng.random_range(-0.1f32..0.1)),
    }
}

/// Deterministic, seeded random weights with fan-in scaled uniform init.
pub fn random_weights(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let k = cfg.head_dim();
    let encoder = random_dense(&mut rng, d, cfg.token_len());
    let mut blocks = Vec::with_capacity(TRANSFORMER_BLOCKS);
    for _ in 0..TRANSFORMER_BLOCKS {
        let ln1 = random_ln(&mut rng, d);
        let heads = (0..cfg.heads)
            .map(|_| {
                let q = random_dense(&mut rng, k, d);
                let kk = random_dense(&mut rng, k, d);
                let v = random_dense(&mut rng, k, d);
                HeadWeights {
                    wq: q.w,
                    bq: q.b,
                    wk: kk.w,
                    bk: kk.b,
                    wv: v.w,
                    bv: v.b,
                }
            })
            .collect();
        let wo = random_dense(&mut rng, d, d);
        let ln2 = random_ln(&mut rng, d);
        let mlp1 = random_dense(&mut rng, cfg.mlp_width, d);
        let mlp2 = random_dense(&mut rng, d, cfg.mlp_width);
        blocks.push(BlockWeights {
            ln1,
            heads,
            wo,
            ln2,
            mlp1,
            mlp2,
        });
    }
    let mut decoder = Vec::new();
    let mut prev = d;
    for &w in &cfg.decoder_widths {
        decoder.push(random_dense(&mut rng, w, prev));
        prev = w;
    }
    let weights = ModelWeights {
        config: cfg.clone(),
        encoder,
        blocks,
        decoder,
    };
    weights.validate()?;
    Ok(weights)
}
