//! TVBF weights container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! bytes 0-3  magic "TVBF"
//! u32        version (= 1)
//! u32 x 8    input_channels, patch_rows, patches, d_model, heads,
//!            mlp_width, output_per_pixel, decoder_len
//! u32 x len  decoder widths
//! records    one per tensor, in canonical order
//! ```
//!
//! Each record is `u32 id` (sequential from zero), `u32 rank`, `u32`
//! dimensions, then row-major f32 data. Canonical order: encoder (w, b);
//! per block ln1 (gamma, beta), per head (wq, bq, wk, bk, wv, bv), wo
//! (w, b), ln2 (gamma, beta), mlp1 (w, b), mlp2 (w, b); then each decoder
//! layer (w, b).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{
    BlockWeights, DenseWeights, HeadWeights, LayerNormWeights, ModelConfig, ModelWeights,
    TRANSFORMER_BLOCKS,
};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TVBF";

/// Expected tensor shapes in canonical record order.
fn schema(cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let d = cfg.d_model;
    let k = cfg.head_dim();
    let mut s = vec![vec![d, cfg.token_len()], vec![d]];
    for _ in 0..TRANSFORMER_BLOCKS {
        s.push(vec![d]); // ln1.gamma
        s.push(vec![d]); // ln1.beta
        for _ in 0..cfg.heads {
            for _ in 0..3 {
                s.push(vec![k, d]);
                s.push(vec![k]);
            }
        }
        s.push(vec![d, d]); // wo.w
        s.push(vec![d]); // wo.b
        s.push(vec![d]); // ln2.gamma
        s.push(vec![d]); // ln2.beta
        s.push(vec![cfg.mlp_width, d]);
        s.push(vec![cfg.mlp_width]);
        s.push(vec![d, cfg.mlp_width]);
        s.push(vec![d]);
    }
    let mut prev = d;
    for &w in &cfg.decoder_widths {
        s.push(vec![w, prev]);
        s.push(vec![w]);
        prev = w;
    }
    s
}

/// Flattens weights into `(dims, data)` pairs in canonical order.
fn tensor_list(w: &ModelWeights) -> Vec<(Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    let push2 = |out: &mut Vec<(Vec<usize>, Vec<f32>)>, m: &Array2<f32>| {
        out.push((vec![m.nrows(), m.ncols()], m.iter().copied().collect()));
    };
    let push1 = |out: &mut Vec<(Vec<usize>, Vec<f32>)>, v: &Array1<f32>| {
        out.push((vec![v.len()], v.to_vec()));
    };
    push2(&mut out, &w.encoder.w);
    push1(&mut out, &w.encoder.b);
    for blk in &w.blocks {
        push1(&mut out, &blk.ln1.gamma);
        push1(&mut out, &blk.ln1.beta);
        for h in &blk.heads {
            push2(&mut out, &h.wq);
            push1(&mut out, &h.bq);
            push2(&mut out, &h.wk);
            push1(&mut out, &h.bk);
            push2(&mut out, &h.wv);
            push1(&mut out, &h.bv);
        }
        push2(&mut out, &blk.wo.w);
        push1(&mut out, &blk.wo.b);
        push1(&mut out, &blk.ln2.gamma);
        push1(&mut out, &blk.ln2.beta);
        push2(&mut out, &blk.mlp1.w);
        push1(&mut out, &blk.mlp1.b);
        push2(&mut out, &blk.mlp2.w);
        push1(&mut out, &blk.mlp2.b);
    }
    for layer in &w.decoder {
        push2(&mut out, &layer.w);
        push1(&mut out, &layer.b);
    }
    out
}

/// Writes `weights` as a TVBF container.
pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    weights.validate()?;
    let cfg = &weights.config;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    for v in [
        cfg.input_channels,
        cfg.patch_rows,
        cfg.patches,
        cfg.d_model,
        cfg.heads,
        cfg.mlp_width,
        cfg.output_per_pixel,
        cfg.decoder_widths.len(),
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for &width in &cfg.decoder_widths {
        w.write_u32::<LittleEndian>(width as u32)?;
    }
    for (id, (dims, data)) in tensor_list(weights).into_iter().enumerate() {
        w.write_u32::<LittleEndian>(id as u32)?;
        w.write_u32::<LittleEndian>(dims.len() as u32)?;
        for &dim in &dims {
            w.write_u32::<LittleEndian>(dim as u32)?;
        }
        for v in data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a TVBF container written by [`save_weights`].
pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for TVBF magic".into()))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"TVBF\""
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != 1 {
        return Err(Error::Format(format!("unsupported TVBF version {version}")));
    }
    let mut head = [0usize; 8];
    for h in head.iter_mut() {
        *h = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Corrupt("truncated header".into()))? as usize;
    }
    let mut decoder_widths = Vec::with_capacity(head[7]);
    for _ in 0..head[7] {
        decoder_widths.push(
            r.read_u32::<LittleEndian>()
                .map_err(|_| Error::Corrupt("truncated decoder widths".into()))?
                as usize,
        );
    }
    let cfg = ModelConfig {
        input_channels: head[0],
        patch_rows: head[1],
        patches: head[2],
        d_model: head[3],
        heads: head[4],
        mlp_width: head[5],
        output_per_pixel: head[6],
        decoder_widths,
    };
    cfg.validate()
        .map_err(|e| Error::Corrupt(format!("invalid stored config: {e}")))?;

    // Read every record against the canonical schema.
    let expected = schema(&cfg);
    let mut tensors: Vec<Vec<f32>> = Vec::with_capacity(expected.len());
    for (id, dims) in expected.iter().enumerate() {
        let got_id = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Corrupt(format!("truncated at record {id}")))?;
        if got_id as usize != id {
            return Err(Error::Corrupt(format!(
                "record id {got_id} out of order, expected {id}"
            )));
        }
        let rank = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Corrupt(format!("truncated at record {id}")))?
            as usize;
        if rank != dims.len() {
            return Err(Error::Corrupt(format!(
                "record {id} has rank {rank}, expected {}",
                dims.len()
            )));
        }
        for &want in dims {
            let got = r
                .read_u32::<LittleEndian>()
                .map_err(|_| Error::Corrupt(format!("truncated at record {id}")))?
                as usize;
            if got != want {
                return Err(Error::Corrupt(format!(
                    "record {id} has dimension {got}, expected {want}"
                )));
            }
        }
        let numel: usize = dims.iter().product();
        let mut data = vec![0f32; numel];
        for v in data.iter_mut() {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| Error::Corrupt(format!("truncated data in record {id}")))?;
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!(
                "record {id} contains non-finite values"
            )));
        }
        tensors.push(data);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt("trailing bytes after final record".into()));
    }

    // Assemble in the same canonical order.
    let mut cursor = tensors.into_iter().zip(expected);
    let mut next2 = || -> Array2<f32> {
        let (data, dims) = cursor.next().expect("schema length");
        Array2::from_shape_vec((dims[0], dims[1]), data).expect("verified shape")
    };
    // Interleaved rank-1/rank-2 pulls need separate closures over the same
    // iterator, so drive it manually.
    let encoder_w = next2();
    let (enc_b, _) = cursor.next().expect("schema length");
    let encoder = DenseWeights {
        w: encoder_w,
        b: Array1::from_vec(enc_b),
    };
    let take1 = |cursor: &mut dyn Iterator<Item = (Vec<f32>, Vec<usize>)>| {
        Array1::from_vec(cursor.next().expect("schema length").0)
    };
    let take2 = |cursor: &mut dyn Iterator<Item = (Vec<f32>, Vec<usize>)>| {
        let (data, dims) = cursor.next().expect("schema length");
        Array2::from_shape_vec((dims[0], dims[1]), data).expect("verified shape")
    };
    let mut blocks = Vec::with_capacity(TRANSFORMER_BLOCKS);
    for _ in 0..TRANSFORMER_BLOCKS {
        let ln1 = LayerNormWeights {
            gamma: take1(&mut cursor),
            beta: take1(&mut cursor),
        };
        let mut heads = Vec::with_capacity(cfg.heads);
        for _ in 0..cfg.heads {
            let wq = take2(&mut cursor);
            let bq = take1(&mut cursor);
            let wk = take2(&mut cursor);
            let bk = take1(&mut cursor);
            let wv = take2(&mut cursor);
            let bv = take1(&mut cursor);
            heads.push(HeadWeights {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
            });
        }
        let wo = DenseWeights {
            w: take2(&mut cursor),
            b: take1(&mut cursor),
        };
        let ln2 = LayerNormWeights {
            gamma: take1(&mut cursor),
            beta: take1(&mut cursor),
        };
        let mlp1 = DenseWeights {
            w: take2(&mut cursor),
            b: take1(&mut cursor),
        };
        let mlp2 = DenseWeights {
            w: take2(&mut cursor),
            b: take1(&mut cursor),
        };
        blocks.push(BlockWeights {
            ln1,
            heads,
            wo,
            ln2,
            mlp1,
            mlp2,
        });
    }
    let mut decoder = Vec::with_capacity(cfg.decoder_widths.len());
    for _ in 0..cfg.decoder_widths.len() {
        let w = take2(&mut cursor);
        let b = take1(&mut cursor);
        decoder.push(DenseWeights { w, b });
    }

    let weights = ModelWeights {
        config: cfg,
        encoder,
        blocks,
        decoder,
    };
    weights.validate()?;
    Ok(weights)
}
