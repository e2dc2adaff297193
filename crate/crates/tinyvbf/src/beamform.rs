//! Reference beamformers: delay-and-sum and minimum-variance (Capon).
//!
//! Both consume a delay-corrected [`TofTensor`]. Delay-and-sum reduces the
//! channel axis with a weighted sum. Minimum variance computes per-pixel
//! apodization weights `w = R^-1 a / (a^H R^-1 a)` from a spatially smoothed
//! covariance estimate of the analytic channel signals, with diagonal
//! loading for robustness.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{num_complex::Complex as FftComplex, FftPlanner};

use crate::data::{IQImage, PixelGrid, TofTensor};
use crate::error::{Error, Result};

/// Delay-and-sum: weighted reduction over the channel axis.
///
/// `apodization` defaults to uniform unit weights and must match the channel
/// count when given.
pub fn das(tensor: &TofTensor, apodization: Option<&[f64]>) -> Result<Array2<f64>> {
    let (rows, cols, ch) = tensor.data.dim();
    let weights: Vec<f64> = match apodization {
        Some(w) => {
            if w.len() != ch {
                return Err(Error::Argument(format!(
                    "apodization has {} weights but tensor has {ch} channels",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("apodization weights must be finite".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; ch],
    };
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (e, &w) in weights.iter().enumerate() {
                acc += w * tensor.data[[r, c, e]];
            }
            out[[r, c]] = acc;
        }
    }
    Ok(out)
}

/// Column-wise analytic signal via the one-sided spectrum method.
///
/// Each column (axial line) is transformed, negative frequencies are zeroed
/// and positive ones doubled (DC and, for even lengths, Nyquist kept at unit
/// gain), then inverse transformed.
pub fn analytic_signal(image: &Array2<f64>) -> Array2<Complex64> {
    let (rows, cols) = image.dim();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(rows);
    let inv = planner.plan_fft_inverse(rows);

    // One-sided doubling gains.
    let mut gain = vec![0.0f64; rows];
    gain[0] = 1.0;
    if rows % 2 == 0 {
        gain[rows / 2] = 1.0;
        for g in gain.iter_mut().take(rows / 2).skip(1) {
            *g = 2.0;
        }
    } else {
        for g in gain.iter_mut().take(rows.div_ceil(2)).skip(1) {
            *g = 2.0;
        }
    }

    let mut out = Array2::from_elem((rows, cols), Complex64::new(0.0, 0.0));
    for c in 0..cols {
        let mut buf: Vec<FftComplex<f64>> = (0..rows)
            .map(|r| FftComplex::new(image[[r, c]], 0.0))
            .collect();
        fwd.process(&mut buf);
        for (b, &g) in buf.iter_mut().zip(gain.iter()) {
            *b *= g;
        }
        inv.process(&mut buf);
        let scale = 1.0 / rows as f64;
        for r in 0..rows {
            out[[r, c]] = Complex64::new(buf[r].re * scale, buf[r].im * scale);
        }
    }
    out
}

/// Envelope (magnitude of the analytic signal) of a real image, column-wise.
pub fn hilbert_envelope(image: &Array2<f64>) -> Array2<f64> {
    analytic_signal(image).mapv(|z| z.norm())
}

/// Wraps a real beamformed image as complex I/Q via the analytic signal.
pub fn analytic_image(image: &Array2<f64>, grid: &PixelGrid) -> Result<IQImage> {
    IQImage::new(analytic_signal(image), grid.clone())
}

/// Minimum-variance beamformer parameters.
#[derive(Debug, Clone, Copy)]
pub struct MvdrConfig {
    /// Spatial-smoothing subaperture length `L`; 0 selects `channels / 2`.
    pub subaperture: usize,
    /// Diagonal loading factor: `delta * trace(R) / L` is added to the
    /// diagonal of the covariance estimate.
    pub diagonal_loading: f64,
}

impl Default for MvdrConfig {
    fn default() -> Self {
        Self {
            subaperture: 0,
            diagonal_loading: 0.01,
        }
    }
}

/// Cholesky factorization of a Hermitian positive-definite matrix.
/// Returns the lower factor; a non-positive pivot reports the failing index.
fn cholesky(r: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = r.nrows();
    let mut l: Array2<Complex64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut diag = r[[j, j]].re;
        for k in 0..j {
            diag -= l[[j, k]].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Numeric(format!(
                "covariance not positive definite: pivot {diag:.3e} at index {j} \
                 (matrix is singular or ill-conditioned; increase diagonal loading)"
            )));
        }
        let dj = diag.sqrt();
        l[[j, j]] = Complex64::new(dj, 0.0);
        for i in (j + 1)..n {
            let mut s = r[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / dj;
        }
    }
    Ok(l)
}

/// Solves `L L^H x = b` by forward and back substitution.
fn cholesky_solve(l: &Array2<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.nrows();
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]].re;
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]].re;
    }
    x
}

/// Minimum-variance weights for one loaded covariance matrix.
///
/// The steering vector is all-ones (channels are already delay-aligned).
/// `delta` scales the trace-normalized diagonal loading. The returned
/// weights satisfy the distortionless constraint `w^H a = 1`.
pub fn mvdr_weights(cov: &Array2<Complex64>, delta: f64) -> Result<Vec<Complex64>> {
    let n = cov.nrows();
    if n == 0 || cov.ncols() != n {
        return Err(Error::Argument(
            "covariance must be square and non-empty".into(),
        ));
    }
    if !(delta >= 0.0) {
        return Err(Error::Argument(
            "diagonal loading must be non-negative".into(),
        ));
    }
    let trace: f64 = (0..n).map(|i| cov[[i, i]].re).sum();
    let load = delta * trace / n as f64;
    let mut loaded = cov.clone();
    for i in 0..n {
        loaded[[i, i]] += Complex64::new(load, 0.0);
    }
    let l = cholesky(&loaded)?;
    let a = vec![Complex64::new(1.0, 0.0); n];
    let u = cholesky_solve(&l, &a);
    // a^H u = sum(u); real and positive for Hermitian positive-definite R.
    let denom: Complex64 = u.iter().sum();
    if denom.norm() < 1e-300 {
        return Err(Error::Numeric(
            "steering response vanished; cannot normalize".into(),
        ));
    }
    Ok(u.iter().map(|&ui| ui / denom.conj()).collect())
}

/// Minimum-variance beamformer over a delay-corrected tensor.
///
/// Channels are first converted to analytic signals along depth; each pixel
/// then gets its own weights from a spatially smoothed covariance, and the
/// output is the weighted mean subaperture snapshot.
pub fn mvdr(tensor: &TofTensor, cfg: &MvdrConfig) -> Result<IQImage> {
    let (rows, cols, ch) = tensor.data.dim();
    let sub = if cfg.subaperture == 0 {
        ch / 2
    } else {
        cfg.subaperture
    };
    if sub < 1 || sub > ch {
        return Err(Error::Argument(format!(
            "subaperture {sub} must lie in [1, {ch}]"
        )));
    }
    if !(cfg.diagonal_loading >= 0.0) || !cfg.diagonal_loading.is_finite() {
        return Err(Error::Argument(
            "diagonal loading must be finite and >= 0".into(),
        ));
    }

    // Analytic signal per (column, channel) axial line.
    let mut analytic = Array3::from_elem((rows, cols, ch), Complex64::new(0.0, 0.0));
    for e in 0..ch {
        let line = Array2::from_shape_fn((rows, cols), |(r, c)| tensor.data[[r, c, e]]);
        let a = analytic_signal(&line);
        for r in 0..rows {
            for c in 0..cols {
                analytic[[r, c, e]] = a[[r, c]];
            }
        }
    }

    let n_snap = ch - sub + 1;
    let results: Vec<Vec<Complex64>> = (0..rows)
        .into_par_iter()
        .map(|r| -> Result<Vec<Complex64>> {
            let mut row_out = vec![Complex64::new(0.0, 0.0); cols];
            for c in 0..cols {
                let v: Vec<Complex64> = (0..ch).map(|e| analytic[[r, c, e]]).collect();
                let mut cov: Array2<Complex64> = Array2::zeros((sub, sub));
                for l0 in 0..n_snap {
                    let snap = &v[l0..l0 + sub];
                    for i in 0..sub {
                        for j in 0..sub {
                            cov[[i, j]] += snap[i] * snap[j].conj();
                        }
                    }
                }
                cov.mapv_inplace(|z| z / n_snap as f64);
                let w = mvdr_weights(&cov, cfg.diagonal_loading)?;
                // Mean subaperture snapshot, then w^H y.
                let mut mean = vec![Complex64::new(0.0, 0.0); sub];
                for l0 in 0..n_snap {
                    for i in 0..sub {
                        mean[i] += v[l0 + i];
                    }
                }
                let mut z = Complex64::new(0.0, 0.0);
                for i in 0..sub {
                    z += w[i].conj() * mean[i] / n_snap as f64;
                }
                row_out[c] = z;
            }
            Ok(row_out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pixels = Array2::from_elem((rows, cols), Complex64::new(0.0, 0.0));
    for (r, row_out) in results.into_iter().enumerate() {
        for (c, z) in row_out.into_iter().enumerate() {
            pixels[[r, c]] = z;
        }
    }
    IQImage::new(pixels, tensor.grid.clone())
}
