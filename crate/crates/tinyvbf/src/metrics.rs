//! Image-quality metrics: contrast, contrast-to-noise, generalized CNR and
//! point-spread-function width.
//!
//! All metrics consume the *linear* envelope image (not decibels) together
//! with its grid; regions are resolved against grid coordinates in meters.

use ndarray::Array2;

use crate::data::PixelGrid;
use crate::error::{Error, Result};

/// Histogram bins used by [`gcnr`].
pub const GCNR_BINS: usize = 100;

/// Sentinel reported when the CNR denominator vanishes.
pub const CNR_CAP: f64 = 1e6;

/// Half-maximum level in decibels: `20 log10(0.5)`.
pub const HALF_MAX_DB: f64 = -6.020_599_913_279_624;

/// A measurement region in grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionSpec {
    Disk {
        center_axial_m: f64,
        center_lateral_m: f64,
        radius_m: f64,
    },
    Rect {
        axial_min_m: f64,
        axial_max_m: f64,
        lateral_min_m: f64,
        lateral_max_m: f64,
    },
}

impl RegionSpec {
    /// Pixel membership mask over `grid` (rectangle bounds inclusive).
    pub fn mask(&self, grid: &PixelGrid) -> Array2<bool> {
        let (rows, cols) = (grid.rows(), grid.cols());
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            let z = grid.axial_positions_m[r];
            let x = grid.lateral_positions_m[c];
            match *self {
                RegionSpec::Disk {
                    center_axial_m,
                    center_lateral_m,
                    radius_m,
                } => {
                    let dz = z - center_axial_m;
                    let dx = x - center_lateral_m;
                    dz * dz + dx * dx <= radius_m * radius_m
                }
                RegionSpec::Rect {
                    axial_min_m,
                    axial_max_m,
                    lateral_min_m,
                    lateral_max_m,
                } => {
                    z >= axial_min_m && z <= axial_max_m && x >= lateral_min_m && x <= lateral_max_m
                }
            }
        })
    }
}

fn region_samples(env: &Array2<f64>, grid: &PixelGrid, region: &RegionSpec) -> Result<Vec<f64>> {
    if env.dim() != (grid.rows(), grid.cols()) {
        return Err(Error::Argument(format!(
            "envelope shape {:?} does not match grid {}x{}",
            env.dim(),
            grid.rows(),
            grid.cols()
        )));
    }
    if env.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Argument(
            "envelope must be non-negative and finite".into(),
        ));
    }
    let mask = region.mask(grid);
    let samples: Vec<f64> = env
        .iter()
        .zip(mask.iter())
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect();
    if samples.is_empty() {
        return Err(Error::Argument(format!(
            "region {region:?} covers no pixels"
        )));
    }
    Ok(samples)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
fn variance(v: &[f64], mu: f64) -> f64 {
    v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64
}

/// Contrast ratio between two regions in decibels:
/// `|20 log10(mean_in / mean_out)|`.
pub fn cr(
    env: &Array2<f64>,
    grid: &PixelGrid,
    inside: &RegionSpec,
    outside: &RegionSpec,
) -> Result<f64> {
    let mi = mean(&region_samples(env, grid, inside)?);
    let mo = mean(&region_samples(env, grid, outside)?);
    if mi <= 0.0 || mo <= 0.0 {
        return Err(Error::Numeric(format!(
            "contrast undefined for zero region mean (inside {mi}, outside {mo})"
        )));
    }
    Ok((20.0 * (mi / mo).log10()).abs())
}

/// Contrast-to-noise ratio with its degenerate-denominator flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnrResult {
    pub value: f64,
    /// True when both region variances were zero and the value was capped.
    pub capped: bool,
}

/// `|mean_in - mean_out| / sqrt(var_in + var_out)` with population
/// variances. When both variances vanish the ratio is unbounded; the
/// result is capped at [`CNR_CAP`] (zero if the means also coincide) and
/// flagged.
pub fn cnr(
    env: &Array2<f64>,
    grid: &PixelGrid,
    inside: &RegionSpec,
    outside: &RegionSpec,
) -> Result<CnrResult> {
    let a = region_samples(env, grid, inside)?;
    let b = region_samples(env, grid, outside)?;
    let (ma, mb) = (mean(&a), mean(&b));
    let denom = (variance(&a, ma) + variance(&b, mb)).sqrt();
    if denom == 0.0 {
        let value = if ma == mb { 0.0 } else { CNR_CAP };
        return Ok(CnrResult {
            value,
            capped: true,
        });
    }
    Ok(CnrResult {
        value: (ma - mb).abs() / denom,
        capped: false,
    })
}

/// Generalized contrast-to-noise ratio: one minus the overlap of the two
/// regions' amplitude histograms ([`GCNR_BINS`] shared-range bins).
///
/// Lies in [0, 1]: 0 for identical distributions, 1 for fully separated
/// ones. A degenerate shared range (all samples equal) is full overlap.
pub fn gcnr(
    env: &Array2<f64>,
    grid: &PixelGrid,
    inside: &RegionSpec,
    outside: &RegionSpec,
) -> Result<f64> {
    let a = region_samples(env, grid, inside)?;
    let b = region_samples(env, grid, outside)?;
    let lo = a.iter().chain(&b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(&b)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let width = (hi - lo) / GCNR_BINS as f64;
    let hist = |v: &[f64]| -> Vec<u64> {
        let mut h = vec![0u64; GCNR_BINS];
        for &x in v {
            let bin = (((x - lo) / width) as usize).min(GCNR_BINS - 1);
            h[bin] += 1;
        }
        h
    };
    let ha = hist(&a);
    let hb = hist(&b);
    // Overlap of the normalized histograms, sum_i min(ha_i/na, hb_i/nb),
    // accumulated over a common denominator in integer arithmetic so that
    // identical distributions give an overlap of exactly one (and a GCNR of
    // exactly zero).
    let (na, nb) = (a.len() as u128, b.len() as u128);
    let numer: u128 = ha
        .iter()
        .zip(&hb)
        .map(|(&x, &y)| (x as u128 * nb).min(y as u128 * na))
        .sum();
    let overlap = numer as f64 / (na * nb) as f64;
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Full width at half maximum of a sampled amplitude profile.
///
/// The crossing positions are interpolated linearly on the *linear*
/// amplitude scale at half the peak (equivalently [`HALF_MAX_DB`]); the
/// peak must be bracketed by samples below half maximum on both sides.
pub fn fwhm(positions_m: &[f64], amplitudes: &[f64]) -> Result<f64> {
    let n = positions_m.len();
    if n != amplitudes.len() || n < 3 {
        return Err(Error::Argument(
            "profile needs at least 3 matched samples".into(),
        ));
    }
    if positions_m.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument(
            "profile positions must be strictly increasing".into(),
        ));
    }
    if amplitudes.iter().any(|&a| !a.is_finite() || a < 0.0) {
        return Err(Error::Argument(
            "amplitudes must be non-negative and finite".into(),
        ));
    }
    let peak = amplitudes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let half = amplitudes[peak] / 2.0;
    if amplitudes[peak] <= 0.0 {
        return Err(Error::Numeric(
            "profile peak is zero; width undefined".into(),
        ));
    }
    // Walk outward from the peak to the first samples at or below half.
    let mut left = None;
    for j in (0..peak).rev() {
        if amplitudes[j] <= half {
            let t = (half - amplitudes[j]) / (amplitudes[j + 1] - amplitudes[j]);
            left = Some(positions_m[j] + t * (positions_m[j + 1] - positions_m[j]));
            break;
        }
    }
    let mut right = None;
    for j in (peak + 1)..n {
        if amplitudes[j] <= half {
            let t = (amplitudes[j - 1] - half) / (amplitudes[j - 1] - amplitudes[j]);
            right = Some(positions_m[j - 1] + t * (positions_m[j] - positions_m[j - 1]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::Numeric(
            "half-maximum crossing not bracketed by the profile".into(),
        )),
    }
}

/// A lateral cut through the envelope at fixed depth.
#[derive(Debug, Clone)]
pub struct PsfProfile {
    pub positions_m: Vec<f64>,
    /// Linear amplitudes normalized to a unit peak.
    pub amplitudes: Vec<f64>,
    /// Normalized amplitudes in decibels, floored at -120 dB.
    pub db: Vec<f64>,
}

/// Extracts the lateral profile from the grid row nearest `depth_m`,
/// normalized so the row maximum is one (0 dB).
pub fn lateral_profile(env: &Array2<f64>, grid: &PixelGrid, depth_m: f64) -> Result<PsfProfile> {
    if env.dim() != (grid.rows(), grid.cols()) {
        return Err(Error::Argument("envelope shape does not match grid".into()));
    }
    let row = grid.row_nearest_depth(depth_m)?;
    let raw: Vec<f64> = env.row(row).to_vec();
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::Numeric(
            "profile row is all zero; cannot normalize".into(),
        ));
    }
    let amplitudes: Vec<f64> = raw.iter().map(|&v| v / max).collect();
    let db = amplitudes
        .iter()
        .map(|&a| {
            if a > 0.0 {
                (20.0 * a.log10()).max(-120.0)
            } else {
                -120.0
            }
        })
        .collect();
    Ok(PsfProfile {
        positions_m: grid.lateral_positions_m.clone(),
        amplitudes,
        db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(rows: usize, cols: usize) -> PixelGrid {
        PixelGrid::new(
            (0..rows).map(|r| 0.01 + r as f64 * 1e-4).collect(),
            (0..cols).map(|c| -0.005 + c as f64 * 1e-4).collect(),
        )
        .unwrap()
    }

    fn halves_env(rows: usize, cols: usize, left: f64, right: f64) -> Array2<f64> {
        Array2::from_shape_fn(
            (rows, cols),
            |(_, c)| if c < cols / 2 { left } else { right },
        )
    }

    fn left_region(g: &PixelGrid) -> RegionSpec {
        RegionSpec::Rect {
            axial_min_m: g.axial_positions_m[0],
            axial_max_m: *g.axial_positions_m.last().unwrap(),
            lateral_min_m: g.lateral_positions_m[0],
            lateral_max_m: g.lateral_positions_m[g.cols() / 2 - 1],
        }
    }

    fn right_region(g: &PixelGrid) -> RegionSpec {
        RegionSpec::Rect {
            axial_min_m: g.axial_positions_m[0],
            axial_max_m: *g.axial_positions_m.last().unwrap(),
            lateral_min_m: g.lateral_positions_m[g.cols() / 2],
            lateral_max_m: *g.lateral_positions_m.last().unwrap(),
        }
    }

    #[test]
    fn cr_of_known_ratio_is_exact() {
        let g = grid(10, 20);
        // mean_in / mean_out = 10^(-35/20) gives exactly 35 dB.
        let inside = 10f64.powf(-35.0 / 20.0);
        let env = halves_env(10, 20, inside, 1.0);
        let got = cr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert_relative_eq!(got, 35.0, max_relative = 1e-12);
    }

    #[test]
    fn cr_is_symmetric_in_regions() {
        let g = grid(6, 10);
        let env = halves_env(6, 10, 0.2, 0.9);
        let a = cr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        let b = cr(&env, &g, &right_region(&g), &left_region(&g)).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn cr_rejects_zero_mean() {
        let g = grid(6, 10);
        let env = halves_env(6, 10, 0.0, 1.0);
        assert!(matches!(
            cr(&env, &g, &left_region(&g), &right_region(&g)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn cnr_hand_computed() {
        // Inside {0, 2}: mean 1, var 1. Outside {4, 6}: mean 5, var 1.
        // CNR = 4 / sqrt(2).
        let g = grid(2, 2);
        let env = ndarray::array![[0.0, 4.0], [2.0, 6.0]];
        let got = cnr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert!(!got.capped);
        assert_relative_eq!(got.value, 4.0 / 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn cnr_caps_degenerate_denominator() {
        let g = grid(4, 6);
        let env = halves_env(4, 6, 0.25, 0.75);
        let got = cnr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert!(got.capped);
        assert_eq!(got.value, CNR_CAP);
        // Identical constant regions: capped with value zero.
        let env = halves_env(4, 6, 0.5, 0.5);
        let got = cnr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert!(got.capped);
        assert_eq!(got.value, 0.0);
    }

    #[test]
    fn gcnr_extremes() {
        let g = grid(10, 40);
        // Fully separated amplitude ranges: gcnr = 1.
        let mut env = Array2::zeros((10, 40));
        for ((_, c), v) in env.indexed_iter_mut() {
            *v = if c < 20 {
                0.1 + (c as f64) * 1e-4
            } else {
                5.0 + (c as f64) * 1e-4
            };
        }
        let got = gcnr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert_relative_eq!(got, 1.0, max_relative = 1e-12);
        // Identical distributions: gcnr = 0.
        let env = Array2::from_shape_fn((10, 40), |(r, c)| ((r * 40 + c % 20) % 7) as f64 * 0.1);
        let got = gcnr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert_relative_eq!(got, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gcnr_half_overlap() {
        // Inside uniform on [0, 1), outside uniform on [0.5, 1.5): the
        // distributions overlap on half their mass, so gcnr ~ 0.5 within
        // histogram resolution.
        let rows = 50;
        let cols = 80;
        let g = grid(rows, cols);
        let half = cols / 2;
        let env = Array2::from_shape_fn((rows, cols), |(r, c)| {
            let i = r * half + (c % half);
            let u = (i as f64 + 0.5) / (rows * half) as f64;
            if c < half {
                u
            } else {
                0.5 + u
            }
        });
        let got = gcnr(&env, &g, &left_region(&g), &right_region(&g)).unwrap();
        assert!(
            (got - 0.5).abs() <= 1.0 / GCNR_BINS as f64 + 0.01,
            "gcnr {got}"
        );
    }

    #[test]
    fn fwhm_triangle_is_exact() {
        // Samples hit the half-maximum exactly; linear-amplitude
        // interpolation returns the crossing positions without bias.
        let pos = [0.0, 1.0, 2.0, 3.0, 4.0];
        let amp = [0.0, 0.5, 1.0, 0.5, 0.0];
        assert_relative_eq!(fwhm(&pos, &amp).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn fwhm_gaussian_matches_analytic() {
        // FWHM of a Gaussian is 2 sqrt(2 ln 2) sigma = 2.3548... sigma.
        let sigma = 0.8e-3;
        let pos: Vec<f64> = (0..401).map(|i| (i as f64 - 200.0) * 2e-5).collect();
        let amp: Vec<f64> = pos
            .iter()
            .map(|&x| (-0.5 * (x / sigma).powi(2)).exp())
            .collect();
        let got = fwhm(&pos, &amp).unwrap();
        let want = 2.354_820_045_030_949_3 * sigma;
        assert_relative_eq!(got, want, max_relative = 1e-4);
    }

    #[test]
    fn fwhm_requires_bracketing() {
        // Monotone profile never falls below half on the left side.
        let pos = [0.0, 1.0, 2.0, 3.0];
        let amp = [0.9, 0.95, 1.0, 0.2];
        assert!(matches!(fwhm(&pos, &amp), Err(Error::Numeric(_))));
    }

    #[test]
    fn lateral_profile_picks_nearest_row_and_normalizes() {
        let g = grid(5, 7);
        let mut env = Array2::from_elem((5, 7), 0.1);
        env[[2, 3]] = 2.0;
        let depth = g.axial_positions_m[2] + 0.4e-4; // still nearest row 2
        let p = lateral_profile(&env, &g, depth).unwrap();
        assert_eq!(p.positions_m.len(), 7);
        assert_relative_eq!(p.amplitudes[3], 1.0);
        assert_relative_eq!(p.db[3], 0.0);
        assert!(p.amplitudes.iter().all(|&a| a <= 1.0));
    }

    #[test]
    fn disk_mask_counts_expected_pixels() {
        let g = PixelGrid::new(
            (0..11).map(|r| r as f64 * 1e-3).collect(),
            (0..11).map(|c| c as f64 * 1e-3).collect(),
        )
        .unwrap();
        let disk = RegionSpec::Disk {
            center_axial_m: 5e-3,
            center_lateral_m: 5e-3,
            radius_m: 2.05e-3,
        };
        let mask = disk.mask(&g);
        // Hand count: offsets with dz^2 + dx^2 <= 2.05^2 in integer mm:
        // all |dz|,|dx| with dz^2+dx^2 <= 4.2025 -> {0,±1,±2} axis cross
        // plus (±1,±1): 5 + 4 + 4 = 13 pixels.
        assert_eq!(mask.iter().filter(|&&m| m).count(), 13);
    }
}
