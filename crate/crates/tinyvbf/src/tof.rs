//! Plane-wave time-of-flight geometry and delay correction.
//!
//! For a plane wave steered by angle theta, the two-way travel time to a
//! pixel at (x, z) and back to a receive element at x_e is
//!
//! ```text
//! tau(x, z, x_e) = (z cos(theta) + x sin(theta)) / c   (transmit)
//!                + sqrt(z^2 + (x - x_e)^2) / c         (receive)
//! ```
//!
//! Delay correction resamples every channel at its per-pixel tau using
//! linear interpolation between the two neighboring samples; taps outside
//! the recorded window contribute zero.

use ndarray::Array3;
use rayon::prelude::*;

use crate::data::{PixelGrid, ProbeGeometry, RfFrame, TofTensor};
use crate::error::{Error, Result};

/// Two-way plane-wave travel time in seconds for one pixel/element pair.
pub fn plane_wave_delay(z_m: f64, x_m: f64, element_x_m: f64, angle_rad: f64, c_m_s: f64) -> f64 {
    let tx = z_m * angle_rad.cos() + x_m * angle_rad.sin();
    let rx = (z_m * z_m + (x_m - element_x_m) * (x_m - element_x_m)).sqrt();
    (tx + rx) / c_m_s
}

/// Per-pixel, per-channel two-way delays in seconds, `[row][col][channel]`.
#[derive(Debug, Clone)]
pub struct DelayTable {
    pub delays_s: Array3<f64>,
}

impl DelayTable {
    pub fn rows(&self) -> usize {
        self.delays_s.dim().0
    }

    pub fn cols(&self) -> usize {
        self.delays_s.dim().1
    }

    pub fn channels(&self) -> usize {
        self.delays_s.dim().2
    }
}

/// Tabulates [`plane_wave_delay`] over a full grid and aperture.
pub fn build_delay_table(
    grid: &PixelGrid,
    geometry: &ProbeGeometry,
    angle_rad: f64,
    c_m_s: f64,
) -> Result<DelayTable> {
    grid.validate()?;
    geometry.validate()?;
    if !(1000.0..=2000.0).contains(&c_m_s) {
        return Err(Error::Argument(format!(
            "sound speed must lie in [1000, 2000] m/s, got {c_m_s}"
        )));
    }
    let (rows, cols, ch) = (grid.rows(), grid.cols(), geometry.element_count);
    let mut delays = Array3::zeros((rows, cols, ch));
    delays
        .outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut plane)| {
            let z = grid.axial_positions_m[r];
            for c_idx in 0..cols {
                let x = grid.lateral_positions_m[c_idx];
                for e in 0..ch {
                    plane[[c_idx, e]] =
                        plane_wave_delay(z, x, geometry.element_x_m[e], angle_rad, c_m_s);
                }
            }
        });
    Ok(DelayTable { delays_s: delays })
}

/// Samples one channel at fractional index `idx` with linear interpolation;
/// indices outside `[0, len - 1]` contribute zero.
#[inline]
fn sample_linear(channel: &[f32], idx: f64) -> f64 {
    if idx < 0.0 {
        return 0.0;
    }
    let i = idx.floor() as usize;
    if i + 1 >= channel.len() {
        // The exact last knot still counts; anything past it is out of range.
        if i + 1 == channel.len() && idx == i as f64 {
            return channel[i] as f64;
        }
        return 0.0;
    }
    let frac = idx - i as f64;
    channel[i] as f64 * (1.0 - frac) + channel[i + 1] as f64 * frac
}

/// Delay-corrects a frame onto `grid` without normalization.
pub fn tof_correct_raw(frame: &RfFrame, grid: &PixelGrid) -> Result<TofTensor> {
    frame.validate()?;
    let table = build_delay_table(
        grid,
        &frame.geometry,
        frame.acq.steering_angle_rad,
        frame.acq.sound_speed_m_s,
    )?;
    let fs = frame.geometry.sampling_frequency_hz;
    let t0 = frame.acq.start_time_s;
    let (rows, cols, ch) = table.delays_s.dim();
    let mut out = Array3::zeros((rows, cols, ch));
    out.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut plane)| {
            for c_idx in 0..cols {
                for e in 0..ch {
                    let idx = (table.delays_s[[r, c_idx, e]] - t0) * fs;
                    let row = frame.samples.row(e);
                    plane[[c_idx, e]] = sample_linear(row.as_slice().unwrap(), idx);
                }
            }
        });
    TofTensor::new(out, grid.clone(), frame.geometry.clone())
}

/// Delay-corrects a frame and normalizes to [-1, 1] for model input.
pub fn tof_correct(frame: &RfFrame, grid: &PixelGrid) -> Result<TofTensor> {
    Ok(tof_correct_raw(frame, grid)?.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_grid, AcquisitionParams};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn geometry(n: usize) -> ProbeGeometry {
        ProbeGeometry::uniform(n, 0.3e-3, 7.6e6, 31.25e6).unwrap()
    }

    #[test]
    fn frozen_delay_value() {
        // Independently computed: theta = 0, x = 0, x_e = 0.004, z = 0.03,
        // c = 1540 -> (0.03 + sqrt(0.03^2 + 0.004^2)) / 1540.
        let tau = plane_wave_delay(0.03, 0.0, 0.004, 0.0, 1540.0);
        assert_relative_eq!(tau, 3.913343629924878e-05, max_relative = 1e-15);
    }

    #[test]
    fn normal_incidence_on_axis_is_two_way_depth() {
        // Element directly above the pixel at zero steering: tau = 2 z / c.
        let tau = plane_wave_delay(0.02, 0.0, 0.0, 0.0, 1540.0);
        assert_relative_eq!(tau, 2.0 * 0.02 / 1540.0, max_relative = 1e-15);
        assert_relative_eq!(tau, 2.5974025974025975e-05, max_relative = 1e-15);
    }

    #[test]
    fn delay_table_matches_pointwise_formula() {
        let geom = geometry(16);
        let grid = default_grid(&geom, 0.01, 0.03, 7, 5).unwrap();
        let table = build_delay_table(&grid, &geom, 0.05, 1540.0).unwrap();
        for r in 0..7 {
            for c in 0..5 {
                for e in 0..16 {
                    let want = plane_wave_delay(
                        grid.axial_positions_m[r],
                        grid.lateral_positions_m[c],
                        geom.element_x_m[e],
                        0.05,
                        1540.0,
                    );
                    assert_eq!(table.delays_s[[r, c, e]], want);
                }
            }
        }
    }

    #[test]
    fn zero_steering_delays_mirror_symmetric() {
        // At theta = 0 the receive path depends only on |x - x_e|, so the
        // delay cube is symmetric under simultaneous lateral and channel flip.
        let geom = geometry(8);
        let grid = default_grid(&geom, 0.01, 0.03, 5, 8).unwrap();
        let table = build_delay_table(&grid, &geom, 0.0, 1540.0).unwrap();
        let (_, cols, ch) = table.delays_s.dim();
        for r in 0..5 {
            for c in 0..cols {
                for e in 0..ch {
                    let a = table.delays_s[[r, c, e]];
                    let b = table.delays_s[[r, cols - 1 - c, ch - 1 - e]];
                    assert_relative_eq!(a, b, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn impulse_at_integer_knot_recovered_exactly() {
        // Place a pixel whose delay lands on an exact sample index; the
        // interpolator must return the stored amplitude untouched.
        let geom = geometry(2);
        let c = 1540.0;
        let fs = geom.sampling_frequency_hz;
        let n_idx = 300usize;
        // Solve 2 z / c = n / fs for a pixel on top of element 0.
        let z = 0.5 * c * n_idx as f64 / fs;
        let x = geom.element_x_m[0];
        let mut samples = Array2::zeros((2, 512));
        samples[[0, n_idx]] = 0.8f32;
        let frame = RfFrame::new(samples, geom, AcquisitionParams::default()).unwrap();
        let grid = PixelGrid::new(vec![z], vec![x]).unwrap();
        let t = tof_correct_raw(&frame, &grid).unwrap();
        assert_relative_eq!(t.data[[0, 0, 0]], 0.8, max_relative = 1e-6);
    }

    #[test]
    fn out_of_range_taps_are_zero() {
        let geom = geometry(2);
        let mut samples = Array2::zeros((2, 4));
        samples.fill(1.0);
        let frame = RfFrame::new(samples, geom, AcquisitionParams::default()).unwrap();
        // Deep pixel: delay far beyond 4 samples of recording.
        let grid = PixelGrid::new(vec![0.05], vec![0.0]).unwrap();
        let t = tof_correct_raw(&frame, &grid).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn correction_is_linear_in_the_data() {
        use rand::{Rng, SeedableRng};
        let geom = geometry(4);
        let grid = default_grid(&geom, 0.005, 0.02, 6, 4).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let a = Array2::from_shape_fn((4, 256), |_| rng.random_range(-1.0f32..1.0));
        let b = Array2::from_shape_fn((4, 256), |_| rng.random_range(-1.0f32..1.0));
        let sum = &a + &b;
        let acq = AcquisitionParams::default();
        let ta = tof_correct_raw(&RfFrame::new(a, geom.clone(), acq).unwrap(), &grid).unwrap();
        let tb = tof_correct_raw(&RfFrame::new(b, geom.clone(), acq).unwrap(), &grid).unwrap();
        let ts = tof_correct_raw(&RfFrame::new(sum, geom, acq).unwrap(), &grid).unwrap();
        for (s, (x, y)) in ts.data.iter().zip(ta.data.iter().zip(tb.data.iter())) {
            assert_relative_eq!(*s, *x + *y, max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn point_scatterer_aligns_across_channels() {
        // Synthesize an ideal point scatterer with the exact delay law and
        // check that after correction all channels agree at the true pixel
        // (variance across channels near zero) but not at a shifted pixel.
        // The carrier is oversampled 32x so that interpolation error does
        // not mask the alignment property under test.
        let geom = ProbeGeometry::uniform(16, 0.3e-3, 1.0e6, 32.0e6).unwrap();
        let acq = AcquisitionParams::default();
        let fs = geom.sampling_frequency_hz;
        let f0 = geom.center_frequency_hz;
        let (sx, sz) = (0.4e-3, 0.02);
        let sigma = 1.5 / (2.0 * f0);
        let mut samples = Array2::zeros((16, 2048));
        for e in 0..16 {
            let tau = plane_wave_delay(sz, sx, geom.element_x_m[e], 0.0, acq.sound_speed_m_s);
            for s in 0..2048 {
                let t = s as f64 / fs;
                let arg = (t - tau) / sigma;
                samples[[e, s]] = ((-0.5 * arg * arg).exp()
                    * (2.0 * std::f64::consts::PI * f0 * (t - tau)).cos())
                    as f32;
            }
        }
        let frame = RfFrame::new(samples, geom, acq).unwrap();
        let grid = PixelGrid::new(vec![sz, sz + 6e-3], vec![sx]).unwrap();
        let t = tof_correct_raw(&frame, &grid).unwrap();
        let var = |vals: Vec<f64>| {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
        };
        let aligned: Vec<f64> = (0..16).map(|e| t.data[[0, 0, e]]).collect();
        let off: Vec<f64> = (0..16).map(|e| t.data[[1, 0, e]]).collect();
        let mean_aligned = aligned.iter().sum::<f64>() / 16.0;
        assert!(
            mean_aligned > 0.8,
            "aligned channels should sit near the pulse peak"
        );
        assert!(
            var(aligned) < 1e-3,
            "aligned channels should agree to interpolation error"
        );
        // A pixel 6 mm away lands outside the pulse envelope entirely.
        assert!(off.iter().map(|v| v.abs()).fold(0.0, f64::max) < 0.05);
    }

    #[test]
    fn linear_interpolation_error_bounds() {
        // Worst-case amplitude error of two-point linear interpolation on a
        // sinusoid of frequency f sampled at fs is 1 - cos(pi f / fs):
        // about 7.7% at fs/8 and 0.49% at fs/32. Check measured error stays
        // within those analytic envelopes (plus slack for phase sampling).
        for (cycles_per_sample, bound) in [(1.0 / 8.0, 0.08), (1.0 / 32.0, 0.005)] {
            let n = 4096;
            let signal: Vec<f32> = (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * cycles_per_sample * i as f64).sin() as f32)
                .collect();
            let mut worst = 0.0f64;
            for k in 0..(n - 1) * 8 {
                let idx = k as f64 / 8.0;
                if idx >= (n - 1) as f64 {
                    break;
                }
                let got = sample_linear(&signal, idx);
                let want = (2.0 * std::f64::consts::PI * cycles_per_sample * idx).sin();
                worst = worst.max((got - want).abs());
            }
            assert!(
                worst <= bound,
                "worst interpolation error {worst} exceeds {bound} at f = fs*{cycles_per_sample}"
            );
        }
    }
}
