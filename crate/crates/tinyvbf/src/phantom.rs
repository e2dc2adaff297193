//! Synthetic RF phantoms: point targets, speckle and anechoic cysts.
//!
//! Echoes are Gaussian-windowed tone bursts placed at the two-way
//! plane-wave arrival time of each scatterer, with optional additive
//! Gaussian noise. All randomness is seeded and reproducible.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{AcquisitionParams, ProbeGeometry, RfFrame};
use crate::error::{Error, Result};
use crate::tof::plane_wave_delay;

/// Tone-burst length in carrier cycles (Gaussian sigma spans half of it).
pub const PULSE_CYCLES: f64 = 1.5;

/// Support of the Gaussian envelope in sigmas; contributions further from
/// the arrival time than this are dropped (relative level ~ 1.5e-8).
const BURST_SUPPORT_SIGMAS: f64 = 6.0;

/// An ideal point reflector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub axial_m: f64,
    pub lateral_m: f64,
    pub amplitude: f64,
}

/// An anechoic disk cut out of a speckle background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CystSpec {
    pub center_axial_m: f64,
    pub center_lateral_m: f64,
    pub radius_m: f64,
}

fn gaussian_sample(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Synthesizes one RF frame from explicit scatterers.
///
/// Each scatterer contributes `A exp(-(t - tau)^2 / (2 sigma^2))
/// cos(2 pi f0 (t - tau))` per channel, where `tau` is the two-way
/// plane-wave delay and `sigma = PULSE_CYCLES / (2 f0)`. Gaussian noise of
/// standard deviation `noise_std` is added when positive.
pub fn point_phantom(
    scatterers: &[Scatterer],
    geometry: &ProbeGeometry,
    acq: &AcquisitionParams,
    n_samples: usize,
    noise_std: f64,
    seed: u64,
) -> Result<RfFrame> {
    if n_samples == 0 {
        return Err(Error::Argument(
            "phantom needs at least one sample per channel".into(),
        ));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::Argument(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    for s in scatterers {
        if !(s.axial_m.is_finite() && s.lateral_m.is_finite() && s.amplitude.is_finite()) {
            return Err(Error::Argument(format!("non-finite scatterer {s:?}")));
        }
        if s.axial_m <= 0.0 {
            return Err(Error::Argument(format!(
                "scatterer depth must be positive, got {} m",
                s.axial_m
            )));
        }
    }

    let channels = geometry.element_count;
    let fs = geometry.sampling_frequency_hz;
    let f0 = geometry.center_frequency_hz;
    let sigma = PULSE_CYCLES / (2.0 * f0);
    let half_window = BURST_SUPPORT_SIGMAS * sigma;

    let mut samples = Array2::<f32>::zeros((channels, n_samples));
    for (e, &xe) in geometry.element_x_m.iter().enumerate() {
        for s in scatterers {
            let tau = plane_wave_delay(
                s.axial_m,
                s.lateral_m,
                xe,
                acq.steering_angle_rad,
                acq.sound_speed_m_s,
            );
            let n_lo = ((tau - half_window - acq.start_time_s) * fs)
                .floor()
                .max(0.0) as usize;
            let n_hi =
                (((tau + half_window - acq.start_time_s) * fs).ceil() as usize).min(n_samples - 1);
            for n in n_lo..=n_hi {
                let dt = acq.start_time_s + n as f64 / fs - tau;
                let v = s.amplitude
                    * (-dt * dt / (2.0 * sigma * sigma)).exp()
                    * (std::f64::consts::TAU * f0 * dt).cos();
                samples[[e, n]] += v as f32;
            }
        }
    }

    if noise_std > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for v in samples.iter_mut() {
            *v += (noise_std * gaussian_sample(&mut rng)) as f32;
        }
    }

    RfFrame::new(samples, geometry.clone(), *acq)
}

/// Draws `count` speckle scatterers uniformly over a rectangular region,
/// rejecting positions inside `exclude` when given. Amplitudes are uniform
/// in [0.5, 1.5).
pub fn speckle_scatterers(
    count: usize,
    axial_range_m: (f64, f64),
    lateral_range_m: (f64, f64),
    exclude: Option<CystSpec>,
    seed: u64,
) -> Result<Vec<Scatterer>> {
    let (z0, z1) = axial_range_m;
    let (x0, x1) = lateral_range_m;
    if !(z1 > z0 && x1 > x0) || z0 <= 0.0 {
        return Err(Error::Argument(format!(
            "invalid speckle region axial ({z0}, {z1}) lateral ({x0}, {x1})"
        )));
    }
    if let Some(c) = exclude {
        // A disk covering the whole region would make rejection sampling
        // spin forever; the diagonal is a cheap sufficient bound.
        let region_diag = ((z1 - z0).powi(2) + (x1 - x0).powi(2)).sqrt();
        if c.radius_m >= region_diag {
            return Err(Error::Argument(
                "exclusion disk covers the entire speckle region".into(),
            ));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::Argument(
                "speckle rejection sampling failed; exclusion disk too large".into(),
            ));
        }
        let z = rng.random_range(z0..z1);
        let x = rng.random_range(x0..x1);
        if let Some(c) = exclude {
            let dz = z - c.center_axial_m;
            let dx = x - c.center_lateral_m;
            if dz * dz + dx * dx <= c.radius_m * c.radius_m {
                continue;
            }
        }
        out.push(Scatterer {
            axial_m: z,
            lateral_m: x,
            amplitude: rng.random_range(0.5..1.5),
        });
    }
    Ok(out)
}

/// Synthesizes an anechoic-cyst frame: speckle scatterers fill the given
/// region except inside the cyst disk.
#[allow(clippy::too_many_arguments)]
pub fn cyst_phantom(
    cyst: &CystSpec,
    scatterer_count: usize,
    axial_range_m: (f64, f64),
    lateral_range_m: (f64, f64),
    geometry: &ProbeGeometry,
    acq: &AcquisitionParams,
    n_samples: usize,
    noise_std: f64,
    seed: u64,
) -> Result<RfFrame> {
    let scatterers = speckle_scatterers(
        scatterer_count,
        axial_range_m,
        lateral_range_m,
        Some(*cyst),
        seed,
    )?;
    // Offset the noise stream so it is independent of placement draws.
    point_phantom(
        &scatterers,
        geometry,
        acq,
        n_samples,
        noise_std,
        seed.wrapping_add(1),
    )
}
