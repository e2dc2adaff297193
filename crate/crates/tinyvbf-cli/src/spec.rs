//! Phantom specification files for `synth`.
//!
//! Same `key = value` surface as the pipeline config. Lengths are in
//! millimeters, frequencies in megahertz, times in microseconds; the
//! parsed spec holds SI units.
//!
//! ```text
//! geometry  = default              # or: uniform <elements> <pitch_mm> <f0_mhz> <fs_mhz>
//! c         = 1540.0               # sound speed, m/s
//! angle-deg = 0.0                  # plane-wave steering angle
//! t0-us     = 0.0                  # acquisition start time
//! samples   = 1100                 # samples per channel
//! noise     = 0.0                  # additive Gaussian noise std
//! seed      = 0
//! scatterer = 20.0 0.0 1.0         # z_mm x_mm amplitude (repeatable)
//! cyst      = 20 0 4 200 12 28 -8 8  # z x r count zmin zmax xmin xmax
//! ```

use std::path::Path;

use tinyvbf::data::{AcquisitionParams, ProbeGeometry};
use tinyvbf::error::{Error, Result};
use tinyvbf::phantom::{CystSpec, Scatterer};

use crate::config::{parse_f64, parse_kv, parse_u64, parse_usize};

/// Cyst entry: exclusion disk plus the speckle region around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CystBlock {
    pub cyst: CystSpec,
    pub scatterer_count: usize,
    pub axial_range_m: (f64, f64),
    pub lateral_range_m: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub geometry: ProbeGeometry,
    pub acq: AcquisitionParams,
    pub samples: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub scatterers: Vec<Scatterer>,
    pub cyst: Option<CystBlock>,
}

fn parse_geometry(value: &str) -> Result<ProbeGeometry> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["default"] => Ok(ProbeGeometry::default_preset()),
        ["uniform", n, pitch, f0, fs] => ProbeGeometry::uniform(
            parse_usize("geometry elements", n)?,
            parse_f64("geometry pitch", pitch)? * 1e-3,
            parse_f64("geometry f0", f0)? * 1e6,
            parse_f64("geometry fs", fs)? * 1e6,
        ),
        _ => Err(Error::Config(format!(
            "geometry must be 'default' or 'uniform <elements> <pitch_mm> <f0_mhz> <fs_mhz>', got '{value}'"
        ))),
    }
}

fn parse_scatterer(value: &str) -> Result<Scatterer> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if let [z, x, a] = parts.as_slice() {
        return Ok(Scatterer {
            axial_m: parse_f64("scatterer z", z)? * 1e-3,
            lateral_m: parse_f64("scatterer x", x)? * 1e-3,
            amplitude: parse_f64("scatterer amplitude", a)?,
        });
    }
    Err(Error::Config(format!(
        "scatterer must be 'z_mm x_mm amplitude', got '{value}'"
    )))
}

fn parse_cyst(value: &str) -> Result<CystBlock> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if let [z, x, r, count, z0, z1, x0, x1] = parts.as_slice() {
        return Ok(CystBlock {
            cyst: CystSpec {
                center_axial_m: parse_f64("cyst z", z)? * 1e-3,
                center_lateral_m: parse_f64("cyst x", x)? * 1e-3,
                radius_m: parse_f64("cyst r", r)? * 1e-3,
            },
            scatterer_count: parse_usize("cyst count", count)?,
            axial_range_m: (
                parse_f64("cyst zmin", z0)? * 1e-3,
                parse_f64("cyst zmax", z1)? * 1e-3,
            ),
            lateral_range_m: (
                parse_f64("cyst xmin", x0)? * 1e-3,
                parse_f64("cyst xmax", x1)? * 1e-3,
            ),
        });
    }
    Err(Error::Config(format!(
        "cyst must be 'z_mm x_mm r_mm count zmin_mm zmax_mm xmin_mm xmax_mm', got '{value}'"
    )))
}

/// Loads and validates a phantom spec file.
pub fn load_phantom_spec(path: &Path) -> Result<PhantomSpec> {
    let mut geometry = ProbeGeometry::default_preset();
    let mut c = 1540.0f64;
    let mut angle_deg = 0.0f64;
    let mut t0_us = 0.0f64;
    let mut samples = 1024usize;
    let mut noise_std = 0.0f64;
    let mut seed = 0u64;
    let mut scatterers = Vec::new();
    let mut cyst = None;

    for (key, value) in parse_kv(path)? {
        match key.as_str() {
            "geometry" => geometry = parse_geometry(&value)?,
            "c" => c = parse_f64("c", &value)?,
            "angle-deg" => angle_deg = parse_f64("angle-deg", &value)?,
            "t0-us" => t0_us = parse_f64("t0-us", &value)?,
            "samples" => samples = parse_usize("samples", &value)?,
            "noise" => noise_std = parse_f64("noise", &value)?,
            "seed" => seed = parse_u64("seed", &value)?,
            "scatterer" => scatterers.push(parse_scatterer(&value)?),
            "cyst" => cyst = Some(parse_cyst(&value)?),
            other => {
                return Err(Error::Config(format!(
                    "{}: unknown phantom key '{other}'",
                    path.display()
                )))
            }
        }
    }

    let acq = AcquisitionParams::new(angle_deg.to_radians(), c, t0_us * 1e-6)
        .map_err(|e| Error::Config(format!("acquisition parameters: {e}")))?;
    Ok(PhantomSpec {
        geometry,
        acq,
        samples,
        noise_std,
        seed,
        scatterers,
        cyst,
    })
}
