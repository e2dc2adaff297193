//! Acquisition data model, pixel grids, tensor layouts and container I/O.
//!
//! Everything downstream of acquisition consumes these types: raw channel
//! data ([`RfFrame`]), the delay-corrected cube ([`TofTensor`]), complex
//! beamformed output ([`IQImage`]) and the display image ([`BModeImage`]).
//! All types are immutable after construction and safe to share across
//! threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const RF_MAGIC: &[u8; 4] = b"RFD1";
pub const IQ_MAGIC: &[u8; 4] = b"IQF1";

/// Spacing uniformity tolerance for element positions and grids, in meters
/// (relative to the nominal spacing).
pub const SPACING_TOL: f64 = 1e-12;

/// Uniformly pitched linear transducer array, centered on lateral zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGeometry {
    pub element_count: usize,
    /// Distance between adjacent element centers, meters.
    pub pitch_m: f64,
    /// Lateral element positions, meters, strictly increasing.
    pub element_x_m: Vec<f64>,
    pub center_frequency_hz: f64,
    pub sampling_frequency_hz: f64,
}

impl ProbeGeometry {
    /// Builds a centered uniform array: element i sits at
    /// `(i - (n-1)/2) * pitch`.
    pub fn uniform(
        element_count: usize,
        pitch_m: f64,
        center_frequency_hz: f64,
        sampling_frequency_hz: f64,
    ) -> Result<Self> {
        if element_count < 2 {
            return Err(Error::Argument(format!(
                "element_count must be >= 2, got {element_count}"
            )));
        }
        if !(pitch_m > 0.0) {
            return Err(Error::Argument(format!(
                "pitch must be positive, got {pitch_m}"
            )));
        }
        if !(center_frequency_hz > 0.0) || !(sampling_frequency_hz > 0.0) {
            return Err(Error::Argument("frequencies must be positive".into()));
        }
        let half = (element_count as f64 - 1.0) / 2.0;
        let element_x_m = (0..element_count)
            .map(|i| (i as f64 - half) * pitch_m)
            .collect();
        Ok(Self {
            element_count,
            pitch_m,
            element_x_m,
            center_frequency_hz,
            sampling_frequency_hz,
        })
    }

    /// 128-element, 0.3 mm pitch, 7.6 MHz center, 31.25 MHz sampling.
    pub fn default_preset() -> Self {
        Self::uniform(128, 0.3e-3, 7.6e6, 31.25e6).expect("preset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count < 2 {
            return Err(Error::Argument("element_count must be >= 2".into()));
        }
        if self.element_x_m.len() != self.element_count {
            return Err(Error::Argument(
                "element_x_m length != element_count".into(),
            ));
        }
        if !(self.center_frequency_hz > 0.0) || !(self.sampling_frequency_hz > 0.0) {
            return Err(Error::Argument("frequencies must be positive".into()));
        }
        for w in self.element_x_m.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Argument(
                    "element positions must be strictly increasing".into(),
                ));
            }
            if (w[1] - w[0] - self.pitch_m).abs() > SPACING_TOL {
                return Err(Error::Argument(
                    "element spacing does not match pitch".into(),
                ));
            }
        }
        Ok(())
    }

    /// Full aperture width, first to last element, meters.
    pub fn aperture_m(&self) -> f64 {
        self.element_x_m[self.element_count - 1] - self.element_x_m[0]
    }
}

/// Single plane-wave transmit parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionParams {
    pub steering_angle_rad: f64,
    pub sound_speed_m_s: f64,
    /// Time of the first recorded sample, seconds.
    pub start_time_s: f64,
}

impl AcquisitionParams {
    pub fn new(steering_angle_rad: f64, sound_speed_m_s: f64, start_time_s: f64) -> Result<Self> {
        let p = Self {
            steering_angle_rad,
            sound_speed_m_s,
            start_time_s,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1000.0..=2000.0).contains(&self.sound_speed_m_s) {
            return Err(Error::Argument(format!(
                "sound speed must lie in [1000, 2000] m/s, got {}",
                self.sound_speed_m_s
            )));
        }
        if !(self.steering_angle_rad.abs() < std::f64::consts::FRAC_PI_4) {
            return Err(Error::Argument(
                "steering angle magnitude must be < pi/4".into(),
            ));
        }
        if !self.start_time_s.is_finite() {
            return Err(Error::Argument("start time must be finite".into()));
        }
        Ok(())
    }
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        Self {
            steering_angle_rad: 0.0,
            sound_speed_m_s: 1540.0,
            start_time_s: 0.0,
        }
    }
}

/// Raw per-channel radio-frequency samples for one plane-wave transmit.
///
/// Samples are stored `[channel][time]`, matching the on-disk container.
#[derive(Debug, Clone)]
pub struct RfFrame {
    pub samples: Array2<f32>,
    pub geometry: ProbeGeometry,
    pub acq: AcquisitionParams,
}

impl RfFrame {
    pub fn new(
        samples: Array2<f32>,
        geometry: ProbeGeometry,
        acq: AcquisitionParams,
    ) -> Result<Self> {
        let frame = Self {
            samples,
            geometry,
            acq,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn channel_count(&self) -> usize {
        self.samples.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.acq.validate()?;
        if self.samples.nrows() != self.geometry.element_count {
            return Err(Error::Argument(format!(
                "frame has {} channels but geometry has {} elements",
                self.samples.nrows(),
                self.geometry.element_count
            )));
        }
        if self.samples.ncols() == 0 {
            return Err(Error::Argument(
                "frame must hold at least one sample".into(),
            ));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt("frame contains non-finite samples".into()));
        }
        Ok(())
    }
}

/// Imaging grid: strictly increasing axial (depth) and lateral positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub axial_positions_m: Vec<f64>,
    pub lateral_positions_m: Vec<f64>,
}

impl PixelGrid {
    pub fn new(axial_positions_m: Vec<f64>, lateral_positions_m: Vec<f64>) -> Result<Self> {
        let grid = Self {
            axial_positions_m,
            lateral_positions_m,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.axial_positions_m.len()
    }

    pub fn cols(&self) -> usize {
        self.lateral_positions_m.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axial_positions_m.is_empty() || self.lateral_positions_m.is_empty() {
            return Err(Error::Argument(
                "grid must have at least one row and column".into(),
            ));
        }
        for seq in [&self.axial_positions_m, &self.lateral_positions_m] {
            if seq.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Argument(
                    "grid positions must be strictly increasing".into(),
                ));
            }
            if seq.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("grid positions must be finite".into()));
            }
        }
        Ok(())
    }

    /// True when both axes are uniformly spaced within [`SPACING_TOL`]
    /// relative to the nominal step (single-point axes count as uniform).
    pub fn is_uniform(&self) -> bool {
        fn uniform(seq: &[f64]) -> bool {
            if seq.len() < 3 {
                return true;
            }
            let step = (seq[seq.len() - 1] - seq[0]) / (seq.len() - 1) as f64;
            seq.windows(2)
                .all(|w| ((w[1] - w[0]) - step).abs() <= step.abs() * 1e-9 + 1e-15)
        }
        uniform(&self.axial_positions_m) && uniform(&self.lateral_positions_m)
    }

    pub fn row_nearest_depth(&self, depth_m: f64) -> Result<usize> {
        let first = *self.axial_positions_m.first().unwrap();
        let last = *self.axial_positions_m.last().unwrap();
        if depth_m < first || depth_m > last {
            return Err(Error::Argument(format!(
                "depth {depth_m} outside grid range [{first}, {last}]"
            )));
        }
        Ok(self
            .axial_positions_m
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - depth_m)
                    .abs()
                    .partial_cmp(&(b.1 - depth_m).abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap())
    }
}

/// `n` evenly spaced points with inclusive endpoints; `n == 1` yields the
/// interval midpoint.
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(a + b) / 2.0];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

/// Builds the standard imaging grid: axial positions uniform over the depth
/// range, lateral positions spanning the probe aperture. A single column
/// degenerates to the aperture center.
pub fn default_grid(
    geometry: &ProbeGeometry,
    depth_min_m: f64,
    depth_max_m: f64,
    rows: usize,
    cols: usize,
) -> Result<PixelGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::Argument("grid dimensions must be positive".into()));
    }
    if !(depth_min_m < depth_max_m) {
        return Err(Error::Argument(format!(
            "depth range invalid: [{depth_min_m}, {depth_max_m}]"
        )));
    }
    if !(depth_min_m > 0.0) {
        return Err(Error::Argument("depth range must be positive".into()));
    }
    geometry.validate()?;
    let axial = linspace(depth_min_m, depth_max_m, rows);
    let lateral = linspace(
        geometry.element_x_m[0],
        geometry.element_x_m[geometry.element_count - 1],
        cols,
    );
    PixelGrid::new(axial, lateral)
}

/// Time-of-flight-corrected data cube indexed `[axial][lateral][channel]`.
#[derive(Debug, Clone)]
pub struct TofTensor {
    pub data: Array3<f64>,
    pub grid: PixelGrid,
    pub geometry: ProbeGeometry,
}

impl TofTensor {
    pub fn new(data: Array3<f64>, grid: PixelGrid, geometry: ProbeGeometry) -> Result<Self> {
        let (rows, cols, ch) = data.dim();
        if rows != grid.rows() || cols != grid.cols() || ch != geometry.element_count {
            return Err(Error::Argument(format!(
                "tensor shape ({rows}, {cols}, {ch}) inconsistent with grid {}x{} and {} channels",
                grid.rows(),
                grid.cols(),
                geometry.element_count
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt("tensor contains non-finite values".into()));
        }
        Ok(Self {
            data,
            grid,
            geometry,
        })
    }

    /// Model-input normalization: divide by the maximum absolute value so
    /// every entry lies in [-1, 1]. An all-zero tensor maps to itself.
    pub fn normalized(mut self) -> Self {
        let max_abs = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs > 0.0 {
            self.data.mapv_inplace(|v| v / max_abs);
        }
        self
    }

    pub fn channels(&self) -> usize {
        self.geometry.element_count
    }
}

/// Complex (in-phase, quadrature) beamformed image.
#[derive(Debug, Clone)]
pub struct IQImage {
    pub pixels: Array2<Complex64>,
    pub grid: PixelGrid,
}

impl IQImage {
    pub fn new(pixels: Array2<Complex64>, grid: PixelGrid) -> Result<Self> {
        if pixels.nrows() != grid.rows() || pixels.ncols() != grid.cols() {
            return Err(Error::Argument(format!(
                "image shape ({}, {}) does not match grid {}x{}",
                pixels.nrows(),
                pixels.ncols(),
                grid.rows(),
                grid.cols()
            )));
        }
        if pixels
            .iter()
            .any(|p| !p.re.is_finite() || !p.im.is_finite())
        {
            return Err(Error::Corrupt(
                "image contains non-finite components".into(),
            ));
        }
        Ok(Self { pixels, grid })
    }
}

/// Log-compressed display image; every pixel lies in `[-dynamic_range_db, 0]`.
#[derive(Debug, Clone)]
pub struct BModeImage {
    pub db: Array2<f64>,
    pub dynamic_range_db: f64,
}

impl BModeImage {
    pub fn new(db: Array2<f64>, dynamic_range_db: f64) -> Result<Self> {
        if !(dynamic_range_db > 0.0) {
            return Err(Error::Argument("dynamic range must be positive".into()));
        }
        if db
            .iter()
            .any(|v| !v.is_finite() || *v > 0.0 || *v < -dynamic_range_db)
        {
            return Err(Error::Argument(format!(
                "db pixels must lie in [-{dynamic_range_db}, 0]"
            )));
        }
        Ok(Self {
            db,
            dynamic_range_db,
        })
    }
}

// ---------------------------------------------------------------------------
// RFD1 container
//
// bytes 0-3   magic "RFD1"
// u32         version (= 1)
// u32         channel_count
// u32         sample_count
// f64         center_frequency_hz
// f64         sampling_frequency_hz
// f64         pitch_m
// f64         steering_angle_rad
// f64         sound_speed_m_s
// f64         start_time_s
// payload     channel-major f32 samples
//
// All integers and floats little-endian. Element positions are not stored;
// the geometry is reconstructed as a centered uniform array from the pitch.
// ---------------------------------------------------------------------------

/// RFD1 header size in bytes.
pub const RF_HEADER_BYTES: u64 = 4 + 3 * 4 + 6 * 8;

/// Writes `frame` as an RFD1 container.
pub fn save_rf(frame: &RfFrame, path: &Path) -> Result<()> {
    frame.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RF_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(frame.channel_count() as u32)?;
    w.write_u32::<LittleEndian>(frame.sample_count() as u32)?;
    w.write_f64::<LittleEndian>(frame.geometry.center_frequency_hz)?;
    w.write_f64::<LittleEndian>(frame.geometry.sampling_frequency_hz)?;
    w.write_f64::<LittleEndian>(frame.geometry.pitch_m)?;
    w.write_f64::<LittleEndian>(frame.acq.steering_angle_rad)?;
    w.write_f64::<LittleEndian>(frame.acq.sound_speed_m_s)?;
    w.write_f64::<LittleEndian>(frame.acq.start_time_s)?;
    for row in frame.samples.rows() {
        for &v in row {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an RFD1 container written by [`save_rf`].
pub fn load_rf(path: &Path) -> Result<RfFrame> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for RFD1 magic".into()))?;
    if &magic != RF_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"RFD1\""
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != 1 {
        return Err(Error::Format(format!("unsupported RFD1 version {version}")));
    }
    let channels = r.read_u32::<LittleEndian>()? as usize;
    let samples = r.read_u32::<LittleEndian>()? as usize;
    let fc = r.read_f64::<LittleEndian>()?;
    let fs = r.read_f64::<LittleEndian>()?;
    let pitch = r.read_f64::<LittleEndian>()?;
    let angle = r.read_f64::<LittleEndian>()?;
    let c = r.read_f64::<LittleEndian>()?;
    let t0 = r.read_f64::<LittleEndian>()?;

    let mut payload = vec![0f32; channels * samples];
    for v in payload.iter_mut() {
        *v = r
            .read_f32::<LittleEndian>()
            .map_err(|_| Error::Corrupt("payload shorter than header shape".into()))?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt("payload longer than header shape".into()));
    }
    if payload.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupt("payload contains non-finite samples".into()));
    }

    let geometry = ProbeGeometry::uniform(channels, pitch, fc, fs)?;
    let acq = AcquisitionParams::new(angle, c, t0)?;
    let data = Array2::from_shape_vec((channels, samples), payload)
        .map_err(|e| Error::Corrupt(format!("payload shape: {e}")))?;
    RfFrame::new(data, geometry, acq)
}

// ---------------------------------------------------------------------------
// IQF1 container
//
// bytes 0-3   magic "IQF1"
// u32         version (= 1)
// u32         rows
// u32         cols
// f64 x4      axial_min, axial_max, lateral_min, lateral_max (meters)
// payload     row-major interleaved f32 (I, Q) pairs
//
// The grid extents describe a uniform grid; non-uniform grids are rejected.
// ---------------------------------------------------------------------------

/// Writes `image` as an IQF1 dump.
pub fn save_iq(image: &IQImage, path: &Path) -> Result<()> {
    if !image.grid.is_uniform() {
        return Err(Error::Argument("IQF1 stores uniform grids only".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(IQ_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(image.grid.rows() as u32)?;
    w.write_u32::<LittleEndian>(image.grid.cols() as u32)?;
    w.write_f64::<LittleEndian>(*image.grid.axial_positions_m.first().unwrap())?;
    w.write_f64::<LittleEndian>(*image.grid.axial_positions_m.last().unwrap())?;
    w.write_f64::<LittleEndian>(*image.grid.lateral_positions_m.first().unwrap())?;
    w.write_f64::<LittleEndian>(*image.grid.lateral_positions_m.last().unwrap())?;
    for px in image.pixels.iter() {
        w.write_f32::<LittleEndian>(px.re as f32)?;
        w.write_f32::<LittleEndian>(px.im as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an IQF1 dump written by [`save_iq`].
pub fn load_iq(path: &Path) -> Result<IQImage> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for IQF1 magic".into()))?;
    if &magic != IQ_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"IQF1\""
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != 1 {
        return Err(Error::Format(format!("unsupported IQF1 version {version}")));
    }
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let ax_min = r.read_f64::<LittleEndian>()?;
    let ax_max = r.read_f64::<LittleEndian>()?;
    let lat_min = r.read_f64::<LittleEndian>()?;
    let lat_max = r.read_f64::<LittleEndian>()?;
    let mut pixels = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = r
            .read_f32::<LittleEndian>()
            .map_err(|_| Error::Corrupt("payload shorter than header shape".into()))?;
        let im = r
            .read_f32::<LittleEndian>()
            .map_err(|_| Error::Corrupt("payload shorter than header shape".into()))?;
        pixels.push(Complex64::new(re as f64, im as f64));
    }
    let grid = PixelGrid::new(
        linspace(ax_min, ax_max, rows),
        linspace(lat_min, lat_max, cols),
    )?;
    let pixels = Array2::from_shape_vec((rows, cols), pixels)
        .map_err(|e| Error::Corrupt(format!("payload shape: {e}")))?;
    IQImage::new(pixels, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small_geometry(n: usize) -> ProbeGeometry {
        ProbeGeometry::uniform(n, 0.3e-3, 7.6e6, 31.25e6).unwrap()
    }

    fn random_frame(channels: usize, samples: usize, seed: u64) -> RfFrame {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((channels, samples), |_| rng.random_range(-1.0f32..1.0));
        RfFrame::new(data, small_geometry(channels), AcquisitionParams::default()).unwrap()
    }

    #[test]
    fn rf_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.rfd");
        let frame = random_frame(128, 64, 7);
        save_rf(&frame, &path).unwrap();
        let back = load_rf(&path).unwrap();
        assert_eq!(frame.samples, back.samples);
        assert_eq!(frame.geometry, back.geometry);
        assert_eq!(frame.acq, back.acq);
    }

    #[test]
    fn rf_header_echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.rfd");
        let frame = random_frame(128, 2048, 3);
        save_rf(&frame, &path).unwrap();
        let back = load_rf(&path).unwrap();
        assert_eq!(back.samples.dim(), (128, 2048));
    }

    #[test]
    fn rf_bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rfd");
        std::fs::write(&path, b"XXXX00000000000000000000").unwrap();
        match load_rf(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rf_truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.rfd");
        let frame = random_frame(4, 16, 1);
        save_rf(&frame, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        match load_rf(&path) {
            Err(Error::Corrupt(_)) => {}
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn rf_min_frame_file_size() {
        // Smallest constructible frame: 2 channels x 1 sample.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.rfd");
        let frame = random_frame(2, 1, 9);
        save_rf(&frame, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, RF_HEADER_BYTES + 2 * 4);
    }

    #[test]
    fn zero_channel_frame_rejected() {
        let geom = small_geometry(2);
        let r = RfFrame::new(Array2::zeros((0, 8)), geom, AcquisitionParams::default());
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn non_finite_sample_rejected() {
        let mut data = Array2::zeros((2, 4));
        data[[1, 2]] = f32::NAN;
        let r = RfFrame::new(data, small_geometry(2), AcquisitionParams::default());
        assert!(matches!(r, Err(Error::Corrupt(_))));
    }

    #[test]
    fn default_grid_frame_preset() {
        let geom = ProbeGeometry::default_preset();
        let grid = default_grid(&geom, 5e-3, 40e-3, 368, 128).unwrap();
        assert_eq!(grid.rows(), 368);
        assert_eq!(grid.cols(), 128);
    }

    #[test]
    fn default_grid_two_row_endpoints() {
        let geom = small_geometry(4);
        let grid = default_grid(&geom, 0.01, 0.02, 2, 4).unwrap();
        assert_eq!(grid.axial_positions_m, vec![0.01, 0.02]);
    }

    #[test]
    fn default_grid_single_column_at_center() {
        let geom = small_geometry(8);
        let grid = default_grid(&geom, 0.01, 0.02, 4, 1).unwrap();
        assert_eq!(grid.lateral_positions_m.len(), 1);
        assert!(grid.lateral_positions_m[0].abs() < 1e-15);
    }

    #[test]
    fn default_grid_rejects_zero_dims() {
        let geom = small_geometry(4);
        assert!(default_grid(&geom, 0.01, 0.02, 0, 4).is_err());
        assert!(default_grid(&geom, 0.01, 0.02, 4, 0).is_err());
        assert!(default_grid(&geom, 0.02, 0.01, 4, 4).is_err());
    }

    #[test]
    fn grid_spacing_uniform() {
        let geom = ProbeGeometry::default_preset();
        let grid = default_grid(&geom, 5e-3, 40e-3, 368, 128).unwrap();
        let ax = &grid.axial_positions_m;
        let step = (ax[367] - ax[0]) / 367.0;
        for w in ax.windows(2) {
            assert!(((w[1] - w[0]) - step).abs() <= step * 1e-12 + 1e-18);
        }
        assert!(grid.is_uniform());
    }

    #[test]
    fn normalization_scales_to_unit_max() {
        let geom = small_geometry(2);
        let grid = default_grid(&geom, 0.01, 0.02, 3, 2).unwrap();
        let mut data = ndarray::Array3::zeros((3, 2, 2));
        data[[1, 0, 1]] = -4.0;
        data[[2, 1, 0]] = 2.0;
        let t = TofTensor::new(data, grid, geom).unwrap().normalized();
        let max_abs = t.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max_abs, 1.0);
        assert_eq!(t.data[[1, 0, 1]], -1.0);
        assert_eq!(t.data[[2, 1, 0]], 0.5);
    }

    #[test]
    fn normalization_zero_maps_to_zero() {
        let geom = small_geometry(2);
        let grid = default_grid(&geom, 0.01, 0.02, 3, 2).unwrap();
        let t = TofTensor::new(ndarray::Array3::zeros((3, 2, 2)), grid, geom)
            .unwrap()
            .normalized();
        assert!(t.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iq_roundtrip_bit_exact() {
        use rand::{Rng, SeedableRng};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.iq");
        let geom = small_geometry(8);
        let grid = default_grid(&geom, 0.01, 0.03, 6, 8).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let pixels = Array2::from_shape_fn((6, 8), |_| {
            Complex64::new(
                rng.random_range(-1.0f32..1.0) as f64,
                rng.random_range(-1.0f32..1.0) as f64,
            )
        });
        let img = IQImage::new(pixels, grid).unwrap();
        save_iq(&img, &path).unwrap();
        let back = load_iq(&path).unwrap();
        assert_eq!(img.pixels, back.pixels);
        assert_eq!(img.grid, back.grid);
        // Save again: byte-identical file.
        let path2 = dir.path().join("img2.iq");
        save_iq(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn bmode_range_enforced() {
        let db = ndarray::array![[0.0, -10.0], [-60.0, -5.0]];
        assert!(BModeImage::new(db.clone(), 60.0).is_ok());
        assert!(BModeImage::new(db, 9.0).is_err());
        let bad = ndarray::array![[0.5, -10.0]];
        assert!(BModeImage::new(bad, 60.0).is_err());
    }
}
