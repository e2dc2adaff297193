//! Pipeline configuration: a `key = value` text file with command-line
//! overrides, plus parsers for grids, regions and depth lists.
//!
//! Lengths in files and flags are millimeters; everything is converted to
//! SI units at the parsing boundary.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tinyvbf::data::{default_grid, PixelGrid, ProbeGeometry};
use tinyvbf::error::{Error, Result};
use tinyvbf::metrics::RegionSpec;
use tinyvbf::quant::QuantScheme;

/// Reads a `key = value` file, keeping duplicate keys in order.
/// `#` starts a comment; blank lines are ignored.
pub fn parse_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_f64(key: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{s}'")))
}

pub fn parse_usize(key: &str, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{s}'")))
}

pub fn parse_u64(key: &str, s: &str) -> Result<u64> {
    s.parse::<u64>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{s}'")))
}

/// Comma-separated depths in millimeters.
pub fn parse_depths(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_f64("depths", p.trim()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beamformer {
    Das,
    Mvdr,
    Vbf,
}

impl FromStr for Beamformer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "das" => Ok(Beamformer::Das),
            "mvdr" => Ok(Beamformer::Mvdr),
            "vbf" => Ok(Beamformer::Vbf),
            other => Err(Error::Config(format!(
                "beamformer must be das, mvdr or vbf, got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Beamformer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Beamformer::Das => "das",
            Beamformer::Mvdr => "mvdr",
            Beamformer::Vbf => "vbf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Float,
    Quant(QuantScheme),
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "float" {
            return Ok(Scheme::Float);
        }
        QuantScheme::by_name(s).map(Scheme::Quant).ok_or_else(|| {
            Error::Config(format!(
                "scheme must be float, q24, q20, q16, hybrid1 or hybrid2, got '{s}'"
            ))
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Float => f.write_str("float"),
            Scheme::Quant(q) => f.write_str(q.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Reference,
    AccelSim,
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Engine::Reference),
            "accel-sim" => Ok(Engine::AccelSim),
            other => Err(Error::Config(format!(
                "engine must be reference or accel-sim, got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Reference => "reference",
            Engine::AccelSim => "accel-sim",
        })
    }
}

/// Imaging grid described in millimeters; `default` is the shipped
/// 368 x 128 grid over 5-40 mm depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            depth_min_mm: 5.0,
            depth_max_mm: 40.0,
            rows: 368,
            cols: 128,
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "default" {
            return Ok(GridSpec::default());
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!(
                "grid must be 'default' or 'zmin_mm,zmax_mm,rows,cols', got '{s}'"
            )));
        }
        Ok(GridSpec {
            depth_min_mm: parse_f64("grid zmin", parts[0])?,
            depth_max_mm: parse_f64("grid zmax", parts[1])?,
            rows: parse_usize("grid rows", parts[2])?,
            cols: parse_usize("grid cols", parts[3])?,
        })
    }
}

impl GridSpec {
    pub fn to_grid(self, geometry: &ProbeGeometry) -> Result<PixelGrid> {
        default_grid(
            geometry,
            self.depth_min_mm * 1e-3,
            self.depth_max_mm * 1e-3,
            self.rows,
            self.cols,
        )
    }
}

/// One full pipeline invocation: input, grid, beamformer and display
/// settings, resolved from defaults, an optional config file, then flags.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub beamformer: Beamformer,
    pub scheme: Scheme,
    pub engine: Engine,
    pub weights: Option<PathBuf>,
    pub grid: GridSpec,
    pub regions: Option<PathBuf>,
    pub depths_mm: Vec<f64>,
    pub seed: u64,
    pub dynamic_range_db: f64,
    pub image_format: ImageFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl FromStr for ImageFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(ImageFormat::Pgm),
            "png" => Ok(ImageFormat::Png),
            other => Err(Error::Config(format!(
                "image-format must be pgm or png, got '{other}'"
            ))),
        }
    }
}

impl ImageFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("."),
            beamformer: Beamformer::Das,
            scheme: Scheme::Float,
            engine: Engine::Reference,
            weights: None,
            grid: GridSpec::default(),
            regions: None,
            depths_mm: Vec::new(),
            seed: 0,
            dynamic_range_db: 60.0,
            image_format: ImageFormat::Pgm,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub beamformer: Option<String>,
    pub scheme: Option<String>,
    pub engine: Option<String>,
    pub weights: Option<PathBuf>,
    pub grid: Option<String>,
    pub regions: Option<PathBuf>,
    pub depths: Option<String>,
    pub seed: Option<u64>,
    pub dynamic_range: Option<f64>,
    pub image_format: Option<String>,
}

impl PipelineConfig {
    /// Resolves a configuration: defaults, then `file`, then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = file {
            for (key, value) in parse_kv(path)? {
                cfg.apply(&key, &value)?;
            }
        }
        let ov = overrides;
        if let Some(v) = &ov.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &ov.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &ov.beamformer {
            cfg.beamformer = v.parse()?;
        }
        if let Some(v) = &ov.scheme {
            cfg.scheme = v.parse()?;
        }
        if let Some(v) = &ov.engine {
            cfg.engine = v.parse()?;
        }
        if let Some(v) = &ov.weights {
            cfg.weights = Some(v.clone());
        }
        if let Some(v) = &ov.grid {
            cfg.grid = v.parse()?;
        }
        if let Some(v) = &ov.regions {
            cfg.regions = Some(v.clone());
        }
        if let Some(v) = &ov.depths {
            cfg.depths_mm = parse_depths(v)?;
        }
        if let Some(v) = ov.seed {
            cfg.seed = v;
        }
        if let Some(v) = ov.dynamic_range {
            cfg.dynamic_range_db = v;
        }
        if let Some(v) = &ov.image_format {
            cfg.image_format = v.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "output-dir" => self.output_dir = PathBuf::from(value),
            "beamformer" => self.beamformer = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "engine" => self.engine = value.parse()?,
            "weights" => self.weights = Some(PathBuf::from(value)),
            "grid" => self.grid = value.parse()?,
            "regions" => self.regions = Some(PathBuf::from(value)),
            "depths" => self.depths_mm = parse_depths(value)?,
            "seed" => self.seed = parse_u64("seed", value)?,
            "dynamic-range" => self.dynamic_range_db = parse_f64("dynamic-range", value)?,
            "image-format" => self.image_format = value.parse()?,
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Cross-field checks shared by every pipeline command.
    pub fn validate(&self) -> Result<()> {
        if self.beamformer == Beamformer::Vbf && self.weights.is_none() {
            return Err(Error::Config(
                "beamformer vbf requires a weights file".into(),
            ));
        }
        if self.beamformer != Beamformer::Vbf && self.scheme != Scheme::Float {
            return Err(Error::Config(format!(
                "scheme {} only applies to the vbf beamformer",
                self.scheme
            )));
        }
        if self.scheme == Scheme::Float && self.engine == Engine::AccelSim {
            return Err(Error::Config(
                "engine accel-sim requires a quantized scheme (the accelerator is fixed-point)"
                    .into(),
            ));
        }
        if !(self.dynamic_range_db.is_finite() && self.dynamic_range_db > 0.0) {
            return Err(Error::Config(format!(
                "dynamic-range must be positive, got {}",
                self.dynamic_range_db
            )));
        }
        Ok(())
    }

    /// The input path, required by every command that reads RF data.
    pub fn input_path(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| {
            Error::Config("no input file given (flag --input or key 'input')".into())
        })
    }

    /// Stem used for output files: `<beamformer>_<scheme>_<engine>`.
    pub fn output_stem(&self) -> String {
        format!("{}_{}_{}", self.beamformer, self.scheme, self.engine)
    }
}

/// Measurement regions: an `inside` and an `outside` entry.
#[derive(Debug, Clone, Copy)]
pub struct Regions {
    pub inside: RegionSpec,
    pub outside: RegionSpec,
}

fn parse_region(key: &str, value: &str) -> Result<RegionSpec> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["disk", z, x, r] => Ok(RegionSpec::Disk {
            center_axial_m: parse_f64(key, z)? * 1e-3,
            center_lateral_m: parse_f64(key, x)? * 1e-3,
            radius_m: parse_f64(key, r)? * 1e-3,
        }),
        ["rect", z0, z1, x0, x1] => Ok(RegionSpec::Rect {
            axial_min_m: parse_f64(key, z0)? * 1e-3,
            axial_max_m: parse_f64(key, z1)? * 1e-3,
            lateral_min_m: parse_f64(key, x0)? * 1e-3,
            lateral_max_m: parse_f64(key, x1)? * 1e-3,
        }),
        _ => Err(Error::Config(format!(
            "{key}: expected 'disk z_mm x_mm r_mm' or 'rect zmin_mm zmax_mm xmin_mm xmax_mm', got '{value}'"
        ))),
    }
}

/// Parses a regions file with `inside = ...` and `outside = ...` entries.
pub fn load_regions(path: &Path) -> Result<Regions> {
    let mut inside = None;
    let mut outside = None;
    for (key, value) in parse_kv(path)? {
        match key.as_str() {
            "inside" => inside = Some(parse_region("inside", &value)?),
            "outside" => outside = Some(parse_region("outside", &value)?),
            other => {
                return Err(Error::Config(format!(
                    "{}: unknown region key '{other}'",
                    path.display()
                )))
            }
        }
    }
    match (inside, outside) {
        (Some(inside), Some(outside)) => Ok(Regions { inside, outside }),
        _ => Err(Error::Config(format!(
            "{}: regions file needs both 'inside' and 'outside'",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn kv_parser_handles_comments_and_duplicates() {
        let f = write_temp("# header\na = 1\n\nb = two # trailing\na = 3\n");
        let kv = parse_kv(f.path()).unwrap();
        assert_eq!(
            kv,
            vec![
                ("a".into(), "1".into()),
                ("b".into(), "two".into()),
                ("a".into(), "3".into())
            ]
        );
    }

    #[test]
    fn kv_parser_rejects_bare_lines() {
        let f = write_temp("not a pair\n");
        assert!(matches!(parse_kv(f.path()), Err(Error::Config(_))));
    }

    #[test]
    fn config_file_plus_overrides() {
        let f = write_temp(
            "input = frame.rfd1\nbeamformer = mvdr\nseed = 9\ndynamic-range = 50\ngrid = 10,20,41,33\n",
        );
        let ov = Overrides {
            beamformer: Some("das".into()),
            ..Default::default()
        };
        let cfg = PipelineConfig::load(Some(f.path()), &ov).unwrap();
        assert_eq!(cfg.beamformer, Beamformer::Das); // flag wins
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dynamic_range_db, 50.0);
        assert_eq!(
            cfg.grid,
            GridSpec {
                depth_min_mm: 10.0,
                depth_max_mm: 20.0,
                rows: 41,
                cols: 33
            }
        );
        assert_eq!(cfg.input.as_deref(), Some(Path::new("frame.rfd1")));
    }

    #[test]
    fn vbf_without_weights_is_config_error() {
        let ov = Overrides {
            beamformer: Some("vbf".into()),
            ..Default::default()
        };
        assert!(matches!(
            PipelineConfig::load(None, &ov),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn float_scheme_rejects_accel_sim() {
        let ov = Overrides {
            beamformer: Some("vbf".into()),
            weights: Some(PathBuf::from("w.tvbf")),
            engine: Some("accel-sim".into()),
            ..Default::default()
        };
        assert!(matches!(
            PipelineConfig::load(None, &ov),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scheme_on_das_is_config_error() {
        let ov = Overrides {
            beamformer: Some("das".into()),
            scheme: Some("q24".into()),
            ..Default::default()
        };
        assert!(matches!(
            PipelineConfig::load(None, &ov),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_key_is_config_error() {
        let f = write_temp("bogus = 1\n");
        assert!(matches!(
            PipelineConfig::load(Some(f.path()), &Overrides::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn regions_file_round_trip() {
        let f = write_temp("inside = disk 20 0 3\noutside = rect 15 25 4 8\n");
        let r = load_regions(f.path()).unwrap();
        assert_eq!(
            r.inside,
            RegionSpec::Disk {
                center_axial_m: 0.02,
                center_lateral_m: 0.0,
                radius_m: 3e-3
            }
        );
        assert_eq!(
            r.outside,
            RegionSpec::Rect {
                axial_min_m: 0.015,
                axial_max_m: 0.025,
                lateral_min_m: 4e-3,
                lateral_max_m: 8e-3
            }
        );
    }

    #[test]
    fn regions_file_requires_both_entries() {
        let f = write_temp("inside = disk 20 0 3\n");
        assert!(matches!(load_regions(f.path()), Err(Error::Config(_))));
    }

    #[test]
    fn scheme_and_engine_parsing() {
        assert_eq!("float".parse::<Scheme>().unwrap(), Scheme::Float);
        assert!(matches!("q24".parse::<Scheme>().unwrap(), Scheme::Quant(q) if q.name == "q24"));
        assert!(matches!(
            "hybrid2".parse::<Scheme>().unwrap(),
            Scheme::Quant(q) if q.name == "hybrid2"
        ));
        assert!("qq".parse::<Scheme>().is_err());
        assert_eq!("accel-sim".parse::<Engine>().unwrap(), Engine::AccelSim);
        assert!("accel".parse::<Engine>().is_err());
    }

    #[test]
    fn depths_parse() {
        assert_eq!(parse_depths("20, 25.5").unwrap(), vec![20.0, 25.5]);
        assert!(parse_depths("20,x").is_err());
    }
}
