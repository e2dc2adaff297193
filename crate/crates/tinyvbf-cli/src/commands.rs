//! Implementations of the CLI subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tinyvbf::accel::{simulate_model, CycleReport};
use tinyvbf::beamform::{analytic_image, das, mvdr, MvdrConfig};
use tinyvbf::data::{load_iq, load_rf, save_iq, save_rf, IQImage};
use tinyvbf::error::{Error, Result};
use tinyvbf::metrics::{cnr, cr, fwhm, gcnr, lateral_profile};
use tinyvbf::model::{
    load_weights, param_count, random_weights, save_weights, vbf_forward, ModelConfig,
};
use tinyvbf::phantom::{point_phantom, speckle_scatterers};
use tinyvbf::postproc::{bmode, envelope, write_image, DisplayParams};
use tinyvbf::quant::{qforward, QuantizedModel};
use tinyvbf::tof::tof_correct;

use crate::config::{
    load_regions, parse_depths, Beamformer, Engine, PipelineConfig, Regions, Scheme,
};
use crate::spec::load_phantom_spec;

/// Writes `report` to stdout and, when given, to `path`.
fn emit_report(report: &str, path: Option<&Path>) -> Result<()> {
    print!("{report}");
    if let Some(p) = path {
        std::fs::write(p, report)?;
    }
    Ok(())
}

/// `synth`: phantom spec file -> RFD1 frame.
///
/// Speckle placement draws from `seed`; the noise stream from `seed + 1`,
/// so adding noise never moves scatterers.
pub fn run_synth(spec_path: &Path, output: &Path, seed_override: Option<u64>) -> Result<()> {
    let spec = load_phantom_spec(spec_path)?;
    let seed = seed_override.unwrap_or(spec.seed);
    let mut scatterers = spec.scatterers.clone();
    if let Some(block) = &spec.cyst {
        scatterers.extend(speckle_scatterers(
            block.scatterer_count,
            block.axial_range_m,
            block.lateral_range_m,
            Some(block.cyst),
            seed,
        )?);
    }
    let frame = point_phantom(
        &scatterers,
        &spec.geometry,
        &spec.acq,
        spec.samples,
        spec.noise_std,
        seed.wrapping_add(1),
    )?;
    save_rf(&frame, output)?;
    println!(
        "wrote {} ({} channels x {} samples, {} scatterers)",
        output.display(),
        frame.channel_count(),
        frame.sample_count(),
        scatterers.len()
    );
    Ok(())
}

/// One beamforming pass resolved to an in-memory image.
pub struct PipelineOutput {
    pub image: IQImage,
    pub report: Option<CycleReport>,
}

/// Runs input -> ToF correction -> beamformer for `cfg`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let frame = load_rf(cfg.input_path()?)?;
    let grid = cfg.grid.to_grid(&frame.geometry)?;
    let tensor = tof_correct(&frame, &grid)?;
    match cfg.beamformer {
        Beamformer::Das => {
            let image = das(&tensor, None)?;
            Ok(PipelineOutput {
                image: analytic_image(&image, &grid)?,
                report: None,
            })
        }
        Beamformer::Mvdr => Ok(PipelineOutput {
            image: mvdr(&tensor, &MvdrConfig::default())?,
            report: None,
        }),
        Beamformer::Vbf => {
            let weights_path = cfg
                .weights
                .as_deref()
                .ok_or_else(|| Error::Config("beamformer vbf requires a weights file".into()))?;
            let weights = load_weights(weights_path)?;
            // The fixed-point input interface expects unit-scale data.
            let tensor = tensor.normalized();
            match (cfg.scheme, cfg.engine) {
                (Scheme::Float, Engine::Reference) => Ok(PipelineOutput {
                    image: vbf_forward(&weights, &tensor)?,
                    report: None,
                }),
                (Scheme::Quant(q), Engine::Reference) => {
                    let model = QuantizedModel::from_float(&weights, q)?;
                    let (image, _codes) = qforward(&model, &tensor)?;
                    Ok(PipelineOutput {
                        image,
                        report: None,
                    })
                }
                (Scheme::Quant(q), Engine::AccelSim) => {
                    let model = QuantizedModel::from_float(&weights, q)?;
                    let sim = simulate_model(&model, &tensor)?;
                    Ok(PipelineOutput {
                        image: sim.image,
                        report: Some(sim.report),
                    })
                }
                (Scheme::Float, Engine::AccelSim) => Err(Error::Config(
                    "engine accel-sim requires a quantized scheme".into(),
                )),
            }
        }
    }
}

/// `beamform`: config -> IQF1 dump + B-mode image on disk.
pub fn run_beamform(cfg: &PipelineConfig) -> Result<()> {
    let out = run_pipeline(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let stem = cfg.output_stem();
    let iq_path = cfg.output_dir.join(format!("{stem}.iqf1"));
    save_iq(&out.image, &iq_path)?;
    let bm = bmode(
        &out.image,
        &DisplayParams {
            dynamic_range_db: cfg.dynamic_range_db,
        },
    )?;
    let img_path = cfg
        .output_dir
        .join(format!("{stem}.{}", cfg.image_format.extension()));
    write_image(&bm, &img_path)?;
    println!("wrote {}", iq_path.display());
    println!("wrote {}", img_path.display());
    Ok(())
}

fn metric_block(image: &IQImage, regions: Option<&Regions>, depths_mm: &[f64]) -> Result<String> {
    let env = envelope(image);
    let mut s = String::new();
    if let Some(r) = regions {
        let cr_v = cr(&env, &image.grid, &r.inside, &r.outside)?;
        let cnr_v = cnr(&env, &image.grid, &r.inside, &r.outside)?;
        let gcnr_v = gcnr(&env, &image.grid, &r.inside, &r.outside)?;
        writeln!(s, "cr_db = {cr_v:.6}").unwrap();
        writeln!(s, "cnr = {:.6}", cnr_v.value).unwrap();
        writeln!(s, "cnr_capped = {}", cnr_v.capped).unwrap();
        writeln!(s, "gcnr = {gcnr_v:.6}").unwrap();
    }
    for &d in depths_mm {
        let profile = lateral_profile(&env, &image.grid, d * 1e-3)?;
        let width_m = fwhm(&profile.positions_m, &profile.amplitudes)?;
        writeln!(s, "fwhm_mm@{d:.3} = {:.6}", width_m * 1e3).unwrap();
    }
    Ok(s)
}

/// `metrics`: IQF1 inputs + regions/depths -> deterministic report.
pub fn run_metrics(
    inputs: &[PathBuf],
    regions_path: Option<&Path>,
    depths: Option<&str>,
    output: Option<&Path>,
) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("metrics needs at least one --input".into()));
    }
    let regions = regions_path.map(load_regions).transpose()?;
    let depths_mm = depths.map(parse_depths).transpose()?.unwrap_or_default();
    if regions.is_none() && depths_mm.is_empty() {
        return Err(Error::Config(
            "metrics needs --regions and/or --depths to know what to measure".into(),
        ));
    }
    let mut report = String::from("# tinyvbf metrics report\n");
    for input in inputs {
        let image = load_iq(input)?;
        writeln!(report, "input = {}", input.display()).unwrap();
        report.push_str(&metric_block(&image, regions.as_ref(), &depths_mm)?);
    }
    emit_report(&report, output)
}

/// `compare`: >= 2 pipeline configs sharing input and grid; the first is
/// the baseline. Emits per-config max-abs/RMS IQ error and, when the
/// baseline config names regions, contrast-metric deltas.
pub fn run_compare(config_paths: &[PathBuf], output: Option<&Path>) -> Result<()> {
    if config_paths.len() < 2 {
        return Err(Error::Config(
            "compare needs at least two --config files".into(),
        ));
    }
    let configs: Vec<PipelineConfig> = config_paths
        .iter()
        .map(|p| PipelineConfig::load(Some(p), &Default::default()))
        .collect::<Result<_>>()?;
    let base = &configs[0];
    for (i, c) in configs.iter().enumerate().skip(1) {
        if c.input != base.input {
            return Err(Error::Config(format!(
                "config {} input {:?} differs from baseline {:?}",
                config_paths[i].display(),
                c.input,
                base.input
            )));
        }
        if c.grid != base.grid {
            return Err(Error::Config(format!(
                "config {} grid differs from baseline",
                config_paths[i].display()
            )));
        }
    }

    let regions = base.regions.as_deref().map(load_regions).transpose()?;
    let outputs: Vec<IQImage> = configs
        .iter()
        .map(|c| run_pipeline(c).map(|o| o.image))
        .collect::<Result<_>>()?;

    let mut report = String::from("# tinyvbf compare report\n");
    writeln!(report, "baseline = {}", base.output_stem()).unwrap();
    writeln!(report, "input = {}", base.input_path()?.display()).unwrap();
    let metric_cols = if regions.is_some() {
        " cr_delta_db cnr_delta gcnr_delta"
    } else {
        ""
    };
    writeln!(
        report,
        "columns = index label max_abs_err rms_err{metric_cols}"
    )
    .unwrap();

    let base_metrics = regions
        .as_ref()
        .map(|r| -> Result<(f64, f64, f64)> {
            let env = envelope(&outputs[0]);
            Ok((
                cr(&env, &outputs[0].grid, &r.inside, &r.outside)?,
                cnr(&env, &outputs[0].grid, &r.inside, &r.outside)?.value,
                gcnr(&env, &outputs[0].grid, &r.inside, &r.outside)?,
            ))
        })
        .transpose()?;

    for (i, (cfg, img)) in configs.iter().zip(&outputs).enumerate() {
        if img.pixels.dim() != outputs[0].pixels.dim() {
            return Err(Error::Config(format!(
                "output shape {:?} of config {} differs from baseline {:?}",
                img.pixels.dim(),
                config_paths[i].display(),
                outputs[0].pixels.dim()
            )));
        }
        let mut max_abs = 0.0f64;
        let mut sum_sq = 0.0f64;
        for (a, b) in outputs[0].pixels.iter().zip(img.pixels.iter()) {
            let d = (*a - *b).norm();
            max_abs = max_abs.max(d);
            sum_sq += d * d;
        }
        let rms = (sum_sq / img.pixels.len() as f64).sqrt();
        write!(report, "{i} {} {max_abs:.6e} {rms:.6e}", cfg.output_stem()).unwrap();
        if let (Some(r), Some((cr0, cnr0, gcnr0))) = (regions.as_ref(), base_metrics) {
            let env = envelope(img);
            let cr_v = cr(&env, &img.grid, &r.inside, &r.outside)?;
            let cnr_v = cnr(&env, &img.grid, &r.inside, &r.outside)?.value;
            let gcnr_v = gcnr(&env, &img.grid, &r.inside, &r.outside)?;
            write!(
                report,
                " {:+.6} {:+.6} {:+.6}",
                cr_v - cr0,
                cnr_v - cnr0,
                gcnr_v - gcnr0
            )
            .unwrap();
        }
        report.push('\n');
    }
    emit_report(&report, output)
}

/// `cycles`: runs the accelerator simulation and prints its cycle report.
pub fn run_cycles(cfg: &PipelineConfig, output: Option<&Path>) -> Result<()> {
    if cfg.beamformer != Beamformer::Vbf {
        return Err(Error::Config("cycles requires beamformer = vbf".into()));
    }
    if cfg.scheme == Scheme::Float {
        return Err(Error::Config(
            "cycles requires a quantized scheme (the accelerator is fixed-point)".into(),
        ));
    }
    let mut sim_cfg = cfg.clone();
    sim_cfg.engine = Engine::AccelSim;
    let out = run_pipeline(&sim_cfg)?;
    let r = out
        .report
        .expect("accel-sim always produces a cycle report");
    let mut report = String::from("# tinyvbf cycle report\n");
    writeln!(report, "scheme = {}", cfg.scheme).unwrap();
    writeln!(report, "lateral_lines = {}", cfg.grid.cols).unwrap();
    writeln!(report, "matmul_cycles = {}", r.matmul_cycles).unwrap();
    writeln!(report, "softmax_cycles = {}", r.softmax_cycles).unwrap();
    writeln!(report, "layernorm_cycles = {}", r.layernorm_cycles).unwrap();
    writeln!(report, "elementwise_cycles = {}", r.elementwise_cycles).unwrap();
    writeln!(report, "total_cycles = {}", r.total_cycles()).unwrap();
    writeln!(report, "mac_ops = {}", r.mac_ops).unwrap();
    writeln!(report, "utilization = {:.6}", r.utilization()).unwrap();
    emit_report(&report, output)
}

/// Model shape flags for `gen-weights`; defaults are the shipped config.
pub struct GenWeightsArgs {
    pub output: PathBuf,
    pub seed: u64,
    pub channels: Option<usize>,
    pub patch_rows: Option<usize>,
    pub patches: Option<usize>,
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_width: Option<usize>,
    pub decoder_widths: Option<String>,
    pub output_per_pixel: Option<usize>,
}

/// `gen-weights`: random seeded weights -> TVBF file.
pub fn run_gen_weights(args: &GenWeightsArgs) -> Result<()> {
    let mut cfg = ModelConfig::default_config();
    if let Some(v) = args.channels {
        cfg.input_channels = v;
    }
    if let Some(v) = args.patch_rows {
        cfg.patch_rows = v;
    }
    if let Some(v) = args.patches {
        cfg.patches = v;
    }
    if let Some(v) = args.d_model {
        cfg.d_model = v;
    }
    if let Some(v) = args.heads {
        cfg.heads = v;
    }
    if let Some(v) = args.mlp_width {
        cfg.mlp_width = v;
    }
    if let Some(s) = &args.decoder_widths {
        cfg.decoder_widths = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("decoder-widths: expected integers, got '{s}'"))
                })
            })
            .collect::<Result<_>>()?;
    }
    if let Some(v) = args.output_per_pixel {
        cfg.output_per_pixel = v;
    }
    let weights = random_weights(&cfg, args.seed)?;
    save_weights(&weights, &args.output)?;
    println!(
        "wrote {} ({} parameters)",
        args.output.display(),
        param_count(&cfg)
    );
    Ok(())
}
