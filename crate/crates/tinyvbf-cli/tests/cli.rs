//! End-to-end tests of the `tinyvbf` binary: exit codes, file outputs,
//! determinism, and report formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;
use tinyvbf::data::load_rf;
use tinyvbf::model::load_weights;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tinyvbf"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn assert_exit(args: &[&str], code: i32) {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "command {:?}: expected exit {code}, got {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small 8-channel point-scatterer spec shared by the pipeline tests.
fn write_point_spec(dir: &Path) -> PathBuf {
    let path = dir.join("point.spec");
    fs::write(
        &path,
        "geometry = uniform 8 0.3 7.6 31.25\n\
         c = 1540\n\
         angle-deg = 0\n\
         t0-us = 0\n\
         samples = 1024\n\
         noise = 0\n\
         seed = 3\n\
         scatterer = 18 0 1\n",
    )
    .unwrap();
    path
}

fn synth_frame(dir: &Path) -> PathBuf {
    let spec = write_point_spec(dir);
    let frame = dir.join("point.rfd1");
    run_ok(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--output",
        frame.to_str().unwrap(),
    ]);
    frame
}

#[test]
fn help_and_version_exit_zero() {
    assert_exit(&["--help"], 0);
    assert_exit(&["--version"], 0);
    assert_exit(&["beamform", "--help"], 0);
}

#[test]
fn usage_errors_exit_four() {
    // No subcommand, unknown flag, unknown subcommand.
    assert_exit(&[], 4);
    assert_exit(&["beamform", "--no-such-flag"], 4);
    assert_exit(&["frobnicate"], 4);
}

#[test]
fn config_validation_errors_exit_four() {
    let dir = tempdir().unwrap();
    let frame = synth_frame(dir.path());
    let frame = frame.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    // vbf without weights.
    assert_exit(
        &[
            "beamform",
            "--input",
            frame,
            "--output-dir",
            out_dir,
            "--beamformer",
            "vbf",
        ],
        4,
    );
    // The float scheme cannot run on the fixed-point accelerator.
    assert_exit(
        &[
            "beamform",
            "--input",
            frame,
            "--output-dir",
            out_dir,
            "--beamformer",
            "das",
            "--scheme",
            "float",
            "--engine",
            "accel-sim",
        ],
        4,
    );
    // Quantized schemes only apply to the vbf beamformer.
    assert_exit(
        &[
            "beamform",
            "--input",
            frame,
            "--output-dir",
            out_dir,
            "--beamformer",
            "das",
            "--scheme",
            "q24",
        ],
        4,
    );
    // Malformed grid string.
    assert_exit(
        &[
            "beamform",
            "--input",
            frame,
            "--output-dir",
            out_dir,
            "--grid",
            "1,2,3",
        ],
        4,
    );
    // No input anywhere (flags or config file).
    assert_exit(&["beamform", "--output-dir", out_dir], 4);
}

#[test]
fn file_errors_exit_two() {
    let dir = tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let missing = dir.path().join("missing.rfd1");
    assert_exit(
        &[
            "beamform",
            "--input",
            missing.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ],
        2,
    );

    let garbage = dir.path().join("garbage.rfd1");
    fs::write(&garbage, b"this is not a frame").unwrap();
    assert_exit(
        &[
            "beamform",
            "--input",
            garbage.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ],
        2,
    );
}

#[test]
fn synth_without_scatterers_or_noise_is_all_zero() {
    let dir = tempdir().unwrap();
    let spec = dir.path().join("empty.spec");
    fs::write(
        &spec,
        "geometry = uniform 4 0.3 7.6 31.25\nsamples = 64\nnoise = 0\nseed = 1\n",
    )
    .unwrap();
    let frame = dir.path().join("empty.rfd1");
    run_ok(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--output",
        frame.to_str().unwrap(),
    ]);
    let loaded = load_rf(&frame).unwrap();
    assert_eq!(loaded.samples.dim(), (4, 64));
    assert!(loaded.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn synth_seed_flag_controls_noise_stream() {
    let dir = tempdir().unwrap();
    let spec = dir.path().join("noisy.spec");
    fs::write(
        &spec,
        "geometry = uniform 4 0.3 7.6 31.25\nsamples = 64\nnoise = 0.1\nseed = 1\n",
    )
    .unwrap();
    let spec = spec.to_str().unwrap();
    let a = dir.path().join("a.rfd1");
    let b = dir.path().join("b.rfd1");
    let c = dir.path().join("c.rfd1");
    run_ok(&[
        "synth",
        "--spec",
        spec,
        "--output",
        a.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    run_ok(&[
        "synth",
        "--spec",
        spec,
        "--output",
        b.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    run_ok(&[
        "synth",
        "--spec",
        spec,
        "--output",
        c.to_str().unwrap(),
        "--seed",
        "8",
    ]);
    let (a, b, c) = (
        fs::read(a).unwrap(),
        fs::read(b).unwrap(),
        fs::read(c).unwrap(),
    );
    assert_eq!(a, b, "same seed must give byte-identical frames");
    assert_ne!(a, c, "different seeds must give different noise");
}

#[test]
fn beamform_writes_iq_dump_and_image() {
    let dir = tempdir().unwrap();
    let frame = synth_frame(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&[
        "beamform",
        "--input",
        frame.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--beamformer",
        "das",
        "--grid",
        "16,20,24,21",
    ]);
    assert!(out_dir.join("das_float_reference.iqf1").is_file());
    assert!(out_dir.join("das_float_reference.pgm").is_file());
    let pgm = fs::read(out_dir.join("das_float_reference.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"), "binary PGM magic");
}

#[test]
fn beamform_png_format_writes_png() {
    let dir = tempdir().unwrap();
    let frame = synth_frame(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&[
        "beamform",
        "--input",
        frame.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--grid",
        "16,20,12,9",
        "--image-format",
        "png",
    ]);
    let png = fs::read(out_dir.join("das_float_reference.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn flags_override_config_file() {
    let dir = tempdir().unwrap();
    let frame = synth_frame(dir.path());
    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("pipeline.cfg");
    fs::write(
        &cfg,
        format!(
            "input = {}\noutput-dir = {}\nbeamformer = das\ngrid = 16,20,12,9\n",
            frame.display(),
            out_dir.display()
        ),
    )
    .unwrap();
    run_ok(&[
        "beamform",
        "--config",
        cfg.to_str().unwrap(),
        "--beamformer",
        "mvdr",
    ]);
    assert!(
        out_dir.join("mvdr_float_reference.iqf1").is_file(),
        "the --beamformer flag must override the config key"
    );
    assert!(!out_dir.join("das_float_reference.iqf1").exists());
}

#[test]
fn metrics_reports_are_deterministic_and_in_range() {
    let dir = tempdir().unwrap();
    // A 32-element aperture keeps the point-spread function narrower than
    // the imaged lateral span, so the half-maximum crossings are bracketed.
    let spec = dir.path().join("wide.spec");
    fs::write(
        &spec,
        "geometry = uniform 32 0.3 7.6 31.25\n\
         samples = 1024\nnoise = 0\nseed = 3\nscatterer = 18 0 1\n",
    )
    .unwrap();
    let frame = dir.path().join("wide.rfd1");
    run_ok(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--output",
        frame.to_str().unwrap(),
    ]);
    let out_dir = dir.path().join("out");
    run_ok(&[
        "beamform",
        "--input",
        frame.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--grid",
        "16,20,24,41",
    ]);
    let iq = out_dir.join("das_float_reference.iqf1");
    let iq2 = out_dir.join("copy.iqf1");
    fs::copy(&iq, &iq2).unwrap();

    let regions = dir.path().join("regions.txt");
    fs::write(
        &regions,
        "inside = disk 18 0 0.8\noutside = rect 16.2 17.2 -2 2\n",
    )
    .unwrap();
    let report_path = dir.path().join("metrics.txt");
    let out = run_ok(&[
        "metrics",
        "--input",
        iq.to_str().unwrap(),
        "--input",
        iq2.to_str().unwrap(),
        "--regions",
        regions.to_str().unwrap(),
        "--depths",
        "18",
        "--output",
        report_path.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let report = fs::read_to_string(&report_path).unwrap();
    assert_eq!(
        stdout, report,
        "stdout and --output must carry the same report"
    );

    // The two inputs are byte-identical, so their metric blocks must match.
    let blocks: Vec<&str> = report.split("input = ").collect();
    assert_eq!(blocks.len(), 3);
    let strip = |b: &'static str, block: &str| -> String {
        block.lines().skip(1).collect::<Vec<_>>().join("\n") + b
    };
    assert_eq!(strip("", blocks[1]), strip("", blocks[2].trim_end()));

    let grab = |key: &str| -> f64 {
        report
            .lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("report missing {key}"))
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    let gcnr = grab("gcnr");
    assert!((0.0..=1.0).contains(&gcnr), "gcnr {gcnr} outside [0, 1]");
    let fwhm = grab("fwhm_mm@18.000");
    assert!(fwhm > 0.0 && fwhm < 4.0, "implausible point FWHM {fwhm} mm");
    assert!(grab("cr_db") >= 0.0);
}

#[test]
fn metrics_without_regions_or_depths_exits_four() {
    let dir = tempdir().unwrap();
    let frame = synth_frame(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(&[
        "beamform",
        "--input",
        frame.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--grid",
        "16,20,12,9",
    ]);
    let iq = out_dir.join("das_float_reference.iqf1");
    assert_exit(&["metrics", "--input", iq.to_str().unwrap()], 4);

    // A regions file without an 'outside' entry is a config error too.
    let broken = dir.path().join("broken.txt");
    fs::write(&broken, "inside = disk 18 0 0.8\n").unwrap();
    assert_exit(
        &[
            "metrics",
            "--input",
            iq.to_str().unwrap(),
            "--regions",
            broken.to_str().unwrap(),
        ],
        4,
    );
}

#[test]
fn compare_identical_configs_reports_zero_error() {
    let dir = tempdir().unwrap();
    let frame = synth_frame(dir.path());
    let mut cfg_paths = Vec::new();
    for name in ["a.cfg", "b.cfg"] {
        let p = dir.path().join(name);
        fs::write(
            &p,
            format!(
                "input = {}\noutput-dir = {}\nbeamformer = das\ngrid = 16,20,12,9\n",
                frame.display(),
                dir.path().join("out").display()
            ),
        )
        .unwrap();
        cfg_paths.push(p);
    }
    let out = run_ok(&[
        "compare",
        "--config",
        cfg_paths[0].to_str().unwrap(),
        "--config",
        cfg_paths[1].to_str().unwrap(),
    ]);
    let report = String::from_utf8(out.stdout).unwrap();
    let row = report
        .lines()
        .find(|l| l.starts_with("1 "))
        .expect("report should list the second config");
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields[1], "das_float_reference");
    assert_eq!(fields[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(fields[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn compare_rejects_mismatched_inputs() {
    let dir = tempdir().unwrap();
    let frame_a = synth_frame(dir.path());
    let spec = write_point_spec(dir.path());
    let frame_b = dir.path().join("other.rfd1");
    run_ok(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--output",
        frame_b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    let mk = |name: &str, input: &Path| -> PathBuf {
        let p = dir.path().join(name);
        fs::write(
            &p,
            format!(
                "input = {}\noutput-dir = {}\ngrid = 16,20,12,9\n",
                input.display(),
                dir.path().join("out").display()
            ),
        )
        .unwrap();
        p
    };
    let a = mk("a.cfg", &frame_a);
    let b = mk("b.cfg", &frame_b);
    assert_exit(
        &[
            "compare",
            "--config",
            a.to_str().unwrap(),
            "--config",
            b.to_str().unwrap(),
        ],
        4,
    );
}

/// Small model + frame for the vbf-based commands.
fn vbf_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let frame = synth_frame(dir);
    let weights = dir.join("model.tvbf");
    run_ok(&[
        "gen-weights",
        "--output",
        weights.to_str().unwrap(),
        "--seed",
        "11",
        "--channels",
        "8",
        "--patch-rows",
        "6",
        "--patches",
        "2",
        "--d-model",
        "8",
        "--heads",
        "2",
        "--mlp-width",
        "12",
        "--decoder-widths",
        "12",
    ]);
    (frame, weights)
}

#[test]
fn cycles_report_is_consistent() {
    let dir = tempdir().unwrap();
    let (frame, weights) = vbf_fixture(dir.path());
    let out = run_ok(&[
        "cycles",
        "--input",
        frame.to_str().unwrap(),
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
        "--beamformer",
        "vbf",
        "--scheme",
        "q24",
        "--weights",
        weights.to_str().unwrap(),
        "--grid",
        "16,20,12,9",
    ]);
    let report = String::from_utf8(out.stdout).unwrap();
    let grab = |key: &str| -> f64 {
        report
            .lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("report missing {key}\n{report}"))
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    let parts = grab("matmul_cycles")
        + grab("softmax_cycles")
        + grab("layernorm_cycles")
        + grab("elementwise_cycles");
    assert_eq!(
        grab("total_cycles"),
        parts,
        "total must be the sum of the stage cycles"
    );
    let util = grab("utilization");
    assert!(
        util > 0.0 && util <= 1.0,
        "utilization {util} outside (0, 1]"
    );
    assert!(grab("mac_ops") > 0.0);

    // cycles refuses float scheme and non-vbf beamformers.
    assert_exit(
        &[
            "cycles",
            "--input",
            frame.to_str().unwrap(),
            "--output-dir",
            dir.path().join("out").to_str().unwrap(),
            "--beamformer",
            "vbf",
            "--scheme",
            "float",
            "--weights",
            weights.to_str().unwrap(),
            "--grid",
            "16,20,12,9",
        ],
        4,
    );
}

#[test]
fn gen_weights_output_loads_with_requested_shape() {
    let dir = tempdir().unwrap();
    let (_, weights) = vbf_fixture(dir.path());
    let model = load_weights(&weights).unwrap();
    assert_eq!(model.config.input_channels, 8);
    assert_eq!(model.config.patch_rows, 6);
    assert_eq!(model.config.patches, 2);
    assert_eq!(model.config.d_model, 8);
    assert_eq!(model.config.decoder_widths, vec![12]);
    model.validate().unwrap();
}

#[test]
fn quant_beamform_engines_agree_byte_for_byte() {
    let dir = tempdir().unwrap();
    let (frame, weights) = vbf_fixture(dir.path());
    let mut dumps = Vec::new();
    for engine in ["reference", "accel-sim"] {
        let out_dir = dir.path().join(engine);
        run_ok(&[
            "beamform",
            "--input",
            frame.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--beamformer",
            "vbf",
            "--scheme",
            "hybrid2",
            "--engine",
            engine,
            "--weights",
            weights.to_str().unwrap(),
            "--grid",
            "16,20,12,9",
        ]);
        dumps.push(fs::read(out_dir.join(format!("vbf_hybrid2_{engine}.iqf1"))).unwrap());
    }
    // Same header-free payload: the files differ only in name, not bytes.
    assert_eq!(
        dumps[0], dumps[1],
        "accelerator dump must match the reference dump"
    );
}
