//! Command-line entry point: simulate scenario bundles, run the staged
//! calibration, estimate forces and payloads, benchmark against the
//! quasistatic baseline, and export workspace sensitivity maps.
//!
//! Exit codes: 0 success, 2 input error, 3 calibration failure,
//! 4 estimation precondition failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hydrarm_core::calibration::{load_bundle, run_pipeline, CalibrationOptions};
use hydrarm_core::dynamics::LumpedParams;
use hydrarm_core::estimation::{
    estimate_force, estimate_payload, quasistatic_baseline_estimate, quasistatic_baseline_fit,
    EstimationOptions, PayloadEstimate,
};
use hydrarm_core::hydraulics::{measured_joint_torque, CylinderCatalog};
use hydrarm_core::kinematics::{sensitivity_map, ArmJoint, MachineGeometry, PerJoint, WorkspaceGrid};
use hydrarm_core::signal::{derive_accelerations, Episode};
use hydrarm_core::simulator::{preset, scenario_library, simulate, MachinePreset, ScenarioScript};

const EXIT_INPUT: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;
const EXIT_ESTIMATION: u8 = 4;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn calibration(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CALIBRATION,
            message: message.into(),
        }
    }

    fn estimation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_ESTIMATION,
            message: message.into(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "hydrarm", about = "Calibrated excavator-arm dynamics toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration file (key=value: geometry, params, manifest, out_dir,
    /// seed, deadband, jacobian_condition_max, catalog).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Machine geometry file; overrides the config file.
    #[arg(long)]
    geometry: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate episode CSVs from a bundled machine preset.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Bundled machine preset: case250 or m545.
        #[arg(long, default_value = "case250")]
        preset: String,
        /// Scenario group: calibration_bundle, weighing_cycles, grading_sweeps,
        /// workspace_grid, quasistatic_sweeps, or all.
        #[arg(long, conflicts_with = "script")]
        scenario: Option<String>,
        /// Custom scenario script file instead of a named group.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Disable sensor noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Run the staged calibration pipeline over a dataset manifest.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset manifest; overrides the config file.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Calibration date stamp recorded in the parameter file.
        #[arg(long, default_value = "unspecified")]
        date: String,
    },
    /// Estimate blade forces or payload masses from episode CSVs.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        /// force or payload.
        #[arg(long)]
        mode: String,
        /// Calibrated parameter file; overrides the config file.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Episode CSV files.
        episodes: Vec<PathBuf>,
    },
    /// Compare the dynamic estimator against the quasistatic baseline.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        /// Suite file listing `quasistatic=` and `dynamic=` episode paths.
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Export the boom pressure-per-force workspace sensitivity map.
    #[command(name = "sensitivity-map")]
    SensitivityMap {
        #[command(flatten)]
        common: CommonArgs,
        /// Bundled preset supplying geometry and envelope when no geometry
        /// file is given.
        #[arg(long, default_value = "case250")]
        preset: String,
        /// Vertical probe force in newtons.
        #[arg(long, default_value_t = 1000.0)]
        probe: f64,
        /// Fixed bucket angle for the reachability solve (rad).
        #[arg(long, default_value_t = -1.0)]
        bucket_angle: f64,
        /// Grid as x_min,x_max,y_min,y_max,nx,ny; defaults to the preset envelope.
        #[arg(long)]
        grid: Option<String>,
    },
}

/// Values from the run configuration file, all optional; flags win.
#[derive(Default)]
struct RunConfig {
    geometry: Option<PathBuf>,
    params: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    deadband: Option<f64>,
    jacobian_condition_max: Option<f64>,
    catalog: Option<PathBuf>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("config `{}`: {e}", path.display())))?;
        let dir = path.parent().map(PathBuf::from).unwrap_or_default();
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::input(format!("config `{}` line {}: expected key=value", path.display(), i + 1))
            })?;
            let value = value.trim();
            let rel = |v: &str| dir.join(v);
            match key.trim() {
                "geometry" => config.geometry = Some(rel(value)),
                "params" => config.params = Some(rel(value)),
                "manifest" => config.manifest = Some(rel(value)),
                "out_dir" => config.out_dir = Some(rel(value)),
                "catalog" => config.catalog = Some(rel(value)),
                "seed" => {
                    config.seed = Some(value.parse().map_err(|_| {
                        CliError::input(format!("config seed `{value}` is not an integer"))
                    })?)
                }
                "deadband" => {
                    config.deadband = Some(value.parse().map_err(|_| {
                        CliError::input(format!("config deadband `{value}` is not a number"))
                    })?)
                }
                "jacobian_condition_max" => {
                    config.jacobian_condition_max = Some(value.parse().map_err(|_| {
                        CliError::input(format!("config jacobian_condition_max `{value}` is not a number"))
                    })?)
                }
                other => return Err(CliError::input(format!("config key `{other}` unknown"))),
            }
        }
        if let Some(deadband) = config.deadband {
            if !(deadband > 0.0) {
                return Err(CliError::input("deadband must be positive"));
            }
        }
        if let Some(cond) = config.jacobian_condition_max {
            if !(cond > 0.0) {
                return Err(CliError::input("jacobian_condition_max must be positive"));
            }
        }
        Ok(config)
    }

    fn estimation_options(&self) -> EstimationOptions {
        let mut opts = EstimationOptions::default();
        if let Some(d) = self.deadband {
            opts.deadband = d;
        }
        if let Some(c) = self.jacobian_condition_max {
            opts.jacobian_condition_max = c;
        }
        opts
    }
}

fn load_geometry(common: &CommonArgs, config: &RunConfig, fallback: Option<&MachinePreset>) -> CliResult<MachineGeometry> {
    let path = common.geometry.as_ref().or(config.geometry.as_ref());
    match path {
        Some(p) => MachineGeometry::load(p).map_err(|e| CliError::input(e.to_string())),
        None => fallback
            .map(|m| m.geometry.clone())
            .ok_or_else(|| CliError::input("no geometry file given (flag --geometry or config key `geometry`)")),
    }
}

fn out_dir(common: &CommonArgs, config: &RunConfig) -> CliResult<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| CliError::input("no output directory given (flag --out or config key `out_dir`)"))?;
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::input(format!("cannot create `{}`: {e}", dir.display())))?;
    Ok(dir)
}

fn load_preset(name: &str) -> CliResult<MachinePreset> {
    preset(name).ok_or_else(|| CliError::input(format!("unknown preset `{name}` (bundled: case250, m545)")))
}

fn write_file(path: &Path, content: &str) -> CliResult<()> {
    std::fs::write(path, content)
        .map_err(|e| CliError::input(format!("cannot write `{}`: {e}", path.display())))
}

fn cmd_simulate(
    common: &CommonArgs,
    preset_name: &str,
    scenario: Option<&str>,
    script: Option<&Path>,
    noiseless: bool,
) -> CliResult<()> {
    let config = RunConfig::load(common.config.as_deref())?;
    let machine = load_preset(preset_name)?;
    let geometry = load_geometry(common, &config, Some(&machine))?;
    let dir = out_dir(common, &config)?;
    let seed = common.seed.or(config.seed).unwrap_or(0);
    let phys = if noiseless {
        machine.physical.without_noise()
    } else {
        machine.physical.clone()
    };

    let mut written = 0usize;
    let mut total_samples = 0usize;
    let mut run_group = |name: &str, scripts: &[ScenarioScript], seed0: u64| -> CliResult<Vec<String>> {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub)
            .map_err(|e| CliError::input(format!("cannot create `{}`: {e}", sub.display())))?;
        let mut files = Vec::new();
        for (i, s) in scripts.iter().enumerate() {
            let episode = simulate(&phys, &geometry, s, 50.0, seed0 + i as u64)
                .map_err(|e| CliError::input(e.to_string()))?;
            let file = sub.join(format!("{}.csv", s.name));
            episode
                .save_csv(&file)
                .map_err(|e| CliError::input(e.to_string()))?;
            total_samples += episode.samples.len();
            written += 1;
            println!(
                "wrote {} ({:.1} s, {} samples{})",
                file.display(),
                episode.duration(),
                episode.samples.len(),
                episode
                    .meta
                    .payload_kg
                    .map(|m| format!(", payload {m} kg"))
                    .unwrap_or_default()
            );
            files.push(format!("{name}/{}.csv", s.name));
        }
        Ok(files)
    };

    if let Some(path) = script {
        let custom = ScenarioScript::load(path).map_err(|e| CliError::input(e.to_string()))?;
        run_group("custom", std::slice::from_ref(&custom), seed)?;
    } else {
        let scenarios = scenario_library(&machine, seed);
        let which = scenario.unwrap_or("all");
        let mut matched = false;
        if which == "calibration_bundle" || which == "all" {
            matched = true;
            let mut manifest = format!("# calibration dataset manifest\nmachine_id={}\n", machine.name);
            let plunger = &scenarios.plunger_boom;
            let loaded =
                run_group("calibration", std::slice::from_ref(&plunger.loaded), seed + 9000)?;
            let unloaded =
                run_group("calibration", std::slice::from_ref(&plunger.unloaded), seed + 9001)?;
            manifest.push_str(&format!("plunger.boom.loaded={}\n", loaded[0]));
            manifest.push_str(&format!("plunger.boom.unloaded={}\n", unloaded[0]));
            manifest.push_str(&format!("plunger.boom.payload_kg={}\n", plunger.payload_kg));
            manifest.push_str(&format!("plunger.boom.radius={}\n", plunger.radius));
            manifest.push_str(&format!("plunger.boom.angle_offset={}\n", plunger.angle_offset));
            for joint in ArmJoint::ALL {
                for f in run_group("calibration", scenarios.inertia.get(joint), seed + 100)? {
                    manifest.push_str(&format!("inertia.{joint}={f}\n"));
                }
                for f in run_group("calibration", scenarios.friction.get(joint), seed + 300)? {
                    manifest.push_str(&format!("friction.{joint}={f}\n"));
                }
            }
            let gravity_files = run_group("calibration", &scenarios.gravity, seed + 500)?;
            for joint in ArmJoint::ALL {
                for f in &gravity_files {
                    manifest.push_str(&format!("gravity.{joint}={f}\n"));
                }
            }
            for f in run_group("calibration", &scenarios.centripetal, seed + 600)? {
                manifest.push_str(&format!("centripetal={f}\n"));
            }
            write_file(&dir.join("bundle.manifest"), &manifest)?;
            println!("wrote {}", dir.join("bundle.manifest").display());
        }
        if which == "weighing_cycles" || which == "all" {
            matched = true;
            run_group("weighing", &scenarios.weighing, seed + 2000)?;
        }
        if which == "grading_sweeps" || which == "all" {
            matched = true;
            run_group("grading", &scenarios.grading, seed + 3000)?;
        }
        if which == "workspace_grid" || which == "all" {
            matched = true;
            run_group("workspace", &scenarios.workspace_grid, seed + 4000)?;
        }
        if which == "quasistatic_sweeps" || which == "all" {
            matched = true;
            run_group("quasistatic", &scenarios.quasistatic, seed + 5000)?;
        }
        if !matched {
            return Err(CliError::input(format!(
                "unknown scenario `{which}` (calibration_bundle, weighing_cycles, grading_sweeps, workspace_grid, quasistatic_sweeps, all)"
            )));
        }
    }
    println!("{written} episodes, {total_samples} samples total, seed {seed}");
    Ok(())
}

fn cmd_calibrate(common: &CommonArgs, manifest: Option<&Path>, date: &str) -> CliResult<()> {
    let config = RunConfig::load(common.config.as_deref())?;
    let geometry = load_geometry(common, &config, None)?;
    let dir = out_dir(common, &config)?;
    let manifest_path = manifest
        .map(PathBuf::from)
        .or_else(|| config.manifest.clone())
        .ok_or_else(|| CliError::input("no manifest given (flag --manifest or config key `manifest`)"))?;
    let bundle = load_bundle(&manifest_path).map_err(|e| CliError::input(e.to_string()))?;
    let catalog = match &config.catalog {
        Some(path) => CylinderCatalog::load(path).map_err(|e| CliError::input(e.to_string()))?,
        None => CylinderCatalog::standard(),
    };
    let mut opts = CalibrationOptions::default();
    if let Some(d) = config.deadband {
        opts.deadband = d;
    }
    let (mut params, report, _geometry) = run_pipeline(&bundle, &geometry, &catalog, &opts)
        .map_err(|e| CliError::calibration(e.to_string()))?;
    params.calibrated_at = date.to_string();
    let params_path = dir.join("params.cfg");
    params
        .save(&params_path)
        .map_err(|e| CliError::input(e.to_string()))?;
    write_file(&dir.join("report.txt"), &report.to_text())?;
    write_file(&dir.join("report.cfg"), &report.to_config_string())?;
    print!("{}", report.to_text());
    println!("wrote {}", params_path.display());
    Ok(())
}

fn torque_pair(geometry: &MachineGeometry, s: &hydrarm_core::signal::AlignedSample) -> CliResult<PerJoint<f64>> {
    Ok(PerJoint {
        boom: measured_joint_torque(geometry, ArmJoint::Boom, &s.q, &s.pressures.boom)
            .map_err(|e| CliError::estimation(e.to_string()))?,
        stick: measured_joint_torque(geometry, ArmJoint::Stick, &s.q, &s.pressures.stick)
            .map_err(|e| CliError::estimation(e.to_string()))?,
    })
}

fn load_episodes(paths: &[PathBuf]) -> CliResult<Vec<Episode>> {
    paths
        .iter()
        .map(|p| Episode::load_csv(p).map_err(|e| CliError::input(e.to_string())))
        .collect()
}

fn payload_record(name: &str, estimate: &PayloadEstimate, truth: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "episode={name}");
    let _ = writeln!(out, "mass_kg={}", estimate.mass_kg);
    let _ = writeln!(out, "residual_rms_nm={}", estimate.residual_rms);
    let _ = writeln!(out, "samples_used={}", estimate.samples_used);
    let _ = writeln!(out, "optimizer_iterations={}", estimate.optimizer_iterations);
    let _ = writeln!(out, "inertia_radius_m={}", estimate.mean_inertia_radius);
    let _ = writeln!(out, "centripetal_radius_m={}", estimate.mean_centripetal_radius);
    if estimate.mass_kg < 0.0 {
        // negative estimates are reported rather than clamped
        let _ = writeln!(out, "warning=negative_estimate");
    }
    if let Some(t) = truth {
        let _ = writeln!(out, "truth_kg={t}");
        let _ = writeln!(out, "error_kg={}", estimate.mass_kg - t);
    }
    out.push('\n');
    out
}

fn histogram_csv(masses: &[f64]) -> String {
    let mut out = String::from("bin_lo_kg,bin_hi_kg,count\n");
    if masses.is_empty() {
        return out;
    }
    let min = masses.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = masses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((max - min) / 12.0).max(1.0);
    let lo = (min / width).floor() * width;
    let bins = (((max - lo) / width).ceil() as usize).max(1);
    let mut counts = vec![0usize; bins];
    for &m in masses {
        let idx = (((m - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let b_lo = lo + i as f64 * width;
        let _ = writeln!(out, "{},{},{}", b_lo, b_lo + width, c);
    }
    out
}

fn cmd_estimate(common: &CommonArgs, mode: &str, params_path: Option<&Path>, episodes: &[PathBuf]) -> CliResult<()> {
    let config = RunConfig::load(common.config.as_deref())?;
    let geometry = load_geometry(common, &config, None)?;
    let dir = out_dir(common, &config)?;
    if episodes.is_empty() {
        return Err(CliError::estimation("no episode files given".to_string()));
    }
    let params_file = params_path
        .map(PathBuf::from)
        .or_else(|| config.params.clone())
        .ok_or_else(|| CliError::estimation("no calibrated parameter file (flag --params or config key `params`)"))?;
    let params = LumpedParams::load(&params_file).map_err(|e| CliError::estimation(e.to_string()))?;
    let opts = config.estimation_options();
    let loaded = load_episodes(episodes)?;
    match mode {
        "payload" => {
            let mut records = String::new();
            let mut masses = Vec::new();
            let mut errors = Vec::new();
            let mut runtimes = Vec::new();
            for (path, episode) in episodes.iter().zip(loaded.iter()) {
                let estimate = estimate_payload(&params, &geometry, episode, &opts)
                    .map_err(|e| CliError::estimation(format!("{}: {e}", path.display())))?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| path.display().to_string());
                records.push_str(&payload_record(&name, &estimate, episode.meta.payload_kg));
                masses.push(estimate.mass_kg);
                runtimes.push(estimate.runtime_s);
                if let Some(t) = episode.meta.payload_kg {
                    errors.push(estimate.mass_kg - t);
                }
                println!(
                    "{name}: {:.1} kg ({} samples, {} iterations)",
                    estimate.mass_kg, estimate.samples_used, estimate.optimizer_iterations
                );
            }
            write_file(&dir.join("payload_results.txt"), &records)?;
            write_file(&dir.join("payload_histogram.csv"), &histogram_csv(&masses))?;
            println!(
                "wrote {} and {}",
                dir.join("payload_results.txt").display(),
                dir.join("payload_histogram.csv").display()
            );
            let avg_runtime = runtimes.iter().sum::<f64>() / runtimes.len() as f64;
            println!("average optimizer runtime {avg_runtime:.4} s per episode");
            if !errors.is_empty() {
                let mean = errors.iter().sum::<f64>() / errors.len() as f64;
                let std = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                    / errors.len() as f64)
                    .sqrt();
                println!(
                    "against ground truth over {} episodes: mean error {:.1} kg, std {:.1} kg",
                    errors.len(),
                    mean,
                    std
                );
            }
        }
        "force" => {
            for (path, episode) in episodes.iter().zip(loaded.iter()) {
                let aligned =
                    derive_accelerations(episode, opts.accel_window).map_err(|e| CliError::estimation(e.to_string()))?;
                let mut csv = String::from("t,fx,fy,magnitude,direction_rad,valid\n");
                let mut valid = 0usize;
                for s in &aligned {
                    let tau = torque_pair(&geometry, s)?;
                    let est = estimate_force(&params, &geometry, s, &tau, &opts);
                    if est.valid {
                        valid += 1;
                    }
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        s.t,
                        est.f_ext.x,
                        est.f_ext.y,
                        est.magnitude,
                        est.direction_rad,
                        u8::from(est.valid)
                    );
                }
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "episode".to_string());
                let out = dir.join(format!("{stem}_force.csv"));
                write_file(&out, &csv)?;
                println!(
                    "wrote {} ({} rows, {} valid)",
                    out.display(),
                    aligned.len(),
                    valid
                );
            }
        }
        other => return Err(CliError::input(format!("unknown estimate mode `{other}`"))),
    }
    Ok(())
}

fn parse_suite(path: &Path) -> CliResult<(Vec<PathBuf>, Vec<PathBuf>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("suite `{}`: {e}", path.display())))?;
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();
    let mut quasistatic = Vec::new();
    let mut dynamic = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::input(format!("suite `{}` line {}: expected key=value", path.display(), i + 1))
        })?;
        match key.trim() {
            "quasistatic" => quasistatic.push(dir.join(value.trim())),
            "dynamic" => dynamic.push(dir.join(value.trim())),
            other => return Err(CliError::input(format!("suite key `{other}` unknown"))),
        }
    }
    if quasistatic.is_empty() || dynamic.is_empty() {
        return Err(CliError::estimation("suite needs both quasistatic and dynamic episodes"));
    }
    Ok((quasistatic, dynamic))
}

fn cmd_benchmark(common: &CommonArgs, suite: &Path, params_path: Option<&Path>) -> CliResult<()> {
    let config = RunConfig::load(common.config.as_deref())?;
    let geometry = load_geometry(common, &config, None)?;
    let dir = out_dir(common, &config)?;
    let params_file = params_path
        .map(PathBuf::from)
        .or_else(|| config.params.clone())
        .ok_or_else(|| CliError::estimation("no calibrated parameter file for the benchmark"))?;
    let params = LumpedParams::load(&params_file).map_err(|e| CliError::estimation(e.to_string()))?;
    let opts = config.estimation_options();
    let (qs_paths, dyn_paths) = parse_suite(suite)?;
    let qs_eps = load_episodes(&qs_paths)?;
    let dyn_eps = load_episodes(&dyn_paths)?;
    let surface = quasistatic_baseline_fit(&qs_eps, &geometry, &opts)
        .map_err(|e| CliError::estimation(e.to_string()))?;

    let mut rows: Vec<(String, Vec<f64>)> = vec![("dynamic".to_string(), Vec::new()), ("quasistatic".to_string(), Vec::new())];
    for (path, episode) in dyn_paths.iter().zip(dyn_eps.iter()) {
        let truth = episode.meta.payload_kg.ok_or_else(|| {
            CliError::estimation(format!("{}: benchmark episodes need ground-truth payload", path.display()))
        })?;
        let dynamic = estimate_payload(&params, &geometry, episode, &opts)
            .map_err(|e| CliError::estimation(e.to_string()))?;
        let baseline = quasistatic_baseline_estimate(&surface, &geometry, episode, &opts)
            .map_err(|e| CliError::estimation(e.to_string()))?;
        rows[0].1.push(dynamic.mass_kg - truth);
        rows[1].1.push(baseline.mass_kg - truth);
    }
    let stats = |v: &[f64]| -> (f64, f64) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / v.len() as f64).sqrt();
        (mean, std)
    };
    let mut table = String::from("method,episodes,mean_error_kg,std_kg\n");
    let mut stds = Vec::new();
    for (name, errs) in &rows {
        let (mean, std) = stats(errs);
        let _ = writeln!(table, "{name},{},{:.3},{:.3}", errs.len(), mean, std);
        stds.push(std);
    }
    write_file(&dir.join("benchmark.csv"), &table)?;
    print!("{table}");
    println!("std ratio quasistatic/dynamic: {:.1}", stds[1] / stds[0].max(1e-9));
    println!("wrote {}", dir.join("benchmark.csv").display());
    Ok(())
}

fn cmd_sensitivity_map(
    common: &CommonArgs,
    preset_name: &str,
    probe: f64,
    bucket_angle: f64,
    grid_spec: Option<&str>,
) -> CliResult<()> {
    let config = RunConfig::load(common.config.as_deref())?;
    let machine = load_preset(preset_name)?;
    let geometry = load_geometry(common, &config, Some(&machine))?;
    let dir = out_dir(common, &config)?;
    let grid = match grid_spec {
        Some(spec) => {
            let parts: Vec<f64> = spec
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::input(format!("bad grid `{spec}`")))?;
            if parts.len() != 6 || parts[4] < 1.0 || parts[5] < 1.0 {
                return Err(CliError::input("grid needs x_min,x_max,y_min,y_max,nx,ny"));
            }
            WorkspaceGrid {
                x_min: parts[0],
                x_max: parts[1],
                y_min: parts[2],
                y_max: parts[3],
                nx: parts[4] as usize,
                ny: parts[5] as usize,
            }
        }
        None => machine.envelope,
    };
    let cells = sensitivity_map(&geometry, &grid, probe, bucket_angle);
    let mut csv = String::from("x,y,pressure_per_force_pa\n");
    let mut values = Vec::new();
    for cell in &cells {
        match cell.pressure_per_force {
            Some(v) => {
                values.push(v);
                let _ = writeln!(csv, "{},{},{}", cell.x, cell.y, v);
            }
            None => {
                let _ = writeln!(csv, "{},{},", cell.x, cell.y);
            }
        }
    }
    let out = dir.join("sensitivity_map.csv");
    write_file(&out, &csv)?;
    if values.is_empty() {
        println!("no reachable cells in the requested grid");
    } else {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "{} reachable cells of {}, pressure-per-force ratio {:.2}",
            values.len(),
            cells.len(),
            max / min
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate {
            common,
            preset,
            scenario,
            script,
            noiseless,
        } => cmd_simulate(common, preset, scenario.as_deref(), script.as_deref(), *noiseless),
        Command::Calibrate { common, manifest, date } => cmd_calibrate(common, manifest.as_deref(), date),
        Command::Estimate {
            common,
            mode,
            params,
            episodes,
        } => cmd_estimate(common, mode, params.as_deref(), episodes),
        Command::Benchmark { common, suite, params } => cmd_benchmark(common, suite, params.as_deref()),
        Command::SensitivityMap {
            common,
            preset,
            probe,
            bucket_angle,
            grid,
        } => cmd_sensitivity_map(common, preset, *probe, *bucket_angle, grid.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
