//! `lstfuse` command-line front end.
//!
//! Every subcommand reads a JSON run configuration (or a scene
//! configuration for `synth`), lets flags override the fusion knobs, and
//! reports failures as one JSON object on stderr with a stable exit code.

mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use lstfuse::dtc::{fit_dtc_field, write_dtc_csv};
use lstfuse::evalkit::{error_histogram, export_scatter, export_series, metrics, SeriesPoint, DEFAULT_BIN_WIDTH};
use lstfuse::fusion::{Fallback, RiMode, SigmaMode, WeightMode};
use lstfuse::grid::{read_temp_grid, write_temp_grid, TempGrid};
use lstfuse::insitu::{decimate_nearest, read_station_csv, series_lst, LstFlag, MATCH_TOLERANCE_S};
use lstfuse::pipeline::{self, hhmm, read_series_dir, FusionMode, RunConfig};
use lstfuse::solar::SolarContext;
use lstfuse::synth::{generate_scene, write_bundle, SceneConfig, STEP_SECONDS};

use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "lstfuse", version, about = "Three-scale land-surface-temperature fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with ground truth and a ready-to-run configuration.
    Synth(SynthArgs),
    /// Fit per-cell diurnal temperature cycles to a coarse half-hourly series.
    FitDtc(FitDtcArgs),
    /// Run temporal and sensor normalization and write the normalized grids.
    Normalize(RunArgs),
    /// Fuse the sources into fine-resolution LST.
    Fuse(FuseArgs),
    /// Compare predictions against reference grids or a flux station.
    Evaluate(EvaluateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Lmc,
    Lc,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// Fusion knobs that override the configuration file.
#[derive(Args, Debug, Default)]
struct FusionFlags {
    /// Moving-window edge in fine pixels (odd).
    #[arg(long)]
    window: Option<usize>,
    /// Number of land-cover classes used for the similarity threshold.
    #[arg(long)]
    classes: Option<usize>,
    /// Scale term: `verbatim` or `difference`.
    #[arg(long, value_parser = parse_enum::<RiMode>)]
    ri_mode: Option<RiMode>,
    /// Weight form: `verbatim` or `similarity-proportional`.
    #[arg(long, value_parser = parse_enum::<WeightMode>)]
    weight_mode: Option<WeightMode>,
    /// Spread used for the similarity threshold: `global` or `window`.
    #[arg(long, value_parser = parse_enum::<SigmaMode>)]
    sigma_mode: Option<SigmaMode>,
    /// Pixels without moderate data: `two-source` or `nodata`.
    #[arg(long, value_parser = parse_enum::<Fallback>)]
    fallback: Option<Fallback>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Temporal normalization of the moderate grids.
    #[arg(long, value_enum)]
    tnor: Option<Switch>,
    /// Sensor normalization of the fine grid.
    #[arg(long, value_enum)]
    snor: Option<Switch>,
    /// Worker threads for the fusion stage; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fusion: FusionFlags,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Predict every half-hour of the coarse series instead of the single target time.
    #[arg(long)]
    diurnal: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fusion: FusionFlags,
}

#[derive(Args, Debug)]
struct FitDtcArgs {
    /// Run configuration supplying the solar context and the coarse series.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of coarse half-hourly grids; overrides the configuration.
    #[arg(long)]
    c_series: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    latitude: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    longitude: Option<f64>,
    #[arg(long)]
    day_of_year: Option<u32>,
    /// Local solar time minus UTC, hours; defaults to longitude / 15.
    #[arg(long, allow_hyphen_values = true)]
    utc_offset: Option<f64>,
    /// Output CSV; defaults to `dtc_params.csv` in the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Predicted grid, or a directory of predicted grids.
    #[arg(long)]
    pred: PathBuf,
    /// Reference grid, or a directory of reference grids matched by timestamp.
    #[arg(long, conflicts_with = "station", required_unless_present = "station")]
    reference: Option<PathBuf>,
    /// Station flux CSV.
    #[arg(long, requires_all = ["row", "col"])]
    station: Option<PathBuf>,
    /// Station pixel row on the predicted grid.
    #[arg(long)]
    row: Option<usize>,
    /// Station pixel column on the predicted grid.
    #[arg(long)]
    col: Option<usize>,
    /// Broadband emissivity for records without band emissivities.
    #[arg(long)]
    emissivity: Option<f64>,
    /// Histogram bin width, K.
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    /// Output directory for the report files.
    #[arg(long)]
    out: PathBuf,
}

impl FusionFlags {
    fn apply(&self, cfg: &mut lstfuse::fusion::FusionConfig) {
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(n) = self.classes {
            cfg.n_classes = n;
        }
        if let Some(m) = self.ri_mode {
            cfg.ri_mode = m;
        }
        if let Some(m) = self.weight_mode {
            cfg.weight_mode = m;
        }
        if let Some(m) = self.sigma_mode {
            cfg.sigma_mode = m;
        }
        if let Some(f) = self.fallback {
            cfg.fallback = f;
        }
    }
}

fn load_run(args: &RunArgs) -> CliResult<RunConfig> {
    if !args.config.exists() {
        return Err(CliError::Missing(args.config.clone()));
    }
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(mode) = args.mode {
        cfg.options.mode = match mode {
            Mode::Lmc => FusionMode::Lmc,
            Mode::Lc => FusionMode::Lc,
        };
    }
    if let Some(s) = args.tnor {
        cfg.options.temporal_normalization = s.on();
    }
    if let Some(s) = args.snor {
        cfg.options.sensor_normalization = s.on();
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    args.fusion.apply(&mut cfg.options.fusion);
    cfg.validate()?;
    require_inputs(&cfg)?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

/// Checks that every path the chosen mode reads is present.
fn require_inputs(cfg: &RunConfig) -> CliResult<()> {
    let inputs = &cfg.inputs;
    let mut needed = vec![inputs.l_t1.clone(), inputs.c_series.clone()];
    if cfg.options.mode == FusionMode::Lmc {
        needed.extend(inputs.m_t1.iter().chain(&inputs.m_t2).cloned());
        if cfg.options.sensor_normalization {
            needed.extend(inputs.classes.iter().cloned());
        }
    }
    for p in needed {
        let present = if p == inputs.c_series {
            p.is_dir()
        } else {
            lstfuse::grid::grid_paths(&p).1.exists()
        };
        if !present {
            return Err(CliError::Missing(p));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let mut scene = match &args.config {
        Some(p) if !p.exists() => return Err(CliError::Missing(p.clone())),
        Some(p) => read_json::<SceneConfig>(p)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    let mut fusion = lstfuse::fusion::FusionConfig::default();
    args.fusion.apply(&mut fusion);
    fusion.validate()?;
    let bundle = generate_scene(&scene)?;
    let manifest = write_bundle(&bundle, &args.out, &fusion)?;
    log::info!(
        "wrote {} truth grids and {} stations to {}",
        manifest.truth.len(),
        manifest.stations.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fit_dtc(args: &FitDtcArgs) -> CliResult<()> {
    let run = match &args.config {
        Some(p) if !p.exists() => return Err(CliError::Missing(p.clone())),
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let c_series = args
        .c_series
        .clone()
        .or_else(|| run.as_ref().map(|r| r.inputs.c_series.clone()))
        .ok_or_else(|| CliError::Config("no coarse series: pass --c-series or --config".into()))?;
    if !c_series.is_dir() {
        return Err(CliError::Missing(c_series));
    }
    let base = run.as_ref().map(|r| r.solar);
    let pick = |flag: Option<f64>, from: Option<f64>, name: &str| {
        flag.or(from)
            .ok_or_else(|| CliError::Config(format!("no {name}: pass --{name} or --config")))
    };
    let latitude = pick(args.latitude, base.map(|s| s.latitude), "latitude")?;
    let longitude = pick(args.longitude, base.map(|s| s.longitude), "longitude")?;
    let day_of_year = args
        .day_of_year
        .or(base.map(|s| s.day_of_year))
        .ok_or_else(|| CliError::Config("no day-of-year: pass --day-of-year or --config".into()))?;
    let utc_offset = args
        .utc_offset
        .or(base.filter(|s| s.longitude == longitude).map(|s| s.utc_offset))
        .unwrap_or(longitude / 15.0);
    let ctx = SolarContext::new(latitude, longitude, day_of_year, utc_offset)?;
    let out = match (&args.out, &run) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => r.output_dir.join("dtc_params.csv"),
        (None, None) => return Err(CliError::Config("no output path: pass --out or --config".into())),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let series = read_series_dir(&c_series)?;
    let field = fit_dtc_field(&series, &ctx)?;
    log::info!("fitted {} of {} cells", field.fitted_count(), field.params().len());
    write_dtc_csv(&field, &out)?;
    Ok(())
}

fn cmd_normalize(args: &RunArgs) -> CliResult<()> {
    let cfg = load_run(args)?;
    if cfg.options.mode != FusionMode::Lmc {
        return Err(CliError::Config(
            "normalization applies to the three-source mode only".into(),
        ));
    }
    let inputs = cfg.load_inputs()?;
    let prepared = pipeline::prepare(&inputs, &cfg.times, &cfg.solar, &cfg.options)?;
    let dir = cfg.output_dir.join("normalized");
    create_dir(&dir)?;
    if let Some(n) = &prepared.normalized {
        write_temp_grid(&n.m_t1, &dir.join("m_t1"))?;
        write_temp_grid(&n.m_t2, &dir.join("m_t2"))?;
    }
    write_temp_grid(&prepared.l_t1, &dir.join("l_t1"))?;
    if let Some(field) = &prepared.dtc {
        write_dtc_csv(field, &dir.join("dtc_params.csv"))?;
    }
    if let Some(fit) = &prepared.glolm {
        write_json(fit, &dir.join("glolm.json"))?;
    }
    Ok(())
}

fn cmd_fuse(args: &FuseArgs) -> CliResult<()> {
    let cfg = load_run(&args.run)?;
    let inputs = cfg.load_inputs()?;
    let prepared = pipeline::prepare(&inputs, &cfg.times, &cfg.solar, &cfg.options)?;
    create_dir(&cfg.output_dir)?;
    let targets: Vec<i64> = if args.diurnal {
        inputs.c_series.iter().map(|g| g.timestamp_utc()).collect()
    } else {
        vec![cfg.times.tp]
    };
    for tp in targets {
        let fused = pipeline::fuse_at(&prepared, &inputs.c_series, tp, &cfg.options)?;
        write_temp_grid(&fused, &cfg.output_dir.join(format!("fused_{}", hhmm(tp))))?;
    }
    Ok(())
}

/// A single grid file or every grid in a directory.
fn read_grids(path: &Path) -> CliResult<Vec<TempGrid>> {
    if path.is_dir() {
        return Ok(read_series_dir(path)?);
    }
    if !lstfuse::grid::grid_paths(path).1.exists() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    Ok(vec![read_temp_grid(path)?])
}

#[derive(Serialize)]
struct EvaluationReport {
    metrics: lstfuse::evalkit::MetricsReport,
    histogram: lstfuse::evalkit::ErrorHistogram,
    matched_times: usize,
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let preds = read_grids(&args.pred)?;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut series: Vec<SeriesPoint> = Vec::new();
    let mut matched = 0;
    if let Some(reference) = &args.reference {
        let refs = read_grids(reference)?;
        for p in &preds {
            let r = if refs.len() == 1 && preds.len() == 1 {
                &refs[0]
            } else {
                match refs.iter().find(|r| r.timestamp_utc() == p.timestamp_utc()) {
                    Some(r) => r,
                    None => continue,
                }
            };
            if !r.header().same_geometry(p.header()) {
                return Err(lstfuse::Error::GridCompatibility(format!(
                    "prediction and reference at {} differ in geometry",
                    hhmm(p.timestamp_utc())
                ))
                .into());
            }
            matched += 1;
            for (&a, &b) in p.values().iter().zip(r.values()) {
                if p.is_valid_value(a) && r.is_valid_value(b) {
                    pairs.push((a as f64, b as f64));
                }
            }
        }
    } else if let Some(station) = &args.station {
        if !station.exists() {
            return Err(CliError::Missing(station.clone()));
        }
        let (row, col) = (args.row.unwrap_or(0), args.col.unwrap_or(0));
        let lst = series_lst(&read_station_csv(station)?, args.emissivity)?;
        let decimated = decimate_nearest(&lst, STEP_SECONDS, MATCH_TOLERANCE_S)?;
        for p in &preds {
            if row >= p.height() || col >= p.width() {
                return Err(lstfuse::Error::Bounds(format!(
                    "station pixel ({row}, {col}) outside the {}x{} grid",
                    p.height(),
                    p.width()
                ))
                .into());
            }
            let hit = decimated
                .iter()
                .find(|r| r.timestamp_utc == p.timestamp_utc() && r.flag == LstFlag::Ok);
            let v = p.get(row, col);
            if let (Some(rec), true) = (hit, p.is_valid_value(v)) {
                let reference = rec.lst_k.unwrap_or(f64::NAN);
                matched += 1;
                pairs.push((v as f64, reference));
                series.push(SeriesPoint {
                    timestamp_utc: p.timestamp_utc(),
                    pred_k: v as f64,
                    ref_k: reference,
                });
            }
        }
    }
    if matched == 0 {
        return Err(lstfuse::Error::InsufficientData("no prediction matched a reference time".into()).into());
    }
    let (pred, reference): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
    let report = EvaluationReport {
        metrics: metrics(&pred, &reference)?,
        histogram: error_histogram(&pred, &reference, args.bin_width)?,
        matched_times: matched,
    };
    create_dir(&args.out)?;
    write_json(&report, &args.out.join("metrics.json"))?;
    export_scatter(&pairs, &args.out.join("scatter.csv"))?;
    if !series.is_empty() {
        export_series(&series, &args.out.join("series.csv"))?;
    }
    println!("{}", serde_json::to_string(&report.metrics).unwrap_or_default());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::FitDtc(a) => cmd_fit_dtc(a),
        Command::Normalize(a) => cmd_normalize(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
