//! `nirlink`: simulate, analyze and budget runs from presets or config files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nirlink::experiment::{output_dir, presets, run_analyze, run_budget, run_simulate, AnalysisConfig, RunManifest};
use nirlink::tagio::TagFormat;
use nirlink::{BudgetConfig, Error, ExperimentConfig};

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "NIRLINK_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "nirlink",
    version,
    about = "Entangled-pair fiber link simulation and time-tag analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

impl From<Format> for TagFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Bin => TagFormat::Bin,
            Format::Csv => TagFormat::Csv,
        }
    }
}

#[derive(clap::Args)]
struct Source {
    /// Built-in preset to start from.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate tag streams and write them with a manifest.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: config `output_dir`, then $NIRLINK_OUT_DIR, then ./nirlink-out/simulate].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bin")]
        format: Format,
    },
    /// Analyze a simulated run: histogram, peaks, coincidences, visibilities.
    Analyze {
        /// Directory holding the tag files and manifest.
        run_dir: PathBuf,
        /// TOML with analysis keys overriding the manifest's analysis table.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: <RUN_DIR>/analysis].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate detected pair rate against distance and crossover markers.
    Budget {
        #[command(flatten)]
        source: Source,
        /// Output directory [default: config `output_dir`, then $NIRLINK_OUT_DIR, then ./nirlink-out/budget].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Calibrate fixed losses so crossovers land on their targets.
        #[arg(long)]
        calibrate: bool,
    },
    /// List or print built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// Preset names.
    List,
    /// Resolved preset as TOML.
    Show { name: String },
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::UndefinedVisibility(_) => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn read_config(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// Prefixes config errors with the file they came from.
fn in_file(path: Option<&Path>) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        if let (Some(p), 2) = (path, f.code) {
            f.message = format!("{}: {}", p.display(), f.message);
        }
        f
    }
}

fn require_source(source: &Source, kind: &str) -> Result<Option<String>, Failure> {
    if source.preset.is_none() && source.config.is_none() {
        return Err(Failure {
            code: 2,
            message: format!("{kind} needs --preset or --config"),
        });
    }
    source.config.as_deref().map(read_config).transpose()
}

fn default_out(sub: &str) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new("nirlink-out").join(sub))
}

fn simulate(source: Source, seed: Option<u64>, out: Option<PathBuf>, format: Format) -> Result<(), Failure> {
    let text = require_source(&source, "simulate")?;
    let mut cfg = ExperimentConfig::resolve(source.preset.as_deref(), text.as_deref())
        .map_err(in_file(source.config.as_deref()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dir = output_dir(out.as_deref(), cfg.output_dir.as_deref(), &default_out("simulate"));
    let manifest = run_simulate(&cfg, &dir, format.into())?;
    let tags: u64 = manifest.run.files.iter().map(|f| f.records).sum();
    println!(
        "simulated {} segment(s), {} candidate pairs, {tags} tags on {} channel(s) -> {}",
        manifest.run.segments.len(),
        manifest.run.candidate_pairs,
        manifest.run.files.len(),
        dir.display()
    );
    Ok(())
}

fn analyze(run_dir: PathBuf, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Failure> {
    let analysis = match &config {
        None => None,
        Some(path) => {
            let base = RunManifest::load(&run_dir)?.config.analysis;
            let text = read_config(path)?;
            Some(AnalysisConfig::resolve_over(&base, &text).map_err(in_file(Some(path)))?)
        }
    };
    let dir = out.unwrap_or_else(|| run_dir.join("analysis"));
    let report = run_analyze(&run_dir, &dir, analysis)?;
    let r = &report.rates;
    println!(
        "{} peak(s), center delay {} ps, {} coincidences ({:.3}/s, accidentals {:.3}/s)",
        report.peaks.len(),
        report.center_delay_ps,
        r.coincidences,
        r.coincidences_per_s,
        r.accidentals_per_s
    );
    for b in &report.bases {
        println!(
            "{} visibility: minmax {:.4}, fit {:.4} ({} curve(s))",
            b.basis.as_str(),
            b.minmax,
            b.fit,
            b.curves
        );
    }
    if let (Some(m), Some(f)) = (report.average_visibility_minmax, report.average_visibility_fit) {
        println!("average visibility: minmax {m:.4}, fit {f:.4}");
    }
    println!("wrote {}", dir.display());
    if report.visibility_undefined {
        return Err(Failure {
            code: 4,
            message: "visibility undefined for every analyzer curve".into(),
        });
    }
    Ok(())
}

fn budget(source: Source, out: Option<PathBuf>, calibrate: bool) -> Result<(), Failure> {
    let text = require_source(&source, "budget")?;
    let cfg =
        BudgetConfig::resolve(source.preset.as_deref(), text.as_deref()).map_err(in_file(source.config.as_deref()))?;
    let dir = output_dir(out.as_deref(), cfg.output_dir.as_deref(), &default_out("budget"));
    let report = run_budget(&cfg, &dir, calibrate)?;
    for c in &report.manifest.calibrations {
        println!(
            "calibrated {} fixed loss {:.4} dB (crossover with {} at {} km)",
            c.system_b, c.fixed_loss_db, c.system_a, c.target_km
        );
    }
    for m in &report.curve.markers {
        println!("crossover {} / {}: {:.3} km", m.system_a, m.system_b, m.length_km);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn show_preset(name: &str) -> Result<(), Failure> {
    let text = match presets::preset(name) {
        Some(presets::Preset::Experiment(cfg)) => cfg.to_toml_string()?,
        Some(presets::Preset::Budget(cfg)) => cfg.to_toml_string()?,
        None => {
            return Err(Failure {
                code: 2,
                message: format!(
                    "unknown preset `{name}` (available: {})",
                    presets::PRESET_NAMES.join(", ")
                ),
            })
        }
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            source,
            seed,
            out,
            format,
        } => simulate(source, seed, out, format),
        Command::Analyze { run_dir, config, out } => analyze(run_dir, config, out),
        Command::Budget { source, out, calibrate } => budget(source, out, calibrate),
        Command::Presets { action } => match action {
            PresetAction::List => {
                presets::PRESET_NAMES.iter().for_each(|n| println!("{n}"));
                Ok(())
            }
            PresetAction::Show { name } => show_preset(&name),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
