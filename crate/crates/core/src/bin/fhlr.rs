use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use fhlr::annotation::{serve, DatasetRegistry, SessionStore};
use fhlr::datasets::{make_synthetic, write_canonical, SyntheticSpec, SYNTHETIC_SAMPLE_RATE_HZ};
use fhlr::experiment::{load_reports, render_csv, render_text, run_pipeline, run_preset, ExperimentConfig, PresetName};
use fhlr::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "fhlr", version, about = "Noisy-label learning lab for wearable time-series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment over all its trials.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a named comparison grid over a base config.
    Preset {
        /// noise_sweep, asymmetric, acquisition_ablation, merge_comparison,
        /// shot_scaling, component_ablation or annotator_panel
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render every report under a directory as mean ± std tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Generate a synthetic dataset in canonical format.
    Synth {
        /// JSON synthetic dataset spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Start the annotation service.
    Serve {
        /// Directory holding one canonical dataset per subdirectory.
        #[arg(long)]
        datasets: PathBuf,
        /// Session storage directory.
        #[arg(long, default_value = "annotation_store")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if out.is_some() {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load_config(&config, out)?;
            let r = run_pipeline(&cfg)?;
            println!(
                "{}: {:.2} ± {:.2} % over {} trials ({} failed, {:.0} s)",
                r.label,
                100.0 * r.mean,
                100.0 * r.std,
                r.trials.len(),
                r.failures.len(),
                r.wall_clock_secs
            );
            for f in &r.failures {
                eprintln!("trial {} failed: {}", f.trial, f.error);
            }
        }
        Command::Preset { name, config, out } => {
            let preset: PresetName = name.parse()?;
            let cfg = load_config(&config, out)?;
            let rep = run_preset(preset, &cfg)?;
            print!("{}", render_text(&rep));
        }
        Command::Report { dir, format } => {
            let reports = load_reports(&dir)?;
            if reports.is_empty() {
                return Err(Failure::Config(format!("no reports under {}", dir.display())));
            }
            for r in &reports {
                match format {
                    Format::Text => println!("{}", render_text(r)),
                    Format::Csv => println!("# {}\n{}", r.preset, render_csv(r)),
                }
            }
        }
        Command::Synth { spec, out, name } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Failure::Config(format!("{}: {e}", spec.display())))?;
            let spec: SyntheticSpec = serde_json::from_str(&text).map_err(Error::from)?;
            let (train, test) = make_synthetic(&spec)?;
            let splits = BTreeMap::from([("train".to_string(), train), ("test".to_string(), test)]);
            let m = write_canonical(&out, &name, SYNTHETIC_SAMPLE_RATE_HZ, &splits)?;
            println!(
                "wrote {} ({} classes, {} channels, window {}) to {}",
                m.name,
                m.num_classes,
                m.channels,
                m.window_length,
                out.display()
            );
        }
        Command::Serve { datasets, store, addr } => {
            if !datasets.is_dir() {
                return Err(Failure::Config(format!("{} is not a directory", datasets.display())));
            }
            let reg = DatasetRegistry::scan(&datasets)?;
            if reg.refs().is_empty() {
                return Err(Failure::Config(format!("no canonical datasets under {}", datasets.display())));
            }
            let store = SessionStore::open(store, reg).map_err(|e| Failure::Runtime(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
            rt.block_on(serve(addr, Arc::new(store))).map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
