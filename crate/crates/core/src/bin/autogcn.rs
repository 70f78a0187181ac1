use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use autogcn::config::ExperimentConfig;
use autogcn::runner;
use autogcn::synth::{self, SyntheticSpec};

#[derive(Parser)]
#[command(name = "autogcn", version, about = "Hyperparameter optimization for deep GCNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for trials and agents.
        #[arg(long)]
        workers: Option<usize>,
        /// Require a fixed seed (a seedless non-deterministic run draws one from the clock).
        #[arg(long)]
        deterministic: bool,
        /// Exact run directory (default: a fresh directory under the output root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic planted-partition dataset.
    Generate {
        /// TOML file with nodes, classes, communities, p_in, p_out, feature_dim, noise and optional seed.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a result table from run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Allow runs whose same-named datasets differ.
        #[arg(long)]
        allow_mixed: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            workers,
            deterministic,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.deterministic |= deterministic;
            if cfg.seed.is_none() && !cfg.deterministic {
                let nanos = SystemTime::now().duration_since(UNIX_EPOCH)?.as_nanos();
                cfg.seed = Some(nanos as u64);
            }
            cfg.validate()?;
            let seed = cfg.seed.expect("seed resolved above");
            let dir = out.unwrap_or_else(|| runner::run_dir_for(&cfg, seed, &runner::output_root(&cfg)));
            log::info!("running {} on {} into {}", cfg.method.name(), cfg.dataset.name, dir.display());
            let summary = runner::run(&cfg, &dir).with_context(|| format!("run {}", dir.display()))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Generate { spec, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let seed = match table.remove("seed") {
                Some(v) => v.as_integer().context("seed must be an integer")? as u64,
                None => 1,
            };
            let params: SyntheticSpec = table.try_into().with_context(|| format!("parsing {}", spec.display()))?;
            let s = synth::generate(&params, seed)?;
            let files = synth::write(&s, &out)?;
            println!(
                "wrote {} and {} ({} nodes, {} edges, oracle accuracy {:.4})",
                files.content.display(),
                files.cites.display(),
                s.oracle.nodes,
                s.oracle.edges,
                s.oracle.oracle_accuracy
            );
        }
        Command::Report { dirs, out, allow_mixed } => {
            let table = runner::report(&dirs, &out, allow_mixed)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}
