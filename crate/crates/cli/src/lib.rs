pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_override, RunConfig, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "ckgr", version, about = "Dual collaborative knowledge-graph recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for batch and evaluation fan-out.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, short, default_value = "ckgr-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(Common),
    /// Parse, convert and filter an interaction file.
    Ingest(Common),
    /// Split the data and write both collaborative graphs.
    BuildGraph(Common),
    /// Train a model and write a checkpoint.
    Train(Common),
    /// Precision/Recall@K of a checkpoint and two baselines on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Top-K items for one user as `rank<TAB>item<TAB>score`.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train and test one model per network depth.
    SweepLayers {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        layers: Vec<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Ingest(c) | Command::BuildGraph(c) | Command::Train(c) => c,
            Command::Evaluate { common, .. }
            | Command::Recommend { common, .. }
            | Command::SweepLayers { common, .. } => common,
        }
    }
}

fn resolve_config(cmd: &Command) -> ckgr_core::Result<RunConfig> {
    let common = cmd.common();
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Command::Recommend { k: Some(k), .. } = cmd {
        overrides.push(("k".into(), k.to_string()));
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    RunConfig::resolve(common.config.as_deref(), env_seed.as_deref(), &overrides)
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> ckgr_core::Result<()> {
    let cfg = resolve_config(cmd)?;
    let common = cmd.common();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers.max(1))
        .build()
        .map_err(|e| ckgr_core::Error::Config(format!("cannot start {} workers: {e}", common.workers)))?;
    let dir = &common.out;
    // Buffered so the pool closure only captures `Send` data.
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| {
        let o = &mut buf;
        match cmd {
            Command::Synth(_) => commands::cmd_synth(&cfg, dir, o),
            Command::Ingest(_) => commands::cmd_ingest(&cfg, dir, o),
            Command::BuildGraph(_) => commands::cmd_build_graph(&cfg, dir, o),
            Command::Train(_) => commands::cmd_train(&cfg, dir, o),
            Command::Evaluate { checkpoint, .. } => commands::cmd_evaluate(&cfg, checkpoint, dir, o).map(|_| ()),
            Command::Recommend { checkpoint, user, .. } => commands::cmd_recommend(&cfg, checkpoint, user, dir, o),
            Command::SweepLayers { layers, .. } => commands::cmd_sweep_layers(&cfg, layers, dir, o).map(|_| ()),
        }
    });
    out.write_all(&buf).map_err(|source| ckgr_core::Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })?;
    result
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 for invalid input or configuration, 2 for runtime faults.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
