//! Command-line driver: world generation, fingerprint survey and training,
//! the three localization runs, and evaluation, all under one output
//! directory with a content-hashed manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod layout;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fuselocate::eval::Method;

use crate::commands::{Artifacts, Context};
use crate::error::{CliError, Result, EXIT_CONFIG, EXIT_OK};
use crate::layout::Layout;
use crate::manifest::{config_bytes, Manifest};

#[derive(Debug, Parser)]
#[command(name = "fuselocate", version, about = "Simulated indoor localization experiments")]
pub struct Cli {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N", default_value_t = 1,
          value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = "FUSELOCATE_OUT")]
    pub out: Option<PathBuf>,
    /// Config override, e.g. `--set ekf.sigma_wifi=0.8` or `--set floors.0.name=lab`.
    #[arg(long = "set", global = true, value_name = "K=V")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Floors, access points, ground truth and sensor logs.
    Generate,
    /// Fingerprint survey, training, prediction and evaluation.
    Fingerprint {
        #[command(subcommand)]
        action: FingerprintAction,
    },
    /// Runs localization methods over the run matrix.
    Run {
        /// Method to run (repeatable); defaults to the config's methods.
        #[arg(long, value_name = "wifi|lidar_imu|ekf", value_parser = parse_method)]
        method: Vec<Method>,
    },
    /// Error tables, overlays and CDFs from the existing runs.
    Evaluate,
    /// Every stage in order.
    All,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum FingerprintAction {
    Collect,
    Train,
    Predict,
    Eval,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(&s.replace('-', "_")).ok_or_else(|| format!("unknown method `{s}` (wifi, lidar_imu, ekf)"))
}

struct Session {
    ctx: Context,
    manifest: Manifest,
}

impl Session {
    fn stage(&mut self, name: &str, f: impl FnOnce(&Context) -> Result<Artifacts>) -> Result<()> {
        let started = Instant::now();
        let artifacts = f(&self.ctx)?;
        let secs = started.elapsed().as_secs_f64();
        println!("{name}: {} artifacts in {secs:.2} s", artifacts.len());
        self.manifest.record(name, secs, artifacts);
        self.manifest.save(&self.ctx.layout.manifest())
    }

    fn run_methods(&mut self, methods: &[Method]) -> Result<()> {
        let started = Instant::now();
        let per_method = commands::run(&self.ctx, methods)?;
        let secs = started.elapsed().as_secs_f64();
        for (m, artifacts) in per_method {
            let name = format!("run.{}", m.name());
            println!("{name}: {} artifacts", artifacts.len());
            self.manifest.record(&name, secs, artifacts);
        }
        println!("run: {secs:.2} s");
        self.manifest.save(&self.ctx.layout.manifest())
    }

    fn evaluate(&mut self) -> Result<()> {
        self.stage("evaluate", |ctx| {
            let (artifacts, notes) = report::evaluate(ctx)?;
            for n in notes {
                eprintln!("warning: {n}");
            }
            Ok(artifacts)
        })
    }

    fn fingerprint(&mut self, action: FingerprintAction) -> Result<()> {
        match action {
            FingerprintAction::Collect => self.stage("fingerprint.collect", commands::fingerprint_collect),
            FingerprintAction::Train => self.stage("fingerprint.train", commands::fingerprint_train),
            FingerprintAction::Predict => self.stage("fingerprint.predict", commands::fingerprint_predict),
            FingerprintAction::Eval => self.stage("fingerprint.eval", commands::fingerprint_eval),
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = config::resolve(cli.config.as_deref(), &cli.set, cli.seed)?;
    let root = config::output_dir(cli.out.as_deref(), &cfg);
    commands::ensure_root(&root)?;
    let layout = Layout::new(&root, &cfg);
    let resolved = layout.resolved_config();
    std::fs::write(&resolved, config_bytes(&cfg)).map_err(|e| CliError::io("write", &resolved, e))?;
    let manifest = Manifest::load_or_new(&layout.manifest(), &cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(usize::from(cli.jobs))
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let mut session = Session {
        ctx: Context { cfg, layout },
        manifest,
    };
    pool.install(|| match cli.command {
        Command::Generate => session.stage("generate", commands::generate),
        Command::Fingerprint { action } => session.fingerprint(action),
        Command::Run { method } => {
            let methods = if method.is_empty() { session.ctx.cfg.methods.clone() } else { method };
            session.run_methods(&methods)
        }
        Command::Evaluate => session.evaluate(),
        Command::All => {
            session.stage("generate", commands::generate)?;
            for a in [
                FingerprintAction::Collect,
                FingerprintAction::Train,
                FingerprintAction::Predict,
                FingerprintAction::Eval,
            ] {
                session.fingerprint(a)?;
            }
            let methods = session.ctx.cfg.methods.clone();
            session.run_methods(&methods)?;
            session.evaluate()
        }
    })
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
