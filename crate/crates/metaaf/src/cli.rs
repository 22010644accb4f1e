//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use metaaf_core::train::Mode;

use crate::commands;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exec::Pool;
use crate::selfcheck;

#[derive(Debug, Parser)]
#[command(name = "metaaf", version, about = "Echo cancellation with a learned, classification-trained update rule")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Single worker and ordered reductions, for byte-identical reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene corpus (manifest, labels, optional audio).
    GenData(ConfigArg),
    /// Pretrain the keyword classifier on playback-free examples.
    TrainKws(ConfigArg),
    /// Train the optimizer against a frozen classifier (lambda from config).
    TrainMeta(ConfigArg),
    /// Train optimizer and classifier together.
    TrainJoint(ConfigArg),
    /// Grid-search the diagonal Kalman baseline on the validation fold.
    TuneKf(ConfigArg),
    /// Evaluate cancellers feeding the classifier.
    Eval(ConfigArg),
    /// Cross every trained optimizer with every classifier head.
    SwapMatrix(ConfigArg),
    /// Run the built-in oracle, gradient and loss suites.
    Selfcheck,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<String> {
    let pool = Pool::new(if cli.deterministic { 1 } else { cli.threads })?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&a.load()?, &pool),
        Command::TrainKws(a) => commands::train_kws_cmd(&a.load()?, &pool),
        Command::TrainMeta(a) => commands::train_canceller_cmd(&a.load()?, Mode::Frozen, &pool),
        Command::TrainJoint(a) => commands::train_canceller_cmd(&a.load()?, Mode::Joint, &pool),
        Command::TuneKf(a) => commands::tune_kf(&a.load()?, &pool),
        Command::Eval(a) => commands::eval_cmd(&a.load()?, &pool),
        Command::SwapMatrix(a) => commands::swap_matrix_cmd(&a.load()?, &pool),
        Command::Selfcheck => {
            let checks = selfcheck::all();
            let mut out = String::new();
            for c in &checks {
                out += &format!("{} {} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                eprint!("{out}");
                return Err(Error::Core(metaaf_core::Error::Numeric(format!("{failed} self-checks failed"))));
            }
            Ok(out + &format!("{} checks passed", checks.len()))
        }
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
