//! Command-line front end.
//!
//! Every verb writes into its `--out` directory: a frozen `config.cfg`, a
//! `manifest.json` naming the dataset fingerprint, seed and config sources,
//! and the verb's own artifacts. Failures print one line
//! `error[<category>] <message>` on stderr and exit nonzero.

mod report;
mod runs;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

pub use report::{collect_runs, report, CollectedRuns, ReportOutput};
pub use runs::{
    load_config, load_run, load_split, negatives_path, relative_to, resolve_config, RunManifest, RunMetrics, EVAL_SEED,
    SPLIT_SEED,
};

#[derive(Debug, Parser)]
#[command(name = "clardrec", version, about = "Search-enhanced recommendation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest raw logs and write a split dataset.
    Preprocess(RunArgs),
    /// Generate synthetic two-domain logs with planted factors.
    Synth(SynthArgs),
    /// Train one configuration and evaluate it on the test cases.
    Train(TrainArgs),
    /// Re-evaluate a finished run from its checkpoint.
    Eval(EvalArgs),
    /// Train the full model and one run per dropped module.
    Ablate(RunArgs),
    /// Grid over lambda, alpha and beta.
    Sweep(SweepArgs),
    /// Write item and user representations of a run.
    #[command(name = "export-repr")]
    ExportRepr(ExportArgs),
    /// Merge run directories into median tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Config file or `preset:<dataset>/<backbone>`; repeatable, applied in order.
    #[arg(long, value_name = "PATH")]
    pub config: Vec<PathBuf>,
    /// Override one key; applied after the config files.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Modules to drop: any of CD,FA,DA,CS.
    #[arg(long, value_name = "LIST")]
    pub drop: Option<String>,
    /// clardrec, backbone or aug.
    #[arg(long)]
    pub variant: Option<String>,
    /// as-written or motivation.
    #[arg(long)]
    pub convention: Option<String>,
    #[arg(long)]
    pub da_grad_through_omega: bool,
}

impl RunArgs {
    /// The `--set` list followed by the dedicated flags, as overrides.
    pub fn overrides(&self, with_drop: bool) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(v) = &self.variant {
            o.push(format!("variant={v}"));
        }
        if let Some(c) = &self.convention {
            o.push(format!("convention={c}"));
        }
        if self.da_grad_through_omega {
            o.push("da_grad_through_omega=true".into());
        }
        if with_drop {
            if let Some(d) = &self.drop {
                o.push(format!("ablations={d}"));
            }
        }
        o
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Continue from the saved training state in `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Generator parameter such as `n_users=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// A directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Checkpoint manifest; defaults to the best checkpoint of the run.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// A directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub items: usize,
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directories searched recursively for runs.
    #[arg(long, value_name = "DIR", num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Where the tables go; defaults to the first `--runs` directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Executes a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => runs::preprocess_cmd(&a),
        Command::Synth(a) => runs::synth_cmd(&a),
        Command::Train(a) => runs::train_cmd(&a.run, a.resume).map(|_| ()),
        Command::Eval(a) => runs::eval_cmd(&a),
        Command::Ablate(a) => runs::ablate_cmd(&a),
        Command::Sweep(a) => runs::sweep_cmd(&a),
        Command::ExportRepr(a) => runs::export_cmd(&a),
        Command::Report(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.runs[0].clone());
            let r = report(&a.runs, &out)?;
            print!("{}", r.text);
            Ok(())
        }
    }
}

/// The single line printed for a failure.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    let prefix = format!("{} error", e.category());
    let msg = msg.strip_prefix(&prefix).map_or(msg.as_str(), |m| m.trim_start_matches([':', ' ']));
    format!("error[{}] {}", e.category(), msg.trim())
}

/// Parses `argv` (program name first), runs it and returns the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("{}", error_line(&Error::Usage(first.to_string())));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}
