use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use okselect::harness::{
    emit_report, render_table, run_experiment, Algorithm, DataFormat, Param, RunConfig,
};
use okselect::{LossKind, Task};

#[derive(Parser)]
#[command(
    name = "okselect",
    version,
    about = "Online kernel selection under bandit feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print the result table.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    #[value(alias = "classification")]
    Cls,
    #[value(alias = "regression")]
    Reg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Libsvm,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Zero-based label column for CSV input.
    #[arg(long)]
    label_col: Option<usize>,
    /// Comma-separated: oks, okspp, ioks, rf-oks, rf-okspp, rf-ioks.
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<String>>,
    #[arg(long)]
    loss: Option<String>,
    /// Comma-separated Gaussian widths.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<f64>>,
    /// Random features per arm.
    #[arg(long)]
    features: Option<usize>,
    /// Norm-ball radius, or "auto".
    #[arg(long)]
    radius: Option<String>,
    /// Largest loss used by the selectors, or "auto".
    #[arg(long)]
    ell_max: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    perms: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    /// Directory for per-round traces.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Directory for results.json, results.txt and timings.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(args: RunArgs) -> okselect::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = args.data {
        cfg.data = Some(d);
    }
    if let Some(f) = args.format {
        cfg.format = match f {
            FormatArg::Libsvm => DataFormat::Libsvm,
            FormatArg::Csv => DataFormat::Csv,
        };
    }
    if let Some(t) = args.task {
        cfg.task = match t {
            TaskArg::Cls => Task::Classification,
            TaskArg::Reg => Task::Regression,
        };
    }
    if let Some(c) = args.label_col {
        cfg.label_column = Some(c);
    }
    if let Some(list) = args.algo {
        cfg.algorithms = list
            .iter()
            .map(|s| s.trim().parse::<Algorithm>())
            .collect::<okselect::Result<_>>()?;
    }
    if let Some(l) = args.loss {
        cfg.loss = Some(l.parse::<LossKind>()?);
    }
    if let Some(w) = args.widths {
        cfg.widths = w;
    }
    if let Some(d) = args.features {
        cfg.features = d;
    }
    if let Some(r) = args.radius {
        cfg.radius = r.parse::<Param>()?;
    }
    if let Some(e) = args.ell_max {
        cfg.ell_max = e.parse::<Param>()?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.perms {
        cfg.perms = p;
    }
    if args.limit.is_some() {
        cfg.limit = args.limit;
    }
    if args.trace.is_some() {
        cfg.trace = args.trace;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Command::Run(args) = Cli::parse().command;
    let result = build_config(args).and_then(|cfg| {
        let table = run_experiment(&cfg)?;
        match &cfg.out {
            Some(dir) => emit_report(&table, dir),
            None => render_table(&table, true),
        }
    });
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // The message already carries the chain of causes.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
