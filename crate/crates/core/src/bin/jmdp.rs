use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jmdp::config::RunConfig;
use jmdp::runner::{cmd_analyze, cmd_eval, cmd_validate_env, error_exit_code, Outcome};
use jmdp::Result;

#[derive(Parser)]
#[command(name = "jmdp", version, about = "Joint return moments for finite MDPs in exogenous-noise form")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm (dp2, dpn, incremental or projected).
    Eval(RunArgs),
    /// Gap statistics, correlations, ECDF ratios, coupling report and oracle comparison.
    Analyze(RunArgs),
    /// Check an environment file and report whether its dynamics are coupled.
    ValidateEnv {
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo estimation.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    num_updates: Option<u64>,
    #[arg(long)]
    num_rollouts: Option<usize>,
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    } else if cfg.out_dir.is_relative() {
        cfg.out_dir = base.join(&cfg.out_dir);
    }
    if let Some(g) = args.gamma {
        cfg.set_gamma(g)?;
    }
    if let Some(e) = args.epsilon {
        cfg.set_epsilon(e)?;
    }
    if let Some(m) = args.max_iter {
        cfg.set_max_iter(m)?;
    }
    if let Some(n) = args.num_updates {
        cfg.set_num_updates(n)?;
    }
    if let Some(n) = args.num_rollouts {
        cfg.analysis.num_rollouts = n;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(args: &RunArgs, f: fn(&RunConfig, &mut dyn std::io::Write) -> Result<Outcome>) -> Result<Outcome> {
    let cfg = load(args)?;
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| jmdp::Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    f(&cfg, &mut std::io::stderr())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Eval(a) => run(a, cmd_eval).map(Outcome::exit_code),
        Command::Analyze(a) => run(a, cmd_analyze).map(Outcome::exit_code),
        Command::ValidateEnv { path } => cmd_validate_env(path).map(|s| {
            print!("{s}");
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
