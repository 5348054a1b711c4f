use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ou_design::Criterion;
use ou_design_cli::{
    init_threads, read_config, run, run_figure1, Command, ConfigError, RunConfig, RunError,
};

#[derive(Parser)]
#[command(
    name = "ou-design",
    version,
    about = "Fisher information and sampling designs for linear SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Mean and variance at the design times.
    Moments(Common),
    /// Exact Fisher information of one design.
    Fim(Common),
    /// Limiting information over the domain.
    Asymptotic(Common),
    /// Ultimate efficiency of equidistant or given designs.
    Ueff(Common),
    /// Optimised designs for each n and criterion.
    Optimize(Common),
    /// Affinity test for a transformed nonlinear SDE.
    CheckOutype(Common),
    /// Monte-Carlo comparison of MLE variances with the Cramér-Rao bound.
    McValidate(Common),
    /// Efficiency curves of the four Gompertz panels.
    Figure1(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (directory for figure1). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated design sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_criterion)]
    criterion: Option<Criterion>,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: ou_design::Error| e.to_string())
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::Moments(c) => (Command::Moments, c),
            Sub::Fim(c) => (Command::Fim, c),
            Sub::Asymptotic(c) => (Command::Asymptotic, c),
            Sub::Ueff(c) => (Command::Ueff, c),
            Sub::Optimize(c) => (Command::Optimize, c),
            Sub::CheckOutype(c) => (Command::CheckOutype, c),
            Sub::McValidate(c) => (Command::McValidate, c),
            Sub::Figure1(c) => (Command::Figure1, c),
        }
    }
}

fn load(cmd: Command, args: Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(n) = args.n {
        cfg.n = Some(n);
        cfg.design = None;
    }
    if let Some(c) = args.criterion {
        cfg.criteria = vec![c];
    }
    if let Some(o) = args.out {
        cfg.output = Some(o);
    }
    cfg.validate()?;
    cfg.require(cmd)?;
    if cmd != Command::Figure1 {
        if let Some(parent) = cfg.output.as_deref().and_then(|p| p.parent()) {
            if !parent.as_os_str().is_empty() && !parent.is_dir() {
                return Err(ConfigError::Field {
                    field: "output".into(),
                    message: format!("directory `{}` does not exist", parent.display()),
                });
            }
        }
    }
    Ok(cfg)
}

fn execute(cmd: Command, args: Common) -> Result<(), RunError> {
    init_threads()?;
    let cfg = load(cmd, args)?;
    if cmd == Command::Figure1 {
        let dir = cfg
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from("figure1"));
        for p in run_figure1(&dir)? {
            eprintln!("wrote {}", p.display());
        }
        return Ok(());
    }
    let out = run(cmd, &cfg)?;
    match &cfg.output {
        Some(p) => out.table.write_file(p)?,
        None => out.table.write_stdout()?,
    }
    if let Some(s) = out.summary {
        eprintln!("{s}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let (cmd, args) = Cli::parse().command.split();
    match execute(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ou-design {cmd}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
