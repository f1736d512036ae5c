//! Command-line driver: reproducible experiments with JSON reports and CSV
//! fields. Settings resolve as defaults, then `--config FILE`, then flags.

pub mod commands;
pub mod config;
pub mod expr;
pub mod output;

use std::ffi::OsString;
use std::io::Write;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use commands::{CliError, EXIT_CONFIG};
use config::{ConfigError, RunConfig, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sumhess", version, about = "Sum Hessian equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(ClapSubcommand, Debug, Clone, Copy)]
enum Command {
    /// Randomized sweeps of the symmetric-function inequalities.
    Identities,
    /// Dirichlet problem on a box.
    Solve,
    /// Weighted second-derivative suprema under grid refinement.
    Estimate,
    /// Closed-form example, quadratic solutions and scaling checks.
    Rigidity,
}

/// Every flag is kept as text and parsed by the same code as the config file.
#[derive(Args, Debug, Default)]
struct Flags {
    /// `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<String>,
    /// Interior nodes per axis.
    #[arg(long, global = true)]
    cells: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    lo: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    hi: Option<String>,
    /// Right-hand side over x0 x1 x2 (x y z), u and g2 = |Du|².
    #[arg(long, global = true, allow_hyphen_values = true)]
    rhs: Option<String>,
    /// Dirichlet trace over x0 x1 x2.
    #[arg(long, global = true, allow_hyphen_values = true)]
    boundary: Option<String>,
    #[arg(long, global = true)]
    rtol: Option<String>,
    #[arg(long, global = true)]
    max_iter: Option<String>,
    #[arg(long, global = true)]
    samples: Option<String>,
    /// Comma-separated exponents β of (-u)^β Δu.
    #[arg(long, global = true)]
    betas: Option<String>,
    /// Comma-separated δ of (-u)^{1+δ} Δu.
    #[arg(long, global = true)]
    deltas: Option<String>,
    #[arg(long, global = true)]
    levels: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Comma-separated report names for `identities`.
    #[arg(long, global = true)]
    reports: Option<String>,
    /// Negates every checked margin (negative control).
    #[arg(long, global = true)]
    flip_signs: bool,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("n", &self.n),
            ("k", &self.k),
            ("alpha", &self.alpha),
            ("cells", &self.cells),
            ("lo", &self.lo),
            ("hi", &self.hi),
            ("rhs", &self.rhs),
            ("boundary", &self.boundary),
            ("rtol", &self.rtol),
            ("max_iter", &self.max_iter),
            ("samples", &self.samples),
            ("betas", &self.betas),
            ("deltas", &self.deltas),
            ("levels", &self.levels),
            ("seed", &self.seed),
            ("out", &self.out),
            ("reports", &self.reports),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

fn resolve(cli: &Cli) -> Result<(RunConfig, Option<usize>), ConfigError> {
    let mut cfg = RunConfig::default();
    let mut from_file = false;
    let mut threads = None;
    if let Some(path) = &cli.flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        threads = threads_from_text(&text)?;
        cfg.apply_text(&text)?;
        from_file = text.lines().any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("subcommand"));
    }
    for (key, value) in cli.flags.pairs() {
        cfg.set(key, value)?;
    }
    if cli.flags.flip_signs {
        cfg.flip_signs = true;
    }
    match cli.command {
        Some(c) => {
            cfg.subcommand = match c {
                Command::Identities => Subcommand::Identities,
                Command::Solve => Subcommand::Solve,
                Command::Estimate => Subcommand::Estimate,
                Command::Rigidity => Subcommand::Rigidity,
            }
        }
        None if from_file => {}
        None => return Err(ConfigError::Invalid("no subcommand given on the command line or in --config".into())),
    }
    if let Some(t) = threads_from_env()? {
        threads = Some(t);
    }
    Ok((cfg, threads))
}

fn parse_threads(source: &str, v: &str) -> Result<usize, ConfigError> {
    match v.trim().parse::<usize>() {
        Ok(t) if t > 0 => Ok(t),
        _ => Err(ConfigError::Value {
            key: source.into(),
            value: v.into(),
        }),
    }
}

fn threads_from_text(text: &str) -> Result<Option<usize>, ConfigError> {
    let mut out = None;
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("");
        if let Some((k, v)) = body.split_once('=') {
            if k.trim() == "threads" {
                out = Some(parse_threads("threads", v)?);
            }
        }
    }
    Ok(out)
}

/// `SUMHESS_THREADS` caps the worker pool.
fn threads_from_env() -> Result<Option<usize>, ConfigError> {
    match std::env::var("SUMHESS_THREADS") {
        Ok(v) => parse_threads("SUMHESS_THREADS", &v).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(ConfigError::Value {
            key: "SUMHESS_THREADS".into(),
            value: "<non-unicode>".into(),
        }),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let (cfg, threads) = match resolve(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(t) = threads {
        // Fails only if a global pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match commands::execute(&cfg) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            for line in &outcome.summary {
                let _ = writeln!(stdout, "{line}");
            }
            for line in &outcome.diagnostics {
                eprintln!("{line}");
            }
            outcome.code
        }
        Err(e) => {
            let code = e.exit_code();
            let kind = match (&e, code) {
                (CliError::Output(_), _) => "output error",
                (_, EXIT_CONFIG) => "config error",
                _ => "solver error",
            };
            eprintln!("{kind}: {e}");
            code
        }
    }
}
