//! `harnack-lab`: runs scenarios from a config file and writes CSV/JSON
//! artifacts plus a `manifest.json` with digests and check results.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::{Check, RunContext};
use crate::config::{Config, Value};
use crate::output::{Manifest, OutputDir};

/// A malformed or inconsistent configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "harnack-lab", version, about = "Numerical experiments for a degenerate drift-diffusion operator on the half-space")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scenario file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HARNACK_LAB_THREADS")]
    pub threads: Option<usize>,
    /// Also exit with code 3 on soft warnings.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Config override, e.g. `--set params.c=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Evolve an initial datum and write snapshots.
    Solve,
    /// Numerical kernel from a point source, with a fitted envelope.
    Kernel,
    /// Fit two-sided Gaussian envelope constants with a held-out set.
    FitBounds,
    /// Fit the Harnack constant on random pairs.
    Harnack {
        /// Check the sharp constant-one inequality instead (a = 0, c >= 0).
        #[arg(long)]
        garofalo: bool,
    },
    /// Scan the supersolution residual of the barrier.
    Barrier,
    /// Measure scaling, envelope and doubling laws.
    Volume,
    /// Monte Carlo endpoint density against the solver.
    Mc,
    /// Run every scenario into subdirectories and summarise.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Kernel => "kernel",
            Command::FitBounds => "fit-bounds",
            Command::Harnack { .. } => "harnack",
            Command::Barrier => "barrier",
            Command::Volume => "volume",
            Command::Mc => "mc",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub out_dir: Option<PathBuf>,
    pub message: String,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            return Outcome { code, out_dir: None, message: e.render().to_string() };
        }
    };
    let mut out_dir = None;
    match execute(&cli, &mut out_dir) {
        Ok((checks, warnings, dir)) => {
            let failed = checks.iter().any(|c| !c.passed);
            let mut message = String::new();
            for c in &checks {
                message.push_str(&format!("{} {}: {}\n", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail));
            }
            for w in &warnings {
                message.push_str(&format!("warn {w}\n"));
            }
            message.push_str(&format!("artifacts in {}\n", dir.display()));
            let code = if failed || (cli.global.strict && !warnings.is_empty()) { EXIT_CHECK_FAILED } else { EXIT_OK };
            Outcome { code, out_dir: Some(dir), message }
        }
        Err(e) => Outcome { code: exit_code(&e), out_dir, message: format!("error: {e:#}\n") },
    }
}

pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(core) = cause.downcast_ref::<harnack_core::Error>() {
            return match core {
                harnack_core::Error::InvalidParams(_) | harnack_core::Error::InvalidArgument(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_NUMERICAL
}

fn load_config(global: &GlobalArgs) -> Result<Config> {
    let mut cfg = match &global.config {
        Some(path) => Config::load(path).map_err(|e| ConfigError(format!("{e:#}")))?,
        None => Config::default(),
    };
    for s in &global.set {
        cfg.set(s).map_err(|e| ConfigError(format!("{e:#}")))?;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, out_dir: &mut Option<PathBuf>) -> Result<(Vec<Check>, Vec<String>, PathBuf)> {
    let cfg = load_config(&cli.global)?;
    let sub = cli.command.name();
    let wanted = cfg.string("subcommand", sub).map_err(|e| ConfigError(format!("{e:#}")))?;
    if wanted != sub {
        return Err(ConfigError(format!("config is for `{wanted}`, but `{sub}` was requested")).into());
    }
    let seed = match cli.global.seed {
        Some(s) => s,
        None => cfg.u64("seed", 1).map_err(|e| ConfigError(format!("{e:#}")))?,
    };
    let root = match &cli.global.out {
        Some(p) => p.clone(),
        None => PathBuf::from(cfg.string("out", &format!("harnack-out/{sub}")).map_err(|e| ConfigError(format!("{e:#}")))?),
    };
    *out_dir = Some(root.clone());
    let threads = cli.global.threads.unwrap_or(0);
    if cli.global.threads == Some(0) {
        return Err(ConfigError("--threads must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let threads = pool.current_num_threads();
    let start = Instant::now();
    let (checks, warnings, artifacts) = pool.install(|| -> Result<_> {
        let mut ctx = RunContext::new(&cfg, seed, OutputDir::create(&root)?);
        dispatch(&cli.command, &mut ctx)?;
        Ok((ctx.checks, ctx.warnings, ctx.out.artifacts().to_vec()))
    })?;
    let manifest = Manifest {
        tool: "harnack-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.into(),
        seed,
        threads,
        config: effective_config(&cfg, sub, seed),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        checks: checks.clone(),
        warnings: warnings.clone(),
        artifacts,
    };
    let out = OutputDir::create(&root)?;
    output::write_atomic(&out.path().join("effective.cfg"), Config::render(&manifest.config).as_bytes())?;
    out.write_manifest(&manifest)?;
    Ok((checks, warnings, root))
}

fn effective_config(cfg: &Config, sub: &str, seed: u64) -> std::collections::BTreeMap<String, Value> {
    let mut map = cfg.effective();
    map.insert("subcommand".into(), Value::Str(sub.into()));
    map.insert("seed".into(), Value::Num(seed as f64));
    map
}

fn dispatch(cmd: &Command, ctx: &mut RunContext) -> Result<()> {
    match cmd {
        Command::Solve => commands::solve(ctx),
        Command::Kernel => commands::kernel(ctx),
        Command::FitBounds => commands::fit_bounds(ctx),
        Command::Harnack { garofalo } => commands::harnack(ctx, *garofalo),
        Command::Barrier => commands::barrier(ctx),
        Command::Volume => commands::volume(ctx),
        Command::Mc => commands::mc(ctx),
        Command::Report => report(ctx),
    }
}

fn report(ctx: &mut RunContext) -> Result<()> {
    let parts: [(&str, Command); 7] = [
        ("solve", Command::Solve),
        ("kernel", Command::Kernel),
        ("fit-bounds", Command::FitBounds),
        ("harnack", Command::Harnack { garofalo: false }),
        ("barrier", Command::Barrier),
        ("volume", Command::Volume),
        ("mc", Command::Mc),
    ];
    let root = ctx.out.path().to_path_buf();
    let mut summary = Vec::new();
    let mut text = String::new();
    for (name, cmd) in parts {
        let mut sub = RunContext::new(ctx.cfg, ctx.seed, OutputDir::create(&root.join(name))?);
        let result = dispatch(&cmd, &mut sub);
        let error = match result {
            Ok(()) => None,
            Err(e) if exit_code(&e) == EXIT_CONFIG => return Err(e),
            Err(e) => Some(format!("{e:#}")),
        };
        text.push_str(&format!("[{name}]\n"));
        if let Some(err) = &error {
            text.push_str(&format!("  error: {err}\n"));
            ctx.checks.push(Check { name: format!("{name}/completed"), passed: false, detail: err.clone() });
        }
        for c in &sub.checks {
            text.push_str(&format!("  {} {}: {}\n", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail));
            ctx.checks.push(Check { name: format!("{name}/{}", c.name), passed: c.passed, detail: c.detail.clone() });
        }
        for w in &sub.warnings {
            text.push_str(&format!("  warn {w}\n"));
            ctx.warnings.push(format!("{name}: {w}"));
        }
        for a in sub.out.artifacts() {
            ctx.out.record(&Path::new(name).join(&a.file).to_string_lossy(), a);
        }
        summary.push(serde_json::json!({"scenario": name, "error": error, "checks": sub.checks}));
    }
    ctx.out.write_json("report.json", &summary)?;
    ctx.out.write("report.txt", text.as_bytes())?;
    Ok(())
}
