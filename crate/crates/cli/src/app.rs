//! Argument parsing and dispatch.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use depthnull::restore::Mode;
use depthnull::wire::{serve_stream, StubConfig, StubMode, StubServer};

use crate::commands::{self, Classify, EvalArgs, Failure, Outcome, PipelineArgs, ProjectArgs, RestoreArgs, Run};
use crate::config::{DenoiserKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "depthnull", version, about = "Point-cloud patch projection and diffusion depth restoration")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed shared by all stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-patch parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true, value_enum)]
    pub denoiser: Option<DenoiserKind>,
    /// Remote denoiser endpoint: `host:port`, `tcp://host:port` or `cmd:<program> <args>`.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Masked,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubArg {
    Zero,
    Identity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic masonry wall cloud and its surface description.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample patches from a cloud and render normalized depth images.
    Project {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `surface.json` written by `synth`; enables ground truth output.
        #[arg(long)]
        surface: Option<PathBuf>,
        /// Ground-truth directory (default `<out>/gt`).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Simulate sparse noisy observations with `restore.keep_fraction`
        /// and noise `restore.sigma_y`.
        #[arg(long)]
        degrade: bool,
        /// Overrides `restore.keep_fraction`; implies `--degrade`.
        #[arg(long)]
        keep_fraction: Option<f64>,
    },
    /// Restore every patch of a patch directory.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score restored patches against ground truth.
    Eval {
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Predicted instance masks, one subdirectory per patch.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Patch directory holding the observations that were restored.
        #[arg(long)]
        observed: Option<PathBuf>,
        /// Report path (default `<restored>/eval.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run synth, project with degradation, restore and eval.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration.
    ShowConfig,
    /// Loopback denoiser server speaking the frame protocol, for testing.
    StubServer {
        #[arg(long, value_enum, default_value = "zero")]
        reply: StubArg,
        /// `stdio` or a socket address.
        #[arg(long, default_value = "stdio")]
        listen: String,
    },
}

/// Effective configuration: built-in defaults, then the file, then flags.
pub fn resolve_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).input()?;
            toml::from_str(&text).with_context(|| path.display().to_string()).input()?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.diffusion.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.restore.mode = match mode {
            ModeArg::Masked => Mode::Masked,
            ModeArg::Vanilla => Mode::Vanilla,
        };
    }
    if let Some(kind) = cli.denoiser {
        cfg.denoiser.kind = kind;
    }
    if let Some(ep) = &cli.endpoint {
        cfg.denoiser.endpoint = ep.clone();
    }
    if let Command::Project { keep_fraction: Some(k), .. } = &cli.command {
        cfg.restore.keep_fraction = *k;
    }
    cfg.validate().input()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Outcome<()> {
    let config = resolve_config(&cli)?;
    let run = Run::new(config, cli.workers)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&run, &out).map(drop),
        Command::Project { cloud, out, surface, gt, degrade, keep_fraction } => {
            let degrade = (degrade || keep_fraction.is_some()).then_some(run.config.restore.keep_fraction);
            commands::project(&run, &ProjectArgs { cloud, out, surface, gt, degrade }).map(drop)
        }
        Command::Restore { input, out } => {
            commands::require_dir(&input)?;
            commands::restore_cmd(&run, &RestoreArgs { input, out }).map(drop)
        }
        Command::Eval { restored, gt, masks, observed, out } => {
            for dir in [Some(&restored), Some(&gt), masks.as_ref(), observed.as_ref()].into_iter().flatten() {
                commands::require_dir(dir)?;
            }
            commands::eval(&run, &EvalArgs { restored, gt, masks, observed, out }).map(drop)
        }
        Command::Pipeline { out } => {
            let manifest = commands::pipeline(&run, &PipelineArgs { out: out.clone() })?;
            println!("pipeline: {}", serde_json::to_string(&manifest["metrics"]).expect("json"));
            println!("manifest: {}", out.join("run.json").display());
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", run.config.to_toml());
            println!("# hash {}", run.config.hash());
            Ok(())
        }
        Command::StubServer { reply, listen } => {
            let mode = match reply {
                StubArg::Zero => StubMode::Zero,
                StubArg::Identity => StubMode::Identity,
            };
            let config = StubConfig { schedule: run.config.schedule(), ..StubConfig::new(mode) };
            if listen == "stdio" {
                serve_stream(config, std::io::stdin().lock(), std::io::stdout().lock()).runtime()
            } else {
                let server = StubServer::bind(listen.as_str(), config).input()?;
                println!("{}", server.endpoint());
                loop {
                    std::thread::park();
                }
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            report(&f);
            f.exit_code()
        }
    }
}

fn report(f: &Failure) {
    let kind = match f {
        Failure::Input(_) => "input error",
        Failure::Runtime(_) => "error",
    };
    eprintln!("{kind}: {:#}", f.error());
}
