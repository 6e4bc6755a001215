use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vve_core::config::{PipelineConfig, CONFIG_ENV};
use vve_core::link::LinkError;
use vve_core::pipeline::{self, Policy};
use vve_core::CoreError;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("VVE_GIT_REV"));

#[derive(Parser)]
#[command(name = "vvepipe", version = VERSION, about = "MIL training, HIL runs and VVE trace replay")]
struct Cli {
    /// Configuration file; defaults apply to every key it leaves out.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set scenario.v_set=12`. Repeatable; applied
    /// after the file and before the dedicated flags.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Controller,
    Environment,
    /// Both halves in this process over an in-memory link.
    Loopback,
}

#[derive(Subcommand)]
enum Command {
    /// Train the braking agent offline.
    MilTrain {
        #[arg(long)]
        seed: Option<u64>,
        /// Same as `--set agent.episodes=N`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy rollouts of a model or a scripted stand-in.
    MilEval {
        /// Model file, or one of hard-brake, never-brake, reference.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Same as `--set scenario.initial_speed=V`.
        #[arg(long)]
        initial_speed: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One half of a linked run, or both over loopback.
    HilRun {
        #[arg(long, value_enum)]
        role: Role,
        /// Needed by the controller and loopback roles.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Same as `--set link.bind=ADDR`.
        #[arg(long)]
        bind: Option<String>,
        /// Same as `--set link.peer=ADDR`.
        #[arg(long)]
        peer: Option<String>,
        /// Same as `--set link.base_delay_ms=MS`.
        #[arg(long)]
        latency_ms: Option<f64>,
        /// Pace the environment against the wall clock.
        #[arg(long)]
        realtime: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a recorded `t_us,x,y,psi,v` trace into the virtual frame.
    VveReplay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the fully resolved configuration as TOML.
    PrintConfig,
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config { .. } => 2,
        CoreError::Link(LinkError::HandshakeFailed(_) | LinkError::IncompatiblePeer(_)) => 3,
        CoreError::SimulationFault { .. } => 4,
        CoreError::ModelIncompatible(_) => 5,
        _ => 1,
    }
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, CoreError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    let mut flag = |key: &str, v: Option<String>| -> Result<(), CoreError> {
        match v {
            Some(v) => cfg.apply_override(&format!("{key}={v}")),
            None => Ok(()),
        }
    };
    match &cli.command {
        Command::MilTrain { episodes, .. } => flag("agent.episodes", episodes.map(|v| v.to_string()))?,
        Command::MilEval { initial_speed, .. } => {
            flag("scenario.initial_speed", initial_speed.map(|v| format!("{v:?}")))?
        }
        Command::HilRun {
            bind, peer, latency_ms, ..
        } => {
            flag("link.bind", bind.as_ref().map(|v| format!("{v:?}")))?;
            flag("link.peer", peer.as_ref().map(|v| format!("{v:?}")))?;
            flag("link.base_delay_ms", latency_ms.map(|v| format!("{v:?}")))?;
        }
        _ => {}
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: &Cli) -> Result<(), CoreError> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::MilTrain { seed, out, .. } => {
            let seed = seed.unwrap_or(cfg.sim.seed);
            let r = pipeline::with_manifest("mil-train", VERSION, &cfg, seed, out, |dir| {
                pipeline::mil_train(&cfg, seed, dir)
            })?;
            print_json(&r);
            Ok(())
        }
        Command::MilEval {
            policy, seed, runs, out, ..
        } => {
            let seed = seed.unwrap_or(cfg.sim.seed);
            let s = pipeline::with_manifest("mil-eval", VERSION, &cfg, seed, out, |dir| {
                let policy = Policy::parse(policy)?;
                pipeline::mil_eval(&cfg, &policy, seed, *runs, dir)
            })?;
            eprintln!(
                "{} run(s): {} stopped before the crosswalk, {} collision(s), {} with a red band",
                s.runs, s.stopped_before_crosswalk, s.collisions, s.red_in_passing
            );
            print_json(&s);
            Ok(())
        }
        Command::HilRun {
            role,
            policy,
            seed,
            realtime,
            out,
            ..
        } => {
            let seed = seed.unwrap_or(cfg.sim.seed);
            let policy = || -> Result<Policy, CoreError> {
                Policy::parse(
                    policy
                        .as_deref()
                        .ok_or_else(|| CoreError::config("--policy", "required for this role"))?,
                )
            };
            match role {
                Role::Environment => {
                    let s = pipeline::with_manifest("hil-run environment", VERSION, &cfg, seed, out, |dir| {
                        let t = pipeline::udp_transport(&cfg)?;
                        pipeline::hil_environment_on(&cfg, seed, t, *realtime, dir)
                    })?;
                    print_json(&s);
                }
                Role::Controller => {
                    let s = pipeline::with_manifest("hil-run controller", VERSION, &cfg, seed, out, |dir| {
                        let p = policy()?;
                        let t = pipeline::udp_transport(&cfg)?;
                        pipeline::hil_controller_on(&cfg, &p, seed, t, dir)
                    })?;
                    print_json(&s);
                }
                Role::Loopback => {
                    let s = pipeline::with_manifest("hil-run loopback", VERSION, &cfg, seed, out, |dir| {
                        pipeline::hil_loopback(&cfg, &policy()?, seed, dir)
                    })?;
                    print_json(&s);
                }
            }
            Ok(())
        }
        Command::VveReplay { trace, out } => {
            let r = pipeline::with_manifest("vve-replay", VERSION, &cfg, cfg.sim.seed, out, |dir| {
                pipeline::vve_replay(&cfg, trace, dir)
            })?;
            print_json(&r);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
