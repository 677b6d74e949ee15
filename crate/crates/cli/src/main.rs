use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use navinfer::harness::{self, Mode, RunConfig};
use navinfer::perception::render_panorama;
use navinfer::sim::{Pose, World, BUILTIN_WORLDS};
use navinfer::Error;

/// Active inference navigation experiments in a simulated world.
#[derive(Parser)]
#[command(name = "navinfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever mode the config file names.
    Run(Common),
    /// Explore until the step budget or the coverage target.
    Explore(Common),
    /// Reach the place shown in a goal panorama.
    Goal {
        #[command(flatten)]
        common: Common,
        /// Goal panorama, binary PGM.
        #[arg(long)]
        goal: Option<PathBuf>,
        /// Exploration steps before the goal is given.
        #[arg(long)]
        explore_steps: Option<usize>,
    },
    /// Odometry drift scenario; fails unless the expected outcome occurs.
    DriftDemo {
        #[command(flatten)]
        common: Common,
        /// Preset 1 to 4.
        #[arg(long)]
        branch: Option<u8>,
    },
    /// Moved-box scenario with before and after edge maps.
    ObstacleDemo(Common),
    /// Recompute metrics from a trace.
    Replay {
        trace: PathBuf,
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
        #[arg(long, env = "NAVINFER_OUTPUT_ROOT")]
        output_root: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Render the panorama seen at a pose, e.g. to use as a goal.
    Render {
        /// Built-in world name or world file.
        #[arg(long, default_value = "mini-warehouse")]
        world: String,
        /// Spawn point to render from; overridden by --x and --y.
        #[arg(long, default_value = "start")]
        spawn: String,
        #[arg(long, requires = "y", allow_hyphen_values = true)]
        x: Option<f64>,
        #[arg(long, requires = "x", allow_hyphen_values = true)]
        y: Option<f64>,
        /// Config file whose render settings to use.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// List the built-in worlds.
    Worlds,
}

#[derive(Args)]
struct Common {
    /// TOML run config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    world: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step_budget: Option<usize>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Prefix for relative output directories.
    #[arg(long, env = "NAVINFER_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    no_plots: bool,
    /// Override any config field, e.g. `hyperparams.gamma=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Failures worth exit code 2.
fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::WorldParse { .. }
            | Error::UnknownWorld(_)
            | Error::Schema { .. }
            | Error::Trace { .. }
            | Error::Graymap(_)
            | Error::InvalidHyperParams(_)
    )
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Error> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("bad key {key:?}")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{p} is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// A `--set` value: any TOML literal, else a bare string.
fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn with_root(dir: PathBuf, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir,
    }
}

fn build_config(common: &Common, mode: Option<Mode>, extra: &[(&str, toml::Value)]) -> Result<RunConfig, Error> {
    let mut table = match &common.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    if let Some(m) = mode {
        set_path(&mut table, "mode", toml::Value::String(m.name().into()))?;
    }
    if let Some(w) = &common.world {
        set_path(&mut table, "world", toml::Value::String(w.clone()))?;
    }
    if let Some(s) = common.seed {
        let s = i64::try_from(s).map_err(|_| Error::Config("seed too large".into()))?;
        set_path(&mut table, "seed", toml::Value::Integer(s))?;
    }
    if let Some(b) = common.step_budget {
        set_path(&mut table, "step_budget", toml::Value::Integer(b as i64))?;
    }
    if let Some(d) = &common.output_dir {
        set_path(&mut table, "output_dir", toml::Value::String(d.display().to_string()))?;
    }
    if let Some(r) = &common.resume {
        set_path(&mut table, "resume", toml::Value::String(r.display().to_string()))?;
    }
    if common.no_plots {
        set_path(&mut table, "plots", toml::Value::Boolean(false))?;
    }
    for (k, v) in extra {
        set_path(&mut table, k, v.clone())?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    let mut cfg = RunConfig::from_toml(&text)?;
    cfg.output_dir = with_root(cfg.output_dir, common.output_root.as_deref());
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(cfg: RunConfig) -> Result<bool, Error> {
    let report = harness::run(&cfg)?;
    println!("{}", report.message);
    println!("artifacts: {}", report.output_dir.display());
    Ok(report.success)
}

fn render(world: &str, spawn: &str, xy: Option<(f64, f64)>, config: Option<&Path>, out: &Path) -> Result<bool, Error> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let w = if Path::new(world).is_file() { World::load(world)? } else { World::builtin(world)? };
    let pose = match xy {
        Some((x, y)) => Pose::new(x, y, 0.0),
        None => w
            .spawn(spawn)
            .ok_or_else(|| Error::Config(format!("world has no spawn named {spawn}")))?,
    };
    let pano = render_panorama(&w, &pose, &cfg.agent.render)?;
    pano.save_pgm(out)?;
    println!("wrote {} ({}x{}) from ({}, {})", out.display(), pano.width(), pano.height(), pose.x, pose.y);
    Ok(true)
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run(c) => run_config(build_config(&c, None, &[])?),
        Command::Explore(c) => run_config(build_config(&c, Some(Mode::Explore), &[])?),
        Command::Goal {
            common,
            goal,
            explore_steps,
        } => {
            let mut extra = Vec::new();
            if let Some(g) = goal {
                extra.push(("goal_observation", toml::Value::String(g.display().to_string())));
            }
            if let Some(n) = explore_steps {
                extra.push(("explore_steps", toml::Value::Integer(n as i64)));
            }
            run_config(build_config(&common, Some(Mode::Goal), &extra)?)
        }
        Command::DriftDemo { common, branch } => {
            let extra: Vec<_> = branch
                .map(|b| ("drift_demo.branch", toml::Value::Integer(b.into())))
                .into_iter()
                .collect();
            run_config(build_config(&common, Some(Mode::DriftDemo), &extra)?)
        }
        Command::ObstacleDemo(c) => run_config(build_config(&c, Some(Mode::ObstacleDemo), &[])?),
        Command::Replay {
            trace,
            output_dir,
            output_root,
            no_plots,
        } => {
            let dir = output_dir.unwrap_or_else(|| PathBuf::from("replay"));
            let dir = with_root(dir, output_root.as_deref());
            let report = harness::replay(&trace, &dir, !no_plots)?;
            println!("{}", report.message);
            println!("artifacts: {}", report.output_dir.display());
            Ok(true)
        }
        Command::Render {
            world,
            spawn,
            x,
            y,
            config,
            out,
        } => render(&world, &spawn, x.zip(y), config.as_deref(), &out),
        Command::Worlds => {
            for w in BUILTIN_WORLDS {
                println!("{w}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
