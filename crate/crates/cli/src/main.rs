mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mrsg_core::pipeline::{ClientMode, PipelineConfig};
use stages::{Context, Stage, StageError};

#[derive(Parser)]
#[command(name = "mrsg", version, about = "Multi-robot scene-graph mapping, grounding and planning")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Language model client.
    #[arg(long, global = true)]
    client: Option<ClientMode>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the simulated world.
    GenWorld,
    /// Drive and map every robot.
    Map,
    /// Detect loop closures, optimize and merge into one scene graph.
    Fuse,
    /// Relocalize a query re-traversal against the fused map.
    Relocalize,
    /// Ground the mission instruction into per-robot goals.
    Ground,
    /// Plan each robot's goal over the fused places.
    Plan,
    /// Execute the plans in the world.
    Execute,
    /// Trajectory and object accuracy of the fused map.
    EvalFusion,
    /// Score grounding over a trial set.
    EvalGrounding,
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| StageError::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.client {
        cfg.client = c;
    }
    let p = &cfg.paths;
    let named = [
        ("world", &p.world),
        ("maps", &p.maps),
        ("graph", &p.graph),
        ("goals", &p.goals),
        ("trials", &p.trials),
        ("cassette", &p.cassette),
        ("replies", &p.replies),
    ];
    for (key, path) in named {
        if let Some(path) = path {
            if !path.exists() {
                return Err(StageError::Usage(format!("paths.{key}: {} does not exist", path.display())));
            }
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, StageError> {
    let cfg = load_config(cli)?;
    let ctx = Context { cfg, out: cli.out.clone() };
    let stage = match cli.command {
        Command::Pipeline => return ctx.pipeline(),
        Command::GenWorld => Stage::GenWorld,
        Command::Map => Stage::Map,
        Command::Fuse => Stage::Fuse,
        Command::Relocalize => Stage::Relocalize,
        Command::Ground => Stage::Ground,
        Command::Plan => Stage::Plan,
        Command::Execute => Stage::Execute,
        Command::EvalFusion => Stage::EvalFusion,
        Command::EvalGrounding => Stage::EvalGrounding,
    };
    ctx.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
