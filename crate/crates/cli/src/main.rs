use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use skillgrid::config::Config;
use skillgrid::pipeline::{self, Backend, RunDir};

/// Unsupervised skill discovery in a pixel gridworld.
#[derive(Debug, Parser)]
#[command(name = "skillgrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory holding the config snapshot, dataset, checkpoints, logs and figures.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Divides replay capacity, replay start, exploration horizon and target interval.
    #[arg(long, global = true)]
    scale: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = BackendArg::Vq)]
    backend: BackendArg,
    /// Feed relative coordinates alongside pixels.
    #[arg(long, global = true, value_enum)]
    coords: Option<Switch>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect random-policy trajectories.
    Explore,
    /// Train the VQ-VAE skill space.
    DiscoverVq,
    /// Train the contrastive encoder and cluster its embeddings.
    DiscoverContrastive,
    /// Train the latent-conditioned policy on the chosen backend.
    TrainSkills,
    /// Roll out every skill and export reward curves and trajectories.
    Evaluate,
    /// Index maps and reward heatmaps from a discovery checkpoint.
    Render,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Vq,
    Contrastive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn run(cli: &Cli) -> skillgrid::Result<String> {
    let path = cli.config.as_ref().ok_or_else(|| skillgrid::Error::Config("config not found: --config is required".into()))?;
    let mut cfg = Config::load(path)?;
    if let Some(s) = cli.scale {
        cfg.agent.scale = s;
    }
    if let Some(c) = cli.coords {
        cfg.env.coords = c == Switch::On;
    }
    cfg.validate()?;
    let dir = RunDir::new(&cli.run_dir);
    let backend = match cli.backend {
        BackendArg::Vq => Backend::Vq,
        BackendArg::Contrastive => Backend::Contrastive,
    };
    match cli.command {
        Command::Explore => pipeline::cmd_explore(&dir, &cfg, cli.seed),
        Command::DiscoverVq => pipeline::cmd_discover(&dir, &cfg, cli.seed, Backend::Vq),
        Command::DiscoverContrastive => pipeline::cmd_discover(&dir, &cfg, cli.seed, Backend::Contrastive),
        Command::TrainSkills => pipeline::cmd_train_skills(&dir, &cfg, cli.seed, backend),
        Command::Evaluate => pipeline::cmd_evaluate(&dir, &cfg, cli.seed, backend),
        Command::Render => pipeline::cmd_render(&dir, &cfg, cli.seed, backend),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
