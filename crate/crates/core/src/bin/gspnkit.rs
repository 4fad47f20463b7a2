use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gspnkit::config::Config;
use gspnkit::pipeline::{cmd_eval, cmd_export_ply, cmd_gen_data, cmd_infer, cmd_train, Artifacts, PipelineError, Stage};

/// Instance segmentation on synthetic point-cloud scenes.
#[derive(Debug, Parser)]
#[command(name = "gspnkit", version)]
struct Cli {
    /// Config file (`key = value` lines); the desk preset when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Training stage: semantic, gspn or rpointnet.
    #[arg(long, global = true, value_name = "NAME")]
    stage: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Artifact directory, overriding `paths.out`.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test corpora.
    GenData,
    /// Train one stage (needs --stage).
    Train,
    /// Detect instances in the test corpus.
    Infer,
    /// Score predictions against the test corpus.
    Eval,
    /// Write a test scene as colored PLY.
    ExportPly {
        /// Test scene index.
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let stage = match (&cli.command, &cli.stage) {
        (Command::Train, None) => return Err(PipelineError::UnknownStage("(none given; use --stage)".into())),
        (_, Some(s)) => Some(Stage::parse(s).ok_or_else(|| PipelineError::UnknownStage(s.clone()))?),
        _ => None,
    };
    if cfg.workers > 0 {
        // only fails if a pool already exists, which keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let arts = Artifacts::new(&cfg.out);
    match cli.command {
        Command::GenData => {
            let s = cmd_gen_data(&cfg, &arts)?;
            println!(
                "train scenes: {}\ntest scenes: {}\ninstances: {}\npoints: {}",
                s.train_scenes, s.test_scenes, s.instances, s.points
            );
        }
        Command::Train => {
            let stage = stage.expect("checked above");
            cmd_train(&cfg, &arts, stage)?;
            println!("{} checkpoint: {}", stage.as_str(), arts.checkpoint(stage).display());
        }
        Command::Infer => {
            let s = cmd_infer(&cfg, &arts)?;
            println!("scenes: {}\ninstances: {}\npredictions: {}", s.scenes, s.instances, arts.predictions().display());
        }
        Command::Eval => {
            let report = cmd_eval(&cfg, &arts)?;
            print!("{}", report.to_table());
        }
        Command::ExportPly { scene } => {
            for p in cmd_export_ply(&arts, scene)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
