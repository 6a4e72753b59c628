//! `sgem`: runs the experiment pipeline stage by stage.
//!
//! Exit codes: 0 success, 1 validation error, 2 stage-order error, 3 gate
//! failure, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sgem_core::dataio::Task;
use sgem_core::pipeline::{DataSource, Pipeline, RunConfig, StageOutcome, StageStatus};
use sgem_core::selftest::run_selftest;
use sgem_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "sgem",
    version,
    about = "Self-supervised gesture embeddings: seeded, resumable experiment stages"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Rerun stages even when their manifests are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SGEM_THREADS")]
    threads: Option<usize>,
    /// Output directory of the run.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Master seed; every stage seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Task to process; repeat for several (e.g. `--task synthA --task synthB`).
    #[arg(long = "task", global = true)]
    tasks: Vec<Task>,
    /// Synthetic trials per task.
    #[arg(long, global = true, conflicts_with = "jigsaws_root")]
    trials: Option<usize>,
    /// Frames per synthetic trial.
    #[arg(long, global = true, conflicts_with = "jigsaws_root")]
    duration: Option<usize>,
    /// Root of a JIGSAWS-format tree (switches the data source).
    #[arg(long, global = true)]
    jigsaws_root: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f32>,
    /// Boosting rounds.
    #[arg(long, global = true)]
    rounds: Option<usize>,
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    /// Random train/test splits per experiment.
    #[arg(long, global = true)]
    splits: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic trials and their windows.
    GenData,
    /// Load a JIGSAWS-format tree and cut its windows.
    Ingest,
    /// Train the flow-to-kinematics encoder-decoder per task.
    TrainEncoder,
    /// Embed windows with the frozen encoder.
    Embed,
    /// Gesture recognition on the representations.
    EvalGesture,
    /// Skill recognition on the representations.
    EvalSkill,
    /// Gesture recognition with encoders trained on other tasks.
    Transfer,
    /// 2-D PCA scatter of the representations.
    Project,
    /// Write metrics tables, scatters and the gate summary.
    Report {
        /// Exit with code 3 if any gate fails.
        #[arg(long)]
        check_gates: bool,
    },
    /// Every stage in order.
    Run {
        /// Exit with code 3 if any gate fails.
        #[arg(long)]
        check_gates: bool,
    },
    /// Gradient, optical-flow and boosting oracle suites.
    Selftest,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

impl Global {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.tasks.is_empty() {
            cfg.tasks = self.tasks.clone();
        }
        if let Some(root) = &self.jigsaws_root {
            cfg.data = DataSource::Jigsaws { root: root.clone() };
        }
        if self.trials.is_some() || self.duration.is_some() {
            let (t0, d0) = match cfg.data {
                DataSource::Synthetic { trials, duration } => (trials, duration),
                DataSource::Jigsaws { .. } => match DataSource::default() {
                    DataSource::Synthetic { trials, duration } => (trials, duration),
                    DataSource::Jigsaws { .. } => unreachable!("default source is synthetic"),
                },
            };
            cfg.data = DataSource::Synthetic {
                trials: self.trials.unwrap_or(t0),
                duration: self.duration.unwrap_or(d0),
            };
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.rounds {
            cfg.gbt.rounds = v;
        }
        if let Some(v) = self.max_depth {
            cfg.gbt.max_depth = v;
        }
        if let Some(v) = self.splits {
            cfg.split.n_splits = v;
        }
        Ok(cfg)
    }
}

fn print_outcomes(outcomes: &[StageOutcome]) {
    for o in outcomes {
        let status = match o.status {
            StageStatus::Ran => "done",
            StageStatus::UpToDate => "skip",
        };
        println!(
            "[{status}] {} {}: {}",
            o.stage,
            o.target,
            o.note.lines().next().unwrap_or("")
        );
        for line in o.note.lines().skip(1) {
            println!("        {line}");
        }
    }
}

fn check(gates_failed: usize, enforce: bool) -> anyhow::Result<()> {
    if enforce && gates_failed > 0 {
        Err(Error::GateFailure(gates_failed).into())
    } else {
        Ok(())
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = cli.global.run_config()?;
    match cli.command {
        Command::Selftest => {
            let gates = run_selftest(cfg.seed)?;
            for g in &gates {
                println!("{}", g.line());
            }
            check(gates.iter().filter(|g| !g.passed).count(), true)
        }
        Command::ShowConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_json());
            Ok(())
        }
        command => {
            let p = Pipeline::new(cfg, cli.global.force)?;
            let outcomes = match command {
                Command::GenData => p.gen_data()?,
                Command::Ingest => p.ingest()?,
                Command::TrainEncoder => p.train_encoder()?,
                Command::Embed => p.embed()?,
                Command::EvalGesture => p.eval_gesture()?,
                Command::EvalSkill => p.eval_skill()?,
                Command::Transfer => p.transfer()?,
                Command::Project => p.project()?,
                Command::Report { check_gates } | Command::Run { check_gates } => {
                    let (outcomes, report) = if matches!(command, Command::Run { .. }) {
                        p.run_all()?
                    } else {
                        p.report()?
                    };
                    print_outcomes(&outcomes);
                    for g in &report.gates {
                        println!("{}", g.line());
                    }
                    println!(
                        "summary: {}",
                        p.layout.report_dir().join("summary.txt").display()
                    );
                    return check(
                        report.gates.iter().filter(|g| !g.passed).count(),
                        check_gates,
                    );
                }
                Command::Selftest | Command::ShowConfig => unreachable!("handled above"),
            };
            print_outcomes(&outcomes);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => e.exit_code() as u8,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
