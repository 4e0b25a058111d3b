//! `mixseq`: train, check, inspect and decode token-mixing encoders.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 divergence,
//! 3 checkpoint error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mixseq::checkpoint::{self, Width};
use mixseq::config::RunConfig;
use mixseq::cost::{verify_params, Term};
use mixseq::gradsuite::{check_unit, GradUnit, TOLERANCE};
use mixseq::trainer::{eval_batch, evaluate, init_model, train, SyntheticTask};
use mixseq::Error;

#[derive(Parser)]
#[command(
    name = "mixseq",
    version,
    about = "Variable-length MLP token mixers with CTC training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic task and write a checkpoint, log and evaluation.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Stored element width of the checkpoint.
        #[arg(long, value_enum, default_value_t = StoredWidth::F64)]
        width: StoredWidth,
    },
    /// Finite-difference check of one unit on a randomized instance.
    Gradcheck {
        #[arg(long)]
        unit: GradUnit,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measured versus analytic parameter counts.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy-decode a seeded evaluation batch with a saved model.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StoredWidth {
    F32,
    F64,
}

/// Failure tagged with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => 2,
            Error::Checkpoint(_) => 3,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(1, format!("{}: {e}", path.display()))
}

fn cmd_train(
    config: &Path,
    steps: Option<usize>,
    seed: u64,
    out: &Path,
    width: StoredWidth,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    cfg.validate()?;
    let task = SyntheticTask::new(cfg.task.clone())?;
    let mut model = init_model(&cfg.model, seed)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let log_path = out.join("train.log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_failure(&log_path, e))?);
    let mut write_err = None;
    let result = train(&mut model, &task, &cfg.train, seed, &mut |record| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{record}") {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(io_failure(&log_path, e));
    }
    log.flush().map_err(|e| io_failure(&log_path, e))?;
    let summary = result?;
    let width = match width {
        StoredWidth::F32 => Width::F32,
        StoredWidth::F64 => Width::F64,
    };
    checkpoint::save(&out.join("model.ckpt"), &model, width)
        .map_err(|e| Failure::new(3, e.to_string()))?;
    let eval_path = out.join("eval.txt");
    fs::write(&eval_path, summary.eval.render()).map_err(|e| io_failure(&eval_path, e))?;
    println!("{}", summary.eval.summary());
    if summary.skipped_updates > 0 || summary.infeasible_items > 0 {
        println!(
            "skipped_updates={} infeasible_items={}",
            summary.skipped_updates, summary.infeasible_items
        );
    }
    Ok(())
}

fn cmd_gradcheck(unit: GradUnit, seed: u64) -> Result<(), Failure> {
    let err = check_unit(unit, seed)?;
    let pass = err < TOLERANCE;
    println!(
        "unit={unit} seed={seed} max_rel_err={err:.3e} tol={TOLERANCE:e} {}",
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::new(1, format!("{unit}: gradient check failed")))
    }
}

fn cmd_params(config: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let report = verify_params(&cfg.model)?;
    print!("{}", report.render_table());
    let weights: Vec<_> = report
        .rows
        .iter()
        .filter(|r| r.name.contains(".mixer.") && r.term == Term::Weight)
        .collect();
    println!(
        "mixer kind={} params_per_layer={} weights_measured={} weights_analytic={}",
        cfg.model.mixer.kind,
        report.mixer_total(None),
        weights.iter().map(|r| r.measured).sum::<u64>(),
        weights.iter().map(|r| r.analytic).sum::<u64>()
    );
    Ok(())
}

fn cmd_decode(ckpt: &Path, config: &Path, seed: u64) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let task = SyntheticTask::new(cfg.task.clone())?;
    // Initial values are overwritten; the seed only fixes construction.
    let mut model = init_model(&cfg.model, 0)?;
    checkpoint::load(ckpt, &mut model).map_err(|e| Failure::new(3, e.to_string()))?;
    let report = evaluate(&model, &eval_batch(&task, seed, cfg.train.eval_size.max(1)))?;
    print!("{}", report.render());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            steps,
            seed,
            out,
            width,
        } => cmd_train(&config, steps, seed, &out, width),
        Command::Gradcheck { unit, seed } => cmd_gradcheck(unit, seed),
        Command::Params { config } => cmd_params(&config),
        Command::Decode { ckpt, config, seed } => cmd_decode(&ckpt, &config, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
