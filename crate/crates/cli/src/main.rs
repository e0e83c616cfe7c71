use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddnet::data::{synth_generate, Dataset, Manifest};
use ddnet::harness::{self, GradRow, TrainConfig};
use ddnet::losses::LossKind;
use ddnet::model::{Model, ModelConfig, Variant};
use ddnet::Error;

/// Figure printed next to the full-config count by `params`.
const REFERENCE_PARAMS: &str = "3,334,829";

#[derive(Parser)]
#[command(name = "ddnet", version, about = "Densely deformable saliency network")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Seed for initialization, shuffling and generated data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file with [model] and [train] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    /// Start from a preset: full, desk or tiny.
    #[arg(long)]
    preset: Option<String>,
    /// dense_deformable, plain_deformable, dilated_5 or dilated_7.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a manifest and write checkpoints plus a log.
    Train {
        #[command(flatten)]
        model: ModelFlags,
        /// Training manifest.
        #[arg(long)]
        train: PathBuf,
        /// Test manifest, scored after every epoch.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// mse, bce or ssim_negation.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        checkpoint_interval: Option<usize>,
    },
    /// Write one 8-bit map per image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Masks whose sizes the maps should match.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Score a directory of maps against same-named masks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Central-difference gradient checks at double precision.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Scope::Ops)]
        scope: Scope,
        /// Random cases per operator.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Sampled scalars per parameter array (model scope).
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Generate a synthetic image/mask set with train and test manifests.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Report trainable parameter counts.
    Params {
        #[command(flatten)]
        model: ModelFlags,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Ops,
    Model,
}

/// Exit status of a failed command.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Argument(_) | Error::Config(_) => Failure::Usage(msg),
            Error::Numeric { .. } | Error::MissingGrad(_) => Failure::Numeric(msg),
            Error::Shape(_) | Error::DegenerateBatch(_) | Error::Data(_) | Error::Decode(_) | Error::Io { .. } => Failure::Data(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_config(shared: &Shared) -> Result<TrainConfig, Failure> {
    match &shared.config {
        None => Ok(TrainConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            TrainConfig::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
        }
    }
}

fn apply_model_flags(mut model: ModelConfig, flags: &ModelFlags) -> Result<ModelConfig, Failure> {
    if let Some(p) = &flags.preset {
        model = ModelConfig::preset(p)?;
    }
    if let Some(v) = &flags.variant {
        model.variant = v.parse::<Variant>()?;
    }
    model.validate()?;
    Ok(model)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }))?;
    }
    std::fs::write(path, text).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn stdout_line(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(shared: &Shared, flags: &ModelFlags, train: &Path, test: Option<&Path>, lr: Option<f64>, batch: Option<usize>, epochs: Option<usize>, loss: Option<&str>, interval: Option<usize>) -> Outcome {
    let mut cfg = match (&shared.config, &flags.preset) {
        // Without a file, a preset brings its training defaults along.
        (None, Some(p)) => TrainConfig::preset(p)?,
        _ => read_config(shared)?,
    };
    cfg.model = apply_model_flags(cfg.model, flags)?;
    if let Some(v) = lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = batch {
        cfg.batch_size = v;
    }
    if let Some(v) = epochs {
        cfg.epochs = v;
    }
    if let Some(v) = loss {
        cfg.loss = v.parse::<LossKind>()?;
    }
    if let Some(v) = interval {
        cfg.checkpoint_interval = v;
    }
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let train_set = Dataset::load(&Manifest::load(train)?, cfg.model.input_size)?;
    let test_set = test.map(|p| Dataset::load(&Manifest::load(p)?, cfg.model.input_size)).transpose()?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let mut log = String::new();
    harness::train(&cfg, &train_set, test_set.as_ref(), Some(&out), |entry| {
        let line = entry.to_string();
        stdout_line(&line);
        log.push_str(&line);
        log.push('\n');
    })?;
    write_text(&out.join("train.log"), &log)
}

fn cmd_infer(shared: &Shared, checkpoint: &Path, images: &Path, masks: Option<&Path>) -> Outcome {
    let model = Model::<f32>::load(checkpoint).map_err(|e| match e {
        Error::Config(m) => Failure::Data(format!("{}: {m}", checkpoint.display())),
        other => other.into(),
    })?;
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from("maps"));
    let records = harness::infer(&model, images, masks, &out, |r| stdout_line(&format!("{} {:.3} ms", r.name, r.millis)))?;
    let mean = records.iter().map(|r| r.millis).sum::<f64>() / records.len() as f64;
    stdout_line(&format!("mean {mean:.3} ms over {} images", records.len()));
    Ok(())
}

fn cmd_eval(shared: &Shared, pred: &Path, gt: &Path) -> Outcome {
    let ev = harness::evaluate_dirs(pred, gt)?;
    print!("{}", ev.to_table());
    match &shared.out {
        Some(path) => write_text(path, &ev.to_csv()),
        None => Ok(()),
    }
}

fn cmd_gradcheck(scope: Scope, seeds: u64, samples: usize, flags: &ModelFlags, shared: &Shared) -> Outcome {
    stdout_line(&format!("{:<20} {:>10} {:>8} {:>8} result", "item", "max_rel", "checked", "skipped"));
    let print = |r: &GradRow| stdout_line(&r.to_string());
    let rows = match scope {
        Scope::Ops => harness::gradcheck_ops(seeds, print)?,
        Scope::Model => {
            let mut cfg = read_config(shared)?.model;
            if shared.config.is_none() && flags.preset.is_none() {
                cfg = ModelConfig::tiny();
            }
            let cfg = apply_model_flags(cfg, flags)?;
            harness::gradcheck_model(&cfg, shared.seed.unwrap_or(0), samples, print)?
        }
    };
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        stdout_line("all rows pass");
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn cmd_synth(shared: &Shared, n: usize, size: usize) -> Outcome {
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    let set = synth_generate(n, size, shared.seed.unwrap_or(0), &out)?;
    stdout_line(&format!(
        "wrote {} train and {} test pairs to {}",
        set.train.len(),
        set.test.len(),
        out.display()
    ));
    Ok(())
}

fn cmd_params(shared: &Shared, flags: &ModelFlags) -> Outcome {
    let cfg = apply_model_flags(read_config(shared)?.model, flags)?;
    let model = Model::<f32>::build(&cfg, shared.seed.unwrap_or(0))?;
    for (stage, n) in harness::param_breakdown(&model) {
        stdout_line(&format!("{stage:<12} {n}"));
    }
    let total = model.param_count();
    stdout_line(&format!("total {total}"));
    if cfg == ModelConfig::full().with_variant(cfg.variant) {
        stdout_line(&format!("reference {REFERENCE_PARAMS} (not expected to match)"));
    }
    Ok(())
}

fn run(cli: Cli, shared: Shared) -> Outcome {
    match cli.command {
        Command::Train {
            model,
            train,
            test,
            lr,
            batch_size,
            epochs,
            loss,
            checkpoint_interval,
        } => cmd_train(&shared, &model, &train, test.as_deref(), lr, batch_size, epochs, loss.as_deref(), checkpoint_interval),
        Command::Infer { checkpoint, images, masks } => cmd_infer(&shared, &checkpoint, &images, masks.as_deref()),
        Command::Eval { pred, gt } => cmd_eval(&shared, &pred, &gt),
        Command::Gradcheck { scope, seeds, samples, model } => cmd_gradcheck(scope, seeds, samples, &model, &shared),
        Command::Synth { n, size } => cmd_synth(&shared, n, size),
        Command::Params { model } => cmd_params(&shared, &model),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let shared = cli.shared.clone();
    match run(cli, shared) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
