use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mcdbn::checkpoint::TrainedModel;
use mcdbn::config::{Config, SEED_ENV};
use mcdbn::data::{load_dataset_dir, write_dataset_csv};
use mcdbn::eval::{
    benchmark_run, complete_with, decoder_variants, downstream_metrics, loss_variants,
    mcdbn_complete, run_variants, train_mcdbn, ComparisonTable, Completed, Instrument, Method,
};
use mcdbn::training::{full_model_check, gradient_suite, write_loss_trace};
use mcdbn::{Error, Result};

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "mcdbn",
    version,
    about = "Modality completion with deep belief networks"
)]
struct Cli {
    /// Training seed. Takes precedence over MCDBN_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-instrument runs. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic instruments as CSV, with ground truth and labels.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill the gaps of a CSV dataset with a baseline or a trained model.
    Impute {
        /// zero, locf, nocb, mean, interp, rolling(W) or mcdbn.
        #[arg(long)]
        method: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint written by `train`; required for mcdbn.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain and fine-tune on the configured dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model, or compare the configured methods without one.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory for the comparison table as JSON and CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the loss-term or decoder ablation grid.
    Ablate {
        #[arg(long, value_enum)]
        which: Ablation,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on small instances.
    Gradcheck,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ablation {
    Loss,
    Decoder,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsupported(_) => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    cfg.resolve_seed(seed, env.as_deref())?;
    Ok(cfg)
}

fn write_labels(path: &Path, inst: &Instrument) -> Result<()> {
    let Some((labels, _)) = &inst.labels else {
        return Ok(());
    };
    let mut text = String::from("timestamp,label\n");
    for (ts, label) in inst.observed.timestamps.iter().zip(labels) {
        writeln!(text, "{ts},{label}").expect("writing to a String");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn synth(cfg: &Config, out: &Path) -> Result<()> {
    for id in 0..cfg.synthetic.instruments {
        let inst = Instrument::synthetic(&cfg.synthetic, id, &cfg.missingness, &cfg.train)?;
        let dir = out.join(format!("instrument_{id:02}"));
        write_dataset_csv(&dir, &inst.observed)?;
        if let Some(truth) = &inst.truth {
            write_dataset_csv(dir.join("truth"), truth)?;
        }
        write_labels(&dir.join("labels.csv"), &inst)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn impute(
    cfg: &Config,
    method: &str,
    input: &Path,
    out: &Path,
    model: Option<&Path>,
) -> Result<()> {
    let method: Method = method.parse()?;
    let inst = Instrument::new(0, load_dataset_dir(input)?, None, None, 0, &cfg.train)?;
    let (inst, completed) = match (method, model) {
        (Method::McDbn, Some(path)) => {
            let trained = TrainedModel::load(path, &cfg.train)?;
            let inst = inst.with_scalers(trained.scaler_x.clone(), trained.scaler_y.clone())?;
            let out = mcdbn_complete(&trained.model, &inst, &cfg.train)?;
            let completed = Completed {
                x: out.completed_x,
                y: Some(out.completed_y),
            };
            (inst, completed)
        }
        (Method::McDbn, None) => {
            return Err(Error::Config("impute --method mcdbn needs --model".into()))
        }
        (Method::SingleModal, _) => {
            return Err(Error::Config(
                "`single` is a comparison row, not an imputer".into(),
            ));
        }
        (baseline, _) => {
            let completed = complete_with(baseline, &inst, &cfg.train)?;
            (inst, completed)
        }
    };
    write_dataset_csv(out, &completed.to_dataset(&inst))
}

fn train(cfg: &Config, out: &Path) -> Result<()> {
    let inst = cfg.dataset()?;
    let (model, trace) = train_mcdbn(&inst, &cfg.train)?;
    for e in &trace {
        eprintln!(
            "epoch {} loss {:.6} modal_x {:.6} modal_y {:.6} task {:.6}",
            e.epoch, e.total, e.modal_x, e.modal_y, e.task
        );
    }
    std::fs::create_dir_all(out)?;
    let trained = TrainedModel {
        model,
        scaler_x: inst.scaler_x.clone(),
        scaler_y: inst.scaler_y.clone(),
    };
    trained.save(out.join("model.ckpt"))?;
    write_loss_trace(out.join("loss_trace.csv"), &trace)?;
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    println!("config_hash {}", cfg.hash()?);
    println!("model {}", out.join("model.ckpt").display());
    Ok(())
}

fn emit_table(table: &ComparisonTable, out: Option<&Path>) -> Result<()> {
    let json = table.to_json()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("table.json"), format!("{json}\n"))?;
        std::fs::write(dir.join("summary.csv"), table.summary_csv()?)?;
        std::fs::write(dir.join("detail.csv"), table.detail_csv()?)?;
    }
    println!("{json}");
    Ok(())
}

fn evaluate(cfg: &Config, model: Option<&Path>, out: Option<&Path>, threads: usize) -> Result<()> {
    let hash = cfg.hash()?;
    match model {
        Some(path) => {
            let trained = TrainedModel::load(path, &cfg.train)?;
            let inst = cfg
                .dataset()?
                .with_scalers(trained.scaler_x.clone(), trained.scaler_y.clone())?;
            let completion = mcdbn_complete(&trained.model, &inst, &cfg.train)?;
            let completed = Completed {
                x: completion.completed_x,
                y: Some(completion.completed_y),
            };
            let metrics = downstream_metrics(&inst, &completed.features(), &cfg.train, &hash)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
        None => {
            if cfg.paths.data.is_some() {
                return Err(Error::Config(
                    "evaluate without --model compares methods on synthetic instruments; unset paths.data".into(),
                ));
            }
            let table = benchmark_run(
                &cfg.methods,
                &cfg.synthetic,
                &cfg.train,
                &cfg.missingness,
                threads,
                &hash,
            )?;
            emit_table(&table, out)
        }
    }
}

fn ablate(cfg: &Config, which: Ablation, out: Option<&Path>, threads: usize) -> Result<()> {
    let variants = match which {
        Ablation::Loss => loss_variants(&cfg.train),
        Ablation::Decoder => decoder_variants(&cfg.train),
    };
    let table = run_variants(
        &variants,
        &cfg.synthetic,
        &cfg.missingness,
        threads,
        &cfg.hash()?,
    )?;
    emit_table(&table, out)
}

fn gradcheck(seed: u64) -> Result<bool> {
    let report = gradient_suite(seed)?;
    let mut entries = report.entries;
    entries.push(("model.directional".into(), full_model_check(seed)?));
    let mut ok = true;
    for (path, err) in &entries {
        let pass = *err <= GRADCHECK_TOLERANCE;
        ok &= pass;
        println!("{path:24} {err:.3e} {}", if pass { "ok" } else { "FAIL" });
    }
    let worst = entries.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    println!("max {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e}, seed {seed})");
    Ok(ok)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::Synth { config, out } => synth(&load_config(config.as_deref(), cli.seed)?, &out)?,
        Command::Impute {
            method,
            input,
            out,
            model,
            config,
        } => impute(
            &load_config(config.as_deref(), cli.seed)?,
            &method,
            &input,
            &out,
            model.as_deref(),
        )?,
        Command::Train { config, out } => train(&load_config(config.as_deref(), cli.seed)?, &out)?,
        Command::Evaluate { config, model, out } => evaluate(
            &load_config(config.as_deref(), cli.seed)?,
            model.as_deref(),
            out.as_deref(),
            threads,
        )?,
        Command::Ablate { which, config, out } => ablate(
            &load_config(config.as_deref(), cli.seed)?,
            which,
            out.as_deref(),
            threads,
        )?,
        Command::Gradcheck => {
            let cfg = load_config(None, cli.seed)?;
            if !gradcheck(cfg.train.seed)? {
                eprintln!("ERROR:gradcheck:relative error above {GRADCHECK_TOLERANCE:.0e}");
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("ERROR:usage:{}", text.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ERROR:{}:{e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
