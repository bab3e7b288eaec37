use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnss_regulator::estimator::{
    elevation_samples, fit_elevation_model, train, Provenance, TrainConfig, TrainedModel,
};
use gnss_regulator::eval::{
    emit_reports, localize, run_pipeline_with, trace_csv, trace_rows, ErrorSource, Estimators,
    FixStatus, PipelineSpec,
};
use gnss_regulator::selector::SelectorConfig;
use gnss_regulator::simulator::{generate_dataset, load_dataset, read_epochs, DatasetSpec};
use gnss_regulator::{Error, Method, Result};

#[derive(Parser)]
#[command(name = "gnss-regulator", version, about = "Learned cost-function regulation for GNSS first fixes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        /// Dataset description; the built-in five-region city when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Epochs per region for the built-in city.
        #[arg(long, default_value_t = 2000)]
        epochs: u64,
    },
    /// Train the error estimator on every region except the holdout.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// JSON file with training hyper-parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a method on the held-out region.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: String,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        oracle_errors: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Localize every epoch of a JSONL file and print one fix per line.
    Localize {
        #[arg(long)]
        epoch_file: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        method: Method,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Per-epoch prediction error of a model.
    Trace {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Restrict to one region.
        #[arg(long)]
        holdout: Option<String>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SelectorArgs {
    /// Discard measurements with large estimated errors first.
    #[arg(long)]
    selector: bool,
    #[arg(long, default_value_t = SelectorConfig::default().n_req)]
    n_req: usize,
}

impl SelectorArgs {
    fn apply(&self, spec: &mut PipelineSpec) {
        spec.use_selector = self.selector;
        spec.selector.n_req = self.n_req;
    }
}

fn load_model(path: Option<&Path>) -> Result<Option<TrainedModel>> {
    path.map(TrainedModel::load).transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            epochs,
        } => {
            let mut spec = match config {
                Some(path) => DatasetSpec::load(&path)?,
                None => DatasetSpec::default_city(0, epochs),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let manifest = generate_dataset(&spec, &out)?;
            for r in &manifest.regions {
                println!("{} {:?} {} epochs", r.region_id, r.style, r.epochs);
            }
        }
        Command::Train {
            data,
            holdout,
            out,
            seed,
            iters,
            batch,
            config,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    serde_json::from_str::<TrainConfig>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => TrainConfig::default(),
            };
            cfg.seed = seed;
            cfg.iterations = iters.unwrap_or(cfg.iterations);
            cfg.batch_size = batch.unwrap_or(cfg.batch_size);
            cfg.validate()?;

            let ds = load_dataset(&data)?;
            let (train_epochs, _) = ds.split(&holdout)?;
            let outcome = train(&train_epochs, &cfg)?;
            let model = TrainedModel {
                params: outcome.params,
                elevation_fit: Some(fit_elevation_model(&elevation_samples(&train_epochs)?)?),
                provenance: Provenance {
                    train_regions: ds.region_ids().into_iter().filter(|r| *r != holdout).collect(),
                    holdout: Some(holdout),
                    seed,
                    iterations: cfg.iterations,
                    train_epochs: train_epochs.len(),
                },
            };
            model.save(&out)?;
            let tail = &outcome.losses[outcome.losses.len().saturating_sub(100)..];
            println!(
                "trained {} parameters, final loss {:.5}",
                model.params.parameter_count(),
                tail.iter().sum::<f64>() / tail.len() as f64
            );
        }
        Command::Evaluate {
            data,
            holdout,
            method,
            model,
            oracle_errors,
            out,
            selector,
        } => {
            let ds = load_dataset(&data)?;
            let (train_epochs, test) = ds.split(&holdout)?;
            let model = load_model(model.as_deref())?;
            let fallback_fit = match model.as_ref().and_then(|m| m.elevation_fit) {
                Some(fit) => Some(fit),
                None if method == Method::WlsElevation => {
                    Some(fit_elevation_model(&elevation_samples(&train_epochs)?)?)
                }
                None => None,
            };
            let errors = match (&model, oracle_errors) {
                (_, true) => ErrorSource::Oracle,
                (Some(m), false) => ErrorSource::Model(m),
                (None, false) => ErrorSource::None,
            };
            let est = Estimators {
                errors,
                elevation_fit: fallback_fit.as_ref(),
            };
            let mut spec = PipelineSpec::new(method);
            selector.apply(&mut spec);
            let report = run_pipeline_with(&spec, &test, &est)?;
            emit_reports(&report, &out)?;
            println!(
                "{method} on {holdout}: p50 {:.3} m, p95 {:.3} m, nonconverged {}",
                report.p50, report.p95, report.nonconverged
            );
        }
        Command::Localize {
            epoch_file,
            model,
            method,
            selector,
        } => {
            let epochs = read_epochs(&epoch_file)?;
            let model = load_model(model.as_deref())?;
            let est = match &model {
                Some(m) => Estimators::model(m),
                None => Estimators::none(),
            };
            let mut spec = PipelineSpec::new(method);
            selector.apply(&mut spec);
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let mut singular = 0usize;
            for epoch in &epochs {
                let fix = localize(epoch, &spec, &est)?;
                singular += usize::from(fix.status == FixStatus::SolverFailed);
                let line = serde_json::to_string(&fix).expect("fix serializes");
                writeln!(lock, "{line}").map_err(|e| Error::Data(format!("stdout: {e}")))?;
            }
            if singular > 0 {
                return Err(Error::NumericalFailure(format!(
                    "{singular} epoch(s) had a singular normal matrix; their fix is the initial guess"
                )));
            }
        }
        Command::Trace {
            data,
            model,
            holdout,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let epochs = match &holdout {
                Some(r) => ds.split(r)?.1,
                None => ds.all_epochs(),
            };
            let model = TrainedModel::load(&model)?;
            let csv = trace_csv(&trace_rows(&model, &epochs)?);
            match out {
                Some(path) => fs::write(&path, csv).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
