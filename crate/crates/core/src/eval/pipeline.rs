use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean, percentile};
use crate::error::{Error, Result};
use crate::estimator::{heuristic_weights, initial_state, ElevationFit, HeuristicMethod, Provenance, TrainedModel};
use crate::regulator::{regulate_measurements, regulate_weights};
use crate::selector::{select_measurements, SelectorConfig};
use crate::solver::{geometry_matrix, horizontal_error, wls_solve, WlsConfig, WlsStatus};
use crate::types::{Epoch, Method, SolutionState};

/// One configuration of the positioning pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub method: Method,
    pub use_selector: bool,
    pub model_path: Option<PathBuf>,
    pub selector: SelectorConfig,
    pub wls: WlsConfig,
}

impl PipelineSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            use_selector: false,
            model_path: None,
            selector: SelectorConfig::default(),
            wls: WlsConfig::default(),
        }
    }

    pub fn with_selector(mut self) -> Self {
        self.use_selector = true;
        self
    }

    fn needs_error_estimates(&self) -> bool {
        self.method.needs_error_estimates() || self.use_selector
    }
}

/// Where per-measurement error estimates come from.
#[derive(Debug, Clone, Copy)]
pub enum ErrorSource<'a> {
    /// None available; only heuristic methods can run.
    None,
    /// The recorded truth errors.
    Oracle,
    Model(&'a TrainedModel),
}

/// Everything a pipeline run needs besides the epochs.
#[derive(Debug, Clone, Copy)]
pub struct Estimators<'a> {
    pub errors: ErrorSource<'a>,
    pub elevation_fit: Option<&'a ElevationFit>,
}

impl<'a> Estimators<'a> {
    pub fn none() -> Self {
        Self {
            errors: ErrorSource::None,
            elevation_fit: None,
        }
    }

    pub fn oracle() -> Self {
        Self {
            errors: ErrorSource::Oracle,
            elevation_fit: None,
        }
    }

    pub fn model(model: &'a TrainedModel) -> Self {
        Self {
            errors: ErrorSource::Model(model),
            elevation_fit: model.elevation_fit.as_ref(),
        }
    }

    fn check(&self, spec: &PipelineSpec) -> Result<()> {
        if spec.needs_error_estimates() && matches!(self.errors, ErrorSource::None) {
            return Err(Error::ModelMissing);
        }
        if spec.method == Method::WlsElevation && self.elevation_fit.is_none() {
            return Err(Error::MissingFit);
        }
        Ok(())
    }

    fn estimate(&self, epoch: &Epoch) -> Result<Option<Vec<f64>>> {
        match self.errors {
            ErrorSource::None => Ok(None),
            ErrorSource::Oracle => epoch
                .truth_errors()
                .map(Some)
                .ok_or_else(|| Error::Data(format!("epoch {} has no truth errors", epoch.epoch_id))),
            ErrorSource::Model(m) => m.params.predict(epoch).map(Some),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixStatus {
    Converged,
    NonConvergence,
    /// The normal matrix was singular; the fix is the initial guess.
    SolverFailed,
}

/// Result of localizing one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub epoch_id: u64,
    pub region_id: String,
    pub state: SolutionState,
    pub status: FixStatus,
    pub iterations: usize,
    /// Measurements used after selection.
    pub used: usize,
    /// Weight regulation failed and unit weights were used instead.
    pub regulation_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_estimates: Option<Vec<f64>>,
}

/// Runs the pipeline on one epoch: estimate, select, regulate, solve.
pub fn localize(epoch: &Epoch, spec: &PipelineSpec, est: &Estimators) -> Result<Fix> {
    est.check(spec)?;
    epoch.validate()?;
    let e_hat = if spec.needs_error_estimates() {
        est.estimate(epoch)?
    } else {
        None
    };

    let (working, working_errors) = match (&e_hat, spec.use_selector) {
        (Some(e), true) => {
            let selection = select_measurements(e, &spec.selector);
            let kept: Vec<f64> = e
                .iter()
                .zip(&selection.mask)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .collect();
            (epoch.subset(&selection.mask)?, Some(kept))
        }
        _ => (epoch.clone(), e_hat.clone()),
    };

    let start = initial_state(&working)?;
    let mut regulation_fallback = false;
    let (solve_epoch, weights) = match spec.method {
        Method::WlsUnit => (working, Vec::new()),
        Method::WlsCn0 => {
            let w = heuristic_weights(HeuristicMethod::Cn0, &working, None)?;
            (working, w)
        }
        Method::WlsElevation => {
            let w = heuristic_weights(HeuristicMethod::Elevation, &working, est.elevation_fit)?;
            (working, w)
        }
        Method::RegulateWeights => {
            let errors = working_errors.as_deref().expect("checked above");
            let h = geometry_matrix(&working, &start)?;
            match regulate_weights(&h, errors) {
                Ok(w) => (working, w),
                Err(Error::DegenerateProjection { .. } | Error::InsufficientRedundancy) => {
                    regulation_fallback = true;
                    (working, Vec::new())
                }
                Err(e) => return Err(e),
            }
        }
        Method::RegulateMeasurements => {
            let errors = working_errors.as_deref().expect("checked above");
            (regulate_measurements(&working, errors)?, Vec::new())
        }
    };
    let weights = if weights.is_empty() {
        vec![1.0; solve_epoch.len()]
    } else {
        weights
    };

    let (state, status, iterations) = match wls_solve(&solve_epoch, &weights, start, &spec.wls) {
        Ok(sol) => {
            let status = match sol.status {
                WlsStatus::Converged => FixStatus::Converged,
                WlsStatus::NonConvergence => FixStatus::NonConvergence,
            };
            (sol.state, status, sol.iterations)
        }
        Err(Error::SingularNormalMatrix { .. }) => (start, FixStatus::SolverFailed, 0),
        Err(e) => return Err(e),
    };
    Ok(Fix {
        epoch_id: epoch.epoch_id,
        region_id: epoch.region_id.clone(),
        state,
        status,
        iterations,
        used: solve_epoch.len(),
        regulation_fallback,
        error_estimates: e_hat,
    })
}

/// Scored result of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochResult {
    pub epoch_id: u64,
    pub region_id: String,
    pub horizontal_error: f64,
    pub status: FixStatus,
    pub used: usize,
    pub regulation_fallback: bool,
    /// Mean `|e|` over all measurements of the epoch.
    pub mean_abs_error: f64,
    /// Mean `|e_hat - e|`, when estimates were made.
    pub mean_abs_prediction_error: Option<f64>,
}

/// Absolute error statistics before and after correction by the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean_abs_pre: f64,
    pub median_abs_pre: f64,
    pub mean_abs_post: f64,
    pub median_abs_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub use_selector: bool,
    pub oracle_errors: bool,
    pub epochs: Vec<EpochResult>,
    pub p50: f64,
    pub p95: f64,
    pub nonconverged: usize,
    pub solver_failures: usize,
    pub regulation_fallbacks: usize,
    pub error_stats: Option<ErrorStats>,
    /// `(e, e_hat)` for every measurement, when estimates were made.
    #[serde(skip)]
    pub measurement_pairs: Vec<(f64, f64)>,
    pub provenance: Option<Provenance>,
    pub evaluated_regions: Vec<String>,
}

impl EvalReport {
    pub fn horizontal_errors(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.horizontal_error).collect()
    }
}

/// Loads the model named by `spec` (if any) and runs the pipeline.
pub fn run_pipeline(spec: &PipelineSpec, epochs: &[Epoch], oracle_errors: bool) -> Result<EvalReport> {
    let model = spec
        .model_path
        .as_deref()
        .map(TrainedModel::load)
        .transpose()?;
    let est = match (&model, oracle_errors) {
        (_, true) => Estimators {
            errors: ErrorSource::Oracle,
            elevation_fit: model.as_ref().and_then(|m| m.elevation_fit.as_ref()),
        },
        (Some(m), false) => Estimators::model(m),
        (None, false) => Estimators::none(),
    };
    run_pipeline_with(spec, epochs, &est)
}

pub fn run_pipeline_with(spec: &PipelineSpec, epochs: &[Epoch], est: &Estimators) -> Result<EvalReport> {
    spec.selector.validate()?;
    spec.wls.validate()?;
    est.check(spec)?;
    if epochs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scored: Vec<(EpochResult, Vec<(f64, f64)>)> = epochs
        .par_iter()
        .map(|epoch| score_epoch(epoch, spec, est))
        .collect::<Result<_>>()?;

    let (epochs_out, pairs): (Vec<EpochResult>, Vec<Vec<(f64, f64)>>) = scored.into_iter().unzip();
    let pairs: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    let he: Vec<f64> = epochs_out.iter().map(|e| e.horizontal_error).collect();
    let count = |s: FixStatus| epochs_out.iter().filter(|e| e.status == s).count();

    let error_stats = if pairs.is_empty() {
        None
    } else {
        let pre: Vec<f64> = pairs.iter().map(|(e, _)| e.abs()).collect();
        let post: Vec<f64> = pairs.iter().map(|(e, h)| (e - h).abs()).collect();
        Some(ErrorStats {
            count: pairs.len(),
            mean_abs_pre: mean(&pre),
            median_abs_pre: percentile(&pre, 50.0)?,
            mean_abs_post: mean(&post),
            median_abs_post: percentile(&post, 50.0)?,
        })
    };
    let mut regions: Vec<String> = epochs.iter().map(|e| e.region_id.clone()).collect();
    regions.sort();
    regions.dedup();
    let provenance = match est.errors {
        ErrorSource::Model(m) => Some(m.provenance.clone()),
        _ => None,
    };
    if let Some(p) = &provenance {
        if let Some(leak) = regions.iter().find(|r| p.train_regions.contains(r)) {
            log::warn!("region {leak} was used to train the model being evaluated");
        }
    }
    Ok(EvalReport {
        method: spec.method,
        use_selector: spec.use_selector,
        oracle_errors: matches!(est.errors, ErrorSource::Oracle),
        p50: percentile(&he, 50.0)?,
        p95: percentile(&he, 95.0)?,
        nonconverged: count(FixStatus::NonConvergence),
        solver_failures: count(FixStatus::SolverFailed),
        regulation_fallbacks: epochs_out.iter().filter(|e| e.regulation_fallback).count(),
        epochs: epochs_out,
        error_stats,
        measurement_pairs: pairs,
        provenance,
        evaluated_regions: regions,
    })
}

fn score_epoch(epoch: &Epoch, spec: &PipelineSpec, est: &Estimators) -> Result<(EpochResult, Vec<(f64, f64)>)> {
    let truth = epoch
        .truth
        .ok_or_else(|| Error::Data(format!("epoch {} has no truth for scoring", epoch.epoch_id)))?;
    let errors = epoch
        .truth_errors()
        .ok_or_else(|| Error::Data(format!("epoch {} has no truth errors", epoch.epoch_id)))?;
    let fix = localize(epoch, spec, est)?;
    let pairs: Vec<(f64, f64)> = match &fix.error_estimates {
        Some(h) => errors.iter().copied().zip(h.iter().copied()).collect(),
        None => Vec::new(),
    };
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let result = EpochResult {
        epoch_id: epoch.epoch_id,
        region_id: epoch.region_id.clone(),
        horizontal_error: horizontal_error(&fix.state, &truth),
        status: fix.status,
        used: fix.used,
        regulation_fallback: fix.regulation_fallback,
        mean_abs_error: mean(&abs),
        mean_abs_prediction_error: (!pairs.is_empty())
            .then(|| mean(&pairs.iter().map(|(e, h)| (e - h).abs()).collect::<Vec<_>>())),
    };
    Ok((result, pairs))
}

/// Mean `|e_hat - e|` of the measurements whose `|e|` falls in each
/// `[edges[k], edges[k+1])` bin; `None` for empty bins.
pub fn binned_prediction_error(pairs: &[(f64, f64)], edges: &[f64]) -> Vec<Option<f64>> {
    edges
        .windows(2)
        .map(|w| {
            let inside: Vec<f64> = pairs
                .iter()
                .filter(|(e, _)| (w[0]..w[1]).contains(&e.abs()))
                .map(|(e, h)| (e - h).abs())
                .collect();
            (!inside.is_empty()).then(|| mean(&inside))
        })
        .collect()
}

/// Mean and population standard deviation of a metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSpread {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub seeds: usize,
    pub p50: SeedSpread,
    pub p95: SeedSpread,
    pub mean_abs_post: Option<SeedSpread>,
}

pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<SeedAggregate> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    let spread = |v: Vec<f64>| SeedSpread {
        mean: mean(&v),
        std: super::metrics::std_dev(&v),
    };
    let post: Option<Vec<f64>> = reports
        .iter()
        .map(|r| r.error_stats.map(|s| s.mean_abs_post))
        .collect();
    Ok(SeedAggregate {
        seeds: reports.len(),
        p50: spread(reports.iter().map(|r| r.p50).collect()),
        p95: spread(reports.iter().map(|r| r.p95).collect()),
        mean_abs_post: post.map(spread),
    })
}
