#![allow(dead_code)]

use gnss_regulator::estimator::{GraphBatch, ModelDims, ModelParams, TrainingSet};
use gnss_regulator::simulator::{epoch_rng, generate_epoch, DatasetSpec, SceneConfig, SceneSpec, SkyStyle};
use gnss_regulator::Epoch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scene(spec: SceneSpec, seed: u64) -> SceneConfig {
    DatasetSpec {
        seed,
        regions: vec![spec],
    }
    .scenes()
    .unwrap()
    .remove(0)
}

pub fn epochs_of(scene: &SceneConfig, seed: u64, n: u64) -> Vec<Epoch> {
    (0..n)
        .map(|id| generate_epoch(scene, id, &mut epoch_rng(seed, &scene.region_id, id)))
        .collect()
}

pub fn urban_epochs(seed: u64, n: u64) -> Vec<Epoch> {
    let s = scene(SceneSpec::new("urban", SkyStyle::Urban, 51.5, -0.12), seed);
    epochs_of(&s, seed, n)
}

/// A small randomly initialized network with perturbed norm parameters and
/// a batch of `graphs` labeled epochs.
pub fn small_problem(seed: u64, graphs: usize, hidden: usize) -> (ModelParams, GraphBatch, Vec<f64>) {
    let spec = SceneSpec {
        n_sats_range: [5, 8],
        ..SceneSpec::new("grad", SkyStyle::DenseUrban, -33.9, 151.2)
    };
    let epochs = epochs_of(&scene(spec, seed), seed, graphs as u64);
    let set = TrainingSet::from_epochs(&epochs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        hidden,
        ..ModelDims::default()
    };
    let mut params = ModelParams::init(dims, 0.01, set.scaler.clone(), &mut rng).unwrap();
    // move gamma/beta away from 1/0 so their gradients are exercised generically
    let names = params.tensor_names();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with("gamma") || name.ends_with("beta") {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let indices: Vec<usize> = (0..graphs).collect();
    let (batch, targets) = set.batch(&indices).unwrap();
    (params, batch, targets)
}

#[derive(Debug, Default)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Entries whose stencil had to be narrowed to stay on one side of every kink.
    pub narrowed: usize,
    /// Entries sitting on a kink at every step tried.
    pub on_kink: usize,
    pub failures: Vec<String>,
    pub worst_ratio: f64,
}

const STEP: f64 = 1e-4;
const MIN_STEP: f64 = 1e-8;
const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;

/// Richardson-extrapolated central differences for every parameter entry. A
/// stencil whose points produce a different rectifier sign pattern than the base point is
/// narrowed by 10x until it does not.
pub fn gradcheck(params: &ModelParams, batch: &GraphBatch, targets: &[f64], weight_decay: f64) -> GradcheckReport {
    let (_, grads, cache) = params.compute_gradients(batch, targets, weight_decay).unwrap();
    let base_signs = cache.activation_signs();
    let names = params.tensor_names();
    let mut report = GradcheckReport::default();
    let mut work = params.clone();
    for (k, name) in names.iter().enumerate() {
        for i in 0..grads.tensors[k].len() {
            let original = work.tensors()[k][i];
            let eval = |work: &mut ModelParams, x: f64| {
                work.tensors_mut()[k][i] = x;
                let (loss, _, cache) = work.compute_gradients(batch, targets, weight_decay).unwrap();
                (loss, cache.activation_signs())
            };
            let mut h = STEP;
            let mut result = None;
            while h >= MIN_STEP {
                let points = [h, -h, h / 2.0, -h / 2.0].map(|d| eval(&mut work, original + d));
                if points.iter().all(|(_, s)| *s == base_signs) {
                    let wide = (points[0].0 - points[1].0) / (2.0 * h);
                    let narrow = (points[2].0 - points[3].0) / h;
                    // Richardson extrapolation cancels the h^2 truncation term
                    result = Some((4.0 * narrow - wide) / 3.0);
                    break;
                }
                h /= 10.0;
            }
            work.tensors_mut()[k][i] = original;
            report.checked += 1;
            if h < STEP {
                report.narrowed += 1;
            }
            let Some(fd) = result else {
                report.on_kink += 1;
                continue;
            };
            let analytic = grads.tensors[k][i];
            let allowed = (REL_TOL * analytic.abs().max(fd.abs())).max(ABS_TOL);
            let diff = (analytic - fd).abs();
            report.worst_ratio = report.worst_ratio.max(diff / allowed);
            if diff > allowed {
                report.failures.push(format!("{name}[{i}]: analytic {analytic:e} fd {fd:e}"));
            }
        }
    }
    report
}
