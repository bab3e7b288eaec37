//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! lines are visible in `cargo test` output.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use gnss_regulator::estimator::{
    elevation_samples, fit_elevation_model, initial_state, train,
    Provenance, TrainConfig, TrainedModel, TrainingSet,
};
use gnss_regulator::eval::{
    binned_prediction_error, mean, run_pipeline_with, Estimators, PipelineSpec,
};
use gnss_regulator::geodesy::{ecef_to_enu, enu_to_ecef};
use gnss_regulator::regulator::{build_scaled_geometry, kernel_basis, project_onto_kernel, regulate_weights};
use gnss_regulator::selector::{select_measurements, SelectorConfig};
use gnss_regulator::simulator::{generate_dataset, load_dataset, DatasetSpec, SceneSpec, SkyStyle};
use gnss_regulator::solver::{cost, geometry_matrix, residuals, wls_solve, WlsConfig};
use gnss_regulator::{Epoch, Error, Method, SolutionState};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn oracle_regulation() -> Outcome {
    let start = Instant::now();
    let data = common::urban_epochs(101, 2000);
    let measurements = run_pipeline_with(&PipelineSpec::new(Method::RegulateMeasurements), &data, &Estimators::oracle()).unwrap();
    let weights = run_pipeline_with(&PipelineSpec::new(Method::RegulateWeights), &data, &Estimators::oracle()).unwrap();
    let eligible: Vec<f64> = weights
        .epochs
        .iter()
        .zip(&data)
        .filter(|(r, e)| e.len() >= 5 && !r.regulation_fallback)
        .map(|(r, _)| r.horizontal_error)
        .collect();
    let p95_w = gnss_regulator::eval::percentile(&eligible, 95.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    (
        measurements.p95 <= 1e-2 && p95_w <= 1e-1 && secs <= 60.0,
        format!(
            "regulate_measurements p95 {:.2e} m; regulate_weights p95 {:.2e} m on {}/{} epochs; {:.1} s",
            measurements.p95,
            p95_w,
            eligible.len(),
            data.len(),
            secs
        ),
    )
}

fn stationarity() -> Outcome {
    let data = common::urban_epochs(202, 1000);
    let (mut worst, mut kernel_ok, mut triples) = (0.0f64, true, 0);
    for epoch in &data {
        let truth = epoch.truth.unwrap();
        let e = epoch.truth_errors().unwrap();
        let h = geometry_matrix(epoch, &truth).unwrap();
        let w = match regulate_weights(&h, &e) {
            Ok(w) => w,
            Err(Error::DegenerateProjection { .. }) => continue,
            Err(err) => panic!("{err}"),
        };
        triples += 1;
        let m = h.matrix();
        let mut g = [0.0; 4];
        let mut scale = 0.0;
        for i in 0..e.len() {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += m[(i, j)] * w[i] * e[i];
                scale += (m[(i, j)] * w[i] * e[i]).abs();
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(norm / scale.max(f64::MIN_POSITIVE));
        let dim = kernel_basis(&build_scaled_geometry(&h, &e).unwrap()).ncols();
        kernel_ok &= dim == e.len() - 4;
    }
    (
        worst <= 1e-9 && kernel_ok && triples >= 990,
        format!("{triples} triples, worst |H^T W e| / scale {worst:.2e}, kernel dim n-4 everywhere: {kernel_ok}"),
    )
}

fn non_unique_weights() -> Outcome {
    let data = common::urban_epochs(303, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ok, mut worst, mut min_gap) = (0, 0.0f64, f64::INFINITY);
    for epoch in &data {
        let truth = epoch.truth.unwrap();
        let e = epoch.truth_errors().unwrap();
        let start = initial_state(epoch).unwrap();
        let h = geometry_matrix(epoch, &start).unwrap();
        let n = e.len();
        let seed = DVector::from_fn(n, |_, _| 1.0 + rng.random_range(-0.5..0.5));
        let w1 = regulate_weights(&h, &e).unwrap();
        let w2 = project_onto_kernel(&h, &e, &seed).unwrap();
        let unit = |w: &[f64]| {
            let v = DVector::from_column_slice(w);
            v.normalize()
        };
        let gap = (unit(&w1) - unit(&w2)).norm();
        min_gap = min_gap.min(gap);
        let d1 = wls_solve(epoch, &w1, start, &WlsConfig::default()).unwrap().state.pos.distance(truth.pos);
        let d2 = wls_solve(epoch, &w2, start, &WlsConfig::default()).unwrap().state.pos.distance(truth.pos);
        worst = worst.max(d1).max(d2);
        ok += usize::from(d1 <= 1e-3 && d2 <= 1e-3 && gap > 1e-3);
    }
    (
        ok == data.len(),
        format!("{ok}/{} epochs: two kernel points (min unit-vector gap {min_gap:.3}) both reach truth, worst {worst:.2e} m", data.len()),
    )
}

fn gradients() -> Outcome {
    let (mut checked, mut narrowed, mut on_kink, mut worst) = (0, 0, 0, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let graphs = 2 + (seed % 3) as usize;
        let (params, batch, targets) = common::small_problem(1000 + seed, graphs, 6);
        let wd = if seed % 2 == 0 { 0.0 } else { 1e-3 };
        let r = common::gradcheck(&params, &batch, &targets, wd);
        checked += r.checked;
        narrowed += r.narrowed;
        on_kink += r.on_kink;
        worst = worst.max(r.worst_ratio);
        failures.extend(r.failures);
    }
    (
        failures.is_empty() && on_kink * 200 <= checked,
        format!(
            "{checked} entries over 10 batches, worst error/tolerance {worst:.3}, {narrowed} narrowed at kinks, {on_kink} unresolved, failures {:?}",
            &failures[..failures.len().min(3)]
        ),
    )
}

fn permutation() -> Outcome {
    let data = common::urban_epochs(505, 300);
    let set = TrainingSet::from_epochs(&data[..200]).unwrap();
    let cfg = TrainConfig {
        iterations: 150,
        hidden: 16,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let params = gnss_regulator::estimator::train_on(&set, &cfg).unwrap().params;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for epoch in &data[200..] {
        let base = params.predict(epoch).unwrap();
        let mut perm: Vec<usize> = (0..epoch.len()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let mut permuted = epoch.clone();
        permuted.observations = perm.iter().map(|&i| epoch.observations[i]).collect();
        let moved = params.predict(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            worst = worst.max((moved[k] - base[i]).abs());
        }
    }
    (worst <= 1e-9, format!("100 epochs, worst |f(P x) - P f(x)| {worst:.2e} m"))
}

/// Minimizes the weighted cost over an ENU lattice around `center`, with the
/// clock bias solved in closed form at every node.
fn lattice_minimum(epoch: &Epoch, weights: &[f64], origin: SolutionState, center: Vector3<f64>, half: f64, step: f64) -> (Vector3<f64>, f64) {
    let k = (half / step).round() as i64;
    let mut best = (center, f64::INFINITY);
    let wsum: f64 = weights.iter().sum();
    for i in -k..=k {
        for j in -k..=k {
            for l in -k..=k {
                let enu = center + Vector3::new(i as f64, j as f64, l as f64) * step;
                let pos = enu_to_ecef(origin.pos, &enu);
                let geometric = residuals(epoch, &SolutionState::new(pos, 0.0)).unwrap();
                let clock = -geometric.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / wsum;
                let c = cost(epoch, &SolutionState::new(pos, clock), weights).unwrap();
                if c < best.1 {
                    best = (enu, c);
                }
            }
        }
    }
    best
}

fn brute_force() -> Outcome {
    let spec = SceneSpec {
        n_sats_range: [6, 8],
        ..SceneSpec::new("small", SkyStyle::OpenSky, 35.7, 139.7)
    };
    let data = common::epochs_of(&common::scene(spec, 606), 606, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut ok, mut worst) = (0, 0.0f64);
    let mut notes = Vec::new();
    for epoch in &data {
        let truth = epoch.truth.unwrap();
        let w: Vec<f64> = (0..epoch.len()).map(|_| rng.random_range(0.5..2.0)).collect();
        let sol = wls_solve(epoch, &w, initial_state(epoch).unwrap(), &WlsConfig::default()).unwrap();
        // coarse-to-fine lattices; along a narrow cost valley the best node of a
        // coarse lattice can sit several nodes away from the true minimum
        let mut grid = (Vector3::zeros(), f64::INFINITY);
        for (half, step) in [(40.0, 2.0), (6.0, 0.5), (1.5, 0.05)] {
            grid = lattice_minimum(epoch, &w, truth, grid.0, half, step);
        }
        let (grid, grid_cost) = grid;
        let wls_enu = ecef_to_enu(truth.pos, sol.state.pos);
        let dev = (wls_enu - grid).abs().max();
        worst = worst.max(dev);
        let inside = wls_enu.abs().max() < 40.0;
        let wls_cost = cost(epoch, &sol.state, &w).unwrap();
        let lower = wls_cost <= grid_cost * (1.0 + 1e-9) + 1e-9;
        if !(inside && lower) {
            notes.push(format!("epoch {}: inside {inside}, cost {wls_cost:.6e} vs lattice {grid_cost:.6e}", epoch.epoch_id));
        }
        ok += usize::from(inside && dev <= 0.5 && lower);
    }
    (
        ok == data.len(),
        format!("{ok}/{} epochs within lattice resolution 0.5 m (worst per-axis gap to the refined lattice argmin {worst:.3} m) {notes:?}", data.len()),
    )
}

fn selector_conformance() -> Outcome {
    let cfg = |n_req, lower, upper, step| SelectorConfig { n_req, lower, upper, step };
    let traces = [
        (vec![1.0, 2.0, 100.0], cfg(3, -15.0, 15.0, 5.0), vec![true, true, true]),
        (vec![1.0, 2.0, 100.0, -1.0, 3.0], cfg(4, -10.0, 10.0, 5.0), vec![true, true, false, true, true]),
        (vec![20.0, 25.0, 30.0, 100.0], cfg(3, -10.0, 10.0, 5.0), vec![true, true, true, false]),
    ];
    let traced = traces.iter().all(|(e, c, want)| select_measurements(e, c).mask == *want);
    let relaxed = select_measurements(&traces[2].0, &traces[2].1).upper == 30.0;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fuzz_ok = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..40);
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-200.0..400.0)).collect();
        let lower = rng.random_range(-50.0..0.0);
        let c = cfg(rng.random_range(4..16), lower, lower + rng.random_range(0.0..60.0), rng.random_range(0.5..20.0));
        let s = select_measurements(&e, &c);
        fuzz_ok += usize::from(s.kept() >= n.min(c.n_req));
    }
    (
        traced && relaxed && fuzz_ok == 10_000,
        format!("hand traces match: {}, fuzzed mask-size bound {fuzz_ok}/10000", traced && relaxed),
    )
}

struct SeedRun {
    unit: (f64, f64),
    full: (f64, f64),
    mean_abs_pre: f64,
    mean_abs_post: f64,
    bins: Vec<Option<f64>>,
}

const HOLDOUT: &str = "soma";
const SEEDS: u64 = 5;
const ACCEPTANCE_ITERATIONS: usize = 2000;

fn learned_runs() -> (Vec<SeedRun>, f64, bool) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&DatasetSpec::default_city(2024, 1000), dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let (train_epochs, test) = ds.split(HOLDOUT).unwrap();
    let leak_free = train_epochs.iter().all(|e| e.region_id != HOLDOUT) && test.iter().all(|e| e.region_id == HOLDOUT);
    let unit = run_pipeline_with(&PipelineSpec::new(Method::WlsUnit), &test, &Estimators::none()).unwrap();
    let elevation_fit = fit_elevation_model(&elevation_samples(&train_epochs).unwrap()).unwrap();
    let runs = (0..SEEDS)
        .map(|seed| {
            let cfg = TrainConfig {
                iterations: ACCEPTANCE_ITERATIONS,
                seed,
                ..TrainConfig::default()
            };
            let model = TrainedModel {
                params: train(&train_epochs, &cfg).unwrap().params,
                elevation_fit: Some(elevation_fit),
                provenance: Provenance::default(),
            };
            let spec = PipelineSpec::new(Method::RegulateMeasurements).with_selector();
            let full = run_pipeline_with(&spec, &test, &Estimators::model(&model)).unwrap();
            let stats = full.error_stats.unwrap();
            SeedRun {
                unit: (unit.p50, unit.p95),
                full: (full.p50, full.p95),
                mean_abs_pre: stats.mean_abs_pre,
                mean_abs_post: stats.mean_abs_post,
                bins: binned_prediction_error(&full.measurement_pairs, &[0.0, 50.0, 100.0, 150.0]),
            }
        })
        .collect();
    (runs, start.elapsed().as_secs_f64(), leak_free)
}

fn end_to_end(runs: &[SeedRun], secs: f64, leak_free: bool) -> Outcome {
    let passing = runs
        .iter()
        .filter(|r| r.full.1 <= 0.6 * r.unit.1 && r.full.0 <= 0.6 * r.unit.0)
        .count();
    let ratios: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.full.0 / r.unit.0, r.full.1 / r.unit.1))
        .collect();
    (
        passing >= 4 && secs <= 1800.0 && leak_free,
        format!(
            "{passing}/{SEEDS} seeds pass; p50/p95 ratios to unit WLS [{}]; unit p50 {:.2} m p95 {:.2} m; {:.0} s",
            ratios.join(", "),
            runs[0].unit.0,
            runs[0].unit.1,
            secs
        ),
    )
}

fn correction(runs: &[SeedRun]) -> Outcome {
    let ratios: Vec<f64> = runs.iter().map(|r| r.mean_abs_post / r.mean_abs_pre).collect();
    let avg = mean(&ratios);
    (
        avg <= 0.5,
        format!(
            "mean |e_hat - e| / mean |e| = {avg:.3} averaged over seeds (per seed {:?}), mean |e| {:.2} m",
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            runs[0].mean_abs_pre
        ),
    )
}

fn error_trend(runs: &[SeedRun]) -> Outcome {
    let bin = |k: usize| -> Option<f64> {
        let v: Option<Vec<f64>> = runs.iter().map(|r| r.bins[k]).collect();
        v.map(|v| mean(&v))
    };
    match (bin(0), bin(2)) {
        (Some(low), Some(high)) => (
            low < high,
            format!("mean |e_hat - e| for |e| in [0,50): {low:.2} m, in [100,150): {high:.2} m"),
        ),
        _ => (false, "an error bin is empty".into()),
    }
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_gnss-regulator");
    let run = |args: &[&str], cwd: &std::path::Path| {
        let out = Command::new(bin).args(args).current_dir(cwd).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run(&["generate", "--out", "data", "--seed", "77", "--epochs", "80"], d.path());
        run(&["train", "--data", "data", "--holdout", "park", "--out", "model.json", "--seed", "9", "--iters", "60", "--batch", "8"], d.path());
    }
    let files = ["data/manifest.json", "data/park.jsonl", "data/mission.jsonl", "data/soma.jsonl", "data/downtown.jsonl", "data/embarcadero.jsonl", "model.json"];
    let identical = files
        .iter()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap())
        .count();
    (
        identical == files.len(),
        format!("{identical}/{} generated and trained files byte-identical across runs", files.len()),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "exact-error oracle", guarded(oracle_regulation)),
        (2, "stationarity identity", guarded(stationarity)),
        (3, "non-unique optimal weights", guarded(non_unique_weights)),
        (4, "gradient correctness", guarded(gradients)),
        (5, "permutation equivariance", guarded(permutation)),
        (6, "WLS vs brute force", guarded(brute_force)),
        (7, "selector conformance", guarded(selector_conformance)),
    ];
    match catch_unwind(learned_runs) {
        Ok((runs, secs, leak_free)) => {
            results.push((8, "learned end-to-end improvement", guarded(|| end_to_end(&runs, secs, leak_free))));
            results.push((9, "measurement-error correction", guarded(|| correction(&runs))));
            results.push((10, "error-magnitude trend", guarded(|| error_trend(&runs))));
        }
        Err(_) => {
            for (n, name) in [(8, "learned end-to-end improvement"), (9, "measurement-error correction"), (10, "error-magnitude trend")] {
                results.push((n, name, (false, "training run panicked".into())));
            }
        }
    }
    results.push((11, "determinism", guarded(determinism)));

    let mut failed = 0;
    for (n, name, (pass, detail)) in &results {
        println!("criterion {n:>2} [{}] {name}: {detail}", if *pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
