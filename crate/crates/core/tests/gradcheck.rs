mod common;

use common::{gradcheck, small_problem};

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let (params, batch, targets) = small_problem(seed, 3, 5);
        let report = gradcheck(&params, &batch, &targets, 0.0);
        assert!(report.failures.is_empty(), "seed {seed}: {:?}", &report.failures[..report.failures.len().min(5)]);
        assert_eq!(report.checked, params.parameter_count());
        assert!(report.on_kink * 100 <= report.checked);
    }
}

#[test]
fn weight_decay_gradients_match() {
    let (params, batch, targets) = small_problem(9, 2, 4);
    let report = gradcheck(&params, &batch, &targets, 0.05);
    assert!(report.failures.is_empty(), "{:?}", report.failures);
}
