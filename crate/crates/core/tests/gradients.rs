mod common;

use common::gradient_cases;

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..25 {
        for case in gradient_cases(seed) {
            assert!(case.error < 1e-4, "seed {seed}: {} relative error {:e}", case.name, case.error);
        }
    }
}

