//! Fixtures shared by the benchmarks.

use qgs_core::model::WienerModel;
use qgs_core::nonlinearity::PiecewiseNonlinearity;
use qgs_core::simulate::{simulate, InputSpec, Trajectory};

pub const EXAMPLES: [&str; 3] = ["example1", "example2", "example3"];

/// Preset model, nonlinearity and one realization of `horizon` steps.
pub fn fixture(name: &str, horizon: usize, seed: u64) -> (WienerModel, PiecewiseNonlinearity, Trajectory) {
    let model = WienerModel::preset(name).expect("known preset");
    let nl = PiecewiseNonlinearity::preset(name).expect("known preset");
    let tr = simulate(&model, &nl, horizon, &InputSpec::iid(model.m(), 0.0, 2.0), seed).expect("presets simulate");
    (model, nl, tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_requested_length() {
        for name in EXAMPLES {
            let (model, _, tr) = fixture(name, 7, 1);
            assert_eq!(tr.len(), 7);
            assert_eq!(tr.states[0].len(), model.n());
        }
    }
}
