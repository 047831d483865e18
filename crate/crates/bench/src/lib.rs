//! Fixtures shared by the benchmarks.

use tlayer_core::bundled::{bundled_problems, BundledProblem};
use tlayer_core::{BoxDomain, PiecewiseField, StateLayout};

/// Bundled problem by name.
pub fn problem(name: &str) -> BundledProblem {
    bundled_problems()
        .expect("bundled problems build")
        .into_iter()
        .find(|p| p.name == name)
        .unwrap_or_else(|| panic!("no bundled problem '{name}'"))
}

/// `L = 1/2, …, 1/32`.
pub fn l_grid() -> Vec<f64> {
    (1..=5).map(|k| 0.5_f64.powi(k)).collect()
}

/// Scalar step across `x_0 = 0` in the centred unit box.
pub fn mm_step(dim: usize) -> PiecewiseField {
    let domain = BoxDomain::new(vec![-0.5; dim], vec![0.5; dim]).expect("unit box");
    PiecewiseField::flat_step(
        StateLayout::scalar(dim),
        domain,
        0,
        0.0,
        vec![-1.0],
        vec![1.0],
    )
    .expect("flat step")
}
