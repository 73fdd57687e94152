mod common;

use mmgm::inference::{self, BootstrapDraws, Estimates, ModelFit, TestOptions};
use mmgm::simulate::{simulate_dataset, GraphKind, SimulationSpec};
use mmgm::spatial::SpatialOptions;
use mmgm::temporal::TemporalOptions;
use mmgm::{linalg, Dimensions, EdgeSet};
use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn plug_in_covariance_matches_monte_carlo() {
    let model = common::oracle_model();
    let edges = EdgeSet::off_diagonal(4);
    let draws = common::theta_draws(&model, &edges, 20_000, 11);
    let (mc, se) = common::covariance_with_se(&draws);
    let s = common::true_s(&model, &edges);
    let worst = (0..edges.len())
        .flat_map(|a| (0..edges.len()).map(move |b| (a, b)))
        .map(|(a, b)| ((s[(a, b)] - mc[(a, b)]) / se[(a, b)]).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 4.5, "largest z-score {worst:.2}");
}

#[test]
fn bootstrap_quantile_matches_independent_maximum() {
    // For S = I_k, P(max |Z| ≤ x) = (2Φ(x) − 1)^k.
    let k = 10;
    let alpha: f64 = 0.05;
    let normal = Normal::standard();
    let exact = normal.inverse_cdf(0.5 + 0.5 * (1.0 - alpha).powf(1.0 / k as f64));
    let draws = BootstrapDraws::from_covariance(&DMatrix::identity(k, k), 40_000, 3).unwrap();
    let q = draws.quantile(alpha).unwrap();
    assert!((q - exact).abs() < 0.03, "quantile {q:.4} vs exact {exact:.4}");
}

#[test]
fn perfectly_correlated_edges_reduce_to_one_normal() {
    let k = 6;
    let s = DMatrix::from_element(k, k, 2.0);
    let draws = BootstrapDraws::from_covariance(&s, 40_000, 5).unwrap();
    let exact = 2f64.sqrt() * Normal::standard().inverse_cdf(0.975);
    let q = draws.quantile(0.05).unwrap();
    assert!((q - exact).abs() < 0.04, "quantile {q:.4} vs exact {exact:.4}");
}

fn small_dataset(seed: u64) -> mmgm::MultiSessionDataset {
    let dims = Dimensions::new(vec![4, 6], 12, 6).unwrap();
    simulate_dataset(&SimulationSpec::new(GraphKind::Random, dims, seed)).unwrap()
}

#[test]
fn fit_is_deterministic() {
    let ds = small_dataset(1);
    let a = ModelFit::fit(&ds, &SpatialOptions::default(), &TemporalOptions::default()).unwrap();
    let b = ModelFit::fit(&ds, &SpatialOptions::default(), &TemporalOptions::default()).unwrap();
    assert_eq!(a.to_bundle(), b.to_bundle());
}

#[test]
fn statistic_is_invariant_to_rescaling_the_data() {
    let ds = small_dataset(2);
    let fit = |d: &mmgm::MultiSessionDataset| {
        ModelFit::fit(d, &SpatialOptions::default(), &TemporalOptions::default())
            .unwrap()
            .estimates()
    };
    let base = fit(&ds);
    let scaled = fit(&ds.scaled(3.0));
    let edges = EdgeSet::off_diagonal(6);
    let opts = TestOptions {
        bootstrap: 500,
        ..TestOptions::default()
    };
    let a = inference::simultaneous_test(&base, &edges, &opts, None).unwrap().result;
    let b = inference::simultaneous_test(&scaled, &edges, &opts, None).unwrap().result;
    assert!((a.sup_norm - b.sup_norm).abs() < 1e-6 * a.sup_norm.max(1.0));
    assert!((a.quantile - b.quantile).abs() < 1e-6 * a.quantile);
    assert_eq!(a.reject, b.reject);
}

#[test]
fn estimates_round_trip_through_bundle() {
    let ds = small_dataset(3);
    let fit = ModelFit::fit(&ds, &SpatialOptions::default(), &TemporalOptions::default()).unwrap();
    let direct = fit.estimates();
    let loaded = Estimates::from_bundle(&fit.to_bundle(), ds.dims().clone()).unwrap();
    for (a, b) in direct.rho.iter().zip(&loaded.rho) {
        assert_eq!(linalg::max_abs_diff(a, b), 0.0);
    }
    for (a, b) in direct.frob_sq_over_p.iter().zip(&loaded.frob_sq_over_p) {
        assert!((a - b).abs() <= 1e-12 * a);
    }
}
