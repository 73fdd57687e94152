//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 2 4`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use mmgm::datamodel::DatasetInfo;
use mmgm::experiments::{run_coverage, run_roc, CoverageSpec, EdgeSetKind, RocMethod, RocSpec};
use mmgm::grouplasso::{solve, GroupLassoDesign, SolverOptions};
use mmgm::inference::{self, ModelFit, TestOptions};
use mmgm::linalg;
use mmgm::rng::{derive_seed, substream};
use mmgm::simulate::{
    gen_ground_truth, gen_temporal_model, partial_correlation, sample_dataset, simulate_dataset, GraphKind,
    MatrixNormal, SimulationSpec,
};
use mmgm::spatial::SpatialOptions;
use mmgm::temporal::{fit_temporal, truncate_singular, TemporalOptions};
use mmgm::{Dimensions, EdgeSet, MultiSessionDataset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// 1 ──────────────────────────────────────────────────────────────────────────

fn coverage_reproduction() -> Outcome {
    let dims = Dimensions::balanced(5, 10, 50, 30).unwrap();
    let sim = SimulationSpec::new(GraphKind::Random, dims, 2024);
    let mut spec = CoverageSpec::new(sim, 200, 7);
    spec.bootstrap = 1000;
    spec.levels = vec![0.95];
    let report = run_coverage(&spec).unwrap();
    let zero = report.row(0.95, EdgeSetKind::Zero).unwrap();
    let off = report.row(0.95, EdgeSetKind::Off).unwrap();
    let ok = |c: f64| (0.91..=0.97).contains(&c);
    outcome(
        ok(zero.coverage) && ok(off.coverage),
        format!(
            "coverage at 0.95: E_zero {:.3} (SE {:.3}, |E|={}), E_off {:.3} (SE {:.3}, |E|={}), {} failed replications; target [0.91, 0.97]",
            zero.coverage, zero.std_error, zero.num_edges, off.coverage, off.std_error, off.num_edges, report.failures
        ),
    )
}

// 2 ──────────────────────────────────────────────────────────────────────────

fn covariance_oracle() -> Outcome {
    let model = common::oracle_model();
    let edges = EdgeSet::off_diagonal(4);
    let draws = common::theta_draws(&model, &edges, 20_000, 11);
    let (cov, se) = common::covariance_with_se(&draws);
    let s = common::true_s(&model, &edges);
    let z = (&cov - &s).component_div(&se).abs().max();
    let frob = common::frob_over_p(&model);
    let closed = edges
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let r: Vec<f64> = model.rho.iter().map(|r| r[(i, j)]).collect();
            (s[(e, e)] - inference::diagonal_closed_form(&r, &frob)).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        z <= 4.0 && closed <= 1e-12,
        format!("max |MC − S| / MC-SE = {z:.2} (limit 4) over 36 entries; diagonal vs closed form {closed:.1e} (limit 1e-12)"),
    )
}

// 3 ──────────────────────────────────────────────────────────────────────────

fn random_design<R: Rng>(rng: &mut R, rows: usize, q: usize) -> DMatrix<f64> {
    let z = DMatrix::<f64>::from_fn(rows, q, |_, _| StandardNormal.sample(rng));
    let mix = DMatrix::<f64>::from_fn(q, q, |i, j| {
        if i == j {
            1.0
        } else if j > i {
            0.4 * rng.random::<f64>() - 0.2
        } else {
            0.0
        }
    });
    z * mix
}

/// Plain coordinate-descent lasso on the raw design (single session).
fn reference_lasso(x: &DMatrix<f64>, target: usize, gamma: f64, n: f64) -> DVector<f64> {
    let q = x.ncols();
    let y = x.column(target).clone_owned();
    let weights: Vec<f64> = (0..q).map(|j| x.column(j).norm() / (x.nrows() as f64).sqrt()).collect();
    let mut b = DVector::<f64>::zeros(q);
    let mut r = y.clone();
    for _ in 0..1_000_000 {
        let mut change = 0.0f64;
        for j in (0..q).filter(|&j| j != target) {
            let xj = x.column(j);
            let curv = xj.norm_squared() / n;
            let rho: f64 = xj.dot(&r) / n + curv * b[j];
            let t = gamma * weights[j];
            let new = rho.signum() * (rho.abs() - t).max(0.0) / curv;
            let delta = new - b[j];
            if delta != 0.0 {
                r.axpy(-delta, &xj, 1.0);
                b[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    b
}

fn group_lasso_optimality() -> Outcome {
    let mut rng = substream(33, &[]);
    let options = SolverOptions::default();
    let (mut worst_kkt, mut worst_gap, mut worst_ref) = (0.0f64, f64::INFINITY, 0.0f64);
    let mut single_session = 0;
    for inst in 0..50 {
        let m = 1 + inst % 3;
        let q = rng.random_range(3..=10);
        let rows: Vec<usize> = (0..m).map(|_| rng.random_range(12..=40)).collect();
        let designs: Vec<DMatrix<f64>> = rows.iter().map(|&r| random_design(&mut rng, r, q)).collect();
        let n0p = *rows.iter().min().unwrap() as f64;
        let design = GroupLassoDesign::from_designs(&designs, n0p).unwrap();
        let target = rng.random_range(0..q);
        let gamma = design.null_gamma(target) * rng.random_range(0.05..0.8);
        let problem = design.problem(target, gamma).unwrap();
        let sol = solve(&problem, &options);
        worst_kkt = worst_kkt.max(problem.kkt_residual(&sol.coefficients));
        let base = problem.objective(&sol.coefficients);
        for k in 0..10_000 {
            let scale = [1e-3, 1e-2, 1e-1, 1.0][k % 4];
            let mut pert = sol.coefficients.clone();
            match k % 3 {
                0 => {
                    for b in pert.iter_mut() {
                        for j in 0..q {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            b[j] += scale * z * 0.1;
                        }
                    }
                }
                1 => {
                    let (l, j) = (rng.random_range(0..m), rng.random_range(0..q));
                    pert[l][j] += scale * (rng.random::<f64>() - 0.5);
                }
                _ => {
                    let j = rng.random_range(0..q);
                    let f = 1.0 + scale * (rng.random::<f64>() - 0.5);
                    for b in pert.iter_mut() {
                        b[j] *= f;
                    }
                }
            }
            let gap = problem.objective(&pert) - base;
            worst_gap = worst_gap.min(gap / base.abs().max(1.0));
        }
        if m == 1 {
            single_session += 1;
            let reference = reference_lasso(&designs[0], target, gamma, n0p);
            let mut ours = sol.coefficients[0].clone();
            ours[target] = 0.0;
            worst_ref = worst_ref.max((ours - reference).amax());
        }
    }
    outcome(
        worst_kkt <= 1e-6 && worst_gap >= -1e-12 && worst_ref <= 1e-6,
        format!(
            "50 instances: max KKT residual {worst_kkt:.1e} (limit 1e-6); min relative objective gain over 10^4 perturbations {worst_gap:.1e} (must be >= 0); {single_session} single-session instances max |Δβ| vs reference lasso {worst_ref:.1e} (limit 1e-6)"
        ),
    )
}

// 4 ──────────────────────────────────────────────────────────────────────────

fn bootstrap_calibration() -> Outcome {
    let (q, _) = inference::bootstrap_quantile(&DMatrix::identity(1, 1), 0.05, 200_000, 4).unwrap();
    let exact = 1.959_963_984_540_054;
    outcome(
        (q - exact).abs() <= 0.02,
        format!("q̂_0.95 = {q:.4} vs folded-normal {exact:.4} (tolerance 0.02)"),
    )
}

// 5 ──────────────────────────────────────────────────────────────────────────

fn temporal_properties() -> Outcome {
    let ns = [5usize, 10, 20, 40];
    let (p, q) = (50, 30);
    let options = TemporalOptions::default();
    let (mut worst_trace, mut worst_inv, mut worst_sv) = (0.0f64, 0.0f64, 0.0f64);
    let mut medians = Vec::new();
    for &n in &ns {
        let mut errors = Vec::new();
        for seed in 0..10u64 {
            let dims = Dimensions::balanced(1, n, p, q).unwrap();
            let ds = simulate_dataset(&SimulationSpec::new(GraphKind::Random, dims, 500 + seed)).unwrap();
            let truth = &ds.ground_truth.as_ref().unwrap().sigma_t[0];
            let fit = fit_temporal(&ds, &options).unwrap();
            let s = &fit.sessions[0];
            worst_trace = worst_trace.max((s.sigma.trace() - p as f64).abs());
            worst_inv = worst_inv.max(linalg::max_abs_diff(&(&s.sigma * &s.omega), &DMatrix::identity(p, p)));
            let factor = truncate_singular(&(DMatrix::identity(p, p) - &s.beta), s.eta).unwrap();
            for sv in factor.singular_values().iter() {
                let excess = (1.0 / s.eta - sv).max(sv - s.eta).max(0.0);
                worst_sv = worst_sv.max(excess);
            }
            errors.push((s.frob_sq_over_p * p as f64 - linalg::frobenius_sq(truth)).abs() / p as f64);
        }
        errors.sort_by(f64::total_cmp);
        medians.push(0.5 * (errors[4] + errors[5]));
    }
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    outcome(
        worst_trace <= 1e-8 && worst_inv <= 1e-6 && worst_sv <= 1e-10 && monotone,
        format!(
            "max |tr Σ̂ − p| {worst_trace:.1e}; max |Σ̂Ω̂ − I| {worst_inv:.1e}; singular-value excess {worst_sv:.1e}; median Frobenius error for n = {ns:?}: {}",
            medians.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// 6 ──────────────────────────────────────────────────────────────────────────

fn sample_sessions(sigma_t: &[DMatrix<f64>], sigma_s: &[DMatrix<f64>], n: usize, seed: u64) -> MultiSessionDataset {
    let sessions = sigma_t
        .iter()
        .zip(sigma_s)
        .enumerate()
        .map(|(l, (t, s))| {
            let sampler = MatrixNormal::new(t, s).unwrap();
            (0..n)
                .map(|k| sampler.sample(&mut substream(seed, &[l as u64, k as u64])))
                .collect()
        })
        .collect();
    MultiSessionDataset::new(sessions, DatasetInfo::default()).unwrap()
}

fn size_and_power() -> Outcome {
    let dims = Dimensions::balanced(3, 10, 30, 15).unwrap();
    let spec = SimulationSpec::new(GraphKind::Random, dims.clone(), 99);
    let truth = gen_ground_truth(&spec).unwrap();
    let null_edges = truth.zero_edges();
    let test = |ds: &MultiSessionDataset, edges: &EdgeSet, seed: u64| -> bool {
        let fit = ModelFit::fit(ds, &SpatialOptions::default(), &TemporalOptions::default())
            .unwrap()
            .estimates();
        let opts = TestOptions {
            alpha: 0.05,
            bootstrap: 1000,
            seed,
        };
        inference::simultaneous_test(&fit, edges, &opts, None).unwrap().result.reject
    };
    let size_reps = 500;
    let rejections = (0..size_reps)
        .filter(|&r| {
            let ds = sample_dataset(&truth, &dims, derive_seed(1, &[r]), DatasetInfo::default()).unwrap();
            test(&ds, &null_edges, r)
        })
        .count();
    let size = rejections as f64 / size_reps as f64;

    let q = 15;
    let mut omega = DMatrix::<f64>::identity(q, q);
    omega[(0, 1)] = -0.3;
    omega[(1, 0)] = -0.3;
    let rho01 = partial_correlation(&omega)[(0, 1)];
    let sigma_s = vec![linalg::spd_inverse(&omega, "omega").unwrap(); 3];
    let sigma_t = vec![gen_temporal_model(30, 1.0, 0.2).unwrap().sigma; 3];
    let all = EdgeSet::off_diagonal(q);
    let power_reps = 100;
    let hits = (0..power_reps)
        .filter(|&r| test(&sample_sessions(&sigma_t, &sigma_s, 10, derive_seed(2, &[r])), &all, r))
        .count();
    let power = hits as f64 / power_reps as f64;
    outcome(
        (0.03..=0.08).contains(&size) && power >= 0.95,
        format!(
            "size {size:.3} over {size_reps} reps, |E_zero|={} (target [0.03, 0.08]); power {power:.2} over {power_reps} reps with ρ={rho01:.2} on one edge, |E|={} (target >= 0.95)",
            null_edges.len(),
            all.len()
        ),
    )
}

// 7 ──────────────────────────────────────────────────────────────────────────

fn roc_ordering() -> Outcome {
    let dims = Dimensions::balanced(5, 5, 50, 30).unwrap();
    let spec = RocSpec::new(SimulationSpec::new(GraphKind::Random, dims, 0), 20, 17);
    let report = run_roc(&spec).unwrap();
    let group = report.curve(RocMethod::Group).unwrap().mean_auc;
    let single = report.curve(RocMethod::PerSession).unwrap().mean_auc;
    let min_p = report.curve(RocMethod::PerSessionMinP).unwrap().mean_auc;
    outcome(
        group >= single,
        format!(
            "mean AUC over 20 replications: group {group:.4}, per-session (max p) {single:.4}; \
             informational per-session (min p) {min_p:.4}; {} failed replications",
            report.failures
        ),
    )
}

// 8 ──────────────────────────────────────────────────────────────────────────

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmgm"))
        .args(args)
        .env("MMGM_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn cli_pipeline(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    run_cli(&["simulate", "--kind", "hub", "--m", "2", "--n", "6", "--p", "20", "--q", "8", "--seed", "5", "--out", &p("data")])?;
    run_cli(&["fit", "--data", &p("data"), "--out", &p("fit")])?;
    run_cli(&["test", "--data", &p("data"), "--fit-dir", &p("fit"), "--out", &p("test"), "--bootstrap", "500", "--seed", "3"])?;
    run_cli(&["test", "--data", &p("data"), "--out", &p("ctest"), "--bootstrap", "500", "--seed", "3", "--c", "0.05", "--edges", "cross-block:0..4,4..8"])?;
    run_cli(&[
        "coverage", "--kind", "random", "--m", "2", "--n", "5", "--p", "15", "--q", "6", "--sim-seed", "1",
        "--replications", "3", "--bootstrap", "200", "--seed", "4", "--out", &p("coverage"),
    ])?;
    run_cli(&[
        "roc", "--kind", "chain", "--m", "2", "--n", "5", "--p", "15", "--q", "6", "--replications", "2", "--seed", "4",
        "--out", &p("roc"),
    ])?;
    Ok(read_tree(root))
}

fn equivariance_and_determinism() -> Outcome {
    let dims = Dimensions::balanced(3, 8, 30, 12).unwrap();
    let ds = simulate_dataset(&SimulationSpec::new(GraphKind::Random, dims, 8)).unwrap();
    let fit = |d: &MultiSessionDataset| {
        ModelFit::fit(d, &SpatialOptions::default(), &TemporalOptions::default())
            .unwrap()
            .estimates()
    };
    let (a, b) = (fit(&ds), fit(&ds.scaled(3.0)));
    let drho = a
        .rho
        .iter()
        .zip(&b.rho)
        .map(|(x, y)| linalg::max_abs_diff(x, y))
        .fold(0.0, f64::max);
    let edges = EdgeSet::off_diagonal(12);
    let opts = TestOptions {
        alpha: 0.05,
        bootstrap: 1000,
        seed: 21,
    };
    let ta = inference::simultaneous_test(&a, &edges, &opts, None).unwrap();
    let tb = inference::simultaneous_test(&b, &edges, &opts, None).unwrap();
    let dt = ta
        .statistic
        .t_hat
        .iter()
        .zip(&tb.statistic.t_hat)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let dq = (ta.result.quantile - tb.result.quantile).abs();
    let same_decision = ta.result.reject == tb.result.reject;
    let scale_ok = drho <= 1e-8 && dt <= 1e-8 && dq <= 1e-8 && same_decision;

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (det_ok, det_detail) = match (cli_pipeline(d1.path()), cli_pipeline(d2.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            let same_names = x.keys().eq(y.keys());
            (
                same_names && differing.is_empty(),
                format!("{} output files from simulate/fit/test/coverage/roc, {} differ", x.len(), differing.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => (false, format!("CLI failed: {e}")),
    };
    outcome(
        scale_ok && det_ok,
        format!(
            "scaling by 3: max |Δρ̂| {drho:.1e}, max |ΔT̂| {dt:.1e}, |Δq̂| {dq:.1e}, same decision {same_decision}; rerun: {det_detail}"
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "coverage reproduction", coverage_reproduction),
        (2, "asymptotic-covariance oracle", covariance_oracle),
        (3, "group-lasso optimality", group_lasso_optimality),
        (4, "bootstrap quantile calibration", bootstrap_calibration),
        (5, "temporal estimator properties", temporal_properties),
        (6, "size and power", size_and_power),
        (7, "group-vs-single ROC ordering", roc_ordering),
        (8, "scale equivariance and determinism", equivariance_and_determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {id} ({name}): {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
