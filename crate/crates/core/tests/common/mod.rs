#![allow(dead_code)]

use mmgm::inference;
use mmgm::linalg;
use mmgm::rng::substream;
use mmgm::simulate::{gen_temporal_model, partial_correlation, MatrixNormal};
use mmgm::EdgeSet;
use nalgebra::DMatrix;

/// Small two-session model with known parameters.
pub struct OracleModel {
    pub omega: Vec<DMatrix<f64>>,
    pub sigma_s: Vec<DMatrix<f64>>,
    pub rho: Vec<DMatrix<f64>>,
    pub sigma_t: Vec<DMatrix<f64>>,
    pub n: Vec<usize>,
    pub p: usize,
}

pub fn oracle_model() -> OracleModel {
    let p = 20;
    let omegas = [
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.4, 0.0, 0.2, //
                0.4, 1.2, -0.3, 0.0, //
                0.0, -0.3, 1.0, 0.35, //
                0.2, 0.0, 0.35, 0.9,
            ],
        ),
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.1, -0.3, 0.25, 0.0, //
                -0.3, 1.0, 0.2, 0.3, //
                0.25, 0.2, 0.8, -0.2, //
                0.0, 0.3, -0.2, 1.0,
            ],
        ),
    ];
    let sigma_t = vec![
        gen_temporal_model(p, 1.0, 0.4).unwrap().sigma,
        gen_temporal_model(p, 0.5, 0.6).unwrap().sigma,
    ];
    OracleModel {
        sigma_s: omegas.iter().map(|o| linalg::spd_inverse(o, "omega").unwrap()).collect(),
        rho: omegas.iter().map(partial_correlation).collect(),
        omega: omegas.to_vec(),
        sigma_t,
        n: vec![3, 5],
        p,
    }
}

/// Monte-Carlo draws of `(1/√m) Σ_l √(n_l p) Θ_l` for every edge, using
/// true-β residuals and the true residual covariance.
pub fn theta_draws(model: &OracleModel, edges: &EdgeSet, reps: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = model.omega.len();
    let q = model.omega[0].nrows();
    let p = model.p;
    let samplers: Vec<MatrixNormal> = (0..m)
        .map(|l| MatrixNormal::new(&model.sigma_t[l], &model.sigma_s[l]).unwrap())
        .collect();
    // Column i of (I − β) regresses node i on the others: β_ji = −Ω_ji/Ω_ii.
    let resid: Vec<DMatrix<f64>> = model
        .omega
        .iter()
        .map(|o| DMatrix::from_fn(q, q, |j, i| o[(j, i)] / o[(i, i)]))
        .collect();
    let phi: Vec<DMatrix<f64>> = model
        .omega
        .iter()
        .map(|o| DMatrix::from_fn(q, q, |i, j| o[(i, j)] / (o[(i, i)] * o[(j, j)])))
        .collect();
    (0..reps)
        .map(|r| {
            let mut rng = substream(seed, &[r as u64]);
            let mut t = vec![0.0; edges.len()];
            for l in 0..m {
                let n = model.n[l];
                let mut gram = DMatrix::zeros(q, q);
                for _ in 0..n {
                    let eps = samplers[l].sample(&mut rng).into_inner() * &resid[l];
                    gram += eps.tr_mul(&eps);
                }
                let tilde = gram / (n * p) as f64 - &phi[l];
                let w = ((n * p) as f64).sqrt() / (m as f64).sqrt();
                let f = &phi[l];
                for (e, &(i, j)) in edges.edges().iter().enumerate() {
                    let root = (f[(i, i)] * f[(j, j)]).sqrt();
                    let theta = tilde[(i, j)] / root
                        - f[(i, j)] * tilde[(j, j)] / (2.0 * f[(j, j)] * root)
                        - f[(i, j)] * tilde[(i, i)] / (2.0 * f[(i, i)] * root);
                    t[e] += w * theta;
                }
            }
            t
        })
        .collect()
}

/// Sample covariance and the Monte-Carlo standard error of each entry.
pub fn covariance_with_se(draws: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = draws.len() as f64;
    let k = draws[0].len();
    let mean: Vec<f64> = (0..k).map(|a| draws.iter().map(|d| d[a]).sum::<f64>() / r).collect();
    let mut cov = DMatrix::zeros(k, k);
    let mut se = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let prods: Vec<f64> = draws.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b])).collect();
            let mu = prods.iter().sum::<f64>() / r;
            let var = prods.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (r - 1.0);
            cov[(a, b)] = mu;
            se[(a, b)] = (var / r).sqrt();
        }
    }
    (cov, se)
}

/// `‖Σ_T‖_F² / p` per session.
pub fn frob_over_p(model: &OracleModel) -> Vec<f64> {
    model
        .sigma_t
        .iter()
        .map(|s| linalg::frobenius_sq(s) / model.p as f64)
        .collect()
}

/// Compute S on the true model.
pub fn true_s(model: &OracleModel, edges: &EdgeSet) -> DMatrix<f64> {
    inference::compute_s(&model.rho, &frob_over_p(model), edges, None)
        .unwrap()
        .s_hat
}
