//! Spatial partial correlations from the node-wise group-lasso fits.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dimensions, MatrixBundle, MultiSessionDataset, Trial};
use crate::error::{Error, Result};
use crate::grouplasso::{
    self, coefficient_matrices, fit_all_nodes, Gamma, GroupLassoDesign, SolverOptions,
};
use crate::linalg;

/// How the group-lasso penalty is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    /// `c0` times the theoretical rate `√((m + ln(m n0 p q)) / (n0 p))`.
    Theory { c0: f64 },
    Fixed(f64),
    PerNode(Vec<f64>),
    /// K-fold cross-validation over multipliers of the theoretical rate.
    CrossValidated { multipliers: Vec<f64>, folds: usize },
}

impl Default for GammaPolicy {
    fn default() -> Self {
        GammaPolicy::Theory { c0: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialOptions {
    pub gamma: GammaPolicy,
    /// Multiply node i's penalty by the root-mean-square of its column,
    /// which makes the fit invariant to rescaling the data.
    pub scale_by_target: bool,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for SpatialOptions {
    fn default() -> Self {
        SpatialOptions {
            gamma: GammaPolicy::default(),
            scale_by_target: true,
            solver: SolverOptions::default(),
        }
    }
}

/// Per-node solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub gamma: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFit {
    /// Per session, column i holds the coefficients of the regression of node i.
    pub beta: Vec<DMatrix<f64>>,
    /// Per session and trial, p × q residuals.
    pub residuals: Vec<Vec<DMatrix<f64>>>,
    pub phi: Vec<DMatrix<f64>>,
    pub omega: Vec<DMatrix<f64>>,
    /// Diagonal is −1.
    pub rho: Vec<DMatrix<f64>>,
    pub nodes: Vec<NodeDiagnostics>,
}

impl SpatialFit {
    pub fn to_bundle(&self) -> MatrixBundle {
        let mut b = MatrixBundle::default();
        for (name, mats) in [
            ("spatial_beta", &self.beta),
            ("spatial_phi", &self.phi),
            ("spatial_omega", &self.omega),
            ("spatial_rho", &self.rho),
        ] {
            for (l, mat) in mats.iter().enumerate() {
                b.push(format!("{name}/{l}"), mat.clone());
            }
        }
        b
    }
}

/// `ε^(k) = X^(k) (I − β)`: column i is node i minus its fitted value.
pub fn residuals(ds: &MultiSessionDataset, beta: &[DMatrix<f64>]) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let q = ds.dims().q();
    if beta.len() != ds.dims().m() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficient matrices for {} sessions",
            beta.len(),
            ds.dims().m()
        )));
    }
    ds.sessions()
        .iter()
        .zip(beta)
        .map(|(session, b)| {
            if b.shape() != (q, q) {
                return Err(Error::ShapeMismatch(format!(
                    "coefficient matrix is {:?}, expected ({q}, {q})",
                    b.shape()
                )));
            }
            let complement = DMatrix::identity(q, q) - b;
            Ok(session.iter().map(|t: &Trial| t.data() * &complement).collect())
        })
        .collect()
}

/// Bias-corrected residual covariance of each session.
///
/// With `R = Σ_k ε_kᵀ ε_k / (n_l p)`: `Φ_ii = R_ii` and, for i ≠ j,
/// `Φ_ij = −(R_ij + R_jj β_ji + R_ii β_ij)`.
pub fn debiased_phi(
    residuals: &[Vec<DMatrix<f64>>],
    beta: &[DMatrix<f64>],
    dims: &Dimensions,
) -> Result<Vec<DMatrix<f64>>> {
    let (p, q) = (dims.p(), dims.q());
    if residuals.len() != dims.m() || beta.len() != dims.m() {
        return Err(Error::ShapeMismatch("residuals, beta and dims disagree on m".into()));
    }
    residuals
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(l, (session, b))| {
            if session.len() != dims.n()[l] {
                return Err(Error::ShapeMismatch(format!(
                    "session {l}: {} residual matrices, expected {}",
                    session.len(),
                    dims.n()[l]
                )));
            }
            let mut r = DMatrix::zeros(q, q);
            for e in session {
                if e.shape() != (p, q) {
                    return Err(Error::ShapeMismatch(format!(
                        "residual matrix is {:?}, expected ({p}, {q})",
                        e.shape()
                    )));
                }
                r += e.tr_mul(e);
            }
            r /= (dims.n()[l] * p) as f64;
            let mut phi = DMatrix::from_fn(q, q, |i, j| {
                if i == j {
                    r[(i, i)]
                } else {
                    -(r[(i, j)] + r[(j, j)] * b[(j, i)] + r[(i, i)] * b[(i, j)])
                }
            });
            let scale = phi.amax().max(f64::MIN_POSITIVE);
            debug_assert!(linalg::asymmetry(&phi) <= 1e-12 * scale);
            linalg::symmetrize(&mut phi);
            Ok(phi)
        })
        .collect()
}

/// `Ω_ij = Φ_ij / (Φ_ii Φ_jj)` and `ρ_ij = −Φ_ij / √(Φ_ii Φ_jj)`.
pub fn omega_rho(phi: &DMatrix<f64>, session: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = phi.nrows();
    if let Some(node) = (0..q).find(|&i| !(phi[(i, i)] > 0.0)) {
        return Err(Error::NonPositiveDiagonal {
            session,
            node,
            value: phi[(node, node)],
        });
    }
    let omega = DMatrix::from_fn(q, q, |i, j| phi[(i, j)] / (phi[(i, i)] * phi[(j, j)]));
    let rho = DMatrix::from_fn(q, q, |i, j| -phi[(i, j)] / (phi[(i, i)] * phi[(j, j)]).sqrt());
    Ok((omega, rho))
}

fn node_penalties(
    ds: &MultiSessionDataset,
    design: &GroupLassoDesign,
    options: &SpatialOptions,
) -> Result<Vec<f64>> {
    let dims = ds.dims();
    let q = dims.q();
    let base: Vec<f64> = match &options.gamma {
        GammaPolicy::Theory { c0 } => vec![grouplasso::default_gamma(dims, *c0); q],
        GammaPolicy::Fixed(g) => vec![*g; q],
        GammaPolicy::PerNode(gs) => {
            if gs.len() != q {
                return Err(Error::InvalidArgument(format!(
                    "{} penalties given for {q} nodes",
                    gs.len()
                )));
            }
            gs.clone()
        }
        GammaPolicy::CrossValidated { multipliers, folds } => {
            let report = select_gamma_cv(ds, multipliers, *folds, options)?;
            vec![grouplasso::default_gamma(dims, report.best); q]
        }
    };
    if base.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::InvalidArgument("penalties must be >= 0".into()));
    }
    Ok(if options.scale_by_target {
        base.iter()
            .enumerate()
            .map(|(i, g)| g * design.target_scale(i))
            .collect()
    } else {
        base
    })
}

/// Full spatial estimation: group lasso, residuals, Φ, Ω and ρ.
pub fn fit_spatial(ds: &MultiSessionDataset, options: &SpatialOptions) -> Result<SpatialFit> {
    let design = GroupLassoDesign::from_dataset(ds)?;
    let gammas = node_penalties(ds, &design, options)?;
    let solutions = fit_all_nodes(&design, &Gamma::PerNode(gammas), &options.solver)?;
    let beta = coefficient_matrices(&solutions, ds.dims().m());
    let res = residuals(ds, &beta)?;
    let phi = debiased_phi(&res, &beta, ds.dims())?;
    let (omega, rho) = phi
        .iter()
        .enumerate()
        .map(|(l, ph)| omega_rho(ph, l))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let nodes = solutions
        .iter()
        .map(|s| NodeDiagnostics {
            gamma: s.gamma,
            iterations: s.iterations,
            kkt_residual: s.kkt_residual,
            converged: s.converged,
        })
        .collect();
    Ok(SpatialFit {
        beta,
        residuals: res,
        phi,
        omega,
        rho,
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub multipliers: Vec<f64>,
    /// Held-out squared prediction error summed over folds, nodes and sessions.
    pub scores: Vec<f64>,
    pub best: f64,
}

/// Log-spaced grid between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && count >= 1);
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// K-fold cross-validation of the theory-rate multiplier.
///
/// Trial k of every session belongs to fold `k mod K`; the penalty of each
/// training fit follows the same policy as [`fit_spatial`].
pub fn select_gamma_cv(
    ds: &MultiSessionDataset,
    multipliers: &[f64],
    folds: usize,
    options: &SpatialOptions,
) -> Result<CvReport> {
    if multipliers.is_empty() || multipliers.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::InvalidArgument("need a non-empty grid of multipliers >= 0".into()));
    }
    if folds < 2 || ds.dims().n0() < folds {
        return Err(Error::InvalidArgument(format!(
            "{folds}-fold cross-validation needs at least {folds} trials per session"
        )));
    }
    let mut scores = vec![0.0; multipliers.len()];
    for fold in 0..folds {
        let mut train = Vec::with_capacity(ds.dims().m());
        let mut test = Vec::with_capacity(ds.dims().m());
        for session in ds.sessions() {
            let (tr, te): (Vec<_>, Vec<_>) = session
                .iter()
                .enumerate()
                .partition(|(k, _)| k % folds != fold);
            train.push(tr.into_iter().map(|(_, t)| t.clone()).collect::<Vec<_>>());
            test.push(te.into_iter().map(|(_, t)| t.clone()).collect::<Vec<_>>());
        }
        let train_ds = MultiSessionDataset::new(train, ds.info.clone())?;
        let design = GroupLassoDesign::from_dataset(&train_ds)?;
        let test_grams: Vec<DMatrix<f64>> = test
            .iter()
            .map(|trials| {
                trials
                    .iter()
                    .fold(DMatrix::zeros(ds.dims().q(), ds.dims().q()), |acc, t| {
                        acc + t.data().tr_mul(t.data())
                    })
            })
            .collect();
        let fold_scores: Vec<f64> = multipliers
            .par_iter()
            .map(|&c0| -> Result<f64> {
                let opts = SpatialOptions {
                    gamma: GammaPolicy::Theory { c0 },
                    ..options.clone()
                };
                let gammas = node_penalties(&train_ds, &design, &opts)?;
                let sols = fit_all_nodes(&design, &Gamma::PerNode(gammas), &options.solver)?;
                let beta = coefficient_matrices(&sols, ds.dims().m());
                Ok(beta
                    .iter()
                    .zip(&test_grams)
                    .map(|(b, g)| {
                        // Σ_i ‖X_i − X b_i‖² = tr((I − B)ᵀ G (I − B))
                        let c = DMatrix::identity(b.nrows(), b.ncols()) - b;
                        (c.transpose() * g * c).trace()
                    })
                    .sum())
            })
            .collect::<Result<_>>()?;
        for (s, f) in scores.iter_mut().zip(fold_scores) {
            *s += f;
        }
    }
    let best_idx = (0..multipliers.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(multipliers[b].total_cmp(&multipliers[a])))
        .expect("non-empty grid");
    Ok(CvReport {
        multipliers: multipliers.to_vec(),
        scores,
        best: multipliers[best_idx],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::DatasetInfo;

    fn dataset(trials: Vec<Vec<f64>>, p: usize, q: usize) -> MultiSessionDataset {
        let session = trials
            .into_iter()
            .map(|v| Trial::from_row_slice(p, q, &v).unwrap())
            .collect();
        MultiSessionDataset::new(vec![session], DatasetInfo::default()).unwrap()
    }

    #[test]
    fn zero_beta_residuals_are_data() {
        let ds = dataset(vec![vec![1.0, 2.0, 3.0, 4.0]], 2, 2);
        let res = residuals(&ds, &[DMatrix::zeros(2, 2)]).unwrap();
        assert_eq!(&res[0][0], ds.session(0)[0].data());
    }

    #[test]
    fn residual_subtracts_fitted_value() {
        let ds = dataset(vec![vec![1.0, 2.0, 3.0, 5.0]], 2, 2);
        // Node 0 regressed on node 1 with coefficient 1.
        let beta = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let res = residuals(&ds, &[beta]).unwrap();
        assert_eq!(res[0][0][(0, 0)], 1.0 - 2.0);
        assert_eq!(res[0][0][(1, 0)], 3.0 - 5.0);
        assert_eq!(res[0][0][(0, 1)], 2.0);
    }

    #[test]
    fn exact_cancellation() {
        let ds = dataset(vec![vec![1.0, 1.0, -2.0, -2.0, 0.5, 0.5]], 3, 2);
        let beta = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let res = residuals(&ds, &[beta]).unwrap();
        assert!(res[0][0].column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_diagonal_is_mean_square() {
        let dims = Dimensions::balanced(1, 1, 4, 2).unwrap();
        let e = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0, 1.0]);
        let phi = debiased_phi(&[vec![e.clone()]], &[DMatrix::zeros(2, 2)], &dims).unwrap();
        assert_eq!(phi[0][(0, 0)], 1.0);
        // β = 0: off-diagonal is minus the mean cross-product.
        let cross: f64 = (0..4).map(|t| e[(t, 0)] * e[(t, 1)]).sum::<f64>() / 4.0;
        assert_eq!(phi[0][(0, 1)], -cross);
    }

    #[test]
    fn omega_rho_substitution() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]);
        let (omega, rho) = omega_rho(&phi, 0).unwrap();
        assert_eq!(rho[(0, 1)], 0.5);
        assert_eq!(omega[(0, 1)], -0.5);
        assert_eq!(rho[(0, 0)], -1.0);
        let (_, rho) = omega_rho(&DMatrix::from_diagonal_element(3, 3, 2.0), 0).unwrap();
        assert!((0..3).all(|i| (0..3).all(|j| i == j || rho[(i, j)] == 0.0)));
    }

    #[test]
    fn omega_rho_recovers_partial_correlation() {
        let omega = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let d = DMatrix::from_diagonal(&omega.diagonal().map(|v| 1.0 / v));
        let phi = &d * &omega * &d;
        let (om, rho) = omega_rho(&phi, 0).unwrap();
        assert!((rho[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(rho[(0, 2)], 0.0);
        assert!(linalg::max_abs_diff(&om, &omega) < 1e-14);
    }

    #[test]
    fn non_positive_phi_diagonal_is_an_error() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            omega_rho(&phi, 3),
            Err(Error::NonPositiveDiagonal { session: 3, node: 1, .. })
        ));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.01, 1.0, 3);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[1] - 0.1).abs() < 1e-12 && (g[2] - 1.0).abs() < 1e-12);
    }
}
