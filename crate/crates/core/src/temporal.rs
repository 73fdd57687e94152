//! Temporal covariance by banded modified-Cholesky regression.
//!
//! Each time point is regressed on the `h` preceding ones, treating the q
//! columns of every trial as samples. The fitted coefficients and innovation
//! variances define a precision matrix; singular values of the Cholesky
//! factor are clipped into `[1/η, η]`, and the result is rescaled so the
//! covariance has trace `p`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{stack_temporal, MatrixBundle, MultiSessionDataset};
use crate::error::{Error, Result};
use crate::linalg;

const RIDGE_CONDITION_LIMIT: f64 = 1e12;
const RIDGE_SCALE: f64 = 1e-8;

/// Exponent used by [`default_bandwidth`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `⌊(n q)^(1/(1+α))⌋`
    #[default]
    Proposition,
    /// `⌊(n q)^(1/(2(1+α)))⌋`
    Proof,
}

/// Band width for `n` trials of `q` columns, clamped to `[1, p − 1]`.
pub fn default_bandwidth(n: usize, q: usize, alpha: f64, p: usize, rule: BandwidthRule) -> usize {
    let exponent = match rule {
        BandwidthRule::Proposition => 1.0 / (1.0 + alpha),
        BandwidthRule::Proof => 1.0 / (2.0 * (1.0 + alpha)),
    };
    let raw = ((n * q) as f64).powf(exponent).floor() as usize;
    raw.clamp(1, p.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalOptions {
    /// Per-session override of the band width.
    pub bandwidth: Option<Vec<usize>>,
    pub rule: BandwidthRule,
    /// Temporal decay exponent per session; one value applies to all and
    /// an empty list means 1.
    pub alpha: Vec<f64>,
    pub eta: f64,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        TemporalOptions {
            bandwidth: None,
            rule: BandwidthRule::Proposition,
            alpha: Vec::new(),
            eta: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTemporalFit {
    pub bandwidth: usize,
    /// Entry (s, t): coefficient of time s in the regression of time t.
    pub beta: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub eta: f64,
    pub omega_bar: DMatrix<f64>,
    pub sigma_bar: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    /// ‖Σ̂‖_F² / p.
    pub frob_sq_over_p: f64,
    /// Time points whose band Gram needed the ridge fallback.
    pub ridge_points: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFit {
    pub sessions: Vec<SessionTemporalFit>,
}

impl TemporalFit {
    pub fn frob_sq_over_p(&self) -> Vec<f64> {
        self.sessions.iter().map(|s| s.frob_sq_over_p).collect()
    }

    pub fn to_bundle(&self) -> MatrixBundle {
        let mut b = MatrixBundle::default();
        for (l, s) in self.sessions.iter().enumerate() {
            b.push(format!("temporal_beta/{l}"), s.beta.clone());
            b.push(
                format!("temporal_phi/{l}"),
                DMatrix::from_column_slice(s.phi.len(), 1, s.phi.as_slice()),
            );
            b.push(format!("temporal_sigma/{l}"), s.sigma.clone());
            b.push(format!("temporal_omega/{l}"), s.omega.clone());
        }
        b
    }
}

/// Least-squares fit of every time point on its `h` predecessors.
///
/// `stacked` is the `(n q) × p` temporal stack of one session. Returns the
/// coefficient matrix, innovation variances and the time points that fell
/// back to ridge regularization.
pub fn fit_banded_regression(
    stacked: &DMatrix<f64>,
    bandwidth: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<usize>)> {
    let (rows, p) = stacked.shape();
    if bandwidth < 1 || bandwidth >= p {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} outside [1, {}]",
            p - 1
        )));
    }
    let gram = stacked.tr_mul(stacked);
    let fits: Vec<(usize, DVector<f64>, f64, bool)> = (0..p)
        .into_par_iter()
        .map(|t| {
            let start = t.saturating_sub(bandwidth);
            let width = t - start;
            let y = stacked.column(t);
            if width == 0 {
                return (start, DVector::zeros(0), y.norm_squared() / rows as f64, false);
            }
            let mut g = gram.view((start, start), (width, width)).clone_owned();
            let rhs = gram.view((start, t), (width, 1)).clone_owned();
            let eig = g.clone().symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            let ridge = !(lo > 0.0) || hi / lo > RIDGE_CONDITION_LIMIT;
            if ridge {
                let lambda = RIDGE_SCALE * g.trace() / width as f64;
                for d in 0..width {
                    g[(d, d)] += lambda;
                }
            }
            let coef = match g.clone().cholesky() {
                Some(c) => c.solve(&rhs).column(0).clone_owned(),
                None => g
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .expect("SVD solve")
                    .column(0)
                    .clone_owned(),
            };
            let fitted = stacked.columns(start, width) * &coef;
            let phi = (y - fitted).norm_squared() / rows as f64;
            (start, coef, phi, ridge)
        })
        .collect();
    let mut beta = DMatrix::zeros(p, p);
    let mut phi = DVector::zeros(p);
    let mut ridge_points = Vec::new();
    for (t, (start, coef, ph, ridge)) in fits.into_iter().enumerate() {
        for (d, c) in coef.iter().enumerate() {
            beta[(start + d, t)] = *c;
        }
        phi[t] = ph;
        if ridge {
            ridge_points.push(t);
        }
    }
    Ok((beta, phi, ridge_points))
}

/// `U clip(Λ, 1/η, η) Vᵀ` for the SVD `A = U Λ Vᵀ`.
pub fn truncate_singular(a: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    if !(eta >= 1.0) {
        return Err(Error::InvalidArgument(format!("eta must be >= 1, got {eta}")));
    }
    let svd = a.clone().try_svd(true, true, f64::EPSILON, 0).ok_or(Error::SvdFailure)?;
    let u = svd.u.as_ref().ok_or(Error::SvdFailure)?;
    let vt = svd.v_t.as_ref().ok_or(Error::SvdFailure)?;
    let clipped = svd.singular_values.map(|s| s.clamp(1.0 / eta, eta));
    Ok(u * DMatrix::from_diagonal(&clipped) * vt)
}

/// Temporal precision and covariance from a Cholesky fit.
pub struct AssembledTemporal {
    pub omega_bar: DMatrix<f64>,
    pub sigma_bar: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub frob_sq_over_p: f64,
}

/// `Ω̄ = P Φ⁻¹ Pᵀ` with `P = P_η(I − β)`, then trace-`p` rescaling.
pub fn assemble_temporal(
    beta: &DMatrix<f64>,
    phi: &DVector<f64>,
    eta: f64,
    session: usize,
) -> Result<AssembledTemporal> {
    let p = beta.nrows();
    if phi.len() != p || !beta.is_square() {
        return Err(Error::ShapeMismatch("beta must be p x p and phi length p".into()));
    }
    if let Some(t) = phi.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "innovation variance at time {t} is not positive"
        )));
    }
    let factor = truncate_singular(&(DMatrix::identity(p, p) - beta), eta)?;
    let inv_phi = DMatrix::from_diagonal(&phi.map(|v| 1.0 / v));
    let mut omega_bar = &factor * &inv_phi * factor.transpose();
    linalg::symmetrize(&mut omega_bar);
    // Σ̄ = P⁻ᵀ Φ P⁻¹; the clipped factor is well conditioned.
    let factor_inv = factor
        .clone()
        .try_inverse()
        .ok_or(Error::SingularOmega(session))?;
    let sqrt_phi = DMatrix::from_diagonal(&phi.map(f64::sqrt));
    let half = factor_inv.transpose() * sqrt_phi;
    let mut sigma_bar = &half * half.transpose();
    linalg::symmetrize(&mut sigma_bar);
    let tr = sigma_bar.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::SingularOmega(session));
    }
    let scale = p as f64 / tr;
    let sigma = &sigma_bar * scale;
    let omega = &omega_bar / scale;
    let frob_sq_over_p = linalg::frobenius_sq(&sigma) / p as f64;
    Ok(AssembledTemporal {
        omega_bar,
        sigma_bar,
        sigma,
        omega,
        frob_sq_over_p,
    })
}

/// Fits every session independently.
pub fn fit_temporal(ds: &MultiSessionDataset, options: &TemporalOptions) -> Result<TemporalFit> {
    let dims = ds.dims();
    let m = dims.m();
    let alpha = |l: usize| -> Result<f64> {
        let a = match options.alpha.len() {
            0 => 1.0,
            1 => options.alpha[0],
            len if len == m => options.alpha[l],
            len => {
                return Err(Error::InvalidArgument(format!(
                    "{len} temporal exponents for {m} sessions"
                )))
            }
        };
        if !(a > 0.0) {
            return Err(Error::InvalidArgument("temporal exponent must be positive".into()));
        }
        Ok(a)
    };
    if let Some(bw) = &options.bandwidth {
        if bw.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} bandwidths for {m} sessions",
                bw.len()
            )));
        }
    }
    let sessions = (0..m)
        .into_par_iter()
        .map(|l| {
            let bandwidth = match &options.bandwidth {
                Some(bw) => bw[l],
                None => default_bandwidth(dims.n()[l], dims.q(), alpha(l)?, dims.p(), options.rule),
            };
            let stacked = stack_temporal(ds.session(l))?;
            let (beta, phi, ridge_points) = fit_banded_regression(&stacked, bandwidth)?;
            let a = assemble_temporal(&beta, &phi, options.eta, l)?;
            Ok(SessionTemporalFit {
                bandwidth,
                beta,
                phi,
                eta: options.eta,
                omega_bar: a.omega_bar,
                sigma_bar: a.sigma_bar,
                sigma: a.sigma,
                omega: a.omega,
                frob_sq_over_p: a.frob_sq_over_p,
                ridge_points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TemporalFit { sessions })
}
