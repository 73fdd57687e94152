//! Edge statistics, their asymptotic covariance and the parametric bootstrap.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::datamodel::{Dimensions, EdgeSet, MatrixBundle, MultiSessionDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::substream;
use crate::spatial::{fit_spatial, SpatialFit, SpatialOptions};
use crate::temporal::{fit_temporal, TemporalFit, TemporalOptions};

/// Minimum number of bootstrap draws.
pub const MIN_BOOTSTRAP: usize = 100;
pub const DEFAULT_BOOTSTRAP: usize = 3000;
const DRAW_CHUNK: usize = 256;
const PSD_TOLERANCE: f64 = 1e-10;

/// Spatial and temporal fits of one dataset.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub dims: Dimensions,
    pub spatial: SpatialFit,
    pub temporal: TemporalFit,
}

impl ModelFit {
    pub fn fit(
        ds: &MultiSessionDataset,
        spatial: &SpatialOptions,
        temporal: &TemporalOptions,
    ) -> Result<Self> {
        Ok(ModelFit {
            dims: ds.dims().clone(),
            spatial: fit_spatial(ds, spatial)?,
            temporal: fit_temporal(ds, temporal)?,
        })
    }

    pub fn estimates(&self) -> Estimates {
        Estimates {
            dims: self.dims.clone(),
            rho: self.spatial.rho.clone(),
            frob_sq_over_p: self.temporal.frob_sq_over_p(),
        }
    }

    pub fn to_bundle(&self) -> MatrixBundle {
        let mut b = self.spatial.to_bundle();
        for (name, mat) in self.temporal.to_bundle().into_entries() {
            b.push(name, mat);
        }
        b
    }
}

/// The quantities inference needs: partial correlations and `‖Σ̂_T‖_F²/p`
/// for every session.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub dims: Dimensions,
    pub rho: Vec<DMatrix<f64>>,
    pub frob_sq_over_p: Vec<f64>,
}

impl Estimates {
    pub fn new(dims: Dimensions, rho: Vec<DMatrix<f64>>, frob_sq_over_p: Vec<f64>) -> Result<Self> {
        check_sessions(&rho, dims.m(), dims.q())?;
        if frob_sq_over_p.len() != dims.m() {
            return Err(Error::ShapeMismatch("one temporal norm per session required".into()));
        }
        Ok(Estimates {
            dims,
            rho,
            frob_sq_over_p,
        })
    }

    /// Reads `spatial_rho/l` and `temporal_sigma/l` from a saved fit.
    pub fn from_bundle(bundle: &MatrixBundle, dims: Dimensions) -> Result<Self> {
        let mut rho = Vec::with_capacity(dims.m());
        let mut frob = Vec::with_capacity(dims.m());
        for l in 0..dims.m() {
            rho.push(bundle.require(&format!("spatial_rho/{l}"))?.clone());
            let sigma = bundle.require(&format!("temporal_sigma/{l}"))?;
            if sigma.shape() != (dims.p(), dims.p()) {
                return Err(Error::ShapeMismatch(format!("temporal_sigma/{l} is not p x p")));
            }
            frob.push(linalg::frobenius_sq(sigma) / dims.p() as f64);
        }
        Estimates::new(dims, rho, frob)
    }
}

/// `√(n_l p) / √m` for every session.
fn session_weights(dims: &Dimensions) -> Vec<f64> {
    let root_m = (dims.m() as f64).sqrt();
    dims.n()
        .iter()
        .map(|&n| ((n * dims.p()) as f64).sqrt() / root_m)
        .collect()
}

/// Scale of the statistic when every session has `|ρ| = 1`.
pub fn statistic_scale(dims: &Dimensions) -> f64 {
    session_weights(dims).iter().sum()
}

fn check_signs(signs: Option<&DMatrix<f64>>, m: usize, edges: &EdgeSet) -> Result<()> {
    if let Some(s) = signs {
        if s.shape() != (m, edges.len()) {
            return Err(Error::ShapeMismatch(format!(
                "sign matrix is {}x{}, expected {m}x{}",
                s.nrows(),
                s.ncols(),
                edges.len()
            )));
        }
        if s.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
        }
    }
    Ok(())
}

fn check_sessions(rho: &[DMatrix<f64>], m: usize, q: usize) -> Result<()> {
    if rho.len() != m {
        return Err(Error::ShapeMismatch(format!("{} partial-correlation matrices for {m} sessions", rho.len())));
    }
    if let Some(r) = rho.iter().find(|r| r.shape() != (q, q)) {
        return Err(Error::ShapeMismatch(format!(
            "partial-correlation matrix is {}x{}, expected {q}x{q}",
            r.nrows(),
            r.ncols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStatistic {
    pub edges: Vec<(usize, usize)>,
    pub t_hat: Vec<f64>,
    pub signed: bool,
    pub sup_norm: f64,
}

/// `T̂_ij = (1/√m) Σ_l √(n_l p) σ_l ρ̂_l,ij` over the edges of `E`.
pub fn test_statistic(
    rho: &[DMatrix<f64>],
    dims: &Dimensions,
    edges: &EdgeSet,
    signs: Option<&DMatrix<f64>>,
) -> Result<TestStatistic> {
    check_sessions(rho, dims.m(), dims.q())?;
    check_signs(signs, dims.m(), edges)?;
    let w = session_weights(dims);
    let t_hat: Vec<f64> = edges
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            rho.iter()
                .enumerate()
                .map(|(l, r)| w[l] * signs.map_or(1.0, |s| s[(l, e)]) * r[(i, j)])
                .sum()
        })
        .collect();
    if let Some(pos) = t_hat.iter().position(|v| !v.is_finite()) {
        let (i, j) = edges.edges()[pos];
        return Err(Error::NonFiniteValue {
            context: "edge statistic".into(),
            row: i,
            col: j,
        });
    }
    let sup_norm = t_hat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(TestStatistic {
        edges: edges.edges().to_vec(),
        t_hat,
        signed: signs.is_some(),
        sup_norm,
    })
}

/// Normalized residual covariance: `1` on the diagonal, `−ρ` elsewhere.
#[inline]
fn corr(rho: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        -rho[(a, b)]
    }
}

/// Covariance of the leading error terms of two partial correlations in one
/// session, per unit of `‖Σ^T‖_F²/p`.
pub fn bracket(rho: &DMatrix<f64>, e1: (usize, usize), e2: (usize, usize)) -> f64 {
    let (i1, j1) = e1;
    let (i2, j2) = e2;
    let r = |a, b| corr(rho, a, b);
    let (a, b, c, d) = (r(i1, i2), r(j1, j2), r(i1, j2), r(i2, j1));
    let (r1, r2) = (r(i1, j1), r(i2, j2));
    a * b + c * d + 0.5 * r1 * r2 * (a * a + b * b + c * c + d * d)
        - a * r2 * d
        - a * r1 * c
        - b * r2 * c
        - b * d * r1
}

/// Closed form of a diagonal entry: `(1/m) Σ_l f_l (1 − ρ_l²)²`.
pub fn diagonal_closed_form(rho: &[f64], frob_sq_over_p: &[f64]) -> f64 {
    let m = rho.len() as f64;
    rho.iter()
        .zip(frob_sq_over_p)
        .map(|(r, f)| f * (1.0 - r * r).powi(2))
        .sum::<f64>()
        / m
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticCovariance {
    pub s_hat: DMatrix<f64>,
    pub psd_repaired: bool,
    /// Smallest eigenvalue before repair.
    pub min_eigenvalue: f64,
    pub nonpositive_diagonal: bool,
    /// `V diag(√λ₊)`, so that `factor · z` has covariance `s_hat`.
    pub factor: DMatrix<f64>,
}

/// Plug-in covariance of the edge statistics, repaired to be PSD.
pub fn compute_s(
    rho: &[DMatrix<f64>],
    frob_sq_over_p: &[f64],
    edges: &EdgeSet,
    signs: Option<&DMatrix<f64>>,
) -> Result<AsymptoticCovariance> {
    let m = rho.len();
    if m == 0 || frob_sq_over_p.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{m} sessions of partial correlations but {} temporal norms",
            frob_sq_over_p.len()
        )));
    }
    check_sessions(rho, m, rho[0].nrows())?;
    check_signs(signs, m, edges)?;
    let list = edges.edges();
    let k = list.len();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|a| {
            (0..=a)
                .map(|b| {
                    (0..m)
                        .map(|l| {
                            let sign = signs.map_or(1.0, |s| s[(l, a)] * s[(l, b)]);
                            sign * frob_sq_over_p[l] * bracket(&rho[l], list[a], list[b])
                        })
                        .sum::<f64>()
                        / m as f64
                })
                .collect()
        })
        .collect();
    let mut s_hat = DMatrix::zeros(k, k);
    for (a, row) in rows.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            s_hat[(a, b)] = *v;
            s_hat[(b, a)] = *v;
        }
    }
    let nonpositive_diagonal = s_hat.diagonal().iter().any(|v| !(*v > 0.0));
    let (values, vectors) = linalg::sym_eigen(&s_hat);
    let min_eigenvalue = values.iter().copied().fold(f64::INFINITY, f64::min);
    let psd_repaired = min_eigenvalue < 0.0;
    if psd_repaired {
        let clipped = values.map(|v| v.max(0.0));
        let mut repaired = &vectors * DMatrix::from_diagonal(&clipped) * vectors.transpose();
        linalg::symmetrize(&mut repaired);
        s_hat = repaired;
    }
    let factor = &vectors * DMatrix::from_diagonal(&values.map(|v| v.max(0.0).sqrt()));
    Ok(AsymptoticCovariance {
        s_hat,
        psd_repaired,
        min_eigenvalue,
        nonpositive_diagonal,
        factor,
    })
}

/// Sorted sup-norms of bootstrap draws `Ẑ_b ~ N(0, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub sup_norms: Vec<f64>,
    pub seed: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::BadAlpha(alpha))
    }
}

impl BootstrapDraws {
    /// Draws `b` samples through a square-root factor of the covariance.
    pub fn from_factor(factor: &DMatrix<f64>, b: usize, seed: u64) -> Result<Self> {
        if b < MIN_BOOTSTRAP {
            return Err(Error::InvalidArgument(format!(
                "at least {MIN_BOOTSTRAP} bootstrap draws required, got {b}"
            )));
        }
        let (k, r) = factor.shape();
        let chunks = b.div_ceil(DRAW_CHUNK);
        let mut sup_norms: Vec<f64> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let count = DRAW_CHUNK.min(b - c * DRAW_CHUNK);
                let mut rng = substream(seed, &[0xB007, c as u64]);
                let z = DMatrix::<f64>::from_fn(r, count, |_, _| StandardNormal.sample(&mut rng));
                let draws = if k == 0 { DMatrix::zeros(0, count) } else { factor * z };
                (0..count)
                    .map(|j| draws.column(j).amax())
                    .collect::<Vec<_>>()
            })
            .collect();
        sup_norms.sort_by(f64::total_cmp);
        Ok(BootstrapDraws { sup_norms, seed })
    }

    pub fn from_covariance(s: &DMatrix<f64>, b: usize, seed: u64) -> Result<Self> {
        let (values, vectors) = linalg::sym_eigen(s);
        let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOLERANCE * scale {
            return Err(Error::NotPsd(min));
        }
        let factor = &vectors * DMatrix::from_diagonal(&values.map(|v| v.max(0.0).sqrt()));
        Self::from_factor(&factor, b, seed)
    }

    pub fn len(&self) -> usize {
        self.sup_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sup_norms.is_empty()
    }

    /// 1-based rank of the `(1 − α)` quantile: `⌈(1 − α) B⌉` clamped to `[1, B]`.
    pub fn quantile_rank(&self, alpha: f64) -> Result<usize> {
        check_alpha(alpha)?;
        let b = self.len();
        let rank = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
        Ok(rank.clamp(1, b))
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        Ok(self.sup_norms[self.quantile_rank(alpha)? - 1])
    }

    /// `(1 + #{b : ‖Ẑ_b‖∞ ≥ stat}) / (B + 1)`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let below = self.sup_norms.partition_point(|v| *v < stat);
        (1 + self.len() - below) as f64 / (self.len() + 1) as f64
    }
}

/// `(q̂_{1−α}, sorted sup-norms)` for `Ẑ ~ N(0, S)`.
pub fn bootstrap_quantile(s: &DMatrix<f64>, alpha: f64, b: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    check_alpha(alpha)?;
    let draws = BootstrapDraws::from_covariance(s, b, seed)?;
    Ok((draws.quantile(alpha)?, draws.sup_norms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestOptions {
    pub alpha: f64,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            alpha: 0.05,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub num_edges: usize,
    pub sup_norm: f64,
    /// `max_E (|T̂| − c w)`; equals `sup_norm` when `c = 0`.
    pub statistic: f64,
    pub c: f64,
    pub quantile: f64,
    pub reject: bool,
    pub p_value: f64,
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub psd_repaired: bool,
}

/// Everything computed by a test, for reporting.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub result: TestResult,
    pub statistic: TestStatistic,
    pub covariance: AsymptoticCovariance,
    pub draws: BootstrapDraws,
}

fn run_test(
    fit: &Estimates,
    edges: &EdgeSet,
    c: f64,
    options: &TestOptions,
    signs: Option<&DMatrix<f64>>,
) -> Result<TestOutcome> {
    if edges.is_empty() {
        return Err(Error::EmptyEdgeSet);
    }
    if !(c >= 0.0) {
        return Err(Error::NegativeC(c));
    }
    check_alpha(options.alpha)?;
    let statistic = test_statistic(&fit.rho, &fit.dims, edges, signs)?;
    let covariance = compute_s(&fit.rho, &fit.frob_sq_over_p, edges, signs)?;
    let draws = BootstrapDraws::from_factor(&covariance.factor, options.bootstrap, options.seed)?;
    let quantile = draws.quantile(options.alpha)?;
    let shrink = c * statistic_scale(&fit.dims);
    let shrunk = statistic
        .t_hat
        .iter()
        .fold(f64::NEG_INFINITY, |a, t| a.max(t.abs() - shrink));
    let result = TestResult {
        num_edges: edges.len(),
        sup_norm: statistic.sup_norm,
        statistic: shrunk,
        c,
        quantile,
        reject: shrunk > quantile,
        p_value: draws.p_value(shrunk),
        bootstrap: options.bootstrap,
        alpha: options.alpha,
        seed: options.seed,
        psd_repaired: covariance.psd_repaired,
    };
    Ok(TestOutcome {
        result,
        statistic,
        covariance,
        draws,
    })
}

/// Sup-norm test of `ρ_l,ij = 0` for all sessions and all edges in `E`.
pub fn simultaneous_test(
    fit: &Estimates,
    edges: &EdgeSet,
    options: &TestOptions,
    signs: Option<&DMatrix<f64>>,
) -> Result<TestOutcome> {
    run_test(fit, edges, 0.0, options, signs)
}

/// Test of `max_E |ρ_l,ij| ≤ c`, calibrated at the least favourable null.
pub fn c_level_test(fit: &Estimates, edges: &EdgeSet, c: f64, options: &TestOptions) -> Result<TestOutcome> {
    run_test(fit, edges, c, options, None)
}

/// Two-sided normal p-values of the single-edge statistics; unit diagonal.
pub fn single_edge_pvalues(rho: &[DMatrix<f64>], frob_sq_over_p: &[f64], dims: &Dimensions) -> Result<DMatrix<f64>> {
    check_sessions(rho, dims.m(), dims.q())?;
    if frob_sq_over_p.len() != dims.m() {
        return Err(Error::ShapeMismatch("one temporal norm per session required".into()));
    }
    let q = dims.q();
    let w = session_weights(dims);
    let normal = Normal::standard();
    let mut out = DMatrix::from_element(q, q, 1.0);
    let mut values = Vec::with_capacity(rho.len());
    for i in 0..q {
        for j in (i + 1)..q {
            values.clear();
            values.extend(rho.iter().map(|r| r[(i, j)]));
            let t: f64 = values.iter().zip(&w).map(|(r, w)| r * w).sum();
            let var = diagonal_closed_form(&values, frob_sq_over_p);
            if !(var > 0.0) {
                return Err(Error::ZeroVariance(i, j));
            }
            let p = 2.0 * normal.sf(t.abs() / var.sqrt());
            out[(i, j)] = p;
            out[(j, i)] = p;
        }
    }
    Ok(out)
}

/// Single-edge p-values from fitted estimates.
pub fn fit_pvalues(fit: &Estimates) -> Result<DMatrix<f64>> {
    single_edge_pvalues(&fit.rho, &fit.frob_sq_over_p, &fit.dims)
}

/// Statistic built from the true partial correlations, for coverage checks.
pub fn true_statistic(rho: &[DMatrix<f64>], dims: &Dimensions, edges: &EdgeSet) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(test_statistic(rho, dims, edges, None)?.t_hat))
}
