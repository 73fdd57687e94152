//! Synthetic multi-session data with a shared spatial graph.
//!
//! Each session gets its own spatial precision matrix on a common support,
//! an autoregressive temporal covariance built from a modified Cholesky
//! factor, and i.i.d. matrix-normal trials.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetInfo, Dimensions, GroundTruth, MultiSessionDataset, Trial};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{substream, StreamRng};

/// Largest diagonal allowed after positive-definiteness repair.
const MAX_DIAGONAL_INFLATION: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Random,
    Hub,
    Chain,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(GraphKind::Random),
            "hub" => Ok(GraphKind::Hub),
            "chain" => Ok(GraphKind::Chain),
            other => Err(Error::InvalidArgument(format!("unknown graph kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub kind: GraphKind,
    pub dims: Dimensions,
    /// Replaces the default random-graph edge probability √(3/q).
    #[serde(default)]
    pub edge_prob_override: Option<f64>,
    #[serde(default = "defaults::nonzero_low")]
    pub nonzero_low: f64,
    /// Upper end of the off-diagonal range in the first session.
    #[serde(default = "defaults::nonzero_high_base")]
    pub nonzero_high_base: f64,
    /// Session l (0-based) draws from (low, high_base / session_decay^l).
    #[serde(default = "defaults::session_decay")]
    pub session_decay: f64,
    #[serde(default = "defaults::temporal_kappa")]
    pub temporal_kappa: f64,
    /// Temporal decay exponent per session; empty means 1 for every session.
    #[serde(default)]
    pub temporal_alpha: Vec<f64>,
    #[serde(default = "defaults::spd_floor")]
    pub spd_floor: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn nonzero_low() -> f64 {
        0.0
    }
    pub fn nonzero_high_base() -> f64 {
        0.3
    }
    pub fn session_decay() -> f64 {
        2.0
    }
    pub fn temporal_kappa() -> f64 {
        0.2
    }
    pub fn spd_floor() -> f64 {
        0.1
    }
}

impl SimulationSpec {
    pub fn new(kind: GraphKind, dims: Dimensions, seed: u64) -> Self {
        SimulationSpec {
            kind,
            dims,
            edge_prob_override: None,
            nonzero_low: defaults::nonzero_low(),
            nonzero_high_base: defaults::nonzero_high_base(),
            session_decay: defaults::session_decay(),
            temporal_kappa: defaults::temporal_kappa(),
            temporal_alpha: Vec::new(),
            spd_floor: defaults::spd_floor(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(prob) = self.edge_prob_override {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::InvalidArgument(format!(
                    "edge probability {prob} outside [0, 1]"
                )));
            }
        }
        if !(self.spd_floor > 0.0 && self.spd_floor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "spd_floor must lie in (0, 1), got {}",
                self.spd_floor
            )));
        }
        if !(self.nonzero_low >= 0.0 && self.nonzero_low <= self.nonzero_high_base) {
            return Err(Error::InvalidArgument(
                "need 0 <= nonzero_low <= nonzero_high_base".into(),
            ));
        }
        if self.session_decay <= 0.0 {
            return Err(Error::InvalidArgument("session_decay must be positive".into()));
        }
        if self.temporal_kappa < 0.0 {
            return Err(Error::InvalidArgument("temporal_kappa must be >= 0".into()));
        }
        if !self.temporal_alpha.is_empty() && self.temporal_alpha.len() != self.dims.m() {
            return Err(Error::InvalidArgument(format!(
                "{} temporal exponents for {} sessions",
                self.temporal_alpha.len(),
                self.dims.m()
            )));
        }
        if self.temporal_alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::InvalidArgument("temporal_alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha(&self, l: usize) -> f64 {
        self.temporal_alpha.get(l).copied().unwrap_or(1.0)
    }

    fn random_edge_prob(&self) -> f64 {
        self.edge_prob_override
            .unwrap_or_else(|| (3.0 / self.dims.q() as f64).sqrt().min(1.0))
    }
}

/// Symmetric support mask with a true diagonal.
pub fn gen_support(kind: GraphKind, q: usize, edge_prob: Option<f64>, seed: u64) -> DMatrix<bool> {
    let mut mask = DMatrix::from_fn(q, q, |i, j| i == j);
    let mut link = |i: usize, j: usize| {
        mask[(i, j)] = true;
        mask[(j, i)] = true;
    };
    match kind {
        GraphKind::Random => {
            let prob = edge_prob.unwrap_or_else(|| (3.0 / q as f64).sqrt().min(1.0));
            let mut rng = substream(seed, &[0x5EED, 0]);
            for i in 0..q {
                for j in (i + 1)..q {
                    if rng.random::<f64>() < prob {
                        link(i, j);
                    }
                }
            }
        }
        GraphKind::Hub => {
            let groups = q.div_ceil(20);
            for g in 0..groups {
                let (start, end) = (g * q / groups, (g + 1) * q / groups);
                for j in (start + 1)..end {
                    link(start, j);
                }
            }
        }
        GraphKind::Chain => {
            for i in 0..q.saturating_sub(1) {
                link(i, i + 1);
            }
        }
    }
    mask
}

/// Spatial precision matrix of session `l` (0-based) on the given support.
///
/// Off-diagonal entries are uniform on `(low, high_base / decay^l)`, drawn on
/// the upper triangle and mirrored. The unit diagonal is inflated by the
/// smallest `c` such that, after rescaling back to a unit diagonal, the
/// smallest eigenvalue is at least `spd_floor`.
pub fn gen_spatial_precision(
    mask: &DMatrix<bool>,
    l: usize,
    spec: &SimulationSpec,
    rng: &mut StreamRng,
) -> Result<DMatrix<f64>> {
    let q = mask.nrows();
    if !mask.is_square() || (0..q).any(|i| (0..q).any(|j| mask[(i, j)] != mask[(j, i)])) {
        return Err(Error::InvalidArgument("support mask must be square and symmetric".into()));
    }
    let high = spec.nonzero_high_base / spec.session_decay.powi(l as i32);
    let low = spec.nonzero_low.min(high);
    let dist = Uniform::new_inclusive(low, high).expect("finite range");
    let mut omega = DMatrix::identity(q, q);
    for i in 0..q {
        for j in (i + 1)..q {
            if mask[(i, j)] {
                let v = dist.sample(rng);
                omega[(i, j)] = v;
                omega[(j, i)] = v;
            }
        }
    }
    let lambda_min = linalg::min_eigenvalue(&omega);
    let floor = spec.spd_floor;
    if lambda_min < floor {
        // (λ + c) / (1 + c) >= floor
        let c = (floor - lambda_min) / (1.0 - floor);
        if 1.0 + c > MAX_DIAGONAL_INFLATION {
            return Err(Error::DegenerateMask(1.0 + c));
        }
        omega /= 1.0 + c;
        for i in 0..q {
            omega[(i, i)] = 1.0;
        }
    }
    Ok(omega)
}

/// Temporal model of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModel {
    /// Entry (s, t), s < t: coefficient of time s in the regression of time t.
    pub beta: DMatrix<f64>,
    /// Innovation variances before trace normalization.
    pub phi: DMatrix<f64>,
    /// Covariance rescaled to trace p.
    pub sigma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
}

/// Autoregressive temporal model with `β_st = κ (t − s)^(−α−1)`, unit
/// innovations, and covariance normalized to trace `p`.
pub fn gen_temporal_model(p: usize, alpha: f64, kappa: f64) -> Result<TemporalModel> {
    if p < 2 {
        return Err(Error::InvalidArgument("temporal dimension must be >= 2".into()));
    }
    let beta = DMatrix::from_fn(p, p, |s, t| {
        if s < t {
            kappa * ((t - s) as f64).powf(-alpha - 1.0)
        } else {
            0.0
        }
    });
    let phi = DMatrix::identity(p, p);
    // X_t = Σ_{s<t} β_st X_s + e_t  ⇒  Ω = (I − β) Φ⁻¹ (I − β)ᵀ
    let ib = DMatrix::identity(p, p) - &beta;
    let mut omega_raw = &ib * ib.transpose();
    linalg::symmetrize(&mut omega_raw);
    let sigma_raw = linalg::spd_inverse(&omega_raw, "temporal precision")?;
    let scale = p as f64 / sigma_raw.trace();
    Ok(TemporalModel {
        beta,
        phi,
        sigma: sigma_raw * scale,
        omega: omega_raw / scale,
    })
}

/// Matrix-normal sampler `X = A Z Bᵀ` with `A Aᵀ = Σ_T`, `B Bᵀ = Σ_S`.
#[derive(Debug, Clone)]
pub struct MatrixNormal {
    chol_t: DMatrix<f64>,
    chol_s: DMatrix<f64>,
}

impl MatrixNormal {
    pub fn new(sigma_t: &DMatrix<f64>, sigma_s: &DMatrix<f64>) -> Result<Self> {
        Ok(MatrixNormal {
            chol_t: linalg::cholesky_lower(sigma_t, "temporal covariance")?,
            chol_s: linalg::cholesky_lower(sigma_s, "spatial covariance")?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Trial {
        let (p, q) = (self.chol_t.nrows(), self.chol_s.nrows());
        let z = DMatrix::from_fn(p, q, |_, _| StandardNormal.sample(rng));
        Trial::new(&self.chol_t * z * self.chol_s.transpose()).expect("finite draw")
    }
}

/// One draw from the matrix normal with row covariance `Σ_T` and column
/// covariance `Σ_S`.
pub fn sample_matrix_normal(
    sigma_t: &DMatrix<f64>,
    sigma_s: &DMatrix<f64>,
    seed: u64,
) -> Result<Trial> {
    let mut rng = substream(seed, &[]);
    Ok(MatrixNormal::new(sigma_t, sigma_s)?.sample(&mut rng))
}

/// Partial correlations `−Ω_ij / √(Ω_ii Ω_jj)` (diagonal −1).
pub fn partial_correlation(omega: &DMatrix<f64>) -> DMatrix<f64> {
    let q = omega.nrows();
    DMatrix::from_fn(q, q, |i, j| -omega[(i, j)] / (omega[(i, i)] * omega[(j, j)]).sqrt())
}

/// Ground-truth model shared by [`simulate_dataset`] and the experiments.
pub fn gen_ground_truth(spec: &SimulationSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (m, p, q) = (spec.dims.m(), spec.dims.p(), spec.dims.q());
    let support = gen_support(spec.kind, q, Some(spec.random_edge_prob()), spec.seed);
    let mut truth = GroundTruth {
        sigma_s: Vec::with_capacity(m),
        omega_s: Vec::with_capacity(m),
        rho_s: Vec::with_capacity(m),
        sigma_t: Vec::with_capacity(m),
        beta_t: Vec::with_capacity(m),
        phi_t: Vec::with_capacity(m),
        support,
    };
    for l in 0..m {
        let mut rng = substream(spec.seed, &[0x0E6A, l as u64]);
        let omega = gen_spatial_precision(&truth.support, l, spec, &mut rng)?;
        let sigma = linalg::spd_inverse(&omega, "spatial precision")?;
        let temporal = gen_temporal_model(p, spec.alpha(l), spec.temporal_kappa)?;
        truth.rho_s.push(partial_correlation(&omega));
        truth.omega_s.push(omega);
        truth.sigma_s.push(sigma);
        truth.sigma_t.push(temporal.sigma);
        truth.beta_t.push(temporal.beta);
        truth.phi_t.push(temporal.phi);
    }
    Ok(truth)
}

/// Samples trials for a given ground truth; trial (l, k) uses its own stream.
pub fn sample_dataset(
    truth: &GroundTruth,
    dims: &Dimensions,
    seed: u64,
    info: DatasetInfo,
) -> Result<MultiSessionDataset> {
    let samplers = (0..dims.m())
        .map(|l| MatrixNormal::new(&truth.sigma_t[l], &truth.sigma_s[l]))
        .collect::<Result<Vec<_>>>()?;
    let sessions: Vec<Vec<Trial>> = samplers
        .iter()
        .enumerate()
        .map(|(l, sampler)| {
            (0..dims.n()[l])
                .into_par_iter()
                .map(|k| {
                    let mut rng = substream(seed, &[0x7E1A, l as u64, k as u64]);
                    sampler.sample(&mut rng)
                })
                .collect()
        })
        .collect();
    MultiSessionDataset::new(sessions, info)?.with_ground_truth(truth.clone())
}

pub fn simulate_dataset(spec: &SimulationSpec) -> Result<MultiSessionDataset> {
    let truth = gen_ground_truth(spec)?;
    let info = DatasetInfo {
        name: format!("simulated-{:?}", spec.kind).to_lowercase(),
        seed: Some(spec.seed),
    };
    sample_dataset(&truth, &spec.dims, spec.seed, info)
}
