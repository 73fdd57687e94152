//! Simulation studies: bootstrap confidence-region coverage and ROC
//! comparisons of the multi-session method against per-session fits.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetInfo, EdgeSet, GroundTruth};
use crate::error::{Error, Result};
use crate::inference::{self, BootstrapDraws, Estimates, ModelFit};
use crate::rng::derive_seed;
use crate::simulate::{gen_ground_truth, sample_dataset, SimulationSpec};
use crate::spatial::SpatialOptions;
use crate::temporal::TemporalOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSetKind {
    /// Every off-diagonal pair.
    Off,
    /// Pairs that are null in every session.
    Zero,
}

impl EdgeSetKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeSetKind::Off => "E_off",
            EdgeSetKind::Zero => "E_zero",
        }
    }

    pub fn edges(self, truth: &GroundTruth) -> EdgeSet {
        match self {
            EdgeSetKind::Off => EdgeSet::off_diagonal(truth.support.nrows()),
            EdgeSetKind::Zero => truth.zero_edges(),
        }
    }
}

fn default_levels() -> Vec<f64> {
    vec![0.925, 0.95, 0.975]
}

fn default_edge_sets() -> Vec<EdgeSetKind> {
    vec![EdgeSetKind::Zero, EdgeSetKind::Off]
}

fn default_bootstrap() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    pub simulation: SimulationSpec,
    pub replications: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_edge_sets")]
    pub edge_sets: Vec<EdgeSetKind>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Master seed for the replications; the ground truth uses the
    /// simulation seed and stays fixed.
    pub seed: u64,
    #[serde(default)]
    pub spatial: SpatialOptions,
    #[serde(default)]
    pub temporal: TemporalOptions,
}

impl CoverageSpec {
    pub fn new(simulation: SimulationSpec, replications: usize, seed: u64) -> Self {
        CoverageSpec {
            simulation,
            replications,
            levels: default_levels(),
            edge_sets: default_edge_sets(),
            bootstrap: default_bootstrap(),
            seed,
            spatial: SpatialOptions::default(),
            temporal: TemporalOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        if self.replications < 1 {
            return Err(Error::InvalidArgument("at least one replication required".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::InvalidArgument("levels must lie in (0, 1)".into()));
        }
        if self.edge_sets.is_empty() {
            return Err(Error::InvalidArgument("no edge sets requested".into()));
        }
        if self.bootstrap < inference::MIN_BOOTSTRAP {
            return Err(Error::InvalidArgument(format!(
                "at least {} bootstrap draws required",
                inference::MIN_BOOTSTRAP
            )));
        }
        Ok(())
    }

    /// Temporal options with the simulated decay exponents unless set.
    fn temporal_options(&self) -> TemporalOptions {
        let mut t = self.temporal.clone();
        if t.alpha.is_empty() {
            t.alpha = self.simulation.temporal_alpha.clone();
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub level: f64,
    pub edge_set: EdgeSetKind,
    pub num_edges: usize,
    pub coverage: f64,
    /// Binomial standard error `√(p̂(1 − p̂)/R)`.
    pub std_error: f64,
    pub covered: usize,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub failures: usize,
    /// Per edge set, per replication: `‖T̂ − T‖∞` and the bootstrap
    /// quantiles at each level (absent for failed replications).
    pub details: Vec<Vec<Option<ReplicationCoverage>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationCoverage {
    pub deviation: f64,
    pub quantiles: Vec<f64>,
}

impl CoverageReport {
    pub fn row(&self, level: f64, edge_set: EdgeSetKind) -> Option<&CoverageRow> {
        self.rows
            .iter()
            .find(|r| r.edge_set == edge_set && (r.level - level).abs() < 1e-12)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,edge_set,num_edges,coverage,std_error,covered,replications,failures\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.level,
                r.edge_set.name(),
                r.num_edges,
                r.coverage,
                r.std_error,
                r.covered,
                r.replications,
                r.failures
            );
        }
        out
    }
}

fn replication_coverage(
    spec: &CoverageSpec,
    truth: &GroundTruth,
    edge_sets: &[(EdgeSetKind, EdgeSet, Vec<f64>)],
    temporal: &TemporalOptions,
    r: usize,
) -> Result<Vec<ReplicationCoverage>> {
    let data_seed = derive_seed(spec.seed, &[0xC0DE, r as u64]);
    let ds = sample_dataset(truth, &spec.simulation.dims, data_seed, DatasetInfo::default())?;
    let fit = ModelFit::fit(&ds, &spec.spatial, temporal)?.estimates();
    let frob = &fit.frob_sq_over_p;
    edge_sets
        .iter()
        .enumerate()
        .map(|(e, (_, edges, t_true))| {
            let stat = inference::test_statistic(&fit.rho, &fit.dims, edges, None)?;
            let deviation = stat
                .t_hat
                .iter()
                .zip(t_true)
                .fold(0.0f64, |a, (t, t0)| a.max((t - t0).abs()));
            let s = inference::compute_s(&fit.rho, frob, edges, None)?;
            let boot_seed = derive_seed(spec.seed, &[0xB007, r as u64, e as u64]);
            let draws = BootstrapDraws::from_factor(&s.factor, spec.bootstrap, boot_seed)?;
            let quantiles = spec
                .levels
                .iter()
                .map(|level| draws.quantile(1.0 - level))
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicationCoverage { deviation, quantiles })
        })
        .collect()
}

/// Fraction of replications whose confidence region contains the truth.
pub fn run_coverage(spec: &CoverageSpec) -> Result<CoverageReport> {
    spec.validate()?;
    let truth = gen_ground_truth(&spec.simulation)?;
    let dims = &spec.simulation.dims;
    let edge_sets = spec
        .edge_sets
        .iter()
        .map(|&kind| {
            let edges = kind.edges(&truth);
            let t_true = if edges.is_empty() {
                Vec::new()
            } else {
                inference::true_statistic(&truth.rho_s, dims, &edges)?.as_slice().to_vec()
            };
            Ok((kind, edges, t_true))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some((kind, _, _)) = edge_sets.iter().find(|(_, e, _)| e.is_empty()) {
        return Err(Error::InvalidArgument(format!("edge set {} is empty", kind.name())));
    }
    let temporal = spec.temporal_options();
    let outcomes: Vec<Option<Vec<ReplicationCoverage>>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| replication_coverage(spec, &truth, &edge_sets, &temporal, r).ok())
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let mut rows = Vec::new();
    for (e, (kind, edges, _)) in edge_sets.iter().enumerate() {
        for (k, &level) in spec.levels.iter().enumerate() {
            let ok: Vec<&ReplicationCoverage> = outcomes.iter().flatten().map(|o| &o[e]).collect();
            let covered = ok.iter().filter(|o| o.deviation <= o.quantiles[k]).count();
            let n = ok.len();
            let coverage = if n == 0 { f64::NAN } else { covered as f64 / n as f64 };
            rows.push(CoverageRow {
                level,
                edge_set: *kind,
                num_edges: edges.len(),
                coverage,
                std_error: (coverage * (1.0 - coverage) / n as f64).sqrt(),
                covered,
                replications: n,
                failures,
            });
        }
    }
    let details = (0..edge_sets.len())
        .map(|e| outcomes.iter().map(|o| o.as_ref().map(|v| v[e].clone())).collect())
        .collect();
    Ok(CoverageReport {
        rows,
        failures,
        details,
    })
}

fn default_thresholds() -> Vec<f64> {
    let mut t: Vec<f64> = (0..=40).map(|k| 10f64.powf(-8.0 + 0.2 * k as f64)).collect();
    t.push(1.0);
    t.dedup();
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocMethod {
    /// Aggregated statistic across sessions.
    Group,
    /// Each session fitted alone; an edge's p-value is the largest across
    /// sessions.
    PerSession,
    /// Each session fitted alone; an edge's p-value is the smallest across
    /// sessions.
    PerSessionMinP,
}

impl RocMethod {
    pub fn name(self) -> &'static str {
        match self {
            RocMethod::Group => "group",
            RocMethod::PerSession => "per_session",
            RocMethod::PerSessionMinP => "per_session_min_p",
        }
    }
}

fn default_methods() -> Vec<RocMethod> {
    vec![RocMethod::Group, RocMethod::PerSession, RocMethod::PerSessionMinP]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocSpec {
    /// Each replication draws a fresh graph and data from this template.
    pub simulation: SimulationSpec,
    pub replications: usize,
    /// Ascending p-value thresholds at which ROC points are reported.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<RocMethod>,
    pub seed: u64,
    #[serde(default)]
    pub spatial: SpatialOptions,
    #[serde(default)]
    pub temporal: TemporalOptions,
}

impl RocSpec {
    pub fn new(simulation: SimulationSpec, replications: usize, seed: u64) -> Self {
        RocSpec {
            simulation,
            replications,
            thresholds: default_thresholds(),
            methods: default_methods(),
            seed,
            spatial: SpatialOptions::default(),
            temporal: TemporalOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        if self.replications < 1 {
            return Err(Error::InvalidArgument("at least one replication required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods requested".into()));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
        }
        if self.thresholds.iter().any(|t| !(*t >= 0.0 && *t <= 1.0)) {
            return Err(Error::InvalidArgument("thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub method: RocMethod,
    /// Mean over replications at each threshold.
    pub points: Vec<RocPoint>,
    pub auc: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub curves: Vec<RocCurve>,
    pub failures: usize,
}

impl RocReport {
    pub fn curve(&self, method: RocMethod) -> Option<&RocCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,threshold,fpr,tpr\n");
        for c in &self.curves {
            for p in &c.points {
                let _ = writeln!(out, "{},{},{},{}", c.method.name(), p.threshold, p.fpr, p.tpr);
            }
        }
        out
    }
}

/// Area under the empirical ROC curve of `scores` (larger means more
/// evidence of an edge); ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("ROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Rank-sum with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        rank_sum += avg * order[start..end].iter().filter(|&&k| labels[k]).count() as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// `(FPR, TPR)` of declaring an edge when `pvalue ≤ threshold`.
pub fn roc_points(pvalues: &[f64], labels: &[bool], thresholds: &[f64]) -> Vec<RocPoint> {
    let pos = labels.iter().filter(|l| **l).count().max(1) as f64;
    let neg = labels.iter().filter(|l| !**l).count().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (p, l) in pvalues.iter().zip(labels) {
                if *p <= t {
                    if *l {
                        tp += 1
                    } else {
                        fp += 1
                    }
                }
            }
            RocPoint {
                threshold: t,
                fpr: fp as f64 / neg,
                tpr: tp as f64 / pos,
            }
        })
        .collect()
}

/// `(p-value, z-score)` per upper-triangular pair for one method.
fn method_scores(
    method: RocMethod,
    ds: &crate::datamodel::MultiSessionDataset,
    spec: &RocSpec,
    temporal: &TemporalOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = ds.dims().q();
    let pairs = |mat: &DMatrix<f64>| -> Vec<f64> {
        (0..q).flat_map(|i| ((i + 1)..q).map(move |j| (i, j))).map(|(i, j)| mat[(i, j)]).collect()
    };
    let zscores = |fit: &Estimates| -> Result<DMatrix<f64>> {
        let frob = &fit.frob_sq_over_p;
        let m = fit.dims.m();
        let w: Vec<f64> = fit
            .dims
            .n()
            .iter()
            .map(|&n| ((n * fit.dims.p()) as f64 / m as f64).sqrt())
            .collect();
        let mut z = DMatrix::zeros(q, q);
        let mut values = Vec::with_capacity(m);
        for i in 0..q {
            for j in (i + 1)..q {
                values.clear();
                values.extend(fit.rho.iter().map(|r| r[(i, j)]));
                let t: f64 = values.iter().zip(&w).map(|(r, w)| r * w).sum();
                let var = inference::diagonal_closed_form(&values, frob);
                if !(var > 0.0) {
                    return Err(Error::ZeroVariance(i, j));
                }
                z[(i, j)] = t.abs() / var.sqrt();
            }
        }
        Ok(z)
    };
    match method {
        RocMethod::Group => {
            let fit = ModelFit::fit(ds, &spec.spatial, temporal)?.estimates();
            Ok((pairs(&inference::fit_pvalues(&fit)?), pairs(&zscores(&fit)?)))
        }
        RocMethod::PerSession | RocMethod::PerSessionMinP => {
            let strongest = method == RocMethod::PerSessionMinP;
            let m = ds.dims().m();
            let mut best_p: Option<DMatrix<f64>> = None;
            let mut best_z: Option<DMatrix<f64>> = None;
            for l in 0..m {
                let single = ds.single_session(l);
                let mut t = temporal.clone();
                if t.alpha.len() == m && m > 1 {
                    t.alpha = vec![t.alpha[l]];
                }
                if let Some(bw) = &t.bandwidth {
                    t.bandwidth = Some(vec![bw[l]]);
                }
                let fit = ModelFit::fit(&single, &spec.spatial, &t)?.estimates();
                let p = inference::fit_pvalues(&fit)?;
                let z = zscores(&fit)?;
                let (pick_p, pick_z): (fn(f64, f64) -> f64, fn(f64, f64) -> f64) = if strongest {
                    (f64::min, f64::max)
                } else {
                    (f64::max, f64::min)
                };
                best_p = Some(match best_p {
                    None => p,
                    Some(b) => b.zip_map(&p, pick_p),
                });
                best_z = Some(match best_z {
                    None => z,
                    Some(b) => b.zip_map(&z, pick_z),
                });
            }
            Ok((pairs(&best_p.expect("m >= 1")), pairs(&best_z.expect("m >= 1"))))
        }
    }
}

/// ROC curves of the group and per-session methods against the true support.
pub fn run_roc(spec: &RocSpec) -> Result<RocReport> {
    spec.validate()?;
    let q = spec.simulation.dims.q();
    let outcomes: Vec<Option<Vec<(Vec<RocPoint>, f64)>>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let mut sim = spec.simulation.clone();
            sim.seed = derive_seed(spec.seed, &[0x40C, r as u64]);
            let truth = gen_ground_truth(&sim).ok()?;
            let labels: Vec<bool> = (0..q)
                .flat_map(|i| ((i + 1)..q).map(move |j| (i, j)))
                .map(|(i, j)| truth.support[(i, j)])
                .collect();
            let ds = sample_dataset(&truth, &sim.dims, sim.seed, DatasetInfo::default()).ok()?;
            let mut temporal = spec.temporal.clone();
            if temporal.alpha.is_empty() {
                temporal.alpha = sim.temporal_alpha.clone();
            }
            spec.methods
                .iter()
                .map(|&method| {
                    let (p, z) = method_scores(method, &ds, spec, &temporal).ok()?;
                    let a = auc(&z, &labels).ok()?;
                    Some((roc_points(&p, &labels, &spec.thresholds), a))
                })
                .collect()
        })
        .collect();
    let ok: Vec<&Vec<(Vec<RocPoint>, f64)>> = outcomes.iter().flatten().collect();
    let failures = outcomes.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::InvalidArgument("every ROC replication failed".into()));
    }
    let curves = spec
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let auc: Vec<f64> = ok.iter().map(|o| o[k].1).collect();
            let n = ok.len() as f64;
            let points = spec
                .thresholds
                .iter()
                .enumerate()
                .map(|(t, &threshold)| RocPoint {
                    threshold,
                    fpr: ok.iter().map(|o| o[k].0[t].fpr).sum::<f64>() / n,
                    tpr: ok.iter().map(|o| o[k].0[t].tpr).sum::<f64>() / n,
                })
                .collect();
            RocCurve {
                method,
                points,
                mean_auc: auc.iter().sum::<f64>() / n,
                auc,
            }
        })
        .collect();
    Ok(RocReport { curves, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_perfect_and_ties() {
        assert_eq!(auc(&[0.1, 0.2, 5.0, 6.0], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[3.0, 1.0, 2.0], &[false, true, true]).unwrap(), 0.0);
        assert!(auc(&[1.0], &[true]).is_err());
    }

    #[test]
    fn roc_points_monotone() {
        let p = [0.001, 0.2, 0.03, 0.8];
        let labels = [true, false, true, false];
        let pts = roc_points(&p, &labels, &[0.0, 0.01, 0.1, 1.0]);
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        assert_eq!((pts[1].fpr, pts[1].tpr), (0.0, 0.5));
        assert_eq!((pts[2].fpr, pts[2].tpr), (0.0, 1.0));
        assert_eq!((pts[3].fpr, pts[3].tpr), (1.0, 1.0));
    }

    #[test]
    fn default_grid_sorted() {
        let t = default_thresholds();
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*t.last().unwrap(), 1.0);
    }
}
