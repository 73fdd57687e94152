//! Cross-session node-wise group lasso.
//!
//! For target node `i`, each session `l` contributes a least-squares loss of
//! column `i` of its stacked design on the remaining columns. Predictor `j`
//! forms one group: the vector of its `m` session coefficients, each scaled
//! by the column norm `w_lj = ‖X_lj‖ / √(n_l p)`. The objective is
//!
//! ```text
//! 1/(2 n0 p) Σ_l ‖X_li − X_l b_l‖² + γ Σ_{j≠i} ‖(w_1j b_1j, …, w_mj b_mj)‖₂
//! ```
//!
//! solved by cyclic block coordinate descent. Everything runs on the
//! per-session Gram matrices, which are shared by all targets.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::datamodel::{stack_spatial, Dimensions, MultiSessionDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct SessionDesign {
    gram: DMatrix<f64>,
    /// Rows of the stacked design, n_l p.
    rows: f64,
    /// Column scale w_lj.
    weights: Vec<f64>,
}

/// Gram matrices and column weights for every session.
#[derive(Debug, Clone)]
pub struct GroupLassoDesign {
    sessions: Vec<SessionDesign>,
    q: usize,
    /// Loss normalizer n0 p.
    n0p: f64,
}

impl GroupLassoDesign {
    /// `designs[l]` is the `(n_l p) × q` stacked design of session `l`.
    pub fn from_designs(designs: &[DMatrix<f64>], n0p: f64) -> Result<Self> {
        let q = designs
            .first()
            .map(|d| d.ncols())
            .ok_or_else(|| Error::InvalidArgument("no sessions".into()))?;
        if !(n0p > 0.0) {
            return Err(Error::InvalidArgument("loss normalizer must be positive".into()));
        }
        let mut sessions = Vec::with_capacity(designs.len());
        for (l, x) in designs.iter().enumerate() {
            if x.ncols() != q {
                return Err(Error::ShapeMismatch(format!(
                    "session {l} design has {} columns, expected {q}",
                    x.ncols()
                )));
            }
            let gram = x.tr_mul(x);
            let rows = x.nrows() as f64;
            let weights: Vec<f64> = (0..q).map(|j| (gram[(j, j)] / rows).sqrt()).collect();
            if let Some(column) = weights.iter().position(|&w| !(w > 0.0)) {
                return Err(Error::ZeroVarianceColumn { session: l, column });
            }
            sessions.push(SessionDesign { gram, rows, weights });
        }
        Ok(GroupLassoDesign { sessions, q, n0p })
    }

    pub fn from_dataset(ds: &MultiSessionDataset) -> Result<Self> {
        let designs = ds
            .sessions()
            .iter()
            .map(|s| stack_spatial(s))
            .collect::<Result<Vec<_>>>()?;
        let n0p = (ds.dims().n0() * ds.dims().p()) as f64;
        GroupLassoDesign::from_designs(&designs, n0p)
    }

    pub fn m(&self) -> usize {
        self.sessions.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n0p(&self) -> f64 {
        self.n0p
    }

    pub fn weight(&self, l: usize, j: usize) -> f64 {
        self.sessions[l].weights[j]
    }

    pub fn problem(&self, target: usize, gamma: f64) -> Result<GroupLassoProblem<'_>> {
        if target >= self.q {
            return Err(Error::InvalidArgument(format!(
                "target {target} out of range for q = {}",
                self.q
            )));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("penalty must be >= 0, got {gamma}")));
        }
        Ok(GroupLassoProblem {
            design: self,
            target,
            gamma,
        })
    }

    /// Root mean square of the target column over all sessions.
    pub fn target_scale(&self, target: usize) -> f64 {
        let ss: f64 = self.sessions.iter().map(|s| s.gram[(target, target)]).sum();
        let rows: f64 = self.sessions.iter().map(|s| s.rows).sum();
        (ss / rows).sqrt()
    }

    /// Smallest penalty at which the all-zero solution is optimal.
    pub fn null_gamma(&self, target: usize) -> f64 {
        (0..self.q)
            .filter(|&j| j != target)
            .map(|j| {
                self.sessions
                    .iter()
                    .map(|s| {
                        let g = s.gram[(j, target)] / (s.weights[j] * self.n0p);
                        g * g
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GroupLassoProblem<'a> {
    design: &'a GroupLassoDesign,
    target: usize,
    gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum number of full sweeps over the groups.
    pub max_iter: usize,
    /// Stop once no coefficient moves more than this in a sweep.
    pub tol: f64,
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 10_000,
            tol: 1e-8,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoSolution {
    pub target: usize,
    pub gamma: f64,
    /// One length-q vector per session; entry `target` is zero.
    pub coefficients: Vec<DVector<f64>>,
    pub iterations: usize,
    pub max_change: f64,
    pub kkt_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

impl GroupLassoSolution {
    /// Standardized norm of group `j`.
    pub fn group_norm(&self, design: &GroupLassoDesign, j: usize) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(l, b)| (design.weight(l, j) * b[j]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl GroupLassoProblem<'_> {
    pub fn target(&self) -> usize {
        self.target
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn check_coefficients(&self, coefs: &[DVector<f64>]) {
        assert_eq!(coefs.len(), self.design.m(), "one coefficient vector per session");
        assert!(coefs.iter().all(|b| b.len() == self.design.q));
    }

    /// Objective value at `coefs` (the target entries are ignored).
    pub fn objective(&self, coefs: &[DVector<f64>]) -> f64 {
        self.check_coefficients(coefs);
        let i = self.target;
        let mut loss = 0.0;
        for (s, b) in self.design.sessions.iter().zip(coefs) {
            let mut b = b.clone();
            b[i] = 0.0;
            let gb = &s.gram * &b;
            loss += s.gram[(i, i)] - 2.0 * gb[i] + b.dot(&gb);
        }
        let penalty: f64 = (0..self.design.q)
            .filter(|&j| j != i)
            .map(|j| {
                self.design
                    .sessions
                    .iter()
                    .zip(coefs)
                    .map(|(s, b)| (s.weights[j] * b[j]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        loss / (2.0 * self.design.n0p) + self.gamma * penalty
    }

    /// Gradient of the loss with respect to the standardized coefficients
    /// of group `j`, one entry per session.
    fn group_gradient(&self, residual_grads: &[DVector<f64>], j: usize) -> Vec<f64> {
        self.design
            .sessions
            .iter()
            .zip(residual_grads)
            .map(|(s, r)| r[j] / (s.weights[j] * self.design.n0p))
            .collect()
    }

    /// `X_lᵀ (X_l b_l − X_li)` for every session.
    fn residual_gradients(&self, coefs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let i = self.target;
        self.design
            .sessions
            .iter()
            .zip(coefs)
            .map(|(s, b)| {
                let mut b = b.clone();
                b[i] = 0.0;
                &s.gram * b - s.gram.column(i)
            })
            .collect()
    }

    /// Worst violation of the block optimality conditions.
    ///
    /// Active groups contribute `‖∇_j + γ u_j/‖u_j‖‖`; zero groups contribute
    /// the relative excess `‖∇_j‖/γ − 1` (or `‖∇_j‖` when γ = 0).
    pub fn kkt_residual(&self, coefs: &[DVector<f64>]) -> f64 {
        self.check_coefficients(coefs);
        let grads = self.residual_gradients(coefs);
        let mut worst = 0.0f64;
        for j in (0..self.design.q).filter(|&j| j != self.target) {
            let g = self.group_gradient(&grads, j);
            let u: Vec<f64> = self
                .design
                .sessions
                .iter()
                .zip(coefs)
                .map(|(s, b)| s.weights[j] * b[j])
                .collect();
            let unorm = norm(&u);
            let violation = if unorm > 0.0 {
                let r: Vec<f64> = g
                    .iter()
                    .zip(&u)
                    .map(|(gl, ul)| gl + self.gamma * ul / unorm)
                    .collect();
                norm(&r)
            } else if self.gamma > 0.0 {
                (norm(&g) / self.gamma - 1.0).max(0.0)
            } else {
                norm(&g)
            };
            worst = worst.max(violation);
        }
        worst
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizer of `Σ_l (d_l/2) u_l² − g_l u_l + γ ‖u‖` over `u ∈ R^m`.
///
/// Zero when `‖g‖ ≤ γ`; otherwise `u_l = g_l τ / (d_l τ + γ)` where the
/// group norm `τ` solves `Σ_l g_l² / (d_l τ + γ)² = 1`.
fn group_prox(g: &[f64], d: &[f64], gamma: f64) -> Vec<f64> {
    let gnorm = norm(g);
    if gnorm <= gamma {
        return vec![0.0; g.len()];
    }
    if gamma == 0.0 {
        return g.iter().zip(d).map(|(gl, dl)| gl / dl).collect();
    }
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let tau = if dmax - dmin <= 1e-15 * dmax {
        (gnorm - gamma) / dmax
    } else {
        let excess = |tau: f64| -> (f64, f64) {
            let mut f = -1.0;
            let mut df = 0.0;
            for (gl, dl) in g.iter().zip(d) {
                let den = dl * tau + gamma;
                f += gl * gl / (den * den);
                df -= 2.0 * gl * gl * dl / (den * den * den);
            }
            (f, df)
        };
        let (mut lo, mut hi) = ((gnorm - gamma) / dmax, (gnorm - gamma) / dmin);
        let mut tau = lo;
        for _ in 0..200 {
            let (f, df) = excess(tau);
            if f > 0.0 {
                lo = tau;
            } else {
                hi = tau;
            }
            let mut next = tau - f / df;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - tau).abs() <= 1e-12 * tau.max(f64::MIN_POSITIVE) {
                tau = next;
                break;
            }
            tau = next;
        }
        tau
    };
    g.iter()
        .zip(d)
        .map(|(gl, dl)| gl * tau / (dl * tau + gamma))
        .collect()
}

/// Block coordinate descent from the zero start.
pub fn solve(problem: &GroupLassoProblem<'_>, options: &SolverOptions) -> GroupLassoSolution {
    let design = problem.design;
    let (m, q, i) = (design.m(), design.q, problem.target);
    let n0p = design.n0p;
    // Curvature of session l in standardized coordinates: n_l p / (n0 p).
    let curvature: Vec<f64> = design.sessions.iter().map(|s| s.rows / n0p).collect();
    let mut coefs = vec![DVector::zeros(q); m];
    let mut grads = problem.residual_gradients(&coefs);
    let mut objective = problem.objective(&coefs);
    let mut iterations = 0;
    let mut max_change = f64::INFINITY;
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    let mut g = vec![0.0; m];

    while iterations < options.max_iter {
        iterations += 1;
        max_change = 0.0f64;
        for j in (0..q).filter(|&j| j != i) {
            for (l, s) in design.sessions.iter().enumerate() {
                let w = s.weights[j];
                // Partial-residual correlation with group j removed.
                let c = -(grads[l][j] - s.gram[(j, j)] * coefs[l][j]);
                g[l] = c / (w * n0p);
            }
            let u = group_prox(&g, &curvature, problem.gamma);
            for (l, s) in design.sessions.iter().enumerate() {
                let new = u[l] / s.weights[j];
                let delta = new - coefs[l][j];
                if delta != 0.0 {
                    coefs[l][j] = new;
                    grads[l].axpy(delta, &s.gram.column(j), 1.0);
                    max_change = max_change.max(delta.abs());
                }
            }
        }
        let next = problem.objective(&coefs);
        debug_assert!(
            next <= objective + 1e-10 * objective.abs().max(1.0),
            "objective increased from {objective} to {next}"
        );
        objective = next;
        if max_change < options.tol {
            // Refresh accumulated gradients before certifying.
            grads = problem.residual_gradients(&coefs);
            kkt = problem.kkt_residual(&coefs);
            if kkt <= options.kkt_tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        kkt = problem.kkt_residual(&coefs);
    }
    GroupLassoSolution {
        target: i,
        gamma: problem.gamma,
        coefficients: coefs,
        iterations,
        max_change,
        kkt_residual: kkt,
        objective,
        converged,
    }
}

/// Theory-rate penalty `c0 √((m + ln(m n0 p q)) / (n0 p))`.
pub fn default_gamma(dims: &Dimensions, c0: f64) -> f64 {
    gamma_rate(dims.m(), dims.n0(), dims.p(), dims.q()) * c0
}

pub(crate) fn gamma_rate(m: usize, n0: usize, p: usize, q: usize) -> f64 {
    rate(m as f64, n0 as f64, p as f64, q as f64)
}

fn rate(m: f64, n0: f64, p: f64, q: f64) -> f64 {
    ((m + (m * n0 * p * q).ln()) / (n0 * p)).sqrt()
}

/// Penalty for every node, or one shared value.
#[derive(Debug, Clone, PartialEq)]
pub enum Gamma {
    Scalar(f64),
    PerNode(Vec<f64>),
}

impl Gamma {
    pub fn for_node(&self, i: usize) -> f64 {
        match self {
            Gamma::Scalar(g) => *g,
            Gamma::PerNode(gs) => gs[i],
        }
    }
}

/// Solves the regression of every node on the others, in parallel.
pub fn fit_all_nodes(
    design: &GroupLassoDesign,
    gamma: &Gamma,
    options: &SolverOptions,
) -> Result<Vec<GroupLassoSolution>> {
    if let Gamma::PerNode(gs) = gamma {
        if gs.len() != design.q() {
            return Err(Error::InvalidArgument(format!(
                "{} penalties for {} nodes",
                gs.len(),
                design.q()
            )));
        }
    }
    (0..design.q())
        .into_par_iter()
        .map(|i| {
            let problem = design.problem(i, gamma.for_node(i))?;
            Ok(solve(&problem, options))
        })
        .collect()
}

/// Coefficients as per-session q × q matrices, column i = regression of node i.
pub fn coefficient_matrices(solutions: &[GroupLassoSolution], m: usize) -> Vec<DMatrix<f64>> {
    let q = solutions.len();
    (0..m)
        .map(|l| {
            let mut beta = DMatrix::zeros(q, q);
            for sol in solutions {
                beta.set_column(sol.target, &sol.coefficients[l]);
                beta[(sol.target, sol.target)] = 0.0;
            }
            beta
        })
        .collect()
}
