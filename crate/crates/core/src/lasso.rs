//! Weighted nonnegative Lasso
//!
//! ```text
//! min_beta ||y - M beta - b0||^2 + lambda * w' beta   s.t. beta >= 0
//! ```
//!
//! solved by cyclic coordinate descent on a working set, in covariance form:
//! only `M^T y` and the Gram columns of variables that ever enter the working
//! set are formed. Adjacent dictionary columns are nearly collinear, so plain
//! coordinate descent crawls; each working-set pass alternates sweeps with an
//! exact solve on the current support, followed by a ratio-test step that
//! keeps the iterate feasible. An unpenalized intercept is handled by
//! centering.

use serde::{Deserialize, Serialize};

use crate::dictionary::{dot, Dictionary};
use crate::error::{Error, Result};
use crate::nnls::{cholesky_solve, nnls_gram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Cap on outer passes (each ends with a KKT check over every column).
    pub max_sweeps: usize,
    /// Cap on coordinate sweeps within one working-set solve.
    pub max_inner_sweeps: usize,
    /// Target for the scaled KKT violation.
    pub kkt_tolerance: f64,
    /// Coordinate sweeps between exact support solves.
    pub sweeps_per_polish: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_sweeps: 10_000,
            max_inner_sweeps: 200_000,
            kkt_tolerance: 1e-10,
            sweeps_per_polish: 8,
        }
    }
}

/// `n ln(rss/n) + k ln(n) + 2 gamma k ln(p)`.
pub fn ebic(rss: f64, n_obs: usize, nnz: usize, n_cols: usize, gamma: f64) -> f64 {
    if nnz >= n_obs {
        return f64::INFINITY;
    }
    let n = n_obs as f64;
    n * (rss / n).ln() + nnz as f64 * n.ln() + 2.0 * gamma * nnz as f64 * (n_cols as f64).ln()
}

/// Geometric grid of `count` values from `max` down `decades` orders of magnitude.
pub fn geometric_grid(max: f64, count: usize, decades: f64) -> Vec<f64> {
    if count == 1 {
        return vec![max];
    }
    (0..count)
        .map(|i| max * 10f64.powf(-decades * i as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    /// Coefficients of the penalized columns.
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub ebic: f64,
    pub rss: f64,
    pub nnz: usize,
    /// Largest scaled KKT violation, measured from the explicit residual.
    pub kkt_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub rss: f64,
    pub nnz: usize,
    pub ebic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub best: LassoSolution,
    pub path: Vec<PathPoint>,
}

/// A Lasso instance bound to one dictionary and observation. Gram columns are
/// cached across solves, so reusing the problem with different weights (as the
/// correction stage does) is cheap.
pub struct LassoProblem<'d> {
    dict: &'d Dictionary,
    y: Vec<f64>,
    weights: Vec<f64>,
    lambda_grid: Vec<f64>,
    ebic_gamma: f64,
    settings: SolverSettings,

    p: usize,
    col_mean: Vec<f64>,
    y_mean: f64,
    /// centered `M^T y`
    corr: Vec<f64>,
    /// centered squared column norms
    diag: Vec<f64>,
    /// centered Gram columns, filled on demand
    gram: Vec<Option<Box<[f64]>>>,
    /// `max_j 2 |corr_j|`, the unit-weight null threshold
    kkt_scale: f64,
    y_norm_sq: f64,
}

impl<'d> LassoProblem<'d> {
    pub fn new(dict: &'d Dictionary, observation: Vec<f64>) -> Result<Self> {
        if observation.len() != dict.rows() {
            return Err(Error::InvalidInput(format!(
                "observation has {} rows, dictionary has {}",
                observation.len(),
                dict.rows()
            )));
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("observation has non-finite entries".into()));
        }
        let p = dict.penalized_cols();
        let n = dict.rows() as f64;
        let (col_mean, y_mean) = if dict.has_intercept() {
            let means = (0..p).map(|j| dict.column(j).iter().sum::<f64>() / n).collect();
            (means, observation.iter().sum::<f64>() / n)
        } else {
            (vec![0.0; p], 0.0)
        };
        let raw_corr = dict.transpose_apply(&observation);
        let corr: Vec<f64> = (0..p).map(|j| raw_corr[j] - n * col_mean[j] * y_mean).collect();
        let diag: Vec<f64> = (0..p)
            .map(|j| {
                let c = dict.column(j);
                dot(c, c) - n * col_mean[j] * col_mean[j]
            })
            .collect();
        if let Some(j) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!("dictionary column {j} is degenerate")));
        }
        let kkt_scale = corr.iter().fold(0.0f64, |m, c| m.max(2.0 * c.abs()));
        let y_norm_sq = observation.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
        Ok(LassoProblem {
            dict,
            y: observation,
            weights: vec![1.0; p],
            lambda_grid: Vec::new(),
            ebic_gamma: 1.0,
            settings: SolverSettings::default(),
            p,
            col_mean,
            y_mean,
            corr,
            diag,
            gram: vec![None; p],
            kkt_scale,
            y_norm_sq,
        })
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_ebic_gamma(mut self, gamma: f64) -> Self {
        self.ebic_gamma = gamma;
        self
    }

    pub fn dictionary(&self) -> &'d Dictionary {
        self.dict
    }

    pub fn observation(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.p {
            return Err(Error::InvalidInput(format!(
                "expected {} weights, got {}",
                self.p,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::InvalidInput("weights must lie in (0, 1]".into()));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn lambda_grid(&self) -> &[f64] {
        &self.lambda_grid
    }

    pub fn set_lambda_grid(&mut self, grid: Vec<f64>) -> Result<()> {
        if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput("lambda grid must be nonempty and positive".into()));
        }
        if grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidInput("lambda grid must be strictly decreasing".into()));
        }
        self.lambda_grid = grid;
        Ok(())
    }

    /// Smallest `lambda` for which `beta = 0` is optimal: `2 max_j |M_j' y| / w_j`.
    pub fn lambda_max(&self) -> f64 {
        self.corr
            .iter()
            .zip(&self.weights)
            .fold(0.0f64, |m, (c, w)| m.max(2.0 * c.abs() / w))
    }

    /// Sets the default geometric grid below the current `lambda_max`.
    /// Returns `false` when the observation is orthogonal to every column.
    pub fn use_default_grid(&mut self, count: usize, decades: f64) -> bool {
        let max = self.lambda_max();
        if !(max > 0.0) {
            self.lambda_grid.clear();
            return false;
        }
        self.lambda_grid = geometric_grid(max, count, decades);
        true
    }

    /// Objective value of a coefficient vector (intercept profiled out).
    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let (rss, _) = self.residual_stats(beta);
        rss + lambda * beta.iter().zip(&self.weights).map(|(b, w)| b * w).sum::<f64>()
    }

    pub fn solve_single(&mut self, lambda: f64) -> Result<LassoSolution> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        let mut state = State::new(self.p);
        self.solve_at(&mut state, lambda)?;
        Ok(self.finish(&state.beta, lambda, true))
    }

    /// Solves every `lambda` of the grid with warm starts and returns the
    /// minimal-EBIC solution. Ties go to the larger `lambda`.
    pub fn solve_path(&mut self) -> Result<PathResult> {
        if self.lambda_grid.is_empty() {
            if self.lambda_max() > 0.0 {
                return Err(Error::InvalidInput("empty lambda grid".into()));
            }
            // observation orthogonal to the dictionary: the null model is exact
            let best = self.finish(&vec![0.0; self.p], 0.0, true);
            let path = vec![PathPoint { lambda: 0.0, rss: best.rss, nnz: 0, ebic: best.ebic }];
            return Ok(PathResult { best, path });
        }
        let grid = self.lambda_grid.clone();
        let mut state = State::new(self.p);
        let mut path = Vec::with_capacity(grid.len());
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        for &lambda in &grid {
            self.solve_at(&mut state, lambda)?;
            let point = self.finish(&state.beta, lambda, false);
            path.push(PathPoint { lambda, rss: point.rss, nnz: point.nnz, ebic: point.ebic });
            if best.as_ref().is_none_or(|(e, _, _)| point.ebic < *e) {
                best = Some((point.ebic, state.beta.clone(), lambda));
            }
        }
        let (_, beta, lambda) = best.expect("nonempty grid");
        let best = self.finish(&beta, lambda, true);
        Ok(PathResult { best, path })
    }

    /// Normal equations `(G, c)` of the centered problem restricted to `cols`,
    /// plus the centered `||y||^2`.
    pub(crate) fn restricted_normal_equations(&mut self, cols: &[usize]) -> (Vec<f64>, Vec<f64>, f64) {
        for &j in cols {
            self.ensure_gram(j);
        }
        let k = cols.len();
        let mut g = vec![0.0; k * k];
        for (a, &i) in cols.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                g[a * k + b] = self.gram_entry(i, j);
            }
        }
        let c = cols.iter().map(|&j| self.corr[j]).collect();
        (g, c, self.y_norm_sq)
    }

    /// Residual sum of squares of `beta` computed from the explicit residual.
    pub fn rss(&self, beta: &[f64]) -> f64 {
        self.residual_stats(beta).0
    }

    pub fn intercept(&self, beta: &[f64]) -> f64 {
        self.intercept_for(beta)
    }

    fn n_obs(&self) -> usize {
        self.dict.rows()
    }

    fn rss_floor(&self) -> f64 {
        (f64::EPSILON * self.y_norm_sq).max(f64::MIN_POSITIVE)
    }

    fn intercept_for(&self, beta: &[f64]) -> f64 {
        if self.dict.has_intercept() {
            self.y_mean - beta.iter().zip(&self.col_mean).map(|(b, m)| b * m).sum::<f64>()
        } else {
            0.0
        }
    }

    /// Explicit residual `y - M beta - b0` and its squared norm.
    fn residual_stats(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let b0 = self.intercept_for(beta);
        let mut r: Vec<f64> = self.y.iter().map(|v| v - b0).collect();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (ri, mi) in r.iter_mut().zip(self.dict.column(j)) {
                    *ri -= b * mi;
                }
            }
        }
        (r.iter().map(|v| v * v).sum(), r)
    }

    fn finish(&self, beta: &[f64], lambda: f64, certify: bool) -> LassoSolution {
        let (rss, r) = self.residual_stats(beta);
        let nnz = beta.iter().filter(|&&b| b > 0.0).count();
        let ebic = ebic(rss.max(self.rss_floor()), self.n_obs(), nnz, self.p, self.ebic_gamma);
        let kkt_violation = if certify { self.kkt_from_residual(beta, &r, lambda) } else { f64::NAN };
        LassoSolution {
            beta: beta.to_vec(),
            intercept: self.intercept_for(beta),
            lambda,
            ebic,
            rss,
            nnz,
            kkt_violation,
        }
    }

    /// Scaled KKT violation from the explicit residual. Gradient of the
    /// objective in coordinate `j` is `-2 M_j' r + lambda w_j`.
    pub fn kkt_from_residual(&self, beta: &[f64], r: &[f64], lambda: f64) -> f64 {
        if self.kkt_scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for j in 0..self.p {
            // residual is centered when an intercept is present, so M_j'r equals the centered product
            let grad = -2.0 * dot(self.dict.column(j), r) + lambda * self.weights[j];
            let v = if beta[j] > 0.0 { grad.abs() } else { (-grad).max(0.0) };
            worst = worst.max(v);
        }
        worst / self.kkt_scale
    }

    fn ensure_gram(&mut self, j: usize) {
        if self.gram[j].is_some() {
            return;
        }
        let n = self.dict.rows() as f64;
        let cj = self.dict.column(j);
        let mj = self.col_mean[j];
        let col: Box<[f64]> = (0..self.p)
            .map(|k| dot(self.dict.column(k), cj) - n * self.col_mean[k] * mj)
            .collect();
        self.gram[j] = Some(col);
    }

    fn gram_entry(&self, i: usize, j: usize) -> f64 {
        self.gram[j].as_ref().expect("gram column cached")[i]
    }

    /// Full gradient term `g_j = corr_j - sum_k G_jk beta_k` for every column.
    fn full_correlation(&self, state: &State) -> Vec<f64> {
        let mut g = self.corr.clone();
        for &k in &state.working {
            let b = state.beta[k];
            if b != 0.0 {
                let col = self.gram[k].as_ref().expect("gram column cached");
                for (gi, gk) in g.iter_mut().zip(col.iter()) {
                    *gi -= gk * b;
                }
            }
        }
        g
    }

    fn violation(&self, beta: f64, g: f64, lambda: f64, w: f64) -> f64 {
        let grad = -2.0 * g + lambda * w;
        let v = if beta > 0.0 { grad.abs() } else { (-grad).max(0.0) };
        v / self.kkt_scale
    }

    fn solve_at(&mut self, state: &mut State, lambda: f64) -> Result<()> {
        if self.kkt_scale == 0.0 {
            state.beta.iter_mut().for_each(|b| *b = 0.0);
            return Ok(());
        }
        let tol = self.settings.kkt_tolerance;
        let mut last_violation = f64::INFINITY;
        for _ in 0..self.settings.max_sweeps {
            // drop zeros from the working set, keep the support
            state.working.retain(|&j| state.beta[j] > 0.0);
            state.in_working.iter_mut().for_each(|f| *f = false);
            for &j in &state.working {
                state.in_working[j] = true;
            }
            let g = self.full_correlation(state);
            let mut violators: Vec<(f64, usize)> = Vec::new();
            let mut worst = 0.0f64;
            for j in 0..self.p {
                let v = self.violation(state.beta[j], g[j], lambda, self.weights[j]);
                worst = worst.max(v);
                if !state.in_working[j] && v > tol {
                    violators.push((v, j));
                }
            }
            last_violation = worst;
            if worst <= tol {
                return Ok(());
            }
            // strongest violators first; a handful at a time keeps the Gram cache small
            violators.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, j) in violators.iter().take(10) {
                state.working.push(j);
                state.in_working[j] = true;
            }
            state.working.sort_unstable();
            for idx in 0..state.working.len() {
                let j = state.working[idx];
                self.ensure_gram(j);
            }
            self.solve_working_set(state, lambda)?;
        }
        Err(Error::NotConverged { iterations: self.settings.max_sweeps, violation: last_violation })
    }

    fn solve_working_set(&self, state: &mut State, lambda: f64) -> Result<()> {
        let ws = state.working.clone();
        let k = ws.len();
        // local copies of the restricted Gram block and gradient
        let mut gram = vec![0.0; k * k];
        for (a, &i) in ws.iter().enumerate() {
            for (b, &j) in ws.iter().enumerate() {
                gram[a * k + b] = self.gram_entry(i, j);
            }
        }
        let corr: Vec<f64> = ws.iter().map(|&j| self.corr[j]).collect();
        let half_pen: Vec<f64> = ws.iter().map(|&j| 0.5 * lambda * self.weights[j]).collect();
        let diag: Vec<f64> = ws.iter().map(|&j| self.diag[j]).collect();
        let mut beta: Vec<f64> = ws.iter().map(|&j| state.beta[j]).collect();
        let recompute = |beta: &[f64]| -> Vec<f64> {
            (0..k)
                .map(|a| corr[a] - (0..k).map(|b| gram[a * k + b] * beta[b]).sum::<f64>())
                .collect()
        };
        let objective = |beta: &[f64], g: &[f64]| -> f64 {
            // -2 c'b + b'Gb + lambda w'b = -c'b - g'b + 2 half_pen'b
            (0..k).map(|a| beta[a] * (-corr[a] - g[a] + 2.0 * half_pen[a])).sum()
        };
        let mut g = recompute(&beta);
        // the restricted problem is an NNLS in covariance form; its active-set
        // solution is exact up to conditioning, sweeps below only clean up
        let shifted: Vec<f64> = (0..k).map(|a| corr[a] - half_pen[a]).collect();
        let exact = nnls_gram(&gram, &shifted);
        let exact_g = recompute(&exact);
        if objective(&exact, &exact_g) <= objective(&beta, &g) {
            beta = exact;
            g = exact_g;
        }
        let tol = self.settings.kkt_tolerance;
        let scale = self.kkt_scale;
        let violation = |beta: &[f64], g: &[f64]| -> f64 {
            (0..k)
                .map(|a| {
                    let grad = -2.0 * g[a] + 2.0 * half_pen[a];
                    if beta[a] > 0.0 { grad.abs() } else { (-grad).max(0.0) }
                })
                .fold(0.0, f64::max)
                / scale
        };

        for sweep in 0..self.settings.max_inner_sweeps {
            if sweep == 0 && violation(&beta, &g) <= tol {
                break;
            }
            for a in 0..k {
                let new = (beta[a] + (g[a] - half_pen[a]) / diag[a]).max(0.0);
                let delta = new - beta[a];
                if delta != 0.0 {
                    beta[a] = new;
                    for b in 0..k {
                        g[b] -= gram[b * k + a] * delta;
                    }
                }
            }
            if sweep % self.settings.sweeps_per_polish == self.settings.sweeps_per_polish - 1 {
                g = recompute(&beta);
                if violation(&beta, &g) <= tol {
                    break;
                }
                self.polish(&gram, &corr, &half_pen, &mut beta, &mut g, &objective, &recompute);
                if violation(&beta, &g) <= tol {
                    break;
                }
            }
            if sweep + 1 == self.settings.max_inner_sweeps {
                return Err(Error::NotConverged {
                    iterations: self.settings.max_inner_sweeps,
                    violation: violation(&beta, &g),
                });
            }
        }
        for (a, &j) in ws.iter().enumerate() {
            state.beta[j] = beta[a];
        }
        Ok(())
    }

    /// Exact minimizer on the current support, approached by a feasible ratio
    /// step. Accepted only if the objective does not increase.
    #[allow(clippy::too_many_arguments)]
    fn polish(
        &self,
        gram: &[f64],
        corr: &[f64],
        half_pen: &[f64],
        beta: &mut Vec<f64>,
        g: &mut Vec<f64>,
        objective: &dyn Fn(&[f64], &[f64]) -> f64,
        recompute: &dyn Fn(&[f64]) -> Vec<f64>,
    ) {
        let k = beta.len();
        for _ in 0..k.max(1) {
            let support: Vec<usize> = (0..k).filter(|&a| beta[a] > 0.0).collect();
            if support.is_empty() {
                return;
            }
            let s = support.len();
            let mut sub = vec![0.0; s * s];
            for (r, &a) in support.iter().enumerate() {
                for (c, &b) in support.iter().enumerate() {
                    sub[r * s + c] = gram[a * k + b];
                }
            }
            let rhs: Vec<f64> = support.iter().map(|&a| corr[a] - half_pen[a]).collect();
            let Some(target) = cholesky_solve(&sub, &rhs, 1e-14) else { return };
            let mut step = 1.0f64;
            let mut leaving = None;
            for (&a, &t) in support.iter().zip(&target) {
                if t < 0.0 {
                    let ratio = beta[a] / (beta[a] - t);
                    if ratio < step {
                        step = ratio;
                        leaving = Some(a);
                    }
                }
            }
            let mut trial = beta.clone();
            for (&a, &t) in support.iter().zip(&target) {
                trial[a] = (beta[a] + step * (t - beta[a])).max(0.0);
            }
            if let Some(a) = leaving {
                trial[a] = 0.0;
            }
            let trial_g = recompute(&trial);
            if objective(&trial, &trial_g) > objective(beta, g) {
                return;
            }
            *beta = trial;
            *g = trial_g;
            if leaving.is_none() {
                return;
            }
        }
    }
}

struct State {
    beta: Vec<f64>,
    working: Vec<usize>,
    in_working: Vec<bool>,
}

impl State {
    fn new(p: usize) -> Self {
        State { beta: vec![0.0; p], working: Vec::new(), in_working: vec![false; p] }
    }
}
