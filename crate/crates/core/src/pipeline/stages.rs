//! Selection, correction and treatment passes over a shared Lasso problem.

use serde::{Deserialize, Serialize};

use crate::dictionary::Block;
use crate::error::{Error, Result};
use crate::lasso::LassoProblem;
use crate::nnls::{nnls_gram, quadratic_rss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Selection,
    #[serde(rename = "correction_2")]
    Correction2,
    #[serde(rename = "correction_3")]
    Correction3,
    Treated,
}

/// Coefficients after one pass, over the penalized columns (fault block then
/// reflection block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage: Stage,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub weights_used: Vec<f64>,
    pub lambda: f64,
    pub ebic: Option<f64>,
    pub rss: f64,
    pub nnz: usize,
}

impl StageOutput {
    pub fn fault_block(&self, q: usize) -> &[f64] {
        &self.beta[..q]
    }

    /// Empty when the dictionary has no reflection block.
    pub fn reflection_block(&self, q: usize) -> &[f64] {
        if self.beta.len() >= 2 * q {
            &self.beta[q..2 * q]
        } else {
            &[]
        }
    }
}

/// Tuning of the three passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSettings {
    pub lambda_count: usize,
    pub lambda_decades: f64,
    /// Reduced penalty for faults sitting under a reflection.
    pub gamma: f64,
    /// Reflections below `epsilon * max` do not trigger a reduced penalty.
    pub epsilon: f64,
    /// Clusters reflection selections too (Algorithm 4 as printed only
    /// clusters the fault block).
    pub cluster_reflections: bool,
    pub enumeration_cap: u64,
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings {
            lambda_count: 100,
            lambda_decades: 4.0,
            gamma: 0.5,
            epsilon: 0.05,
            cluster_reflections: true,
            enumeration_cap: 100_000,
        }
    }
}

fn run_lasso(
    problem: &mut LassoProblem<'_>,
    weights: Vec<f64>,
    stage: Stage,
    settings: &StageSettings,
) -> Result<StageOutput> {
    problem.set_weights(weights.clone())?;
    problem.use_default_grid(settings.lambda_count, settings.lambda_decades);
    let result = problem.solve_path()?;
    let best = result.best;
    Ok(StageOutput {
        stage,
        beta: best.beta,
        intercept: best.intercept,
        weights_used: weights,
        lambda: best.lambda,
        ebic: Some(best.ebic),
        rss: best.rss,
        nnz: best.nnz,
    })
}

/// Lasso with unit weights.
pub fn selection_stage(problem: &mut LassoProblem<'_>, settings: &StageSettings) -> Result<StageOutput> {
    let p = problem.dictionary().penalized_cols();
    run_lasso(problem, vec![1.0; p], Stage::Selection, settings)
}

/// Up to two reweighted Lasso runs in which faults co-located with a
/// non-negligible reflection get penalty weight `gamma`. Returns the extra
/// stages actually run; an empty vector means the selection stands.
pub fn correction_stage(
    problem: &mut LassoProblem<'_>,
    selection: &StageOutput,
    settings: &StageSettings,
) -> Result<Vec<StageOutput>> {
    let dict = problem.dictionary();
    if !dict.include_reflections() {
        return Ok(Vec::new());
    }
    if !(settings.gamma > 0.0 && settings.gamma < 1.0 && settings.epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "correction needs 0 < gamma < 1 and epsilon > 0, got {} and {}",
            settings.gamma, settings.epsilon
        )));
    }
    let q = dict.q();
    let p = dict.penalized_cols();
    let mut outputs: Vec<StageOutput> = Vec::new();
    for stage in [Stage::Correction2, Stage::Correction3] {
        let previous = outputs.last().unwrap_or(selection);
        let reflections = previous.reflection_block(q);
        let max = reflections.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            break;
        }
        let mut weights = vec![1.0; p];
        for (i, &b) in reflections.iter().enumerate() {
            if b > settings.epsilon * max {
                weights[i] = settings.gamma;
            }
        }
        outputs.push(run_lasso(problem, weights, stage, settings)?);
    }
    Ok(outputs)
}

/// A maximal run of consecutive positive coefficients within one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub block: Block,
    /// First and last grid index, inclusive.
    pub start: usize,
    pub end: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices().contains(&index)
    }

    /// Column of grid index `i` in a dictionary with `q` positions.
    pub fn column(&self, i: usize, q: usize) -> usize {
        match self.block {
            Block::Fault => i,
            Block::Reflection => q + i,
        }
    }
}

fn runs(values: &[f64], block: Block, out: &mut Vec<Cluster>) {
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v > 0.0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Cluster { block, start: s, end: i - 1 });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Cluster { block, start: s, end: values.len() - 1 });
    }
}

/// Runs of positive coefficients, fault block first. The reflection block is
/// scanned only when `include_reflections` is set.
pub fn find_clusters(beta: &[f64], q: usize, include_reflections: bool) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    runs(&beta[..q.min(beta.len())], Block::Fault, &mut clusters);
    if include_reflections && beta.len() >= 2 * q {
        runs(&beta[q..2 * q], Block::Reflection, &mut clusters);
    }
    clusters
}

/// Magnitude-weighted mean index of a cluster, rounded with ties toward the
/// lower index.
pub fn weighted_average_index(cluster: &Cluster, block_values: &[f64]) -> usize {
    let (mut num, mut den) = (0.0, 0.0);
    for i in cluster.indices() {
        num += block_values[i] * i as f64;
        den += block_values[i];
    }
    if den <= 0.0 {
        return cluster.start;
    }
    let mean = num / den;
    let lower = mean.floor();
    let frac = mean - lower;
    let idx = if frac > 0.5 + 1e-9 { lower + 1.0 } else { lower };
    (idx as usize).clamp(cluster.start, cluster.end)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treatment {
    pub output: StageOutput,
    /// Chosen grid index per cluster, in cluster order.
    pub chosen: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub combinations: u64,
    /// Clusters collapsed by the weighted-average rule before enumeration.
    pub narrowed: Vec<usize>,
}

/// Picks one index per cluster minimizing the nonnegative least squares
/// residual, by enumerating every combination. Positive coefficients outside
/// any cluster (reflections, when they are not clustered) enter every
/// candidate unconstrained.
pub fn treatment_stage(
    problem: &mut LassoProblem<'_>,
    source: &StageOutput,
    clusters: &[Cluster],
    settings: &StageSettings,
) -> Result<Treatment> {
    let dict = problem.dictionary();
    let q = dict.q();
    let p = dict.penalized_cols();

    let mut free_columns: Vec<usize> = Vec::new();
    if dict.include_reflections() && !clusters.iter().any(|c| c.block == Block::Reflection) {
        free_columns.extend((q..2 * q).filter(|&j| source.beta[j] > 0.0));
    }

    // candidate grid indices per cluster, narrowed until the product fits the cap
    let mut options: Vec<Vec<usize>> = clusters.iter().map(|c| c.indices().collect()).collect();
    let mut narrowed = Vec::new();
    let count = |opts: &[Vec<usize>]| -> u128 { opts.iter().map(|o| o.len() as u128).product() };
    while count(&options) > settings.enumeration_cap as u128 {
        let widest = (0..options.len())
            .filter(|&i| options[i].len() > 1)
            .max_by(|&a, &b| options[a].len().cmp(&options[b].len()).then(b.cmp(&a)));
        let Some(i) = widest else { break };
        let c = &clusters[i];
        let values = match c.block {
            Block::Fault => source.fault_block(q),
            Block::Reflection => source.reflection_block(q),
        };
        options[i] = vec![weighted_average_index(c, values)];
        narrowed.push(i);
    }
    let combinations = count(&options);
    if combinations > settings.enumeration_cap as u128 {
        return Err(Error::EnumerationCap {
            combinations,
            cap: settings.enumeration_cap as u128,
        });
    }

    let mut columns: Vec<usize> = clusters
        .iter()
        .zip(&options)
        .flat_map(|(c, o)| o.iter().map(move |&i| c.column(i, q)))
        .collect();
    columns.extend(&free_columns);
    columns.sort_unstable();
    columns.dedup();
    let (gram, corr, yy) = problem.restricted_normal_equations(&columns);
    let position = |col: usize| columns.binary_search(&col).expect("column indexed");
    let n_all = columns.len();

    let k = clusters.len();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut odometer = vec![0usize; k];
    'combinations: loop {
        let mut local: Vec<usize> = (0..k).map(|i| position(clusters[i].column(options[i][odometer[i]], q))).collect();
        local.extend(free_columns.iter().map(|&c| position(c)));
        let s = local.len();
        let mut g = vec![0.0; s * s];
        for (a, &i) in local.iter().enumerate() {
            for (b, &j) in local.iter().enumerate() {
                g[a * s + b] = gram[i * n_all + j];
            }
        }
        let c: Vec<f64> = local.iter().map(|&i| corr[i]).collect();
        let x = nnls_gram(&g, &c);
        let rss = quadratic_rss(&g, &c, yy, &x);
        if best.as_ref().is_none_or(|(r, _, _)| rss < *r) {
            let pick = (0..k).map(|i| options[i][odometer[i]]).collect();
            let mut beta = vec![0.0; p];
            for (&l, &v) in local.iter().zip(&x) {
                beta[columns[l]] += v;
            }
            best = Some((rss, pick, beta));
        }
        // advance, last cluster fastest
        let mut d = k;
        loop {
            if d == 0 {
                break 'combinations;
            }
            d -= 1;
            odometer[d] += 1;
            if odometer[d] < options[d].len() {
                break;
            }
            odometer[d] = 0;
        }
    }

    let (_, chosen, beta) = best.expect("at least one combination");
    let rss = problem.rss(&beta);
    let nnz = beta.iter().filter(|&&b| b > 0.0).count();
    Ok(Treatment {
        output: StageOutput {
            stage: Stage::Treated,
            intercept: problem.intercept(&beta),
            beta,
            weights_used: Vec::new(),
            lambda: 0.0,
            ebic: None,
            rss,
            nnz,
        },
        chosen,
        clusters: clusters.to_vec(),
        combinations: combinations as u64,
        narrowed,
    })
}
