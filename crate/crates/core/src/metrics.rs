//! Matching estimates to ground truth, error bands and contingency counts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RADIUS_M: f64 = 50.0;

/// Upper edges of the error bands; the last band is open.
pub const BAND_EDGES_M: [f64; 3] = [50.0, 100.0, 200.0];
pub const BAND_LABELS: [&str; 4] = ["[0,50]", "(50,100]", "(100,200]", "(200,inf)"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub truth: usize,
    pub estimate: usize,
    pub truth_position_m: f64,
    pub estimate_position_m: f64,
    pub error_m: f64,
}

/// Optimal one-to-one assignment between truth and estimate positions.
///
/// `pairs` holds every assigned pair, including those farther apart than
/// `radius_m`; contingency counting splits those into a miss and a false
/// alarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub radius_m: f64,
    pub truth_positions_m: Vec<f64>,
    pub estimate_positions_m: Vec<f64>,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_truths: Vec<usize>,
    pub unmatched_estimates: Vec<usize>,
}

impl MatchResult {
    pub fn n_truths(&self) -> usize {
        self.pairs.len() + self.unmatched_truths.len()
    }

    pub fn n_estimates(&self) -> usize {
        self.pairs.len() + self.unmatched_estimates.len()
    }

    pub fn total_error(&self) -> f64 {
        self.pairs.iter().map(|p| p.error_m).sum()
    }

    /// Errors per truth event, `None` for truths without an estimate.
    pub fn truth_errors(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.n_truths()];
        for p in &self.pairs {
            out[p.truth] = Some(p.error_m);
        }
        out
    }
}

/// Minimum-cost assignment of every row to a distinct column of a row-major
/// `rows x cols` cost matrix with `rows <= cols` (Hungarian method with
/// potentials). Returns the column of each row.
pub fn assign_min_cost(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols && cost.len() == rows * cols);
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

/// Pairs truths with estimates so that as many as possible are paired and
/// the total absolute position error is minimal.
pub fn match_events(truth: &[f64], estimates: &[f64], radius_m: f64) -> Result<MatchResult> {
    if !(radius_m > 0.0) {
        return Err(Error::InvalidInput(format!("matching radius must be positive, got {radius_m}")));
    }
    let mut pairs = Vec::new();
    if !truth.is_empty() && !estimates.is_empty() {
        // the solver needs rows <= columns
        let transpose = truth.len() > estimates.len();
        let (rows, cols) = if transpose { (estimates, truth) } else { (truth, estimates) };
        let cost: Vec<f64> = rows.iter().flat_map(|r| cols.iter().map(move |c| (r - c).abs())).collect();
        let assignment = assign_min_cost(&cost, rows.len(), cols.len());
        for (r, &c) in assignment.iter().enumerate() {
            let (t, e) = if transpose { (c, r) } else { (r, c) };
            pairs.push(MatchedPair {
                truth: t,
                estimate: e,
                truth_position_m: truth[t],
                estimate_position_m: estimates[e],
                error_m: (truth[t] - estimates[e]).abs(),
            });
        }
        pairs.sort_by_key(|p| p.truth);
    }
    let unmatched_truths = (0..truth.len()).filter(|&t| !pairs.iter().any(|p| p.truth == t)).collect();
    let unmatched_estimates = (0..estimates.len()).filter(|&e| !pairs.iter().any(|p| p.estimate == e)).collect();
    Ok(MatchResult {
        radius_m,
        truth_positions_m: truth.to_vec(),
        estimate_positions_m: estimates.to_vec(),
        pairs,
        unmatched_truths,
        unmatched_estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBands {
    pub counts: [usize; 4],
    pub total: usize,
    pub percentages: [f64; 4],
}

fn band_of(error_m: f64) -> usize {
    BAND_EDGES_M.iter().position(|&edge| error_m <= edge).unwrap_or(3)
}

/// Share of truth events per error band. Truths without an estimate count in
/// the open band.
pub fn stratify_errors(matches: &[MatchResult]) -> Result<ErrorBands> {
    let mut counts = [0usize; 4];
    for m in matches {
        for e in m.truth_errors() {
            counts[e.map_or(3, band_of)] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("no truth events to stratify".into()));
    }
    let percentages = counts.map(|c| 100.0 * c as f64 / total as f64);
    Ok(ErrorBands { counts, total, percentages })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: i64,
    /// `None` when the denominator is zero.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

impl ContingencyTable {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: i64) -> Self {
        ContingencyTable {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            sensitivity: ratio(tp as f64, (tp + fn_) as f64),
            specificity: ratio(tn as f64, tn as f64 + fp as f64),
            precision: ratio(tp as f64, (tp + fp) as f64),
        }
    }
}

/// Counts over a bench. Each entry is a link's matches and its estimator grid
/// size; true negatives are the grid positions left over.
pub fn contingency(links: &[(MatchResult, usize)]) -> ContingencyTable {
    let (mut tp, mut fp, mut fn_, mut grid) = (0u64, 0u64, 0u64, 0u64);
    for (m, q) in links {
        let hits = m.pairs.iter().filter(|p| p.error_m <= m.radius_m).count() as u64;
        let far = m.pairs.len() as u64 - hits;
        tp += hits;
        fp += far + m.unmatched_estimates.len() as u64;
        fn_ += far + m.unmatched_truths.len() as u64;
        grid += *q as u64;
    }
    let tn = grid as i64 - (tp + fp + fn_) as i64;
    ContingencyTable::from_counts(tp, fp, fn_, tn)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

/// Error bands as a text table, one row per labelled set.
pub fn format_error_table(rows: &[(String, ErrorBands)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:width$}", "set");
    for label in BAND_LABELS {
        let _ = write!(out, " {label:>10}");
    }
    out.push_str(&format!(" {:>8}\n", "events"));
    for (name, bands) in rows {
        let _ = write!(out, "{name:width$}");
        for p in bands.percentages {
            let _ = write!(out, " {:>9.2}%", p);
        }
        let _ = writeln!(out, " {:>8}", bands.total);
    }
    out
}

pub fn format_contingency_table(rows: &[(String, ContingencyTable)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!(
        "{:width$} {:>8} {:>8} {:>8} {:>10} {:>12} {:>12} {:>12}\n",
        "set", "TP", "FP", "FN", "TN", "sensitivity", "specificity", "precision"
    );
    for (name, t) in rows {
        let _ = writeln!(
            out,
            "{name:width$} {:>8} {:>8} {:>8} {:>10} {:>12} {:>12} {:>12}",
            t.true_positives,
            t.false_positives,
            t.false_negatives,
            t.true_negatives,
            pct(t.sensitivity),
            pct(t.specificity),
            pct(t.precision)
        );
    }
    out
}

/// Per-event rows: every truth (matched or missed) and every unmatched estimate.
pub fn event_errors_csv(rows: &[(String, usize, MatchResult)]) -> String {
    let mut out = String::from("set,link,truth_position_m,estimate_position_m,error_m,status\n");
    for (set, link, m) in rows {
        for p in &m.pairs {
            let status = if p.error_m <= m.radius_m { "hit" } else { "far" };
            let _ = writeln!(
                out,
                "{set},{link},{},{},{},{status}",
                p.truth_position_m, p.estimate_position_m, p.error_m
            );
        }
        for &t in &m.unmatched_truths {
            let _ = writeln!(out, "{set},{link},{},,,missed", m.truth_positions_m[t]);
        }
        for &e in &m.unmatched_estimates {
            let _ = writeln!(out, "{set},{link},,{},,spurious", m.estimate_positions_m[e]);
        }
    }
    out
}
