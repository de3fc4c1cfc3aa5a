//! Exhaustive check of the cluster treatment: every combination of one index
//! per cluster is refit by an independent nonnegative least squares oracle.
#![allow(dead_code)]

use bss_lasso::pipeline::{Cluster, Treatment};
use bss_lasso::Dictionary;

use super::oracles;

pub struct Enumerated {
    pub min_rss: f64,
    pub best_pick: Vec<usize>,
    pub combinations: usize,
}

/// RSS of the best nonnegative fit on one pick, with `free` columns always in.
pub fn pick_rss(dict: &Dictionary, y: &[f64], clusters: &[Cluster], pick: &[usize], free: &[usize]) -> f64 {
    let q = dict.q();
    let mut columns: Vec<usize> = clusters.iter().zip(pick).map(|(c, &i)| c.column(i, q)).collect();
    columns.extend(free);
    columns.sort_unstable();
    columns.dedup();
    let cols: Vec<&[f64]> = columns.iter().map(|&j| dict.column(j)).collect();
    oracles::nnls_by_enumeration(&cols, y).1
}

pub fn enumerate(dict: &Dictionary, y: &[f64], clusters: &[Cluster], free: &[usize]) -> Enumerated {
    let mut best = Enumerated { min_rss: f64::INFINITY, best_pick: Vec::new(), combinations: 0 };
    let mut pick: Vec<usize> = clusters.iter().map(|c| c.start).collect();
    loop {
        let rss = pick_rss(dict, y, clusters, &pick, free);
        best.combinations += 1;
        if rss < best.min_rss {
            best.min_rss = rss;
            best.best_pick = pick.clone();
        }
        // odometer
        let mut d = clusters.len();
        loop {
            if d == 0 {
                return best;
            }
            d -= 1;
            if pick[d] < clusters[d].end {
                pick[d] += 1;
                break;
            }
            pick[d] = clusters[d].start;
        }
    }
}

/// Checks a treatment result against enumeration. Returns the relative gap
/// between the returned RSS and the enumerated minimum, and the same gap for
/// the returned pick refit by the oracle.
pub fn check(dict: &Dictionary, y: &[f64], treatment: &Treatment, free: &[usize]) -> (f64, f64, Enumerated) {
    let e = enumerate(dict, y, &treatment.clusters, free);
    let returned = oracles::rss(
        &(0..dict.penalized_cols()).map(|j| dict.column(j)).collect::<Vec<_>>(),
        &treatment.output.beta,
        y,
    );
    let refit = pick_rss(dict, y, &treatment.clusters, &treatment.chosen, free);
    let scale = e.min_rss.max(1e-300);
    ((returned - e.min_rss) / scale, (refit - e.min_rss) / scale, e)
}
