//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured values, then asserts.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bss_lasso::bench::{draw_link, generate_bench, simulate_profile, BenchSpec};
use bss_lasso::metrics::{contingency, match_events, stratify_errors, MatchResult};
use bss_lasso::pipeline::{find_clusters, naive_magnitudes, treatment_stage, ReconstructSettings, StageSettings};
use bss_lasso::{
    build_observation, coefficients_from_magnitudes, detect, frequency_response_analytic,
    frequency_response_numeric, magnitudes_from_coefficients, DetectConfig, Dictionary, Event, FiberLink,
    LassoProblem, Mode, PositionGrid, SampledProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Written to the stderr handle directly so the line shows even when the
/// harness captures output of passing tests.
fn verdict(n: u32, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!("criterion {n}: {}  {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Criterion 1: numeric and closed-form transforms agree.
#[test]
fn c1_transform_equivalence() {
    let started = Instant::now();
    let mut worst = [0.0f64; 2];
    for (k, p) in [0.0, 1.0].into_iter().enumerate() {
        let spec = BenchSpec { reflection_probability: p, seed: 101 + k as u64, ..BenchSpec::default() };
        let freqs = spec.frequencies().unwrap();
        worst[k] = (0..50)
            .into_par_iter()
            .map(|i| {
                let spec = BenchSpec { n_faults: 1 + i % 3, ..spec.clone() };
                let link = draw_link(&spec, i).unwrap();
                let analytic = frequency_response_analytic(&link, &spec.constants, &freqs).unwrap();
                let sampled = SampledProfile::from_link(&link, &spec.constants, spec.dz_m).unwrap();
                let numeric = frequency_response_numeric(&sampled, &spec.constants, &freqs).unwrap();
                numeric.relative_error(&analytic)
            })
            .reduce(|| 0.0, f64::max);
    }
    let elapsed = started.elapsed();
    let pass = worst[0] < 1e-6 && worst[1] < 1e-3 && elapsed < Duration::from_secs(30);
    verdict(
        1,
        pass,
        &format!(
            "max rel error {:.2e} without spikes (< 1e-6), {:.2e} with spikes (< 1e-3), {:.1} s for 100 links (< 30 s)",
            worst[0],
            worst[1],
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Criterion 2: magnitudes survive the step-coefficient round trip.
#[test]
fn c2_magnitude_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let length = rng.random_range(2000.0..15000.0);
        let n = rng.random_range(1..=8);
        let mut positions: Vec<f64> = (0..n - 1).map(|_| rng.random_range(1.0..length)).collect();
        positions.push(length);
        positions.sort_by(f64::total_cmp);
        positions.dedup();
        let events = positions
            .iter()
            .map(|&x| Event {
                position: x,
                loss_db: rng.random_range(0.0..5.0),
                reflectance_db: rng.random_bool(0.5).then(|| rng.random_range(0.0..20.0)),
            })
            .collect();
        let link = FiberLink::new(length, events).unwrap();
        let xi = magnitudes_from_coefficients(&coefficients_from_magnitudes(&link).unwrap()).unwrap();
        for (e, x) in link.events.iter().zip(&xi) {
            let truth = 10f64.powf(-e.loss_db / 20.0);
            worst = worst.max((x - truth).abs() / truth);
        }
    }
    let pass = worst < 1e-12;
    verdict(2, pass, &format!("max relative error {worst:.2e} over 1000 links (< 1e-12)"));
    assert!(pass);
}

/// Criterion 3: solver optimality against independent checks.
#[test]
fn c3_solver_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_kkt = 0.0f64;
    for _ in 0..100 {
        let (dict, y) = common::instances::lasso_instance(&mut rng, 80);
        let cols: Vec<&[f64]> = (0..dict.penalized_cols()).map(|j| dict.column(j)).collect();
        let mut problem = LassoProblem::new(&dict, y.clone()).unwrap();
        let weights: Vec<f64> = (0..cols.len()).map(|_| if rng.random_bool(0.3) { 0.5 } else { 1.0 }).collect();
        problem.set_weights(weights.clone()).unwrap();
        let lambda = problem.lambda_max() * 10f64.powf(-rng.random_range(0.0..4.0));
        let sol = problem.solve_single(lambda).unwrap();
        let kkt = common::oracles::kkt_violation(&cols, &y, &sol.beta, sol.intercept, lambda, &weights, dict.has_intercept());
        worst_kkt = worst_kkt.max(kkt);
    }
    let mut worst_gap = 0.0f64;
    let mut small = 0;
    while small < 20 {
        let (dict, y) = common::instances::lasso_instance(&mut rng, 6);
        if dict.has_intercept() || dict.penalized_cols() > 6 {
            continue;
        }
        small += 1;
        let cols: Vec<&[f64]> = (0..dict.penalized_cols()).map(|j| dict.column(j)).collect();
        let mut problem = LassoProblem::new(&dict, y.clone()).unwrap();
        let lambda = problem.lambda_max() * 10f64.powf(-rng.random_range(0.3..3.0));
        let sol = problem.solve_single(lambda).unwrap();
        let w = vec![1.0; cols.len()];
        let x = common::oracles::projected_gradient_lasso(&cols, &y, lambda, &w, 200_000);
        let reference = problem.objective(&x, lambda);
        worst_gap = worst_gap.max((problem.objective(&sol.beta, lambda) - reference).abs() / reference.abs());
    }
    let pass = worst_kkt < 1e-7 && worst_gap < 1e-6;
    verdict(
        3,
        pass,
        &format!("max KKT residual {worst_kkt:.2e} over 100 solves (< 1e-7), max objective gap {worst_gap:.2e} over 20 small problems (< 1e-6)"),
    );
    assert!(pass);
}

/// Criterion 4: treatment returns the minimum-RSS combination.
#[test]
fn c4_treatment_exactness() {
    let mut instances = 0;
    let mut worst = 0.0f64;
    // bench links through the full pipeline
    let spec = BenchSpec { n_links: 8, n_faults: 3, seed: 404, ..BenchSpec::default() };
    let bench = generate_bench(&spec).unwrap();
    for l in &bench.links {
        for mode in [Mode::BssLasso, Mode::SincLasso] {
            let config = DetectConfig::default().with_mode(mode);
            let report = detect(&l.profile, l.link.length, &config).unwrap();
            if !report.treatment.narrowed.is_empty() || report.treatment.combinations > 10_000 {
                continue;
            }
            let grid = PositionGrid::for_length(l.link.length, config.grid_step_m).unwrap();
            let dict =
                Dictionary::build(grid, &l.profile.frequencies, &config.constants, mode != Mode::SincLasso, false, l.link.length)
                    .unwrap();
            let y = build_observation(&l.profile).unwrap();
            let (gap, refit, _) = common::treatment::check(&dict, &y, &report.treatment, &[]);
            worst = worst.max(gap.abs()).max(refit.abs());
            instances += 1;
        }
    }
    // synthetic selections with clusters in both blocks
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    for _ in 0..20 {
        let (dict, y, source) = common::instances::cluster_instance(&mut rng);
        let q = dict.q();
        let mut problem = LassoProblem::new(&dict, y.clone()).unwrap();
        for cluster_reflections in [true, false] {
            let clusters = find_clusters(&source.beta, q, cluster_reflections);
            let t = treatment_stage(&mut problem, &source, &clusters, &StageSettings::default()).unwrap();
            let free: Vec<usize> =
                if cluster_reflections { Vec::new() } else { (q..2 * q).filter(|&j| source.beta[j] > 0.0).collect() };
            let (gap, refit, _) = common::treatment::check(&dict, &y, &t, &free);
            worst = worst.max(gap.abs()).max(refit.abs());
            instances += 1;
        }
    }
    let pass = worst < 1e-8;
    verdict(
        4,
        pass,
        &format!("{instances} instances, max relative RSS gap to exhaustive refit {worst:.2e} (< 1e-8)"),
    );
    assert!(pass);
}

const REFERENCE_FIRST_BAND: [f64; 3] = [89.80, 81.50, 77.50];

struct ModeRun {
    matches: Vec<(MatchResult, usize)>,
    /// Detection time of each link on one thread.
    times: Vec<Duration>,
}

/// One regenerated 100-link bench per fault count, run through all three
/// estimators. Shared by criteria 5 and 6.
fn desk_benches() -> &'static BTreeMap<(usize, Mode), ModeRun> {
    static RUNS: std::sync::OnceLock<BTreeMap<(usize, Mode), ModeRun>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let mut runs = BTreeMap::new();
        for n_faults in 1..=3 {
            let spec = BenchSpec { n_links: 100, n_faults, seed: 500 + n_faults as u64, ..BenchSpec::default() };
            let bench = generate_bench(&spec).unwrap();
            for mode in Mode::ALL {
                let config = DetectConfig::default().with_mode(mode);
                let (matches, times) = single.install(|| {
                    bench
                        .links
                        .iter()
                        .map(|l| {
                            let started = Instant::now();
                            let report = detect(&l.profile, l.link.length, &config).unwrap();
                            let took = started.elapsed();
                            let q = PositionGrid::for_length(l.link.length, config.grid_step_m).unwrap().len();
                            ((match_events(&l.link.positions(), &report.positions(), 50.0).unwrap(), q), took)
                        })
                        .unzip()
                });
                runs.insert((n_faults, mode), ModeRun { matches, times });
            }
        }
        runs
    })
}

fn first_band(run: &ModeRun) -> f64 {
    let just: Vec<MatchResult> = run.matches.iter().map(|(m, _)| m.clone()).collect();
    stratify_errors(&just).unwrap().percentages[0]
}

/// Criterion 5: error bands on regenerated benches.
#[test]
fn c5_table_bands() {
    let runs = desk_benches();
    let mut pass = true;
    let mut lines = Vec::new();
    let mut times = Vec::new();
    for n_faults in 1..=3 {
        let band: BTreeMap<Mode, f64> = Mode::ALL.iter().map(|&m| (m, first_band(&runs[&(n_faults, m)]))).collect();
        let ours = band[&Mode::BssLasso];
        let target = REFERENCE_FIRST_BAND[n_faults - 1];
        let within = (ours - target).abs() <= 10.0;
        let dominant = ours > band[&Mode::SincLasso] && ours > band[&Mode::Bss1];
        pass &= within && dominant;
        times.extend(runs[&(n_faults, Mode::BssLasso)].times.iter().copied());
        lines.push(format!(
            "{n_faults} fault(s): bss-lasso {ours:.2}% (target {target:.2} +/- 10: {}), bss-1 {:.2}%, sinclasso {:.2}% (strict dominance: {})",
            if within { "ok" } else { "out" },
            band[&Mode::Bss1],
            band[&Mode::SincLasso],
            if dominant { "ok" } else { "no" },
        ));
    }
    let serial: Duration = times.iter().sum();
    // links are independent, so eight workers finish when the busiest one does;
    // estimated by longest-first scheduling of the measured per-link times
    times.sort_by(|a, b| b.cmp(a));
    let mut workers = [Duration::ZERO; 8];
    for t in times {
        *workers.iter_mut().min().unwrap() += t;
    }
    let parallel = workers.into_iter().max().unwrap();
    pass &= serial < Duration::from_secs(15 * 60) && parallel < Duration::from_secs(5 * 60);
    verdict(
        5,
        pass,
        &format!(
            "{}; bss-lasso runtime for 300 links {:.0} s on one thread (< 900), {:.0} s estimated on 8 workers (< 300)",
            lines.join("; "),
            serial.as_secs_f64(),
            parallel.as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Criterion 6: contingency rates on the combined bench.
#[test]
fn c6_contingency() {
    let runs = desk_benches();
    let combined: Vec<(MatchResult, usize)> =
        (1..=3).flat_map(|n| runs[&(n, Mode::BssLasso)].matches.iter().cloned()).collect();
    let table = contingency(&combined);
    // independent recount
    let (mut tp, mut fp, mut fn_, mut grid) = (0u64, 0u64, 0u64, 0u64);
    for (m, q) in &combined {
        for err in m.truth_errors() {
            match err {
                Some(e) if e <= 50.0 => tp += 1,
                _ => fn_ += 1,
            }
        }
        fp += (m.estimate_positions_m.len() - m.pairs.iter().filter(|p| p.error_m <= 50.0).count()) as u64;
        grid += *q as u64;
    }
    let tn = grid as i64 - (tp + fp + fn_) as i64;
    let sensitivity = tp as f64 / (tp + fn_) as f64;
    let specificity = tn as f64 / (tn as f64 + fp as f64);
    let precision = tp as f64 / (tp + fp) as f64;
    let formulas = table.true_positives == tp
        && table.false_positives == fp
        && table.false_negatives == fn_
        && table.true_negatives == tn
        && table.sensitivity == Some(sensitivity)
        && table.specificity == Some(specificity)
        && table.precision == Some(precision);
    let pass = formulas && sensitivity >= 0.70;
    verdict(
        6,
        pass,
        &format!(
            "TP {tp} FP {fp} FN {fn_} TN {tn}; formulas reproduced: {formulas}; sensitivity {:.2}% (>= 70%), specificity {:.4}%, precision {:.2}%",
            100.0 * sensitivity,
            100.0 * specificity,
            100.0 * precision
        ),
    );
    assert!(pass);
}

/// Criterion 7: the correction stage fixes the reflective-fault shift on the
/// 8 km example link.
#[test]
fn c7_correction_efficacy() {
    let link = FiberLink::new(
        8000.0,
        vec![Event::reflective(4000.0, 3.0, 20.0), Event::non_reflective(8000.0, 3.0)],
    )
    .unwrap();
    let spec = BenchSpec::default();
    let profile = simulate_profile(&link, &spec, &spec.frequencies().unwrap()).unwrap();
    let error_at_4km = |mode: Mode| {
        let report = detect(&profile, link.length, &DetectConfig::default().with_mode(mode)).unwrap();
        report.positions().iter().map(|x| (x - 4000.0).abs()).fold(f64::INFINITY, f64::min)
    };
    let selection_only = error_at_4km(Mode::Bss1);
    let full = error_at_4km(Mode::BssLasso);
    let sinc = error_at_4km(Mode::SincLasso);
    let pass = selection_only > 100.0 && full <= 20.0;
    verdict(
        7,
        pass,
        &format!(
            "error at 4 km: selection only {selection_only:.0} m (> 100), full bss-lasso {full:.0} m (<= 20), sinclasso {sinc:.0} m"
        ),
    );
    assert!(pass);
}

/// Criterion 8: magnitude reconstruction on noiseless on-grid links.
#[test]
fn c8_reconstruction_fidelity() {
    let spec = BenchSpec { seed: 808, ..BenchSpec::default() };
    let freqs = spec.frequencies().unwrap();
    let mut worst_plain = 0.0f64;
    let mut worst_reflective = 0.0f64;
    let mut missing = 0;
    let (mut recon_total, mut naive_total) = (0.0, 0.0);
    let mut naive_failures = 0;
    let mut events = 0;
    for i in 0..20 {
        let drawn = draw_link(&BenchSpec { n_faults: 1 + i % 3, ..spec.clone() }, i).unwrap();
        // on the 10 m detection grid and on the reconstruction lattices
        let mut evs: Vec<Event> = drawn.events.clone();
        for e in &mut evs {
            e.position = (e.position / 10.0).round() * 10.0;
            e.loss_db = ((e.loss_db / 0.1).round() * 0.1).clamp(0.1, 5.0);
            e.reflectance_db = e.reflectance_db.map(|r| (r / 2.0).round() * 2.0);
        }
        evs.dedup_by(|a, b| a.position == b.position);
        let length = evs.last().unwrap().position;
        let link = FiberLink::new(length, evs).unwrap();
        let profile = simulate_profile(&link, &spec, &freqs).unwrap();
        let report = detect(&profile, length, &DetectConfig::default()).unwrap();
        let naive = naive_magnitudes(&report);
        let filled = bss_lasso::reconstruct_magnitudes(&report, None, &ReconstructSettings::default()).unwrap();
        let m = match_events(&link.positions(), &filled.positions(), 50.0).unwrap();
        for (t, truth) in link.events.iter().enumerate() {
            events += 1;
            let Some(pair) = m.pairs.iter().find(|p| p.truth == t && p.error_m <= 50.0) else {
                missing += 1;
                continue;
            };
            let est = &filled.estimates[pair.estimate];
            let loss_err = (est.loss_db.unwrap() - truth.loss_db).abs();
            recon_total += loss_err;
            let naive_loss = naive[pair.estimate].loss_db();
            if naive_loss.is_finite() {
                naive_total += (naive_loss - truth.loss_db).abs();
            } else {
                naive_failures += 1;
            }
            match truth.reflectance_db {
                None => worst_plain = worst_plain.max(loss_err),
                Some(r) => {
                    let r_err = est.reflectance_db.map_or(f64::INFINITY, |e| (e - r).abs());
                    worst_reflective = worst_reflective.max(loss_err).max(r_err);
                }
            }
        }
    }
    let beats_naive = naive_failures > 0 || recon_total <= naive_total + 1e-6 * events as f64;
    let pass = missing == 0 && worst_plain <= 0.1 + 1e-9 && worst_reflective <= 2.0 + 1e-9 && beats_naive;
    verdict(
        8,
        pass,
        &format!(
            "{events} events, {missing} not located within 50 m; worst non-reflective loss error {worst_plain:.2} dB (<= 0.1), worst reflective error {worst_reflective:.2} dB (<= 2); total loss error reconstructed {recon_total:.2} dB vs naive {naive_total:.2} dB with {naive_failures} naive failures"
        ),
    );
    assert!(pass);
}

fn run(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_bsslasso")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// Criterion 9: repeated commands give byte-identical outputs.
#[test]
fn c9_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let link_file = tmp.path().join("link.json");
    fs::write(
        &link_file,
        r#"{"length_m": 5000, "events": [{"position_m": 2000, "loss_db": 2, "reflectance_db": 15}, {"position_m": 5000, "loss_db": 1}]}"#,
    )
    .unwrap();
    let mut snapshots = Vec::new();
    for (k, jobs) in ["0", "1"].into_iter().enumerate() {
        // same paths both times, since reports record where they were read from
        let root = tmp.path().join("run");
        let s = |p: &str| root.join(p).to_str().unwrap().to_string();
        run(&["gen-bench", "--out", &s("bench"), "--faults", "2", "--links", "4", "--seed", "9", "--jobs", jobs]);
        run(&["detect", "--bench", &s("bench"), "--out", &s("bss"), "--reconstruct", "--jobs", jobs]);
        run(&["detect", "--bench", &s("bench"), "--out", &s("sinc"), "--mode", "sinclasso", "--jobs", jobs]);
        run(&["reconstruct", "--report", &s("sinc/link_0.json"), "--out", &s("filled/link_0.json")]);
        run(&["evaluate", "--bench", &s("bench"), "--reports", &format!("{},{}", s("bss"), s("sinc")), "--out", &s("eval")]);
        run(&["validate-model", "--link", link_file.to_str().unwrap(), "--out", &s("model.json")]);
        snapshots.push(snapshot(&root));
        fs::rename(&root, tmp.path().join(format!("run{k}"))).unwrap();
    }
    let files = snapshots[0].len();
    let differing: Vec<&PathBuf> = snapshots[0]
        .iter()
        .filter(|(path, bytes)| snapshots[1].get(*path) != Some(*bytes))
        .map(|(path, _)| path)
        .collect();
    let pass = differing.is_empty() && snapshots[0].len() == snapshots[1].len();
    verdict(9, pass, &format!("{files} output files compared across two runs, {} differ", differing.len()));
    assert!(pass, "differing: {differing:?}");
}
