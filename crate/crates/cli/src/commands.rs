use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use bss_lasso::bench::{generate_bench, load_bench, save_bench, BenchSpec};
use bss_lasso::fiber::{alpha_from_db_per_km, SampledProfile, DEFAULT_DZ_M};
use bss_lasso::io::{load_profile, profile_to_string, write_atomic};
use bss_lasso::metrics::{
    contingency, event_errors_csv, format_contingency_table, format_error_table, match_events, stratify_errors,
    ContingencyTable, ErrorBands, MatchResult,
};
use bss_lasso::pipeline::{
    detect, naive_magnitudes, reconstruct_magnitudes, DetectConfig, DetectionReport, ReconstructSettings,
    ReportFile,
};
use bss_lasso::{
    frequency_response_analytic, frequency_response_numeric, uniform_frequencies, Error, FiberLink, FrequencyProfile,
    PositionGrid,
};

use crate::cli::{
    Cli, Command, DetectArgs, EvaluateArgs, GenBenchArgs, ReconstructArgs, RunConfigArgs, TargetArg, ValidateModelArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. } | Error::EnumerationCap { .. } => Failure::Solver(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenBench(args) => gen_bench(args),
        Command::Detect(args) => detect_cmd(args),
        Command::Reconstruct(args) => reconstruct_cmd(args),
        Command::Evaluate(args) => evaluate(args),
        Command::ValidateModel(args) => validate_model(args),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

fn thread_pool(jobs: usize) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {jobs} workers: {e}")))
}

fn gen_bench(args: GenBenchArgs) -> Outcome {
    let mut spec: BenchSpec = match &args.config {
        Some(path) => read_json(path)?,
        None => BenchSpec::default(),
    };
    if args.faults == Some(0) {
        return Err(Failure::Usage("--faults must be at least 1".into()));
    }
    if args.links == Some(0) {
        return Err(Failure::Usage("--links must be at least 1".into()));
    }
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(args.faults => spec.n_faults);
    set!(args.links => spec.n_links);
    set!(args.seed => spec.seed);
    set!(args.min_length => spec.length_range_m[0]);
    set!(args.max_length => spec.length_range_m[1]);
    set!(args.reflection_probability => spec.reflection_probability);
    set!(args.freq_start => spec.frequency_start_hz);
    set!(args.freq_stop => spec.frequency_stop_hz);
    set!(args.freq_step => spec.frequency_step_hz);
    if args.noise_std.is_some() {
        spec.noise_std = args.noise_std;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let bench = thread_pool(args.jobs)?.install(|| generate_bench(&spec))?;
    save_bench(&bench, &args.out)?;
    log::info!("wrote {} links to {}", bench.links.len(), args.out.display());
    Ok(())
}

fn build_config(args: &RunConfigArgs) -> Outcome<DetectConfig> {
    let mut config: DetectConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => DetectConfig::default(),
    };
    if let Some(m) = args.mode {
        config.mode = m.into();
    }
    if let Some(v) = args.grid_step {
        config.grid_step_m = v;
    }
    if let Some(v) = args.gamma {
        config.stages.gamma = v;
    }
    if let Some(v) = args.epsilon {
        config.stages.epsilon = v;
    }
    if let Some(v) = args.ebic_gamma {
        config.ebic_gamma = v;
    }
    if let Some(v) = args.lambda_count {
        config.stages.lambda_count = v;
    }
    if let Some(v) = args.intercept {
        config.intercept = v;
    }
    if let Some(v) = args.cluster_reflections {
        config.stages.cluster_reflections = v;
    }
    if let Some(v) = args.attenuation_db_km {
        config.constants.alpha = alpha_from_db_per_km(v);
    }
    if let Some(v) = args.group_index {
        config.constants.group_index = v;
    }
    let s = &config.stages;
    if !(s.gamma > 0.0 && s.gamma < 1.0) {
        return Err(Failure::Usage(format!("gamma must lie in (0, 1), got {}", s.gamma)));
    }
    if !(s.epsilon > 0.0) {
        return Err(Failure::Usage(format!("epsilon must be positive, got {}", s.epsilon)));
    }
    if !(config.grid_step_m > 0.0) || s.lambda_count == 0 {
        return Err(Failure::Usage("grid step and lambda count must be positive".into()));
    }
    Ok(config)
}

fn fitted_name(report_name: &str) -> String {
    let stem = report_name.strip_suffix(".json").unwrap_or(report_name);
    format!("{stem}.fitted.csv")
}

/// Runs detection (and reconstruction) for one profile and writes the
/// report plus its fitted profile next to it.
fn process(
    profile: &FrequencyProfile,
    length: f64,
    config: &DetectConfig,
    args: &DetectArgs,
    out: &Path,
) -> bss_lasso::Result<()> {
    let mut report = detect(profile, length, config)?;
    let naive = args.reconstruct.then(|| naive_magnitudes(&report));
    if args.reconstruct {
        let settings = ReconstructSettings { target: args.target.into(), ..ReconstructSettings::default() };
        report = reconstruct_magnitudes(&report, Some(profile), &settings)?;
    }
    write_report(&report, naive, args.record_runtime, out)
}

fn write_report(
    report: &DetectionReport,
    naive: Option<Vec<bss_lasso::pipeline::NaiveMagnitude>>,
    record_runtime: bool,
    out: &Path,
) -> bss_lasso::Result<()> {
    let name = out
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", out.display())))?
        .to_string_lossy()
        .into_owned();
    let fitted = fitted_name(&name);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
    }
    write_atomic(&out.with_file_name(&fitted), profile_to_string(&report.fitted_profile).as_bytes())?;
    let mut file = report.to_file(Some(fitted), record_runtime);
    file.naive_magnitudes = naive;
    write_atomic(out, to_json(&file).as_bytes())
}

#[derive(Serialize)]
struct LinkStatus {
    index: usize,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct DetectSummary<'a> {
    config: &'a DetectConfig,
    reconstruct: bool,
    links: Vec<LinkStatus>,
}

fn detect_cmd(args: DetectArgs) -> Outcome {
    let config = build_config(&args.run)?;
    if let Some(path) = &args.profile {
        let length = args.length.ok_or_else(|| Failure::Usage("--length is required with --profile".into()))?;
        let profile = load_profile(path)?;
        return process(&profile, length, &config, &args, &args.out).map_err(Failure::from);
    }
    let dir = args.bench.as_ref().expect("clap enforces --profile or --bench");
    let bench = load_bench(dir)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Data(format!("{}: {e}", args.out.display())))?;
    let results: Vec<(usize, bss_lasso::Result<()>)> = thread_pool(args.jobs)?.install(|| {
        bench
            .links
            .par_iter()
            .map(|l| {
                let out = args.out.join(format!("link_{}.json", l.index));
                (l.index, process(&l.profile, l.link.length, &config, &args, &out))
            })
            .collect()
    });
    let mut solver_failed = false;
    let mut failed = 0;
    let mut links = Vec::with_capacity(results.len());
    for (index, result) in results {
        let error_path = args.out.join(format!("link_{index}.error.json"));
        match result {
            Ok(()) => {
                let _ = fs::remove_file(&error_path);
                links.push(LinkStatus { index, status: "ok", error: None });
            }
            Err(e) => {
                failed += 1;
                solver_failed |= matches!(e, Error::NotConverged { .. } | Error::EnumerationCap { .. });
                let record = LinkStatus { index, status: "error", error: Some(e.to_string()) };
                write(&error_path, &to_json(&record))?;
                log::error!("link {index}: {e}");
                links.push(record);
            }
        }
    }
    let summary = DetectSummary { config: &config, reconstruct: args.reconstruct, links };
    write(&args.out.join("summary.json"), &to_json(&summary))?;
    match (failed, solver_failed) {
        (0, _) => Ok(()),
        (n, true) => Err(Failure::Solver(format!("{n} link(s) failed, at least one in the solver"))),
        (n, false) => Err(Failure::Data(format!("{n} link(s) failed"))),
    }
}

fn reconstruct_cmd(args: ReconstructArgs) -> Outcome {
    if args.target == TargetArg::Observation && args.profile.is_none() {
        return Err(Failure::Usage("--target observation needs --profile".into()));
    }
    let file: ReportFile = read_json(&args.report)?;
    let fitted_ref = file
        .fitted_profile_ref
        .clone()
        .ok_or_else(|| Failure::Data(format!("{}: no fitted profile reference", args.report.display())))?;
    let fitted = load_profile(&args.report.with_file_name(fitted_ref))?;
    let observation = args.profile.as_deref().map(load_profile).transpose()?;
    let report = DetectionReport::from_file(file, fitted)?;
    let naive = naive_magnitudes(&report);
    let settings = ReconstructSettings { target: args.target.into(), ..ReconstructSettings::default() };
    let report = reconstruct_magnitudes(&report, observation.as_ref(), &settings)?;
    write_report(&report, Some(naive), false, &args.out).map_err(Failure::from)
}

#[derive(Serialize)]
struct EvaluatedSet {
    name: String,
    reports: PathBuf,
    config: DetectConfig,
    bands: ErrorBands,
    contingency: ContingencyTable,
}

#[derive(Serialize)]
struct Evaluation<'a> {
    bench_spec: &'a BenchSpec,
    radius_m: f64,
    sets: Vec<EvaluatedSet>,
}

fn evaluate(args: EvaluateArgs) -> Outcome {
    if !(args.radius > 0.0) {
        return Err(Failure::Usage("--radius must be positive".into()));
    }
    let bench = load_bench(&args.bench)?;
    let mut sets = Vec::new();
    let mut event_rows = Vec::new();
    let mut names = BTreeSet::new();
    for dir in &args.reports {
        let mut matches: Vec<(MatchResult, usize)> = Vec::with_capacity(bench.links.len());
        let mut config = None;
        for l in &bench.links {
            let path = dir.join(format!("link_{}.json", l.index));
            if !path.exists() {
                return Err(Failure::Data(format!("{}: missing report for link {}", dir.display(), l.index)));
            }
            let file: ReportFile = read_json(&path)?;
            if file.length_m != l.link.length {
                return Err(Failure::Data(format!(
                    "{}: length {} does not match bench link {} ({})",
                    path.display(),
                    file.length_m,
                    l.index,
                    l.link.length
                )));
            }
            let estimates: Vec<f64> = file.estimates.iter().map(|e| e.position_m).collect();
            let m = match_events(&l.link.positions(), &estimates, args.radius)?;
            let q = PositionGrid::for_length(l.link.length, file.config.grid_step_m)?.len();
            match &config {
                None => config = Some(file.config.clone()),
                Some(c) if *c != file.config => {
                    return Err(Failure::Data(format!("{}: reports use different configs", dir.display())));
                }
                Some(_) => {}
            }
            matches.push((m, q));
        }
        let config = config.ok_or_else(|| Failure::Data("bench has no links".into()))?;
        let mut name = config.mode.to_string();
        while !names.insert(name.clone()) {
            name.push('\'');
        }
        let just: Vec<MatchResult> = matches.iter().map(|(m, _)| m.clone()).collect();
        let bands = stratify_errors(&just)?;
        let table = contingency(&matches);
        for (l, m) in bench.links.iter().zip(just) {
            event_rows.push((name.clone(), l.index, m));
        }
        sets.push(EvaluatedSet { name, reports: dir.clone(), config, bands, contingency: table });
    }
    fs::create_dir_all(&args.out).map_err(|e| Failure::Data(format!("{}: {e}", args.out.display())))?;
    let band_rows: Vec<(String, ErrorBands)> = sets.iter().map(|s| (s.name.clone(), s.bands.clone())).collect();
    let table_rows: Vec<(String, ContingencyTable)> =
        sets.iter().map(|s| (s.name.clone(), s.contingency.clone())).collect();
    let text = format!(
        "Position errors, {} links with {} fault(s) each (percent of faults per band)\n{}\nContingency (+/- {} m)\n{}",
        bench.links.len(),
        bench.spec.n_faults,
        format_error_table(&band_rows),
        args.radius,
        format_contingency_table(&table_rows)
    );
    write(&args.out.join("tables.txt"), &text)?;
    write(&args.out.join("events.csv"), &event_errors_csv(&event_rows))?;
    let evaluation = Evaluation { bench_spec: &bench.spec, radius_m: args.radius, sets };
    write(&args.out.join("evaluation.json"), &to_json(&evaluation))?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct ModelCheck<'a> {
    link: &'a FiberLink,
    dz_m: f64,
    n_frequencies: usize,
    relative_error: f64,
    tolerance: f64,
    pass: bool,
}

fn validate_model(args: ValidateModelArgs) -> Outcome {
    let link: FiberLink = read_json(&args.link)?;
    link.validate()?;
    let freqs = uniform_frequencies(args.freq_start, args.freq_stop, args.freq_step)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let constants = Default::default();
    let dz = args.dz.unwrap_or(DEFAULT_DZ_M);
    let analytic = frequency_response_analytic(&link, &constants, &freqs)?;
    let sampled = SampledProfile::from_link(&link, &constants, dz)?;
    let numeric = frequency_response_numeric(&sampled, &constants, &freqs)?;
    let relative_error = numeric.relative_error(&analytic);
    let tolerance = if link.events.iter().any(|e| e.is_reflective()) { 1e-3 } else { 1e-6 };
    let check = ModelCheck {
        link: &link,
        dz_m: dz,
        n_frequencies: freqs.len(),
        relative_error,
        tolerance,
        pass: relative_error < tolerance,
    };
    let json = to_json(&check);
    if let Some(out) = &args.out {
        write(out, &json)?;
    }
    print!("{json}");
    if check.pass {
        Ok(())
    } else {
        Err(Failure::Data(format!("relative error {relative_error:.3e} exceeds {tolerance:e}")))
    }
}
