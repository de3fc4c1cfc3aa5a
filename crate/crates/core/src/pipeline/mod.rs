//! End-to-end detection: dictionary, selection, optional correction, cluster
//! treatment, and the report handed to magnitude reconstruction.

mod reconstruct;
mod stages;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use reconstruct::{naive_magnitudes, reconstruct_magnitudes, NaiveMagnitude, ReconstructSettings, ReconstructTarget};
pub use stages::{
    correction_stage, find_clusters, selection_stage, treatment_stage, weighted_average_index, Cluster, Stage,
    StageOutput, StageSettings, Treatment,
};

use crate::dictionary::{build_observation, Block, Dictionary, PositionGrid};
use crate::error::{Error, Result};
use crate::fiber::{FrequencyProfile, PhysicalConstants};
use crate::lasso::{LassoProblem, SolverSettings};

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Selection, correction and treatment.
    BssLasso,
    /// Selection and treatment, no correction.
    #[serde(rename = "bss-1")]
    Bss1,
    /// Fault-only dictionary, selection and treatment.
    #[serde(rename = "sinclasso")]
    SincLasso,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SincLasso, Mode::Bss1, Mode::BssLasso];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::BssLasso => "bss-lasso",
            Mode::Bss1 => "bss-1",
            Mode::SincLasso => "sinclasso",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bss-lasso" => Ok(Mode::BssLasso),
            "bss-1" => Ok(Mode::Bss1),
            "sinclasso" => Ok(Mode::SincLasso),
            other => Err(Error::InvalidInput(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub mode: Mode,
    pub grid_step_m: f64,
    pub ebic_gamma: f64,
    pub intercept: bool,
    /// Treated reflection coefficients at or below this fraction of the
    /// largest coefficient are ignored.
    pub reflective_threshold: f64,
    /// A treated reflection is attached to a fault estimate within this many
    /// grid steps; otherwise it is listed as an orphan.
    pub reflection_merge_steps: usize,
    pub stages: StageSettings,
    pub solver: SolverSettings,
    pub constants: PhysicalConstants,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            mode: Mode::BssLasso,
            grid_step_m: 10.0,
            ebic_gamma: 1.0,
            intercept: false,
            reflective_threshold: 1e-8,
            reflection_merge_steps: 5,
            stages: StageSettings::default(),
            solver: SolverSettings::default(),
            constants: PhysicalConstants::default(),
        }
    }
}

impl DetectConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub position_m: f64,
    pub is_reflective: bool,
    pub loss_db: Option<f64>,
    pub reflectance_db: Option<f64>,
    pub grid_index: usize,
    /// Treated fault-block coefficient at `grid_index`.
    pub fault_coefficient: f64,
    /// Treated reflection coefficient attached to this estimate.
    pub reflection_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub estimates: Vec<EventEstimate>,
    /// Grid indices of treated reflections with no fault estimate within the
    /// merge distance. They are not reported as events.
    pub orphan_reflections: Vec<usize>,
    pub fitted_profile: FrequencyProfile,
    pub diagnostics: Vec<StageOutput>,
    pub treatment: Treatment,
    pub length_m: f64,
    pub config: DetectConfig,
    pub runtime: Duration,
}

impl DetectionReport {
    pub fn positions(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.position_m).collect()
    }

    /// The last stage before treatment.
    pub fn pre_treatment(&self) -> &StageOutput {
        self.diagnostics
            .iter()
            .rev()
            .find(|s| s.stage != Stage::Treated)
            .expect("selection stage present")
    }

    pub fn treated(&self) -> &StageOutput {
        &self.treatment.output
    }
}

/// Serialized form of a [`DetectionReport`]. The fitted profile lives in a
/// separate CSV referenced by `fitted_profile_ref`; `runtime_ms` is only
/// filled on request so repeated runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub length_m: f64,
    pub estimates: Vec<EventEstimate>,
    #[serde(default)]
    pub orphan_reflections: Vec<usize>,
    #[serde(default)]
    pub naive_magnitudes: Option<Vec<NaiveMagnitude>>,
    pub stage_diagnostics: Vec<StageOutput>,
    pub clusters: Vec<Cluster>,
    pub chosen: Vec<usize>,
    pub combinations: u64,
    #[serde(default)]
    pub narrowed: Vec<usize>,
    pub fitted_profile_ref: Option<String>,
    pub runtime_ms: Option<f64>,
    pub config: DetectConfig,
}

impl DetectionReport {
    pub fn to_file(&self, fitted_profile_ref: Option<String>, record_runtime: bool) -> ReportFile {
        ReportFile {
            length_m: self.length_m,
            estimates: self.estimates.clone(),
            orphan_reflections: self.orphan_reflections.clone(),
            naive_magnitudes: None,
            stage_diagnostics: self.diagnostics.clone(),
            clusters: self.treatment.clusters.clone(),
            chosen: self.treatment.chosen.clone(),
            combinations: self.treatment.combinations,
            narrowed: self.treatment.narrowed.clone(),
            fitted_profile_ref,
            runtime_ms: record_runtime.then(|| self.runtime.as_secs_f64() * 1e3),
            config: self.config.clone(),
        }
    }

    pub fn from_file(file: ReportFile, fitted_profile: FrequencyProfile) -> Result<Self> {
        let output = file
            .stage_diagnostics
            .iter()
            .find(|s| s.stage == Stage::Treated)
            .cloned()
            .ok_or_else(|| Error::InvalidInput("report has no treated stage".into()))?;
        Ok(DetectionReport {
            estimates: file.estimates,
            orphan_reflections: file.orphan_reflections,
            fitted_profile,
            diagnostics: file.stage_diagnostics,
            treatment: Treatment {
                output,
                chosen: file.chosen,
                clusters: file.clusters,
                combinations: file.combinations,
                narrowed: file.narrowed,
            },
            length_m: file.length_m,
            config: file.config,
            runtime: Duration::from_secs_f64(file.runtime_ms.unwrap_or(0.0) / 1e3),
        })
    }
}

/// Runs the configured estimator on one frequency profile of a link of the
/// given length.
pub fn detect(profile: &FrequencyProfile, length_m: f64, config: &DetectConfig) -> Result<DetectionReport> {
    let started = Instant::now();
    profile.validate()?;
    let grid = PositionGrid::for_length(length_m, config.grid_step_m)?;
    let include_reflections = config.mode != Mode::SincLasso;
    let dict = Dictionary::build(
        grid,
        &profile.frequencies,
        &config.constants,
        include_reflections,
        config.intercept,
        length_m,
    )?;
    let y = build_observation(profile)?;
    let mut problem = LassoProblem::new(&dict, y)?
        .with_settings(config.solver)
        .with_ebic_gamma(config.ebic_gamma);

    let mut diagnostics = vec![selection_stage(&mut problem, &config.stages)?];
    if config.mode == Mode::BssLasso {
        let corrections = correction_stage(&mut problem, &diagnostics[0], &config.stages)?;
        diagnostics.extend(corrections);
    }
    let source = diagnostics.last().expect("selection stage").clone();
    let q = dict.q();
    let clusters = find_clusters(
        &source.beta,
        q,
        include_reflections && config.stages.cluster_reflections,
    );
    let treatment = treatment_stage(&mut problem, &source, &clusters, &config.stages)?;
    diagnostics.push(treatment.output.clone());

    let (estimates, orphan_reflections) = build_estimates(&dict, &treatment, config);
    let mut full = treatment.output.beta.clone();
    if dict.has_intercept() {
        full.push(treatment.output.intercept);
    }
    let fitted_profile = dict.to_profile(&dict.apply(&full));

    Ok(DetectionReport {
        estimates,
        orphan_reflections,
        fitted_profile,
        diagnostics,
        treatment,
        length_m,
        config: config.clone(),
        runtime: started.elapsed(),
    })
}

/// Fault estimates, one per treated fault cluster, plus the grid indices of
/// treated reflections that found no fault estimate nearby.
fn build_estimates(
    dict: &Dictionary,
    treatment: &Treatment,
    config: &DetectConfig,
) -> (Vec<EventEstimate>, Vec<usize>) {
    let q = dict.q();
    let beta = &treatment.output.beta;
    let positions = dict.grid().positions();
    let mut estimates: Vec<EventEstimate> = treatment
        .clusters
        .iter()
        .zip(&treatment.chosen)
        .filter(|(c, _)| c.block == Block::Fault)
        .map(|(_, &i)| EventEstimate {
            position_m: positions[i],
            is_reflective: false,
            loss_db: None,
            reflectance_db: None,
            grid_index: i,
            fault_coefficient: beta[i],
            reflection_coefficient: 0.0,
        })
        .collect();
    estimates.sort_by_key(|e| e.grid_index);
    estimates.dedup_by_key(|e| e.grid_index);
    let mut orphans = Vec::new();

    if dict.include_reflections() {
        let max = beta.iter().cloned().fold(0.0, f64::max);
        let threshold = config.reflective_threshold * max;
        for r in 0..q {
            let coefficient = beta[q + r];
            if !(coefficient > threshold) {
                continue;
            }
            let nearest = estimates
                .iter_mut()
                .filter(|e| e.grid_index.abs_diff(r) <= config.reflection_merge_steps)
                .min_by_key(|e| (e.grid_index.abs_diff(r), e.grid_index));
            match nearest {
                Some(e) => {
                    e.is_reflective = true;
                    e.reflection_coefficient += coefficient;
                }
                None => orphans.push(r),
            }
        }
    }
    (estimates, orphans)
}
