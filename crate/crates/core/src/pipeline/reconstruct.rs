//! Magnitude reconstruction by grid search over the forward model, and the
//! naive inversion of the treated coefficients it replaces.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DetectionReport;
use crate::error::{Error, Result};
use crate::fiber::{
    db_to_level_factor, fault_atom, level_factor_to_db, reflection_atom, FrequencyProfile, REFLECTION_WIDTH_M,
};

/// What candidate spectra are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructTarget {
    /// The detector's fitted profile `M beta`.
    Fitted,
    /// The measured profile.
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructSettings {
    pub target: ReconstructTarget,
    pub loss_max_db: f64,
    pub loss_coarse_db: f64,
    pub loss_fine_db: f64,
    /// Half-width of the fine window around the coarse winner.
    pub fine_window_db: f64,
    pub reflectance_max_db: f64,
    pub reflectance_step_db: f64,
    /// Joint lattice points above which a pass falls back to coordinate
    /// search.
    pub exhaustive_cap: u64,
    /// Coordinate sweeps per pass, used only past the cap.
    pub max_sweeps: usize,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        ReconstructSettings {
            target: ReconstructTarget::Fitted,
            loss_max_db: 5.0,
            loss_coarse_db: 0.5,
            loss_fine_db: 0.1,
            fine_window_db: 0.5,
            reflectance_max_db: 20.0,
            reflectance_step_db: 2.0,
            exhaustive_cap: 1_000_000,
            max_sweeps: 20,
        }
    }
}

/// Grid `start, start + step, ...` up to `stop`, snapped to multiples of
/// `step` so values print cleanly.
fn lattice(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let first = (start / step - 1e-9).ceil() as i64;
    let last = (stop / step + 1e-9).floor() as i64;
    (first.max(0)..=last).map(|i| i as f64 * step).collect()
}

/// The l2 score as a quadratic form in the step and spike weights, which the
/// spectrum is linear in. Columns are `[fault_0, refl_0, fault_1, ...]`.
struct Candidate {
    gram: Vec<Vec<f64>>,
    cross: Vec<f64>,
    target_norm: f64,
}

impl Candidate {
    fn new(atoms: &[Vec<Complex64>], target: &[Complex64], scale: f64) -> Self {
        let gram = atoms
            .iter()
            .map(|a| atoms.iter().map(|b| scale * scale * a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum::<f64>()).collect())
            .collect();
        let cross = atoms.iter().map(|a| scale * a.iter().zip(target).map(|(x, t)| (x * t.conj()).re).sum::<f64>()).collect();
        Candidate { gram, cross, target_norm: target.iter().map(|t| t.norm_sqr()).sum() }
    }

    /// Squared l2 distance between the target and the spectrum of the given
    /// magnitudes.
    fn score(&self, loss_db: &[f64], reflectance_db: &[Option<f64>]) -> f64 {
        let mut level = 1.0;
        let mut w = Vec::with_capacity(2 * loss_db.len());
        for (&loss, r) in loss_db.iter().zip(reflectance_db) {
            let factor = db_to_level_factor(loss);
            w.push(level * (1.0 - factor));
            w.push(r.map_or(0.0, |r| level * 10f64.powf(r / 10.0) * REFLECTION_WIDTH_M));
            level *= factor;
        }
        let mut total = self.target_norm;
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            total -= 2.0 * wi * self.cross[i];
            total += wi * wi * self.gram[i][i];
            for j in i + 1..w.len() {
                total += 2.0 * wi * w[j] * self.gram[i][j];
            }
        }
        total.max(0.0)
    }
}

/// The magnitudes being searched, one option list per free value.
struct Axes {
    /// `(estimate, is_reflectance)` for each axis.
    slots: Vec<(usize, bool)>,
    options: Vec<Vec<f64>>,
}

impl Axes {
    fn set(&self, axis: usize, value: f64, loss: &mut [f64], refl: &mut [Option<f64>]) {
        match self.slots[axis] {
            (b, false) => loss[b] = value,
            (b, true) => refl[b] = Some(value),
        }
    }

    fn get(&self, axis: usize, loss: &[f64], refl: &[Option<f64>]) -> f64 {
        match self.slots[axis] {
            (b, false) => loss[b],
            (b, true) => refl[b].unwrap_or(0.0),
        }
    }

    fn combinations(&self) -> u64 {
        self.options.iter().try_fold(1u64, |acc, o| acc.checked_mul(o.len() as u64)).unwrap_or(u64::MAX)
    }
}

/// Fills `loss_db` (and `reflectance_db` for reflective estimates) by grid
/// search: a coarse pass over the full ranges, then a fine pass on losses
/// within a window around the coarse winner. Each pass scores every joint
/// lattice point when there are at most `exhaustive_cap` of them; larger
/// passes use coordinate search from the better of a zero start and the
/// naive magnitudes.
///
/// `observation` is needed only when the target is the measured profile.
pub fn reconstruct_magnitudes(
    report: &DetectionReport,
    observation: Option<&FrequencyProfile>,
    settings: &ReconstructSettings,
) -> Result<DetectionReport> {
    let target = match settings.target {
        ReconstructTarget::Fitted => &report.fitted_profile,
        ReconstructTarget::Observation => observation
            .ok_or_else(|| Error::InvalidInput("reconstruction against the observation needs a profile".into()))?,
    };
    if target.frequencies != report.fitted_profile.frequencies {
        return Err(Error::InvalidInput("observation grid differs from the report's".into()));
    }
    if !(settings.loss_coarse_db > 0.0 && settings.loss_fine_db > 0.0 && settings.reflectance_step_db > 0.0) {
        return Err(Error::InvalidInput("reconstruction steps must be positive".into()));
    }
    let mut out = report.clone();
    if out.estimates.is_empty() {
        return Ok(out);
    }
    let constants = &report.config.constants;
    let freqs = &target.frequencies;
    let atoms: Vec<Vec<Complex64>> = out
        .estimates
        .iter()
        .flat_map(|e| {
            let fault = freqs.iter().map(|&f| fault_atom(f, e.position_m, constants)).collect();
            let spike = if e.is_reflective {
                freqs.iter().map(|&f| reflection_atom(f, e.position_m, constants)).collect()
            } else {
                vec![Complex64::new(0.0, 0.0); freqs.len()]
            };
            [fault, spike]
        })
        .collect();
    let candidate = Candidate::new(&atoms, &target.samples, constants.amplitude_scale);

    let n = out.estimates.len();
    let coarse_loss = lattice(0.0, settings.loss_max_db, settings.loss_coarse_db);
    let coarse_refl = lattice(0.0, settings.reflectance_max_db, settings.reflectance_step_db);
    let mut slots = Vec::new();
    let mut options = Vec::new();
    for (b, e) in out.estimates.iter().enumerate() {
        slots.push((b, false));
        options.push(coarse_loss.clone());
        if e.is_reflective {
            slots.push((b, true));
            options.push(coarse_refl.clone());
        }
    }
    let mut axes = Axes { slots, options };
    let mut loss = vec![coarse_loss[0]; n];
    let mut refl: Vec<Option<f64>> =
        out.estimates.iter().map(|e| e.is_reflective.then_some(coarse_refl[0])).collect();

    let naive = naive_magnitudes(report);
    let start = |axes: &Axes| -> (Vec<f64>, Vec<Option<f64>>) {
        let mut l = vec![0.0; n];
        let mut r: Vec<Option<f64>> = out.estimates.iter().map(|e| e.is_reflective.then_some(0.0)).collect();
        for (axis, &(b, is_refl)) in axes.slots.iter().enumerate() {
            let guess = match naive[b] {
                NaiveMagnitude::Finite { loss_db, reflectance_db } => {
                    if is_refl { reflectance_db.unwrap_or(0.0) } else { loss_db }
                }
                _ => 0.0,
            };
            let snapped = axes.options[axis]
                .iter()
                .copied()
                .min_by(|x, y| (x - guess).abs().total_cmp(&(y - guess).abs()))
                .unwrap_or(0.0);
            axes.set(axis, snapped, &mut l, &mut r);
        }
        (l, r)
    };

    // coarse pass: losses and reflectances on their full lattices
    search(&candidate, &axes, &mut loss, &mut refl, start(&axes), settings);

    // fine pass: losses only, each within its window around the coarse winner
    for axis in 0..axes.slots.len() {
        let (b, is_refl) = axes.slots[axis];
        axes.options[axis] = if is_refl {
            vec![refl[b].unwrap_or(0.0)]
        } else {
            lattice(
                (loss[b] - settings.fine_window_db).max(0.0),
                (loss[b] + settings.fine_window_db).min(settings.loss_max_db),
                settings.loss_fine_db,
            )
        };
    }
    search(&candidate, &axes, &mut loss, &mut refl, start(&axes), settings);

    for ((estimate, l), r) in out.estimates.iter_mut().zip(loss).zip(refl) {
        estimate.loss_db = Some(l);
        estimate.reflectance_db = r;
    }
    Ok(out)
}

/// One pass. `loss`/`refl` hold the zero start on entry and the winner on
/// exit; `guess` is the alternative start for coordinate search.
fn search(
    candidate: &Candidate,
    axes: &Axes,
    loss: &mut Vec<f64>,
    refl: &mut Vec<Option<f64>>,
    guess: (Vec<f64>, Vec<Option<f64>>),
    settings: &ReconstructSettings,
) {
    if axes.combinations() <= settings.exhaustive_cap {
        exhaustive(candidate, axes, loss, refl);
        return;
    }
    for axis in 0..axes.slots.len() {
        let first = axes.options[axis][0];
        axes.set(axis, first, loss, refl);
    }
    let from_zero = coordinate_search(candidate, axes, loss, refl, settings.max_sweeps);
    let (mut l, mut r) = guess;
    let from_guess = coordinate_search(candidate, axes, &mut l, &mut r, settings.max_sweeps);
    if from_guess < from_zero {
        *loss = l;
        *refl = r;
    }
}

/// Scores every joint lattice point, keeping the first minimum in odometer
/// order.
fn exhaustive(candidate: &Candidate, axes: &Axes, loss: &mut [f64], refl: &mut [Option<f64>]) {
    let k = axes.slots.len();
    let mut digits = vec![0usize; k];
    let (mut l, mut r) = (loss.to_vec(), refl.to_vec());
    for axis in 0..k {
        axes.set(axis, axes.options[axis][0], &mut l, &mut r);
    }
    let mut best = f64::INFINITY;
    loop {
        let score = candidate.score(&l, &r);
        if score < best {
            best = score;
            loss.copy_from_slice(&l);
            refl.copy_from_slice(&r);
        }
        let mut axis = k;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            digits[axis] += 1;
            if digits[axis] < axes.options[axis].len() {
                axes.set(axis, axes.options[axis][digits[axis]], &mut l, &mut r);
                break;
            }
            digits[axis] = 0;
            axes.set(axis, axes.options[axis][0], &mut l, &mut r);
        }
    }
}

/// Cyclic search, one value at a time, keeping the first minimum on ties.
/// Returns the final score.
fn coordinate_search(
    candidate: &Candidate,
    axes: &Axes,
    loss: &mut [f64],
    refl: &mut [Option<f64>],
    max_sweeps: usize,
) -> f64 {
    let mut best = candidate.score(loss, refl);
    for _ in 0..max_sweeps {
        let mut changed = false;
        for axis in 0..axes.slots.len() {
            let start = axes.get(axis, loss, refl);
            for &value in &axes.options[axis] {
                let kept = axes.get(axis, loss, refl);
                axes.set(axis, value, loss, refl);
                let score = candidate.score(loss, refl);
                if score < best {
                    best = score;
                } else {
                    axes.set(axis, kept, loss, refl);
                }
            }
            changed |= axes.get(axis, loss, refl) != start;
        }
        if !changed {
            break;
        }
    }
    best
}

/// Outcome of inverting one treated fault coefficient directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NaiveMagnitude {
    Finite { loss_db: f64, reflectance_db: Option<f64> },
    /// `1 - phi / level < 0`: the step exceeds the remaining level.
    NegativeRadicand,
    /// The running level vanished at an earlier event.
    ZeroLevel,
}

impl NaiveMagnitude {
    pub fn loss_db(&self) -> f64 {
        match self {
            NaiveMagnitude::Finite { loss_db, .. } => *loss_db,
            _ => f64::INFINITY,
        }
    }
}

/// Inverts the treated coefficients of each estimate through the magnitude
/// recursion, without any model fit. Kept for comparison with
/// [`reconstruct_magnitudes`].
pub fn naive_magnitudes(report: &DetectionReport) -> Vec<NaiveMagnitude> {
    let scale = report.length_m * report.config.constants.amplitude_scale;
    let mut level = 1.0f64;
    let mut broken = false;
    report
        .estimates
        .iter()
        .map(|e| {
            if broken || level <= 0.0 {
                broken = true;
                return NaiveMagnitude::ZeroLevel;
            }
            let phi = e.fault_coefficient / scale;
            let radicand = 1.0 - phi / level;
            if radicand < 0.0 {
                broken = true;
                return NaiveMagnitude::NegativeRadicand;
            }
            let reflectance_db = e.is_reflective.then(|| {
                let theta = e.reflection_coefficient / scale;
                10.0 * (theta / (level * REFLECTION_WIDTH_M)).log10()
            });
            let before = level;
            level *= radicand;
            if radicand == 0.0 {
                broken = true;
            }
            NaiveMagnitude::Finite { loss_db: level_factor_to_db(level / before), reflectance_db }
        })
        .collect()
}
