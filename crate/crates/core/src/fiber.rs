//! Physical model of a fiber link: backscatter profile in distance and its
//! response to a swept subcarrier.
//!
//! The time-domain profile is a sum of attenuated steps (one per event) and
//! Dirac spikes (one per reflective event):
//!
//! ```text
//! P(z) = exp(-2 alpha z) * ( sum_b phi_b [u(z) - u(z - X_b)] + sum_r theta_r delta(z - X_r) )
//! ```
//!
//! and the swept response is `S(f) = int_0^L P(z) A exp(j k z) dz` with
//! `k = 4 pi f n / c`, which has the closed form implemented by
//! [`fault_atom`] and [`reflection_atom`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight, in meters, that turns a level-relative reflectance into a Dirac weight.
pub const REFLECTION_WIDTH_M: f64 = 1.0;

/// Default quadrature step for the numeric transform.
pub const DEFAULT_DZ_M: f64 = 0.25;

/// Largest phase advance `k_max * dz` accepted by the numeric transform.
pub const MAX_PHASE_STEP: f64 = 0.1;

/// A single event on the link. Reflective events also carry a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "position_m")]
    pub position: f64,
    /// Drop of the backscatter level across the event.
    pub loss_db: f64,
    #[serde(default)]
    pub reflectance_db: Option<f64>,
}

impl Event {
    pub fn non_reflective(position: f64, loss_db: f64) -> Self {
        Event { position, loss_db, reflectance_db: None }
    }

    pub fn reflective(position: f64, loss_db: f64, reflectance_db: f64) -> Self {
        Event { position, loss_db, reflectance_db: Some(reflectance_db) }
    }

    pub fn is_reflective(&self) -> bool {
        self.reflectance_db.is_some()
    }

    /// Squared transmission factor `xi^2` across the event.
    pub fn level_factor(&self) -> f64 {
        db_to_level_factor(self.loss_db)
    }
}

/// Ground-truth description of a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberLink {
    #[serde(rename = "length_m")]
    pub length: f64,
    pub events: Vec<Event>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl FiberLink {
    pub fn new(length: f64, events: Vec<Event>) -> Result<Self> {
        let link = FiberLink { length, events, seed: None };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidLink(format!("length must be positive, got {}", self.length)));
        }
        let mut previous = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.position.is_finite() && e.position > 0.0) {
                return Err(Error::InvalidLink(format!("event {i}: position must be positive")));
            }
            if e.position <= previous {
                return Err(Error::InvalidLink(format!(
                    "event {i}: positions must be strictly increasing"
                )));
            }
            if e.position > self.length {
                return Err(Error::InvalidLink(format!(
                    "event {i}: position {} beyond link length {}",
                    e.position, self.length
                )));
            }
            if !(e.loss_db.is_finite() && e.loss_db >= 0.0) {
                return Err(Error::InvalidLink(format!("event {i}: loss_db must be >= 0")));
            }
            if let Some(r) = e.reflectance_db {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::InvalidLink(format!(
                        "event {i}: reflectance_db must be >= 0"
                    )));
                }
            }
            previous = e.position;
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.position).collect()
    }
}

/// Attenuation, group index, light speed and the lumped amplitude `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalConstants {
    /// Field attenuation in 1/m; round-trip power decays as `exp(-2 alpha z)`.
    pub alpha: f64,
    pub group_index: f64,
    pub light_speed: f64,
    pub amplitude_scale: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            alpha: alpha_from_db_per_km(0.2),
            group_index: 1.468,
            light_speed: 299_792_458.0,
            amplitude_scale: 1.0,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.alpha >= 0.0
            && self.group_index >= 1.0
            && self.light_speed > 0.0
            && self.amplitude_scale > 0.0
            && self.amplitude_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid physical constants {self:?}")))
        }
    }

    /// Modulation wavenumber of the round trip, `4 pi f n / c`.
    pub fn wavenumber(&self, frequency: f64) -> f64 {
        4.0 * std::f64::consts::PI * frequency * self.group_index / self.light_speed
    }

    /// Complex exponent `j k - 2 alpha` of the round-trip phasor.
    pub fn exponent(&self, frequency: f64) -> Complex64 {
        Complex64::new(-2.0 * self.alpha, self.wavenumber(frequency))
    }
}

/// Converts a dB/km attenuation figure into the field coefficient used by the model.
pub fn alpha_from_db_per_km(db_per_km: f64) -> f64 {
    db_per_km * std::f64::consts::LN_10 / 10.0 / 1000.0
}

pub fn db_to_level_factor(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn level_factor_to_db(factor: f64) -> f64 {
    -10.0 * factor.log10()
}

/// Step and spike weights of the time-domain profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCoefficients {
    pub phi: Vec<f64>,
    pub theta: Vec<Option<f64>>,
}

impl StepCoefficients {
    pub fn validate(&self) -> Result<()> {
        if self.phi.len() != self.theta.len() {
            return Err(Error::InvalidCoefficients("phi and theta lengths differ".into()));
        }
        if let Some(p) = self.phi.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
            return Err(Error::InvalidCoefficients(format!("phi entry {p} outside [0, 1]")));
        }
        let total: f64 = self.phi.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidCoefficients(format!("phi sums to {total} > 1")));
        }
        Ok(())
    }
}

/// Inverts the magnitude recursion: `phi_b = level_{b-1} (1 - xi_b^2)`, with the
/// level before the first event normalized to one.
///
/// A reflective event gets `theta = level_{b-1} * 10^(R/10) * 1 m`.
pub fn coefficients_from_magnitudes(link: &FiberLink) -> Result<StepCoefficients> {
    link.validate()?;
    let mut level = 1.0;
    let mut phi = Vec::with_capacity(link.events.len());
    let mut theta = Vec::with_capacity(link.events.len());
    for (i, event) in link.events.iter().enumerate() {
        let factor = event.level_factor();
        let step = level * (1.0 - factor);
        if !step.is_finite() || level <= 0.0 {
            return Err(Error::ZeroLevel { index: i });
        }
        phi.push(step);
        theta.push(
            event
                .reflectance_db
                .map(|r| level * 10f64.powf(r / 10.0) * REFLECTION_WIDTH_M),
        );
        level *= factor;
    }
    Ok(StepCoefficients { phi, theta })
}

/// Recovers the linear magnitudes `xi_b = sqrt(1 - phi_b / prod_{j<b} xi_j^2)`.
pub fn magnitudes_from_coefficients(coeffs: &StepCoefficients) -> Result<Vec<f64>> {
    magnitudes_from_steps(&coeffs.phi)
}

pub(crate) fn magnitudes_from_steps(phi: &[f64]) -> Result<Vec<f64>> {
    let mut level = 1.0;
    let mut out = Vec::with_capacity(phi.len());
    for (index, &p) in phi.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidCoefficients(format!("phi[{index}] is not finite")));
        }
        if level <= 0.0 {
            return Err(Error::ZeroLevel { index });
        }
        let radicand = 1.0 - p / level;
        if radicand < 0.0 {
            return Err(Error::NegativeRadicand { index, phi: p, level });
        }
        let xi = radicand.sqrt();
        out.push(xi);
        level *= xi * xi;
    }
    Ok(out)
}

/// Non-reflective phasor `(exp((jk - 2a) X) - 1) / (jk - 2a)`.
pub fn fault_atom(frequency: f64, position: f64, constants: &PhysicalConstants) -> Complex64 {
    let a = constants.exponent(frequency);
    let ax = a * position;
    if ax.norm() < 1e-4 {
        // series of (e^u - 1)/u
        position * (1.0 + ax / 2.0 + ax * ax / 6.0 + ax * ax * ax / 24.0)
    } else {
        (ax.exp() - 1.0) / a
    }
}

/// Reflective phasor `exp((jk - 2a) X)`.
pub fn reflection_atom(frequency: f64, position: f64, constants: &PhysicalConstants) -> Complex64 {
    (constants.exponent(frequency) * position).exp()
}

/// Complex response sampled on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyProfile {
    pub frequencies: Vec<f64>,
    pub samples: Vec<Complex64>,
}

impl FrequencyProfile {
    pub fn new(frequencies: Vec<f64>, samples: Vec<Complex64>) -> Result<Self> {
        let profile = FrequencyProfile { frequencies, samples };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.samples.len() {
            return Err(Error::InvalidInput("frequency and sample counts differ".into()));
        }
        validate_frequencies(&self.frequencies)?;
        if self.samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::InvalidInput("profile contains non-finite samples".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Euclidean norm of the complex samples.
    pub fn norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `||self - other|| / ||other||`.
    pub fn relative_error(&self, reference: &FrequencyProfile) -> f64 {
        let diff: f64 = self
            .samples
            .iter()
            .zip(&reference.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let norm = reference.norm();
        if norm == 0.0 {
            diff
        } else {
            diff / norm
        }
    }
}

pub(crate) fn validate_frequencies(frequencies: &[f64]) -> Result<()> {
    if frequencies.is_empty() {
        return Err(Error::InvalidInput("empty frequency grid".into()));
    }
    if frequencies.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidInput("frequencies must be finite and positive".into()));
    }
    if frequencies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("frequencies must be strictly increasing".into()));
    }
    Ok(())
}

/// Uniform grid `start, start + step, ...` up to and including `stop` (within rounding).
pub fn uniform_frequencies(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start > 0.0 && stop >= start && step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "invalid frequency range [{start}, {stop}] step {step}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

/// Closed-form `S(f)` of a link.
pub fn frequency_response_analytic(
    link: &FiberLink,
    constants: &PhysicalConstants,
    frequencies: &[f64],
) -> Result<FrequencyProfile> {
    let coeffs = coefficients_from_magnitudes(link)?;
    validate_frequencies(frequencies)?;
    let samples = frequencies
        .iter()
        .map(|&f| response_at(link, &coeffs, constants, f))
        .collect();
    Ok(FrequencyProfile { frequencies: frequencies.to_vec(), samples })
}

/// Closed-form `S(f)` at a single frequency; defined for any real `f`,
/// including negative ones.
pub fn analytic_response_at(
    link: &FiberLink,
    constants: &PhysicalConstants,
    frequency: f64,
) -> Result<Complex64> {
    let coeffs = coefficients_from_magnitudes(link)?;
    Ok(response_at(link, &coeffs, constants, frequency))
}

fn response_at(
    link: &FiberLink,
    coeffs: &StepCoefficients,
    constants: &PhysicalConstants,
    f: f64,
) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for ((event, &phi), theta) in link.events.iter().zip(&coeffs.phi).zip(&coeffs.theta) {
        s += phi * fault_atom(f, event.position, constants);
        if let Some(theta) = theta {
            s += theta * reflection_atom(f, event.position, constants);
        }
    }
    s * constants.amplitude_scale
}

/// Trapezoid weight of every node of a non-decreasing grid.
fn trapezoid_weights(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { z[i] - z[i - 1] } else { 0.0 };
            let right = if i + 1 < n { z[i + 1] - z[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Samples `P(z)` on a strictly increasing grid.
///
/// Steps follow `u(0) = 1`, so a node sitting exactly on an event already sees
/// the level after it. Each reflection adds `theta / w` to the node nearest to
/// it, where `w` is that node's trapezoid weight, so quadrature preserves the
/// Dirac mass.
pub fn time_domain_profile(
    link: &FiberLink,
    constants: &PhysicalConstants,
    z_grid: &[f64],
) -> Result<Vec<f64>> {
    if z_grid.is_empty() {
        return Err(Error::InvalidGrid("empty z grid".into()));
    }
    if z_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("z grid must be strictly increasing".into()));
    }
    if z_grid[0] < 0.0 || z_grid[z_grid.len() - 1] > link.length {
        return Err(Error::InvalidGrid("z grid must lie within [0, length]".into()));
    }
    let coeffs = coefficients_from_magnitudes(link)?;
    let mut p: Vec<f64> = z_grid
        .iter()
        .map(|&z| {
            let level: f64 = link
                .events
                .iter()
                .zip(&coeffs.phi)
                .filter(|(e, _)| z < e.position)
                .map(|(_, phi)| phi)
                .sum();
            (-2.0 * constants.alpha * z).exp() * level
        })
        .collect();
    if z_grid.len() > 1 {
        let weights = trapezoid_weights(z_grid);
        for (event, theta) in link.events.iter().zip(&coeffs.theta) {
            if let Some(theta) = theta {
                let i = nearest_index(z_grid, event.position);
                p[i] += (-2.0 * constants.alpha * z_grid[i]).exp() * theta / weights[i];
            }
        }
    }
    Ok(p)
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    let idx = grid.partition_point(|&g| g < x);
    if idx == 0 {
        0
    } else if idx == grid.len() {
        grid.len() - 1
    } else if (x - grid[idx - 1]) <= (grid[idx] - x) {
        idx - 1
    } else {
        idx
    }
}

/// `P(z)` sampled on a non-decreasing grid. A node may be repeated to carry
/// the left and right limits of a jump.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProfile {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

impl SampledProfile {
    pub fn new(z: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if z.len() != p.len() {
            return Err(Error::InvalidGrid("z and P(z) lengths differ".into()));
        }
        if z.is_empty() {
            return Err(Error::InvalidGrid("empty profile".into()));
        }
        if z.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidGrid("z must be non-decreasing".into()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("P(z) contains non-finite values".into()));
        }
        Ok(SampledProfile { z, p })
    }

    /// Samples a link on a uniform `dz` grid over `[0, length]`, with every
    /// event position inserted twice (left and right limit of the step) so the
    /// trapezoid rule integrates the jumps exactly. Spikes land on the copy
    /// with the larger trapezoid weight.
    pub fn from_link(link: &FiberLink, constants: &PhysicalConstants, dz: f64) -> Result<Self> {
        if !(dz.is_finite() && dz > 0.0) {
            return Err(Error::InvalidGrid(format!("dz must be positive, got {dz}")));
        }
        let coeffs = coefficients_from_magnitudes(link)?;
        let n_uniform = (link.length / dz).floor() as usize;
        let mut z = Vec::with_capacity(n_uniform + 2 + 2 * link.events.len());
        let mut p = Vec::with_capacity(z.capacity());

        // level on [0, X_1), [X_1, X_2), ...
        let mut suffix: Vec<f64> = vec![0.0; coeffs.phi.len() + 1];
        for i in (0..coeffs.phi.len()).rev() {
            suffix[i] = suffix[i + 1] + coeffs.phi[i];
        }
        let decay = |z: f64| (-2.0 * constants.alpha * z).exp();

        let mut spikes: Vec<(usize, f64)> = Vec::new();
        let mut next_event = 0;
        let push_event = |z: &mut Vec<f64>,
                              p: &mut Vec<f64>,
                              spikes: &mut Vec<(usize, f64)>,
                              k: usize| {
            let x = link.events[k].position;
            z.push(x);
            p.push(decay(x) * suffix[k]);
            z.push(x);
            p.push(decay(x) * suffix[k + 1]);
            if let Some(theta) = coeffs.theta[k] {
                spikes.push((z.len() - 2, theta));
            }
        };
        for i in 0..=n_uniform {
            let zi = i as f64 * dz;
            if zi > link.length {
                break;
            }
            while next_event < link.events.len() && link.events[next_event].position <= zi {
                push_event(&mut z, &mut p, &mut spikes, next_event);
                next_event += 1;
            }
            if z.last() == Some(&zi) {
                continue;
            }
            z.push(zi);
            p.push(decay(zi) * suffix[next_event]);
        }
        while next_event < link.events.len() {
            push_event(&mut z, &mut p, &mut spikes, next_event);
            next_event += 1;
        }
        if *z.last().unwrap() < link.length {
            z.push(link.length);
            p.push(decay(link.length) * suffix[next_event]);
        }

        let weights = trapezoid_weights(&z);
        for (left, theta) in spikes {
            let node = if weights[left + 1] > weights[left] { left + 1 } else { left };
            p[node] += decay(z[node]) * theta / weights[node];
        }
        SampledProfile::new(z, p)
    }

    fn max_spacing(&self) -> f64 {
        self.z.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Trapezoidal quadrature of `int P(z) A exp(j k z) dz`. The attenuation is
/// already part of the sampled `P(z)`.
pub fn frequency_response_numeric(
    profile: &SampledProfile,
    constants: &PhysicalConstants,
    frequencies: &[f64],
) -> Result<FrequencyProfile> {
    validate_frequencies(frequencies)?;
    let f_max = frequencies[frequencies.len() - 1];
    let phase_step = constants.wavenumber(f_max) * profile.max_spacing();
    if phase_step > MAX_PHASE_STEP {
        return Err(Error::GridTooCoarse { phase_step, limit: MAX_PHASE_STEP });
    }
    let weights = trapezoid_weights(&profile.z);
    let samples = frequencies
        .iter()
        .map(|&f| {
            constants.amplitude_scale
                * trapezoid_phasor_sum(&profile.z, &profile.p, &weights, constants.wavenumber(f))
        })
        .collect();
    Ok(FrequencyProfile { frequencies: frequencies.to_vec(), samples })
}

/// `sum_i w_i p_i exp(j k z_i)` by phasor rotation, re-anchored periodically.
fn trapezoid_phasor_sum(z: &[f64], p: &[f64], w: &[f64], k: f64) -> Complex64 {
    const ANCHOR_EVERY: usize = 2048;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut phasor = Complex64::from_polar(1.0, k * z[0]);
    let mut cached_dz = f64::NAN;
    let mut rotation = Complex64::new(1.0, 0.0);
    for i in 0..z.len() {
        if i > 0 {
            if i % ANCHOR_EVERY == 0 {
                phasor = Complex64::from_polar(1.0, k * z[i]);
            } else {
                let dz = z[i] - z[i - 1];
                if dz != cached_dz {
                    cached_dz = dz;
                    rotation = Complex64::from_polar(1.0, k * dz);
                }
                phasor *= rotation;
            }
        }
        let weight = w[i] * p[i];
        if weight != 0.0 {
            acc += weight * phasor;
        }
    }
    acc
}
