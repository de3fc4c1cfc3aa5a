//! Randomized benches of simulated links with a reproducible on-disk
//! manifest.
//!
//! Every link draws from its own ChaCha8 stream keyed by `(seed, index)`, so a
//! single link can be regenerated without the others and generation order
//! does not matter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::{
    frequency_response_numeric, uniform_frequencies, Event, FiberLink, FrequencyProfile, PhysicalConstants,
    SampledProfile, DEFAULT_DZ_M,
};
use crate::io::{load_profile, profile_to_string, write_atomic};

pub const MANIFEST_FILE: &str = "bench.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub n_links: usize,
    pub n_faults: usize,
    pub length_range_m: [f64; 2],
    /// Lower bound for the position of faults other than the last one.
    pub fault_floor_m: f64,
    pub min_spacing_m: f64,
    pub reflection_probability: f64,
    pub loss_range_db: [f64; 2],
    pub reflectance_max_db: f64,
    pub seed: u64,
    pub frequency_start_hz: f64,
    pub frequency_stop_hz: f64,
    pub frequency_step_hz: f64,
    pub constants: PhysicalConstants,
    /// Quadrature step of the numeric transform.
    pub dz_m: f64,
    /// Standard deviation of additive complex Gaussian noise, per component.
    #[serde(default)]
    pub noise_std: Option<f64>,
    pub max_retries: usize,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            n_links: 100,
            n_faults: 1,
            length_range_m: [2_000.0, 15_000.0],
            fault_floor_m: 2_000.0,
            min_spacing_m: 10.0,
            reflection_probability: 0.5,
            loss_range_db: [1.0, 5.0],
            reflectance_max_db: 20.0,
            seed: 0,
            frequency_start_hz: 100.0,
            frequency_stop_hz: 100_000.0,
            frequency_step_hz: 100.0,
            constants: PhysicalConstants::default(),
            dz_m: DEFAULT_DZ_M,
            noise_std: None,
            max_retries: 10_000,
            extra: BTreeMap::new(),
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("bench spec: {msg}")));
        let [lo, hi] = self.length_range_m;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("length range must satisfy 0 < min <= max");
        }
        if self.n_faults == 0 {
            return bad("n_faults must be at least 1");
        }
        // the default floor equals the shortest length; such links are
        // rejected by the spacing rule when extra faults cannot fit
        if !(self.fault_floor_m > 0.0 && self.fault_floor_m <= lo) && self.n_faults > 1 {
            return bad("fault floor must lie in (0, min length]");
        }
        if !(0.0..=1.0).contains(&self.reflection_probability) {
            return bad("reflection probability must lie in [0, 1]");
        }
        let [a, b] = self.loss_range_db;
        if !(a >= 0.0 && b >= a && b.is_finite()) {
            return bad("loss range must satisfy 0 <= min <= max");
        }
        if !(self.reflectance_max_db > 0.0 && self.reflectance_max_db.is_finite()) {
            return bad("reflectance max must be positive");
        }
        if !(self.min_spacing_m >= 0.0 && self.dz_m > 0.0) {
            return bad("spacing must be >= 0 and dz > 0");
        }
        if let Some(s) = self.noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("noise std must be finite and >= 0");
            }
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        self.constants.validate()?;
        self.frequencies().map(|_| ())
    }

    pub fn frequencies(&self) -> Result<Vec<f64>> {
        uniform_frequencies(self.frequency_start_hz, self.frequency_stop_hz, self.frequency_step_hz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchLink {
    pub index: usize,
    pub link: FiberLink,
    pub profile: FrequencyProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bench {
    pub spec: BenchSpec,
    pub links: Vec<BenchLink>,
}

fn link_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws the ground truth of link `index`. Draws that violate the spacing
/// rule are rejected whole, length included.
pub fn draw_link(spec: &BenchSpec, index: usize) -> Result<FiberLink> {
    let mut rng = link_rng(spec.seed, index);
    draw_with(spec, index, &mut rng)
}

fn draw_with(spec: &BenchSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<FiberLink> {
    let [lo, hi] = spec.length_range_m;
    for _ in 0..spec.max_retries {
        let length = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut positions: Vec<f64> = (1..spec.n_faults)
            .map(|_| {
                if length > spec.fault_floor_m {
                    rng.random_range(spec.fault_floor_m..length)
                } else {
                    spec.fault_floor_m
                }
            })
            .collect();
        positions.push(length);
        positions.sort_by(f64::total_cmp);
        let spaced = positions[0] > 0.0 && positions.windows(2).all(|w| w[1] - w[0] >= spec.min_spacing_m.max(f64::MIN_POSITIVE));
        if !spaced {
            continue;
        }
        let [loss_lo, loss_hi] = spec.loss_range_db;
        let events = positions
            .into_iter()
            .map(|position| {
                let reflective = rng.random_bool(spec.reflection_probability);
                let loss_db = if loss_hi > loss_lo { rng.random_range(loss_lo..=loss_hi) } else { loss_lo };
                let reflectance_db = reflective.then(|| spec.reflectance_max_db * (1.0 - rng.random::<f64>()));
                Event { position, loss_db, reflectance_db }
            })
            .collect();
        let link = FiberLink { length, events, seed: Some(spec.seed) };
        link.validate()?;
        return Ok(link);
    }
    Err(Error::SpacingRetries { link: index, retries: spec.max_retries })
}

/// Frequency profile of a ground-truth link, computed by numeric integration
/// of its sampled time-domain profile.
pub fn simulate_profile(link: &FiberLink, spec: &BenchSpec, frequencies: &[f64]) -> Result<FrequencyProfile> {
    let sampled = SampledProfile::from_link(link, &spec.constants, spec.dz_m)?;
    frequency_response_numeric(&sampled, &spec.constants, frequencies)
}

fn generate_link(spec: &BenchSpec, index: usize, frequencies: &[f64]) -> Result<BenchLink> {
    let mut rng = link_rng(spec.seed, index);
    let link = draw_with(spec, index, &mut rng)?;
    let mut profile = simulate_profile(&link, spec, frequencies)?;
    if let Some(std) = spec.noise_std.filter(|&s| s > 0.0) {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for s in &mut profile.samples {
            *s += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(BenchLink { index, link, profile })
}

pub fn generate_bench(spec: &BenchSpec) -> Result<Bench> {
    spec.validate()?;
    let frequencies = spec.frequencies()?;
    let links = (0..spec.n_links)
        .into_par_iter()
        .map(|i| generate_link(spec, i, &frequencies))
        .collect::<Result<Vec<_>>>()?;
    Ok(Bench { spec: spec.clone(), links })
}

pub fn profile_file_name(index: usize) -> String {
    format!("link_{index}.csv")
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLink {
    index: usize,
    profile: String,
    link: FiberLink,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: BenchSpec,
    links: Vec<ManifestLink>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

/// Writes `bench.json` and one profile CSV per link into `dir`.
pub fn save_bench(bench: &Bench, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        spec: bench.spec.clone(),
        links: bench
            .links
            .iter()
            .map(|l| ManifestLink {
                index: l.index,
                profile: profile_file_name(l.index),
                link: l.link.clone(),
                extra: BTreeMap::new(),
            })
            .collect(),
        extra: BTreeMap::new(),
    };
    for l in &bench.links {
        let path = dir.join(profile_file_name(l.index));
        write_atomic(&path, profile_to_string(&l.profile).as_bytes())?;
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
}

/// Reads a bench directory written by [`save_bench`]. Unknown manifest fields
/// are accepted with a warning.
pub fn load_bench(dir: &Path) -> Result<Bench> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::schema(&path, e.to_string()))?;
    for key in manifest.extra.keys().chain(manifest.spec.extra.keys()) {
        log::warn!("{}: ignoring unknown field '{key}'", path.display());
    }
    manifest.spec.validate().map_err(|e| Error::schema(&path, format!("spec: {e}")))?;
    let mut links = Vec::with_capacity(manifest.links.len());
    for (i, entry) in manifest.links.into_iter().enumerate() {
        for key in entry.extra.keys() {
            log::warn!("{}: links[{i}]: ignoring unknown field '{key}'", path.display());
        }
        entry
            .link
            .validate()
            .map_err(|e| Error::schema(&path, format!("links[{i}].link: {e}")))?;
        if Path::new(&entry.profile).components().count() != 1 {
            return Err(Error::schema(&path, format!("links[{i}].profile must be a bare file name")));
        }
        let profile = load_profile(&dir.join(&entry.profile))?;
        links.push(BenchLink { index: entry.index, link: entry.link, profile });
    }
    Ok(Bench { spec: manifest.spec, links })
}
