//! Random problem generators shared by the solver and treatment checks.
#![allow(dead_code)]

use bss_lasso::pipeline::{Stage, StageOutput};
use bss_lasso::{
    build_observation, frequency_response_analytic, uniform_frequencies, Dictionary, Event, FiberLink,
    PhysicalConstants, PositionGrid,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A small random link, dictionary, and noisy observation. Reflection block
/// and intercept are switched on at random.
pub fn lasso_instance(rng: &mut ChaCha8Rng, max_q: usize) -> (Dictionary, Vec<f64>) {
    let c = PhysicalConstants::default();
    let step = [10.0, 25.0, 50.0, 100.0][rng.random_range(0..4)];
    let q = rng.random_range(2..=max_q);
    let length = step * q as f64 + rng.random_range(0.0..step * 0.99);
    let n_events = rng.random_range(1..=3usize);
    let mut positions: Vec<f64> = (0..n_events - 1).map(|_| rng.random_range(step..length)).collect();
    positions.push(length);
    positions.sort_by(f64::total_cmp);
    positions.dedup_by(|a, b| *a - *b < 1.0);
    let events = positions
        .iter()
        .map(|&x| Event {
            position: x,
            loss_db: rng.random_range(0.5..5.0),
            reflectance_db: rng.random_bool(0.5).then(|| rng.random_range(0.0..20.0)),
        })
        .collect();
    let link = FiberLink::new(length, events).unwrap();
    let m = rng.random_range(8..40);
    let freqs = uniform_frequencies(100.0, 100.0 + 2000.0 * (m - 1) as f64, 2000.0).unwrap();
    let profile = frequency_response_analytic(&link, &c, &freqs).unwrap();
    let mut y = build_observation(&profile).unwrap();
    let noise = rng.random_range(0.0..0.05) * y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for v in &mut y {
        *v += noise * rng.random_range(-1.0..1.0);
    }
    let grid = PositionGrid::for_length(length, step).unwrap();
    let dict = Dictionary::build(grid, &freqs, &c, rng.random_bool(0.5), rng.random_bool(0.3), length).unwrap();
    (dict, y)
}

/// A link with a reflective and a non-reflective event, and a made-up
/// selection with up to three runs spread over both blocks.
pub fn cluster_instance(rng: &mut ChaCha8Rng) -> (Dictionary, Vec<f64>, StageOutput) {
    let c = PhysicalConstants::default();
    let f = uniform_frequencies(100.0, 100_000.0, 2000.0).unwrap();
    let length = rng.random_range(800.0..2000.0);
    let grid = PositionGrid::for_length(length, 10.0).unwrap();
    let q = grid.len();
    let link = FiberLink::new(
        length,
        vec![
            Event::reflective(length * rng.random_range(0.2..0.5), rng.random_range(1.0..4.0), 10.0),
            Event::non_reflective(length, rng.random_range(1.0..4.0)),
        ],
    )
    .unwrap();
    let profile = frequency_response_analytic(&link, &c, &f).unwrap();
    let mut y = build_observation(&profile).unwrap();
    for v in &mut y {
        *v += 1e-3 * rng.random_range(-1.0..1.0);
    }
    let dict = Dictionary::build(grid, &f, &c, true, false, length).unwrap();
    let mut beta = vec![0.0; 2 * q];
    let mut start = rng.random_range(0..q / 4);
    for _ in 0..3 {
        let width = rng.random_range(1..=5);
        let block = if rng.random_bool(0.3) { q } else { 0 };
        for i in start..(start + width).min(q) {
            beta[block + i] = 1.0;
        }
        start += width + rng.random_range(2..q / 4);
        if start >= q {
            break;
        }
    }
    let source = StageOutput {
        stage: Stage::Selection,
        beta,
        intercept: 0.0,
        weights_used: vec![1.0; 2 * q],
        lambda: 1.0,
        ebic: None,
        rss: 0.0,
        nnz: 0,
    };
    (dict, y, source)
}
