//! Real-stacked dictionary of fault and reflection phasors over a position grid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fiber::{fault_atom, reflection_atom, validate_frequencies, FrequencyProfile, PhysicalConstants};

/// Uniform candidate positions `step, 2 step, ..., q step`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid {
    positions: Vec<f64>,
    step: f64,
}

impl PositionGrid {
    /// Grid from one step up to `length`; `q = floor(length / step)`.
    pub fn for_length(length: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && length.is_finite() && length >= step) {
            return Err(Error::InvalidGrid(format!(
                "cannot place a {step} m grid on a {length} m link"
            )));
        }
        let q = (length / step + 1e-9).floor() as usize;
        Ok(PositionGrid { positions: (1..=q).map(|i| i as f64 * step).collect(), step })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let i = (x / self.step).round() as isize - 1;
        i.clamp(0, self.positions.len() as isize - 1) as usize
    }
}

/// Which block a dictionary column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Fault,
    Reflection,
}

/// Column-major `2m x p` matrix `(1/L) [M_B | M_R]` (plus an optional
/// trailing all-ones intercept column). Rows hold the real parts over the
/// frequency grid followed by the imaginary parts.
#[derive(Debug, Clone)]
pub struct Dictionary {
    data: Vec<f64>,
    rows: usize,
    grid: PositionGrid,
    frequencies: Vec<f64>,
    normalization: f64,
    include_reflections: bool,
    has_intercept: bool,
}

impl Dictionary {
    pub fn build(
        grid: PositionGrid,
        frequencies: &[f64],
        constants: &PhysicalConstants,
        include_reflections: bool,
        intercept: bool,
        length: f64,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidGrid("empty position grid".into()));
        }
        validate_frequencies(frequencies)?;
        constants.validate()?;
        let m = frequencies.len();
        let rows = 2 * m;
        let q = grid.len();
        let normalization = 1.0 / length;
        let blocks = if include_reflections { 2 } else { 1 };
        let cols = blocks * q + usize::from(intercept);
        let mut data = vec![0.0; rows * cols];
        data.par_chunks_mut(rows).enumerate().for_each(|(j, column)| {
            if j >= blocks * q {
                column.fill(1.0);
                return;
            }
            let x = grid.positions[j % q];
            let fault = j < q;
            let (re, im) = column.split_at_mut(m);
            for (i, &f) in frequencies.iter().enumerate() {
                let s = if fault {
                    fault_atom(f, x, constants)
                } else {
                    reflection_atom(f, x, constants)
                };
                re[i] = normalization * s.re;
                im[i] = normalization * s.im;
            }
        });
        let dict = Dictionary {
            data,
            rows,
            grid,
            frequencies: frequencies.to_vec(),
            normalization,
            include_reflections,
            has_intercept: intercept,
        };
        if dict.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dictionary has non-finite entries".into()));
        }
        Ok(dict)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Total number of columns, intercept included.
    pub fn cols(&self) -> usize {
        self.data.len() / self.rows
    }

    /// Number of penalized columns (`q` or `2q`).
    pub fn penalized_cols(&self) -> usize {
        self.cols() - usize::from(self.has_intercept)
    }

    pub fn q(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &PositionGrid {
        &self.grid
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn include_reflections(&self) -> bool {
        self.include_reflections
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Block and grid index of a penalized column.
    pub fn column_kind(&self, j: usize) -> Option<(Block, usize)> {
        let q = self.q();
        if j < q {
            Some((Block::Fault, j))
        } else if self.include_reflections && j < 2 * q {
            Some((Block::Reflection, j - q))
        } else {
            None
        }
    }

    /// `M beta` for a coefficient vector over all columns.
    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.cols());
        let mut out = vec![0.0; self.rows];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (o, &m) in out.iter_mut().zip(self.column(j)) {
                    *o += b * m;
                }
            }
        }
        out
    }

    /// `M^T v` over all columns.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        self.data.par_chunks(self.rows).map(|c| dot(c, v)).collect()
    }

    /// Reassembles a stacked real vector into a complex profile on this grid.
    pub fn to_profile(&self, stacked: &[f64]) -> FrequencyProfile {
        FrequencyProfile { frequencies: self.frequencies.clone(), samples: unstack(stacked) }
    }

    /// Writes the matrix as CSV, one row per stacked observation row.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols = self.cols();
        let header: Vec<String> = (0..cols)
            .map(|j| match self.column_kind(j) {
                Some((Block::Fault, i)) => format!("fault_{}", self.grid.positions[i]),
                Some((Block::Reflection, i)) => format!("reflection_{}", self.grid.positions[i]),
                None => "intercept".to_string(),
            })
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..cols).map(|j| self.data[j * self.rows + i].to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `y = [Re S(F); Im S(F)]`.
pub fn build_observation(profile: &FrequencyProfile) -> Result<Vec<f64>> {
    if profile.is_empty() {
        return Err(Error::InvalidInput("empty frequency profile".into()));
    }
    let mut y: Vec<f64> = profile.samples.iter().map(|s| s.re).collect();
    y.extend(profile.samples.iter().map(|s| s.im));
    Ok(y)
}

pub(crate) fn unstack(stacked: &[f64]) -> Vec<num_complex::Complex64> {
    let m = stacked.len() / 2;
    (0..m).map(|i| num_complex::Complex64::new(stacked[i], stacked[m + i])).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
