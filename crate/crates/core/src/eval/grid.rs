//! Timbre maps over the 2-D embedding plane and straight-line morphs.

use std::thread;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::{probe_notes, roll_step_seconds, PROBE_SECONDS};
use crate::dsp::{mean_energy, spectral_centroid, MelSpectrogram, HOP, SAMPLE_RATE};
use crate::matrix::Matrix;
use crate::mel2mel::Mel2Mel;
use crate::midi::{concat_input, encode_piano_roll};

/// Fraction of the embedding bounding box added on each side of the grid.
pub const GRID_MARGIN: f64 = 0.05;

const PIXELS_PER_BATCH: usize = 32;

/// `176 x T` input of the probe excerpt.
pub fn probe_input() -> Matrix {
    let frames = (PROBE_SECONDS * f64::from(SAMPLE_RATE) / HOP as f64).ceil() as usize;
    concat_input(&encode_piano_roll(&probe_notes(), roll_step_seconds(), frames))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    /// Bounding box of `points` grown by [`GRID_MARGIN`] of its extent on
    /// every side; a zero extent grows by one unit instead.
    pub fn enclosing(points: &[[f64; 2]]) -> Self {
        let span = |axis: usize| {
            let lo = points.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo { (hi - lo) * GRID_MARGIN } else { 1.0 };
            (lo - pad, hi + pad)
        };
        let (x_min, x_max) = span(0);
        let (y_min, y_max) = span(1);
        Self { x_min, x_max, y_min, y_max }
    }

    /// Embedding coordinates at the center of pixel `(row, col)`; rows run
    /// along y and columns along x.
    pub fn pixel_center(&self, resolution: usize, row: usize, col: usize) -> [f64; 2] {
        let n = resolution as f64;
        [
            self.x_min + (col as f64 + 0.5) * (self.x_max - self.x_min) / n,
            self.y_min + (row as f64 + 0.5) * (self.y_max - self.y_min) / n,
        ]
    }

    /// The `(row, col)` pixel containing `point`, clamped to the grid.
    pub fn pixel_of(&self, resolution: usize, point: [f64; 2]) -> (usize, usize) {
        let cell = |v: f64, lo: f64, hi: f64| {
            let i = ((v - lo) / (hi - lo) * resolution as f64).floor();
            (i.max(0.0) as usize).min(resolution - 1)
        };
        (cell(point[1], self.y_min, self.y_max), cell(point[0], self.x_min, self.x_max))
    }
}

/// A learned instrument located on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub instrument: usize,
    pub coords: [f64; 2],
    pub pixel: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    pub resolution: usize,
    pub bounds: GridBounds,
    /// Spectral centroid in Hz, `resolution x resolution`.
    pub centroid: Matrix,
    /// Mean energy in dB, `resolution x resolution`.
    pub energy: Matrix,
    pub instruments: Vec<GridPoint>,
}

fn pixel_stats(model: &Mel2Mel, input: &Matrix, points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, EvalError> {
    Ok(model
        .predict_batch(input, points)?
        .iter()
        .map(|mel| {
            let linear = MelSpectrogram::from_compressed(mel);
            (spectral_centroid(&linear), mean_energy(&linear))
        })
        .collect())
}

/// Spectral centroid and mean energy of the prediction at every pixel of a
/// `resolution x resolution` grid around the learned embeddings.
pub fn embedding_grid(model: &Mel2Mel, resolution: usize, probe: &Matrix) -> Result<EmbeddingGrid, EvalError> {
    let table = model.embedding_table();
    if table.cols() != 2 {
        return Err(EvalError::EmbeddingDim { dim: table.cols() });
    }
    if resolution == 0 {
        return Err(EvalError::Resolution);
    }
    let learned: Vec<[f64; 2]> = (0..table.rows()).map(|i| [table.get(i, 0), table.get(i, 1)]).collect();
    let bounds = GridBounds::enclosing(&learned);
    let pixels: Vec<Vec<f64>> = (0..resolution * resolution)
        .map(|p| bounds.pixel_center(resolution, p / resolution, p % resolution).to_vec())
        .collect();
    let batches: Vec<&[Vec<f64>]> = pixels.chunks(PIXELS_PER_BATCH).collect();
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(batches.len());
    let results: Vec<Result<Vec<(usize, Vec<(f64, f64)>)>, EvalError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let batches = &batches;
                s.spawn(move || {
                    (w..batches.len())
                        .step_by(workers)
                        .map(|b| Ok((b, pixel_stats(model, probe, batches[b])?)))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("grid worker panicked")).collect()
    });
    let mut centroid = Matrix::zeros(resolution, resolution);
    let mut energy = Matrix::zeros(resolution, resolution);
    for worker in results {
        for (b, stats) in worker? {
            for (i, (c, e)) in stats.into_iter().enumerate() {
                let p = b * PIXELS_PER_BATCH + i;
                centroid.set(p / resolution, p % resolution, c);
                energy.set(p / resolution, p % resolution, e);
            }
        }
    }
    let instruments = learned
        .iter()
        .enumerate()
        .map(|(instrument, &coords)| GridPoint {
            instrument,
            coords,
            pixel: bounds.pixel_of(resolution, coords),
        })
        .collect();
    Ok(EmbeddingGrid {
        resolution,
        bounds,
        centroid,
        energy,
        instruments,
    })
}

/// One point on a morphing path.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphStep {
    pub lambda: f64,
    pub point: Vec<f64>,
    /// `80 x T` compressed Mel prediction.
    pub mel: Matrix,
}

/// Predictions at `(1 - λ) a + λ b` for `steps` evenly spaced `λ` in `[0, 1]`.
pub fn morph_path(model: &Mel2Mel, input: &Matrix, a: &[f64], b: &[f64], steps: usize) -> Result<Vec<MorphStep>, EvalError> {
    if steps < 2 {
        return Err(EvalError::TooFewSteps(steps));
    }
    (0..steps)
        .map(|i| {
            let lambda = i as f64 / (steps - 1) as f64;
            let point: Vec<f64> = a.iter().zip(b).map(|(&p, &q)| (1.0 - lambda) * p + lambda * q).collect();
            let mel = model.predict(input, &point)?;
            Ok(MorphStep { lambda, point, mel })
        })
        .collect()
}
