//! A small raster plotter: heatmaps with markers and line charts, saved as PNG.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::EvalError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

const WHITE: Rgb = Rgb(255, 255, 255);
const BLACK: Rgb = Rgb(0, 0, 0);
const GRID_GREY: Rgb = Rgb(220, 220, 220);
const PALETTE: [Rgb; 8] = [
    Rgb(31, 119, 180),
    Rgb(255, 127, 14),
    Rgb(44, 160, 44),
    Rgb(214, 39, 40),
    Rgb(148, 103, 189),
    Rgb(140, 86, 75),
    Rgb(227, 119, 194),
    Rgb(127, 127, 127),
];
/// Dark blue through teal and green to yellow.
const COLORMAP: [Rgb; 5] = [Rgb(68, 1, 84), Rgb(59, 82, 139), Rgb(33, 145, 140), Rgb(94, 201, 98), Rgb(253, 231, 37)];

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pixels: Vec<Rgb>,
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn put(&mut self, x: isize, y: isize, color: Rgb) {
        if (0..self.width as isize).contains(&x) && (0..self.height as isize).contains(&y) {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    fn line(&mut self, (x0, y0): (isize, isize), (x1, y1): (isize, isize), color: Rgb) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            self.put(x, y, color);
        }
    }

    /// Encodes as an 8-bit RGB PNG.
    pub fn encode_png<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut encoder = png::Encoder::new(w, self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        let bytes: Vec<u8> = self.pixels.iter().flat_map(|p| [p.0, p.1, p.2]).collect();
        writer.write_image_data(&bytes)?;
        Ok(())
    }
}

pub fn write_png(path: impl AsRef<Path>, raster: &Raster) -> Result<(), EvalError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    raster.encode_png(BufWriter::new(file))
}

fn colormap(t: f64) -> Rgb {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (COLORMAP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(COLORMAP.len() - 2);
    let f = pos - i as f64;
    let mix = |a: u8, b: u8| (f64::from(a) + f * (f64::from(b) - f64::from(a))).round() as u8;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    Rgb(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// One pixel per matrix cell with row 0 at the bottom, scaled to the finite
/// value range; each marker `(row, col)` gets a white cross.
pub fn heatmap_png(values: &Matrix, markers: &[(usize, usize)]) -> Raster {
    let (rows, cols) = (values.rows(), values.cols());
    let finite = values.as_slice().iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut raster = Raster::new(cols, rows, BLACK);
    for r in 0..rows {
        for c in 0..cols {
            raster.put(c as isize, (rows - 1 - r) as isize, colormap((values.get(r, c) - lo) / range));
        }
    }
    for &(r, c) in markers {
        let (x, y) = (c as isize, (rows - 1 - r) as isize);
        for d in -3..=3 {
            raster.put(x + d, y, WHITE);
            raster.put(x, y + d, WHITE);
        }
    }
    raster
}

/// Line chart of equally spaced series over `y_range`, with faint gridlines at
/// every x sample and at tenths of the y range.
pub fn line_plot_png(series: &[Vec<f64>], y_range: (f64, f64), width: usize, height: usize) -> Raster {
    let mut raster = Raster::new(width, height, WHITE);
    let margin = 20isize;
    let (w, h) = (width as isize - 2 * margin, height as isize - 2 * margin);
    let points = series.iter().map(Vec::len).max().unwrap_or(0);
    let x_at = |i: usize| margin + if points > 1 { i as isize * w / (points as isize - 1) } else { w / 2 };
    let y_at = |v: f64| {
        let t = ((v - y_range.0) / (y_range.1 - y_range.0)).clamp(0.0, 1.0);
        margin + h - (t * h as f64).round() as isize
    };
    for i in 0..points {
        raster.line((x_at(i), margin), (x_at(i), margin + h), GRID_GREY);
    }
    for tenth in 0..=10 {
        let y = margin + h * tenth / 10;
        raster.line((margin, y), (margin + w, y), GRID_GREY);
    }
    raster.line((margin, margin), (margin, margin + h), BLACK);
    raster.line((margin, margin + h), (margin + w, margin + h), BLACK);
    for (s, values) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let coords: Vec<(isize, isize)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| (x_at(i), y_at(v)))
            .collect();
        for pair in coords.windows(2) {
            raster.line(pair[0], pair[1], color);
        }
        for &(x, y) in &coords {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    raster.put(x + dx, y + dy, color);
                }
            }
        }
    }
    raster
}
