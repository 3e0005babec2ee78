//! Seeded synthetic tables and a noise model that turns labels into
//! prediction-shaped outputs.
//!
//! Randomness comes from `ChaCha8Rng`. Every concern draws from its own
//! stream of the same seed, so changing e.g. the rotation range leaves the
//! structure and separator layout of a seed untouched.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Quad};
use crate::grid_model::{Cell, GridLabel, GridPrediction, Lattice, LogicalTable, COORD_SENTINEL};

const STRUCTURE_STREAM: u64 = 0;
const LAYOUT_STREAM: u64 = 1;
const DISTORTION_STREAM: u64 = 2;

/// Largest accepted curvature amplitude (normalized units).
pub const MAX_CURVE_AMP: f64 = 0.1;

/// Fraction of the image spanned by the undistorted table on each axis.
const TABLE_EXTENT: f64 = 0.5;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Seed of document `index` in a run seeded with `base` (SplitMix64 mix).
pub fn doc_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    /// Inclusive range of cell-row counts.
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    /// Per-attempt probability of merging a block with a neighbor.
    pub merge_prob: f64,
    pub image_w: f64,
    pub image_h: f64,
    /// Maximum separator displacement in pixels.
    pub jitter_px: f64,
    /// Inclusive rotation range in degrees, within [-30, 30].
    pub rotation_deg: (f64, f64),
    /// Amplitude of `y += a * sin(pi * x)` in normalized coordinates.
    pub curve_amp: f64,
    /// Probability that a cell gets no placeholder text.
    pub empty_prob: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            rows: (1, 10),
            cols: (1, 10),
            merge_prob: 0.2,
            image_w: 1000.0,
            image_h: 800.0,
            jitter_px: 4.0,
            rotation_deg: (0.0, 0.0),
            curve_amp: 0.0,
            empty_prob: 0.1,
        }
    }
}

impl SynthParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if self.rows.0 == 0 || self.rows.0 > self.rows.1 || self.cols.0 == 0 || self.cols.0 > self.cols.1 {
            return bad("row/column ranges must be non-empty and start at 1 or more");
        }
        if !(0.0..=1.0).contains(&self.merge_prob) || !(0.0..=1.0).contains(&self.empty_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.image_w > 0.0 && self.image_h > 0.0 && self.image_w.is_finite() && self.image_h.is_finite()) {
            return bad("image size must be positive");
        }
        if !(self.jitter_px >= 0.0 && self.jitter_px.is_finite()) {
            return bad("jitter must be non-negative");
        }
        let (lo, hi) = self.rotation_deg;
        if !(-30.0..=30.0).contains(&lo) || !(-30.0..=30.0).contains(&hi) || lo > hi {
            return bad("rotation range must lie within [-30, 30]");
        }
        if !(self.curve_amp.abs() <= MAX_CURVE_AMP) {
            return bad("curvature amplitude out of range");
        }
        Ok(())
    }
}

type Span = (usize, usize, usize, usize);

fn merge_keeps_lines(cells: &[Span], skip: [usize; 2], line: usize, horizontal: bool) -> bool {
    cells.iter().enumerate().any(|(k, c)| !skip.contains(&k) && if horizontal { c.2 == line } else { c.0 == line })
}

fn merged_structure(r: &mut ChaCha8Rng, rows: usize, cols: usize, merge_prob: f64) -> Vec<Span> {
    let mut cells: Vec<Span> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, i, j, j))).collect();
    for _ in 0..rows * cols {
        let idx = r.random_range(0..cells.len());
        let horizontal = r.random_bool(0.5);
        if !r.random_bool(merge_prob) {
            continue;
        }
        let a = cells[idx];
        let found = cells.iter().position(|b| {
            if horizontal {
                b.2 == a.3 + 1 && b.0 == a.0 && b.1 == a.1
            } else {
                b.0 == a.1 + 1 && b.2 == a.2 && b.3 == a.3
            }
        });
        let Some(k) = found else { continue };
        let b = cells[k];
        // the separator being removed must survive elsewhere
        let line = if horizontal { b.2 } else { b.0 };
        if !merge_keeps_lines(&cells, [idx, k], line, horizontal) {
            continue;
        }
        cells[idx] = if horizontal { (a.0, a.1, a.2, b.3) } else { (a.0, b.1, a.2, a.3) };
        cells.swap_remove(k);
    }
    cells.sort_by_key(|c| (c.0, c.2));
    cells
}

fn separators(r: &mut ChaCha8Rng, count: usize, start: f64, extent: f64, jitter: f64) -> Vec<f64> {
    let step = extent / count as f64;
    let j = jitter.min(0.3 * step);
    (0..=count)
        .map(|k| {
            let base = start + k as f64 * step;
            if k == 0 || k == count || j == 0.0 {
                base
            } else {
                base + r.random_range(-j..=j)
            }
        })
        .collect()
}

/// Generates a valid table. Structure, layout and distortion draw from
/// separate streams, so variants differing only in distortion settings share
/// their logical structure and separator layout.
pub fn generate_table(p: &SynthParams) -> Result<LogicalTable> {
    p.check()?;
    let mut sr = rng(p.seed, STRUCTURE_STREAM);
    let rows = sr.random_range(p.rows.0..=p.rows.1);
    let cols = sr.random_range(p.cols.0..=p.cols.1);
    let spans = merged_structure(&mut sr, rows, cols, p.merge_prob);
    let empty: Vec<bool> = spans.iter().map(|_| sr.random_bool(p.empty_prob)).collect();

    let mut lr = rng(p.seed, LAYOUT_STREAM);
    let margin = (1.0 - TABLE_EXTENT) / 2.0;
    let xs = separators(&mut lr, cols, margin * p.image_w, TABLE_EXTENT * p.image_w, p.jitter_px);
    let ys = separators(&mut lr, rows, margin * p.image_h, TABLE_EXTENT * p.image_h, p.jitter_px);

    let mut dr = rng(p.seed, DISTORTION_STREAM);
    let (lo, hi) = p.rotation_deg;
    let angle = if lo < hi { dr.random_range(lo..=hi) } else { lo }.to_radians();
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = (p.image_w / 2.0, p.image_h / 2.0);
    let point = |i: usize, j: usize| {
        let (x, y) = (xs[j] - cx, ys[i] - cy);
        let xr = cx + x * cos - y * sin;
        let yr = cy + x * sin + y * cos;
        let yc = yr + p.curve_amp * (PI * xr / p.image_w).sin() * p.image_h;
        Point::new(xr, yc)
    };

    let cells = spans
        .iter()
        .zip(&empty)
        .map(|(&(rs, re, cs, ce), &blank)| {
            let cell = Cell::new(rs, re, cs, ce).with_quad(Quad([
                point(rs, cs),
                point(rs, ce + 1),
                point(re + 1, ce + 1),
                point(re + 1, cs),
            ]));
            if blank {
                cell
            } else {
                cell.with_content(format!("r{rs}c{cs}"))
            }
        })
        .collect();
    let table = LogicalTable { rows, cols, image_w: p.image_w, image_h: p.image_h, cells };
    table.validate()?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub seed: u64,
    /// Std of the Gaussian added to normalized coordinates and references.
    pub coord_sigma: f64,
    /// Probability of flipping each edge inside the table's subgrid.
    pub edge_flip_prob: f64,
    /// Half-width of the uniform noise added to row/column scores.
    pub line_prob_noise: f64,
    pub confidence_floor: f64,
    pub confidence_ceiling: f64,
    /// Randomly permute query slots.
    pub shuffle_slots: bool,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            seed: 0,
            coord_sigma: 0.0,
            edge_flip_prob: 0.0,
            line_prob_noise: 0.0,
            confidence_floor: 0.02,
            confidence_ceiling: 0.98,
            shuffle_slots: true,
        }
    }
}

impl NoiseParams {
    /// Binary scores, no noise; slots are still shuffled.
    pub fn exact(seed: u64) -> Self {
        NoiseParams { seed, confidence_floor: 0.0, confidence_ceiling: 1.0, ..Default::default() }
    }

    pub fn check(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.coord_sigma >= 0.0 && self.coord_sigma.is_finite()) {
            return Err(Error::Config("noise: coord_sigma must be non-negative".into()));
        }
        if !unit(self.edge_flip_prob) || !unit(self.confidence_floor) || !unit(self.confidence_ceiling) {
            return Err(Error::Config("noise: probabilities must lie in [0, 1]".into()));
        }
        if !(self.line_prob_noise >= 0.0 && self.line_prob_noise.is_finite()) {
            return Err(Error::Config("noise: line_prob_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Renders a label as a prediction: positives score `confidence_ceiling`,
/// negatives `confidence_floor`. Edge flips draw one uniform per in-table
/// edge in a fixed order, so a higher flip rate on the same seed flips a
/// superset of the edges.
pub fn perturb(label: &GridLabel, n: &NoiseParams) -> Result<GridPrediction> {
    label.check_shape()?;
    n.check()?;
    let (m, nn) = (label.dims.m, label.dims.n);
    let score = |b: bool| if b { n.confidence_ceiling } else { n.confidence_floor };

    let mut prob_rng = rng(n.seed, 0);
    let mut noisy = |b: bool| {
        let mut v = score(b);
        if n.line_prob_noise > 0.0 {
            v += prob_rng.random_range(-n.line_prob_noise..=n.line_prob_noise);
        }
        v.clamp(0.0, 1.0)
    };
    let row_prob: Vec<f64> = label.row_positive.iter().map(|&b| noisy(b)).collect();
    let col_prob: Vec<f64> = label.col_positive.iter().map(|&b| noisy(b)).collect();

    let mut coord_rng = rng(n.seed, 1);
    let mut jitter = |v: f64| {
        let z: f64 = coord_rng.sample(StandardNormal);
        if n.coord_sigma > 0.0 {
            v + n.coord_sigma * z
        } else {
            v
        }
    };
    let mut vertex_x = Lattice::filled(m, nn, COORD_SENTINEL);
    let mut vertex_y = Lattice::filled(m, nn, COORD_SENTINEL);
    for i in 0..m {
        for j in 0..nn {
            if !(label.row_positive[i] && label.col_positive[j]) {
                continue;
            }
            let (x, y) = if *label.vertex_positive.get(i, j) {
                (*label.vertex_x.get(i, j), *label.vertex_y.get(i, j))
            } else {
                (label.col_ref[j].free_coord, label.row_ref[i].free_coord)
            };
            vertex_x.set(i, j, jitter(x));
            vertex_y.set(i, j, jitter(y));
        }
    }
    let row_ref_pred: Vec<f64> = label.row_ref.iter().map(|r| if r.positive { jitter(r.free_coord) } else { r.free_coord }).collect();
    let col_ref_pred: Vec<f64> = label.col_ref.iter().map(|r| if r.positive { jitter(r.free_coord) } else { r.free_coord }).collect();

    let mut flip_rng = rng(n.seed, 2);
    let mut down_edge_prob = Lattice::filled(m, nn, n.confidence_floor);
    let mut right_edge_prob = Lattice::filled(m, nn, n.confidence_floor);
    for i in 0..m {
        for j in 0..nn {
            if !(label.row_positive[i] && label.col_positive[j]) {
                continue;
            }
            if i + 1 < m && label.row_positive[i + 1] {
                let flip = flip_rng.random::<f64>() < n.edge_flip_prob;
                down_edge_prob.set(i, j, score(*label.down_edge.get(i, j) != flip));
            }
            if j + 1 < nn && label.col_positive[j + 1] {
                let flip = flip_rng.random::<f64>() < n.edge_flip_prob;
                right_edge_prob.set(i, j, score(*label.right_edge.get(i, j) != flip));
            }
        }
    }

    let pred = GridPrediction {
        dims: label.dims,
        image_w: label.image_w,
        image_h: label.image_h,
        row_prob,
        col_prob,
        vertex_x,
        vertex_y,
        down_edge_prob,
        right_edge_prob,
        row_ref_pred,
        col_ref_pred,
    };
    if !n.shuffle_slots {
        return Ok(pred);
    }
    let mut perm_rng = rng(n.seed, 3);
    let mut rows: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..nn).collect();
    rows.shuffle(&mut perm_rng);
    cols.shuffle(&mut perm_rng);
    Ok(pred.permute_row_slots(&rows).permute_col_slots(&cols))
}
