//! Training/evaluation targets derived from a [`LogicalTable`]: the grid
//! lattice, per-line reference points, and the fixed proposal lattice used by
//! query selection.

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::geometry::Point;
use crate::grid_model::{GridDims, GridLabel, Lattice, LogicalTable, ReferencePoint, COORD_SENTINEL};

/// Normalized position of the frozen reference axis (a quarter of the image).
pub const ANCHOR_TAU: f64 = 0.25;

/// Proposals kept after query selection.
pub const TOP_K_PROPOSALS: usize = 80;

/// Builds the padded lattice for `t`. Rows `0..=R` and columns `0..=C` are
/// positive; everything beyond is padding.
pub fn build_grid_label(t: &LogicalTable, dims: GridDims) -> Result<GridLabel> {
    let dims = GridDims::new(dims.m, dims.n)?;
    t.validate()?;
    if !dims.fits(t.rows, t.cols) {
        return Err(Error::DimsTooSmall { rows: t.rows, cols: t.cols, m: dims.m, n: dims.n });
    }
    if let Some(k) = t.cells.iter().position(|c| c.quad.is_none()) {
        return Err(Error::MissingGeometry(k));
    }
    let (m, n) = (dims.m, dims.n);

    // coincident corners (T-junctions) are averaged
    let mut sum = Lattice::filled(m, n, (0.0f64, 0.0f64, 0u32));
    let mut down_edge = Lattice::filled(m, n, false);
    let mut right_edge = Lattice::filled(m, n, false);
    for c in &t.cells {
        let q = c.quad.expect("checked above");
        let corners = [
            (c.row_start, c.col_start, q.top_left()),
            (c.row_start, c.col_end + 1, q.top_right()),
            (c.row_end + 1, c.col_end + 1, q.bottom_right()),
            (c.row_end + 1, c.col_start, q.bottom_left()),
        ];
        for (i, j, p) in corners {
            let acc = sum.get_mut(i, j);
            acc.0 += p.x;
            acc.1 += p.y;
            acc.2 += 1;
        }
        for j in c.col_start..=c.col_end {
            right_edge.set(c.row_start, j, true);
            right_edge.set(c.row_end + 1, j, true);
        }
        for i in c.row_start..=c.row_end {
            down_edge.set(i, c.col_start, true);
            down_edge.set(i, c.col_end + 1, true);
        }
    }

    let vertex_positive = sum.map(|&(_, _, k)| k > 0);
    let vertex_x = sum.map(|&(x, _, k)| if k > 0 { x / k as f64 / t.image_w } else { COORD_SENTINEL });
    let vertex_y = sum.map(|&(_, y, k)| if k > 0 { y / k as f64 / t.image_h } else { COORD_SENTINEL });

    let mut label = GridLabel {
        dims,
        image_w: t.image_w,
        image_h: t.image_h,
        row_positive: (0..m).map(|i| i <= t.rows).collect(),
        col_positive: (0..n).map(|j| j <= t.cols).collect(),
        vertex_positive,
        vertex_x,
        vertex_y,
        down_edge,
        right_edge,
        row_ref: Vec::new(),
        col_ref: Vec::new(),
    };
    let (row_ref, col_ref) = build_reference_labels(&label, t)?;
    label.row_ref = row_ref;
    label.col_ref = col_ref;
    Ok(label)
}

/// Normalized position of every lattice point inside the table extent.
///
/// Cell corners carry the label's vertex coordinates. Points that are not a
/// corner of any cell (they sit on a spanning cell's side or inside it) are
/// placed by bilinear interpolation over the enclosing cell's quad.
pub fn line_points(label: &GridLabel, t: &LogicalTable) -> Result<Lattice<Option<Point>>> {
    let (m, n) = (label.dims.m, label.dims.n);
    if t.rows == 0 || t.cols == 0 {
        return Err(Error::InvalidTable(crate::grid_model::validate_logical_table(t)));
    }
    let occ = t.occupancy();
    let mut out = Lattice::filled(m, n, None);
    for i in 0..=t.rows.min(m - 1) {
        for j in 0..=t.cols.min(n - 1) {
            if *label.vertex_positive.get(i, j) {
                out.set(i, j, Some(Point::new(*label.vertex_x.get(i, j), *label.vertex_y.get(i, j))));
                continue;
            }
            let k = *occ.get(i.min(t.rows - 1), j.min(t.cols - 1));
            let cell = t.cells.get(k).ok_or_else(|| Error::InvalidTable(Vec::new()))?;
            let q = cell.quad.ok_or(Error::MissingGeometry(k))?;
            let u = (j - cell.col_start) as f64 / cell.colspan() as f64;
            let v = (i - cell.row_start) as f64 / cell.rowspan() as f64;
            let [tl, tr, br, bl] = q.0;
            let x = (1.0 - u) * (1.0 - v) * tl.x + u * (1.0 - v) * tr.x + u * v * br.x + (1.0 - u) * v * bl.x;
            let y = (1.0 - u) * (1.0 - v) * tl.y + u * (1.0 - v) * tr.y + u * v * br.y + (1.0 - u) * v * bl.y;
            out.set(i, j, Some(Point::new(x / t.image_w, y / t.image_h)));
        }
    }
    Ok(out)
}

/// Row and column reference labels.
///
/// A positive row line's free coordinate is the mean y of the points along
/// that line (see [`line_points`]); its fixed coordinate is [`ANCHOR_TAU`].
/// Columns use the mean x. Averaging over the whole line keeps the references
/// ordered under rotation, where a mean over corners alone would drift
/// with the horizontal position of the corners.
pub fn build_reference_labels(
    label: &GridLabel,
    t: &LogicalTable,
) -> Result<(Vec<ReferencePoint>, Vec<ReferencePoint>)> {
    let points = line_points(label, t)?;
    let (m, n) = (label.dims.m, label.dims.n);

    let mut row_ref = Vec::with_capacity(m);
    for i in 0..m {
        if !label.row_positive[i] {
            row_ref.push(ReferencePoint::negative(ANCHOR_TAU));
            continue;
        }
        if !label.vertex_positive.row(i).iter().any(|&p| p) {
            return Err(Error::EmptyLine { axis: Axis::Row, index: i });
        }
        let ys: Vec<f64> = (0..n).filter_map(|j| points.get(i, j).map(|p| p.y)).collect();
        row_ref.push(ReferencePoint { fixed_coord: ANCHOR_TAU, free_coord: mean(&ys), positive: true });
    }

    let mut col_ref = Vec::with_capacity(n);
    for j in 0..n {
        if !label.col_positive[j] {
            col_ref.push(ReferencePoint::negative(ANCHOR_TAU));
            continue;
        }
        if !(0..m).any(|i| *label.vertex_positive.get(i, j)) {
            return Err(Error::EmptyLine { axis: Axis::Column, index: j });
        }
        let xs: Vec<f64> = (0..m).filter_map(|i| points.get(i, j).map(|p| p.x)).collect();
        col_ref.push(ReferencePoint { fixed_coord: ANCHOR_TAU, free_coord: mean(&xs), positive: true });
    }
    Ok((row_ref, col_ref))
}

/// Reference point of one line from the coordinates of its points.
pub fn reference_from_coords(coords: &[f64]) -> Option<ReferencePoint> {
    if coords.is_empty() {
        return None;
    }
    Some(ReferencePoint { fixed_coord: ANCHOR_TAU, free_coord: mean(coords), positive: true })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalLattice {
    pub feature_h: usize,
    pub feature_w: usize,
    /// Fixed x of every row proposal (`W / 4`, feature-map units).
    pub row_anchor_x: f64,
    /// Fixed y of every column proposal (`H / 4`).
    pub col_anchor_y: f64,
    pub row_proposals: Vec<Point>,
    pub col_proposals: Vec<Point>,
}

/// Proposal points for a feature map of `feature_h x feature_w`: rows at
/// `(W/4, y)` for `y = 0..=H`, columns at `(x, H/4)` for `x = 0..=W`.
pub fn build_proposal_lattice(feature_h: usize, feature_w: usize) -> Result<ProposalLattice> {
    if feature_h == 0 || feature_w == 0 {
        return Err(Error::Config(format!("feature map {feature_h}x{feature_w} is empty")));
    }
    let row_anchor_x = feature_w as f64 / 4.0;
    let col_anchor_y = feature_h as f64 / 4.0;
    Ok(ProposalLattice {
        feature_h,
        feature_w,
        row_anchor_x,
        col_anchor_y,
        row_proposals: (0..=feature_h).map(|y| Point::new(row_anchor_x, y as f64)).collect(),
        col_proposals: (0..=feature_w).map(|x| Point::new(x as f64, col_anchor_y)).collect(),
    })
}

/// Which reference label (if any) supervises each proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalTargets {
    pub rows: Vec<Option<usize>>,
    pub cols: Vec<Option<usize>>,
    /// Positive lines that lost their nearest proposal to an earlier line.
    pub unassigned_rows: Vec<usize>,
    pub unassigned_cols: Vec<usize>,
}

/// Assigns each positive reference to the proposal whose free coordinate
/// (normalized by the feature extent) is nearest; ties go to the lower
/// proposal index and a proposal keeps the first line that claims it.
pub fn assign_proposal_targets(
    lattice: &ProposalLattice,
    row_ref: &[ReferencePoint],
    col_ref: &[ReferencePoint],
) -> ProposalTargets {
    let row_free: Vec<f64> =
        lattice.row_proposals.iter().map(|p| p.y / lattice.feature_h as f64).collect();
    let col_free: Vec<f64> =
        lattice.col_proposals.iter().map(|p| p.x / lattice.feature_w as f64).collect();
    let (rows, unassigned_rows) = assign_axis(&row_free, row_ref);
    let (cols, unassigned_cols) = assign_axis(&col_free, col_ref);
    ProposalTargets { rows, cols, unassigned_rows, unassigned_cols }
}

fn assign_axis(proposals: &[f64], refs: &[ReferencePoint]) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut targets = vec![None; proposals.len()];
    let mut lost = Vec::new();
    for (line, r) in refs.iter().enumerate().filter(|(_, r)| r.positive) {
        let mut best = 0;
        for (k, &p) in proposals.iter().enumerate() {
            if (p - r.free_coord).abs() < (proposals[best] - r.free_coord).abs() {
                best = k;
            }
        }
        if targets[best].is_none() {
            targets[best] = Some(line);
        } else {
            lost.push(line);
        }
    }
    (targets, lost)
}

/// Indices of the `k` highest scores, best first; equal scores keep index order.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}
