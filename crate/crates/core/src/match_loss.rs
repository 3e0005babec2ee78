//! Set matching between query slots and ground-truth lines, and the scalar
//! loss terms used to score a prediction against its label.
//!
//! Losses are values only; nothing here computes gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::grid_model::{Cell, GridLabel, GridPrediction, Lattice};

const FOCAL_EPS: f64 = 1e-7;

/// A partial injection from prediction indices to target indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, target)` pairs sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// `target -> prediction` lookup over `targets` entries.
    pub fn prediction_for_target(&self, targets: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; targets];
        for &(p, t) in &self.pairs {
            out[t] = Some(p);
        }
        out
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs (Kuhn-Munkres with
/// row/column potentials, O(n^2 m)).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::ShapeMismatch("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // 1-based; column 0 is a virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| if transposed { (j - 1, owner[j] - 1) } else { (owner[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Ok(Assignment { pairs, total_cost })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub class: f64,
    pub reference: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights { class: 1.0, reference: 1.0 }
    }
}

/// `cost[i][k] = class * (1 - prob[i]) + reference * |pred_ref[i] - gt_ref[k]|`.
pub fn matching_cost(prob: &[f64], pred_ref: &[f64], gt_ref: &[f64], w: MatchWeights) -> Result<Vec<Vec<f64>>> {
    if prob.len() != pred_ref.len() {
        return Err(Error::ShapeMismatch(format!("{} probabilities vs {} references", prob.len(), pred_ref.len())));
    }
    if prob.iter().chain(pred_ref).chain(gt_ref).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matching inputs"));
    }
    Ok(prob
        .iter()
        .zip(pred_ref)
        .map(|(&p, &r)| gt_ref.iter().map(|&g| w.class * (1.0 - p) + w.reference * (r - g).abs()).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha: 0.25, gamma: 2.0 }
    }
}

/// Mean of `-a_t (1 - p_t)^gamma ln p_t`, where `p_t` is the probability
/// assigned to the true class and `a_t` is `alpha` for positives and
/// `1 - alpha` for negatives. Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(pred: &[f64], target: &[bool], params: FocalParams) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            let (pt, at) = if t { (p, params.alpha) } else { (1.0 - p, 1.0 - params.alpha) };
            -at * (1.0 - pt).powf(params.gamma) * pt.ln()
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Generalized IoU in `(-1, 1]`. Zero-area boxes have IoU 0.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let hull = a.hull(b).area();
    if hull <= 0.0 {
        return iou;
    }
    iou - (hull - union) / hull
}

pub fn giou_loss(a: &BBox, b: &BBox) -> f64 {
    1.0 - giou(a, b)
}

/// Axis-aligned bounding rectangle of each cell's four corner vertexes, read
/// from a canonical-order coordinate lattice. With `positive` given, every
/// corner must be a positive vertex.
pub fn cell_bounding_rectangles(
    vertex_x: &Lattice<f64>,
    vertex_y: &Lattice<f64>,
    positive: Option<&Lattice<bool>>,
    cells: &[Cell],
) -> Result<Vec<BBox>> {
    let (m, n) = vertex_x.shape();
    cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let corners = [
                (c.row_start, c.col_start),
                (c.row_start, c.col_end + 1),
                (c.row_end + 1, c.col_end + 1),
                (c.row_end + 1, c.col_start),
            ];
            let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (i, j) in corners {
                if i >= m || j >= n {
                    return Err(Error::IndexOutOfRange { i, j, m, n });
                }
                if positive.is_some_and(|p| !*p.get(i, j)) {
                    return Err(Error::NegativeCorner { cell: k, i, j });
                }
                let (x, y) = (*vertex_x.get(i, j), *vertex_y.get(i, j));
                b.x1 = b.x1.min(x);
                b.y1 = b.y1.min(y);
                b.x2 = b.x2.max(x);
                b.y2 = b.y2.max(y);
            }
            Ok(b)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_coord: f64,
    pub lambda_ref: f64,
    pub lambda_edge: f64,
    /// Weight of the cell GIoU term inside the coordinate loss.
    pub gamma_iou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_cls: 1.0, lambda_coord: 5.0, lambda_ref: 5.0, lambda_edge: 5.0, gamma_iou: 0.1 }
    }
}

impl LossWeights {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_coord", self.lambda_coord),
            ("lambda_ref", self.lambda_ref),
            ("lambda_edge", self.lambda_edge),
            ("gamma_iou", self.gamma_iou),
        ] {
            if v < 0.0 || v.is_nan() {
                return Err(Error::NegativeWeight(name));
            }
        }
        Ok(())
    }
}

/// The four weighted terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub cls: f64,
    pub coord: f64,
    pub reference: f64,
    pub edge: f64,
}

pub fn coord_loss(l1_row: f64, l1_col: f64, iou: f64, w: &LossWeights) -> f64 {
    l1_row + l1_col + w.gamma_iou * iou
}

pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<f64> {
    w.check()?;
    let parts = [terms.cls, terms.coord, terms.reference, terms.edge];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss terms"));
    }
    Ok(w.lambda_cls * terms.cls + w.lambda_coord * terms.coord + w.lambda_ref * terms.reference + w.lambda_edge * terms.edge)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal: FocalParams,
    pub matching: MatchWeights,
}

/// Every loss term for one prediction, with the line matchings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls: f64,
    pub l1_row: f64,
    pub l1_col: f64,
    pub iou: f64,
    pub coord: f64,
    pub reference: f64,
    pub edge: f64,
    pub total: f64,
    pub cells: usize,
    pub row_assignment: Assignment,
    pub col_assignment: Assignment,
}

/// Matches query slots to ground-truth lines, then evaluates every term.
pub fn compute_losses(pred: &GridPrediction, label: &GridLabel, cfg: &LossConfig) -> Result<LossReport> {
    pred.check()?;
    label.check_shape()?;
    if pred.dims != label.dims {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs label {}x{}",
            pred.dims.m, pred.dims.n, label.dims.m, label.dims.n
        )));
    }
    let (m, n) = (label.dims.m, label.dims.n);
    let gt_rows: Vec<usize> = label.positive_rows().collect();
    let gt_cols: Vec<usize> = label.positive_cols().collect();
    let gt_row_ref: Vec<f64> = gt_rows.iter().map(|&i| label.row_ref[i].free_coord).collect();
    let gt_col_ref: Vec<f64> = gt_cols.iter().map(|&j| label.col_ref[j].free_coord).collect();

    let row_assignment = hungarian(&matching_cost(&pred.row_prob, &pred.row_ref_pred, &gt_row_ref, cfg.matching)?)?;
    let col_assignment = hungarian(&matching_cost(&pred.col_prob, &pred.col_ref_pred, &gt_col_ref, cfg.matching)?)?;

    // canonical line -> query slot
    let mut row_slot = vec![None; m];
    for &(slot, k) in &row_assignment.pairs {
        row_slot[gt_rows[k]] = Some(slot);
    }
    let mut col_slot = vec![None; n];
    for &(slot, k) in &col_assignment.pairs {
        col_slot[gt_cols[k]] = Some(slot);
    }

    let mut row_target = vec![false; m];
    row_assignment.pairs.iter().for_each(|&(s, _)| row_target[s] = true);
    let mut col_target = vec![false; n];
    col_assignment.pairs.iter().for_each(|&(s, _)| col_target[s] = true);
    let cls = focal_loss(&pred.row_prob, &row_target, cfg.focal)? + focal_loss(&pred.col_prob, &col_target, cfg.focal)?;

    // vertex regression over positive vertexes, in canonical order
    let (mut l1_row, mut l1_col, mut count) = (0.0, 0.0, 0usize);
    for ((a, b), &p) in label.vertex_positive.indexed() {
        if !p {
            continue;
        }
        let (Some(s), Some(t)) = (row_slot[a], col_slot[b]) else { continue };
        l1_row += (pred.vertex_y.get(s, t) - label.vertex_y.get(a, b)).abs();
        l1_col += (pred.vertex_x.get(s, t) - label.vertex_x.get(a, b)).abs();
        count += 1;
    }
    if count > 0 {
        l1_row /= count as f64;
        l1_col /= count as f64;
    }

    let canon = |l: &Lattice<f64>| {
        Lattice::from_fn(m, n, |a, b| match (row_slot[a], col_slot[b]) {
            (Some(s), Some(t)) => *l.get(s, t),
            _ => crate::grid_model::COORD_SENTINEL,
        })
    };
    let cells = crate::reconstruct::label_cells(label)?;
    let gt_rects = cell_bounding_rectangles(&label.vertex_x, &label.vertex_y, Some(&label.vertex_positive), &cells)?;
    let pred_rects = cell_bounding_rectangles(&canon(&pred.vertex_x), &canon(&pred.vertex_y), None, &cells)?;
    let iou = if cells.is_empty() {
        0.0
    } else {
        pred_rects.iter().zip(&gt_rects).map(|(p, g)| giou_loss(p, g)).sum::<f64>() / cells.len() as f64
    };
    let coord = coord_loss(l1_row, l1_col, iou, &cfg.weights);

    let ref_term = |slots: &[Option<usize>], refs: &[crate::grid_model::ReferencePoint], pred_ref: &[f64]| {
        let diffs: Vec<f64> = slots
            .iter()
            .enumerate()
            .filter_map(|(a, s)| s.filter(|_| refs[a].positive).map(|s| (pred_ref[s] - refs[a].free_coord).abs()))
            .collect();
        if diffs.is_empty() {
            0.0
        } else {
            diffs.iter().sum::<f64>() / diffs.len() as f64
        }
    };
    let reference =
        ref_term(&row_slot, &label.row_ref, &pred.row_ref_pred) + ref_term(&col_slot, &label.col_ref, &pred.col_ref_pred);

    let mut down_target = Lattice::filled(m, n, false);
    let mut right_target = Lattice::filled(m, n, false);
    for a in 0..m {
        for b in 0..n {
            if let (Some(s), Some(t)) = (row_slot[a], col_slot[b]) {
                down_target.set(s, t, *label.down_edge.get(a, b));
                right_target.set(s, t, *label.right_edge.get(a, b));
            }
        }
    }
    let flat = |l: &Lattice<f64>| l.iter().copied().collect::<Vec<_>>();
    let flat_b = |l: &Lattice<bool>| l.iter().copied().collect::<Vec<_>>();
    let edge = focal_loss(&flat(&pred.down_edge_prob), &flat_b(&down_target), cfg.focal)?
        + focal_loss(&flat(&pred.right_edge_prob), &flat_b(&right_target), cfg.focal)?;

    let total = total_loss(&LossTerms { cls, coord, reference, edge }, &cfg.weights)?;
    Ok(LossReport {
        cls,
        l1_row,
        l1_col,
        iou,
        coord,
        reference,
        edge,
        total,
        cells: cells.len(),
        row_assignment,
        col_assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_identity() {
        let cost = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn hungarian_two_by_two() {
        let a = hungarian(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn hungarian_rectangular_both_ways() {
        let wide = vec![vec![5.0, 1.0, 9.0], vec![4.0, 8.0, 0.5]];
        let a = hungarian(&wide).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 2)]);
        assert_eq!(a.total_cost, 1.5);

        let tall: Vec<Vec<f64>> = (0..3).map(|j| wide.iter().map(|r| r[j]).collect()).collect();
        let b = hungarian(&tall).unwrap();
        assert_eq!(b.pairs, vec![(1, 0), (2, 1)]);
        assert_eq!(b.total_cost, 1.5);
    }

    #[test]
    fn hungarian_rejects_bad_input() {
        assert_eq!(hungarian(&[]), Err(Error::EmptyMatrix));
        assert!(matches!(hungarian(&[vec![f64::NAN]]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matching_cost_formula() {
        let c = matching_cost(&[1.0, 0.5], &[0.3, 0.4], &[0.3, 0.5], MatchWeights::default()).unwrap();
        assert_eq!(c[0][0], 0.0);
        assert!((c[1][1] - 0.6).abs() < 1e-12);
        assert!(matching_cost(&[f64::INFINITY], &[0.0], &[0.0], MatchWeights::default()).is_err());
    }

    #[test]
    fn focal_values() {
        let p = FocalParams::default();
        assert!(focal_loss(&[1.0], &[true], p).unwrap() < 1e-15);
        let v = focal_loss(&[0.5], &[true], p).unwrap();
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-9);
        assert!((v - 0.043322).abs() < 1e-6);

        let half = FocalParams { alpha: 0.5, gamma: 0.0 };
        let preds = [0.2, 0.7, 0.9, 0.4];
        let targets = [true, false, true, false];
        let bce: f64 = preds
            .iter()
            .zip(&targets)
            .map(|(&p, &t): (&f64, &bool)| if t { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / 4.0;
        assert!((focal_loss(&preds, &targets, half).unwrap() - 0.5 * bce).abs() < 1e-12);
        assert!(focal_loss(&[0.5], &[], p).is_err());
    }

    #[test]
    fn giou_values() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a), 1.0);
        assert_eq!(giou_loss(&a, &a), 0.0);
        let b = BBox::new(2.0, 2.0, 3.0, 3.0);
        assert!((giou(&a, &b) + 7.0 / 9.0).abs() < 1e-12);
        let inner = BBox::new(0.25, 0.25, 0.75, 0.75);
        assert!((giou(&a, &inner) - 0.25).abs() < 1e-12);
        let flat = BBox::new(0.5, 0.5, 0.5, 0.9);
        assert!(giou(&a, &flat) <= 0.0);
    }

    #[test]
    fn rotated_cell_bounding_rect() {
        let xs = Lattice::from_rows(vec![vec![0.1, 0.3], vec![0.1, 0.3]]).unwrap();
        let ys = Lattice::from_rows(vec![vec![0.1, 0.12], vec![0.28, 0.3]]).unwrap();
        let r = cell_bounding_rectangles(&xs, &ys, None, &[Cell::new(0, 0, 0, 0)]).unwrap();
        assert_eq!(r, vec![BBox::new(0.1, 0.1, 0.3, 0.3)]);
        let neg = Lattice::from_rows(vec![vec![true, false], vec![true, true]]).unwrap();
        assert_eq!(
            cell_bounding_rectangles(&xs, &ys, Some(&neg), &[Cell::new(0, 0, 0, 0)]),
            Err(Error::NegativeCorner { cell: 0, i: 0, j: 1 })
        );
    }

    #[test]
    fn total_loss_weights() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossTerms::default(), &w).unwrap(), 0.0);
        let ones = LossTerms { cls: 1.0, coord: 1.0, reference: 1.0, edge: 1.0 };
        assert_eq!(total_loss(&ones, &w).unwrap(), 16.0);
        assert_eq!(coord_loss(1.0, 1.0, 1.0, &w), 2.1);
        let bad = LossWeights { lambda_ref: -1.0, ..w };
        assert_eq!(total_loss(&ones, &bad), Err(Error::NegativeWeight("lambda_ref")));
    }
}
