//! Turns a grid prediction back into a logical table.
//!
//! Pipeline: keep row/column slots scoring above `tau1`, order them by their
//! reference predictions, keep edges scoring above `tau2`, classify vertexes,
//! then flood-fill unit cells into rectangular cells.
//!
//! Vertex rule: a vertex is positive when at least three incident edges are
//! positive, or when it is one of the four extreme corners of the selected
//! subgrid and has at least two. In a rectangular partition every cell corner
//! other than the four table corners is a T- or X-junction, so two collinear
//! edges never mark a corner.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::annotation_ingest::{HtmlToken, HtmlTokenStream};
use crate::error::{Error, Result};
use crate::geometry::{Point, Quad};
use crate::grid_model::{incident_positive_edges, Cell, EdgeMask, EdgeSet, GridLabel, GridPrediction, Lattice, LogicalTable};

/// Reference gaps below this are reported as probable duplicate queries.
pub const DUPLICATE_GAP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    /// Row/column score threshold.
    pub tau1: f64,
    /// Edge score threshold.
    pub tau2: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig { tau1: 0.5, tau2: 0.4 }
    }
}

impl ReconstructionConfig {
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        let cfg = ReconstructionConfig { tau1, tau2 };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name}={v} must lie in (0,1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineRef {
    /// Query slot in the prediction.
    pub slot: usize,
    pub reference: f64,
}

/// Selected lines in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSubgrid {
    pub row_lines: Vec<LineRef>,
    pub col_lines: Vec<LineRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ActiveSubgrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.row_lines.len(), self.col_lines.len())
    }
}

fn select_axis(prob: &[f64], refs: &[f64], tau: f64) -> Vec<LineRef> {
    let mut lines: Vec<LineRef> = prob
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > tau)
        .map(|(slot, _)| LineRef { slot, reference: refs[slot] })
        .collect();
    // stable: equal references keep slot order
    lines.sort_by(|a, b| a.reference.total_cmp(&b.reference));
    lines
}

fn gap_warnings(axis: &str, lines: &[LineRef], out: &mut Vec<String>) {
    for w in lines.windows(2) {
        if w[1].reference - w[0].reference < DUPLICATE_GAP {
            out.push(format!(
                "{axis} slots {} and {} have reference gap {:.2e}",
                w[0].slot,
                w[1].slot,
                w[1].reference - w[0].reference
            ));
        }
    }
}

pub fn select_and_sort(pred: &GridPrediction, cfg: &ReconstructionConfig) -> Result<ActiveSubgrid> {
    let row_lines = select_axis(&pred.row_prob, &pred.row_ref_pred, cfg.tau1);
    let col_lines = select_axis(&pred.col_prob, &pred.col_ref_pred, cfg.tau1);
    if row_lines.len() < 2 || col_lines.len() < 2 {
        return Err(Error::DegenerateTable { rows: row_lines.len(), cols: col_lines.len() });
    }
    let mut warnings = Vec::new();
    gap_warnings("row", &row_lines, &mut warnings);
    gap_warnings("column", &col_lines, &mut warnings);
    Ok(ActiveSubgrid { row_lines, col_lines, warnings })
}

/// Edges between consecutive selected lines scoring above `tau2`, indexed in
/// subgrid order. Edges touching unselected lines never enter the mask.
pub fn threshold_edges(pred: &GridPrediction, sub: &ActiveSubgrid, tau2: f64) -> EdgeMask {
    let (k, l) = sub.shape();
    let mut mask = EdgeMask::new(k, l);
    for (a, r) in sub.row_lines.iter().enumerate() {
        for (b, c) in sub.col_lines.iter().enumerate() {
            if a + 1 < k {
                mask.down.set(a, b, *pred.down_edge_prob.get(r.slot, c.slot) > tau2);
            }
            if b + 1 < l {
                mask.right.set(a, b, *pred.right_edge_prob.get(r.slot, c.slot) > tau2);
            }
        }
    }
    mask
}

/// Vertex positivity over an ordered edge lattice.
pub fn classify_vertexes<G: EdgeSet + ?Sized>(edges: &G) -> Lattice<bool> {
    let (k, l) = edges.edge_shape();
    Lattice::from_fn(k, l, |a, b| {
        let count = incident_positive_edges(edges, a, b).expect("in range");
        let extreme = (a == 0 || a + 1 == k) && (b == 0 || b + 1 == l);
        count >= 3 || (extreme && count >= 2)
    })
}

/// Flood fill over unit cells of an ordered edge lattice. Neighboring unit
/// cells join when the segment between them is negative; each component must
/// be a full rectangle whose four corners are positive vertexes.
/// Returned cells carry spans in lattice order and no geometry.
pub fn group_cells<G: EdgeSet + ?Sized>(edges: &G, vertexes: &Lattice<bool>) -> Result<Vec<Cell>> {
    let (k, l) = edges.edge_shape();
    if k < 2 || l < 2 {
        return Err(Error::DegenerateTable { rows: k, cols: l });
    }
    let (ur, uc) = (k - 1, l - 1);
    let mut seen = Lattice::filled(ur, uc, false);
    let mut cells = Vec::new();
    for start_a in 0..ur {
        for start_b in 0..uc {
            if *seen.get(start_a, start_b) {
                continue;
            }
            seen.set(start_a, start_b, true);
            let mut queue = VecDeque::from([(start_a, start_b)]);
            let mut members = Vec::new();
            while let Some((a, b)) = queue.pop_front() {
                members.push((a, b));
                let mut visit = |na: usize, nb: usize, open: bool| {
                    if open && !*seen.get(na, nb) {
                        seen.set(na, nb, true);
                        queue.push_back((na, nb));
                    }
                };
                if b + 1 < uc {
                    visit(a, b + 1, !edges.down(a, b + 1));
                }
                if b > 0 {
                    visit(a, b - 1, !edges.down(a, b));
                }
                if a + 1 < ur {
                    visit(a + 1, b, !edges.right(a + 1, b));
                }
                if a > 0 {
                    visit(a - 1, b, !edges.right(a, b));
                }
            }
            let a0 = members.iter().map(|m| m.0).min().unwrap_or(0);
            let a1 = members.iter().map(|m| m.0).max().unwrap_or(0);
            let b0 = members.iter().map(|m| m.1).min().unwrap_or(0);
            let b1 = members.iter().map(|m| m.1).max().unwrap_or(0);
            if (a1 - a0 + 1) * (b1 - b0 + 1) != members.len() {
                members.sort_unstable();
                return Err(Error::StructureInconsistency {
                    reason: "non-rectangular cell".into(),
                    unit_cells: members,
                });
            }
            for (i, j) in [(a0, b0), (a0, b1 + 1), (a1 + 1, b1 + 1), (a1 + 1, b0)] {
                if !*vertexes.get(i, j) {
                    members.sort_unstable();
                    return Err(Error::StructureInconsistency {
                        reason: format!("cell corner ({i},{j}) is not a positive vertex"),
                        unit_cells: members,
                    });
                }
            }
            cells.push(Cell::new(a0, a1, b0, b1));
        }
    }
    cells.sort_by_key(|c| (c.row_start, c.col_start));
    Ok(cells)
}

/// Full reconstruction of one prediction.
pub fn reconstruct_table(pred: &GridPrediction, cfg: &ReconstructionConfig) -> Result<LogicalTable> {
    reconstruct_with_subgrid(pred, cfg).map(|(t, _)| t)
}

/// Like [`reconstruct_table`], also returning the selected subgrid.
pub fn reconstruct_with_subgrid(pred: &GridPrediction, cfg: &ReconstructionConfig) -> Result<(LogicalTable, ActiveSubgrid)> {
    cfg.check()?;
    pred.check()?;
    let sub = select_and_sort(pred, cfg)?;
    let mask = threshold_edges(pred, &sub, cfg.tau2);
    let vertexes = classify_vertexes(&mask);
    let mut cells = group_cells(&mask, &vertexes)?;

    let point = |a: usize, b: usize| {
        let (r, c) = (sub.row_lines[a].slot, sub.col_lines[b].slot);
        Point::new(pred.vertex_x.get(r, c) * pred.image_w, pred.vertex_y.get(r, c) * pred.image_h)
    };
    for cell in &mut cells {
        let quad = Quad([
            point(cell.row_start, cell.col_start),
            point(cell.row_start, cell.col_end + 1),
            point(cell.row_end + 1, cell.col_end + 1),
            point(cell.row_end + 1, cell.col_start),
        ]);
        if !quad.is_finite() || quad.signed_area() <= 0.0 {
            return Err(Error::StructureInconsistency {
                reason: "cell quad has non-positive area".into(),
                unit_cells: vec![(cell.row_start, cell.col_start)],
            });
        }
        cell.quad = Some(quad);
    }
    let (k, l) = sub.shape();
    let table = LogicalTable { rows: k - 1, cols: l - 1, image_w: pred.image_w, image_h: pred.image_h, cells };
    debug_assert!(table.validate().is_ok());
    Ok((table, sub))
}

/// Cell spans encoded by a label, read off its positive lines.
pub fn label_cells(label: &GridLabel) -> Result<Vec<Cell>> {
    let rows: Vec<usize> = label.positive_rows().collect();
    let cols: Vec<usize> = label.positive_cols().collect();
    let mut mask = EdgeMask::new(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            mask.down.set(a, b, *label.down_edge.get(i, j));
            mask.right.set(a, b, *label.right_edge.get(i, j));
        }
    }
    let vertexes = Lattice::from_fn(rows.len(), cols.len(), |a, b| *label.vertex_positive.get(rows[a], cols[b]));
    let mut cells = group_cells(&mask, &vertexes)?;
    for c in &mut cells {
        c.row_start = rows[c.row_start];
        c.row_end = rows[c.row_end + 1] - 1;
        c.col_start = cols[c.col_start];
        c.col_end = cols[c.col_end + 1] - 1;
    }
    Ok(cells)
}

/// Flat `table > tr > td` serialization. Each cell is emitted in its anchor
/// row, ordered by anchor column.
pub fn to_html(t: &LogicalTable, with_content: bool) -> Result<HtmlTokenStream> {
    t.validate()?;
    let mut by_row: Vec<Vec<&Cell>> = vec![Vec::new(); t.rows];
    for c in t.sorted_cells() {
        by_row[c.row_start].push(c);
    }
    let mut tokens = vec![HtmlToken::TableOpen];
    for row in by_row {
        tokens.push(HtmlToken::RowOpen);
        for c in row {
            tokens.push(HtmlToken::CellOpen { rowspan: c.rowspan(), colspan: c.colspan() });
            if with_content {
                if let Some(text) = c.content.as_deref().filter(|s| !s.is_empty()) {
                    tokens.push(HtmlToken::Text(text.to_string()));
                }
            }
            tokens.push(HtmlToken::CellClose);
        }
        tokens.push(HtmlToken::RowClose);
    }
    tokens.push(HtmlToken::TableClose);
    Ok(HtmlTokenStream(tokens))
}
