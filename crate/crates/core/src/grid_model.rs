//! In-memory grid representation and logical tables.
//!
//! Every lattice array is indexed `(i, j)` = (row line, column line) and
//! stored row-major. Edges use a down/right convention: `down_edge(i, j)`
//! joins vertex `(i, j)` to `(i + 1, j)`, `right_edge(i, j)` joins `(i, j)`
//! to `(i, j + 1)`. In a [`GridLabel`] the last row of down edges and the last
//! column of right edges are always false.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Quad;

/// Coordinate stored on vertexes that carry no geometry.
pub const COORD_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub m: usize,
    pub n: usize,
}

impl GridDims {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m < 2 || n < 2 {
            return Err(Error::InvalidDims { m, n });
        }
        Ok(GridDims { m, n })
    }

    /// Whether a table with `rows` x `cols` cells fits this lattice.
    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.m > rows && self.n > cols
    }
}

impl Default for GridDims {
    fn default() -> Self {
        GridDims { m: 50, n: 50 }
    }
}

/// Dense `m x n` array indexed by (row line, column line).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice<T> {
    m: usize,
    n: usize,
    data: Vec<T>,
}

impl<T: Clone> Lattice<T> {
    pub fn filled(m: usize, n: usize, value: T) -> Self {
        Lattice { m, n, data: vec![value; m * n] }
    }
}

impl<T> Lattice<T> {
    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Lattice { m, n, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("ragged lattice rows".into()));
        }
        Ok(Lattice { m, n, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        assert!(i < self.m && j < self.n, "lattice index ({i},{j}) outside {}x{}", self.m, self.n);
        &self.data[i * self.n + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        assert!(i < self.m && j < self.n, "lattice index ({i},{j}) outside {}x{}", self.m, self.n);
        &mut self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        *self.get_mut(i, j) = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn indexed(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        let n = self.n;
        self.data.iter().enumerate().map(move |(k, v)| ((k / n, k % n), v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Lattice<U> {
        Lattice { m: self.m, n: self.n, data: self.data.iter().map(f).collect() }
    }

    /// New lattice whose row `k` is row `order[k]` of `self`.
    pub fn permute_rows(&self, order: &[usize]) -> Lattice<T>
    where
        T: Clone,
    {
        Lattice::from_fn(self.m, self.n, |i, j| self.get(order[i], j).clone())
    }

    pub fn permute_cols(&self, order: &[usize]) -> Lattice<T>
    where
        T: Clone,
    {
        Lattice::from_fn(self.m, self.n, |i, j| self.get(i, order[j]).clone())
    }
}

impl<T: Serialize> Serialize for Lattice<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[T]> = (0..self.m).map(|i| &self.data[i * self.n..(i + 1) * self.n]).collect();
        rows.serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Lattice<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        Lattice::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Boolean that also reads from `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct Flag(pub bool);

impl<'de> Deserialize<'de> for Flag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            B(bool),
            I(u64),
        }
        match Raw::deserialize(d)? {
            Raw::B(b) => Ok(Flag(b)),
            Raw::I(0) => Ok(Flag(false)),
            Raw::I(1) => Ok(Flag(true)),
            Raw::I(v) => Err(serde::de::Error::custom(format!("expected boolean or 0/1, got {v}"))),
        }
    }
}

pub(crate) mod flags {
    //! serde adapters for boolean arrays that accept 0/1 on read.
    use super::{Flag, Lattice};
    use serde::{Deserialize, Deserializer};

    pub fn vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        Ok(Vec::<Flag>::deserialize(d)?.into_iter().map(|f| f.0).collect())
    }

    pub fn lattice<'de, D: Deserializer<'de>>(d: D) -> Result<Lattice<bool>, D::Error> {
        Ok(Lattice::<Flag>::deserialize(d)?.map(|f| f.0))
    }
}

/// One table cell with 0-based inclusive spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad: Option<Quad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl Cell {
    pub fn new(row_start: usize, row_end: usize, col_start: usize, col_end: usize) -> Self {
        Cell { row_start, row_end, col_start, col_end, quad: None, content: None }
    }

    pub fn with_quad(mut self, quad: Quad) -> Self {
        self.quad = Some(quad);
        self
    }

    pub fn with_content(mut self, content: impl Into<String>) -> Self {
        self.content = Some(content.into());
        self
    }

    pub fn rowspan(&self) -> usize {
        self.row_end + 1 - self.row_start
    }

    pub fn colspan(&self) -> usize {
        self.col_end + 1 - self.col_start
    }

    pub fn spans(&self) -> (usize, usize, usize, usize) {
        (self.row_start, self.row_end, self.col_start, self.col_end)
    }

    pub fn has_text(&self) -> bool {
        self.content.as_deref().is_some_and(|c| !c.trim().is_empty())
    }
}

/// A table as a rectangular partition of an `rows x cols` index grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalTable {
    pub rows: usize,
    pub cols: usize,
    pub image_w: f64,
    pub image_h: f64,
    pub cells: Vec<Cell>,
}

impl LogicalTable {
    /// Cells sorted by anchor `(row_start, col_start)`.
    pub fn sorted_cells(&self) -> Vec<&Cell> {
        let mut cells: Vec<&Cell> = self.cells.iter().collect();
        cells.sort_by_key(|c| (c.row_start, c.col_start, c.row_end, c.col_end));
        cells
    }

    pub fn canonicalize(&mut self) {
        self.cells.sort_by_key(|c| (c.row_start, c.col_start, c.row_end, c.col_end));
    }

    /// Span tuples in anchor order.
    pub fn span_signature(&self) -> Vec<(usize, usize, usize, usize)> {
        self.sorted_cells().into_iter().map(Cell::spans).collect()
    }

    pub fn has_quads(&self) -> bool {
        self.cells.iter().all(|c| c.quad.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let report = validate_logical_table(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidTable(report))
        }
    }

    /// `occupancy[r][c]` = index of the cell covering slot `(r, c)`.
    /// Only meaningful for valid tables.
    pub fn occupancy(&self) -> Lattice<usize> {
        let mut occ = Lattice::filled(self.rows, self.cols, usize::MAX);
        for (k, c) in self.cells.iter().enumerate() {
            for r in c.row_start..=c.row_end.min(self.rows.saturating_sub(1)) {
                for col in c.col_start..=c.col_end.min(self.cols.saturating_sub(1)) {
                    occ.set(r, col, k);
                }
            }
        }
        occ
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyGrid { rows: usize, cols: usize },
    IndexOutOfRange { cell: usize },
    Overlap { row: usize, col: usize },
    Gap { row: usize, col: usize },
    DegenerateQuad { cell: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGrid { rows, cols } => write!(f, "empty grid {rows}x{cols}"),
            Violation::IndexOutOfRange { cell } => write!(f, "cell {cell} index out of range"),
            Violation::Overlap { row, col } => write!(f, "overlap at ({row},{col})"),
            Violation::Gap { row, col } => write!(f, "gap at ({row},{col})"),
            Violation::DegenerateQuad { cell } => write!(f, "cell {cell} has a degenerate quad"),
        }
    }
}

/// Lists every way `t` fails to be a rectangular partition. Empty means valid.
pub fn validate_logical_table(t: &LogicalTable) -> Vec<Violation> {
    let mut report = Vec::new();
    if t.rows == 0 || t.cols == 0 {
        report.push(Violation::EmptyGrid { rows: t.rows, cols: t.cols });
        return report;
    }
    let mut count = Lattice::filled(t.rows, t.cols, 0u32);
    for (k, c) in t.cells.iter().enumerate() {
        if c.row_start > c.row_end || c.col_start > c.col_end || c.row_end >= t.rows || c.col_end >= t.cols {
            report.push(Violation::IndexOutOfRange { cell: k });
            continue;
        }
        for r in c.row_start..=c.row_end {
            for col in c.col_start..=c.col_end {
                *count.get_mut(r, col) += 1;
            }
        }
        if let Some(q) = &c.quad {
            if !q.is_finite() || q.signed_area() <= 0.0 {
                report.push(Violation::DegenerateQuad { cell: k });
            }
        }
    }
    for ((row, col), &n) in count.indexed() {
        match n {
            0 => report.push(Violation::Gap { row, col }),
            1 => {}
            _ => report.push(Violation::Overlap { row, col }),
        }
    }
    report
}

/// Row- or column-line anchor used to order unordered query outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    /// Normalized coordinate on the frozen axis.
    pub fixed_coord: f64,
    /// Normalized coordinate on the regressed axis.
    pub free_coord: f64,
    #[serde(deserialize_with = "de_flag")]
    pub positive: bool,
}

fn de_flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    Flag::deserialize(d).map(|f| f.0)
}

impl ReferencePoint {
    pub fn negative(fixed_coord: f64) -> Self {
        ReferencePoint { fixed_coord, free_coord: COORD_SENTINEL, positive: false }
    }
}

/// Ground-truth lattice for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLabel {
    pub dims: GridDims,
    pub image_w: f64,
    pub image_h: f64,
    #[serde(deserialize_with = "flags::vec")]
    pub row_positive: Vec<bool>,
    #[serde(deserialize_with = "flags::vec")]
    pub col_positive: Vec<bool>,
    #[serde(deserialize_with = "flags::lattice")]
    pub vertex_positive: Lattice<bool>,
    pub vertex_x: Lattice<f64>,
    pub vertex_y: Lattice<f64>,
    #[serde(deserialize_with = "flags::lattice")]
    pub down_edge: Lattice<bool>,
    #[serde(deserialize_with = "flags::lattice")]
    pub right_edge: Lattice<bool>,
    pub row_ref: Vec<ReferencePoint>,
    pub col_ref: Vec<ReferencePoint>,
}

/// Model-output-shaped lattice. Row `i` belongs to row query slot `i` and
/// column `j` to column query slot `j`; slots are unordered until sorted by
/// their reference predictions. `down_edge_prob(i, j)` scores the edge from
/// vertex `(i, j)` to the next row line below it in sorted order, and
/// `right_edge_prob(i, j)` the edge to the next column line on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPrediction {
    pub dims: GridDims,
    pub image_w: f64,
    pub image_h: f64,
    pub row_prob: Vec<f64>,
    pub col_prob: Vec<f64>,
    pub vertex_x: Lattice<f64>,
    pub vertex_y: Lattice<f64>,
    pub down_edge_prob: Lattice<f64>,
    pub right_edge_prob: Lattice<f64>,
    pub row_ref_pred: Vec<f64>,
    pub col_ref_pred: Vec<f64>,
}

fn check_lattice<T>(name: &str, l: &Lattice<T>, dims: GridDims) -> Result<()> {
    if l.shape() != (dims.m, dims.n) {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{}, expected {}x{}",
            l.rows(),
            l.cols(),
            dims.m,
            dims.n
        )));
    }
    Ok(())
}

fn check_len<T>(name: &str, v: &[T], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::ShapeMismatch(format!("{name} has {} entries, expected {len}", v.len())));
    }
    Ok(())
}

impl GridLabel {
    pub fn check_shape(&self) -> Result<()> {
        let d = GridDims::new(self.dims.m, self.dims.n)?;
        check_len("row_positive", &self.row_positive, d.m)?;
        check_len("col_positive", &self.col_positive, d.n)?;
        check_len("row_ref", &self.row_ref, d.m)?;
        check_len("col_ref", &self.col_ref, d.n)?;
        check_lattice("vertex_positive", &self.vertex_positive, d)?;
        check_lattice("vertex_x", &self.vertex_x, d)?;
        check_lattice("vertex_y", &self.vertex_y, d)?;
        check_lattice("down_edge", &self.down_edge, d)?;
        check_lattice("right_edge", &self.right_edge, d)
    }

    pub fn positive_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.row_positive.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| i)
    }

    pub fn positive_cols(&self) -> impl Iterator<Item = usize> + '_ {
        self.col_positive.iter().enumerate().filter(|(_, &p)| p).map(|(j, _)| j)
    }
}

impl GridPrediction {
    pub fn check(&self) -> Result<()> {
        let d = GridDims::new(self.dims.m, self.dims.n)?;
        check_len("row_prob", &self.row_prob, d.m)?;
        check_len("col_prob", &self.col_prob, d.n)?;
        check_len("row_ref_pred", &self.row_ref_pred, d.m)?;
        check_len("col_ref_pred", &self.col_ref_pred, d.n)?;
        check_lattice("vertex_x", &self.vertex_x, d)?;
        check_lattice("vertex_y", &self.vertex_y, d)?;
        check_lattice("down_edge_prob", &self.down_edge_prob, d)?;
        check_lattice("right_edge_prob", &self.right_edge_prob, d)?;
        let prob_ok = |v: &f64| (0.0..=1.0).contains(v);
        if !self.row_prob.iter().chain(&self.col_prob).all(prob_ok)
            || !self.down_edge_prob.iter().chain(self.right_edge_prob.iter()).all(prob_ok)
        {
            return Err(Error::ShapeMismatch("probability outside [0,1]".into()));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.vertex_x.iter().chain(self.vertex_y.iter()).all(finite)
            || !self.row_ref_pred.iter().chain(&self.col_ref_pred).all(finite)
        {
            return Err(Error::NonFinite("prediction coordinates"));
        }
        Ok(())
    }

    /// Permutes row query slots: slot `k` of the result is slot `order[k]` of
    /// `self`, together with every per-row array.
    pub fn permute_row_slots(&self, order: &[usize]) -> GridPrediction {
        GridPrediction {
            row_prob: order.iter().map(|&i| self.row_prob[i]).collect(),
            row_ref_pred: order.iter().map(|&i| self.row_ref_pred[i]).collect(),
            vertex_x: self.vertex_x.permute_rows(order),
            vertex_y: self.vertex_y.permute_rows(order),
            down_edge_prob: self.down_edge_prob.permute_rows(order),
            right_edge_prob: self.right_edge_prob.permute_rows(order),
            ..self.clone()
        }
    }

    pub fn permute_col_slots(&self, order: &[usize]) -> GridPrediction {
        GridPrediction {
            col_prob: order.iter().map(|&j| self.col_prob[j]).collect(),
            col_ref_pred: order.iter().map(|&j| self.col_ref_pred[j]).collect(),
            vertex_x: self.vertex_x.permute_cols(order),
            vertex_y: self.vertex_y.permute_cols(order),
            down_edge_prob: self.down_edge_prob.permute_cols(order),
            right_edge_prob: self.right_edge_prob.permute_cols(order),
            ..self.clone()
        }
    }
}

/// Read access to a lattice of positive/negative edges in canonical order.
pub trait EdgeSet {
    fn edge_shape(&self) -> (usize, usize);
    fn down(&self, i: usize, j: usize) -> bool;
    fn right(&self, i: usize, j: usize) -> bool;
}

impl EdgeSet for GridLabel {
    fn edge_shape(&self) -> (usize, usize) {
        (self.dims.m, self.dims.n)
    }
    fn down(&self, i: usize, j: usize) -> bool {
        *self.down_edge.get(i, j)
    }
    fn right(&self, i: usize, j: usize) -> bool {
        *self.right_edge.get(i, j)
    }
}

/// Thresholded edges over an ordered lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub down: Lattice<bool>,
    pub right: Lattice<bool>,
}

impl EdgeMask {
    pub fn new(m: usize, n: usize) -> Self {
        EdgeMask { down: Lattice::filled(m, n, false), right: Lattice::filled(m, n, false) }
    }
}

impl EdgeSet for EdgeMask {
    fn edge_shape(&self) -> (usize, usize) {
        self.down.shape()
    }
    fn down(&self, i: usize, j: usize) -> bool {
        *self.down.get(i, j)
    }
    fn right(&self, i: usize, j: usize) -> bool {
        *self.right.get(i, j)
    }
}

/// Number of positive edges touching vertex `(i, j)` (0..=4).
pub fn incident_positive_edges<G: EdgeSet + ?Sized>(g: &G, i: usize, j: usize) -> Result<u8> {
    let (m, n) = g.edge_shape();
    if i >= m || j >= n {
        return Err(Error::IndexOutOfRange { i, j, m, n });
    }
    let mut count = 0u8;
    if i > 0 && g.down(i - 1, j) {
        count += 1;
    }
    if i + 1 < m && g.down(i, j) {
        count += 1;
    }
    if j > 0 && g.right(i, j - 1) {
        count += 1;
    }
    if j + 1 < n && g.right(i, j) {
        count += 1;
    }
    Ok(count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridStats {
    pub rows: usize,
    pub cols: usize,
    pub vertexes: usize,
    pub edges: usize,
}

pub fn grid_stats(g: &GridLabel) -> GridStats {
    GridStats {
        rows: g.row_positive.iter().filter(|&&p| p).count(),
        cols: g.col_positive.iter().filter(|&&p| p).count(),
        vertexes: g.vertex_positive.iter().filter(|&&p| p).count(),
        edges: g.down_edge.iter().chain(g.right_edge.iter()).filter(|&&p| p).count(),
    }
}
