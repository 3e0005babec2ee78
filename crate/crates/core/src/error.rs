use thiserror::Error;

use crate::grid_model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid dims {m}x{n} invalid: need at least 2 row lines and 2 column lines")]
    InvalidDims { m: usize, n: usize },

    #[error("table of {rows}x{cols} cells does not fit a {m}x{n} grid")]
    DimsTooSmall { rows: usize, cols: usize, m: usize, n: usize },

    #[error("invalid table: {}", format_violations(.0))]
    InvalidTable(Vec<Violation>),

    #[error("cell {0} has no quad")]
    MissingGeometry(usize),

    #[error("lattice index ({i},{j}) outside {m}x{n}")]
    IndexOutOfRange { i: usize, j: usize, m: usize, n: usize },

    #[error("{axis} line {index} is positive but has no positive vertex")]
    EmptyLine { axis: Axis, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty cost matrix")]
    EmptyMatrix,

    #[error("negative loss weight {0}")]
    NegativeWeight(&'static str),

    #[error("cell {cell} references negative vertex ({i},{j})")]
    NegativeCorner { cell: usize, i: usize, j: usize },

    #[error("html: {0}")]
    Html(String),

    #[error("annotation: {0}")]
    Annotation(String),

    #[error("degenerate table: {rows} row line(s) and {cols} column line(s) selected")]
    DegenerateTable { rows: usize, cols: usize },

    #[error("structure inconsistency: {reason} (unit cells {unit_cells:?})")]
    StructureInconsistency {
        reason: String,
        unit_cells: Vec<(usize, usize)>,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Row => "row",
            Axis::Column => "column",
        })
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
