//! Encoding a table as a padded lattice of vertexes and edges, with the
//! per-line reference points used to order queries.

use gridtab::grid_model::{grid_stats, incident_positive_edges, GridDims};
use gridtab::label_gen::{assign_proposal_targets, build_grid_label, build_proposal_lattice};
use gridtab::{BBox, Cell, LogicalTable};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // 2x2 table whose top row is one spanning cell
    let cell = |rs, re, cs, ce, b: [f64; 4]| Cell::new(rs, re, cs, ce).with_quad(BBox::from(b).to_quad());
    let t = LogicalTable {
        rows: 2,
        cols: 2,
        image_w: 100.0,
        image_h: 80.0,
        cells: vec![
            cell(0, 0, 0, 1, [10.0, 10.0, 90.0, 30.0]),
            cell(1, 1, 0, 0, [10.0, 30.0, 40.0, 70.0]),
            cell(1, 1, 1, 1, [40.0, 30.0, 90.0, 70.0]),
        ],
    };
    let label = build_grid_label(&t, GridDims::new(5, 5)?)?;
    let s = grid_stats(&label);
    println!("positive rows {} cols {} vertexes {} edges {}", s.rows, s.cols, s.vertexes, s.edges);
    println!("edges at the top mid-border vertex: {}", incident_positive_edges(&label, 0, 1)?);

    for (i, r) in label.row_ref.iter().enumerate().filter(|(_, r)| r.positive) {
        println!("row line {i}: reference ({:.2}, {:.4})", r.fixed_coord, r.free_coord);
    }

    let proposals = build_proposal_lattice(8, 8)?;
    let targets = assign_proposal_targets(&proposals, &label.row_ref, &label.col_ref);
    let rows: Vec<usize> = targets.rows.iter().flatten().copied().collect();
    println!("row lines land on proposals {rows:?} of {}", proposals.row_proposals.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
