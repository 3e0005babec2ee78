//! Scoring a predicted table against ground truth with TEDS, adjacency
//! relations and cell detection.

use gridtab::metrics::{adjacency_f1, adjacency_relations, cell_detection_fscore, teds_tables, CellMatch, DEFAULT_IOU_THRESH};
use gridtab::{BBox, Cell, LogicalTable};

fn table(spans: &[(usize, usize, usize, usize, &str)]) -> LogicalTable {
    let cells = spans
        .iter()
        .map(|&(rs, re, cs, ce, text)| {
            let b = BBox::new(cs as f64 * 50.0, rs as f64 * 20.0, (ce + 1) as f64 * 50.0, (re + 1) as f64 * 20.0);
            Cell::new(rs, re, cs, ce).with_quad(b.to_quad()).with_content(text)
        })
        .collect();
    LogicalTable { rows: 2, cols: 2, image_w: 100.0, image_h: 40.0, cells }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let gt = table(&[(0, 0, 0, 0, "Year"), (0, 0, 1, 1, "Total"), (1, 1, 0, 0, "2020"), (1, 1, 1, 1, "17")]);
    // the prediction merges the header and misreads one value
    let pred = table(&[(0, 0, 0, 1, "Year Total"), (1, 1, 0, 0, "2020"), (1, 1, 1, 1, "11")]);

    println!("TEDS        {:.4}", teds_tables(&pred, &gt, false));
    println!("TEDS-Struct {:.4}", teds_tables(&pred, &gt, true));
    println!("relations in ground truth: {}", adjacency_relations(&gt, false).len());
    for (name, mode) in [("iou", CellMatch::default()), ("logical", CellMatch::Logical)] {
        let p = adjacency_f1(&pred, &gt, mode, false)?;
        println!("adjacency ({name:7}) P {:.3} R {:.3} F1 {:.3}", p.precision, p.recall, p.f1);
    }
    let f = cell_detection_fscore(&pred.cells, &gt.cells, DEFAULT_IOU_THRESH);
    println!("detection @ IoU {DEFAULT_IOU_THRESH}: P {:.3} R {:.3} F1 {:.3}", f.precision, f.recall, f.f1);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
