//! Turning dataset annotations into logical tables: cell-level boxes pass
//! through, text-line boxes are widened into row and column bands.

use gridtab::annotation_ingest::{ingest, parse_html_structure, BoxAnn, BoxGranularity, HtmlTokenStream, RawAnnotation};
use gridtab::BBox;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let html: HtmlTokenStream = r#"<table><tr><td colspan="2">Name</td></tr><tr><td>a</td><td>b</td></tr></table>"#.parse()?;
    let structure = parse_html_structure(&html)?;
    println!("{} rows x {} cols", structure.rows, structure.cols);
    for c in &structure.cells {
        println!("  td rows {}..={} cols {}..={}", c.row_start, c.row_end, c.col_start, c.col_end);
    }

    let rect = |x1, y1, x2, y2| Some(BoxAnn::Rect(BBox::new(x1, y1, x2, y2)));
    let cell_level = RawAnnotation {
        id: Some("cells".into()),
        image_w: 200.0,
        image_h: 100.0,
        html: Some(html.clone()),
        boxes: vec![rect(0.0, 0.0, 200.0, 40.0), rect(0.0, 40.0, 100.0, 100.0), rect(100.0, 40.0, 200.0, 100.0)],
        box_granularity: BoxGranularity::CellLevel,
    };
    let t = ingest(&cell_level)?;
    println!("cell-level: {} cells, first quad {:?}", t.cells.len(), t.cells[0].quad.map(|q| q.bbox()));

    // text lines sit inside their cells; separators fall halfway between them
    let text_lines = RawAnnotation {
        id: Some("lines".into()),
        boxes: vec![rect(60.0, 8.0, 140.0, 30.0), rect(20.0, 50.0, 70.0, 90.0), rect(120.0, 55.0, 180.0, 85.0)],
        box_granularity: BoxGranularity::TextLineLevel,
        ..cell_level
    };
    let t = ingest(&text_lines)?;
    for c in t.sorted_cells() {
        let b = c.quad.expect("rebuilt").bbox();
        println!("  ({}, {}) -> [{}, {}, {}, {}]", c.row_start, c.col_start, b.x1, b.y1, b.x2, b.y2);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
