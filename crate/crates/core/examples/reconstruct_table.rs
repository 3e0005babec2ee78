//! Rebuilding a table from grid predictions: select lines, sort them by
//! reference point, threshold edges and flood-fill unit cells.

use gridtab::grid_model::GridDims;
use gridtab::label_gen::build_grid_label;
use gridtab::reconstruct::{reconstruct_with_subgrid, to_html, ReconstructionConfig};
use gridtab::synth::{generate_table, perturb, NoiseParams, SynthParams};
use gridtab::Error;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let params = SynthParams { rows: (3, 3), cols: (3, 3), merge_prob: 0.5, rotation_deg: (12.0, 12.0), ..Default::default() };
    let t = generate_table(&params.with_seed(11))?;
    let label = build_grid_label(&t, GridDims::default())?;

    // query slots arrive shuffled; the reference points restore the order
    let pred = perturb(&label, &NoiseParams { seed: 3, coord_sigma: 0.001, ..Default::default() })?;
    let (back, sub) = reconstruct_with_subgrid(&pred, &ReconstructionConfig::default())?;
    let slots: Vec<usize> = sub.row_lines.iter().map(|l| l.slot).collect();
    println!("row slots in reading order: {slots:?}");
    println!("same structure: {}", back.span_signature() == t.span_signature());
    println!("{}", to_html(&back, false)?);

    // flipping every edge leaves no consistent partition
    let broken = perturb(&label, &NoiseParams { seed: 3, edge_flip_prob: 1.0, ..Default::default() })?;
    match reconstruct_with_subgrid(&broken, &ReconstructionConfig::default()) {
        Err(Error::StructureInconsistency { reason, unit_cells }) => {
            println!("rejected: {reason} ({} unit cells)", unit_cells.len())
        }
        Ok((t, _)) => println!("flipped grid still parsed into {} cells", t.cells.len()),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
