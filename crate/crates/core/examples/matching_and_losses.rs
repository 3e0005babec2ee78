//! Matching unordered query outputs to ground-truth lines and scoring them
//! with the training objective.

use gridtab::grid_model::GridDims;
use gridtab::label_gen::build_grid_label;
use gridtab::match_loss::{compute_losses, focal_loss, giou, hungarian, FocalParams, LossConfig};
use gridtab::synth::{generate_table, perturb, NoiseParams, SynthParams};
use gridtab::BBox;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
    let a = hungarian(&cost)?;
    println!("assignment {:?}, cost {}", a.pairs, a.total_cost);

    println!("focal(0.5 -> positive) = {:.6}", focal_loss(&[0.5], &[true], FocalParams::default())?);
    println!("giou of disjoint unit boxes = {:.6}", giou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(2.0, 2.0, 3.0, 3.0)));

    let t = generate_table(&SynthParams { rows: (4, 4), cols: (3, 3), ..Default::default() }.with_seed(5))?;
    let label = build_grid_label(&t, GridDims::new(10, 10)?)?;
    let cfg = LossConfig::default();
    for sigma in [0.0, 0.005, 0.02] {
        let pred = perturb(&label, &NoiseParams { seed: 1, coord_sigma: sigma, ..Default::default() })?;
        let r = compute_losses(&pred, &label, &cfg)?;
        println!(
            "sigma {sigma:<5}: cls {:.5} coord {:.5} ref {:.5} edge {:.5} total {:.5}",
            r.cls, r.coord, r.reference, r.edge, r.total
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
