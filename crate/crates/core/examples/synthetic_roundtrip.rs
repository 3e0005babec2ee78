//! Synthetic tables through the whole pipeline, clean and with growing
//! edge noise.

use gridtab::cli::roundtrip_one;
use gridtab::grid_model::GridDims;
use gridtab::metrics::{CellMatch, DEFAULT_IOU_THRESH};
use gridtab::reconstruct::ReconstructionConfig;
use gridtab::synth::{doc_seed, NoiseParams, SynthParams};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let base = SynthParams { rows: (1, 15), cols: (1, 15), merge_prob: 0.3, rotation_deg: (-30.0, 30.0), curve_amp: 0.03, ..Default::default() };
    let rc = ReconstructionConfig::default();
    for flip in [0.0, 0.01, 0.03] {
        let (mut exact, mut adjacency) = (0, 0.0);
        let n = 100;
        for k in 0..n {
            let p = base.clone().with_seed(doc_seed(1, k));
            let noise = NoiseParams { seed: k, edge_flip_prob: flip, ..Default::default() };
            // a rejected reconstruction counts as zero
            if let Ok(r) = roundtrip_one(&p, &noise, GridDims::default(), &rc, CellMatch::default(), DEFAULT_IOU_THRESH) {
                exact += usize::from(r.structure_exact);
                adjacency += r.adjacency_f1;
            }
        }
        println!("edge flips {flip:<4}: {exact}/{n} exact, mean adjacency F1 {:.3}", adjacency / n as f64);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
