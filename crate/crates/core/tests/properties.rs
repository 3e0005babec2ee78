mod support;

use gridtab::annotation_ingest::{normalize_textline_boxes, parse_html_structure};
use gridtab::grid_model::{grid_stats, incident_positive_edges, validate_logical_table, GridDims};
use gridtab::label_gen::build_grid_label;
use gridtab::match_loss::{focal_loss, giou, hungarian, matching_cost, total_loss, FocalParams, LossTerms, LossWeights, MatchWeights};
use gridtab::metrics::{
    adjacency_relations, cell_detection_fscore, ordered_tree_distance, teds, teds_relabel, teds_tree, tree_edit_distance,
    DEFAULT_IOU_THRESH,
};
use gridtab::reconstruct::{reconstruct_table, to_html, ReconstructionConfig};
use gridtab::synth::{generate_table, perturb, NoiseParams, SynthParams};
use gridtab::{BBox, LogicalTable};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn synth_strategy() -> impl Strategy<Value = SynthParams> {
    (any::<u64>(), 1usize..=20, 1usize..=20, 0.0..=0.5f64, 0.0..=30.0f64, -0.05..=0.05f64, 0.0..=8.0f64).prop_map(
        |(seed, r, c, merge_prob, rot, curve_amp, jitter_px)| SynthParams {
            seed,
            rows: (1, r),
            cols: (1, c),
            merge_prob,
            rotation_deg: (-rot, rot),
            curve_amp,
            jitter_px,
            ..Default::default()
        },
    )
}

fn table_strategy() -> impl Strategy<Value = LogicalTable> {
    synth_strategy().prop_map(|p| generate_table(&p).expect("valid params"))
}

fn flat_table_strategy() -> impl Strategy<Value = LogicalTable> {
    synth_strategy().prop_map(|p| {
        generate_table(&SynthParams { rotation_deg: (0.0, 0.0), curve_amp: 0.0, empty_prob: 0.0, ..p }).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn synth_tables_are_valid(t in table_strategy()) {
        prop_assert!(validate_logical_table(&t).is_empty());
    }

    #[test]
    fn label_structure(t in table_strategy()) {
        let dims = GridDims::new(t.rows + 3, t.cols + 2).unwrap();
        let g = build_grid_label(&t, dims).unwrap();
        let (m, n) = (dims.m, dims.n);
        // an edge endpoint is a corner, or a point a border runs straight through
        let corner_or_straight = |i: usize, j: usize| {
            let up = i > 0 && *g.down_edge.get(i - 1, j);
            let down = *g.down_edge.get(i, j);
            let left = j > 0 && *g.right_edge.get(i, j - 1);
            let right = *g.right_edge.get(i, j);
            *g.vertex_positive.get(i, j) || (up && down && !left && !right) || (left && right && !up && !down)
        };
        let mut vertexes = 0;
        let mut edges = 0;
        for i in 0..m {
            for j in 0..n {
                let v = *g.vertex_positive.get(i, j);
                vertexes += usize::from(v);
                if *g.down_edge.get(i, j) {
                    edges += 1;
                    prop_assert!(corner_or_straight(i, j) && corner_or_straight(i + 1, j));
                }
                if *g.right_edge.get(i, j) {
                    edges += 1;
                    prop_assert!(corner_or_straight(i, j) && corner_or_straight(i, j + 1));
                }
                let padded = i > t.rows || j > t.cols;
                if padded {
                    prop_assert!(!v && !*g.down_edge.get(i, j) && !*g.right_edge.get(i, j));
                    prop_assert!(*g.vertex_x.get(i, j) == -1.0 && *g.vertex_y.get(i, j) == -1.0);
                }
                if v {
                    let k = incident_positive_edges(&g, i, j).unwrap();
                    let extreme = (i == 0 || i == t.rows) && (j == 0 || j == t.cols);
                    if extreme {
                        prop_assert_eq!(k, 2);
                    } else {
                        prop_assert!(k >= 3);
                    }
                }
            }
        }
        let s = grid_stats(&g);
        prop_assert_eq!((s.rows, s.cols, s.vertexes, s.edges), (t.rows + 1, t.cols + 1, vertexes, edges));
    }

    #[test]
    fn references_strictly_increase(t in table_strategy()) {
        let g = build_grid_label(&t, GridDims::default()).unwrap();
        let rows: Vec<f64> = g.row_ref.iter().filter(|r| r.positive).map(|r| r.free_coord).collect();
        let cols: Vec<f64> = g.col_ref.iter().filter(|r| r.positive).map(|r| r.free_coord).collect();
        prop_assert!(rows.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn perfect_prediction_round_trips(t in table_strategy(), noise_seed in any::<u64>()) {
        let g = build_grid_label(&t, GridDims::default()).unwrap();
        let back = reconstruct_table(&perturb(&g, &NoiseParams::exact(noise_seed)).unwrap(), &ReconstructionConfig::default()).unwrap();
        prop_assert_eq!(back.span_signature(), t.span_signature());
        for (a, b) in t.sorted_cells().iter().zip(back.sorted_cells()) {
            prop_assert!(a.quad.unwrap().max_corner_distance(&b.quad.unwrap()) <= 1e-6);
        }
    }

    #[test]
    fn slot_order_is_irrelevant(t in table_strategy(), seed in any::<u64>()) {
        let g = build_grid_label(&t, GridDims::new(25, 25).unwrap()).unwrap();
        let noise = NoiseParams { coord_sigma: 0.001, edge_flip_prob: 0.01, shuffle_slots: false, ..NoiseParams::exact(seed) };
        let pred = perturb(&g, &noise).unwrap();
        let mut r = support::rng(seed);
        let mut rows: Vec<usize> = (0..25).collect();
        let mut cols: Vec<usize> = (0..25).collect();
        rows.shuffle(&mut r);
        cols.shuffle(&mut r);
        let rc = ReconstructionConfig::default();
        let a = reconstruct_table(&pred, &rc);
        let b = reconstruct_table(&pred.permute_row_slots(&rows).permute_col_slots(&cols), &rc);
        prop_assert_eq!(&a, &b);
        // every successful output is a valid partition
        if let Ok(t) = a {
            prop_assert!(validate_logical_table(&t).is_empty());
        }
    }

    #[test]
    fn noisy_reconstruction_is_deterministic(t in table_strategy(), seed in any::<u64>(), flip in 0.0..0.2f64) {
        let g = build_grid_label(&t, GridDims::default()).unwrap();
        let noise = NoiseParams { seed, coord_sigma: 0.003, edge_flip_prob: flip, line_prob_noise: 0.3, ..Default::default() };
        let p1 = perturb(&g, &noise).unwrap();
        let p2 = perturb(&g, &noise).unwrap();
        prop_assert_eq!(&p1, &p2);
        prop_assert!(p1.check().is_ok());
        let rc = ReconstructionConfig::default();
        let a = reconstruct_table(&p1, &rc).map(|t| serde_json::to_string(&t).unwrap());
        let b = reconstruct_table(&p2, &rc).map(|t| serde_json::to_string(&t).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn html_round_trip(t in table_strategy()) {
        let parsed = parse_html_structure(&to_html(&t, false).unwrap()).unwrap();
        let spans: Vec<_> = parsed.cells.iter().map(|c| c.spans()).collect();
        prop_assert_eq!((parsed.rows, parsed.cols), (t.rows, t.cols));
        prop_assert_eq!(spans, t.span_signature());
    }

    #[test]
    fn textline_quads_are_band_intersections(t in flat_table_strategy(), inset_seed in any::<u64>()) {
        let mut r = support::rng(inset_seed);
        let structure = parse_html_structure(&to_html(&t, false).unwrap()).unwrap();
        let by_span: std::collections::HashMap<_, _> = t.cells.iter().map(|c| (c.spans(), c.quad.unwrap().bbox())).collect();
        let boxes: Vec<Option<BBox>> = structure
            .cells
            .iter()
            .map(|c| {
                let b = by_span[&c.spans()];
                let (dx, dy) = (b.width() * r.random_range(0.0..0.3), b.height() * r.random_range(0.0..0.3));
                Some(BBox::new(b.x1 + dx, b.y1 + dy, b.x2 - dx, b.y2 - dy))
            })
            .collect();
        let out = normalize_textline_boxes(&structure, &boxes, t.image_w, t.image_h).unwrap();
        let mut xs = vec![None; out.cols + 1];
        let mut ys = vec![None; out.rows + 1];
        for c in &out.cells {
            let q = c.quad.unwrap();
            prop_assert!(q.is_axis_aligned());
            let b = q.bbox();
            for (k, v) in [(c.col_start, b.x1), (c.col_end + 1, b.x2)] {
                prop_assert!(xs[k].is_none_or(|s| s == v));
                xs[k] = Some(v);
            }
            for (k, v) in [(c.row_start, b.y1), (c.row_end + 1, b.y2)] {
                prop_assert!(ys[k].is_none_or(|s| s == v));
                ys[k] = Some(v);
            }
        }
        let xs: Vec<f64> = xs.into_iter().map(Option::unwrap).collect();
        let ys: Vec<f64> = ys.into_iter().map(Option::unwrap).collect();
        prop_assert!(xs.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hungarian_matches_brute_force(rows in 1usize..=6, cols in 1usize..=6, seed in any::<u64>()) {
        let mut r = support::rng(seed);
        let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let a = hungarian(&cost).unwrap();
        prop_assert!((a.total_cost - support::brute_force_assignment(&cost)).abs() < 1e-9);
        let mut seen_p: Vec<usize> = a.pairs.iter().map(|p| p.0).collect();
        let mut seen_t: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
        seen_p.dedup();
        seen_t.sort_unstable();
        seen_t.dedup();
        prop_assert_eq!((seen_p.len(), seen_t.len()), (rows.min(cols), rows.min(cols)));
    }

    #[test]
    fn perfect_queries_match_through_any_permutation(k in 1usize..12, extra in 0usize..6, seed in any::<u64>()) {
        let mut r = support::rng(seed);
        let mut gt: Vec<f64> = (0..k).map(|i| (i as f64 + r.random_range(0.1..0.9)) / k as f64).collect();
        gt.sort_by(f64::total_cmp);
        // slots hold the labels in shuffled order, plus unused slots
        let mut order: Vec<usize> = (0..k + extra).collect();
        order.shuffle(&mut r);
        let prob: Vec<f64> = order.iter().map(|&s| if s < k { 1.0 } else { 0.0 }).collect();
        let refs: Vec<f64> = order.iter().map(|&s| if s < k { gt[s] } else { 5.0 }).collect();
        let a = hungarian(&matching_cost(&prob, &refs, &gt, MatchWeights::default()).unwrap()).unwrap();
        for (slot, target) in a.pairs {
            prop_assert_eq!(order[slot], target);
        }
    }

    #[test]
    fn focal_is_nonnegative_and_decreasing(p in 0.0..1.0f64, q in 0.0..1.0f64, positive in any::<bool>()) {
        let f = |x: f64| focal_loss(&[x], &[positive], FocalParams::default()).unwrap();
        prop_assert!(f(p) >= 0.0);
        // p_t is p for positives and 1 - p for negatives
        let (pt_a, pt_b) = if positive { (p, q) } else { (1.0 - p, 1.0 - q) };
        if pt_a < pt_b {
            prop_assert!(f(p) >= f(q));
        }
    }

    #[test]
    fn giou_properties(a in prop::array::uniform4(0.0..10.0f64), b in prop::array::uniform4(0.0..10.0f64)) {
        let bx = |v: [f64; 4]| BBox::new(v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]) + 0.01, v[1].max(v[3]) + 0.01);
        let (a, b) = (bx(a), bx(b));
        prop_assert!((giou(&a, &b) - giou(&b, &a)).abs() < 1e-12);
        prop_assert!(giou(&a, &b) <= a.iou(&b) + 1e-12);
        prop_assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_linear(t in prop::array::uniform4(0.0..10.0f64), which in 0usize..4, delta in 0.0..3.0f64) {
        let w = LossWeights::default();
        let terms = |v: [f64; 4]| LossTerms { cls: v[0], coord: v[1], reference: v[2], edge: v[3] };
        let mut bumped = t;
        bumped[which] += delta;
        let lambda = [w.lambda_cls, w.lambda_coord, w.lambda_ref, w.lambda_edge][which];
        let diff = total_loss(&terms(bumped), &w).unwrap() - total_loss(&terms(t), &w).unwrap();
        prop_assert!((diff - lambda * delta).abs() < 1e-9);
    }

    #[test]
    fn ted_with_content_matches_brute_force(seed in any::<u64>()) {
        let mut r = support::rng(seed);
        let a = support::random_teds_tree(&mut r, 6, true);
        let b = support::random_teds_tree(&mut r, 6, true);
        let oracle = support::brute_force_ted(&a, &b, &|x, y| teds_relabel(x, y, false));
        prop_assert!((tree_edit_distance(&a, &b, false) - oracle).abs() < 1e-9);
        let ta = teds(&a, &b, false);
        prop_assert!((0.0..=1.0).contains(&ta));
        prop_assert!((ta - teds(&b, &a, false)).abs() < 1e-12);
    }

    #[test]
    fn ted_unit_labels_match_brute_force(seed in any::<u64>()) {
        let mut r = support::rng(seed);
        let a = support::random_tree(&mut r, 6, |r, _| r.random_range(0..3u8));
        let b = support::random_tree(&mut r, 6, |r, _| r.random_range(0..3u8));
        let relabel = |x: &u8, y: &u8| f64::from(u8::from(x != y));
        prop_assert_eq!(ordered_tree_distance(&a, &b, relabel), support::brute_force_ted(&a, &b, &relabel));
    }

    #[test]
    fn deleting_cells_never_raises_teds(t in table_strategy(), seed in any::<u64>()) {
        let full = teds_tree(&t);
        let mut r = support::rng(seed);
        let mut kept = t.clone();
        let mut last = 1.0;
        for _ in 0..kept.cells.len().min(5) {
            let k = r.random_range(0..kept.cells.len());
            kept.cells.remove(k);
            let score = teds(&teds_tree(&kept), &full, true);
            prop_assert!(score <= last + 1e-12);
            last = score;
        }
    }

    #[test]
    fn adjacency_bound(t in table_strategy()) {
        prop_assert!(adjacency_relations(&t, false).len() <= 2 * t.rows * t.cols);
        prop_assert!(adjacency_relations(&t, false).iter().all(|r| r.a != r.b));
    }
}

#[test]
fn detection_fscore_degrades_monotonically() {
    let rc = ReconstructionConfig::default();
    let mut means = Vec::new();
    for rate in [0.0, 0.02, 0.05, 0.10] {
        let mut sum = 0.0;
        for k in 0..200u64 {
            let p = SynthParams { rows: (1, 20), cols: (1, 20), merge_prob: 0.4, rotation_deg: (-30.0, 30.0), curve_amp: 0.03, ..Default::default() }
                .with_seed(k);
            let t = generate_table(&p).unwrap();
            let g = build_grid_label(&t, GridDims::default()).unwrap();
            let pred = perturb(&g, &NoiseParams { edge_flip_prob: rate, ..NoiseParams::exact(k) }).unwrap();
            sum += reconstruct_table(&pred, &rc).map_or(0.0, |b| cell_detection_fscore(&b.cells, &t.cells, DEFAULT_IOU_THRESH).f1);
        }
        means.push(sum / 200.0);
    }
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
    assert_eq!(means[0], 1.0);
}

#[test]
fn a_thousand_seeds_validate() {
    for k in 0..1000 {
        let p = SynthParams { rows: (1, 20), cols: (1, 20), merge_prob: 0.4, rotation_deg: (-30.0, 30.0), curve_amp: 0.05, ..Default::default() };
        assert!(validate_logical_table(&generate_table(&p.with_seed(k)).unwrap()).is_empty(), "seed {k}");
    }
}
