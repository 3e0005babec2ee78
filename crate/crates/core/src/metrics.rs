//! Evaluation: TEDS / TEDS-Struct, cell adjacency-relation F1 and cell
//! detection F-score.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{quad_iou, Quad};
use crate::grid_model::{Cell, LogicalTable};
use crate::match_loss::hungarian;

/// Default IoU threshold for cell matching.
pub const DEFAULT_IOU_THRESH: f64 = 0.6;

/// Ordered tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    pub labels: Vec<L>,
    pub children: Vec<Vec<usize>>,
}

impl<L> Tree<L> {
    pub fn leaf(label: L) -> Self {
        Tree { labels: vec![label], children: vec![Vec::new()] }
    }

    pub fn add_child(&mut self, parent: usize, label: L) -> usize {
        let id = self.labels.len();
        self.labels.push(label);
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Nodes in postorder.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        if self.is_empty() {
            return out;
        }
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, next)) = stack.pop() {
            if next < self.children[node].len() {
                stack.push((node, next + 1));
                stack.push((self.children[node][next], 0));
            } else {
                out.push(node);
            }
        }
        out
    }
}

struct Prepared {
    /// arena id of the node with postorder number k (1-based; index 0 unused)
    node: Vec<usize>,
    /// postorder number of the leftmost leaf descendant
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

fn prepare<L>(t: &Tree<L>) -> Prepared {
    let order = t.postorder();
    let n = order.len();
    let mut post_of = vec![0usize; n];
    for (k, &id) in order.iter().enumerate() {
        post_of[id] = k + 1;
    }
    let mut node = vec![0usize; n + 1];
    let mut lml = vec![0usize; n + 1];
    for (k, &id) in order.iter().enumerate() {
        node[k + 1] = id;
        lml[k + 1] = match t.children[id].first() {
            Some(&c) => lml[post_of[c]],
            None => k + 1,
        };
    }
    // a keyroot is the highest node sharing its leftmost leaf
    let mut highest = vec![0usize; n + 1];
    for k in 1..=n {
        highest[lml[k]] = k;
    }
    let mut keyroots: Vec<usize> = (1..=n).filter(|&k| highest[lml[k]] == k).collect();
    keyroots.sort_unstable();
    Prepared { node, lml, keyroots }
}

/// Ordered tree edit distance (Zhang-Shasha) with unit insert/delete cost and
/// the given relabel cost.
pub fn ordered_tree_distance<L>(a: &Tree<L>, b: &Tree<L>, relabel: impl Fn(&L, &L) -> f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return (a.len() + b.len()) as f64;
    }
    let pa = prepare(a);
    let pb = prepare(b);
    let (n1, n2) = (a.len(), b.len());
    let mut td = vec![vec![0.0f64; n2 + 1]; n1 + 1];
    let mut fd = vec![vec![0.0f64; n2 + 2]; n1 + 2];

    for &i in &pa.keyroots {
        for &j in &pb.keyroots {
            let (li, lj) = (pa.lml[i], pb.lml[j]);
            let ioff = li - 1;
            let joff = lj - 1;
            let m = i - ioff;
            let n = j - joff;
            fd[0][0] = 0.0;
            for x in 1..=m {
                fd[x][0] = fd[x - 1][0] + 1.0;
            }
            for y in 1..=n {
                fd[0][y] = fd[0][y - 1] + 1.0;
            }
            for x in 1..=m {
                let xi = x + ioff;
                for y in 1..=n {
                    let yj = y + joff;
                    let del = fd[x - 1][y] + 1.0;
                    let ins = fd[x][y - 1] + 1.0;
                    if pa.lml[xi] == li && pb.lml[yj] == lj {
                        let ren = fd[x - 1][y - 1] + relabel(&a.labels[pa.node[xi]], &b.labels[pb.node[yj]]);
                        let v = del.min(ins).min(ren);
                        fd[x][y] = v;
                        td[xi][yj] = v;
                    } else {
                        let p = pa.lml[xi] - 1 - ioff;
                        let q = pb.lml[yj] - 1 - joff;
                        fd[x][y] = del.min(ins).min(fd[p][q] + td[xi][yj]);
                    }
                }
            }
        }
    }
    td[n1][n2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Table,
    Tr,
    Td,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TedsNode {
    pub tag: Tag,
    pub colspan: usize,
    pub rowspan: usize,
    pub content: Option<String>,
}

impl TedsNode {
    pub fn new(tag: Tag) -> Self {
        TedsNode { tag, colspan: 1, rowspan: 1, content: None }
    }
}

pub type TedsTree = Tree<TedsNode>;

/// `table > tr > td` tree of a table; cells sit in their anchor row.
pub fn teds_tree(t: &LogicalTable) -> TedsTree {
    let mut tree = Tree::leaf(TedsNode::new(Tag::Table));
    let rows: Vec<usize> = (0..t.rows).map(|_| tree.add_child(0, TedsNode::new(Tag::Tr))).collect();
    for c in t.sorted_cells() {
        tree.add_child(
            rows[c.row_start],
            TedsNode { tag: Tag::Td, colspan: c.colspan(), rowspan: c.rowspan(), content: c.content.clone() },
        );
    }
    tree
}

/// Character Levenshtein distance divided by the longer length.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.trim().chars().collect();
    let b: Vec<char> = b.trim().chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[b.len()] as f64 / longest as f64).min(1.0)
}

/// Relabel cost of the TEDS cost model.
pub fn teds_relabel(a: &TedsNode, b: &TedsNode, struct_only: bool) -> f64 {
    if a.tag != b.tag {
        return 1.0;
    }
    if a.tag != Tag::Td {
        return 0.0;
    }
    if a.colspan != b.colspan || a.rowspan != b.rowspan {
        return 1.0;
    }
    if struct_only {
        return 0.0;
    }
    normalized_levenshtein(a.content.as_deref().unwrap_or(""), b.content.as_deref().unwrap_or(""))
}

pub fn tree_edit_distance(a: &TedsTree, b: &TedsTree, struct_only: bool) -> f64 {
    ordered_tree_distance(a, b, |x, y| teds_relabel(x, y, struct_only))
}

/// `1 - TED / max(|a|, |b|)`, floored at 0 (a distance can exceed the larger
/// size when the shapes disagree).
pub fn teds(a: &TedsTree, b: &TedsTree, struct_only: bool) -> f64 {
    let size = a.len().max(b.len());
    if size == 0 {
        return 1.0;
    }
    (1.0 - tree_edit_distance(a, b, struct_only) / size as f64).max(0.0)
}

pub fn teds_tables(pred: &LogicalTable, gt: &LogicalTable, struct_only: bool) -> f64 {
    teds(&teds_tree(pred), &teds_tree(gt), struct_only)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Neighbor pair. `a` is the left (horizontal) or upper (vertical) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AdjacencyRelation {
    pub a: usize,
    pub b: usize,
    pub direction: Direction,
}

/// Relations between cells sharing a boundary segment. With `skip_empty`,
/// cells without text are transparent: each non-empty cell links to the
/// nearest non-empty cell to its right / below along each row / column.
pub fn adjacency_relations(t: &LogicalTable, skip_empty: bool) -> BTreeSet<AdjacencyRelation> {
    let mut out = BTreeSet::new();
    if t.rows == 0 || t.cols == 0 {
        return out;
    }
    let occ = t.occupancy();
    let keep = |k: usize| !skip_empty || t.cells[k].has_text();
    for (a, cell) in t.cells.iter().enumerate() {
        if !keep(a) {
            continue;
        }
        for r in cell.row_start..=cell.row_end {
            let mut c = cell.col_end + 1;
            while c < t.cols {
                let k = *occ.get(r, c);
                if keep(k) {
                    out.insert(AdjacencyRelation { a, b: k, direction: Direction::Horizontal });
                    break;
                }
                c = t.cells[k].col_end + 1;
            }
        }
        for c in cell.col_start..=cell.col_end {
            let mut r = cell.row_end + 1;
            while r < t.rows {
                let k = *occ.get(r, c);
                if keep(k) {
                    out.insert(AdjacencyRelation { a, b: k, direction: Direction::Vertical });
                    break;
                }
                r = t.cells[k].row_end + 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

impl Prf {
    /// Empty denominators give 0, except that an empty prediction of an
    /// empty ground truth is perfect.
    pub fn from_counts(tp: usize, predicted: usize, ground_truth: usize) -> Self {
        if predicted == 0 && ground_truth == 0 {
            return Prf { precision: 1.0, recall: 1.0, f1: 1.0, true_positives: 0, predicted: 0, ground_truth: 0 };
        }
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, ground_truth);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1, true_positives: tp, predicted, ground_truth }
    }
}

/// One-to-one matching by IoU: maximizes total IoU (Hungarian, solved per
/// connected group of overlapping cells) and keeps pairs with IoU >= `thresh`.
/// Returns `(pred, gt, iou)` triples.
pub fn match_quads(pred: &[Quad], gt: &[Quad], thresh: f64) -> Vec<(usize, usize, f64)> {
    let gt_boxes: Vec<_> = gt.iter().map(Quad::bbox).collect();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (p, q) in pred.iter().enumerate() {
        let pb = q.bbox();
        for (g, gb) in gt_boxes.iter().enumerate() {
            if pb.overlaps(gb) {
                let iou = quad_iou(q, &gt[g]);
                if iou > 0.0 {
                    edges.push((p, g, iou));
                }
            }
        }
    }

    // union-find over pred ids 0..P and gt ids P..P+G
    let np = pred.len();
    let mut parent: Vec<usize> = (0..np + gt.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(p, g, _) in &edges {
        let (a, b) = (find(&mut parent, p), find(&mut parent, np + g));
        if a != b {
            parent[a] = b;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for &(p, g, _) in &edges {
        let root = find(&mut parent, p);
        let entry = groups.entry(root).or_default();
        if !entry.0.contains(&p) {
            entry.0.push(p);
        }
        if !entry.1.contains(&g) {
            entry.1.push(g);
        }
    }
    let iou_of: std::collections::HashMap<(usize, usize), f64> = edges.iter().map(|&(p, g, v)| ((p, g), v)).collect();

    let mut out = Vec::new();
    for (_, (ps, gs)) in groups {
        let cost: Vec<Vec<f64>> =
            ps.iter().map(|&p| gs.iter().map(|&g| 1.0 - iou_of.get(&(p, g)).copied().unwrap_or(0.0)).collect()).collect();
        let assignment = hungarian(&cost).expect("non-empty finite group");
        for (pi, gi) in assignment.pairs {
            let (p, g) = (ps[pi], gs[gi]);
            let iou = iou_of.get(&(p, g)).copied().unwrap_or(0.0);
            if iou >= thresh {
                out.push((p, g, iou));
            }
        }
    }
    out.sort_by_key(|&(p, g, _)| (p, g));
    out
}

/// Cell detection precision/recall/F1 at an IoU threshold.
/// Cells without quads never match.
pub fn cell_detection_fscore(pred: &[Cell], gt: &[Cell], iou_thresh: f64) -> Prf {
    let pq: Vec<(usize, Quad)> = pred.iter().enumerate().filter_map(|(k, c)| c.quad.map(|q| (k, q))).collect();
    let gq: Vec<(usize, Quad)> = gt.iter().enumerate().filter_map(|(k, c)| c.quad.map(|q| (k, q))).collect();
    let pquads: Vec<Quad> = pq.iter().map(|x| x.1).collect();
    let gquads: Vec<Quad> = gq.iter().map(|x| x.1).collect();
    let tp = match_quads(&pquads, &gquads, iou_thresh).len();
    Prf::from_counts(tp, pred.len(), gt.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CellMatch {
    /// IoU-based one-to-one matching of cell quads.
    Iou { thresh: f64 },
    /// Cells match when their anchors `(row_start, col_start)` coincide.
    Logical,
}

impl Default for CellMatch {
    fn default() -> Self {
        CellMatch::Iou { thresh: DEFAULT_IOU_THRESH }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("cell {cell} of the {side} table has no quad")]
    MissingQuad { side: &'static str, cell: usize },
}

/// Relation-based precision/recall/F1. A predicted relation counts when both
/// endpoints are matched and the ground truth holds the same relation.
pub fn adjacency_f1(
    pred: &LogicalTable,
    gt: &LogicalTable,
    mode: CellMatch,
    skip_empty: bool,
) -> Result<Prf, MetricError> {
    let pairs: Vec<(usize, usize)> = match mode {
        CellMatch::Iou { thresh } => {
            let quads = |t: &LogicalTable, side: &'static str| {
                t.cells
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c.quad.ok_or(MetricError::MissingQuad { side, cell: k }))
                    .collect::<Result<Vec<_>, _>>()
            };
            let (pq, gq) = (quads(pred, "predicted")?, quads(gt, "ground-truth")?);
            match_quads(&pq, &gq, thresh).into_iter().map(|(p, g, _)| (p, g)).collect()
        }
        CellMatch::Logical => {
            let anchors: std::collections::HashMap<(usize, usize), usize> =
                gt.cells.iter().enumerate().map(|(k, c)| ((c.row_start, c.col_start), k)).collect();
            pred.cells
                .iter()
                .enumerate()
                .filter_map(|(k, c)| anchors.get(&(c.row_start, c.col_start)).map(|&g| (k, g)))
                .collect()
        }
    };
    let mut to_gt = vec![None; pred.cells.len()];
    for (p, g) in pairs {
        to_gt[p] = Some(g);
    }
    let pred_rel = adjacency_relations(pred, skip_empty);
    let gt_rel = adjacency_relations(gt, skip_empty);
    let tp = pred_rel
        .iter()
        .filter(|r| match (to_gt[r.a], to_gt[r.b]) {
            (Some(a), Some(b)) => gt_rel.contains(&AdjacencyRelation { a, b, direction: r.direction }),
            _ => false,
        })
        .count();
    Ok(Prf::from_counts(tp, pred_rel.len(), gt_rel.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn table(rows: usize, cols: usize, spans: &[(usize, usize, usize, usize)]) -> LogicalTable {
        LogicalTable {
            rows,
            cols,
            image_w: 100.0,
            image_h: 100.0,
            cells: spans
                .iter()
                .map(|&(rs, re, cs, ce)| {
                    Cell::new(rs, re, cs, ce).with_quad(
                        BBox::new(cs as f64 * 10.0, rs as f64 * 10.0, (ce + 1) as f64 * 10.0, (re + 1) as f64 * 10.0)
                            .to_quad(),
                    )
                })
                .collect(),
        }
    }

    fn full2x2() -> LogicalTable {
        table(2, 2, &[(0, 0, 0, 0), (0, 0, 1, 1), (1, 1, 0, 0), (1, 1, 1, 1)])
    }

    fn merged2x2() -> LogicalTable {
        table(2, 2, &[(0, 0, 0, 1), (1, 1, 0, 0), (1, 1, 1, 1)])
    }

    #[test]
    fn ted_basics() {
        let a = teds_tree(&full2x2());
        assert_eq!(tree_edit_distance(&a, &a, false), 0.0);
        assert_eq!(teds(&a, &a, true), 1.0);
        let single = Tree::leaf(TedsNode::new(Tag::Table));
        let mut two = single.clone();
        two.add_child(0, TedsNode::new(Tag::Tr));
        assert_eq!(tree_edit_distance(&single, &two, true), 1.0);
        assert_eq!(teds(&single, &two, true), 0.5);
    }

    #[test]
    fn ted_merged_vs_full() {
        // delete one td and relabel the other to colspan 2: cost 2
        let d = tree_edit_distance(&teds_tree(&full2x2()), &teds_tree(&merged2x2()), true);
        assert_eq!(d, 2.0);
    }

    #[test]
    fn content_cost() {
        assert_eq!(normalized_levenshtein("abc", "abc"), 0.0);
        assert_eq!(normalized_levenshtein("kitten", "sitting"), 3.0 / 7.0);
        assert_eq!(normalized_levenshtein(" a ", "a"), 0.0);
        assert_eq!(normalized_levenshtein("", "xy"), 1.0);
        let mut a = full2x2();
        a.cells[0].content = Some("ab".into());
        let mut b = full2x2();
        b.cells[0].content = Some("ac".into());
        assert_eq!(tree_edit_distance(&teds_tree(&a), &teds_tree(&b), false), 0.5);
        assert_eq!(tree_edit_distance(&teds_tree(&a), &teds_tree(&b), true), 0.0);
    }

    #[test]
    fn relations() {
        let r = adjacency_relations(&full2x2(), false);
        assert_eq!(r.len(), 4);
        assert_eq!(r.iter().filter(|x| x.direction == Direction::Horizontal).count(), 2);
        assert!(adjacency_relations(&table(1, 1, &[(0, 0, 0, 0)]), false).is_empty());
        let m = adjacency_relations(&merged2x2(), false);
        let expected: BTreeSet<_> = [
            AdjacencyRelation { a: 0, b: 1, direction: Direction::Vertical },
            AdjacencyRelation { a: 0, b: 2, direction: Direction::Vertical },
            AdjacencyRelation { a: 1, b: 2, direction: Direction::Horizontal },
        ]
        .into();
        assert_eq!(m, expected);
    }

    #[test]
    fn skip_empty_bridges_blank_cells() {
        // 1x3 with an empty middle cell
        let mut t = table(1, 3, &[(0, 0, 0, 0), (0, 0, 1, 1), (0, 0, 2, 2)]);
        t.cells[0].content = Some("a".into());
        t.cells[2].content = Some("c".into());
        let r = adjacency_relations(&t, true);
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec![AdjacencyRelation { a: 0, b: 2, direction: Direction::Horizontal }]);
        assert_eq!(adjacency_relations(&t, false).len(), 2);
    }

    #[test]
    fn adjacency_fixed_point_and_spurious_merge() {
        let gt = full2x2();
        for mode in [CellMatch::default(), CellMatch::Logical] {
            let p = adjacency_f1(&gt, &gt, mode, false).unwrap();
            assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        }
        let p = adjacency_f1(&merged2x2(), &gt, CellMatch::Logical, false).unwrap();
        assert_eq!((p.true_positives, p.predicted, p.ground_truth), (2, 3, 4));
        assert_eq!(p.precision, 2.0 / 3.0);
        assert_eq!(p.recall, 0.5);
        // by IoU the merged cell (IoU 0.5) stays unmatched
        let p = adjacency_f1(&merged2x2(), &gt, CellMatch::default(), false).unwrap();
        assert_eq!(p.true_positives, 1);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let empty = LogicalTable { rows: 0, cols: 0, image_w: 1.0, image_h: 1.0, cells: vec![] };
        let p = adjacency_f1(&empty, &full2x2(), CellMatch::Logical, false).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(!p.f1.is_nan());
        let one = table(1, 1, &[(0, 0, 0, 0)]);
        assert_eq!(adjacency_f1(&one, &one, CellMatch::Logical, false).unwrap().f1, 1.0);
    }

    #[test]
    fn detection_fscore() {
        let gt = vec![
            Cell::new(0, 0, 0, 0).with_quad(BBox::new(0.0, 0.0, 10.0, 10.0).to_quad()),
            Cell::new(0, 0, 1, 1).with_quad(BBox::new(10.0, 0.0, 20.0, 10.0).to_quad()),
        ];
        assert_eq!(cell_detection_fscore(&gt, &gt, DEFAULT_IOU_THRESH).f1, 1.0);
        // shift the second cell so IoU = 1/3 with its target: 20 wide overlap 5 ... use IoU 0.5
        let mut pred = gt.clone();
        // [10,0,20,10] vs [10,0,20+x,...]: IoU 0.5 when area doubles
        pred[1].quad = Some(BBox::new(10.0, 0.0, 30.0, 10.0).to_quad());
        let p = cell_detection_fscore(&pred, &gt, DEFAULT_IOU_THRESH);
        assert_eq!((p.precision, p.recall), (0.5, 0.5));
        let missing = vec![Cell::new(0, 0, 0, 0)];
        assert!(adjacency_f1(
            &LogicalTable { rows: 1, cols: 1, image_w: 1.0, image_h: 1.0, cells: missing },
            &full2x2(),
            CellMatch::default(),
            false
        )
        .is_err());
    }
}
