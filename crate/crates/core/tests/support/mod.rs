//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use gridtab::metrics::{Tag, TedsNode, Tree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimum assignment cost by trying every injection of the smaller side.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost[0].len();
    let transposed = rows > cols;
    let (r, c) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };
    let mut used = vec![false; c];
    let mut best = f64::INFINITY;
    fn go(i: usize, r: usize, c: usize, acc: f64, used: &mut [bool], best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == r {
            *best = best.min(acc);
            return;
        }
        for j in 0..c {
            if !used[j] {
                used[j] = true;
                go(i + 1, r, c, acc + at(i, j), used, best, at);
                used[j] = false;
            }
        }
    }
    go(0, r, c, 0.0, &mut used, &mut best, &at);
    best
}

/// Preorder index, ancestor matrix and postorder index of a tree.
struct Order {
    pre: Vec<usize>,
    post: Vec<usize>,
    nodes: Vec<usize>,
}

fn order<L>(t: &Tree<L>) -> Order {
    let n = t.len();
    let mut pre = vec![0; n];
    let mut post = vec![0; n];
    let mut nodes = Vec::with_capacity(n);
    let (mut a, mut b) = (0, 0);
    fn walk<L>(t: &Tree<L>, v: usize, pre: &mut [usize], post: &mut [usize], nodes: &mut Vec<usize>, a: &mut usize, b: &mut usize) {
        pre[v] = *a;
        *a += 1;
        nodes.push(v);
        for &c in &t.children[v] {
            walk(t, c, pre, post, nodes, a, b);
        }
        post[v] = *b;
        *b += 1;
    }
    if n > 0 {
        walk(t, 0, &mut pre, &mut post, &mut nodes, &mut a, &mut b);
    }
    Order { pre, post, nodes }
}

impl Order {
    fn ancestor(&self, u: usize, v: usize) -> bool {
        self.pre[u] < self.pre[v] && self.post[u] > self.post[v]
    }

    fn left_of(&self, u: usize, v: usize) -> bool {
        self.pre[u] < self.pre[v] && self.post[u] < self.post[v]
    }
}

/// Tree edit distance as the cheapest valid ordered mapping (one-to-one,
/// preserving ancestry and sibling order), found by exhaustive search.
pub fn brute_force_ted<L>(a: &Tree<L>, b: &Tree<L>, relabel: &dyn Fn(&L, &L) -> f64) -> f64 {
    let (oa, ob) = (order(a), order(b));
    let mut used = vec![false; b.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut best = f64::INFINITY;

    #[allow(clippy::too_many_arguments)]
    fn go<L>(
        k: usize,
        a: &Tree<L>,
        b: &Tree<L>,
        oa: &Order,
        ob: &Order,
        used: &mut [bool],
        pairs: &mut Vec<(usize, usize)>,
        relabel_sum: f64,
        best: &mut f64,
        relabel: &dyn Fn(&L, &L) -> f64,
    ) {
        if k == oa.nodes.len() {
            let unmapped = (a.len() - pairs.len()) + (b.len() - pairs.len());
            *best = best.min(relabel_sum + unmapped as f64);
            return;
        }
        let u = oa.nodes[k];
        go(k + 1, a, b, oa, ob, used, pairs, relabel_sum, best, relabel);
        for v in 0..b.len() {
            if used[v] {
                continue;
            }
            let consistent = pairs.iter().all(|&(u2, v2)| {
                oa.ancestor(u2, u) == ob.ancestor(v2, v)
                    && oa.ancestor(u, u2) == ob.ancestor(v, v2)
                    && oa.left_of(u2, u) == ob.left_of(v2, v)
                    && oa.left_of(u, u2) == ob.left_of(v, v2)
            });
            if !consistent {
                continue;
            }
            used[v] = true;
            pairs.push((u, v));
            let cost = relabel(&a.labels[u], &b.labels[v]);
            go(k + 1, a, b, oa, ob, used, pairs, relabel_sum + cost, best, relabel);
            pairs.pop();
            used[v] = false;
        }
    }
    go(0, a, b, &oa, &ob, &mut used, &mut pairs, 0.0, &mut best, relabel);
    best
}

/// Random ordered tree with `1..=max_nodes` nodes; each new node hangs off a
/// random existing node.
pub fn random_tree<L>(r: &mut ChaCha8Rng, max_nodes: usize, mut label: impl FnMut(&mut ChaCha8Rng, usize) -> L) -> Tree<L> {
    let n = r.random_range(1..=max_nodes);
    let first = label(r, 0);
    let mut t = Tree::leaf(first);
    for k in 1..n {
        let parent = r.random_range(0..k);
        let l = label(r, k);
        t.add_child(parent, l);
    }
    t
}

/// Random tree over TEDS node labels (any tag at any position, so tags and
/// spans both vary).
pub fn random_teds_tree(r: &mut ChaCha8Rng, max_nodes: usize, with_content: bool) -> Tree<TedsNode> {
    random_tree(r, max_nodes, |r, _| {
        let tag = [Tag::Table, Tag::Tr, Tag::Td][r.random_range(0..3)];
        TedsNode {
            tag,
            colspan: r.random_range(1..=2),
            rowspan: r.random_range(1..=2),
            content: with_content.then(|| ["", "a", "ab", "ba", "abc"][r.random_range(0..5)].to_string()),
        }
    })
}
