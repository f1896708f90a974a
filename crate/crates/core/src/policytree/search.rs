use rayon::prelude::*;

use super::{PolicyNode, PolicyTree};
use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::forest::midpoint;

/// Searched tree with its total reward and selected-set size.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub tree: PolicyTree,
    pub objective: f64,
    pub n_selected: usize,
}

/// (total reward, number selected), compared lexicographically.
type Score = (f64, usize);

fn better(a: Score, b: Score) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

struct Found {
    score: Score,
    node: PolicyNode,
}

/// Exhaustive search over depth-`depth` trees maximizing the summed reward
/// of selected units. Ties prefer more selected units, then the
/// lexicographically smallest (feature, threshold) path, with "no split"
/// ordered before every real split.
pub fn search(x: &CovariateMatrix, gamma: &[f64], depth: usize) -> Result<SearchResult> {
    if depth == 0 {
        return Err(Error::validation("tree depth must be at least 1"));
    }
    if gamma.len() != x.n_rows() {
        return Err(Error::validation(format!(
            "{} rewards for {} rows",
            gamma.len(),
            x.n_rows()
        )));
    }
    if let Some(i) = gamma.iter().position(|g| !g.is_finite()) {
        return Err(Error::validation(format!("non-finite reward at unit {}", i + 1)));
    }
    let all: Vec<usize> = (0..x.n_rows()).collect();
    let found = search_rec(x, gamma, &all, depth);
    let tree = PolicyTree {
        depth,
        root: found.node,
    };
    let actions = tree.assign(x)?;
    let objective = gamma
        .iter()
        .zip(&actions)
        .filter(|(_, &a)| a == 1)
        .map(|(g, _)| g)
        .sum();
    let n_selected = actions.iter().filter(|&&a| a == 1).count();
    Ok(SearchResult {
        tree,
        objective,
        n_selected,
    })
}

fn search_rec(x: &CovariateMatrix, gamma: &[f64], subset: &[usize], depth: usize) -> Found {
    match depth {
        1 => depth_one(x, gamma, subset),
        2 => depth_two(x, gamma, subset),
        _ => {
            let mut best = search_rec(x, gamma, subset, depth - 1);
            for j in 0..x.n_cols() {
                let col = x.column(j);
                let order = sorted_by(col, subset);
                for p in 0..order.len().saturating_sub(1) {
                    if col[order[p]] == col[order[p + 1]] {
                        continue;
                    }
                    let left = search_rec(x, gamma, &order[..=p], depth - 1);
                    let right = search_rec(x, gamma, &order[p + 1..], depth - 1);
                    let score = (left.score.0 + right.score.0, left.score.1 + right.score.1);
                    if better(score, best.score) {
                        best = Found {
                            score,
                            node: PolicyNode::split(
                                j,
                                midpoint(col[order[p]], col[order[p + 1]]),
                                left.node,
                                right.node,
                            ),
                        };
                    }
                }
            }
            best
        }
    }
}

fn sorted_by(col: &[f64], subset: &[usize]) -> Vec<usize> {
    let mut order = subset.to_vec();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    order
}

fn leaf_found(total: f64, n: usize) -> Found {
    if total >= 0.0 {
        Found {
            score: (total, n),
            node: PolicyNode::leaf(1),
        }
    } else {
        Found {
            score: (0.0, 0),
            node: PolicyNode::leaf(0),
        }
    }
}

/// Score of a stump whose left side holds `n_left` units summing to `p`.
/// `None` when the split is equivalent to a single leaf.
fn stump_score(p: f64, n_left: usize, total: f64, n: usize) -> Option<(Score, u8, u8)> {
    if n_left == 0 || n_left == n {
        return None;
    }
    let q = total - p;
    let (al, ar) = (u8::from(p >= 0.0), u8::from(q >= 0.0));
    if al == ar {
        return None;
    }
    let value = p.max(0.0) + q.max(0.0);
    let count = al as usize * n_left + ar as usize * (n - n_left);
    Some(((value, count), al, ar))
}

fn depth_one(x: &CovariateMatrix, gamma: &[f64], subset: &[usize]) -> Found {
    let total: f64 = subset.iter().map(|&i| gamma[i]).sum();
    let n = subset.len();
    let mut best = leaf_found(total, n);
    for j in 0..x.n_cols() {
        let col = x.column(j);
        let order = sorted_by(col, subset);
        let mut p = 0.0;
        for k in 0..n.saturating_sub(1) {
            p += gamma[order[k]];
            if col[order[k]] == col[order[k + 1]] {
                continue;
            }
            if let Some((score, al, ar)) = stump_score(p, k + 1, total, n) {
                if better(score, best.score) {
                    best = Found {
                        score,
                        node: PolicyNode::split(
                            j,
                            midpoint(col[order[k]], col[order[k + 1]]),
                            PolicyNode::leaf(al),
                            PolicyNode::leaf(ar),
                        ),
                    };
                }
            }
        }
    }
    best
}

/// Best prefix candidate: (prefix sum, prefix count, group position).
#[derive(Clone, Copy)]
struct Cand {
    p: f64,
    n: u32,
    pos: u32,
}

#[derive(Clone, Copy)]
struct Agg {
    sum: f64,
    cnt: u32,
    max: Cand,
    min: Cand,
}

const EMPTY: Agg = Agg {
    sum: 0.0,
    cnt: 0,
    max: Cand {
        p: f64::NEG_INFINITY,
        n: 0,
        pos: u32::MAX,
    },
    min: Cand {
        p: f64::INFINITY,
        n: 0,
        pos: u32::MAX,
    },
};

fn combine(a: &Agg, b: &Agg) -> Agg {
    let shift = |c: Cand| Cand {
        p: a.sum + c.p,
        n: a.cnt + c.n,
        pos: c.pos,
    };
    let (bmax, bmin) = (shift(b.max), shift(b.min));
    let max = if bmax.p > a.max.p || (bmax.p == a.max.p && bmax.n > a.max.n) {
        bmax
    } else {
        a.max
    };
    let min = if bmin.p < a.min.p || (bmin.p == a.min.p && bmin.n < a.min.n) {
        bmin
    } else {
        a.min
    };
    Agg {
        sum: a.sum + b.sum,
        cnt: a.cnt + b.cnt,
        max,
        min,
    }
}

/// Segment tree over the value groups of one feature. Leaf `g` holds the
/// reward sum and count of set members in group `g`. The root reports the
/// extreme prefix sums over cut positions "after group g" for nonempty `g`.
struct PrefixTree {
    size: usize,
    nodes: Vec<Agg>,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl PrefixTree {
    fn new(groups: usize) -> Self {
        let size = groups.next_power_of_two();
        Self {
            size,
            nodes: vec![EMPTY; 2 * size],
            sums: vec![0.0; groups],
            counts: vec![0; groups],
        }
    }

    fn leaf_agg(&self, g: usize) -> Agg {
        let (sum, cnt) = (self.sums[g], self.counts[g]);
        if cnt == 0 {
            return Agg { sum, cnt, ..EMPTY };
        }
        let c = Cand {
            p: sum,
            n: cnt,
            pos: g as u32,
        };
        Agg {
            sum,
            cnt,
            max: c,
            min: c,
        }
    }

    fn build(&mut self) {
        for g in 0..self.sums.len() {
            self.nodes[self.size + g] = self.leaf_agg(g);
        }
        for i in (1..self.size).rev() {
            self.nodes[i] = combine(&self.nodes[2 * i], &self.nodes[2 * i + 1]);
        }
    }

    fn add(&mut self, g: usize, value: f64, delta: i32) {
        self.sums[g] += value;
        self.counts[g] = (self.counts[g] as i32 + delta) as u32;
        if self.counts[g] == 0 {
            self.sums[g] = 0.0;
        }
        let mut i = self.size + g;
        self.nodes[i] = self.leaf_agg(g);
        i /= 2;
        while i >= 1 {
            self.nodes[i] = combine(&self.nodes[2 * i], &self.nodes[2 * i + 1]);
            i /= 2;
        }
    }

    fn root(&self) -> &Agg {
        &self.nodes[1]
    }
}

/// Best depth-1 score for the set tracked by one prefix tree per feature.
fn best_stump(trees: &[PrefixTree]) -> Score {
    let root0 = trees[0].root();
    let n = root0.cnt as usize;
    let mut best = leaf_found(root0.sum, n).score;
    for tree in trees {
        let root = tree.root();
        let mut pick: Option<(Score, u32)> = None;
        for c in [root.max, root.min] {
            if !c.p.is_finite() {
                continue;
            }
            if let Some((score, _, _)) = stump_score(c.p, c.n as usize, root.sum, n) {
                let replace = match pick {
                    None => true,
                    Some((s, pos)) => better(score, s) || (score == s && c.pos < pos),
                };
                if replace {
                    pick = Some((score, c.pos));
                }
            }
        }
        if let Some((score, _)) = pick {
            if better(score, best) {
                best = score;
            }
        }
    }
    best
}

/// Exact depth-2 search. For each root feature, units move from the right
/// set to the left set in sorted order while per-feature prefix trees keep
/// the best child stump of each side current.
fn depth_two(x: &CovariateMatrix, gamma: &[f64], subset: &[usize]) -> Found {
    let r = x.n_cols();
    let m = subset.len();
    let sentinel = depth_one(x, gamma, subset);
    if m < 2 {
        return sentinel;
    }
    // groups[j][k]: value group of subset[k] under feature j.
    let mut groups = vec![vec![0usize; m]; r];
    let mut n_groups = vec![0usize; r];
    for j in 0..r {
        let col = x.column(j);
        let mut ord: Vec<usize> = (0..m).collect();
        ord.sort_by(|&a, &b| col[subset[a]].total_cmp(&col[subset[b]]));
        let mut g = 0;
        for (idx, &k) in ord.iter().enumerate() {
            if idx > 0 && col[subset[k]] != col[subset[ord[idx - 1]]] {
                g += 1;
            }
            groups[j][k] = g;
        }
        n_groups[j] = g + 1;
    }

    let per_root: Vec<Option<(Score, usize)>> = (0..r)
        .into_par_iter()
        .map(|j| {
            let col = x.column(j);
            let mut ord: Vec<usize> = (0..m).collect();
            ord.sort_by(|&a, &b| col[subset[a]].total_cmp(&col[subset[b]]));
            let mut left: Vec<PrefixTree> = n_groups.iter().map(|&g| PrefixTree::new(g)).collect();
            let mut right: Vec<PrefixTree> = n_groups.iter().map(|&g| PrefixTree::new(g)).collect();
            for (jj, tree) in right.iter_mut().enumerate() {
                for k in 0..m {
                    tree.sums[groups[jj][k]] += gamma[subset[k]];
                    tree.counts[groups[jj][k]] += 1;
                }
                tree.build();
            }
            for tree in left.iter_mut() {
                tree.build();
            }
            let mut best: Option<(Score, usize)> = None;
            for p in 0..m - 1 {
                let k = ord[p];
                let g = gamma[subset[k]];
                for jj in 0..r {
                    right[jj].add(groups[jj][k], -g, -1);
                    left[jj].add(groups[jj][k], g, 1);
                }
                if col[subset[k]] == col[subset[ord[p + 1]]] {
                    continue;
                }
                let (sl, sr) = (best_stump(&left), best_stump(&right));
                let score = (sl.0 + sr.0, sl.1 + sr.1);
                if best.is_none_or(|(b, _)| better(score, b)) {
                    best = Some((score, p));
                }
            }
            best
        })
        .collect();

    let mut winner: Option<(Score, usize, usize)> = None;
    let mut best_score = sentinel.score;
    for (j, cand) in per_root.into_iter().enumerate() {
        if let Some((score, p)) = cand {
            if better(score, best_score) {
                best_score = score;
                winner = Some((score, j, p));
            }
        }
    }
    let Some((_, j, p)) = winner else {
        return sentinel;
    };
    let col = x.column(j);
    let order = sorted_by(col, subset);
    let left = depth_one(x, gamma, &order[..=p]);
    let right = depth_one(x, gamma, &order[p + 1..]);
    Found {
        score: (left.score.0 + right.score.0, left.score.1 + right.score.1),
        node: PolicyNode::split(
            j,
            midpoint(col[order[p]], col[order[p + 1]]),
            left.node,
            right.node,
        ),
    }
}
