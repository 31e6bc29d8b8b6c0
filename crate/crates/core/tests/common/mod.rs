#![allow(dead_code)]

use std::collections::HashSet;

use forestcut::oracle::{Answer, FeedbackSource, GroundTruthOracle, SourceError};
use forestcut::treegen::{LinkageTree, Merge};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A labeled universe plus trees in which every true cluster is a node of
/// at least one tree.
pub struct Planted {
    pub labels: Vec<usize>,
    pub trees: Vec<(String, LinkageTree)>,
}

impl Planted {
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let k = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); k];
        for (u, &l) in self.labels.iter().enumerate() {
            out[l].push(u);
        }
        out.retain(|b| !b.is_empty());
        out.sort();
        out
    }
}

struct Builder {
    merges: Vec<Merge>,
    next: usize,
}

impl Builder {
    /// Merges `parts` in a random order into one node.
    fn merge_all(&mut self, mut parts: Vec<(usize, usize)>, rng: &mut ChaCha8Rng) -> (usize, usize) {
        while parts.len() > 1 {
            let x = parts.swap_remove(rng.random_range(0..parts.len()));
            let y = parts.swap_remove(rng.random_range(0..parts.len()));
            let size = x.1 + y.1;
            self.merges.push(Merge {
                left: x.0.min(y.0),
                right: x.0.max(y.0),
                height: self.merges.len() as f64,
                size,
            });
            parts.push((self.next, size));
            self.next += 1;
        }
        parts[0]
    }
}

/// Random binary tree over `0..n` in which each block of `plant` is a node.
pub fn tree_with_nodes(n: usize, plant: &[Vec<usize>], rng: &mut ChaCha8Rng) -> LinkageTree {
    let mut b = Builder { merges: Vec::new(), next: n };
    let mut covered = vec![false; n];
    let mut pool = Vec::new();
    for block in plant {
        for &u in block {
            covered[u] = true;
        }
        pool.push(b.merge_all(block.iter().map(|&u| (u, 1)).collect(), rng));
    }
    pool.extend((0..n).filter(|&u| !covered[u]).map(|u| (u, 1)));
    b.merge_all(pool, rng);
    LinkageTree::new(n, b.merges).expect("builder emits valid merges")
}

/// `n` in `n_range`, at most `max_k` clusters, one to `max_trees` trees.
/// Each cluster is planted in one chosen tree and in each other tree with
/// probability one half.
pub fn planted(seed: u64, n_range: std::ops::RangeInclusive<usize>, max_k: usize, max_trees: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(n_range);
    let k = rng.random_range(1..=max_k.min(n));
    let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    // compact labels in order of first appearance
    let mut map = Vec::new();
    let labels: Vec<usize> = raw
        .iter()
        .map(|l| match map.iter().position(|m| m == l) {
            Some(i) => i,
            None => {
                map.push(*l);
                map.len() - 1
            }
        })
        .collect();
    let p = Planted { labels, trees: Vec::new() };
    let blocks = p.blocks();
    let n_trees = rng.random_range(1..=max_trees);
    let mut plans = vec![Vec::new(); n_trees];
    for block in &blocks {
        let home = rng.random_range(0..n_trees);
        for (t, plan) in plans.iter_mut().enumerate() {
            if t == home || rng.random_bool(0.5) {
                plan.push(block.clone());
            }
        }
    }
    let trees =
        plans.iter().enumerate().map(|(t, plan)| (format!("t{t}"), tree_with_nodes(n, plan, &mut rng))).collect();
    Planted { trees, ..p }
}

/// Ground truth that fails the test if any pair is asked twice.
pub struct CountingOracle {
    pub truth: GroundTruthOracle,
    pub asked: HashSet<(usize, usize)>,
    pub duplicates: usize,
}

impl CountingOracle {
    pub fn new(labels: Vec<usize>) -> Self {
        CountingOracle { truth: GroundTruthOracle::new(labels), asked: HashSet::new(), duplicates: 0 }
    }
}

impl FeedbackSource for CountingOracle {
    fn answer(&mut self, a: usize, b: usize) -> Result<Answer, SourceError> {
        if !self.asked.insert((a.min(b), a.max(b))) {
            self.duplicates += 1;
        }
        self.truth.answer(a, b)
    }
}

fn binom(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

fn margins(labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0; k];
    for &l in labels {
        out[l] += 1;
    }
    out.retain(|&c| c > 0);
    out
}

fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint = std::collections::HashMap::new();
    let mut ca = std::collections::HashMap::new();
    let mut cb = std::collections::HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0usize) += 1;
        *ca.entry(x).or_insert(0usize) += 1;
        *cb.entry(y).or_insert(0usize) += 1;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| {
            let c = c as f64;
            c / n * (n * c / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum()
}

fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    margins(labels).iter().map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum()
}

/// Expected mutual information from exact integer hypergeometric weights.
pub fn emi_hypergeometric(rows: &[usize], cols: &[usize], n: usize) -> f64 {
    let mut total = 0.0;
    for &ai in rows {
        let denom = binom(n, ai);
        for &bj in cols {
            for nij in 1..=ai.min(bj) {
                let ways = binom(bj, nij) * binom(n - bj, ai - nij);
                if ways == 0 {
                    continue;
                }
                let p = ways as f64 / denom as f64;
                let x = nij as f64;
                total += p * x / n as f64 * (n as f64 * x / (ai as f64 * bj as f64)).ln();
            }
        }
    }
    total
}

/// Expected mutual information by averaging over every permutation of `b`.
pub fn emi_permutations(a: &[usize], b: &[usize]) -> f64 {
    let n = b.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    let mut count = 0u64;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |idx: &[usize]| {
        let permuted: Vec<usize> = idx.iter().map(|&i| b[i]).collect();
        sum += mutual_information(a, &permuted);
        count += 1;
    };
    visit(&idx);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                idx.swap(0, i);
            } else {
                idx.swap(c[i], i);
            }
            visit(&idx);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    sum / count as f64
}

/// Reference AMI with the `max` normalizer, labels compacted to `0..k`.
pub fn reference_ami(a: &[usize], b: &[usize]) -> f64 {
    let emi = emi_hypergeometric(&margins(a), &margins(b), a.len());
    let denom = entropy(a).max(entropy(b)) - emi;
    (mutual_information(a, b) - emi) / denom
}

/// Random labelings with at most `ka` and `kb` blocks over `n` units.
pub fn random_labelings(rng: &mut ChaCha8Rng, n: usize, ka: usize, kb: usize) -> (Vec<usize>, Vec<usize>) {
    let a = (0..n).map(|_| rng.random_range(0..ka)).collect();
    let b = (0..n).map(|_| rng.random_range(0..kb)).collect();
    (a, b)
}
