//! Multi-tree block search.
//!
//! A run repeatedly finds one block, appends it to the partition and removes
//! its units from every tree, until no units remain. Purity marks are
//! cleared between blocks; the answer cache in [`InferenceEngine`] is not.
//!
//! Finding a block starts from the smallest live unit `S = {s}`. Each round
//! takes the minimal extension of `S` in every tree and tests the ones whose
//! purity is still unknown. If exactly one tree offers a pure extension, the
//! search binary-searches up that tree's root path for the highest pure node.
//! If several do, their union replaces `S`. The block is declared only when
//! no tree offers a pure strict extension of `S`.

use std::collections::HashSet;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{CompositionTree, Forest, NodeId, Purity, PurityMap};
use crate::leafset::LeafSet;
use crate::oracle::{Answer, Clock, Counters, FeedbackSource, InferenceEngine, QueryRecord};
use crate::treegen::{pearson, FeatureMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PurityMode {
    /// Confirm every new unit against the representative.
    #[default]
    Exact,
    /// One comparison per node; only sound when every block is a tree node.
    Trusting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: PurityMode,
    pub majority_k: usize,
    pub seed: u64,
    pub tree_subset: Option<Vec<usize>>,
    /// Declare the block right after a single-tree binary search instead of
    /// re-checking the other trees.
    pub stop_after_binary_search: bool,
    pub clock: Clock,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: PurityMode::Exact,
            majority_k: 1,
            seed: 0,
            tree_subset: None,
            stop_after_binary_search: false,
            clock: Clock::Logical,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.majority_k == 0 || self.majority_k % 2 == 0 {
            return Err(Error::config("majority_k", format!("must be odd and positive, got {}", self.majority_k)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: u64,
    pub inferred: u64,
    pub blocks_found: usize,
    pub units_remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub tag: String,
    /// Output blocks equal to the leaf set of some node of this tree.
    pub contributions: usize,
    /// Nodes of this tree marked impure during the run.
    pub deviations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    #[serde(flatten)]
    pub engine: Counters,
    pub blocks_found: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Blocks sorted internally, ordered by smallest member.
    pub partition: Vec<Vec<usize>>,
    pub log: Vec<QueryRecord>,
    pub counters: RunCounters,
    pub trees: Vec<TreeSummary>,
    pub duration: Duration,
    pub clock: Clock,
}

/// The JSON run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub partition: Vec<Vec<usize>>,
    pub counters: RunCounters,
    pub trees: Vec<TreeSummary>,
    pub config: serde_json::Value,
    /// Omitted (null) under the logical clock so reports stay reproducible.
    pub duration_ms: Option<f64>,
}

impl RunResult {
    pub fn report(&self, config: serde_json::Value) -> RunReport {
        RunReport {
            partition: self.partition.clone(),
            counters: self.counters.clone(),
            trees: self.trees.clone(),
            config,
            duration_ms: match self.clock {
                Clock::Wall => Some(self.duration.as_secs_f64() * 1e3),
                Clock::Logical => None,
            },
        }
    }

    /// Block index per unit id.
    pub fn labels(&self) -> Vec<usize> {
        partition_labels(&self.partition)
    }
}

pub fn partition_labels(partition: &[Vec<usize>]) -> Vec<usize> {
    let n = partition.iter().map(Vec::len).sum();
    let mut out = vec![usize::MAX; n];
    for (b, block) in partition.iter().enumerate() {
        for &u in block {
            if u < n {
                out[u] = b;
            }
        }
    }
    out
}

/// A run that stopped early, with what was found before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Vec<Vec<usize>>,
    pub counters: Counters,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} blocks)", self.error, self.partial.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// State of one run: the shrinking forest, its purity marks and the answer
/// cache.
pub struct Search {
    forest: Forest,
    purity: PurityMap,
    engine: InferenceEngine,
    cfg: SearchConfig,
    partition: Vec<LeafSet>,
    originals: Vec<HashSet<LeafSet>>,
    started: Instant,
}

impl Search {
    pub fn new(forest: &Forest, cfg: SearchConfig) -> Result<Self> {
        cfg.validate()?;
        let forest = match &cfg.tree_subset {
            Some(idx) => forest.subset(idx)?,
            None => forest.clone(),
        };
        let engine = InferenceEngine::new(forest.width(), cfg.clock);
        Ok(Self::with_engine(forest, engine, cfg))
    }

    fn with_engine(forest: Forest, engine: InferenceEngine, cfg: SearchConfig) -> Self {
        let originals =
            forest.trees().iter().map(|t| t.live_nodes().map(|id| t.leafset(id).clone()).collect()).collect();
        Search {
            purity: PurityMap::new(&forest),
            forest,
            engine,
            cfg,
            partition: Vec::new(),
            originals,
            started: Instant::now(),
        }
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn purity(&self) -> &PurityMap {
        &self.purity
    }

    pub fn engine(&self) -> &InferenceEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut InferenceEngine {
        &mut self.engine
    }

    pub fn is_done(&self) -> bool {
        self.forest.is_exhausted()
    }

    pub fn blocks(&self) -> &[LeafSet] {
        &self.partition
    }

    pub fn progress(&self) -> Progress {
        let c = self.engine.counters();
        Progress {
            answered: c.source_pairs,
            inferred: c.inferred_answers,
            blocks_found: self.partition.len(),
            units_remaining: self.forest.live().len(),
        }
    }

    /// Decides whether `node` of `tree` is pure, given that `s` is pure and
    /// strictly inside it, and propagates the outcome across the forest.
    pub fn test_purity<S: FeedbackSource + ?Sized>(
        &mut self,
        source: &mut S,
        s: &LeafSet,
        tree: usize,
        node: NodeId,
    ) -> Result<Purity> {
        let rep = s.first().ok_or_else(|| Error::InvalidInput("purity test needs a nonempty pure set".into()))?;
        let leafset = self.forest.tree(tree).leafset(node).clone();
        if !(s.is_subset(&leafset) && leafset.len() > s.len()) {
            return Err(Error::InvalidInput(format!("node {node} of tree {tree} does not strictly contain S")));
        }
        let fresh = leafset.difference(s);
        let k = self.cfg.majority_k;
        let witness = match self.cfg.mode {
            PurityMode::Exact => {
                let mut witness = None;
                for u in fresh.iter() {
                    if self.engine.find(u) == self.engine.find(rep) {
                        continue;
                    }
                    if self.engine.resolve_majority(source, rep, u, k)?.answer == Answer::Different {
                        witness = Some(u);
                        break;
                    }
                }
                witness
            }
            PurityMode::Trusting => {
                // Compare against the part added above the child holding S:
                // if the tested node overshoots a cluster that is itself a
                // node, that part lies outside the cluster.
                let t = self.forest.tree(tree);
                let added = match t.node(node).children.iter().find(|&&c| s.is_subset(t.leafset(c))) {
                    Some(&c) => leafset.difference(t.leafset(c)),
                    None => fresh,
                };
                let u = added.first().expect("strict superset has a fresh unit");
                (self.engine.resolve_majority(source, rep, u, k)?.answer == Answer::Different).then_some(u)
            }
        };
        match witness {
            Some(u) => {
                self.purity.mark_impure(&self.forest, &LeafSet::from_units(self.forest.width(), [rep, u]))?;
                Ok(Purity::Impure)
            }
            None => {
                self.purity.mark_pure(&self.forest, &leafset)?;
                Ok(Purity::Pure)
            }
        }
    }

    fn purity_of<S: FeedbackSource + ?Sized>(
        &mut self,
        source: &mut S,
        s: &LeafSet,
        tree: usize,
        node: NodeId,
    ) -> Result<Purity> {
        match self.purity.state(tree, node) {
            Purity::Unknown => self.test_purity(source, s, tree, node),
            known => Ok(known),
        }
    }

    /// Highest pure node on the root path above the pure node `start`.
    fn climb<S: FeedbackSource + ?Sized>(&mut self, source: &mut S, tree: usize, start: NodeId) -> Result<LeafSet> {
        let path = self.forest.tree(tree).path_to_root(start);
        let state = |p: &PurityMap, i: usize| p.state(tree, path[i]);
        // purity is monotone along the path: a Pure prefix, then Impure
        let mut lo = (0..path.len()).rev().find(|&i| state(&self.purity, i) == Purity::Pure).unwrap_or(0);
        let mut hi = (lo + 1..path.len()).find(|&i| state(&self.purity, i) == Purity::Impure).unwrap_or(path.len());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let base = self.forest.tree(tree).leafset(path[lo]).clone();
            match self.purity_of(source, &base, tree, path[mid])? {
                Purity::Pure => lo = mid,
                _ => hi = mid,
            }
        }
        Ok(self.forest.tree(tree).leafset(path[lo]).clone())
    }

    pub fn find_one_block<S: FeedbackSource + ?Sized>(&mut self, source: &mut S) -> Result<LeafSet> {
        let seed = self.forest.live().first().ok_or_else(|| Error::InvalidInput("forest is empty".into()))?;
        let mut s = LeafSet::singleton(self.forest.width(), seed);
        self.purity.mark_pure(&self.forest, &s)?;
        loop {
            let mut pure = Vec::new();
            for tree in 0..self.forest.len() {
                let Some(ext) = self.forest.minimal_extension(tree, &s)? else { continue };
                if self.purity_of(source, &s, tree, ext)? == Purity::Pure {
                    pure.push((tree, ext));
                }
            }
            match pure.as_slice() {
                [] => return Ok(s),
                &[(tree, ext)] => {
                    s = self.climb(source, tree, ext)?;
                    if self.cfg.stop_after_binary_search {
                        return Ok(s);
                    }
                }
                many => {
                    for &(tree, ext) in many {
                        s.union_with(self.forest.tree(tree).leafset(ext));
                    }
                    self.purity.mark_pure(&self.forest, &s)?;
                }
            }
        }
    }

    /// Finds the next block and removes it from the forest. `None` once the
    /// forest is exhausted.
    pub fn step<S: FeedbackSource + ?Sized>(&mut self, source: &mut S) -> Result<Option<LeafSet>> {
        if self.forest.is_exhausted() {
            return Ok(None);
        }
        let block = self.find_one_block(source)?;
        self.forest.contract(&block)?;
        self.purity.reset();
        self.partition.push(block.clone());
        Ok(Some(block))
    }

    pub fn run_to_end<S: FeedbackSource + ?Sized>(&mut self, source: &mut S) -> Result<()> {
        while self.step(source)?.is_some() {}
        Ok(())
    }

    pub fn partial_partition(&self) -> Vec<Vec<usize>> {
        sorted_blocks(&self.partition)
    }

    pub fn finish(self) -> RunResult {
        let duration = self.started.elapsed();
        let trees = self
            .forest
            .trees()
            .iter()
            .enumerate()
            .map(|(i, t)| TreeSummary {
                tag: t.tag.clone(),
                contributions: self.partition.iter().filter(|b| self.originals[i].contains(*b)).count(),
                deviations: self.purity.deviations(i),
            })
            .collect();
        let engine = self.engine.counters();
        RunResult {
            partition: sorted_blocks(&self.partition),
            log: self.engine.export_log(),
            counters: RunCounters { engine, blocks_found: self.partition.len() },
            trees,
            duration,
            clock: self.cfg.clock,
        }
    }
}

fn sorted_blocks(blocks: &[LeafSet]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = blocks.iter().map(LeafSet::to_vec).collect();
    out.sort();
    out
}

/// Flattens `forest` into a partition using `source` for pairwise answers.
pub fn run<S: FeedbackSource + ?Sized>(
    forest: &Forest,
    source: &mut S,
    cfg: &SearchConfig,
) -> std::result::Result<RunResult, RunFailure> {
    let mut search = Search::new(forest, cfg.clone())
        .map_err(|error| RunFailure { error, partial: Vec::new(), counters: Counters::default() })?;
    match search.run_to_end(source) {
        Ok(()) => Ok(search.finish()),
        Err(error) => Err(RunFailure {
            error,
            partial: search.partial_partition(),
            counters: search.engine.counters(),
        }),
    }
}

/// Oracle-free flattening of one tree: walking down from the root, accept
/// the first node on each path whose members' mean pairwise Pearson
/// correlation reaches `threshold`. Units under no accepted node become
/// singletons.
pub fn auto_flatten_baseline(
    tree: &CompositionTree,
    features: &FeatureMatrix,
    threshold: f64,
) -> Result<Vec<Vec<usize>>> {
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold} is not in (-1, 1]")));
    }
    let Some(root) = tree.root() else { return Ok(Vec::new()) };
    let live = tree.live_leaves().to_vec();
    if live.iter().any(|&u| u >= features.rows()) {
        return Err(Error::DimensionMismatch { expected: tree.width(), found: features.rows() });
    }
    let width = tree.width();
    let mut corr = vec![0.0; width * width];
    for (i, &a) in live.iter().enumerate() {
        for &b in &live[i + 1..] {
            let r = pearson(features.row(a), features.row(b));
            let r = if r.is_nan() { 0.0 } else { r };
            corr[a * width + b] = r;
            corr[b * width + a] = r;
        }
    }
    // sum of pairwise correlations inside each node, children first
    let mut sums = vec![0.0; tree.slots()];
    let mut order: Vec<NodeId> = tree.live_nodes().collect();
    order.sort_unstable();
    for &id in &order {
        let children = &tree.node(id).children;
        let mut total: f64 = children.iter().map(|&c| sums[c]).sum();
        for (i, &x) in children.iter().enumerate() {
            for &y in &children[i + 1..] {
                for a in tree.leafset(x).iter() {
                    for b in tree.leafset(y).iter() {
                        total += corr[a * width + b];
                    }
                }
            }
        }
        sums[id] = total;
    }
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        let members = tree.leafset(id);
        let size = members.len();
        let mean = if size >= 2 { sums[id] / (size * (size - 1) / 2) as f64 } else { f64::NAN };
        if size == 1 {
            out.push(members.to_vec());
        } else if mean >= threshold {
            out.push(members.to_vec());
        } else {
            stack.extend(tree.node(id).children.iter().copied());
        }
    }
    out.sort();
    Ok(out)
}
