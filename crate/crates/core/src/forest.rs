//! Composition trees, forests over a shared leaf universe, and purity maps.
//!
//! A [`CompositionTree`] stores a materialized [`LeafSet`] at every node.
//! Node ids are stable: leaf `u` is node `u` and merge `r` of the source
//! linkage is node `n + r`. Contraction kills nodes in place rather than
//! renumbering, so a [`PurityMap`] can be indexed by node id for the whole
//! life of a run.
//!
//! Purity follows the subset lattice. If a set is pure then so is every
//! subset of it, and if a set is impure then so is every superset. Marking is
//! eager: [`PurityMap::mark_impure`] flags every node in every tree whose
//! leaf set contains the witness, and [`PurityMap::mark_pure`] flags every
//! node contained in the pure set.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leafset::LeafSet;
use crate::treegen::LinkageTree;

pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub leafset: LeafSet,
    pub alive: bool,
}

#[derive(Clone, Debug)]
pub struct CompositionTree {
    pub tag: String,
    nodes: Vec<Node>,
    root: Option<NodeId>,
}

impl CompositionTree {
    pub fn from_linkage(tree: &LinkageTree, tag: impl Into<String>) -> Result<Self> {
        tree.validate()?;
        let n = tree.n;
        let mut nodes: Vec<Node> = (0..n)
            .map(|u| Node { parent: None, children: Vec::new(), leafset: LeafSet::singleton(n, u), alive: true })
            .collect();
        for (r, m) in tree.merges.iter().enumerate() {
            let id = n + r;
            let leafset = nodes[m.left].leafset.union(&nodes[m.right].leafset);
            nodes[m.left].parent = Some(id);
            nodes[m.right].parent = Some(id);
            nodes.push(Node { parent: None, children: vec![m.left, m.right], leafset, alive: true });
        }
        let root = Some(nodes.len() - 1);
        Ok(CompositionTree { tag: tag.into(), nodes, root })
    }

    /// Universe width (the original leaf count).
    pub fn width(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.leafset.width())
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// All node slots, including dead ones.
    pub fn slots(&self) -> usize {
        self.nodes.len()
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.alive).map(|(i, _)| i)
    }

    pub fn live_leaves(&self) -> LeafSet {
        match self.root {
            Some(r) => self.nodes[r].leafset.clone(),
            None => LeafSet::empty(self.width()),
        }
    }

    pub fn leafset(&self, id: NodeId) -> &LeafSet {
        &self.nodes[id].leafset
    }

    /// Path from `id` up to the root, inclusive at both ends.
    pub fn path_to_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    fn check_live(&self, s: &LeafSet) -> Result<()> {
        let live = self.live_leaves();
        match s.difference(&live).first() {
            Some(u) => Err(Error::DeadUnit(u)),
            None => Ok(()),
        }
    }

    /// Lowest node whose leaf set contains `s` (the LCA of its leaves).
    pub fn lowest_containing(&self, s: &LeafSet) -> Result<NodeId> {
        let first = s.first().ok_or_else(|| Error::InvalidInput("empty leaf set".into()))?;
        self.check_live(s)?;
        let mut cur = first;
        while !self.nodes[cur].leafset.is_superset(s) {
            cur = self.nodes[cur].parent.expect("root contains every live leaf");
        }
        Ok(cur)
    }

    /// The smallest node whose leaf set strictly contains `s`, or `None` when
    /// `s` is the whole live universe.
    pub fn minimal_extension(&self, s: &LeafSet) -> Result<Option<NodeId>> {
        let lca = self.lowest_containing(s)?;
        if self.nodes[lca].leafset == *s {
            Ok(self.nodes[lca].parent)
        } else {
            Ok(Some(lca))
        }
    }

    /// Removes `block` from this tree: leaves die, emptied nodes die, and
    /// internal nodes left with one child are spliced out.
    fn contract(&mut self, block: &LeafSet) {
        let mut touched = Vec::new();
        for u in block.iter() {
            if !self.nodes[u].alive {
                continue;
            }
            self.nodes[u].alive = false;
            self.nodes[u].leafset.remove(u);
            let mut cur = self.nodes[u].parent;
            while let Some(p) = cur {
                if !self.nodes[p].leafset.contains(u) {
                    break;
                }
                self.nodes[p].leafset.remove(u);
                touched.push(p);
                cur = self.nodes[p].parent;
            }
        }
        touched.sort_unstable();
        touched.dedup();
        // parents always have larger ids than their children, so ascending
        // order visits children first
        for id in touched {
            if !self.nodes[id].alive {
                continue;
            }
            let alive_children: Vec<NodeId> =
                self.nodes[id].children.iter().copied().filter(|&c| self.nodes[c].alive).collect();
            self.nodes[id].children = alive_children;
            match self.nodes[id].children.len() {
                0 => self.kill(id),
                1 => {
                    let child = self.nodes[id].children[0];
                    let parent = self.nodes[id].parent;
                    self.nodes[child].parent = parent;
                    if let Some(p) = parent {
                        for c in self.nodes[p].children.iter_mut() {
                            if *c == id {
                                *c = child;
                            }
                        }
                    }
                    if self.root == Some(id) {
                        self.root = Some(child);
                    }
                    self.nodes[id].alive = false;
                    self.nodes[id].children.clear();
                }
                _ => {}
            }
        }
    }

    fn kill(&mut self, id: NodeId) {
        self.nodes[id].alive = false;
        self.nodes[id].children.clear();
        if self.root == Some(id) {
            self.root = None;
        }
    }
}

/// Ordered list of trees over a common live-leaf universe.
#[derive(Clone, Debug)]
pub struct Forest {
    trees: Vec<CompositionTree>,
    width: usize,
    live: LeafSet,
}

impl Forest {
    pub fn new(trees: Vec<CompositionTree>) -> Result<Self> {
        let first = trees.first().ok_or_else(|| Error::InvalidInput("forest needs at least one tree".into()))?;
        let width = first.width();
        let live = first.live_leaves();
        for (i, t) in trees.iter().enumerate() {
            if t.width() != width || t.live_leaves() != live {
                return Err(Error::InvalidInput(format!(
                    "tree {i} ({}) does not share the leaf set of tree 0",
                    t.tag
                )));
            }
        }
        Ok(Forest { trees, width, live })
    }

    pub fn from_linkages(trees: &[(String, LinkageTree)]) -> Result<Self> {
        Self::new(
            trees.iter().map(|(tag, t)| CompositionTree::from_linkage(t, tag.clone())).collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn trees(&self) -> &[CompositionTree] {
        &self.trees
    }

    pub fn tree(&self, i: usize) -> &CompositionTree {
        &self.trees[i]
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    /// Original universe size `n`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn live(&self) -> &LeafSet {
        &self.live
    }

    /// True once every unit has been removed.
    pub fn is_exhausted(&self) -> bool {
        self.live.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Keeps the listed trees, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Result<Forest> {
        let trees = indices
            .iter()
            .map(|&i| {
                self.trees.get(i).cloned().ok_or_else(|| {
                    Error::InvalidInput(format!("tree index {i} out of range for {} trees", self.trees.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Forest::new(trees)
    }

    pub fn minimal_extension(&self, tree: usize, s: &LeafSet) -> Result<Option<NodeId>> {
        self.trees[tree].minimal_extension(s)
    }

    /// Removes `block` from every tree.
    pub fn contract(&mut self, block: &LeafSet) -> Result<()> {
        if block.is_empty() {
            return Err(Error::InvalidInput("cannot contract an empty block".into()));
        }
        if let Some(u) = block.difference(&self.live).first() {
            return Err(Error::DeadUnit(u));
        }
        for t in &mut self.trees {
            t.contract(block);
        }
        self.live.difference_with(block);
        Ok(())
    }

    /// Debug dump: one `tree,node,parent,popcount,state` line per live node.
    pub fn snapshot(&self, purity: &PurityMap) -> String {
        let mut out = String::from("tree,node,parent,popcount,state\n");
        for (ti, t) in self.trees.iter().enumerate() {
            for id in t.live_nodes() {
                let n = t.node(id);
                let parent = n.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
                let _ = writeln!(out, "{ti},{id},{parent},{},{}", n.leafset.len(), purity.state(ti, id).name());
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purity {
    Unknown,
    Pure,
    Impure,
}

impl Purity {
    pub fn name(self) -> &'static str {
        match self {
            Purity::Unknown => "unknown",
            Purity::Pure => "pure",
            Purity::Impure => "impure",
        }
    }
}

/// Three-state purity per (tree, node), plus a record of every node that was
/// ever marked impure (kept across [`PurityMap::reset`]).
#[derive(Clone, Debug)]
pub struct PurityMap {
    state: Vec<Vec<Purity>>,
    ever_impure: Vec<Vec<bool>>,
}

impl PurityMap {
    pub fn new(forest: &Forest) -> Self {
        PurityMap {
            state: forest.trees.iter().map(|t| vec![Purity::Unknown; t.slots()]).collect(),
            ever_impure: forest.trees.iter().map(|t| vec![false; t.slots()]).collect(),
        }
    }

    pub fn state(&self, tree: usize, node: NodeId) -> Purity {
        self.state[tree][node]
    }

    pub fn reset(&mut self) {
        for s in &mut self.state {
            s.iter_mut().for_each(|p| *p = Purity::Unknown);
        }
    }

    /// Number of distinct nodes of `tree` marked impure at any point.
    pub fn deviations(&self, tree: usize) -> usize {
        self.ever_impure[tree].iter().filter(|&&b| b).count()
    }

    /// Marks every node whose leaf set contains `witness` as impure. Returns
    /// the number of state changes.
    pub fn mark_impure(&mut self, forest: &Forest, witness: &LeafSet) -> Result<usize> {
        if witness.len() < 2 {
            return Err(Error::InvalidInput("an impurity witness needs at least two units".into()));
        }
        let mut chains = Vec::with_capacity(forest.len());
        for (ti, t) in forest.trees.iter().enumerate() {
            let path = t.path_to_root(t.lowest_containing(witness)?);
            if let Some(&bad) = path.iter().find(|&&id| self.state[ti][id] == Purity::Pure) {
                return Err(Error::LatticeViolation {
                    tree: ti,
                    node: bad,
                    reason: "node is pure but contains an impure set".into(),
                });
            }
            chains.push(path);
        }
        let mut changed = 0;
        for (ti, path) in chains.into_iter().enumerate() {
            for id in path {
                if self.state[ti][id] != Purity::Impure {
                    self.state[ti][id] = Purity::Impure;
                    self.ever_impure[ti][id] = true;
                    changed += 1;
                }
            }
        }
        Ok(changed)
    }

    /// Marks every node whose leaf set is contained in `pure` as pure.
    pub fn mark_pure(&mut self, forest: &Forest, pure: &LeafSet) -> Result<usize> {
        if pure.is_empty() {
            return Err(Error::InvalidInput("cannot mark an empty set pure".into()));
        }
        if let Some(u) = pure.difference(forest.live()).first() {
            return Err(Error::DeadUnit(u));
        }
        let mut targets = Vec::with_capacity(forest.len());
        for (ti, t) in forest.trees.iter().enumerate() {
            let mut seen = vec![false; t.slots()];
            let mut nodes = Vec::new();
            for u in pure.iter() {
                let mut cur = Some(u);
                while let Some(id) = cur {
                    if seen[id] || !t.nodes[id].leafset.is_subset(pure) {
                        break;
                    }
                    seen[id] = true;
                    if self.state[ti][id] == Purity::Impure {
                        return Err(Error::LatticeViolation {
                            tree: ti,
                            node: id,
                            reason: "node is impure but lies inside a pure set".into(),
                        });
                    }
                    nodes.push(id);
                    cur = t.nodes[id].parent;
                }
            }
            targets.push(nodes);
        }
        let mut changed = 0;
        for (ti, nodes) in targets.into_iter().enumerate() {
            for id in nodes {
                if self.state[ti][id] != Purity::Pure {
                    self.state[ti][id] = Purity::Pure;
                    changed += 1;
                }
            }
        }
        Ok(changed)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::treegen::Merge;

    fn m(left: usize, right: usize, height: f64, size: usize) -> Merge {
        Merge { left, right, height, size }
    }

    /// The two five-unit trees of the worked example, with unit `k` stored
    /// as id `k - 1`.
    ///
    /// Tree 0: `((1, (2, 3)), (4, 5))`. Tree 1: `((((1, 3), 4), 2), 5)`.
    pub fn example_forest() -> Forest {
        let t1 = LinkageTree::new(
            5,
            vec![m(1, 2, 1.0, 2), m(3, 4, 1.5, 2), m(0, 5, 2.0, 3), m(6, 7, 3.0, 5)],
        )
        .unwrap();
        let t2 = LinkageTree::new(
            5,
            vec![m(0, 2, 1.0, 2), m(3, 5, 2.0, 3), m(1, 6, 3.0, 4), m(4, 7, 4.0, 5)],
        )
        .unwrap();
        Forest::from_linkages(&[("T1".into(), t1), ("T2".into(), t2)]).unwrap()
    }

    /// Ids from the worked example's 1-based unit labels.
    pub fn set(units: &[usize]) -> LeafSet {
        LeafSet::from_units(5, units.iter().map(|u| u - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::{example_forest, set};
    use super::*;
    use crate::treegen::Merge;

    fn find(forest: &Forest, tree: usize, units: &[usize]) -> NodeId {
        let t = forest.tree(tree);
        let want = set(units);
        t.live_nodes().find(|&id| *t.leafset(id) == want).expect("node exists")
    }

    #[test]
    fn smallest_tree() {
        let t = LinkageTree::new(2, vec![Merge { left: 0, right: 1, height: 1.0, size: 2 }]).unwrap();
        let c = CompositionTree::from_linkage(&t, "x").unwrap();
        assert_eq!(c.root(), Some(2));
        assert_eq!(c.leafset(2).to_vec(), vec![0, 1]);
        assert_eq!(c.live_nodes().count(), 3);
    }

    #[test]
    fn minimal_extensions_in_worked_example() {
        let f = example_forest();
        let ext = f.minimal_extension(0, &set(&[3])).unwrap().unwrap();
        assert_eq!(*f.tree(0).leafset(ext), set(&[2, 3]));
        let ext = f.minimal_extension(1, &set(&[1, 3])).unwrap().unwrap();
        assert_eq!(*f.tree(1).leafset(ext), set(&[1, 3, 4]));
        // not a node: lca is returned
        let ext = f.minimal_extension(1, &set(&[3, 4])).unwrap().unwrap();
        assert_eq!(*f.tree(1).leafset(ext), set(&[1, 3, 4]));
        assert_eq!(f.minimal_extension(0, &set(&[1, 2, 3, 4, 5])).unwrap(), None);
    }

    #[test]
    fn impurity_propagates_across_trees() {
        let f = example_forest();
        let mut p = PurityMap::new(&f);
        let changed = p.mark_impure(&f, &set(&[2, 3])).unwrap();
        assert_eq!(p.state(0, find(&f, 0, &[2, 3])), Purity::Impure);
        assert_eq!(p.state(1, find(&f, 1, &[1, 2, 3, 4])), Purity::Impure);
        assert_eq!(p.state(1, find(&f, 1, &[1, 2, 3, 4, 5])), Purity::Impure);
        assert_eq!(p.state(1, find(&f, 1, &[1, 3, 4])), Purity::Unknown);
        // T1: {2,3}, {1,2,3}, root; T2: {1,2,3,4}, root
        assert_eq!(changed, 5);
        assert_eq!(p.mark_impure(&f, &set(&[2, 3])).unwrap(), 0);
    }

    #[test]
    fn root_witness_marks_only_roots() {
        let f = example_forest();
        let mut p = PurityMap::new(&f);
        assert_eq!(p.mark_impure(&f, &set(&[1, 2, 3, 4, 5])).unwrap(), 2);
    }

    #[test]
    fn purity_inherits_downward() {
        let f = example_forest();
        let mut p = PurityMap::new(&f);
        p.mark_pure(&f, &set(&[3])).unwrap();
        assert_eq!(p.state(0, 2), Purity::Pure);
        assert_eq!(p.state(1, 2), Purity::Pure);
        p.mark_pure(&f, &set(&[1, 3])).unwrap();
        assert_eq!(p.state(1, find(&f, 1, &[1, 3])), Purity::Pure);
        assert_eq!(p.state(0, find(&f, 0, &[2, 3])), Purity::Unknown);
    }

    #[test]
    fn lattice_violations_are_errors() {
        let f = example_forest();
        let mut p = PurityMap::new(&f);
        p.mark_pure(&f, &set(&[1, 3, 4])).unwrap();
        assert!(matches!(p.mark_impure(&f, &set(&[1, 4])), Err(Error::LatticeViolation { .. })));
        let mut p = PurityMap::new(&f);
        p.mark_impure(&f, &set(&[1, 3])).unwrap();
        assert!(matches!(p.mark_pure(&f, &set(&[1, 3, 4])), Err(Error::LatticeViolation { .. })));
        assert!(p.mark_impure(&f, &set(&[2])).is_err());
    }

    #[test]
    fn contract_worked_example() {
        let mut f = example_forest();
        f.contract(&set(&[1, 3])).unwrap();
        assert_eq!(*f.live(), set(&[2, 4, 5]));
        let t0 = f.tree(0);
        let n45 = find(&f, 0, &[4, 5]);
        assert_eq!(t0.node(n45).children, vec![3, 4]);
        assert_eq!(*t0.leafset(t0.root().unwrap()), set(&[2, 4, 5]));
        // the old {1,2,3} node is spliced, so leaf 2 hangs off the root
        assert_eq!(t0.node(1).parent, t0.root());
        let t1 = f.tree(1);
        let leaves: Vec<_> = t1.live_nodes().map(|id| t1.leafset(id).to_vec()).collect();
        assert_eq!(leaves.len(), 5);
        assert!(leaves.contains(&vec![1, 3]));
        assert!(f.minimal_extension(0, &set(&[1])).is_err());
    }

    #[test]
    fn contract_singleton_splices_parent() {
        let mut f = example_forest();
        f.contract(&set(&[5])).unwrap();
        assert_eq!(f.live().len(), 4);
        let t0 = f.tree(0);
        // {4,5} collapses into leaf 4
        assert_eq!(t0.node(3).parent, t0.root());
        assert!(!t0.node(6).alive);
    }

    #[test]
    fn contract_everything_empties() {
        let mut f = example_forest();
        f.contract(&set(&[1, 2, 3, 4, 5])).unwrap();
        assert!(f.is_exhausted());
        assert!(f.trees().iter().all(|t| t.root().is_none()));
        assert!(matches!(f.contract(&set(&[1])), Err(Error::DeadUnit(0))));
    }

    #[test]
    fn mismatched_universes_rejected() {
        let a = LinkageTree::new(2, vec![Merge { left: 0, right: 1, height: 1.0, size: 2 }]).unwrap();
        let b = LinkageTree::new(1, vec![]).unwrap();
        assert!(Forest::from_linkages(&[("a".into(), a), ("b".into(), b)]).is_err());
    }

    #[test]
    fn snapshot_lists_live_nodes() {
        let f = example_forest();
        let p = PurityMap::new(&f);
        let snap = f.snapshot(&p);
        assert_eq!(snap.lines().count(), 1 + 9 + 9);
        assert!(snap.contains("0,8,-,5,unknown"));
    }
}
