//! Naive agglomerative clustering with Lance–Williams updates.

use std::fmt::Write as _;
use std::path::Path;

use super::DistanceMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Single,
    Average,
    Complete,
    Weighted,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Single, Method::Average, Method::Complete, Method::Weighted];

    pub fn name(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Average => "average",
            Method::Complete => "complete",
            Method::Weighted => "weighted",
        }
    }

    /// Distance from cluster `k` to the union of `i` and `j`.
    #[inline]
    fn update(self, d_ki: f64, d_kj: f64, n_i: usize, n_j: usize) -> f64 {
        match self {
            Method::Single => d_ki.min(d_kj),
            Method::Complete => d_ki.max(d_kj),
            Method::Average => (n_i as f64 * d_ki + n_j as f64 * d_kj) / (n_i + n_j) as f64,
            Method::Weighted => 0.5 * (d_ki + d_kj),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Merge list over leaves `0..n`; merge `r` creates node `n + r`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkageTree {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl LinkageTree {
    pub fn new(n: usize, merges: Vec<Merge>) -> Result<Self> {
        let t = LinkageTree { n, merges };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::InvalidInput("linkage tree needs at least one leaf".into()));
        }
        if self.merges.len() != n - 1 {
            return Err(Error::InvalidInput(format!("{} merges for {} leaves", self.merges.len(), n)));
        }
        let mut size = vec![1usize; n];
        let mut used = vec![false; 2 * n - 1];
        for (r, m) in self.merges.iter().enumerate() {
            let id = n + r;
            for child in [m.left, m.right] {
                if child >= id {
                    return Err(Error::InvalidInput(format!("merge {r} references future node {child}")));
                }
                if std::mem::replace(&mut used[child], true) {
                    return Err(Error::InvalidInput(format!("node {child} merged twice")));
                }
            }
            if m.left == m.right {
                return Err(Error::InvalidInput(format!("merge {r} joins node {} with itself", m.left)));
            }
            let s = size[m.left] + size[m.right];
            if m.size != s {
                return Err(Error::InvalidInput(format!("merge {r} has size {} but children sum to {s}", m.size)));
            }
            if !m.height.is_finite() {
                return Err(Error::InvalidInput(format!("merge {r} has non-finite height")));
            }
            size.push(s);
        }
        Ok(())
    }

    /// Interchange text: `n=<leaves>` then one `left right height size` per merge.
    pub fn to_text(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for m in &self.merges {
            let _ = writeln!(out, "{} {} {:?} {}", m.left, m.right, m.height, m.size);
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, reason: String| Error::Parse { path: origin.to_path_buf(), line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or_else(|| perr(1, "empty linkage file".into()))?;
        let n: usize = header
            .trim()
            .strip_prefix("n=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| perr(hl + 1, format!("expected `n=<leaf count>`, found `{header}`")))?;
        let mut merges = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(perr(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let bad = |what: &str| perr(i + 1, format!("bad {what}"));
            merges.push(Merge {
                left: f[0].parse().map_err(|_| bad("left"))?,
                right: f[1].parse().map_err(|_| bad("right"))?,
                height: f[2].parse().map_err(|_| bad("height"))?,
                size: f[3].parse().map_err(|_| bad("size"))?,
            });
        }
        LinkageTree::new(n, merges).map_err(|e| perr(0, e.to_string()))
    }
}

/// Agglomerates `dist` bottom-up. At each step the active pair with the
/// smallest distance merges; ties go to the lexicographically smallest
/// `(left id, right id)` with `left < right`, where ids are node ids.
pub fn linkage(dist: &DistanceMatrix, method: Method) -> Result<LinkageTree> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::InvalidInput("linkage needs at least one point".into()));
    }
    DistanceMatrix::from_full(n, dist.as_slice().to_vec())?;
    let mut d = dist.as_slice().to_vec();
    let mut active: Vec<usize> = (0..n).collect();
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for r in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None; // (d, lo id, hi id, slot a, slot b)
        for (ai, &a) in active.iter().enumerate() {
            let row = &d[a * n..(a + 1) * n];
            for &b in &active[ai + 1..] {
                let dab = row[b];
                let (lo, hi) = if node[a] < node[b] { (node[a], node[b]) } else { (node[b], node[a]) };
                let better = match best {
                    None => true,
                    Some((bd, bl, bh, _, _)) => dab < bd || (dab == bd && (lo, hi) < (bl, bh)),
                };
                if better {
                    best = Some((dab, lo, hi, a, b));
                }
            }
        }
        let (height, lo, hi, a, b) = best.expect("at least two active clusters");
        let (na, nb) = (size[a], size[b]);
        for &k in &active {
            if k == a || k == b {
                continue;
            }
            let v = method.update(d[k * n + a], d[k * n + b], na, nb);
            d[k * n + a] = v;
            d[a * n + k] = v;
        }
        merges.push(Merge { left: lo, right: hi, height, size: na + nb });
        node[a] = n + r;
        size[a] = na + nb;
        active.retain(|&s| s != b);
    }
    Ok(LinkageTree { n, merges })
}
