//! Pairwise feedback sources and the answer cache placed in front of them.
//!
//! Every question goes through [`InferenceEngine::resolve`] first. Same-cluster
//! answers are kept as a union-find of must-link classes, and
//! different-cluster answers as cannot-link edges between class
//! representatives. A source is only consulted when the closure of earlier
//! answers cannot decide the pair, so no unordered pair ever reaches the
//! source twice.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// One entry of the feedback matrix: same block (+1) or different (−1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Answer {
    Same,
    Different,
}

impl Answer {
    pub fn sign(self) -> i8 {
        match self {
            Answer::Same => 1,
            Answer::Different => -1,
        }
    }

    pub fn same(yes: bool) -> Self {
        if yes {
            Answer::Same
        } else {
            Answer::Different
        }
    }

    pub fn flip(self) -> Self {
        Answer::same(self == Answer::Different)
    }
}

impl From<Answer> for i8 {
    fn from(a: Answer) -> i8 {
        a.sign()
    }
}

impl TryFrom<i8> for Answer {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Answer::Same),
            -1 => Ok(Answer::Different),
            other => Err(format!("answer must be 1 or -1, got {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Oracle,
    Inferred,
    Human,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SourceError {
    /// An interactive source has no answer yet for this pair.
    #[error("waiting for an answer to ({a}, {b})")]
    Pending { a: usize, b: usize },
    #[error("session aborted while ({a}, {b}) was pending")]
    Aborted { a: usize, b: usize },
    #[error("scripted answer was for ({}, {}) but the engine asked ({}, {})", .expected.0, .expected.1, .asked.0, .asked.1)]
    Mismatch { expected: (usize, usize), asked: (usize, usize) },
    #[error("unit {0} has no ground-truth label")]
    Unlabeled(usize),
}

pub trait FeedbackSource {
    fn answer(&mut self, a: usize, b: usize) -> std::result::Result<Answer, SourceError>;

    fn tag(&self) -> SourceTag {
        SourceTag::Oracle
    }

    /// Whether the same pair may be asked more than once (majority voting).
    fn repeatable(&self) -> bool {
        true
    }
}

impl<S: FeedbackSource + ?Sized> FeedbackSource for &mut S {
    fn answer(&mut self, a: usize, b: usize) -> std::result::Result<Answer, SourceError> {
        (**self).answer(a, b)
    }
    fn tag(&self) -> SourceTag {
        (**self).tag()
    }
    fn repeatable(&self) -> bool {
        (**self).repeatable()
    }
}

/// Answers from planted labels.
#[derive(Clone, Debug)]
pub struct GroundTruthOracle {
    labels: Vec<usize>,
}

impl GroundTruthOracle {
    pub fn new(labels: Vec<usize>) -> Self {
        GroundTruthOracle { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn truth(&self, a: usize, b: usize) -> std::result::Result<Answer, SourceError> {
        let la = *self.labels.get(a).ok_or(SourceError::Unlabeled(a))?;
        let lb = *self.labels.get(b).ok_or(SourceError::Unlabeled(b))?;
        Ok(Answer::same(la == lb))
    }
}

impl FeedbackSource for GroundTruthOracle {
    fn answer(&mut self, a: usize, b: usize) -> std::result::Result<Answer, SourceError> {
        self.truth(a, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Every consultation flips independently with probability λ.
    PerConsultation,
    /// A fixed set of `round(λ·C(n,2))` pairs is flipped once and for all.
    FixedCorruption,
}

/// Ground truth with seeded sign flips.
#[derive(Clone, Debug)]
pub struct NoisyOracle {
    truth: GroundTruthOracle,
    rate: f64,
    rng: ChaCha8Rng,
    corrupted: Option<HashSet<(usize, usize)>>,
}

impl NoisyOracle {
    pub fn new(labels: Vec<usize>, rate: f64, model: NoiseModel, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config("noise", format!("flip rate {rate} is not in [0, 1)")));
        }
        let mut rng = crate::datagen::stream(seed, 0);
        let corrupted = match model {
            NoiseModel::PerConsultation => None,
            NoiseModel::FixedCorruption => {
                let n = labels.len();
                let total = n * n.saturating_sub(1) / 2;
                let count = ((rate * total as f64).round() as usize).min(total);
                let picks = index::sample(&mut rng, total, count);
                Some(picks.iter().map(|k| pair_from_index(n, k)).collect())
            }
        };
        Ok(NoisyOracle { truth: GroundTruthOracle::new(labels), rate, rng, corrupted })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Inverse of the row-major enumeration of pairs `(i, j)`, `i < j`.
fn pair_from_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i - 1;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}

impl FeedbackSource for NoisyOracle {
    fn answer(&mut self, a: usize, b: usize) -> std::result::Result<Answer, SourceError> {
        let t = self.truth.truth(a, b)?;
        let flip = match &self.corrupted {
            Some(set) => set.contains(&(a.min(b), a.max(b))),
            None => self.rng.random::<f64>() < self.rate,
        };
        Ok(if flip { t.flip() } else { t })
    }

    fn repeatable(&self) -> bool {
        self.corrupted.is_none()
    }
}

/// Replays recorded human answers in order, then reports the next pair as
/// pending. This is how an interactive session suspends and resumes.
#[derive(Clone, Debug, Default)]
pub struct ScriptedSource {
    answers: Vec<(usize, usize, Answer)>,
    cursor: usize,
    aborted: bool,
}

impl ScriptedSource {
    pub fn new(answers: Vec<(usize, usize, Answer)>) -> Self {
        ScriptedSource { answers, cursor: 0, aborted: false }
    }

    /// Once the script runs out, report an abort instead of a pending pair.
    pub fn aborted(mut self) -> Self {
        self.aborted = true;
        self
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }
}

impl FeedbackSource for ScriptedSource {
    fn answer(&mut self, a: usize, b: usize) -> std::result::Result<Answer, SourceError> {
        let asked = (a.min(b), a.max(b));
        match self.answers.get(self.cursor) {
            Some(&(x, y, ans)) => {
                let expected = (x.min(y), x.max(y));
                if expected != asked {
                    return Err(SourceError::Mismatch { expected, asked });
                }
                self.cursor += 1;
                Ok(ans)
            }
            None if self.aborted => Err(SourceError::Aborted { a: asked.0, b: asked.1 }),
            None => Err(SourceError::Pending { a: asked.0, b: asked.1 }),
        }
    }

    fn tag(&self) -> SourceTag {
        SourceTag::Human
    }

    fn repeatable(&self) -> bool {
        false
    }
}

/// Timestamp policy for query records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// `ts` is the Unix epoch plus `seq` seconds, so logs are reproducible.
    #[default]
    Logical,
    Wall,
}

impl Clock {
    pub fn stamp(self, seq: u64) -> String {
        let t = match self {
            Clock::Logical => DateTime::<Utc>::from_timestamp(seq as i64, 0).unwrap_or_default(),
            Clock::Wall => Utc::now(),
        };
        t.to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub seq: u64,
    /// Always `a < b`.
    pub a: usize,
    pub b: usize,
    pub answer: Answer,
    pub source: SourceTag,
    pub ts: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Raw source calls, counting every repeat of a majority vote.
    pub oracle_consultations: u64,
    /// Distinct unordered pairs sent to the source.
    pub source_pairs: u64,
    pub inferred_answers: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub answer: Answer,
    pub source: SourceTag,
}

#[derive(Clone, Debug)]
pub struct InferenceEngine {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Cannot-link neighbours, valid only at class representatives.
    cannot: Vec<BTreeSet<usize>>,
    consulted: HashSet<(usize, usize)>,
    log: Vec<QueryRecord>,
    counters: Counters,
    clock: Clock,
}

impl InferenceEngine {
    pub fn new(n: usize, clock: Clock) -> Self {
        InferenceEngine {
            parent: (0..n).collect(),
            size: vec![1; n],
            cannot: vec![BTreeSet::new(); n],
            consulted: HashSet::new(),
            log: Vec::new(),
            counters: Counters::default(),
            clock,
        }
    }

    pub fn universe(&self) -> usize {
        self.parent.len()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// The answer implied by earlier answers, if any.
    pub fn infer(&mut self, a: usize, b: usize) -> Option<Answer> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            Some(Answer::Same)
        } else if self.cannot[ra].contains(&rb) {
            Some(Answer::Different)
        } else {
            None
        }
    }

    fn check_pair(&self, a: usize, b: usize) -> Result<()> {
        let n = self.universe();
        if a == b {
            return Err(Error::InvalidInput(format!("cannot compare unit {a} with itself")));
        }
        if a >= n || b >= n {
            return Err(Error::InvalidInput(format!("pair ({a}, {b}) outside universe of {n}")));
        }
        Ok(())
    }

    pub fn resolve<S: FeedbackSource + ?Sized>(&mut self, source: &mut S, a: usize, b: usize) -> Result<Resolution> {
        self.resolve_majority(source, a, b, 1)
    }

    /// Like [`resolve`](Self::resolve), but an undecided pair is put to the
    /// source `k` times and the majority sign is kept.
    pub fn resolve_majority<S: FeedbackSource + ?Sized>(
        &mut self,
        source: &mut S,
        a: usize,
        b: usize,
        k: usize,
    ) -> Result<Resolution> {
        self.check_pair(a, b)?;
        if k == 0 || k % 2 == 0 {
            return Err(Error::config("majority_k", format!("must be odd and positive, got {k}")));
        }
        if k > 1 && !source.repeatable() {
            return Err(Error::config("majority_k", "this feedback source cannot be asked the same pair twice"));
        }
        let (lo, hi) = (a.min(b), a.max(b));
        if let Some(answer) = self.infer(lo, hi) {
            self.counters.inferred_answers += 1;
            self.push(lo, hi, answer, SourceTag::Inferred);
            return Ok(Resolution { answer, source: SourceTag::Inferred });
        }
        debug_assert!(!self.consulted.contains(&(lo, hi)), "pair ({lo}, {hi}) would be asked twice");
        let mut same = 0;
        for _ in 0..k {
            let ans = source.answer(lo, hi)?;
            self.counters.oracle_consultations += 1;
            if ans == Answer::Same {
                same += 1;
            }
        }
        let answer = Answer::same(2 * same > k);
        self.consulted.insert((lo, hi));
        self.counters.source_pairs += 1;
        self.apply(lo, hi, answer)?;
        let tag = source.tag();
        self.push(lo, hi, answer, tag);
        Ok(Resolution { answer, source: tag })
    }

    fn push(&mut self, a: usize, b: usize, answer: Answer, source: SourceTag) {
        let seq = self.log.len() as u64;
        let ts = self.clock.stamp(seq);
        self.log.push(QueryRecord { seq, a, b, answer, source, ts });
    }

    fn apply(&mut self, a: usize, b: usize, answer: Answer) -> Result<()> {
        let (ra, rb) = (self.find(a), self.find(b));
        match answer {
            Answer::Same => {
                if ra == rb {
                    return Ok(());
                }
                if self.cannot[ra].contains(&rb) {
                    return Err(Error::InvalidInput(format!("({a}, {b}) is already known to differ")));
                }
                let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
                self.parent[small] = big;
                self.size[big] += self.size[small];
                let moved = std::mem::take(&mut self.cannot[small]);
                for x in moved {
                    self.cannot[x].remove(&small);
                    self.cannot[x].insert(big);
                    self.cannot[big].insert(x);
                }
            }
            Answer::Different => {
                if ra == rb {
                    return Err(Error::InvalidInput(format!("({a}, {b}) is already known to match")));
                }
                self.cannot[ra].insert(rb);
                self.cannot[rb].insert(ra);
            }
        }
        Ok(())
    }

    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }

    pub fn export_log(&self) -> Vec<QueryRecord> {
        self.log.clone()
    }

    /// Rebuilds must-link and cannot-link state from the non-inferred
    /// records of a log.
    pub fn replay(n: usize, records: &[QueryRecord], clock: Clock) -> Result<Self> {
        let mut e = InferenceEngine::new(n, clock);
        for r in records.iter().filter(|r| r.source != SourceTag::Inferred) {
            e.check_pair(r.a, r.b)?;
            e.apply(r.a, r.b, r.answer)?;
            e.consulted.insert((r.a.min(r.b), r.a.max(r.b)));
        }
        Ok(e)
    }

    /// Must-link classes as sorted member lists, ordered by smallest member.
    pub fn classes(&mut self) -> Vec<Vec<usize>> {
        let n = self.universe();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for u in 0..n {
            let r = self.find(u);
            by_root[r].push(u);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
        out.sort();
        out
    }

    /// Cannot-link edges keyed by each class's smallest member.
    pub fn cannot_links(&mut self) -> BTreeSet<(usize, usize)> {
        let classes = self.classes();
        let mut min_of = vec![0; self.universe()];
        for c in &classes {
            for &u in c {
                min_of[u] = c[0];
            }
        }
        let mut out = BTreeSet::new();
        for c in &classes {
            let r = self.find(c[0]);
            for &x in &self.cannot[r] {
                let (p, q) = (c[0], min_of[x]);
                out.insert((p.min(q), p.max(q)));
            }
        }
        out
    }
}

impl fmt::Display for QueryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

/// One JSON object per line.
pub fn write_log<W: Write>(mut w: W, records: &[QueryRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<query log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<query log>".into(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
