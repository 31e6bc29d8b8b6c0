//! One human-answered run.
//!
//! A session never keeps a suspended engine. Its state is the event log;
//! every change replays the effective answers through a fresh engine, which
//! stops at the first pair without an answer. The engine is deterministic,
//! so the replay reproduces the same queries in the same order, and undo is
//! just dropping answers from the end.

use std::sync::Arc;

use forestcut::dataset::WaveformDataset;
use forestcut::forest::Forest;
use forestcut::oracle::{Answer, Clock, QueryRecord, ScriptedSource, SourceError};
use forestcut::search::{Progress, PurityMode, RunReport, Search, SearchConfig};
use forestcut::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Same,
    Different,
}

impl From<Verdict> for Answer {
    fn from(v: Verdict) -> Answer {
        Answer::same(v == Verdict::Same)
    }
}

impl From<Answer> for Verdict {
    fn from(a: Answer) -> Verdict {
        if a == Answer::Same {
            Verdict::Same
        } else {
            Verdict::Different
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Event {
    Answer { query_id: u64, a: usize, b: usize, answer: Verdict, ts: String },
    Undo { k: usize, ts: String },
    Abort { ts: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: PurityMode,
    pub tree_subset: Option<Vec<usize>>,
    pub seed: u64,
}

impl SessionConfig {
    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            mode: self.mode,
            majority_k: 1,
            seed: self.seed,
            tree_subset: self.tree_subset.clone(),
            stop_after_binary_search: false,
            clock: Clock::Logical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub dataset_id: String,
    pub ensemble_id: String,
    pub config: SessionConfig,
    pub created: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingAnswer,
    /// Only observable while a mutation is being applied.
    Running,
    Complete,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPair {
    pub query_id: u64,
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub query_id: u64,
    pub a: usize,
    pub b: usize,
    pub answer: Verdict,
    pub ts: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("recorded answer {index} was for ({}, {}) but the engine asked ({}, {})", .expected.0, .expected.1, .asked.0, .asked.1)]
    Diverged { index: usize, expected: (usize, usize), asked: (usize, usize) },
    #[error("run finished with {unused} recorded answers left over")]
    Unused { unused: usize },
    #[error(transparent)]
    Engine(#[from] Error),
}

/// The evaluated state of an event log.
#[derive(Clone, Debug)]
pub struct View {
    pub status: Status,
    pub pending: Option<PendingPair>,
    pub progress: Progress,
    pub history: Vec<HistoryEntry>,
    pub log: Vec<QueryRecord>,
    pub partition: Vec<Vec<usize>>,
    pub report: Option<RunReport>,
}

/// Effective answers after undos, and whether the session was aborted.
pub fn effective(events: &[Event]) -> (Vec<HistoryEntry>, bool) {
    let mut answers = Vec::new();
    let mut aborted = false;
    for e in events {
        match e {
            Event::Answer { query_id, a, b, answer, ts } => {
                answers.push(HistoryEntry { query_id: *query_id, a: *a, b: *b, answer: *answer, ts: ts.clone() })
            }
            Event::Undo { k, .. } => answers.truncate(answers.len().saturating_sub(*k)),
            Event::Abort { .. } => aborted = true,
        }
    }
    (answers, aborted)
}

pub fn evaluate(meta: &SessionMeta, forest: &Forest, events: &[Event]) -> Result<View, SessionError> {
    let (history, aborted) = effective(events);
    let script = history.iter().map(|h| (h.a, h.b, Answer::from(h.answer))).collect();
    let mut source = ScriptedSource::new(script);
    if aborted {
        source = source.aborted();
    }
    let mut search = Search::new(forest, meta.config.search())?;
    let outcome = search.run_to_end(&mut source);
    let progress = search.progress();
    let log = search.engine().export_log();
    let (status, pending) = match outcome {
        Ok(()) if source.consumed() < history.len() => {
            return Err(SessionError::Unused { unused: history.len() - source.consumed() })
        }
        Ok(()) => (Status::Complete, None),
        Err(Error::Source(SourceError::Pending { a, b })) => {
            (Status::AwaitingAnswer, Some(PendingPair { query_id: events.len() as u64 + 1, a, b }))
        }
        Err(Error::Source(SourceError::Aborted { .. })) => (Status::Aborted, None),
        Err(Error::Source(SourceError::Mismatch { expected, asked })) => {
            return Err(SessionError::Diverged { index: source.consumed(), expected, asked })
        }
        Err(e) => return Err(e.into()),
    };
    let partition = search.partial_partition();
    let report = (status == Status::Complete).then(|| {
        search.finish().report(serde_json::json!({
            "session_id": meta.session_id,
            "dataset_id": meta.dataset_id,
            "ensemble_id": meta.ensemble_id,
            "config": meta.config,
        }))
    });
    Ok(View { status, pending, progress, history, log, partition, report })
}

pub struct Session {
    pub meta: SessionMeta,
    pub dataset: Arc<WaveformDataset>,
    pub forest: Arc<Forest>,
    pub events: Vec<Event>,
    pub view: View,
}

impl Session {
    pub fn new(
        meta: SessionMeta,
        dataset: Arc<WaveformDataset>,
        forest: Arc<Forest>,
        events: Vec<Event>,
    ) -> Result<Self, SessionError> {
        let view = evaluate(&meta, &forest, &events)?;
        Ok(Session { meta, dataset, forest, events, view })
    }

    /// Evaluates the log with `event` appended, without committing it.
    pub fn preview(&self, event: Event) -> Result<(Vec<Event>, View), SessionError> {
        let mut events = self.events.clone();
        events.push(event);
        let view = evaluate(&self.meta, &self.forest, &events)?;
        Ok((events, view))
    }

    pub fn commit(&mut self, events: Vec<Event>, view: View) {
        self.events = events;
        self.view = view;
    }
}
