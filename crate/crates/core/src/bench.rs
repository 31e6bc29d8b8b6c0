//! Seeded sweep over ensemble sizes.
//!
//! Each trial draws its own seed from the master seed and shuffles the tree
//! indices once; the run at size `m` uses the first `m` trees of that
//! shuffle. Larger `m` therefore extends the trees used at smaller `m` within
//! the same trial, which keeps the comparison across sizes paired.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::metrics::ami;
use crate::oracle::GroundTruthOracle;
use crate::search::{partition_labels, run, SearchConfig};

pub const TABLE_HEADER: &str = "m,trial,seed,n_clusters,ami,queries,inferred,runtime_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub m_grid: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub search: SearchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub n_clusters: usize,
    pub ami: f64,
    pub oracle_consultations: u64,
    pub inferred: u64,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub m: usize,
    pub trials: usize,
    pub n_clusters: (f64, f64),
    pub ami: (f64, f64),
    pub queries: (f64, f64),
    pub queries_median: f64,
    pub runtime_ms: (f64, f64),
}

/// Seed for trial `trial` of a sweep.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

/// Trees used by a trial at size `m`, ascending.
pub fn draw_trees(seed: u64, ensemble_size: usize, m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ensemble_size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..m.min(ensemble_size)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Runs every `(m, trial)` cell against the ground-truth labels. Rows come
/// back in `(m, trial)` order regardless of scheduling.
pub fn benchmark(forest: &Forest, truth: &[usize], cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.m_grid.is_empty() || cfg.trials == 0 {
        return Err(Error::config("m_grid", "need at least one size and one trial"));
    }
    if truth.len() != forest.width() {
        return Err(Error::DimensionMismatch { expected: forest.width(), found: truth.len() });
    }
    if let Some(&m) = cfg.m_grid.iter().find(|&&m| m == 0 || m > forest.len()) {
        return Err(Error::config("m_grid", format!("size {m} is outside 1..={}", forest.len())));
    }
    cfg.search.validate()?;
    let cells: Vec<(usize, usize)> =
        cfg.m_grid.iter().flat_map(|&m| (0..cfg.trials).map(move |t| (m, t))).collect();
    cells
        .par_iter()
        .map(|&(m, trial)| {
            let seed = trial_seed(cfg.master_seed, trial);
            let search = SearchConfig {
                seed,
                tree_subset: Some(draw_trees(seed, forest.len(), m)),
                ..cfg.search.clone()
            };
            let mut oracle = GroundTruthOracle::new(truth.to_vec());
            let start = Instant::now();
            let result = run(forest, &mut oracle, &search).map_err(|f| f.error)?;
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(BenchmarkRow {
                m,
                trial,
                seed,
                n_clusters: result.partition.len(),
                ami: ami(truth, &partition_labels(&result.partition))?,
                oracle_consultations: result.counters.engine.oracle_consultations,
                inferred: result.counters.engine.inferred_answers,
                runtime_ms,
            })
        })
        .collect()
}

/// The benchmark table. Runtimes are written as `NA` unless `timing` is
/// set, so the table stays byte-reproducible by default.
pub fn table_csv(rows: &[BenchmarkRow], timing: bool) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let rt = if timing { format!("{:.3}", r.runtime_ms) } else { "NA".into() };
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{},{},{}",
            r.m, r.trial, r.seed, r.n_clusters, r.ami, r.oracle_consultations, r.inferred, rt
        );
    }
    out
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-size means and standard errors, in the order sizes first appear.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<SummaryRow> {
    let mut sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !sizes.contains(&r.m) {
            sizes.push(r.m);
        }
    }
    sizes
        .into_iter()
        .map(|m| {
            let group: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.m == m).collect();
            let col = |f: fn(&BenchmarkRow) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
            let queries = col(|r| r.oracle_consultations as f64);
            SummaryRow {
                m,
                trials: group.len(),
                n_clusters: mean_se(&col(|r| r.n_clusters as f64)),
                ami: mean_se(&col(|r| r.ami)),
                queries: mean_se(&queries),
                queries_median: median(&queries),
                runtime_ms: mean_se(&col(|r| r.runtime_ms)),
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[SummaryRow], timing: bool) -> String {
    let mut out = String::from(
        "m,trials,n_clusters_mean,n_clusters_se,ami_mean,ami_se,queries_mean,queries_se,queries_median,runtime_ms_mean,runtime_ms_se\n",
    );
    for s in summary {
        let rt = if timing { format!("{:.3},{:.3}", s.runtime_ms.0, s.runtime_ms.1) } else { "NA,NA".into() };
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.6},{:.6},{:.4},{:.4},{:.1},{}",
            s.m, s.trials, s.n_clusters.0, s.n_clusters.1, s.ami.0, s.ami.1, s.queries.0, s.queries.1, s.queries_median, rt
        );
    }
    out
}
