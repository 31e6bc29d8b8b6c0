//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use common::{planted, random_labelings, reference_ami, CountingOracle};
use forestcut::bench::{benchmark, draw_trees, median, summarize, BenchmarkConfig, BenchmarkRow};
use forestcut::datagen::{generate_synthetic, GeneratorConfig};
use forestcut::dataset::WaveformDataset;
use forestcut::forest::Forest;
use forestcut::leafset::LeafSet;
use forestcut::metrics::{ami, recovery_rates};
use forestcut::oracle::{write_log, Answer, Clock, GroundTruthOracle, InferenceEngine, NoiseModel, NoisyOracle};
use forestcut::search::{auto_flatten_baseline, run, Search, SearchConfig};
use forestcut::treegen::{build_linkages, preprocess, EnsembleConfig, Preprocess};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PLANTED_INSTANCES: u64 = 200;
const PLANTED_BUDGET: Duration = Duration::from_secs(5);
const EXTRA_RESOLVES_PER_INSTANCE: usize = 650;
const TREND_GRID: [usize; 4] = [1, 2, 4, 8];
const TREND_TRIALS: usize = 20;
const TRUE_CLUSTERS: f64 = 96.0;
const CLUSTER_COUNT_TOLERANCE: f64 = 0.15;
const AMI_GAIN: f64 = 0.1;
const AMI_FLOOR: f64 = 0.85;
const QUERY_GROWTH: f64 = 1.5;
const RUNTIME_GRID: [usize; 6] = [1, 2, 4, 8, 16, 32];
const RUNTIME_TRIALS: usize = 10;
const RUNTIME_R2: f64 = 0.9;
const RUNTIME_BUDGET_M32: Duration = Duration::from_secs(60);
const BASELINE_THRESHOLD: f64 = 0.96;
const BASELINE_TREE: &str = "raw-none-correlation-average";
const BASELINE_RATIO: f64 = 1.3;
const AMI_TOLERANCE: f64 = 1e-10;
const NOISE_RATE: f64 = 0.1;
const NOISE_MAJORITY: usize = 5;
const NOISE_SEEDS: u64 = 100;
const NOISE_RECOVERY: f64 = 0.9;
const MASTER_SEED: u64 = 2024;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

struct FullScale {
    dataset: WaveformDataset,
    truth: Vec<usize>,
    forest: Forest,
    trend: Vec<BenchmarkRow>,
}

impl FullScale {
    fn build() -> FullScale {
        let dataset = generate_synthetic(&GeneratorConfig::default()).unwrap();
        let truth = dataset.labels.clone().unwrap();
        let ensemble = build_linkages(&dataset, &EnsembleConfig::default()).unwrap();
        assert!(ensemble.skipped.is_empty());
        let forest = ensemble.forest().unwrap();
        let cfg = BenchmarkConfig {
            m_grid: TREND_GRID.to_vec(),
            trials: TREND_TRIALS,
            master_seed: MASTER_SEED,
            search: SearchConfig::default(),
        };
        let trend = benchmark(&forest, &truth, &cfg).unwrap();
        FullScale { dataset, truth, forest, trend }
    }
}

fn exact_recovery() -> Outcome {
    let start = Instant::now();
    let mut ok = 0;
    let mut node_blocks = true;
    for seed in 0..PLANTED_INSTANCES {
        let p = planted(seed, 2..=12, 4, 3);
        let forest = Forest::from_linkages(&p.trees).unwrap();
        let nodes: HashSet<LeafSet> = forest
            .trees()
            .iter()
            .flat_map(|t| t.live_nodes().map(|id| t.leafset(id).clone()).collect::<Vec<_>>())
            .collect();
        let r = run(&forest, &mut GroundTruthOracle::new(p.labels.clone()), &SearchConfig::default()).unwrap();
        if r.partition == p.blocks() {
            ok += 1;
        }
        node_blocks &= r
            .partition
            .iter()
            .all(|b| nodes.contains(&LeafSet::from_units(p.labels.len(), b.iter().copied())));
    }
    let elapsed = start.elapsed();
    Outcome {
        name: "exact recovery on planted instances",
        pass: ok == PLANTED_INSTANCES && node_blocks && elapsed < PLANTED_BUDGET,
        detail: format!("{ok}/{PLANTED_INSTANCES} recovered, blocks are nodes: {node_blocks}, {elapsed:.2?}"),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut resolves = 0usize;
    let mut mismatches = 0usize;
    let mut duplicates = 0usize;
    for seed in 0..PLANTED_INSTANCES {
        let p = planted(seed, 2..=12, 4, 3);
        let n = p.labels.len();
        let forest = Forest::from_linkages(&p.trees).unwrap();
        let mut oracle = CountingOracle::new(p.labels.clone());
        let mut search = Search::new(&forest, SearchConfig::default()).unwrap();
        search.run_to_end(&mut oracle).unwrap();
        resolves += search.engine().log().len();
        let engine = search.engine_mut();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..EXTRA_RESOLVES_PER_INSTANCE {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let got = engine.resolve(&mut oracle, a, b).unwrap().answer;
            resolves += 1;
            if got != Answer::same(p.labels[a] == p.labels[b]) {
                mismatches += 1;
            }
        }
        for record in engine.log() {
            if record.answer != Answer::same(p.labels[record.a] == p.labels[record.b]) {
                mismatches += 1;
            }
        }
        duplicates += oracle.duplicates;
    }
    Outcome {
        name: "inferred answers match ground truth",
        pass: mismatches == 0 && duplicates == 0 && resolves >= 100_000,
        detail: format!("{resolves} resolves, {mismatches} wrong, {duplicates} repeated consultations"),
    }
}

fn means_by_m(rows: &[BenchmarkRow]) -> Vec<(usize, f64, f64, f64)> {
    summarize(rows).iter().map(|s| (s.m, s.n_clusters.0, s.ami.0, s.queries_median)).collect()
}

fn cluster_count_trend(p: &FullScale) -> Outcome {
    let m = means_by_m(&p.trend);
    let nonincreasing = m.windows(2).all(|w| w[1].1 <= w[0].1);
    let at8 = m.iter().find(|r| r.0 == 8).unwrap().1;
    let within = (at8 - TRUE_CLUSTERS).abs() <= CLUSTER_COUNT_TOLERANCE * TRUE_CLUSTERS;
    let shown: Vec<String> = m.iter().map(|r| format!("m={}: {:.1}", r.0, r.1)).collect();
    Outcome {
        name: "cluster count falls toward the truth",
        pass: nonincreasing && within,
        detail: format!("{} (truth {TRUE_CLUSTERS})", shown.join(", ")),
    }
}

fn ami_trend(p: &FullScale) -> Outcome {
    let m = means_by_m(&p.trend);
    let at1 = m.iter().find(|r| r.0 == 1).unwrap().2;
    let at8 = m.iter().find(|r| r.0 == 8).unwrap().2;
    Outcome {
        name: "AMI rises with ensemble size",
        pass: at8 >= at1 + AMI_GAIN && at8 >= AMI_FLOOR,
        detail: format!("mean AMI m=1 {at1:.4}, m=8 {at8:.4}"),
    }
}

fn query_growth(p: &FullScale) -> Outcome {
    let q = |m: usize| {
        let xs: Vec<f64> = p.trend.iter().filter(|r| r.m == m).map(|r| r.oracle_consultations as f64).collect();
        median(&xs)
    };
    let (q1, q8) = (q(1), q(8));
    Outcome {
        name: "query count grows slowly with ensemble size",
        pass: q8 <= QUERY_GROWTH * q1,
        detail: format!("median consultations m=1 {q1}, m=8 {q8} ({:.2}x)", q8 / q1),
    }
}

fn runtime_scaling(p: &FullScale) -> Outcome {
    let cfg = BenchmarkConfig {
        m_grid: RUNTIME_GRID.to_vec(),
        trials: RUNTIME_TRIALS,
        master_seed: MASTER_SEED,
        search: SearchConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let rows = pool.install(|| benchmark(&p.forest, &p.truth, &cfg)).unwrap();
    let points: Vec<(f64, f64)> = summarize(&rows).iter().map(|s| (s.m as f64, s.runtime_ms.0)).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    let worst32 = rows.iter().filter(|r| r.m == 32).map(|r| r.runtime_ms).fold(0.0, f64::max);
    let shown: Vec<String> = points.iter().map(|(m, t)| format!("{m}:{t:.1}ms")).collect();
    Outcome {
        name: "runtime is linear in ensemble size",
        pass: r2 >= RUNTIME_R2 && worst32 < RUNTIME_BUDGET_M32.as_secs_f64() * 1e3,
        detail: format!("R^2 {r2:.4}, slowest m=32 run {worst32:.1}ms on {} units [{}]", p.truth.len(), shown.join(" ")),
    }
}

fn baseline_direction(p: &FullScale) -> Outcome {
    let sessions = p.dataset.sessions();
    let cfg = SearchConfig { tree_subset: Some(draw_trees(MASTER_SEED, p.forest.len(), 8)), ..SearchConfig::default() };
    let searched = run(&p.forest, &mut GroundTruthOracle::new(p.truth.clone()), &cfg).unwrap();
    let tree = p.forest.trees().iter().find(|t| t.tag == BASELINE_TREE).unwrap();
    let features = preprocess(&p.dataset, Preprocess::Raw).unwrap();
    let flat = auto_flatten_baseline(tree, &features, BASELINE_THRESHOLD).unwrap();
    let rs = recovery_rates(&searched.partition, &p.truth, &sessions).unwrap();
    let rb = recovery_rates(&flat, &p.truth, &sessions).unwrap();
    let (cs, cb) = (searched.partition.len(), flat.len());
    Outcome {
        name: "threshold baseline over-splits",
        pass: cb as f64 >= BASELINE_RATIO * cs as f64 && rb.perfect_fraction < rs.perfect_fraction,
        detail: format!(
            "baseline {cb} clusters, perfect {:.2}; search m=8 {cs} clusters, perfect {:.2}",
            rb.perfect_fraction, rs.perfect_fraction
        ),
    }
}

fn ami_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut identity_ok = true;
    for n in 1..=20 {
        for ka in 1..=6 {
            for kb in 1..=6 {
                for _ in 0..5 {
                    let (a, b) = random_labelings(&mut rng, n, ka, kb);
                    identity_ok &= ami(&a, &a).unwrap() == 1.0;
                    let got = ami(&a, &b).unwrap();
                    let expect = reference_ami(&a, &b);
                    if got == 1.0 || !expect.is_finite() {
                        continue;
                    }
                    worst = worst.max((got - expect).abs());
                    compared += 1;
                }
            }
        }
    }
    Outcome {
        name: "AMI matches exact reference",
        pass: worst <= AMI_TOLERANCE && identity_ok,
        detail: format!("{compared} tables, max |diff| {worst:.2e}, identical partitions give 1.0: {identity_ok}"),
    }
}

fn determinism(p: &FullScale) -> Outcome {
    let regenerated = generate_synthetic(&GeneratorConfig::default()).unwrap();
    let same_data = regenerated.to_text() == p.dataset.to_text();
    let cfg = SearchConfig { tree_subset: Some(draw_trees(MASTER_SEED, p.forest.len(), 8)), ..SearchConfig::default() };
    let once = |noisy: bool| {
        let mut search = Search::new(&p.forest, cfg.clone()).unwrap();
        if noisy {
            let mut o = NoisyOracle::new(p.truth.clone(), 0.05, NoiseModel::PerConsultation, 3).unwrap();
            search.run_to_end(&mut o).unwrap();
        } else {
            search.run_to_end(&mut GroundTruthOracle::new(p.truth.clone())).unwrap();
        }
        let mut engine = search.engine().clone();
        let state = (engine.classes(), engine.cannot_links());
        let result = search.finish();
        let mut log = Vec::new();
        write_log(&mut log, &result.log).unwrap();
        let report = serde_json::to_string(&result.report(serde_json::json!({}))).unwrap();
        (log, report, state, result.log)
    };
    let mut identical = same_data;
    let mut replayed = true;
    for noisy in [false, true] {
        let (la, ra, sa, records) = once(noisy);
        let (lb, rb, _, _) = once(noisy);
        identical &= la == lb && ra == rb;
        let mut engine = InferenceEngine::replay(p.truth.len(), &records, Clock::Logical).unwrap();
        replayed &= (engine.classes(), engine.cannot_links()) == sa;
    }
    Outcome {
        name: "runs are reproducible and logs replay",
        pass: identical && replayed,
        detail: format!("byte-identical data, logs and reports: {identical}; replay restores engine: {replayed}"),
    }
}

fn noisy_recovery() -> Outcome {
    let mut ok = 0;
    for seed in 0..NOISE_SEEDS {
        let p = planted(seed, 2..=12, 4, 3);
        let forest = Forest::from_linkages(&p.trees).unwrap();
        let mut oracle = NoisyOracle::new(p.labels.clone(), NOISE_RATE, NoiseModel::PerConsultation, seed).unwrap();
        let cfg = SearchConfig { majority_k: NOISE_MAJORITY, seed, ..SearchConfig::default() };
        let r = run(&forest, &mut oracle, &cfg).unwrap();
        if r.partition == p.blocks() {
            ok += 1;
        }
    }
    let rate = ok as f64 / NOISE_SEEDS as f64;
    Outcome {
        name: "majority vote survives flip noise",
        pass: rate >= NOISE_RECOVERY,
        detail: format!("{ok}/{NOISE_SEEDS} exact at flip rate {NOISE_RATE}, {NOISE_MAJORITY} votes"),
    }
}

fn main() {
    let outcomes = [exact_recovery(), oracle_equivalence(), ami_oracle(), noisy_recovery()];
    let start = Instant::now();
    let full = FullScale::build();
    eprintln!("full-scale instance: {} units, {} trees, {:.1?}", full.truth.len(), full.forest.len(), start.elapsed());
    let full_outcomes = [
        cluster_count_trend(&full),
        ami_trend(&full),
        query_growth(&full),
        runtime_scaling(&full),
        baseline_direction(&full),
        determinism(&full),
    ];
    let mut failed = 0;
    for o in outcomes.iter().chain(&full_outcomes) {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
