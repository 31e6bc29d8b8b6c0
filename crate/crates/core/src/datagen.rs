//! Seeded synthetic longitudinal waveform datasets.
//!
//! Each cluster is a spike template on a `rows × cols` electrode grid. Across
//! sessions its waveform drifts along a fixed per-cluster direction, with a
//! small isotropic jitter per session, and every emitted unit carries
//! independent Gaussian noise. A unit is emitted for each (cluster, session)
//! with probability `1 - dropout`.
//!
//! Random draws come from four independent ChaCha8 streams derived from
//! `seed` via [`ChaCha8Rng::set_stream`]:
//!
//! | stream | use |
//! |---|---|
//! | [`TEMPLATE_STREAM`] | template parameters, in rejection-sampling order |
//! | [`DRIFT_STREAM`] | drift directions, then per-(cluster, session) jitter |
//! | [`DROPOUT_STREAM`] | one `random::<f64>()` per (cluster, session), cluster-major; emitted iff `< 1 - dropout` |
//! | [`NOISE_STREAM`] | per-unit feature noise |
//!
//! Unit ids are assigned session-major: all emitted units of session 0 in
//! cluster order, then session 1, and so on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Layout, Unit, WaveformDataset};
use crate::error::{Error, Result};

pub const TEMPLATE_STREAM: u64 = 0;
pub const DRIFT_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;
pub const NOISE_STREAM: u64 = 3;

/// Rejection-sampling budget for centroid placement.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_clusters: usize,
    pub n_sessions: usize,
    pub dropout: f64,
    pub channels: usize,
    pub samples_per_channel: usize,
    /// Feature-space displacement per session.
    pub drift_step: f64,
    pub noise_sd: f64,
    /// Minimum centroid distance, in units of `noise_sd`.
    pub cluster_separation: f64,
    /// Peak template amplitude.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_clusters: 96,
            n_sessions: 5,
            dropout: 0.25,
            channels: 32,
            samples_per_channel: 38,
            drift_step: 6.0,
            noise_sd: 0.35,
            cluster_separation: 8.0,
            amplitude: 30.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn dim(&self) -> usize {
        self.channels * self.samples_per_channel
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::config("n_clusters", "must be at least 1"));
        }
        if self.n_sessions == 0 {
            return Err(Error::config("n_sessions", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", format!("{} is not in [0, 1]", self.dropout)));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be at least 1"));
        }
        if self.samples_per_channel == 0 {
            return Err(Error::config("samples_per_channel", "must be at least 1"));
        }
        if !(self.drift_step >= 0.0 && self.drift_step.is_finite()) {
            return Err(Error::config("drift_step", "must be a nonnegative real"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("noise_sd", "must be a nonnegative real"));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::config("cluster_separation", "must be a positive real"));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config("amplitude", "must be a positive real"));
        }
        Ok(())
    }
}

/// Electrode grid used to place templates: the most square `rows × cols`
/// factorization of `channels` with `rows <= cols` (32 channels give 4 × 8).
pub fn grid_shape(channels: usize) -> (usize, usize) {
    let rows = (1..=channels).take_while(|r| r * r <= channels).filter(|r| channels % r == 0).last().unwrap_or(1);
    (rows, channels / rows)
}

#[derive(Clone, Copy, Debug)]
struct TemplateParams {
    x: f64,
    y: f64,
    depth: f64,
    amplitude: f64,
    width: f64,
    trough: f64,
    rebound: f64,
}

impl TemplateParams {
    fn draw(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, grid: (usize, usize)) -> Self {
        let samples = cfg.samples_per_channel as f64;
        TemplateParams {
            x: rng.random::<f64>() * grid.1 as f64 - 0.5,
            y: rng.random::<f64>() * grid.0 as f64 - 0.5,
            depth: 0.3 + 1.2 * rng.random::<f64>(),
            amplitude: cfg.amplitude * (0.5 + 0.5 * rng.random::<f64>()),
            width: samples * (0.04 + 0.04 * rng.random::<f64>()),
            trough: samples * (0.3 + 0.1 * rng.random::<f64>()),
            rebound: 0.2 + 0.3 * rng.random::<f64>(),
        }
    }

    fn render(&self, x: f64, y: f64, cfg: &GeneratorConfig, grid: (usize, usize)) -> Vec<f64> {
        let mut out = Vec::with_capacity(cfg.dim());
        for c in 0..cfg.channels {
            let (row, col) = ((c / grid.1) as f64, (c % grid.1) as f64);
            let d2 = (col - x).powi(2) + (row - y).powi(2) + self.depth.powi(2);
            let gain = self.amplitude / (1.0 + d2);
            let peak = self.trough + 4.0 * self.width;
            for t in 0..cfg.samples_per_channel {
                let t = t as f64;
                let trough = (-(t - self.trough).powi(2) / (2.0 * self.width.powi(2))).exp();
                let rebound = (-(t - peak).powi(2) / (8.0 * self.width.powi(2))).exp();
                out.push(gain * (self.rebound * rebound - trough));
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x: &f64| *x != 0.0) {
            return normalize(v);
        }
    }
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a labeled dataset; deterministic in `cfg`.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<WaveformDataset> {
    cfg.validate()?;
    let grid = grid_shape(cfg.channels);
    let dim = cfg.dim();
    let min_sq = (cfg.cluster_separation * cfg.noise_sd).powi(2);

    let mut rng = stream(cfg.seed, TEMPLATE_STREAM);
    let mut params = Vec::with_capacity(cfg.n_clusters);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_clusters);
    let mut attempts = 0;
    while centroids.len() < cfg.n_clusters {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::config(
                "cluster_separation",
                format!(
                    "could not place {} centroids {} noise_sd apart within {} attempts",
                    cfg.n_clusters, cfg.cluster_separation, MAX_PLACEMENT_ATTEMPTS
                ),
            ));
        }
        let p = TemplateParams::draw(&mut rng, cfg, grid);
        let c = p.render(p.x, p.y, cfg, grid);
        if centroids.iter().all(|o| sq_dist(o, &c) >= min_sq) {
            params.push(p);
            centroids.push(c);
        }
    }
    for (i, a) in centroids.iter().enumerate() {
        for b in &centroids[..i] {
            assert!(sq_dist(a, b) >= min_sq, "centroid separation violated");
        }
    }

    // Drift follows the template's change under a small electrode-plane
    // displacement, so a cluster moves along its own waveform manifold.
    let mut rng = stream(cfg.seed, DRIFT_STREAM);
    let drift: Vec<Vec<f64>> = params
        .iter()
        .zip(&centroids)
        .map(|(p, c)| {
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            let moved = p.render(p.x + 0.1 * angle.cos(), p.y + 0.1 * angle.sin(), cfg, grid);
            let dir: Vec<f64> = moved.iter().zip(c).map(|(m, c)| m - c).collect();
            let dir = if dir.iter().all(|x| *x == 0.0) { gaussian_unit(&mut rng, dim) } else { normalize(dir) };
            dir.into_iter().map(|x| x * cfg.drift_step).collect()
        })
        .collect();
    let jitter: Vec<Vec<Vec<f64>>> = (0..cfg.n_clusters)
        .map(|_| {
            (0..cfg.n_sessions)
                .map(|_| gaussian_unit(&mut rng, dim).into_iter().map(|x| x * 0.25 * cfg.drift_step).collect())
                .collect()
        })
        .collect();

    let mut rng = stream(cfg.seed, DROPOUT_STREAM);
    let keep = 1.0 - cfg.dropout;
    let emitted: Vec<Vec<bool>> = (0..cfg.n_clusters)
        .map(|_| (0..cfg.n_sessions).map(|_| rng.random::<f64>() < keep).collect())
        .collect();

    let mut rng = stream(cfg.seed, NOISE_STREAM);
    let mut units = Vec::new();
    let mut labels = Vec::new();
    for s in 0..cfg.n_sessions {
        for k in 0..cfg.n_clusters {
            if !emitted[k][s] {
                continue;
            }
            let features = (0..dim)
                .map(|i| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    centroids[k][i] + s as f64 * drift[k][i] + jitter[k][s][i] + cfg.noise_sd * noise
                })
                .collect();
            units.push(Unit { id: units.len(), session: s, features });
            labels.push(k);
        }
    }
    WaveformDataset::new(
        units,
        Some(labels),
        Some(Layout { channels: cfg.channels, samples: cfg.samples_per_channel }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_clusters: 6,
            n_sessions: 3,
            dropout: 0.0,
            channels: 4,
            samples_per_channel: 10,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_shape(32), (4, 8));
        assert_eq!(grid_shape(1), (1, 1));
        assert_eq!(grid_shape(7), (1, 7));
        assert_eq!(grid_shape(36), (6, 6));
    }

    #[test]
    fn minimal_case() {
        let cfg = GeneratorConfig { n_clusters: 1, n_sessions: 1, dropout: 0.0, ..tiny(1) };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, Some(vec![0]));
    }

    #[test]
    fn no_dropout_emits_everything() {
        let d = generate_synthetic(&tiny(3)).unwrap();
        assert_eq!(d.len(), 18);
        assert_eq!(d.dim, 40);
        let labels = d.labels.unwrap();
        assert!(labels.iter().all(|&l| l < 6));
        for k in 0..6 {
            assert_eq!(labels.iter().filter(|&&l| l == k).count(), 3);
        }
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = GeneratorConfig { dropout: 0.3, ..tiny(9) };
        let a = generate_synthetic(&cfg).unwrap().to_text();
        let b = generate_synthetic(&cfg).unwrap().to_text();
        assert_eq!(a, b);
        let c = generate_synthetic(&GeneratorConfig { seed: 10, ..cfg }).unwrap().to_text();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_names_field() {
        let bad = GeneratorConfig { dropout: 1.5, ..tiny(0) };
        match generate_synthetic(&bad) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "dropout"),
            other => panic!("{other:?}"),
        }
        let bad = GeneratorConfig { n_clusters: 0, ..tiny(0) };
        assert!(matches!(generate_synthetic(&bad), Err(Error::InvalidConfig { field: "n_clusters", .. })));
    }

    #[test]
    fn impossible_separation_errors() {
        let bad = GeneratorConfig { cluster_separation: 1e6, ..tiny(0) };
        assert!(matches!(
            generate_synthetic(&bad),
            Err(Error::InvalidConfig { field: "cluster_separation", .. })
        ));
    }

    #[test]
    fn drift_moves_sessions_apart() {
        let cfg = GeneratorConfig { noise_sd: 0.0, drift_step: 2.0, cluster_separation: 1e-9, ..tiny(4) };
        let d = generate_synthetic(&cfg).unwrap();
        let labels = d.labels.as_ref().unwrap();
        let of_zero: Vec<&Unit> = d.units.iter().filter(|u| labels[u.id] == 0).collect();
        let step = sq_dist(&of_zero[0].features, &of_zero[1].features).sqrt();
        // drift_step plus jitter of at most 2 * 0.25 * drift_step
        assert!(step > 0.0 && step <= 2.0 * 1.5 + 1e-9, "{step}");
    }
}
