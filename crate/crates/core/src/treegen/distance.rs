use rayon::prelude::*;

use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    SqEuclidean,
    Manhattan,
    Chebyshev,
    Correlation,
}

impl Metric {
    pub const ALL: [Metric; 5] =
        [Metric::Euclidean, Metric::SqEuclidean, Metric::Manhattan, Metric::Chebyshev, Metric::Correlation];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::SqEuclidean => "sqeuclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
            Metric::Correlation => "correlation",
        }
    }

    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => sq_euclidean(x, y).sqrt(),
            Metric::SqEuclidean => sq_euclidean(x, y),
            Metric::Manhattan => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
            Metric::Chebyshev => x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            Metric::Correlation => (1.0 - pearson(x, y)).max(0.0),
        }
    }
}

fn sq_euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Pearson correlation; `NaN` when either vector has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Symmetric `n × n` matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub(crate) n: usize,
    pub(crate) data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates a full row-major matrix.
    pub fn from_full(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: data.len() });
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero self-distance at {i}")));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::InvalidInput(format!("negative or non-finite distance at ({i},{j})")));
                }
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidInput(format!("distance matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn pairwise_distance(features: &FeatureMatrix, metric: Metric) -> Result<DistanceMatrix> {
    let n = features.rows();
    if metric == Metric::Correlation {
        for i in 0..n {
            let row = features.row(i);
            let first = row.first().copied().unwrap_or(0.0);
            if row.iter().all(|&x| x == first) {
                return Err(Error::ZeroVariance { unit: i });
            }
        }
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| metric.eval(features.row(i), features.row(j))).collect())
        .collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &d) in row.iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}
