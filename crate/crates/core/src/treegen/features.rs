use crate::dataset::{Layout, WaveformDataset};
use crate::error::{Error, Result};

/// Dense row-major `rows × cols` matrix; row `i` belongs to unit `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("feature matrix has non-finite entries".into()));
        }
        Ok(FeatureMatrix { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: cols, found: r.len() });
        }
        Self::new(rows.concat(), rows.len(), cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    Raw,
    Derivative,
}

impl Preprocess {
    pub fn name(self) -> &'static str {
        match self {
            Preprocess::Raw => "raw",
            Preprocess::Derivative => "derivative",
        }
    }
}

/// Raw copy, or the per-channel first difference `x[t+1] - x[t]`.
pub fn preprocess(dataset: &WaveformDataset, mode: Preprocess) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = match mode {
        Preprocess::Raw => dataset.units.iter().map(|u| u.features.clone()).collect(),
        Preprocess::Derivative => {
            let layout = match dataset.layout {
                Some(l) if l.samples >= 2 => l,
                Some(_) => {
                    return Err(Error::InvalidInput("derivative preprocessing needs at least 2 samples per channel".into()))
                }
                None => {
                    return Err(Error::InvalidInput("derivative preprocessing needs channel/sample layout metadata".into()))
                }
            };
            dataset.units.iter().map(|u| derivative(&u.features, layout)).collect()
        }
    };
    let cols = match mode {
        Preprocess::Raw => dataset.dim,
        Preprocess::Derivative => dataset.layout.map_or(0, |l| l.channels * (l.samples - 1)),
    };
    if rows.is_empty() {
        return FeatureMatrix::new(Vec::new(), 0, cols);
    }
    FeatureMatrix::from_rows(&rows)
}

pub(crate) fn derivative(x: &[f64], layout: Layout) -> Vec<f64> {
    x.chunks(layout.samples).flat_map(|ch| ch.windows(2).map(|w| w[1] - w[0])).collect()
}
