//! Hierarchical-clustering ensembles: preprocessing, dimensionality
//! reduction, distance metrics, linkage and the parameter grid.

mod distance;
mod features;
mod linkage;
mod pca;
mod store;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use distance::{pairwise_distance, pearson, DistanceMatrix, Metric};
pub use features::{preprocess, FeatureMatrix, Preprocess};
pub use linkage::{linkage, LinkageTree, Merge, Method};
pub use pca::{pca, reduce, Transform};
pub use store::{read_trees, write_ensemble_dir, Manifest, ManifestEntry, SkippedEntry, LINKAGE_EXTENSION, MANIFEST_FILE};

use crate::dataset::WaveformDataset;
use crate::error::{Error, Result};
use crate::forest::{CompositionTree, Forest};

/// Number of principal components for the `pca` transform.
pub const PCA_COMPONENTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub preprocess: Vec<Preprocess>,
    pub transform: Vec<Transform>,
    pub metric: Vec<Metric>,
    pub linkage: Vec<Method>,
}

impl Default for EnsembleConfig {
    /// The full 2 × 2 × 5 × 4 grid.
    fn default() -> Self {
        EnsembleConfig {
            preprocess: vec![Preprocess::Raw, Preprocess::Derivative],
            transform: vec![Transform::None, Transform::Pca(PCA_COMPONENTS)],
            metric: Metric::ALL.to_vec(),
            linkage: Method::ALL.to_vec(),
        }
    }
}

impl EnsembleConfig {
    pub fn grid_size(&self) -> usize {
        self.preprocess.len() * self.transform.len() * self.metric.len() * self.linkage.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (field, len) in [
            ("preprocess", self.preprocess.len()),
            ("transform", self.transform.len()),
            ("metric", self.metric.len()),
            ("linkage", self.linkage.len()),
        ] {
            if len == 0 {
                return Err(Error::config(field, "must not be empty"));
            }
        }
        Ok(())
    }

    /// Grid cells in row-major order (preprocess outermost, linkage innermost).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.grid_size());
        for &preprocess in &self.preprocess {
            for &transform in &self.transform {
                for &metric in &self.metric {
                    for &linkage in &self.linkage {
                        out.push(Cell { preprocess, transform, metric, linkage });
                    }
                }
            }
        }
        out
    }
}

/// One parameter tuple of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub preprocess: Preprocess,
    pub transform: Transform,
    pub metric: Metric,
    pub linkage: Method,
}

impl Cell {
    pub fn tag(&self) -> String {
        format!("{}-{}-{}-{}", self.preprocess.name(), self.transform.name(), self.metric.name(), self.linkage.name())
    }
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub trees: Vec<(Cell, LinkageTree)>,
    /// Cells that could not be built, with the reason.
    pub skipped: Vec<(Cell, String)>,
}

impl Ensemble {
    pub fn tagged(&self) -> Vec<(String, LinkageTree)> {
        self.trees.iter().map(|(c, t)| (c.tag(), t.clone())).collect()
    }

    pub fn forest(&self) -> Result<Forest> {
        let trees = self
            .trees
            .iter()
            .map(|(c, t)| CompositionTree::from_linkage(t, c.tag()))
            .collect::<Result<Vec<_>>>()?;
        Forest::new(trees)
    }
}

/// Builds one linkage tree per grid cell. Cells that fail (for example a
/// zero-variance unit under the correlation metric) are skipped and reported
/// rather than failing the whole build. Output order is grid order.
pub fn build_linkages(dataset: &WaveformDataset, cfg: &EnsembleConfig) -> Result<Ensemble> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot build trees for an empty dataset".into()));
    }
    let stages: Vec<(Preprocess, Transform)> =
        cfg.preprocess.iter().flat_map(|&p| cfg.transform.iter().map(move |&t| (p, t))).collect();
    let features: Vec<Result<FeatureMatrix>> = stages
        .par_iter()
        .map(|&(p, t)| {
            let f = preprocess(dataset, p)?;
            if dataset.len() == 1 && matches!(t, Transform::Pca(_)) {
                // a single unit has nothing to project; keep its raw row
                return Ok(f);
            }
            reduce(&f, t)
        })
        .collect();
    let jobs: Vec<(usize, Metric)> =
        (0..stages.len()).flat_map(|s| cfg.metric.iter().map(move |&m| (s, m))).collect();
    let distances: Vec<Result<DistanceMatrix>> = jobs
        .par_iter()
        .map(|&(s, m)| match &features[s] {
            Ok(f) => pairwise_distance(f, m),
            Err(e) => Err(Error::InvalidInput(e.to_string())),
        })
        .collect();
    let cells = cfg.cells();
    let built: Vec<Result<LinkageTree>> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let job = i / cfg.linkage.len();
            match &distances[job] {
                Ok(d) => linkage(d, cell.linkage),
                Err(e) => Err(Error::InvalidInput(e.to_string())),
            }
        })
        .collect();
    let mut trees = Vec::new();
    let mut skipped = Vec::new();
    for (cell, r) in cells.into_iter().zip(built) {
        match r {
            Ok(t) => trees.push((cell, t)),
            Err(e) => skipped.push((cell, e.to_string())),
        }
    }
    if trees.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every ensemble cell failed; first error: {}",
            skipped.first().map_or("none", |s| s.1.as_str())
        )));
    }
    Ok(Ensemble { trees, skipped })
}

/// Builds the grid and converts it into a forest.
pub fn build_ensemble(dataset: &WaveformDataset, cfg: &EnsembleConfig) -> Result<(Forest, Vec<(Cell, String)>)> {
    let e = build_linkages(dataset, cfg)?;
    Ok((e.forest()?, e.skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, GeneratorConfig};
    use crate::dataset::Unit;

    fn small_dataset() -> WaveformDataset {
        generate_synthetic(&GeneratorConfig {
            n_clusters: 4,
            n_sessions: 3,
            dropout: 0.0,
            channels: 4,
            samples_per_channel: 12,
            seed: 5,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn default_grid_has_eighty_cells() {
        assert_eq!(EnsembleConfig::default().grid_size(), 80);
        let (forest, skipped) = build_ensemble(&small_dataset(), &EnsembleConfig::default()).unwrap();
        assert_eq!(forest.len(), 80);
        assert!(skipped.is_empty());
        let tags: std::collections::HashSet<_> = forest.trees().iter().map(|t| t.tag.clone()).collect();
        assert_eq!(tags.len(), 80);
    }

    #[test]
    fn singleton_grid() {
        let cfg = EnsembleConfig {
            preprocess: vec![Preprocess::Raw],
            transform: vec![Transform::None],
            metric: vec![Metric::Euclidean],
            linkage: vec![Method::Single],
        };
        assert_eq!(build_ensemble(&small_dataset(), &cfg).unwrap().0.len(), 1);
    }

    #[test]
    fn two_metric_grid_has_distinct_tags() {
        let cfg = EnsembleConfig {
            preprocess: vec![Preprocess::Raw],
            transform: vec![Transform::None],
            metric: vec![Metric::Euclidean, Metric::Manhattan],
            linkage: vec![Method::Single],
        };
        let (f, _) = build_ensemble(&small_dataset(), &cfg).unwrap();
        let tags: Vec<_> = f.trees().iter().map(|t| t.tag.as_str()).collect();
        assert_eq!(tags, vec!["raw-none-euclidean-single", "raw-none-manhattan-single"]);
    }

    #[test]
    fn failing_cells_are_skipped() {
        let units = vec![
            Unit { id: 0, session: 0, features: vec![1.0, 1.0, 1.0] },
            Unit { id: 1, session: 0, features: vec![1.0, 2.0, 3.0] },
            Unit { id: 2, session: 1, features: vec![3.0, 2.0, 0.0] },
        ];
        let d = WaveformDataset::new(units, None, None).unwrap();
        let cfg = EnsembleConfig {
            preprocess: vec![Preprocess::Raw],
            transform: vec![Transform::None],
            metric: vec![Metric::Euclidean, Metric::Correlation],
            linkage: vec![Method::Single, Method::Average],
        };
        let e = build_linkages(&d, &cfg).unwrap();
        assert_eq!(e.trees.len(), 2);
        assert_eq!(e.skipped.len(), 2);
        assert!(e.skipped[0].1.contains("unit 0"));
    }

    #[test]
    fn deterministic_merges() {
        let d = small_dataset();
        let a = build_linkages(&d, &EnsembleConfig::default()).unwrap();
        let b = build_linkages(&d, &EnsembleConfig::default()).unwrap();
        for ((_, x), (_, y)) in a.trees.iter().zip(&b.trees) {
            assert_eq!(x, y);
        }
    }
}
