use nalgebra::{DMatrix, SymmetricEigen};

use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    None,
    Pca(usize),
}

impl Transform {
    pub fn name(self) -> String {
        match self {
            Transform::None => "none".into(),
            Transform::Pca(k) => format!("pca{k}"),
        }
    }
}

/// Relative eigenvalue cutoff below which a component counts as zero variance.
const RANK_TOL: f64 = 1e-10;

pub fn reduce(features: &FeatureMatrix, transform: Transform) -> Result<FeatureMatrix> {
    match transform {
        Transform::None => Ok(features.clone()),
        Transform::Pca(k) => pca(features, k),
    }
}

/// Principal component scores on the top `min(k, rank)` components.
///
/// Columns are centered; eigenvectors of the sample covariance are taken in
/// descending eigenvalue order, each signed so its largest-magnitude entry is
/// positive. The eigenproblem is solved on the covariance or the Gram matrix,
/// whichever is smaller.
pub fn pca(features: &FeatureMatrix, k: usize) -> Result<FeatureMatrix> {
    if k == 0 {
        return Err(Error::InvalidInput("pca needs k >= 1".into()));
    }
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::InvalidInput(format!("pca needs at least 2 rows, got {n}")));
    }
    let mut x = DMatrix::from_row_slice(n, d, features.as_slice());
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let scale = 1.0 / (n as f64 - 1.0);

    // (eigenvalue, loading vector of length d)
    let mut components: Vec<(f64, Vec<f64>)> = if d <= n {
        let cov = x.transpose() * &x * scale;
        let eig = SymmetricEigen::new(cov);
        (0..d).map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect())).collect()
    } else {
        let gram = &x * x.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .filter(|&i| eig.eigenvalues[i] > 0.0)
            .map(|i| {
                let lambda = eig.eigenvalues[i];
                let v = x.transpose() * eig.eigenvectors.column(i);
                let norm = v.norm();
                let v = if norm > 0.0 { v / norm } else { v };
                (lambda, v.iter().copied().collect())
            })
            .collect()
    };
    components.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = components.first().map_or(0.0, |c| c.0);
    let rank = components.iter().take_while(|c| c.0 > top * RANK_TOL && c.0 > 0.0).count();
    let r = k.min(rank);

    let mut out = vec![0.0; n * r];
    for (c, (_, v)) in components.iter_mut().take(r).enumerate() {
        let pivot = v
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, &x)| if x.abs() > best.1.abs() { (i, x) } else { best });
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            out[i * r + c] = x.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        }
    }
    if r == 0 {
        // all rows identical: a single zero-variance column
        return FeatureMatrix::new(vec![0.0; n], n, 1);
    }
    FeatureMatrix::new(out, n, r)
}
