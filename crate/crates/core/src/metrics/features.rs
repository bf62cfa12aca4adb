//! Feature-distribution metrics: Fréchet distance, diversity and multimodality.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Per-row features with the class label of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Input(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("features contain non-finite values".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Sample mean and unbiased covariance of the rows.
pub fn moments(x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Input("moments need at least two rows".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Square root of a symmetric positive semi-definite matrix; eigenvalues down to −1e-8 count as zero.
fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-8 {
            return Err(Error::Input(format!("covariance has a negative eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians `N(μ_a, Σ_a)` and `N(μ_b, Σ_b)`.
pub fn fid_from_moments(mu_a: ArrayView1<f64>, cov_a: &Array2<f64>, mu_b: ArrayView1<f64>, cov_b: &Array2<f64>) -> Result<f64> {
    let f = mu_a.len();
    if mu_b.len() != f || cov_a.dim() != (f, f) || cov_b.dim() != (f, f) {
        return Err(Error::Input("moment dimensions disagree".into()));
    }
    let diff = &mu_a - &mu_b;
    let mean_term = diff.dot(&diff);
    let a = to_na(cov_a);
    let b = to_na(cov_b);
    let ra = psd_sqrt(a.clone())?;
    let inner = &ra * &b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let mut cross = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -1e-8 {
            return Err(Error::Input(format!("covariance product has a negative eigenvalue {v}")));
        }
        cross += v.max(0.0).sqrt();
    }
    Ok(mean_term + a.trace() + b.trace() - 2.0 * cross)
}

/// Fréchet distance between the Gaussian fits of two feature sets.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.features.ncols() != b.features.ncols() {
        return Err(Error::Input("feature widths differ".into()));
    }
    let (ma, ca) = moments(a.features.view())?;
    let (mb, cb) = moments(b.features.view())?;
    fid_from_moments(ma.view(), &ca, mb.view(), &cb)
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance over `pairs` row pairs drawn independently and uniformly (with replacement).
pub fn diversity(features: &FeatureSet, pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    let n = features.len();
    if n < 2 || pairs == 0 {
        return Err(Error::Input("diversity needs at least two rows and one pair".into()));
    }
    let x = &features.features;
    let total: f64 = (0..pairs)
        .map(|_| {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            dist(x.row(i), x.row(j))
        })
        .sum();
    Ok(total / pairs as f64)
}

/// Mean over classes of the mean within-class pair distance, `pairs` draws per class.
///
/// Classes with fewer than two rows are skipped.
pub fn multimodality(features: &FeatureSet, pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::Input("multimodality needs at least one pair".into()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in features.labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let x = &features.features;
    let mut per_class = Vec::new();
    for (label, rows) in &groups {
        if rows.len() < 2 {
            log::warn!("class {label} has {} feature row(s); excluded from multimodality", rows.len());
            continue;
        }
        let total: f64 = (0..pairs)
            .map(|_| {
                let i = rows[rng.random_range(0..rows.len())];
                let j = rows[rng.random_range(0..rows.len())];
                dist(x.row(i), x.row(j))
            })
            .sum();
        per_class.push(total / pairs as f64);
    }
    if per_class.is_empty() {
        return Err(Error::Input("no class has two or more feature rows".into()));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}
