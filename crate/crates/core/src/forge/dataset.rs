use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ForgeError, Result};

/// Labeled feature vectors, all of one dimension, features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(ForgeError::InvalidConfig(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(ForgeError::InvalidConfig("ragged feature rows".into()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(ForgeError::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.features.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Isotropic unit-variance Gaussian blobs whose means sit pairwise
    /// `separation` apart (exactly when `classes <= dim`).
    GaussianMixture {
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// Two concentric noisy rings in the first two coordinates, radii 1 and 2;
    /// remaining coordinates are noise.
    TwoRings { dim: usize },
}

impl DatasetKind {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetKind::GaussianMixture { classes, .. } => *classes,
            DatasetKind::TwoRings { .. } => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::GaussianMixture { dim, .. } | DatasetKind::TwoRings { dim } => *dim,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Class means for the mixture: Gram-Schmidt on random directions, scaled so
/// that orthonormal means are `separation` apart.
fn mixture_means(dim: usize, classes: usize, separation: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        if basis.len() < dim {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|a| a * scale).collect())
        .collect()
}

/// Generates a train/test split, then min-max scales every feature into
/// `[0, 1]` using the pooled range.
pub fn make_dataset(kind: &DatasetKind, n_train: usize, n_test: usize, seed: u64) -> Result<Split> {
    if n_train == 0 || n_test == 0 {
        return Err(ForgeError::InvalidConfig(format!(
            "need n_train >= 1 and n_test >= 1, got {n_train} and {n_test}"
        )));
    }
    let k = kind.num_classes();
    let d = kind.dim();
    if k < 2 {
        return Err(ForgeError::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    if d == 0 {
        return Err(ForgeError::InvalidConfig("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_train + n_test;
    let mut features = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    match *kind {
        DatasetKind::GaussianMixture { separation, .. } => {
            if !(separation.is_finite() && separation >= 0.0) {
                return Err(ForgeError::InvalidConfig(format!("bad separation {separation}")));
            }
            let means = mixture_means(d, k, separation, &mut rng);
            for _ in 0..total {
                let label = rng.gen_range(0..k);
                let x = means[label].iter().map(|m| m + gaussian(&mut rng)).collect();
                features.push(x);
                labels.push(label);
            }
        }
        DatasetKind::TwoRings { .. } => {
            if d < 2 {
                return Err(ForgeError::InvalidConfig("two_rings needs dim >= 2".into()));
            }
            for _ in 0..total {
                let label = rng.gen_range(0..2);
                let radius = 1.0 + label as f64 + 0.1 * gaussian(&mut rng);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut x = vec![radius * angle.cos(), radius * angle.sin()];
                x.extend((2..d).map(|_| 0.1 * gaussian(&mut rng)));
                features.push(x);
                labels.push(label);
            }
        }
    }

    for j in 0..d {
        let (lo, hi) = features
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
        let span = hi - lo;
        for x in &mut features {
            x[j] = if span > 0.0 { (x[j] - lo) / span } else { 0.5 };
        }
    }

    let test_features = features.split_off(n_train);
    let test_labels = labels.split_off(n_train);
    Ok(Split {
        train: Dataset::new(features, labels, k)?,
        test: Dataset::new(test_features, test_labels, k)?,
    })
}
