use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::LossKind;

fn small_ensemble() -> (Split, SurrogateEnsemble) {
    let kind = DatasetKind::GaussianMixture {
        dim: 6,
        classes: 3,
        separation: 3.0,
    };
    let split = make_dataset(&kind, 300, 100, 2).unwrap();
    let protos = default_prototypes(6, 3, 4, 0.2, 0.05, 9).unwrap();
    let ens = build_ensemble(&protos, &split.train, PretrainConfig { lr: 0.5, epochs: 8 }, 9).unwrap();
    (split, ens)
}

fn population_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
}

#[test]
fn default_prototypes_cover_both_axes() {
    let protos = default_prototypes(5, 3, 7, 0.1, 0.03, 1).unwrap();
    assert_eq!(protos.len(), 4);
    let adversarial = protos.iter().filter(|p| p.training.is_adversarial()).count();
    assert_eq!(adversarial, 2);
    let linear = protos.iter().filter(|p| p.spec.arch == crate::nn::Arch::Linear).count();
    assert_eq!(linear, 2);
    let seeds: std::collections::HashSet<u64> = protos.iter().map(|p| p.seed).collect();
    assert_eq!(seeds.len(), 4);
}

#[test]
fn built_ensemble_has_k_models_and_learns() {
    let (split, ens) = small_ensemble();
    assert_eq!(ens.num_components(), 4);
    assert_eq!(ens.len(), 16);
    for c in ens.components() {
        let acc = accuracy(c.snapshots.last().unwrap(), &split.test).unwrap();
        assert!(acc > 0.8, "{} accuracy {acc}", c.config.spec.describe());
    }
}

#[test]
fn build_is_deterministic() {
    let (_, a) = small_ensemble();
    let (_, b) = small_ensemble();
    assert_eq!(a, b);
}

#[test]
fn within_distribution_diversity() {
    let (split, ens) = small_ensemble();
    let (probe, label) = split.test.iter().next().unwrap();
    let kind = LossKind::BoundedError { label };
    for c in ens.components() {
        let losses: Vec<f64> = c.snapshots.iter().map(|w| w.loss(probe, kind).unwrap()).collect();
        assert!(population_variance(&losses) > 0.0, "{}", c.config.spec.describe());
    }
}

#[test]
fn between_distribution_diversity() {
    let (split, ens) = small_ensemble();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reference = &ens.components()[0].snapshots[0];
    let mut means = vec![0.0; ens.num_components()];
    let probes = 120;
    for _ in 0..probes {
        let idx = rng.gen_range(0..split.test.len());
        let (x, y) = (&split.test.features[idx], split.test.labels[idx]);
        let adv = pgd_perturb(reference, x, y, 0.1, 5).unwrap();
        for (i, c) in ens.components().iter().enumerate() {
            means[i] += c.snapshots[0].loss(&adv, LossKind::BoundedError { label: y }).unwrap() / probes as f64;
        }
    }
    let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread > 0.01, "{means:?}");
}
