use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, ForgeError, Result};
use crate::attack::{project, sign};
use crate::nn::{GradCounter, LossKind, ModelSpec, Weights};

/// How a prototype sees its training batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Training {
    Normal,
    /// Each clean batch is replaced by its PGD-perturbed counterpart at L∞ radius `eps`.
    Adversarial { eps: f64, pgd_steps: usize },
}

impl Training {
    pub fn is_adversarial(&self) -> bool {
        matches!(self, Training::Adversarial { .. })
    }
}

/// One surrogate component: an architecture, a training strategy, and the
/// constant-learning-rate fine-tuning run that produces its snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeConfig {
    pub spec: ModelSpec,
    pub training: Training,
    /// Constant fine-tuning learning rate.
    pub lr: f64,
    /// Fine-tuning epochs; one snapshot is collected per epoch.
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl PrototypeConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ForgeError::InvalidConfig(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.epochs == 0 {
            return Err(ForgeError::InvalidConfig("need at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(ForgeError::InvalidConfig("batch size must be positive".into()));
        }
        if let Training::Adversarial { eps, pgd_steps } = self.training {
            if !(eps.is_finite() && eps >= 0.0) || pgd_steps == 0 {
                return Err(ForgeError::InvalidConfig(format!(
                    "adversarial training needs eps >= 0 and pgd_steps >= 1, got {eps} / {pgd_steps}"
                )));
            }
        }
        Ok(())
    }
}

/// L∞ PGD from the clean point, ascending cross-entropy on the true label.
pub fn pgd_perturb(w: &Weights, x: &[f64], label: usize, eps: f64, steps: usize) -> Result<Vec<f64>> {
    let kind = LossKind::TargetedCrossEntropy { target: label };
    let step = 2.5 * eps / steps as f64;
    let scratch = GradCounter::new();
    let mut adv = x.to_vec();
    for _ in 0..steps {
        let g = w.input_gradient(&adv, kind, &scratch)?;
        adv.iter_mut().zip(&g).for_each(|(a, gi)| *a += step * sign(*gi));
        adv = project(&adv, x, eps).map_err(|e| ForgeError::InvalidConfig(e.to_string()))?;
    }
    Ok(adv)
}

pub fn accuracy(w: &Weights, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, y) in data.iter() {
        if w.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Runs `epochs` epochs of mini-batch SGD on cross-entropy, calling
/// `on_epoch(epoch, &weights)` after each one.
pub fn sgd<F>(
    mut weights: Weights,
    data: &Dataset,
    training: Training,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut on_epoch: F,
) -> Result<Weights>
where
    F: FnMut(usize, &Weights),
{
    if data.is_empty() {
        return Err(ForgeError::InvalidConfig("empty training set".into()));
    }
    if data.dim() != weights.input_dim() {
        return Err(ForgeError::InvalidConfig(format!(
            "data dimension {} does not match model input {}",
            data.dim(),
            weights.input_dim()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grad = vec![0.0; weights.params().len()];
            for &i in batch {
                let (x, y) = (&data.features[i], data.labels[i]);
                let input = match training {
                    Training::Normal => x.clone(),
                    Training::Adversarial { eps, pgd_steps } => pgd_perturb(&weights, x, y, eps, pgd_steps)?,
                };
                let (loss, g) = weights.loss_and_weight_gradient(&input, LossKind::TargetedCrossEntropy { target: y })?;
                total_loss += loss;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let scale = -lr / batch.len() as f64;
            weights = weights
                .axpy(scale, &grad)
                .map_err(|_| ForgeError::Diverged { epoch: epoch + 1 })?;
        }
        if !total_loss.is_finite() {
            return Err(ForgeError::Diverged { epoch: epoch + 1 });
        }
        on_epoch(epoch, &weights);
    }
    Ok(weights)
}

/// Trains a fresh model from a seeded random initialization.
pub fn pretrain(spec: &ModelSpec, training: Training, data: &Dataset, lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Result<Weights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Weights::random(spec.clone(), &mut rng)?;
    sgd(init, data, training, lr, epochs, batch_size, &mut rng, |_, _| {})
}

/// Fine-tunes `pretrained` with a constant learning rate and returns one
/// snapshot per epoch, in trajectory order.
pub fn fine_tune_collect(cfg: &PrototypeConfig, pretrained: &Weights, data: &Dataset) -> Result<Vec<Weights>> {
    cfg.validate()?;
    if pretrained.spec() != &cfg.spec {
        return Err(ForgeError::InvalidConfig(format!(
            "pretrained model is {} but prototype expects {}",
            pretrained.spec().describe(),
            cfg.spec.describe()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f1e7_u64);
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    sgd(
        pretrained.clone(),
        data,
        cfg.training,
        cfg.lr,
        cfg.epochs,
        cfg.batch_size,
        &mut rng,
        |_, w| snapshots.push(w.clone()),
    )?;
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{make_dataset, DatasetKind};
    use crate::nn::Activation;

    fn blobs() -> crate::forge::Split {
        make_dataset(
            &DatasetKind::GaussianMixture {
                dim: 2,
                classes: 2,
                separation: 6.0,
            },
            400,
            400,
            11,
        )
        .unwrap()
    }

    fn config(spec: ModelSpec, lr: f64, epochs: usize) -> PrototypeConfig {
        PrototypeConfig {
            spec,
            training: Training::Normal,
            lr,
            epochs,
            seed: 5,
            batch_size: 16,
        }
    }

    #[test]
    fn separable_mixture_is_learned_by_linear_model() {
        let split = blobs();
        let spec = ModelSpec::linear(2, 2).unwrap();
        let w = pretrain(&spec, Training::Normal, &split.train, 0.5, 30, 16, 1).unwrap();
        let acc = accuracy(&w, &split.test).unwrap();
        assert!(acc >= 0.99, "test accuracy {acc}");
    }

    #[test]
    fn zero_lr_keeps_pretrained() {
        let split = blobs();
        let spec = ModelSpec::linear(2, 2).unwrap();
        let w = pretrain(&spec, Training::Normal, &split.train, 0.5, 2, 16, 1).unwrap();
        let snaps = fine_tune_collect(&config(spec, 0.0, 4), &w, &split.train).unwrap();
        assert_eq!(snaps.len(), 4);
        assert!(snaps.iter().all(|s| s == &w));
    }

    #[test]
    fn snapshots_move_along_trajectory() {
        let split = blobs();
        let spec = ModelSpec::mlp(2, &[6], 2, Activation::Tanh).unwrap();
        let w = pretrain(&spec, Training::Normal, &split.train, 0.2, 3, 16, 2).unwrap();
        let snaps = fine_tune_collect(&config(spec, 0.1, 3), &w, &split.train).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_ne!(snaps[0], w);
        assert_ne!(snaps[1], snaps[0]);
        assert_ne!(snaps[2], snaps[1]);
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let split = blobs();
        let spec = ModelSpec::mlp(2, &[5], 2, Activation::Relu).unwrap();
        let mut cfg = config(spec.clone(), 0.1, 3);
        cfg.training = Training::Adversarial { eps: 0.05, pgd_steps: 3 };
        let w = pretrain(&spec, Training::Normal, &split.train, 0.2, 2, 16, 3).unwrap();
        let a = fine_tune_collect(&cfg, &w, &split.train).unwrap();
        let b = fine_tune_collect(&cfg, &w, &split.train).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let xb: Vec<u64> = x.params().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.params().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn divergence_names_the_epoch() {
        let split = blobs();
        let spec = ModelSpec::mlp(2, &[4], 2, Activation::Relu).unwrap();
        let w = pretrain(&spec, Training::Normal, &split.train, 0.1, 1, 16, 4).unwrap();
        let err = fine_tune_collect(&config(spec, 1e300, 3), &w, &split.train).unwrap_err();
        assert!(matches!(err, ForgeError::Diverged { epoch: 1 }), "{err}");
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let split = blobs();
        let w = Weights::zeros(ModelSpec::linear(2, 2).unwrap()).unwrap();
        let cfg = config(ModelSpec::mlp(2, &[3], 2, Activation::Relu).unwrap(), 0.1, 1);
        assert!(fine_tune_collect(&cfg, &w, &split.train).is_err());
    }

    #[test]
    fn pgd_stays_in_ball() {
        let spec = ModelSpec::mlp(3, &[4], 2, Activation::Tanh).unwrap();
        let w = Weights::random(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = [0.02, 0.5, 0.99];
        let adv = pgd_perturb(&w, &x, 1, 0.1, 5).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            assert!((a - b).abs() <= 0.1 + 1e-12 && (0.0..=1.0).contains(a));
        }
    }
}
