//! Surrogate construction: synthetic datasets, SGD training, snapshot
//! collection along a constant-learning-rate trajectory, and the ensemble
//! that mixes prototypes of different architecture and training strategy.

mod dataset;
mod ensemble;
mod train;

use thiserror::Error;

pub use dataset::{make_dataset, Dataset, DatasetKind, Split};
pub use ensemble::{
    build_ensemble, load_ensemble, save_ensemble, Component, PretrainConfig, ScheduleMode, SurrogateEnsemble,
    MANIFEST_FILE,
};
pub use train::{accuracy, fine_tune_collect, pgd_perturb, pretrain, sgd, PrototypeConfig, Training};

use crate::nn::{Activation, ModelSpec, NnError};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("schedule index (outer {outer}, component {component}) outside {snapshots} snapshots × {components} components")]
    IndexOutOfRange {
        outer: usize,
        component: usize,
        snapshots: usize,
        components: usize,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ForgeError>;

/// The four desk-scale prototypes: {linear, mlp} × {normal, adversarial}.
/// Adversarial prototypes train against 5-step PGD at radius `adv_eps`.
pub fn default_prototypes(
    dim: usize,
    classes: usize,
    snapshots: usize,
    lr: f64,
    adv_eps: f64,
    seed: u64,
) -> Result<Vec<PrototypeConfig>> {
    let archs = [
        ModelSpec::linear(dim, classes)?,
        ModelSpec::mlp(dim, &[32], classes, Activation::Tanh)?,
    ];
    let trainings = [
        Training::Normal,
        Training::Adversarial {
            eps: adv_eps,
            pgd_steps: 5,
        },
    ];
    let mut out = Vec::with_capacity(4);
    for training in trainings {
        for spec in &archs {
            out.push(PrototypeConfig {
                spec: spec.clone(),
                training,
                lr,
                epochs: snapshots,
                seed: seed.wrapping_add(out.len() as u64 * 1_000_003),
                batch_size: 32,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
