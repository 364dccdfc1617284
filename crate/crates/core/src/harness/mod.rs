//! Data ingestion, experiment orchestration, attack-success-rate tables and
//! CSV output. The command-line binary is a thin layer over this module.

mod asr;
mod cifar;
mod config;
mod experiment;

use thiserror::Error;

use crate::attack::AttackError;
use crate::bound::BoundError;
use crate::forge::ForgeError;
use crate::nn::NnError;

pub use asr::{evaluate_asr, success_rate, AdvExample, AsrRow, AsrTable, TargetSet, ASR_HEADER};
pub use cifar::{load_cifar10_binary, parse_cifar10, CIFAR_PIXELS, CIFAR_RECORD};
pub use config::{DataSource, ExperimentConfig, PrototypeSpec, TargetSpec, CONFIG_KEYS};
pub use experiment::{
    bench_report, build_ensembles, load_data, run_experiment, strip_timestamp, target_sets, BoundRow, Ensembles,
    ExperimentSummary, Stages, BENCH_HEADER,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data error at byte offset {offset}: {message}")]
    Data { offset: usize, message: String },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn nn_is_numeric(e: &NnError) -> bool {
    matches!(e, NnError::NonFinite { .. })
}

impl HarnessError {
    /// Process exit code: 2 for configuration or input problems, 3 for
    /// numerical failures, 1 for anything else (I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Data { .. } => 2,
            HarnessError::Context { source, .. } => source.exit_code(),
            HarnessError::Forge(e) => match e {
                ForgeError::Diverged { .. } => 3,
                ForgeError::Nn(n) if nn_is_numeric(n) => 3,
                ForgeError::Io(_) => 1,
                _ => 2,
            },
            HarnessError::Attack(e) => match e {
                AttackError::NonFinite { .. } => 3,
                AttackError::Nn(n) if nn_is_numeric(n) => 3,
                AttackError::Forge(ForgeError::Diverged { .. }) => 3,
                _ => 2,
            },
            HarnessError::Bound(e) => match e {
                BoundError::NonFinite(_) => 3,
                BoundError::Nn(n) if nn_is_numeric(n) => 3,
                _ => 2,
            },
            HarnessError::Nn(n) if nn_is_numeric(n) => 3,
            HarnessError::Nn(_) => 2,
            HarnessError::Io(_) => 1,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<HarnessError>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| HarnessError::Context {
            context: what(),
            source: Box::new(e.into()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Attack(AttackError::NonFinite { iter: 3 }).exit_code(), 3);
        assert_eq!(HarnessError::Forge(ForgeError::Diverged { epoch: 1 }).exit_code(), 3);
        assert_eq!(HarnessError::Bound(BoundError::Infeasible("kl".into())).exit_code(), 2);
        let wrapped: Result<()> = Err(BoundError::NonFinite("t".into())).context(|| "bound for seed 1".into());
        let err = wrapped.unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().starts_with("bound for seed 1: "));
    }
}
