//! Numerical evaluation of the transferability bound: loss profiles over the
//! surrogate and target model samples, sharpness, φ-divergence discrepancy
//! estimators with their feasibility conditions, the PAC term, and the
//! assembled bound.
//!
//! All losses here are bounded in `[0, 1]`. Variances are population (1/N)
//! variances. `+∞` is a legitimate value (the χ² singular case, the Bernoulli
//! support mismatch) and is propagated unchanged.

mod estimators;
mod pac;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::attack::linf_distance;
use crate::forge::SurrogateEnsemble;
use crate::nn::{LossKind, NnError};

pub use estimators::{
    bernoulli_undercoverage, c2_threshold, chi2_grid_sup, chi2_objective, chi2_optimal_t, chi2_value, d_chi2, d_kl,
    d_tv, default_t_grid, discrepancy, feasibility, k_s, kl_value, log_grid, log_mean_exp, tv_value,
    variance_decomposition, Feasibility, VarianceSplit,
};
pub use pac::{
    assemble_bound, eps_pac, sharpness, sharpness_of, BoundConfig, BoundReport, Sharpness, BOUND_HEADER,
};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("invalid bound configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible constants: {0}")]
    Infeasible(String),
    #[error("loss {value} outside [0, 1]; bound diagnostics need a bounded loss")]
    Unbounded { value: f64 },
    #[error("candidate has no target losses")]
    MissingTarget,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phi {
    Tv,
    Kl,
    Chi2,
}

impl Phi {
    pub fn name(self) -> &'static str {
        match self {
            Phi::Tv => "tv",
            Phi::Kl => "kl",
            Phi::Chi2 => "chi2",
        }
    }
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phi {
    type Err = BoundError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tv" => Ok(Phi::Tv),
            "kl" => Ok(Phi::Kl),
            "chi2" | "chi-squared" | "chi_squared" => Ok(Phi::Chi2),
            other => Err(BoundError::InvalidConfig(format!("unknown divergence `{other}`"))),
        }
    }
}

/// Mean summed in sorted order, so equal multisets give bitwise-equal means.
pub(crate) fn mean(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn population_variance(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo == hi {
        return 0.0;
    }
    let m = mean(v);
    let mut sq: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum::<f64>() / v.len() as f64
}

/// Per-model bounded losses at one candidate input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProfile {
    pub candidate: Vec<f64>,
    /// One list per surrogate component, all of equal length.
    pub by_component: Vec<Vec<f64>>,
    pub target: Option<Vec<f64>>,
}

fn check_bounded(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(&value) => Err(BoundError::Unbounded { value }),
        None => Ok(()),
    }
}

impl LossProfile {
    pub fn new(candidate: Vec<f64>, by_component: Vec<Vec<f64>>, target: Option<Vec<f64>>) -> Result<Self> {
        let n = by_component.first().map(Vec::len).unwrap_or(0);
        if n == 0 || by_component.iter().any(|c| c.len() != n) {
            return Err(BoundError::InvalidConfig(
                "profile needs nonempty components of equal length".into(),
            ));
        }
        by_component.iter().try_for_each(|c| check_bounded(c))?;
        if let Some(t) = &target {
            if t.is_empty() {
                return Err(BoundError::InvalidConfig("empty target sample".into()));
            }
            check_bounded(t)?;
        }
        Ok(Self {
            candidate,
            by_component,
            target,
        })
    }

    /// All `K` surrogate losses, component-major.
    pub fn surrogate_losses(&self) -> Vec<f64> {
        self.by_component.iter().flatten().copied().collect()
    }

    /// Empirical surrogate risk `R_Ŝ`.
    pub fn risk(&self) -> f64 {
        mean(&self.surrogate_losses())
    }

    pub fn component_means(&self) -> Vec<f64> {
        self.by_component.iter().map(|c| mean(c)).collect()
    }

    pub fn target_risk(&self) -> Option<f64> {
        self.target.as_deref().map(mean)
    }
}

fn losses_of<'a>(models: impl Iterator<Item = &'a crate::nn::Weights>, x: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    models.map(|w| Ok(w.loss(x, kind)?)).collect()
}

/// Loss profile of `x_hat` over the surrogate ensemble and, optionally, a
/// held-out target ensemble. `kind` must be a bounded loss.
pub fn profile(
    x_hat: &[f64],
    ensemble: &SurrogateEnsemble,
    target: Option<&SurrogateEnsemble>,
    kind: LossKind,
) -> Result<LossProfile> {
    if !kind.is_bounded() {
        return Err(BoundError::InvalidConfig(format!("{kind:?} is not a bounded loss")));
    }
    let by_component = ensemble
        .components()
        .iter()
        .map(|c| losses_of(c.snapshots.iter(), x_hat, kind))
        .collect::<Result<Vec<_>>>()?;
    let target = target.map(|t| losses_of(t.models(), x_hat, kind)).transpose()?;
    LossProfile::new(x_hat.to_vec(), by_component, target)
}

/// The localized adversarial space `X̂_r` restricted to a finite pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSetXr {
    pub r: f64,
    pub candidates: Vec<LossProfile>,
}

impl CandidateSetXr {
    /// Keeps the pool members with `R_Ŝ ≤ r` inside the γ-ball of `x`.
    pub fn from_pool(pool: &[LossProfile], x: &[f64], gamma: f64, r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(BoundError::InvalidConfig(format!("r must lie in [0, 1], got {r}")));
        }
        let candidates = pool
            .iter()
            .filter(|p| p.risk() <= r && linf_distance(&p.candidate, x) <= gamma + 1e-12)
            .cloned()
            .collect();
        Ok(Self { r, candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Candidate inputs for `X̂_r`: the given attack iterates plus `n_random`
/// uniform draws from the γ-ball (clamped to `[0, 1]`).
pub fn candidate_pool<R: Rng + ?Sized>(
    x: &[f64],
    iterates: &[Vec<f64>],
    gamma: f64,
    n_random: usize,
    rng: &mut R,
    ensemble: &SurrogateEnsemble,
    target: Option<&SurrogateEnsemble>,
    kind: LossKind,
) -> Result<Vec<LossProfile>> {
    let mut points: Vec<Vec<f64>> = iterates.to_vec();
    for _ in 0..n_random {
        points.push(
            x.iter()
                .map(|&c| (c + rng.gen_range(-gamma..=gamma)).clamp(0.0, 1.0))
                .collect(),
        );
    }
    points.iter().map(|p| profile(p, ensemble, target, kind)).collect()
}

#[cfg(test)]
mod tests;
