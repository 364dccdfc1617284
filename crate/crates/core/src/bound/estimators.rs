use rayon::prelude::*;

use super::{mean, population_variance, BoundError, LossProfile, Phi, Result};

/// Default variational grid: 0 plus `1000` log-spaced magnitudes in
/// `[1e-3, 50]` with both signs (2001 points).
pub fn default_t_grid() -> Vec<f64> {
    log_grid(1000, 1e-3, 50.0)
}

/// `{0} ∪ {±t}` for `per_sign` log-spaced `t` in `[lo, hi]`, sorted ascending.
pub fn log_grid(per_sign: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mags: Vec<f64> = match per_sign {
        0 => vec![],
        1 => vec![hi],
        n => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    };
    let mut grid: Vec<f64> = mags.iter().rev().map(|m| -m).collect();
    grid.push(0.0);
    grid.extend(mags);
    grid
}

/// `log E[e^{t ℓ}]` evaluated stably.
pub fn log_mean_exp(t: f64, losses: &[f64]) -> f64 {
    let top = losses.iter().map(|l| t * l).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = losses.iter().map(|l| (t * l - top).exp()).sum();
    top + (sum / losses.len() as f64).ln()
}

fn target_of(p: &LossProfile) -> Result<&[f64]> {
    p.target.as_deref().ok_or(BoundError::MissingTarget)
}

fn sup_over<F>(candidates: &[LossProfile], per_candidate: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let values = candidates
        .par_iter()
        .map(|p| per_candidate(&p.surrogate_losses(), target_of(p)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// `|E_T[ℓ] - E_S[ℓ]|` for one candidate.
pub fn tv_value(surrogate: &[f64], target: &[f64]) -> f64 {
    (mean(target) - mean(surrogate)).abs()
}

/// `sup_t t·E_T[ℓ] - log E_S[e^{tℓ}]` over the grid for one candidate,
/// evaluated as `t·Δ - K_S(t)` so that equal means give exactly 0.
pub fn kl_value(surrogate: &[f64], target: &[f64], grid: &[f64]) -> Result<f64> {
    let delta = mean(target) - mean(surrogate);
    let mut best = f64::NEG_INFINITY;
    for &t in grid {
        let cgf = k_s(t, surrogate, Phi::Kl);
        if !cgf.is_finite() {
            return Err(BoundError::NonFinite(format!("log E_S[exp(tℓ)] at t = {t}")));
        }
        best = best.max(t * delta - cgf);
    }
    Ok(best)
}

/// `Δ² / Var_S` for one candidate; `+∞` when the surrogate losses are
/// (numerically) constant but the means differ.
pub fn chi2_value(surrogate: &[f64], target: &[f64]) -> f64 {
    let delta = mean(target) - mean(surrogate);
    let var = population_variance(surrogate);
    if var < 1e-12 {
        if delta.abs() > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        delta * delta / var
    }
}

/// Maximizer `t* = 2Δ / Var` of the χ² variational objective.
pub fn chi2_optimal_t(delta: f64, var: f64) -> f64 {
    2.0 * delta / var
}

/// `t·Δ - (t²/4)·Var`.
pub fn chi2_objective(t: f64, delta: f64, var: f64) -> f64 {
    t * delta - t * t / 4.0 * var
}

/// Grid maximum of [`chi2_objective`].
pub fn chi2_grid_sup(delta: f64, var: f64, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&t| chi2_objective(t, delta, var))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Worst-case absolute mean shift over the candidate set (0 if it is empty).
pub fn d_tv(candidates: &[LossProfile]) -> Result<f64> {
    sup_over(candidates, |s, t| Ok(tv_value(s, t)))
}

pub fn d_kl(candidates: &[LossProfile], grid: &[f64]) -> Result<f64> {
    check_grid(grid)?;
    sup_over(candidates, |s, t| kl_value(s, t, grid))
}

pub fn d_chi2(candidates: &[LossProfile]) -> Result<f64> {
    sup_over(candidates, |s, t| Ok(chi2_value(s, t)))
}

/// Estimator for `phi` over the candidate set.
pub fn discrepancy(phi: Phi, candidates: &[LossProfile], grid: &[f64]) -> Result<f64> {
    match phi {
        Phi::Tv => d_tv(candidates),
        Phi::Kl => d_kl(candidates, grid),
        Phi::Chi2 => d_chi2(candidates),
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if !grid.contains(&0.0) {
        return Err(BoundError::InvalidConfig("t grid must contain 0".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(BoundError::InvalidConfig("t grid must be finite".into()));
    }
    Ok(())
}

/// `K_S(t)`: the mean-removed cumulant generating function for KL,
/// `(t²/4)·Var` for χ², and 0 for TV.
pub fn k_s(t: f64, losses: &[f64], phi: Phi) -> f64 {
    match phi {
        Phi::Tv => 0.0,
        // Clamp rounding noise: the value is nonnegative by Jensen.
        Phi::Kl => (log_mean_exp(t, losses) - t * mean(losses)).max(0.0),
        Phi::Chi2 => t * t / 4.0 * population_variance(losses),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Smallest admissible `c₂` for the given `c₁`.
    pub threshold: f64,
    /// `c₂ - threshold`.
    pub margin: f64,
}

/// Smallest `c₂` satisfying the sufficient condition for `phi` at `c₁`.
pub fn c2_threshold(c1: f64, losses: &[f64], phi: Phi) -> Result<f64> {
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(BoundError::InvalidConfig(format!("c1 must be > 0, got {c1}")));
    }
    Ok(match phi {
        Phi::Tv => {
            if c1 <= 1.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Phi::Kl => (c1.exp_m1() - c1) / c1,
        Phi::Chi2 => {
            let m = mean(losses);
            let var = population_variance(losses);
            if var == 0.0 {
                0.0
            } else if m <= 0.0 {
                f64::INFINITY
            } else {
                c1 / 4.0 * var / m
            }
        }
    })
}

pub fn feasibility(c1: f64, c2: f64, losses: &[f64], phi: Phi) -> Result<Feasibility> {
    let threshold = c2_threshold(c1, losses, phi)?;
    let feasible = c2 >= 0.0 && c2 >= threshold;
    Ok(Feasibility {
        feasible,
        threshold,
        margin: c2 - threshold,
    })
}

/// `KL(Bern(p) ‖ Bern(q))` with `0·log 0 = 0`; `+∞` on support mismatch.
pub fn bernoulli_undercoverage(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSplit {
    /// Variance of the component means.
    pub between: f64,
    /// Mean of the within-component variances.
    pub within: f64,
    pub total: f64,
}

/// `Var = Var_i(E[ℓ]) + E_i[Var(ℓ)]` for the equal-weight mixture.
pub fn variance_decomposition(profile: &LossProfile) -> VarianceSplit {
    let means: Vec<f64> = profile.by_component.iter().map(|c| mean(c)).collect();
    let within = mean(&profile.by_component.iter().map(|c| population_variance(c)).collect::<Vec<_>>());
    VarianceSplit {
        between: population_variance(&means),
        within,
        total: population_variance(&profile.surrogate_losses()),
    }
}
