use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::estimators::check_grid;
use super::{
    c2_threshold, default_t_grid, discrepancy, k_s, profile, BoundError, CandidateSetXr, Phi, Result,
};
use crate::forge::SurrogateEnsemble;
use crate::nn::{GradCounter, LossKind};

/// The PAC confidence term for `K` surrogate samples in dimension `d`, with
/// its `Õ(1)` part written out as
/// `1/2 + 2·log(2 + 3d + 6r²K + 4d·log(√d + √log K))`.
pub fn eps_pac(d: usize, k: usize, gamma: f64, rho: f64, delta: f64, r: f64) -> Result<f64> {
    if d == 0 || k < 2 || !(delta > 0.0 && delta < 1.0) || !(rho > 0.0) || !(gamma >= 0.0) || !r.is_finite() {
        return Err(BoundError::InvalidConfig(format!(
            "eps_pac needs d >= 1, K >= 2, 0 < delta < 1, rho > 0, gamma >= 0; got d={d} K={k} delta={delta} rho={rho} gamma={gamma}"
        )));
    }
    let (d, k) = (d as f64, k as f64);
    let log_k = k.ln();
    let shape = 1.0 + (log_k / d).sqrt();
    let complexity = d / 2.0 * (1.0 + gamma * gamma / (rho * rho) * shape * shape).ln();
    let o1 = 0.5 + 2.0 * (2.0 + 3.0 * d + 6.0 * r * r * k + 4.0 * d * (d.sqrt() + log_k.sqrt()).ln()).ln();
    Ok(((complexity + (k / delta).ln() + o1) / (2.0 * (k - 1.0))).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpness {
    /// `max_{‖ε‖₂ ≤ ρ} R(x̂ + ε) - R(x̂)` as found by the search; never negative.
    pub value: f64,
    pub base_risk: f64,
    /// Objective evaluations with gradient.
    pub evaluations: u64,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Projected normalized-gradient ascent in the L2 ball of radius `rho`,
/// keeping the best point over `restarts` runs. The first run starts at
/// `ε = 0`, later ones at random points of the ball.
pub fn sharpness_of<F>(
    mut objective: F,
    x_hat: &[f64],
    rho: f64,
    steps: usize,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sharpness>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(BoundError::InvalidConfig(format!("rho must be >= 0, got {rho}")));
    }
    let (base_risk, _) = objective(x_hat)?;
    let mut evaluations = 1u64;
    if rho == 0.0 {
        return Ok(Sharpness {
            value: 0.0,
            base_risk,
            evaluations,
        });
    }
    let d = x_hat.len();
    let step = rho / 4.0;
    let mut best = 0.0f64;
    for restart in 0..restarts.max(1) {
        let mut eps = if restart == 0 {
            vec![0.0; d]
        } else {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let scale = rho * rng.gen::<f64>().powf(1.0 / d as f64) / l2(&dir).max(1e-300);
            dir.into_iter().map(|v| v * scale).collect()
        };
        for s in 0..=steps {
            let point: Vec<f64> = x_hat.iter().zip(&eps).map(|(a, e)| a + e).collect();
            let (value, grad) = objective(&point)?;
            evaluations += 1;
            if !value.is_finite() {
                return Err(BoundError::NonFinite("sharpness objective".into()));
            }
            best = best.max(value - base_risk);
            let norm = l2(&grad);
            if s == steps || norm < 1e-15 {
                break;
            }
            eps.iter_mut().zip(&grad).for_each(|(e, g)| *e += step * g / norm);
            let len = l2(&eps);
            if len > rho {
                eps.iter_mut().for_each(|e| *e *= rho / len);
            }
        }
    }
    Ok(Sharpness {
        value: best,
        base_risk,
        evaluations,
    })
}

/// Sharpness of the empirical surrogate risk `R_Ŝ` under the bounded loss
/// `kind`. Each objective evaluation costs `K` gradient calls on `counter`.
pub fn sharpness(
    x_hat: &[f64],
    ensemble: &SurrogateEnsemble,
    kind: LossKind,
    rho: f64,
    steps: usize,
    restarts: usize,
    seed: u64,
    counter: &GradCounter,
) -> Result<Sharpness> {
    let models: Vec<_> = ensemble.models().collect();
    let scale = 1.0 / models.len() as f64;
    let objective = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; p.len()];
        for w in &models {
            let (v, g) = w.loss_and_input_gradient(p, kind, counter)?;
            value += v * scale;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b * scale);
        }
        Ok((value, grad))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sharpness_of(objective, x_hat, rho, steps, restarts, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub phi: Phi,
    /// L2 radius of the sharpness ball.
    pub rho: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
    /// L∞ attack budget entering the PAC term.
    pub gamma: f64,
    pub t_grid: Vec<f64>,
    pub sharpness_steps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            phi: Phi::Tv,
            rho: 4.0 / 255.0,
            delta: 0.05,
            c1: 1.0,
            c2: 0.0,
            r: 0.5,
            gamma: 4.0 / 255.0,
            t_grid: default_t_grid(),
            sharpness_steps: 20,
            restarts: 3,
            seed: 0,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid(&self.t_grid)?;
        if !(self.c1 > 0.0) || !(self.c2 >= 0.0) {
            return Err(BoundError::InvalidConfig(format!(
                "need c1 > 0 and c2 >= 0, got {} / {}",
                self.c1, self.c2
            )));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(BoundError::InvalidConfig(format!("r must lie in [0, 1], got {}", self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub phi: Phi,
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
    /// `R_Ŝ(x̂)`.
    pub risk: f64,
    pub sharpness: f64,
    pub d_hat: f64,
    pub k_s: f64,
    pub feasible: bool,
    pub margin: f64,
    pub eps_pac: f64,
    pub assembled: f64,
    pub realized_target_risk: Option<f64>,
    /// Whether `x̂` itself lies in `X̂_r`.
    pub in_localized_space: bool,
    pub candidates: usize,
}

pub const BOUND_HEADER: &str = "phi,r,c1,c2,sharpness,d_hat,k_s,eps_pac,assembled,realized_target_risk";

pub(crate) fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

impl BoundReport {
    /// The named additive terms of the assembled bound.
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("risk", self.risk),
            ("sharpness", self.sharpness),
            ("discrepancy", self.d_hat / self.c1),
            ("localization", self.c2 * self.r),
            ("eps_pac", self.eps_pac),
        ]
    }

    pub fn csv_row(&self) -> String {
        let realized = self.realized_target_risk.map(fmt_num).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.phi,
            fmt_num(self.r),
            fmt_num(self.c1),
            fmt_num(self.c2),
            fmt_num(self.sharpness),
            fmt_num(self.d_hat),
            fmt_num(self.k_s),
            fmt_num(self.eps_pac),
            fmt_num(self.assembled),
            realized
        )
    }
}

/// Evaluates every term of the bound at `x_hat`.
///
/// `kind` must be the bounded attack-failure loss; feasibility of `(c1, c2)` is
/// checked at `x_hat` and at every candidate of `X̂_r`.
pub fn assemble_bound(
    x_hat: &[f64],
    ensemble: &SurrogateEnsemble,
    target: Option<&SurrogateEnsemble>,
    kind: LossKind,
    candidates: &CandidateSetXr,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    cfg.validate()?;
    let here = profile(x_hat, ensemble, target, kind)?;
    let losses = here.surrogate_losses();
    let mut threshold = c2_threshold(cfg.c1, &losses, cfg.phi)?;
    for c in &candidates.candidates {
        threshold = threshold.max(c2_threshold(cfg.c1, &c.surrogate_losses(), cfg.phi)?);
    }
    if cfg.c2 < threshold {
        let condition = match cfg.phi {
            Phi::Tv => "tv requires 0 < c1 <= 1".to_string(),
            Phi::Kl => format!("kl requires c2 >= (e^c1 - 1 - c1)/c1 = {threshold}"),
            Phi::Chi2 => format!("chi2 requires c2 >= (c1/4)·Var/E[loss] = {threshold}"),
        };
        return Err(BoundError::Infeasible(condition));
    }
    let sharp = sharpness(
        x_hat,
        ensemble,
        kind,
        cfg.rho,
        cfg.sharpness_steps,
        cfg.restarts,
        cfg.seed,
        &GradCounter::new(),
    )?;
    let d_hat = discrepancy(cfg.phi, &candidates.candidates, &cfg.t_grid)?;
    let eps = eps_pac(x_hat.len(), ensemble.len(), cfg.gamma, cfg.rho, cfg.delta, cfg.r)?;
    let risk = here.risk();
    let assembled = risk + sharp.value + d_hat / cfg.c1 + cfg.c2 * cfg.r + eps;
    Ok(BoundReport {
        phi: cfg.phi,
        r: cfg.r,
        c1: cfg.c1,
        c2: cfg.c2,
        risk,
        sharpness: sharp.value,
        d_hat,
        k_s: k_s(cfg.c1, &losses, cfg.phi),
        feasible: true,
        margin: cfg.c2 - threshold,
        eps_pac: eps,
        assembled,
        realized_target_risk: here.target_risk(),
        in_localized_space: risk <= cfg.r,
        candidates: candidates.len(),
    })
}
