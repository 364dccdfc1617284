//! Transfer-attack optimizers over a surrogate ensemble.
//!
//! Every attack works in the minimization framing: the attacker descends
//! `LossKind::attack(label, target)`, which is `-CE(y)` for untargeted and
//! `CE(y_t)` for targeted attacks. Reverse (inner) perturbations ascend the
//! same loss. All iterates stay inside `[x - γ, x + γ] ∩ [0, 1]`.

mod cost;
mod methods;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::forge::{ForgeError, ScheduleMode};
use crate::nn::{GradCounter, LossKind, NnError, Weights};

pub use cost::{late_start_for_table, predict_ngrad, LateStart};
pub use methods::{
    attack_many, run, run_drap, run_ensemble_momentum, run_flat_cwa, run_flat_rap, run_ifgsm, run_mifgsm, run_rap,
};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("non-finite loss or gradient at iteration {iter}")]
    NonFinite { iter: usize },
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ifgsm,
    Mifgsm,
    Rap,
    FlatRap,
    FlatCwa,
    Drap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ifgsm,
        Method::Mifgsm,
        Method::Rap,
        Method::FlatRap,
        Method::FlatCwa,
        Method::Drap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ifgsm => "ifgsm",
            Method::Mifgsm => "mifgsm",
            Method::Rap => "rap",
            Method::FlatRap => "flat_rap",
            Method::FlatCwa => "flat_cwa",
            Method::Drap => "drap",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm || (norm == "mi" && *m == Method::Mifgsm))
            .ok_or_else(|| AttackError::UnknownMethod(s.to_string()))
    }
}

/// A differentiable preprocessing step applied before every model call.
pub trait InputTransform: Send + Sync + fmt::Debug {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// Vector-Jacobian product: maps `∂loss/∂apply(x)` to `∂loss/∂x`.
    fn pullback(&self, x: &[f64], grad: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub method: Method,
    /// L∞ budget.
    pub gamma: f64,
    /// Outer step size (`α` for the ensemble baselines).
    pub beta_x: f64,
    /// Inner step size; the reverse perturbation radius is `inner_t * beta_eps`.
    pub beta_eps: f64,
    pub inner_t: usize,
    /// Late start, counted in outer iterations `j`.
    pub n_ls: usize,
    pub mu: f64,
    pub target: Option<usize>,
    /// Iterations for the baselines. DRAP runs `K` single-model steps unless this
    /// asks for fewer (a multiple of the component count).
    pub n_iter: Option<usize>,
    /// Flat-CWA micro step size `β`.
    pub cwa_beta: f64,
    /// Flat-CWA ascent radius `r`; `None` means `γ / 15`.
    pub cwa_r: Option<f64>,
    pub schedule: ScheduleMode,
    pub transform: Option<Arc<dyn InputTransform>>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: Method::Drap,
            gamma: 16.0 / 255.0,
            beta_x: 1.6 / 255.0,
            beta_eps: 0.1 / 255.0,
            inner_t: 5,
            n_ls: 5,
            mu: 1.0,
            target: None,
            n_iter: None,
            cwa_beta: 50.0,
            cwa_r: None,
            schedule: ScheduleMode::Trajectory,
            transform: None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    /// Radius of the reverse perturbation, `T · β_ε`.
    pub fn rho_inf(&self) -> f64 {
        self.inner_t as f64 * self.beta_eps
    }

    pub fn cwa_radius(&self) -> f64 {
        self.cwa_r.unwrap_or(self.gamma / 15.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let bad = |msg: String| Err(AttackError::InvalidConfig(msg));
        if !finite_nonneg(self.gamma) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.beta_x.is_finite() && self.beta_x > 0.0) {
            return bad(format!("beta_x must be > 0, got {}", self.beta_x));
        }
        if !finite_nonneg(self.beta_eps) {
            return bad(format!("beta_eps must be >= 0, got {}", self.beta_eps));
        }
        if !finite_nonneg(self.mu) {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if !finite_nonneg(self.cwa_beta) || !finite_nonneg(self.cwa_radius()) {
            return bad("Flat-CWA step sizes must be finite and >= 0".into());
        }
        if self.n_iter == Some(0) {
            return bad("n_iter must be positive".into());
        }
        Ok(())
    }

    /// A header note listing the hyperparameters that shaped a run.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "method={} gamma={} beta_x={} mu={}",
            self.method, self.gamma, self.beta_x, self.mu
        );
        match self.method {
            Method::Rap | Method::FlatRap | Method::Drap => {
                s.push_str(&format!(" beta_eps={} T={} n_ls={}", self.beta_eps, self.inner_t, self.n_ls));
            }
            Method::FlatCwa => s.push_str(&format!(" beta={} r={}", self.cwa_beta, self.cwa_radius())),
            Method::Ifgsm | Method::Mifgsm => {}
        }
        if let Some(t) = self.target {
            s.push_str(&format!(" target={t}"));
        }
        s
    }
}

/// One row of the per-step trace. `component` is `None` for steps that fuse
/// the whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub component: Option<usize>,
    pub snapshot: usize,
    pub loss_pre: f64,
    pub loss_post: f64,
    pub grad_calls: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub note: String,
    pub rows: Vec<TraceRow>,
    /// Every point the attack moved to, including Flat-CWA micro-steps.
    pub iterates: Vec<Vec<f64>>,
}

pub const TRACE_HEADER: &str = "iter,component,snapshot,loss_pre,loss_post,grad_calls";

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.note.is_empty() {
            out.push_str(&format!("# {}\n", self.note));
        }
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let component = r.component.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, component, r.snapshot, r.loss_pre, r.loss_post, r.grad_calls
            ));
        }
        out
    }
}

#[derive(Debug)]
pub struct AttackState {
    pub x: Vec<f64>,
    pub label: usize,
    pub kind: LossKind,
    pub x_hat: Vec<f64>,
    pub m: Vec<f64>,
    pub grad_calls: GradCounter,
    pub trace: Trace,
}

impl AttackState {
    pub fn new(x: &[f64], label: usize, target: Option<usize>) -> Self {
        Self {
            x: x.to_vec(),
            label,
            kind: LossKind::attack(label, target),
            x_hat: x.to_vec(),
            m: vec![0.0; x.len()],
            grad_calls: GradCounter::new(),
            trace: Trace::default(),
        }
    }

    pub fn calls(&self) -> u64 {
        self.grad_calls.get()
    }

    /// Largest `|x̂_i - x_i|`.
    pub fn linf(&self) -> f64 {
        linf_distance(&self.x_hat, &self.x)
    }
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Π_γ`: clamps into `[x - γ, x + γ] ∩ [0, 1]` componentwise.
pub fn project(x_hat: &[f64], x: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) {
        return Err(AttackError::InvalidConfig(format!("gamma must be >= 0, got {gamma}")));
    }
    if x_hat.len() != x.len() {
        return Err(NnError::DimensionMismatch {
            expected: x.len(),
            got: x_hat.len(),
        }
        .into());
    }
    Ok(x_hat
        .iter()
        .zip(x)
        .map(|(&v, &c)| v.clamp(c - gamma, c + gamma).clamp(0.0, 1.0))
        .collect())
}

fn momentum_with_norm(m: &[f64], g: &[f64], mu: f64, norm: f64) -> Vec<f64> {
    let inv = if norm < 1e-12 { 0.0 } else { 1.0 / norm };
    m.iter().zip(g).map(|(mi, gi)| mu * mi + gi * inv).collect()
}

/// `m' = μ·m + g/‖g‖₁`, with the normalized term taken as 0 when `‖g‖₁ < 1e-12`.
pub fn momentum_step(m: &[f64], g: &[f64], mu: f64) -> Vec<f64> {
    momentum_with_norm(m, g, mu, g.iter().map(|v| v.abs()).sum())
}

/// L2-normalized variant used by Flat-CWA.
pub fn momentum_step_l2(m: &[f64], g: &[f64], mu: f64) -> Vec<f64> {
    momentum_with_norm(m, g, mu, g.iter().map(|v| v * v).sum::<f64>().sqrt())
}

fn check_finite(value: f64, grad: &[f64], iter: usize) -> Result<()> {
    if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(AttackError::NonFinite { iter })
    }
}

/// Loss and input gradient of one model, routed through the optional transform.
/// One gradient call.
pub fn model_grad(
    w: &Weights,
    x: &[f64],
    kind: LossKind,
    transform: Option<&dyn InputTransform>,
    counter: &GradCounter,
) -> Result<(f64, Vec<f64>)> {
    match transform {
        None => Ok(w.loss_and_input_gradient(x, kind, counter)?),
        Some(t) => {
            let z = t.apply(x);
            let (v, g) = w.loss_and_input_gradient(&z, kind, counter)?;
            Ok((v, t.pullback(x, &g)))
        }
    }
}

fn model_loss(w: &Weights, x: &[f64], kind: LossKind, transform: Option<&dyn InputTransform>) -> Result<f64> {
    Ok(match transform {
        None => w.loss(x, kind)?,
        Some(t) => w.loss(&t.apply(x), kind)?,
    })
}

/// Loss of the logit-averaged ensemble `ℓ((1/I) Σ f(x, w_i))` and its input
/// gradient. One gradient call per model.
pub fn fused_grad(
    models: &[&Weights],
    x: &[f64],
    kind: LossKind,
    transform: Option<&dyn InputTransform>,
    counter: &GradCounter,
) -> Result<(f64, Vec<f64>)> {
    if models.is_empty() {
        return Err(AttackError::InvalidConfig("empty model batch".into()));
    }
    let z = transform.map(|t| t.apply(x));
    let input = z.as_deref().unwrap_or(x);
    let scale = 1.0 / models.len() as f64;
    let mut avg = vec![0.0; models[0].num_classes()];
    for w in models {
        avg.iter_mut().zip(w.forward(input)?).for_each(|(a, l)| *a += l);
    }
    avg.iter_mut().for_each(|a| *a *= scale);
    let (value, upstream) = kind.value_and_grad(&avg)?;
    let upstream: Vec<f64> = upstream.iter().map(|u| u * scale).collect();
    let mut grad = vec![0.0; x.len()];
    for w in models {
        let g = w.pullback_logits(input, &upstream, counter)?;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let grad = match transform {
        None => grad,
        Some(t) => t.pullback(x, &grad),
    };
    Ok((value, grad))
}

fn fused_loss(models: &[&Weights], x: &[f64], kind: LossKind, transform: Option<&dyn InputTransform>) -> Result<f64> {
    let z = transform.map(|t| t.apply(x));
    let input = z.as_deref().unwrap_or(x);
    let scale = 1.0 / models.len() as f64;
    let mut avg = vec![0.0; models[0].num_classes()];
    for w in models {
        avg.iter_mut().zip(w.forward(input)?).for_each(|(a, l)| *a += l);
    }
    avg.iter_mut().for_each(|a| *a *= scale);
    Ok(kind.value(&avg)?)
}

/// Mean per-model loss `(1/I) Σ ℓ(f(x, w_i))` and its gradient. One gradient
/// call per model.
pub fn averaged_grad(
    models: &[&Weights],
    x: &[f64],
    kind: LossKind,
    transform: Option<&dyn InputTransform>,
    counter: &GradCounter,
) -> Result<(f64, Vec<f64>)> {
    if models.is_empty() {
        return Err(AttackError::InvalidConfig("empty model batch".into()));
    }
    let scale = 1.0 / models.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for w in models {
        let (v, g) = model_grad(w, x, kind, transform, counter)?;
        value += v * scale;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b * scale);
    }
    Ok((value, grad))
}

fn averaged_loss(models: &[&Weights], x: &[f64], kind: LossKind, transform: Option<&dyn InputTransform>) -> Result<f64> {
    let mut value = 0.0;
    for w in models {
        value += model_loss(w, x, kind, transform)?;
    }
    Ok(value / models.len() as f64)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + q).collect()
}

/// `T` sign-ascent steps from `ε = 0` on the loss returned by `grad_at`.
fn inner_ascent<F>(x_hat: &[f64], steps: usize, beta_eps: f64, mut grad_at: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut eps = vec![0.0; x_hat.len()];
    for _ in 0..steps {
        let (_, g) = grad_at(&add(x_hat, &eps))?;
        eps.iter_mut().zip(&g).for_each(|(e, gi)| *e += beta_eps * sign(*gi));
    }
    Ok(eps)
}

/// Model-specific reverse perturbation `ε_k`: `T` gradient calls on `w`.
pub fn inner_max_per_model(
    x_hat: &[f64],
    w: &Weights,
    kind: LossKind,
    cfg: &AttackConfig,
    counter: &GradCounter,
) -> Result<Vec<f64>> {
    let t = cfg.transform.as_deref();
    inner_ascent(x_hat, cfg.inner_t, cfg.beta_eps, |p| model_grad(w, p, kind, t, counter))
}

/// Shared reverse perturbation on the logit-averaged batch: `T · |batch|` calls.
pub fn inner_max_global(
    x_hat: &[f64],
    models: &[&Weights],
    kind: LossKind,
    cfg: &AttackConfig,
    counter: &GradCounter,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(AttackError::InvalidConfig("empty model batch".into()));
    }
    let t = cfg.transform.as_deref();
    inner_ascent(x_hat, cfg.inner_t, cfg.beta_eps, |p| fused_grad(models, p, kind, t, counter))
}

/// Shared reverse perturbation on the loss-averaged batch.
pub fn inner_max_averaged(
    x_hat: &[f64],
    models: &[&Weights],
    kind: LossKind,
    cfg: &AttackConfig,
    counter: &GradCounter,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(AttackError::InvalidConfig("empty model batch".into()));
    }
    let t = cfg.transform.as_deref();
    inner_ascent(x_hat, cfg.inner_t, cfg.beta_eps, |p| averaged_grad(models, p, kind, t, counter))
}
