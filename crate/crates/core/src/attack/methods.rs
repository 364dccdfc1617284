use rayon::prelude::*;

use super::{
    averaged_grad, averaged_loss, check_finite, fused_grad, fused_loss, inner_max_averaged, inner_max_global,
    inner_max_per_model, model_grad, model_loss, momentum_step, momentum_step_l2, project, sign, AttackConfig,
    AttackError, AttackState, Method, Result, TraceRow,
};
use crate::forge::SurrogateEnsemble;
use crate::nn::Weights;

/// Runs the method selected by `cfg.method`.
pub fn run(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    match cfg.method {
        Method::Ifgsm => run_ifgsm(x, label, ensemble, cfg),
        Method::Mifgsm => run_mifgsm(x, label, ensemble, cfg),
        Method::Rap => run_rap(x, label, ensemble, cfg),
        Method::FlatRap => run_flat_rap(x, label, ensemble, cfg),
        Method::FlatCwa => run_flat_cwa(x, label, ensemble, cfg),
        Method::Drap => run_drap(x, label, ensemble, cfg),
    }
}

/// Attacks every `(x, label)` pair independently in parallel; output order
/// matches input order.
pub fn attack_many(
    inputs: &[(Vec<f64>, usize)],
    ensemble: &SurrogateEnsemble,
    cfg: &AttackConfig,
) -> Result<Vec<AttackState>> {
    inputs
        .par_iter()
        .map(|(x, y)| run(x, *y, ensemble, cfg))
        .collect()
}

fn start(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    cfg.validate()?;
    if x.len() != ensemble.input_dim() {
        return Err(crate::nn::NnError::DimensionMismatch {
            expected: ensemble.input_dim(),
            got: x.len(),
        }
        .into());
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(AttackError::InvalidConfig("benign input must lie in [0, 1]".into()));
    }
    let classes = ensemble.num_classes();
    if label >= classes || cfg.target.is_some_and(|t| t >= classes) {
        return Err(AttackError::InvalidConfig(format!(
            "label or target outside {classes} classes"
        )));
    }
    let mut state = AttackState::new(x, label, cfg.target);
    state.trace.note = cfg.describe();
    state.trace.iterates.push(state.x_hat.clone());
    Ok(state)
}

fn baseline_iters(ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> usize {
    cfg.n_iter.unwrap_or(ensemble.snapshots_per_component())
}

fn batch<'a>(ensemble: &'a SurrogateEnsemble, j: usize, cfg: &AttackConfig) -> Result<Vec<&'a Weights>> {
    Ok(ensemble.batch(j % ensemble.snapshots_per_component(), cfg.schedule)?)
}

fn sign_step(x_hat: &[f64], dir: &[f64], step: f64) -> Vec<f64> {
    x_hat.iter().zip(dir).map(|(v, d)| v - step * sign(*d)).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + q).collect()
}

fn push_row(state: &mut AttackState, iter: usize, component: Option<usize>, snapshot: usize, pre: f64, post: f64) {
    let grad_calls = state.calls();
    state.trace.rows.push(TraceRow {
        iter,
        component,
        snapshot,
        loss_pre: pre,
        loss_post: post,
        grad_calls,
    });
    state.trace.iterates.push(state.x_hat.clone());
}

fn fused_sign_method(
    x: &[f64],
    label: usize,
    ensemble: &SurrogateEnsemble,
    cfg: &AttackConfig,
    momentum: bool,
) -> Result<AttackState> {
    let mut s = start(x, label, ensemble, cfg)?;
    let t = cfg.transform.as_deref();
    for j in 0..baseline_iters(ensemble, cfg) {
        let models = batch(ensemble, j, cfg)?;
        let (pre, g) = fused_grad(&models, &s.x_hat, s.kind, t, &s.grad_calls)?;
        check_finite(pre, &g, j)?;
        let dir = if momentum {
            s.m = momentum_step(&s.m, &g, cfg.mu);
            s.m.clone()
        } else {
            g
        };
        s.x_hat = project(&sign_step(&s.x_hat, &dir, cfg.beta_x), &s.x, cfg.gamma)?;
        let post = fused_loss(&models, &s.x_hat, s.kind, t)?;
        push_row(&mut s, j, None, j % ensemble.snapshots_per_component(), pre, post);
    }
    Ok(s)
}

/// Logit-ensemble I-FGSM over the batch of iteration `j`.
pub fn run_ifgsm(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    fused_sign_method(x, label, ensemble, cfg, false)
}

/// Logit-ensemble MI-FGSM with L1-normalized momentum.
pub fn run_mifgsm(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    fused_sign_method(x, label, ensemble, cfg, true)
}

/// RAP: loss-averaged inner maximization and outer sign step, no momentum,
/// inner loop skipped before iteration `n_ls`.
pub fn run_rap(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    let mut s = start(x, label, ensemble, cfg)?;
    let t = cfg.transform.as_deref();
    let mut eps = vec![0.0; x.len()];
    for j in 0..baseline_iters(ensemble, cfg) {
        let models = batch(ensemble, j, cfg)?;
        if j >= cfg.n_ls {
            eps = inner_max_averaged(&s.x_hat, &models, s.kind, cfg, &s.grad_calls)?;
        }
        let pre = averaged_loss(&models, &s.x_hat, s.kind, t)?;
        let (v, g) = averaged_grad(&models, &add(&s.x_hat, &eps), s.kind, t, &s.grad_calls)?;
        check_finite(v, &g, j)?;
        s.x_hat = project(&sign_step(&s.x_hat, &g, cfg.beta_x), &s.x, cfg.gamma)?;
        let post = averaged_loss(&models, &s.x_hat, s.kind, t)?;
        push_row(&mut s, j, None, j % ensemble.snapshots_per_component(), pre, post);
    }
    Ok(s)
}

/// Flat-RAP: one shared reverse perturbation per batch on the logit ensemble,
/// then a momentum sign step.
pub fn run_flat_rap(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    let mut s = start(x, label, ensemble, cfg)?;
    let t = cfg.transform.as_deref();
    let mut eps = vec![0.0; x.len()];
    for j in 0..baseline_iters(ensemble, cfg) {
        let models = batch(ensemble, j, cfg)?;
        if j >= cfg.n_ls {
            eps = inner_max_global(&s.x_hat, &models, s.kind, cfg, &s.grad_calls)?;
        }
        let pre = fused_loss(&models, &s.x_hat, s.kind, t)?;
        let (v, g) = fused_grad(&models, &add(&s.x_hat, &eps), s.kind, t, &s.grad_calls)?;
        check_finite(v, &g, j)?;
        s.m = momentum_step(&s.m, &g, cfg.mu);
        s.x_hat = project(&sign_step(&s.x_hat, &s.m, cfg.beta_x), &s.x, cfg.gamma)?;
        let post = fused_loss(&models, &s.x_hat, s.kind, t)?;
        push_row(&mut s, j, None, j % ensemble.snapshots_per_component(), pre, post);
    }
    Ok(s)
}

/// Flat-CWA: an ascent step of radius `r` on the logit ensemble, sequential
/// per-model micro-updates with L2-normalized momentum, then a sign step along
/// the net micro-update.
pub fn run_flat_cwa(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    let mut s = start(x, label, ensemble, cfg)?;
    let t = cfg.transform.as_deref();
    let r = cfg.cwa_radius();
    for j in 0..baseline_iters(ensemble, cfg) {
        let models = batch(ensemble, j, cfg)?;
        let (pre, g) = fused_grad(&models, &s.x_hat, s.kind, t, &s.grad_calls)?;
        check_finite(pre, &g, j)?;
        let ascended: Vec<f64> = s.x_hat.iter().zip(&g).map(|(v, gi)| v + r * sign(*gi)).collect();
        let mut inner = project(&ascended, &s.x, cfg.gamma)?;
        s.trace.iterates.push(inner.clone());
        for w in &models {
            let (v, gi) = model_grad(w, &inner, s.kind, t, &s.grad_calls)?;
            check_finite(v, &gi, j)?;
            s.m = momentum_step_l2(&s.m, &gi, cfg.mu);
            let moved: Vec<f64> = inner.iter().zip(&s.m).map(|(a, m)| a - cfg.cwa_beta * m).collect();
            inner = project(&moved, &s.x, cfg.gamma)?;
            s.trace.iterates.push(inner.clone());
        }
        let update: Vec<f64> = inner.iter().zip(&s.x_hat).map(|(a, b)| a - b).collect();
        let stepped: Vec<f64> = s.x_hat.iter().zip(&update).map(|(v, u)| v + cfg.beta_x * sign(*u)).collect();
        s.x_hat = project(&stepped, &s.x, cfg.gamma)?;
        let post = fused_loss(&models, &s.x_hat, s.kind, t)?;
        push_row(&mut s, j, None, j % ensemble.snapshots_per_component(), pre, post);
    }
    Ok(s)
}

fn drap_outer_iters(ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<usize> {
    let k = ensemble.len();
    let i = ensemble.num_components();
    let steps = cfg.n_iter.unwrap_or(k);
    if steps > k {
        return Err(AttackError::InvalidConfig(format!(
            "DRAP visits each of the K = {k} surrogates once; n_iter = {steps} asks for more"
        )));
    }
    if !steps.is_multiple_of(i) {
        return Err(AttackError::InvalidConfig(format!(
            "DRAP n_iter = {steps} must be a multiple of the component count {i}"
        )));
    }
    if cfg.n_ls > ensemble.snapshots_per_component() {
        return Err(AttackError::InvalidConfig(format!(
            "late start {} exceeds the {} snapshots per component",
            cfg.n_ls,
            ensemble.snapshots_per_component()
        )));
    }
    Ok(steps / i)
}

/// DRAP: one momentum sign step per surrogate, each taken at the model's own
/// reverse perturbation `ε_k` once `j ≥ n_ls`.
pub fn run_drap(x: &[f64], label: usize, ensemble: &SurrogateEnsemble, cfg: &AttackConfig) -> Result<AttackState> {
    let outer = drap_outer_iters(ensemble, cfg)?;
    let mut s = start(x, label, ensemble, cfg)?;
    let t = cfg.transform.as_deref();
    let components = ensemble.num_components();
    for j in 0..outer {
        for i in 0..components {
            let step = j * components + i;
            let snapshot = ensemble.snapshot_index(j, i, cfg.schedule)?;
            let w = ensemble.schedule(j, i, cfg.schedule)?;
            let pre = model_loss(w, &s.x_hat, s.kind, t)?;
            let probe = if j >= cfg.n_ls {
                let eps = inner_max_per_model(&s.x_hat, w, s.kind, cfg, &s.grad_calls)?;
                add(&s.x_hat, &eps)
            } else {
                s.x_hat.clone()
            };
            let (v, g) = model_grad(w, &probe, s.kind, t, &s.grad_calls)?;
            check_finite(v, &g, step)?;
            s.m = momentum_step(&s.m, &g, cfg.mu);
            s.x_hat = project(&sign_step(&s.x_hat, &s.m, cfg.beta_x), &s.x, cfg.gamma)?;
            let post = model_loss(w, &s.x_hat, s.kind, t)?;
            push_row(&mut s, step, Some(i), snapshot, pre, post);
        }
    }
    Ok(s)
}

/// The diverse-ensemble momentum attack DRAP reduces to without any reverse
/// perturbation: one L1-momentum sign step per surrogate in schedule order.
pub fn run_ensemble_momentum(
    x: &[f64],
    label: usize,
    ensemble: &SurrogateEnsemble,
    cfg: &AttackConfig,
) -> Result<AttackState> {
    let outer = drap_outer_iters(ensemble, &AttackConfig { n_ls: 0, ..cfg.clone() })?;
    let mut s = start(x, label, ensemble, cfg)?;
    let t = cfg.transform.as_deref();
    let components = ensemble.num_components();
    for j in 0..outer {
        for i in 0..components {
            let step = j * components + i;
            let w = ensemble.schedule(j, i, cfg.schedule)?;
            let (pre, g) = model_grad(w, &s.x_hat, s.kind, t, &s.grad_calls)?;
            check_finite(pre, &g, step)?;
            s.m = momentum_step(&s.m, &g, cfg.mu);
            s.x_hat = project(&sign_step(&s.x_hat, &s.m, cfg.beta_x), &s.x, cfg.gamma)?;
            let post = model_loss(w, &s.x_hat, s.kind, t)?;
            let snapshot = ensemble.snapshot_index(j, i, cfg.schedule)?;
            push_row(&mut s, step, Some(i), snapshot, pre, post);
        }
    }
    Ok(s)
}
