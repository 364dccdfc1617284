//! Losses on logits, each paired with its derivative with respect to the logits.

use super::{NnError, Result};

/// Attack and diagnostic losses.
///
/// The attack losses follow the minimization framing: the attacker minimizes
/// `NegCrossEntropy` (pushing the true class away) or `TargetedCrossEntropy`
/// (pulling toward the target). `BoundedError` and `ClassProbability` live in
/// `[0, 1]` and feed the bound diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `-CE(y) = log p_y`, unbounded below.
    NegCrossEntropy { label: usize },
    /// `CE(y_t) = -log p_{y_t}`.
    TargetedCrossEntropy { target: usize },
    /// `1 - p_label`.
    BoundedError { label: usize },
    /// `p_label`.
    ClassProbability { label: usize },
}

impl LossKind {
    pub fn label(&self) -> usize {
        match *self {
            LossKind::NegCrossEntropy { label }
            | LossKind::BoundedError { label }
            | LossKind::ClassProbability { label } => label,
            LossKind::TargetedCrossEntropy { target } => target,
        }
    }

    /// Attack objective for an untargeted (`target = None`) or targeted attack.
    pub fn attack(label: usize, target: Option<usize>) -> Self {
        match target {
            Some(target) => LossKind::TargetedCrossEntropy { target },
            None => LossKind::NegCrossEntropy { label },
        }
    }

    /// Attack-failure loss in `[0, 1]`: the probability mass left on the true
    /// class (untargeted) or missing from the target class (targeted).
    pub fn attack_failure(label: usize, target: Option<usize>) -> Self {
        match target {
            Some(target) => LossKind::BoundedError { label: target },
            None => LossKind::ClassProbability { label },
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(
            self,
            LossKind::BoundedError { .. } | LossKind::ClassProbability { .. }
        )
    }

    pub(crate) fn check(&self, num_classes: usize) -> Result<()> {
        let label = self.label();
        if label >= num_classes {
            return Err(NnError::LabelOutOfRange { label, num_classes });
        }
        Ok(())
    }

    /// Loss value and `d loss / d logits`.
    pub fn value_and_grad(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(logits.len())?;
        let (log_probs, probs) = log_softmax(logits);
        let label = self.label();
        let mut grad = probs.clone();
        let value = match *self {
            LossKind::NegCrossEntropy { .. } => {
                // d/dz log p_y = e_y - p
                grad.iter_mut().for_each(|g| *g = -*g);
                grad[label] += 1.0;
                log_probs[label]
            }
            LossKind::TargetedCrossEntropy { .. } => {
                grad[label] -= 1.0;
                -log_probs[label]
            }
            LossKind::BoundedError { .. } => {
                // d/dz p_y = p_y (e_y - p)
                let p = probs[label];
                grad.iter_mut().for_each(|g| *g *= p);
                grad[label] -= p;
                1.0 - p
            }
            LossKind::ClassProbability { .. } => {
                let p = probs[label];
                grad.iter_mut().for_each(|g| *g *= -p);
                grad[label] += p;
                p
            }
        };
        Ok((value, grad))
    }

    pub fn value(&self, logits: &[f64]) -> Result<f64> {
        self.check(logits.len())?;
        let (log_probs, probs) = log_softmax(logits);
        let label = self.label();
        Ok(match *self {
            LossKind::NegCrossEntropy { .. } => log_probs[label],
            LossKind::TargetedCrossEntropy { .. } => -log_probs[label],
            LossKind::BoundedError { .. } => 1.0 - probs[label],
            LossKind::ClassProbability { .. } => probs[label],
        })
    }
}

/// Numerically stable `(log softmax, softmax)`.
pub fn log_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_norm = max + sum.ln();
    let log_probs: Vec<f64> = logits.iter().map(|&z| z - log_norm).collect();
    let probs = log_probs.iter().map(|&l| l.exp()).collect();
    (log_probs, probs)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).1
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
