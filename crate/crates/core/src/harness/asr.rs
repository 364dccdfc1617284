use std::collections::BTreeMap;

use super::{HarnessError, Result};
use crate::attack::Method;
use crate::nn::Weights;

/// One crafted input with the label it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvExample {
    pub x_hat: Vec<f64>,
    pub label: usize,
    pub target: Option<usize>,
}

/// A named group of black-box target models.
#[derive(Debug, Clone)]
pub struct TargetSet<'a> {
    pub name: String,
    pub models: Vec<&'a Weights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrRow {
    pub method: Method,
    pub set: String,
    pub seed: u64,
    /// Success rate in `[0, 1]` over (example, model) pairs.
    pub rate: f64,
    pub examples: usize,
    pub models: usize,
}

pub const ASR_HEADER: &str = "method,set,seed,asr_percent,examples,models";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AsrTable {
    pub rows: Vec<AsrRow>,
}

/// Fraction of (example, model) pairs where the attack succeeds: the
/// prediction leaves the true label (untargeted) or hits the target.
pub fn success_rate(examples: &[AdvExample], models: &[&Weights]) -> Result<f64> {
    if examples.is_empty() || models.is_empty() {
        return Err(HarnessError::Config("ASR needs at least one example and one model".into()));
    }
    let mut hits = 0usize;
    for e in examples {
        for w in models {
            let pred = w.predict(&e.x_hat)?;
            let success = match e.target {
                Some(t) => pred == t,
                None => pred != e.label,
            };
            hits += success as usize;
        }
    }
    Ok(hits as f64 / (examples.len() * models.len()) as f64)
}

/// One row per target set for the given method and seed. With `targeted`,
/// every example must carry a target class; without it, none may.
pub fn evaluate_asr(
    method: Method,
    seed: u64,
    examples: &[AdvExample],
    sets: &[TargetSet<'_>],
    targeted: bool,
) -> Result<Vec<AsrRow>> {
    if sets.is_empty() {
        return Err(HarnessError::Config("no target sets".into()));
    }
    if let Some(i) = examples.iter().position(|e| e.target.is_some() != targeted) {
        return Err(HarnessError::Config(format!(
            "example {i} does not match the {} setting",
            if targeted { "targeted" } else { "untargeted" }
        )));
    }
    sets.iter()
        .map(|s| {
            Ok(AsrRow {
                method,
                set: s.name.clone(),
                seed,
                rate: success_rate(examples, &s.models)?,
                examples: examples.len(),
                models: s.models.len(),
            })
        })
        .collect()
}

impl AsrTable {
    pub fn extend(&mut self, rows: Vec<AsrRow>) {
        self.rows.extend(rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ASR_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.1},{},{}\n",
                r.method,
                r.set,
                r.seed,
                100.0 * r.rate,
                r.examples,
                r.models
            ));
        }
        out
    }

    /// Rate per (method, set), averaged over seeds.
    pub fn mean_over_seeds(&self) -> BTreeMap<(Method, String), f64> {
        let mut acc: BTreeMap<(Method, String), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry((r.method, r.set.clone())).or_default();
            e.0 += r.rate;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn mean_rate(&self, method: Method, set: &str) -> Option<f64> {
        self.mean_over_seeds().get(&(method, set.to_string())).copied()
    }
}
