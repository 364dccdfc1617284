use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::asr::{evaluate_asr, AdvExample, AsrTable, TargetSet};
use super::cifar::load_cifar10_binary;
use super::config::{DataSource, ExperimentConfig};
use super::{Context, HarnessError, Result};
use crate::attack::{attack_many, predict_ngrad, run, AttackState, LateStart, Method};
use crate::bound::{assemble_bound, candidate_pool, BoundReport, CandidateSetXr, BOUND_HEADER};
use crate::forge::{build_ensemble, make_dataset, save_ensemble, Component, Dataset, Split, SurrogateEnsemble};
use crate::nn::LossKind;

/// Which parts of the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub save_ensembles: bool,
    pub asr: bool,
    pub bound: bool,
    pub traces: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        save_ensembles: true,
        asr: true,
        bound: true,
        traces: true,
    };
}

pub struct Ensembles {
    pub surrogate: SurrogateEnsemble,
    /// Trailing snapshots of each surrogate trajectory that the attack never sees.
    pub holdout: Option<SurrogateEnsemble>,
    pub target: SurrogateEnsemble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub seed: u64,
    pub method: Method,
    pub example: usize,
    pub report: BoundReport,
}

#[derive(Debug, Default)]
pub struct ExperimentSummary {
    pub asr: AsrTable,
    pub bounds: Vec<BoundRow>,
    pub files: Vec<PathBuf>,
}

pub const BENCH_HEADER: &str = "method,n_iter,components,inner_t,n_ls,predicted,observed";
const TIMESTAMP_PREFIX: &str = "# generated unix=";

fn timestamp_line() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("{TIMESTAMP_PREFIX}{secs}\n")
}

/// Drops the timestamp comment line so reruns can be compared byte for byte.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<Split> {
    match &cfg.data {
        DataSource::Synthetic { kind, n_train, n_test } => Ok(make_dataset(kind, *n_train, *n_test, seed)?),
        DataSource::Cifar10 { path, n_train } => {
            let all = load_cifar10_binary(path).context(|| format!("loading {}", path.display()))?;
            if *n_train == 0 || all.len() < n_train + cfg.n_examples {
                return Err(HarnessError::Config(format!(
                    "{} has {} records; need n_train = {n_train} plus n_examples = {}",
                    path.display(),
                    all.len(),
                    cfg.n_examples
                )));
            }
            let mut features = all.features;
            let mut labels = all.labels;
            let test_x = features.split_off(*n_train);
            let test_y = labels.split_off(*n_train);
            Ok(Split {
                train: Dataset::new(features, labels, 10)?,
                test: Dataset::new(test_x, test_y, 10)?,
            })
        }
    }
}

fn split_holdout(full: SurrogateEnsemble, n: usize) -> Result<(SurrogateEnsemble, Option<SurrogateEnsemble>)> {
    if full.snapshots_per_component() == n {
        return Ok((full, None));
    }
    let seed = full.seed();
    let mut kept = Vec::new();
    let mut rest = Vec::new();
    for c in full.components() {
        let mut config = c.config.clone();
        config.epochs = n;
        kept.push(Component {
            config,
            snapshots: c.snapshots[..n].to_vec(),
        });
        rest.push(c.snapshots[n..].to_vec());
    }
    Ok((
        SurrogateEnsemble::new(kept, seed)?,
        Some(SurrogateEnsemble::from_snapshots(rest, seed)?),
    ))
}

pub fn build_ensembles(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<Ensembles> {
    let pre = cfg.prototypes.pretrain;
    let full = build_ensemble(&cfg.surrogate_prototypes(seed)?, train, pre, seed)
        .context(|| format!("surrogate ensemble for seed {seed}"))?;
    let (surrogate, holdout) = split_holdout(full, cfg.prototypes.snapshots)?;
    let target = build_ensemble(&cfg.target_prototypes(seed)?, train, pre, seed)
        .context(|| format!("target ensemble for seed {seed}"))?;
    Ok(Ensembles {
        surrogate,
        holdout,
        target,
    })
}

/// Target sets: every target model together, then one set per prototype.
pub fn target_sets(target: &SurrogateEnsemble) -> Vec<TargetSet<'_>> {
    let mut sets = vec![TargetSet {
        name: "all".into(),
        models: target.models().collect(),
    }];
    for c in target.components() {
        let kind = if c.config.training.is_adversarial() { "adv" } else { "normal" };
        sets.push(TargetSet {
            name: format!("{}-{kind}", c.config.spec.arch),
            models: c.snapshots.iter().collect(),
        });
    }
    sets
}

fn inputs(test: &Dataset, n: usize) -> Vec<(Vec<f64>, usize)> {
    test.iter().take(n).map(|(x, y)| (x.to_vec(), y)).collect()
}

fn bound_for(
    cfg: &ExperimentConfig,
    seed: u64,
    example: usize,
    state: &AttackState,
    ens: &Ensembles,
) -> Result<BoundReport> {
    let kind = LossKind::attack_failure(state.label, cfg.attack.target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (example as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let pool = candidate_pool(
        &state.x,
        &state.trace.iterates,
        cfg.attack.gamma,
        cfg.pool_random,
        &mut rng,
        &ens.surrogate,
        Some(&ens.target),
        kind,
    )?;
    let xr = CandidateSetXr::from_pool(&pool, &state.x, cfg.attack.gamma, cfg.bound.r)?;
    let bcfg = crate::bound::BoundConfig {
        seed: seed.wrapping_add(example as u64),
        ..cfg.bound.clone()
    };
    Ok(assemble_bound(&state.x_hat, &ens.surrogate, Some(&ens.target), kind, &xr, &bcfg)?)
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).context(|| format!("writing {}", path.display()))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Runs the configured pipeline for every seed and writes the artifacts under
/// `cfg.out`:
///
/// - `seed_<s>/surrogate/`, `seed_<s>/target/`: saved ensembles
/// - `asr.csv`: one row per (method, target set, seed)
/// - `bound.csv`: one row per (seed, method, example) for the first `bound_examples`
/// - `traces/seed_<s>/<method>_ex<i>.csv`: step traces
///
/// Everything except the timestamp line is a deterministic function of the config.
pub fn run_experiment(cfg: &ExperimentConfig, stages: Stages) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).context(|| format!("creating {}", cfg.out.display()))?;
    let mut summary = ExperimentSummary::default();
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let split = load_data(cfg, seed)?;
        let ens = build_ensembles(cfg, &split.train, seed)?;
        if stages.save_ensembles {
            let dir = cfg.out.join(format!("seed_{seed}"));
            save_ensemble(&ens.surrogate, dir.join("surrogate"))?;
            save_ensemble(&ens.target, dir.join("target"))?;
            files.push(dir);
        }
        if !(stages.asr || stages.bound || stages.traces) {
            continue;
        }
        let benign = inputs(&split.test, cfg.n_examples);
        let sets = target_sets(&ens.target);
        for &method in &cfg.methods {
            let acfg = cfg.attack_for(method, seed);
            let states = attack_many(&benign, &ens.surrogate, &acfg)
                .context(|| format!("{method} attack, seed {seed}"))?;
            if stages.asr {
                let adv: Vec<AdvExample> = states
                    .iter()
                    .map(|s| AdvExample {
                        x_hat: s.x_hat.clone(),
                        label: s.label,
                        target: acfg.target,
                    })
                    .collect();
                summary.asr.extend(evaluate_asr(method, seed, &adv, &sets, acfg.target.is_some())?);
            }
            if stages.traces {
                for (i, s) in states.iter().take(cfg.trace_examples).enumerate() {
                    let path = cfg
                        .out
                        .join("traces")
                        .join(format!("seed_{seed}"))
                        .join(format!("{method}_ex{i}.csv"));
                    write(&path, &s.trace.to_csv(), &mut files)?;
                }
            }
            if stages.bound {
                let rows = states
                    .par_iter()
                    .take(cfg.bound_examples)
                    .enumerate()
                    .map(|(i, s)| {
                        bound_for(cfg, seed, i, s, &ens).map(|report| BoundRow {
                            seed,
                            method,
                            example: i,
                            report,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .context(|| format!("bound diagnostics for {method}, seed {seed}"))?;
                summary.bounds.extend(rows);
            }
        }
    }
    if stages.asr {
        let text = format!("{}{}", timestamp_line(), summary.asr.to_csv());
        write(&cfg.out.join("asr.csv"), &text, &mut files)?;
    }
    if stages.bound {
        let mut text = timestamp_line();
        text.push_str(&format!("seed,method,example,{BOUND_HEADER}\n"));
        for b in &summary.bounds {
            text.push_str(&format!("{},{},{},{}\n", b.seed, b.method, b.example, b.report.csv_row()));
        }
        write(&cfg.out.join("bound.csv"), &text, &mut files)?;
    }
    summary.files = files;
    Ok(summary)
}

/// Predicted and observed gradient-call counts for every configured method
/// on the first test example of the first seed.
pub fn bench_report(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let split = load_data(cfg, seed)?;
    let full = build_ensemble(&cfg.surrogate_prototypes(seed)?, &split.train, cfg.prototypes.pretrain, seed)?;
    let (ens, _) = split_holdout(full, cfg.prototypes.snapshots)?;
    let (x, y) = split.test.iter().next().ok_or_else(|| HarnessError::Config("empty test split".into()))?;
    let mut out = format!("{BENCH_HEADER}\n");
    for &method in &cfg.methods {
        let acfg = cfg.attack_for(method, seed);
        let n_iter = acfg.n_iter.unwrap_or(ens.len());
        let predicted = predict_ngrad(method, n_iter, ens.num_components(), acfg.inner_t, LateStart::Fixed(acfg.n_ls))?;
        let observed = run(x, y, &ens, &acfg)?.calls();
        out.push_str(&format!(
            "{method},{n_iter},{},{},{},{predicted},{observed}\n",
            ens.num_components(),
            acfg.inner_t,
            acfg.n_ls
        ));
    }
    Ok(out)
}
