use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{HarnessError, Result};
use crate::attack::{AttackConfig, Method};
use crate::bound::{BoundConfig, Phi};
use crate::forge::{default_prototypes, DatasetKind, PretrainConfig, PrototypeConfig, ScheduleMode};
use crate::kv;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        kind: DatasetKind,
        n_train: usize,
        n_test: usize,
    },
    /// A CIFAR-10 binary batch; the first `n_train` records train the models
    /// and the rest are attacked.
    Cifar10 { path: PathBuf, n_train: usize },
}

/// The surrogate side: how many of the four default prototypes to use and
/// how their fine-tuning trajectories are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSpec {
    pub components: usize,
    /// Snapshots per component (`n`).
    pub snapshots: usize,
    /// Extra trailing snapshots kept aside for held-out diagnostics.
    pub holdout: usize,
    pub lr: f64,
    pub adv_eps: f64,
    pub pretrain: PretrainConfig,
}

/// Black-box targets: all four prototypes, trained from seeds disjoint from
/// the surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub snapshots: usize,
    pub seed_offset: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub prototypes: PrototypeSpec,
    pub attack: AttackConfig,
    pub methods: Vec<Method>,
    pub bound: BoundConfig,
    /// Examples per seed (from the start of the test split) that get a bound report.
    pub bound_examples: usize,
    /// Uniform γ-ball draws added to the attack iterates when forming `X̂_r`.
    pub pool_random: usize,
    pub target: TargetSpec,
    pub n_examples: usize,
    pub seeds: Vec<u64>,
    /// Examples per (seed, method) whose step trace is written.
    pub trace_examples: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let attack = AttackConfig {
            gamma: 0.05,
            beta_x: 0.00625,
            beta_eps: 0.002,
            ..AttackConfig::default()
        };
        let bound = BoundConfig {
            gamma: attack.gamma,
            rho: attack.rho_inf(),
            ..BoundConfig::default()
        };
        Self {
            data: DataSource::Synthetic {
                kind: DatasetKind::GaussianMixture {
                    dim: 20,
                    classes: 3,
                    separation: 3.0,
                },
                n_train: 600,
                n_test: 200,
            },
            prototypes: PrototypeSpec {
                components: 4,
                snapshots: 10,
                holdout: 0,
                lr: 0.05,
                adv_eps: 0.05,
                pretrain: PretrainConfig::default(),
            },
            attack,
            methods: Method::ALL.to_vec(),
            bound,
            bound_examples: 5,
            pool_random: 32,
            target: TargetSpec {
                snapshots: 2,
                seed_offset: 0x007a_49e7,
            },
            n_examples: 200,
            seeds: vec![0],
            trace_examples: 1,
            out: PathBuf::from("out"),
        }
    }
}

/// Every key accepted in a config file; dashes and underscores are interchangeable.
pub const CONFIG_KEYS: &[&str] = &[
    "dataset", "dim", "classes", "separation", "n_train", "n_test",
    "components", "n", "holdout", "lr", "adv_eps", "pretrain_lr", "pretrain_epochs",
    "target_snapshots", "target_seed_offset",
    "method", "gamma", "beta_x", "beta_eps", "inner_t", "n_ls", "mu", "n_iter", "target_class",
    "schedule", "cwa_beta", "cwa_r",
    "phi", "r", "c1", "c2", "rho", "delta", "sharpness_steps", "restarts",
    "bound_examples", "pool_random",
    "n_examples", "seed", "seeds", "trace_examples", "out",
];

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_methods(v: &str) -> Result<Vec<Method>> {
    if v.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let methods = v
        .split(',')
        .map(|s| s.trim().parse::<Method>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(HarnessError::Config("empty method list".into()));
    }
    Ok(methods)
}

impl ExperimentConfig {
    /// Reads a `key = value` file and applies it over the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_map(&Self::parse_text(&text)?)
    }

    pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
        let raw = kv::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (k, v) in raw {
            if map.insert(normalize(&k), v).is_some() {
                return Err(HarnessError::Config(format!("duplicate key `{k}`")));
            }
        }
        Ok(map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(map)?;
        Ok(cfg)
    }

    /// Applies overrides on top of the current values, then validates.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        let map: BTreeMap<String, &str> = map.iter().map(|(k, v)| (normalize(k), v.as_str())).collect();
        if let Some(bad) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(HarnessError::Config(format!("unknown key `{bad}`")));
        }
        let get = |k: &str| map.get(k).copied();

        if let Some(v) = get("dataset") {
            self.data = match v.split_once(':') {
                Some(("cifar10", path)) => DataSource::Cifar10 {
                    path: PathBuf::from(path.trim()),
                    n_train: 1000,
                },
                _ => match v.trim() {
                    "gaussian_mixture" => DataSource::Synthetic {
                        kind: DatasetKind::GaussianMixture {
                            dim: 20,
                            classes: 3,
                            separation: 3.0,
                        },
                        n_train: 600,
                        n_test: 200,
                    },
                    "two_rings" => DataSource::Synthetic {
                        kind: DatasetKind::TwoRings { dim: 20 },
                        n_train: 600,
                        n_test: 200,
                    },
                    other => {
                        return Err(HarnessError::Config(format!(
                            "unknown dataset `{other}` (gaussian_mixture, two_rings, cifar10:<path>)"
                        )))
                    }
                },
            };
        }
        match &mut self.data {
            DataSource::Synthetic { kind, n_train, n_test } => {
                if let Some(v) = get("n_train") {
                    *n_train = parse_num("n_train", v)?;
                }
                if let Some(v) = get("n_test") {
                    *n_test = parse_num("n_test", v)?;
                }
                match kind {
                    DatasetKind::GaussianMixture { dim, classes, separation } => {
                        if let Some(v) = get("dim") {
                            *dim = parse_num("dim", v)?;
                        }
                        if let Some(v) = get("classes") {
                            *classes = parse_num("classes", v)?;
                        }
                        if let Some(v) = get("separation") {
                            *separation = parse_num("separation", v)?;
                        }
                    }
                    DatasetKind::TwoRings { dim } => {
                        if let Some(v) = get("dim") {
                            *dim = parse_num("dim", v)?;
                        }
                        if get("classes").is_some() || get("separation").is_some() {
                            return Err(HarnessError::Config("two_rings takes only `dim`".into()));
                        }
                    }
                }
            }
            DataSource::Cifar10 { n_train, .. } => {
                if let Some(v) = get("n_train") {
                    *n_train = parse_num("n_train", v)?;
                }
                if ["dim", "classes", "separation", "n_test"].iter().any(|k| get(k).is_some()) {
                    return Err(HarnessError::Config("cifar10 fixes dim, classes and the test split".into()));
                }
            }
        }

        let p = &mut self.prototypes;
        if let Some(v) = get("components") {
            p.components = parse_num("components", v)?;
        }
        if let Some(v) = get("n") {
            p.snapshots = parse_num("n", v)?;
        }
        if let Some(v) = get("holdout") {
            p.holdout = parse_num("holdout", v)?;
        }
        if let Some(v) = get("lr") {
            p.lr = parse_num("lr", v)?;
        }
        if let Some(v) = get("adv_eps") {
            p.adv_eps = parse_num("adv_eps", v)?;
        }
        if let Some(v) = get("pretrain_lr") {
            p.pretrain.lr = parse_num("pretrain_lr", v)?;
        }
        if let Some(v) = get("pretrain_epochs") {
            p.pretrain.epochs = parse_num("pretrain_epochs", v)?;
        }
        if let Some(v) = get("target_snapshots") {
            self.target.snapshots = parse_num("target_snapshots", v)?;
        }
        if let Some(v) = get("target_seed_offset") {
            self.target.seed_offset = parse_num("target_seed_offset", v)?;
        }

        if let Some(v) = get("method") {
            self.methods = parse_methods(v)?;
        }
        let a = &mut self.attack;
        if let Some(v) = get("gamma") {
            a.gamma = parse_num("gamma", v)?;
            self.bound.gamma = a.gamma;
        }
        if let Some(v) = get("beta_x") {
            a.beta_x = parse_num("beta_x", v)?;
        }
        if let Some(v) = get("beta_eps") {
            a.beta_eps = parse_num("beta_eps", v)?;
        }
        if let Some(v) = get("inner_t") {
            a.inner_t = parse_num("inner_t", v)?;
        }
        if let Some(v) = get("n_ls") {
            a.n_ls = parse_num("n_ls", v)?;
        }
        if let Some(v) = get("mu") {
            a.mu = parse_num("mu", v)?;
        }
        if let Some(v) = get("n_iter") {
            a.n_iter = Some(parse_num("n_iter", v)?);
        }
        if let Some(v) = get("target_class") {
            a.target = Some(parse_num("target_class", v)?);
        }
        if let Some(v) = get("cwa_beta") {
            a.cwa_beta = parse_num("cwa_beta", v)?;
        }
        if let Some(v) = get("cwa_r") {
            a.cwa_r = Some(parse_num("cwa_r", v)?);
        }
        if let Some(v) = get("schedule") {
            a.schedule = match v.trim() {
                "trajectory" => ScheduleMode::Trajectory,
                s => match s.strip_prefix("random:") {
                    Some(seed) => ScheduleMode::Random {
                        seed: parse_num("schedule", seed)?,
                    },
                    None => {
                        return Err(HarnessError::Config(format!(
                            "unknown schedule `{s}` (trajectory, random:<seed>)"
                        )))
                    }
                },
            };
        }
        // The sharpness radius follows the reverse-perturbation radius unless given.
        self.bound.rho = self.attack.rho_inf();

        let b = &mut self.bound;
        if let Some(v) = get("phi") {
            b.phi = v.parse()?;
        }
        if let Some(v) = get("r") {
            b.r = parse_num("r", v)?;
        }
        if let Some(v) = get("c1") {
            b.c1 = parse_num("c1", v)?;
        }
        if let Some(v) = get("c2") {
            b.c2 = parse_num("c2", v)?;
        }
        if let Some(v) = get("rho") {
            b.rho = parse_num("rho", v)?;
        }
        if let Some(v) = get("delta") {
            b.delta = parse_num("delta", v)?;
        }
        if let Some(v) = get("sharpness_steps") {
            b.sharpness_steps = parse_num("sharpness_steps", v)?;
        }
        if let Some(v) = get("restarts") {
            b.restarts = parse_num("restarts", v)?;
        }
        if let Some(v) = get("bound_examples") {
            self.bound_examples = parse_num("bound_examples", v)?;
        }
        if let Some(v) = get("pool_random") {
            self.pool_random = parse_num("pool_random", v)?;
        }

        if let Some(v) = get("n_examples") {
            self.n_examples = parse_num("n_examples", v)?;
        }
        match (get("seed"), get("seeds")) {
            (Some(_), Some(_)) => return Err(HarnessError::Config("give `seed` or `seeds`, not both".into())),
            (Some(v), None) => self.seeds = vec![parse_num("seed", v)?],
            (None, Some(v)) => self.seeds = parse_list("seeds", v)?,
            (None, None) => {}
        }
        if let Some(v) = get("trace_examples") {
            self.trace_examples = parse_num("trace_examples", v)?;
        }
        if let Some(v) = get("out") {
            self.out = PathBuf::from(v.trim());
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.n_examples == 0 {
            return bad("n_examples must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        let p = &self.prototypes;
        if !(1..=4).contains(&p.components) {
            return bad(format!("components must be in 1..=4, got {}", p.components));
        }
        if p.snapshots == 0 || self.target.snapshots == 0 {
            return bad("need at least one surrogate and one target snapshot per component".into());
        }
        if self.methods.contains(&Method::Drap) && self.attack.n_ls > p.snapshots {
            return bad(format!("n_ls = {} exceeds the {} snapshots per component", self.attack.n_ls, p.snapshots));
        }
        if let DataSource::Synthetic { n_test, .. } = self.data {
            if n_test < self.n_examples {
                return bad(format!("n_test = {n_test} is smaller than n_examples = {}", self.n_examples));
            }
        }
        self.attack.validate()?;
        self.bound.validate()?;
        Ok(())
    }

    pub fn dim_and_classes(&self) -> (usize, usize) {
        match &self.data {
            DataSource::Synthetic { kind, .. } => (kind.dim(), kind.num_classes()),
            DataSource::Cifar10 { .. } => (super::CIFAR_PIXELS, 10),
        }
    }

    /// Surrogate prototypes for one seed, with `holdout` extra epochs appended.
    pub fn surrogate_prototypes(&self, seed: u64) -> Result<Vec<PrototypeConfig>> {
        let (d, k) = self.dim_and_classes();
        let p = &self.prototypes;
        let mut protos = default_prototypes(d, k, p.snapshots + p.holdout, p.lr, p.adv_eps, seed)?;
        protos.truncate(p.components);
        Ok(protos)
    }

    /// All four target prototypes for one seed.
    pub fn target_prototypes(&self, seed: u64) -> Result<Vec<PrototypeConfig>> {
        let (d, k) = self.dim_and_classes();
        let p = &self.prototypes;
        Ok(default_prototypes(
            d,
            k,
            self.target.snapshots,
            p.lr,
            p.adv_eps,
            seed.wrapping_add(self.target.seed_offset),
        )?)
    }

    /// The attack config for one method and seed. Unless `n_iter` is set,
    /// every method takes `K = components · n` sign steps: DRAP one per
    /// surrogate model, the ensemble baselines one per iteration over the
    /// batch schedule.
    pub fn attack_for(&self, method: Method, seed: u64) -> AttackConfig {
        let k = self.prototypes.components * self.prototypes.snapshots;
        AttackConfig {
            method,
            seed,
            n_iter: Some(self.attack.n_iter.unwrap_or(k)),
            ..self.attack.clone()
        }
    }

    pub fn phi(&self) -> Phi {
        self.bound.phi
    }
}
