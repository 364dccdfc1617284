use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{fine_tune_collect, pretrain, Dataset, ForgeError, PrototypeConfig, Result, Training};
use crate::kv;
use crate::nn::{read_checkpoint, write_checkpoint, Activation, Arch, ModelSpec, Weights};

/// A trajectory of snapshots sampled from one surrogate component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub config: PrototypeConfig,
    pub snapshots: Vec<Weights>,
}

/// `I` components × `n` snapshots each; `K = I·n` surrogate models.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEnsemble {
    components: Vec<Component>,
    seed: u64,
}

/// How [`SurrogateEnsemble::schedule`] picks the model for an outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleMode {
    /// Snapshot `j` of component `i`: each model is visited exactly once.
    #[default]
    Trajectory,
    /// Uniform draw from component `i`, reproducible from `(seed, j, i)`.
    Random { seed: u64 },
}

/// Settings for the from-scratch training that precedes snapshot collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { lr: 0.5, epochs: 20 }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SurrogateEnsemble {
    pub fn new(components: Vec<Component>, seed: u64) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| ForgeError::InvalidConfig("ensemble needs at least one component".into()))?;
        let n = first.snapshots.len();
        if n == 0 {
            return Err(ForgeError::InvalidConfig("components need at least one snapshot".into()));
        }
        let dim = first.config.spec.input_dim;
        let classes = first.config.spec.num_classes;
        for (i, c) in components.iter().enumerate() {
            if c.snapshots.len() != n {
                return Err(ForgeError::InvalidConfig(format!(
                    "component {i} has {} snapshots, expected {n}",
                    c.snapshots.len()
                )));
            }
            if c.snapshots.iter().any(|w| w.spec() != &c.config.spec) {
                return Err(ForgeError::InvalidConfig(format!("component {i} mixes model specs")));
            }
            if c.config.spec.input_dim != dim || c.config.spec.num_classes != classes {
                return Err(ForgeError::InvalidConfig(format!(
                    "component {i} disagrees on input dimension or class count"
                )));
            }
        }
        Ok(Self { components, seed })
    }

    /// Wraps ready-made snapshot lists (one per component) without training
    /// provenance; the recorded configs carry only the model spec.
    pub fn from_snapshots(components: Vec<Vec<Weights>>, seed: u64) -> Result<Self> {
        let comps = components
            .into_iter()
            .enumerate()
            .map(|(i, snapshots)| {
                let spec = snapshots
                    .first()
                    .map(|w| w.spec().clone())
                    .ok_or_else(|| ForgeError::InvalidConfig(format!("component {i} has no snapshots")))?;
                Ok(Component {
                    config: PrototypeConfig {
                        spec,
                        training: Training::Normal,
                        lr: 0.0,
                        epochs: snapshots.len(),
                        seed: 0,
                        batch_size: 1,
                    },
                    snapshots,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps, seed)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn snapshots_per_component(&self) -> usize {
        self.components[0].snapshots.len()
    }

    /// `K = I·n`.
    pub fn len(&self) -> usize {
        self.num_components() * self.snapshots_per_component()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.components[0].config.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.components[0].config.spec.num_classes
    }

    /// All models, component-major.
    pub fn models(&self) -> impl Iterator<Item = &Weights> {
        self.components.iter().flat_map(|c| c.snapshots.iter())
    }

    pub fn snapshot_index(&self, outer: usize, component: usize, mode: ScheduleMode) -> Result<usize> {
        let n = self.snapshots_per_component();
        let i_count = self.num_components();
        if outer >= n || component >= i_count {
            return Err(ForgeError::IndexOutOfRange {
                outer,
                component,
                snapshots: n,
                components: i_count,
            });
        }
        Ok(match mode {
            ScheduleMode::Trajectory => outer,
            ScheduleMode::Random { seed } => {
                ChaCha8Rng::seed_from_u64(mix(seed, outer as u64, component as u64)).gen_range(0..n)
            }
        })
    }

    /// The surrogate used at outer iteration `outer` for component `component`.
    pub fn schedule(&self, outer: usize, component: usize, mode: ScheduleMode) -> Result<&Weights> {
        let j = self.snapshot_index(outer, component, mode)?;
        Ok(&self.components[component].snapshots[j])
    }

    /// One model per component for outer iteration `outer`.
    pub fn batch(&self, outer: usize, mode: ScheduleMode) -> Result<Vec<&Weights>> {
        (0..self.num_components())
            .map(|i| self.schedule(outer, i, mode))
            .collect()
    }
}

/// Pretrains every prototype from scratch and fine-tunes it into a component.
/// Components are built in parallel from independent seeds.
pub fn build_ensemble(
    prototypes: &[PrototypeConfig],
    data: &Dataset,
    pretrain_cfg: PretrainConfig,
    seed: u64,
) -> Result<SurrogateEnsemble> {
    let components = prototypes
        .par_iter()
        .map(|cfg| {
            cfg.validate()?;
            let base = pretrain(
                &cfg.spec,
                cfg.training,
                data,
                pretrain_cfg.lr,
                pretrain_cfg.epochs,
                cfg.batch_size,
                cfg.seed,
            )?;
            let snapshots = fine_tune_collect(cfg, &base, data)?;
            Ok(Component {
                config: cfg.clone(),
                snapshots,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SurrogateEnsemble::new(components, seed)
}

pub const MANIFEST_FILE: &str = "manifest.txt";

fn training_text(t: Training) -> String {
    match t {
        Training::Normal => "normal".into(),
        Training::Adversarial { eps, pgd_steps } => format!("adversarial:{eps}:{pgd_steps}"),
    }
}

fn parse_training(s: &str) -> Option<Training> {
    if s == "normal" {
        return Some(Training::Normal);
    }
    let mut parts = s.strip_prefix("adversarial:")?.split(':');
    let eps = parts.next()?.parse().ok()?;
    let pgd_steps = parts.next()?.parse().ok()?;
    Some(Training::Adversarial { eps, pgd_steps })
}

/// Writes `component_<i>/snapshot_<j>.fxw` files plus a `key=value` manifest.
pub fn save_ensemble(ensemble: &SurrogateEnsemble, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("components={}\n", ensemble.num_components()));
    manifest.push_str(&format!("snapshots={}\n", ensemble.snapshots_per_component()));
    manifest.push_str(&format!("seed={}\n", ensemble.seed));
    for (i, c) in ensemble.components.iter().enumerate() {
        let cfg = &c.config;
        manifest.push_str(&format!("component.{i}.arch={}\n", cfg.spec.arch));
        manifest.push_str(&format!("component.{i}.activation={}\n", cfg.spec.activation.name()));
        manifest.push_str(&format!("component.{i}.input_dim={}\n", cfg.spec.input_dim));
        manifest.push_str(&format!("component.{i}.num_classes={}\n", cfg.spec.num_classes));
        manifest.push_str(&format!("component.{i}.training={}\n", training_text(cfg.training)));
        manifest.push_str(&format!("component.{i}.lr={}\n", cfg.lr));
        manifest.push_str(&format!("component.{i}.epochs={}\n", cfg.epochs));
        manifest.push_str(&format!("component.{i}.batch_size={}\n", cfg.batch_size));
        manifest.push_str(&format!("component.{i}.seed={}\n", cfg.seed));
        let cdir = dir.join(format!("component_{i}"));
        fs::create_dir_all(&cdir)?;
        for (j, w) in c.snapshots.iter().enumerate() {
            write_checkpoint(cdir.join(format!("snapshot_{j}.fxw")), w)?;
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<SurrogateEnsemble> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let map = kv::parse(&text).map_err(|e| ForgeError::Manifest(e.to_string()))?;
    let get = |key: &str| -> Result<&str> {
        map.get(key)
            .map(String::as_str)
            .ok_or_else(|| ForgeError::Manifest(format!("missing key `{key}`")))
    };
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| ForgeError::Manifest(format!("bad value `{v}` for `{key}`")))
    }
    let components: usize = num("components", get("components")?)?;
    let snapshots: usize = num("snapshots", get("snapshots")?)?;
    let seed: u64 = num("seed", get("seed")?)?;
    let mut out = Vec::with_capacity(components);
    for i in 0..components {
        let key = |field: &str| format!("component.{i}.{field}");
        let arch: Arch = get(&key("arch"))?.parse()?;
        let activation: Activation = get(&key("activation"))?.parse()?;
        let spec = ModelSpec::new(
            arch,
            num(&key("input_dim"), get(&key("input_dim"))?)?,
            num(&key("num_classes"), get(&key("num_classes"))?)?,
            activation,
        )?;
        let training = parse_training(get(&key("training"))?)
            .ok_or_else(|| ForgeError::Manifest(format!("bad training for component {i}")))?;
        let config = PrototypeConfig {
            spec,
            training,
            lr: num(&key("lr"), get(&key("lr"))?)?,
            epochs: num(&key("epochs"), get(&key("epochs"))?)?,
            seed: num(&key("seed"), get(&key("seed"))?)?,
            batch_size: num(&key("batch_size"), get(&key("batch_size"))?)?,
        };
        let cdir = dir.join(format!("component_{i}"));
        let snaps = (0..snapshots)
            .map(|j| read_checkpoint(cdir.join(format!("snapshot_{j}.fxw"))).map_err(ForgeError::from))
            .collect::<Result<Vec<_>>>()?;
        if snaps.iter().any(|w| w.spec() != &config.spec) {
            return Err(ForgeError::Manifest(format!(
                "snapshot spec of component {i} disagrees with the manifest"
            )));
        }
        out.push(Component {
            config,
            snapshots: snaps,
        });
    }
    SurrogateEnsemble::new(out, seed)
}
