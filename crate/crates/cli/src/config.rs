//! Pipeline configuration: one TOML file, every key overridable by a flag of
//! the same dotted name.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use splatfix_core::codec::CodecConfig;
use splatfix_core::dataset::DEFAULT_CONDITION_CLASSES;
use splatfix_core::synth::{Style, SynthParams};
use splatfix_restore::{perceptual, DiffusionSchedule, DistillConfig, EvalConfig, LrDecay, LoraConfig, NetConfig, PretrainConfig};

/// File name of the effective-configuration snapshot in output directories.
pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Worker threads; 1 forces the deterministic sequential path, 0 picks
    /// the machine default.
    pub threads: usize,
    pub synth: SynthSection,
    pub codec: CodecConfig,
    pub dataset: DatasetSection,
    pub net: NetConfig,
    pub schedule: DiffusionSchedule,
    pub lora: LoraConfig,
    pub pretrain: PretrainConfig,
    pub distill: DistillSection,
    pub eval: EvalSection,
    pub fit: FitSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub scenes: usize,
    pub n_primitives: usize,
    pub n_train_views: usize,
    pub n_test_views: usize,
    pub style: Style,
    pub image_size: u32,
    pub sh_degree: u8,
    pub fov_deg: f32,
    pub camera_radius: f32,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            scenes: 20,
            n_primitives: p.n_primitives,
            n_train_views: p.n_train_views,
            n_test_views: p.n_test_views,
            style: p.style,
            image_size: p.image_size,
            sh_degree: p.sh_degree,
            fov_deg: p.fov_deg,
            camera_radius: p.camera_radius,
        }
    }
}

impl SynthSection {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            n_primitives: self.n_primitives,
            n_train_views: self.n_train_views,
            n_test_views: self.n_test_views,
            style: self.style,
            image_size: self.image_size,
            sh_degree: self.sh_degree,
            fov_deg: self.fov_deg,
            camera_radius: self.camera_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub condition_classes: u32,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            condition_classes: DEFAULT_CONDITION_CLASSES,
        }
    }
}

/// Distillation settings; the intermediate timestep comes from
/// `schedule.t0` and the seed from the root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub alpha: f32,
    pub cfg_scale: f32,
    pub lambda_kl: f32,
    pub lambda_l2: f32,
    pub lambda_perc: f32,
    pub lr_scale: f32,
    pub lr_decay: LrDecay,
    pub weight_decay: f32,
    pub clip_norm: f32,
    pub steps: usize,
    pub batch: usize,
    pub cond_dropout: f64,
    pub checkpoint_every: usize,
    pub perceptual_seed: u64,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            alpha: d.alpha,
            cfg_scale: d.cfg_scale,
            lambda_kl: d.lambda_kl,
            lambda_l2: d.lambda_l2,
            lambda_perc: d.lambda_perc,
            lr_scale: d.lr_scale,
            lr_decay: d.lr_decay,
            weight_decay: d.weight_decay,
            clip_norm: d.clip_norm,
            steps: d.steps,
            batch: d.batch,
            cond_dropout: d.cond_dropout,
            checkpoint_every: d.checkpoint_every,
            perceptual_seed: d.perceptual_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cfg_scale: f32,
    /// Constant restoration noise instead of fresh Gaussian draws; `0`
    /// turns the identity restorer into an exact passthrough.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterministic_eps: Option<f32>,
    pub perceptual_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            cfg_scale: 1.0,
            deterministic_eps: None,
            perceptual_seed: perceptual::DEFAULT_SEED,
        }
    }
}

/// Perturb-and-refit check of the differentiable renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub iters: usize,
    /// Standard deviation of the perturbation added to positions, colors
    /// and opacity logits, relative to each attribute's spread.
    pub perturb: f32,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { iters: 300, perturb: 0.05 }
    }
}

/// Stream offsets keep stages independent of one another.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Scene(usize),
    Dataset,
    Base,
    Pretrain,
    Adapters,
    Distill,
    Eval,
    Fit,
}

/// SplitMix64 of the root seed and a stage tag.
pub fn derive_seed(root: u64, stream: Stream) -> u64 {
    let tag: u64 = match stream {
        Stream::Scene(i) => 0x5ce0_0000_0000_0000 ^ i as u64,
        Stream::Dataset => 1,
        Stream::Base => 2,
        Stream::Pretrain => 3,
        Stream::Adapters => 4,
        Stream::Distill => 5,
        Stream::Eval => 6,
        Stream::Fit => 7,
    };
    let mut z = root ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Config {
    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            alpha: d.alpha,
            cfg_scale: d.cfg_scale,
            t0: self.schedule.t0,
            lambda_kl: d.lambda_kl,
            lambda_l2: d.lambda_l2,
            lambda_perc: d.lambda_perc,
            lr_scale: d.lr_scale,
            lr_decay: d.lr_decay,
            weight_decay: d.weight_decay,
            clip_norm: d.clip_norm,
            steps: d.steps,
            batch: d.batch,
            seed: derive_seed(self.seed, Stream::Distill),
            cond_dropout: d.cond_dropout,
            checkpoint_every: d.checkpoint_every,
            perceptual_seed: d.perceptual_seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            seed: derive_seed(self.seed, Stream::Eval),
            cfg_scale: self.eval.cfg_scale,
            deterministic_eps: self.eval.deterministic_eps,
            perceptual_seed: self.eval.perceptual_seed,
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        let mut table = toml::Table::try_from(self)?;
        tidy_floats(&mut table);
        Ok(toml::to_string(&table)?)
    }

    /// Writes the effective configuration into `dir`.
    pub fn snapshot(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SNAPSHOT_FILE), self.to_toml()?).with_context(|| format!("writing config snapshot to {}", dir.display()))
    }
}

/// Rewrites floats that came from `f32` fields in their shortest decimal
/// form; the value read back into an `f32` is unchanged.
fn tidy_floats(table: &mut toml::Table) {
    for (_, v) in table.iter_mut() {
        match v {
            toml::Value::Table(t) => tidy_floats(t),
            toml::Value::Float(f) if (*f as f32) as f64 == *f => {
                *f = (*f as f32).to_string().parse().expect("shortest f32 form parses");
            }
            _ => {}
        }
    }
}

/// Scalar kinds a configuration key can hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Integer,
    Float,
    Bool,
    Text,
}

/// A configuration key with its default rendered for help text.
#[derive(Clone, Debug, PartialEq)]
pub struct Key {
    pub path: String,
    pub kind: Kind,
    pub default: Option<String>,
}

/// Optional keys absent from the default serialization.
const OPTIONAL_KEYS: [(&str, Kind); 1] = [("eval.deterministic_eps", Kind::Float)];

fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<Key>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let kind = match v {
            toml::Value::Table(t) => {
                walk(&path, t, out);
                continue;
            }
            toml::Value::Integer(_) => Kind::Integer,
            toml::Value::Float(_) => Kind::Float,
            toml::Value::Boolean(_) => Kind::Bool,
            _ => Kind::Text,
        };
        let default = Some(match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        });
        out.push(Key { path, kind, default });
    }
}

/// Every settable key, in a stable order.
pub fn keys() -> Vec<Key> {
    let mut table = toml::Table::try_from(Config::default()).expect("default configuration serializes");
    tidy_floats(&mut table);
    let mut out = Vec::new();
    walk("", &table, &mut out);
    for (path, kind) in OPTIONAL_KEYS {
        out.push(Key {
            path: path.to_string(),
            kind,
            default: None,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    out
}

fn parse_value(key: &Key, raw: &str) -> anyhow::Result<toml::Value> {
    let bad = || anyhow!("--{}: cannot parse `{raw}` as {:?}", key.path, key.kind);
    Ok(match key.kind {
        Kind::Integer => toml::Value::Integer(raw.parse().map_err(|_| bad())?),
        Kind::Float => toml::Value::Float(raw.parse().map_err(|_| bad())?),
        Kind::Bool => toml::Value::Boolean(raw.parse().map_err(|_| bad())?),
        Kind::Text => toml::Value::String(raw.to_string()),
    })
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> anyhow::Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("config key `{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Marks problems with the invocation itself (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Reads `file` (if any), applies `overrides` as `(dotted key, raw value)`
/// and validates the result. Unknown keys are usage errors.
pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<Config> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let known = keys();
    for (path, raw) in overrides {
        let key = known
            .iter()
            .find(|k| &k.path == path)
            .ok_or_else(|| UsageError(format!("unknown config key `{path}`")))?;
        let value = parse_value(key, raw).map_err(|e| UsageError(e.to_string()))?;
        set_path(&mut table, path, value)?;
    }
    let cfg: Config = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")))?;
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

impl Config {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.schedule.validate()?;
        self.net.validate()?;
        self.pretrain.validate()?;
        self.distill_config().validate(self.schedule.steps)?;
        if self.dataset.condition_classes as usize > self.net.n_classes {
            bail!(
                "dataset.condition_classes ({}) exceeds net.n_classes ({})",
                self.dataset.condition_classes,
                self.net.n_classes
            );
        }
        if self.synth.scenes == 0 {
            bail!("synth.scenes must be positive");
        }
        if self.lora.rank == 0 {
            bail!("lora.rank must be positive");
        }
        Ok(())
    }
}
