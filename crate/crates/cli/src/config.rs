//! Run configuration: a file of `section.key = value` lines (a TOML subset)
//! merged with command-line overrides.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! network.depth = "normal"        # shallow | normal | deeper
//! network.partition = "spatial"   # uniform | distance | spatial
//! train.margin = 0.2
//! protocol.probes = "nm:5-6,bg:1-2,cl:1-2"
//! ```
//!
//! Unknown keys are rejected. Every output directory receives the merged
//! configuration as `effective_config.toml` in the same format.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitgcn::data::{ProtocolSpec, Selector, SynthConfig, SynthOptions};
use gaitgcn::net::NetworkConfig;
use gaitgcn::train::TrainConfig;
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "effective_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub output: OutputSection,
    pub synth: SynthSection,
    pub protocol: ProtocolSection,
    pub network: NetworkConfig,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            output: OutputSection::default(),
            synth: SynthSection::default(),
            protocol: ProtocolSection::default(),
            network: NetworkConfig::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    /// Center and scale each sequence before use.
    pub normalize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub identities: usize,
    pub nm_per_identity: u32,
    pub bg_per_identity: u32,
    pub cl_per_identity: u32,
    pub frames: usize,
    pub view: u32,
    pub identity_spread: f64,
    pub noise: f64,
    pub occlusion: f64,
    pub bag_arm_scale: f64,
    pub coat_jitter: f64,
    pub coat_limb_scale: f64,
    /// Bound on the per-recording camera drift, body heights per frame.
    pub pan: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SynthConfig::default();
        let o = c.options;
        Self {
            identities: c.identities,
            nm_per_identity: c.nm_per_identity,
            bg_per_identity: c.bg_per_identity,
            cl_per_identity: c.cl_per_identity,
            frames: c.frames,
            view: c.view,
            identity_spread: c.identity_spread,
            noise: o.noise,
            occlusion: o.occlusion,
            bag_arm_scale: o.bag_arm_scale,
            coat_jitter: o.coat_jitter,
            coat_limb_scale: o.coat_limb_scale,
            pan: o.pan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// Identities used for training; unset takes the first half.
    pub train_identities: Option<usize>,
    pub gallery: String,
    /// Comma-separated selectors.
    pub probes: String,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let spec = ProtocolSpec::default();
        Self {
            train_identities: None,
            gallery: selector_key(&spec.gallery),
            probes: spec.probes.iter().map(selector_key).collect::<Vec<_>>().join(","),
        }
    }
}

fn selector_key(s: &Selector) -> String {
    format!("{}:{}-{}", s.condition.tag(), s.first, s.last)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub identities_per_batch: usize,
    pub samples_per_identity: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub steps_per_epoch: Option<usize>,
    pub crop_length: usize,
    /// Multiply the learning rate by `decay_factor` every this many steps.
    pub decay_every: Option<usize>,
    pub decay_factor: f64,
    pub precision: Precision,
    /// Also write `checkpoint-<step>.bin` every this many steps.
    pub checkpoint_every: Option<usize>,
    /// Print the running loss every this many steps.
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            identities_per_batch: t.identities_per_batch,
            samples_per_identity: t.samples_per_identity,
            margin: t.margin,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            crop_length: t.crop_length,
            decay_every: t.decay_every,
            decay_factor: t.decay_factor,
            precision: Precision::F32,
            checkpoint_every: None,
            log_every: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            identities: s.identities,
            nm_per_identity: s.nm_per_identity,
            bg_per_identity: s.bg_per_identity,
            cl_per_identity: s.cl_per_identity,
            frames: s.frames,
            view: s.view,
            seed: self.seed,
            identity_spread: s.identity_spread,
            options: SynthOptions {
                noise: s.noise,
                occlusion: s.occlusion,
                bag_arm_scale: s.bag_arm_scale,
                coat_jitter: s.coat_jitter,
                coat_limb_scale: s.coat_limb_scale,
                pan: s.pan,
            },
        }
    }

    pub fn protocol_spec(&self) -> Result<ProtocolSpec> {
        let p = &self.protocol;
        let probes = p
            .probes
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<Selector>())
            .collect::<Result<Vec<_>, _>>()?;
        if probes.is_empty() {
            bail!("protocol.probes lists no probe sets");
        }
        Ok(ProtocolSpec {
            train_identities: p.train_identities,
            gallery: p.gallery.trim().parse()?,
            probes,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            identities_per_batch: t.identities_per_batch,
            samples_per_identity: t.samples_per_identity,
            margin: t.margin,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            crop_length: t.crop_length,
            seed: self.seed,
            decay_every: t.decay_every,
            decay_factor: t.decay_factor,
        }
    }

    /// The configuration as sorted `key = value` lines.
    pub fn to_flat(&self) -> String {
        let value = toml::Value::try_from(self).expect("config is representable");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_flat()).with_context(|| format!("writing {}", path.display()))
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}
