use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};
use crate::motion::Skeleton;

/// Model family member: the full model, one of its ablations, or the split-latent baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Per-action posteriors captured at each action's last frame; the decoder
    /// attends to every action latent at every frame.
    Full,
    /// Posterior parameters averaged over each action's frames.
    AverageStats,
    /// A fresh latent draw for every decoded frame.
    AllDiffLatent,
    /// One noise draw shared by all actions.
    SingleLatent,
    /// Each frame attends only to the latent of the action active at that frame.
    NoLookBackAhead,
    /// One sequence latent split into `M` equal chunks, one per action slot.
    BaselineSplit(usize),
}

impl Variant {
    pub const ABLATIONS: [Variant; 6] = [
        Variant::Full,
        Variant::AverageStats,
        Variant::AllDiffLatent,
        Variant::SingleLatent,
        Variant::NoLookBackAhead,
        Variant::BaselineSplit(4),
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::AverageStats => f.write_str("avg-stats"),
            Variant::AllDiffLatent => f.write_str("all-diff-latent"),
            Variant::SingleLatent => f.write_str("single-latent"),
            Variant::NoLookBackAhead => f.write_str("no-lba"),
            Variant::BaselineSplit(m) => write!(f, "baseline:{m}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "avg-stats" => Variant::AverageStats,
            "all-diff-latent" => Variant::AllDiffLatent,
            "single-latent" => Variant::SingleLatent,
            "no-lba" => Variant::NoLookBackAhead,
            other => match other.strip_prefix("baseline:").map(str::parse::<usize>) {
                Some(Ok(m)) if m >= 1 => Variant::BaselineSplit(m),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown variant `{s}` (expected full, avg-stats, all-diff-latent, single-latent, no-lba or baseline:M)"
                    )))
                }
            },
        })
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub skeleton: Skeleton,
    pub latent_dim: usize,
    /// Width of the action embedding concatenated to encoder inputs.
    pub action_embed_dim: usize,
    pub encoder: AttentionConfig,
    pub decoder: AttentionConfig,
    pub variant: Variant,
    /// Base of the sinusoidal position code.
    pub position_base: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            skeleton: Skeleton {
                joints: 8,
                pose_dim: 27,
                fps: 30.0,
            },
            latent_dim: 16,
            action_embed_dim: 16,
            encoder: AttentionConfig::default(),
            decoder: AttentionConfig::default(),
            variant: Variant::Full,
            position_base: 10_000.0,
        }
    }
}

impl ModelConfig {
    pub fn pose_dim(&self) -> usize {
        self.skeleton.pose_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.latent_dim == 0 || self.action_embed_dim == 0 || self.pose_dim() == 0 {
            return Err(Error::Config("latent_dim, action_embed_dim and pose_dim must be positive".into()));
        }
        self.encoder.validate()?;
        self.decoder.validate()?;
        if let Variant::BaselineSplit(m) = self.variant {
            if m == 0 || m > self.latent_dim {
                return Err(Error::Config(format!(
                    "baseline split M={m} needs 1 <= M <= latent_dim ({})",
                    self.latent_dim
                )));
            }
        }
        if !(self.position_base > 1.0) {
            return Err(Error::Config("position_base must exceed 1".into()));
        }
        Ok(())
    }
}
