use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wiring of the deformable block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Layer i consumes the concatenation of the block input and all earlier outputs.
    #[default]
    DenseDeformable,
    /// Layers applied in sequence, no concatenation.
    PlainDeformable,
    /// Dense wiring with standard dilated convolutions in place of deformable ones.
    Dilated(usize),
}

/// Dilation rates accepted by [`Variant::Dilated`].
pub const DILATIONS: [usize; 2] = [5, 7];

impl Variant {
    pub fn is_dense(self) -> bool {
        !matches!(self, Variant::PlainDeformable)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::DenseDeformable => f.write_str("dense_deformable"),
            Variant::PlainDeformable => f.write_str("plain_deformable"),
            Variant::Dilated(d) => write!(f, "dilated_{d}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_deformable" | "dense" => Ok(Variant::DenseDeformable),
            "plain_deformable" | "plain" => Ok(Variant::PlainDeformable),
            other => {
                let d = other
                    .strip_prefix("dilated_")
                    .or_else(|| other.strip_prefix("dilated"))
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown variant `{other}` (dense_deformable, plain_deformable, dilated_5, dilated_7)"
                        ))
                    })?;
                if !DILATIONS.contains(&d) {
                    return Err(Error::Config(format!("dilation {d} not supported, use 5 or 7")));
                }
                Ok(Variant::Dilated(d))
            }
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.to_string()
    }
}

/// Architecture description; the network is built from it deterministically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    pub stem_channels: usize,
    pub growth_rate: usize,
    pub block_layers: (usize, usize),
    pub deform_layers: usize,
    pub deform_channels: usize,
    pub variant: Variant,
    /// Binarize inference maps at 0.5. Training always sees the raw map.
    pub binarize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// 224x224 input, stem 64, growth 32, blocks (6, 12), 64 deform channels.
    pub fn full() -> Self {
        ModelConfig {
            input_size: (224, 224),
            stem_channels: 64,
            growth_rate: 32,
            block_layers: (6, 12),
            deform_layers: 3,
            deform_channels: 64,
            variant: Variant::DenseDeformable,
            binarize: false,
        }
    }

    /// Reduced width for CPU experiments: 64x64 input, stem 16, growth 8.
    pub fn desk() -> Self {
        ModelConfig {
            input_size: (64, 64),
            stem_channels: 16,
            growth_rate: 8,
            deform_channels: 16,
            ..Self::full()
        }
    }

    /// Smallest useful network, for gradient checks and hand counts.
    pub fn tiny() -> Self {
        ModelConfig {
            input_size: (16, 16),
            stem_channels: 4,
            growth_rate: 2,
            block_layers: (1, 2),
            deform_layers: 2,
            deform_channels: 4,
            variant: Variant::DenseDeformable,
            binarize: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset `{other}` (full, desk, tiny)"))),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let bad = |msg: String| Err(Error::Config(msg));
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return bad(format!("input_size {h}x{w} must be positive multiples of 8"));
        }
        if self.stem_channels == 0 || self.growth_rate == 0 {
            return bad("stem_channels and growth_rate must be positive".into());
        }
        if self.block_layers.0 == 0 || self.block_layers.1 == 0 {
            return bad("block_layers must both be at least 1".into());
        }
        if self.deform_layers == 0 {
            return bad("deform_layers must be at least 1".into());
        }
        if self.deform_channels < 4 {
            return bad(format!(
                "deform_channels {} must be at least 4 (the decoder divides it by 4)",
                self.deform_channels
            ));
        }
        if let Variant::Dilated(d) = self.variant {
            if !DILATIONS.contains(&d) {
                return bad(format!("dilation {d} not supported, use 5 or 7"));
            }
        }
        let limit = 1 << 16;
        let fields = [h, w, self.stem_channels, self.growth_rate, self.block_layers.0, self.block_layers.1];
        if fields.iter().chain([&self.deform_layers, &self.deform_channels]).any(|&v| v > limit) {
            return bad(format!("configuration values must not exceed {limit}"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
