use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DiscriminatorParams, GeneratorParams, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "clan-forge-checkpoint/1";

/// SHA-256 (hex) of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Self-describing parameter snapshot. JSON floats are written in
/// shortest round-trip form, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub model: ModelConfig,
    pub iteration: usize,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
}

impl Checkpoint {
    pub fn new(
        config_hash: String,
        model: ModelConfig,
        iteration: usize,
        generator: GeneratorParams,
        discriminator: DiscriminatorParams,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config_hash,
            model,
            iteration,
            generator,
            discriminator,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks that every tensor agrees with the recorded model configuration.
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::format("checkpoint", format!("unknown format `{}`", self.format)));
        }
        self.model
            .validate()
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let expected_g = GeneratorParams::init(&self.model, 0);
        let expected_d = DiscriminatorParams::init(&self.model, 0);
        let same_layout = |a: &super::ConvLayer, b: &super::ConvLayer| a.shapes_match(b);
        let g_ok = self.generator.extractor.len() == expected_g.extractor.len()
            && self
                .generator
                .extractor
                .iter()
                .zip(&expected_g.extractor)
                .all(|(a, b)| same_layout(a, b))
            && same_layout(&self.generator.classifier1, &expected_g.classifier1)
            && same_layout(&self.generator.classifier2, &expected_g.classifier2);
        let d_ok = self.discriminator.layers.len() == expected_d.layers.len()
            && self
                .discriminator
                .layers
                .iter()
                .zip(&expected_d.layers)
                .all(|(a, b)| same_layout(a, b));
        if !g_ok || !d_ok {
            return Err(Error::format("checkpoint", "parameter shapes disagree with model config"));
        }
        self.generator.validate()?;
        self.discriminator.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let cfg = ModelConfig::default();
        let ck = Checkpoint::new(
            config_hash(&cfg),
            cfg.clone(),
            17,
            GeneratorParams::init(&cfg, 5),
            DiscriminatorParams::init(&cfg, 5),
        );
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.generator.extractor[1].weight.data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn rejects_shape_tampering() {
        let cfg = ModelConfig::default();
        let mut ck = Checkpoint::new(
            config_hash(&cfg),
            cfg.clone(),
            0,
            GeneratorParams::init(&cfg, 5),
            DiscriminatorParams::init(&cfg, 5),
        );
        ck.model.num_classes = 4;
        assert!(Checkpoint::from_json(&ck.to_json()).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }
}
