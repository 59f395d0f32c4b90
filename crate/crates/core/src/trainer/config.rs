use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::grad::{AdamConfig, SgdConfig};
use crate::models::{Heads, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SourceOnly,
    Tan,
    Clan,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SourceOnly, Method::Tan, Method::Clan];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source-only",
            Method::Tan => "tan",
            Method::Clan => "clan",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config {
                key: "method".into(),
                msg: format!("unknown method `{s}` (expected source-only, tan or clan)"),
            })
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub lambda_weight: f64,
    pub lambda_adv: f64,
    pub lambda_local: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    /// Discriminator updates after each generator update.
    pub d_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub sgd: SgdConfig,
    pub adam: AdamConfig,
    pub model: ModelConfig,
    pub data: SynthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Clan,
            lambda_weight: 0.01,
            lambda_adv: 0.001,
            lambda_local: 40.0,
            epsilon: 0.4,
            iterations: 2000,
            batch_source: 4,
            batch_target: 4,
            d_steps: 1,
            eval_every: 200,
            seed: 0,
            // The reference rates assume a pretrained backbone; from-scratch
            // desk runs need a faster generator and a slower discriminator.
            sgd: SgdConfig {
                lr0: 1e-2,
                ..SgdConfig::default()
            },
            adam: AdamConfig {
                lr: 2e-6,
                ..AdamConfig::default()
            },
            model: ModelConfig::default(),
            data: SynthConfig::default(),
        }
    }
}

/// Loss weights after the method has been applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Effective {
    pub lambda_weight: f64,
    pub lambda_adv: f64,
    pub lambda_local: f64,
    pub epsilon: f64,
    pub heads: Heads,
    pub adversarial: bool,
}

impl TrainConfig {
    /// The plain adversarial baseline is the category-level method with a
    /// uniform unit weight; source-only drops both extra terms and the
    /// second head.
    pub fn effective(&self) -> Effective {
        match self.method {
            Method::SourceOnly => Effective {
                lambda_weight: 0.0,
                lambda_adv: 0.0,
                lambda_local: 0.0,
                epsilon: 1.0,
                heads: Heads::Single,
                adversarial: false,
            },
            Method::Tan => Effective {
                lambda_weight: self.lambda_weight,
                lambda_adv: self.lambda_adv,
                lambda_local: 0.0,
                epsilon: 1.0,
                heads: Heads::Twin,
                adversarial: true,
            },
            Method::Clan => Effective {
                lambda_weight: self.lambda_weight,
                lambda_adv: self.lambda_adv,
                lambda_local: self.lambda_local,
                epsilon: self.epsilon,
                heads: Heads::Twin,
                adversarial: true,
            },
        }
    }

    /// SGD settings with the poly schedule stretched over this run.
    pub fn sgd_schedule(&self) -> SgdConfig {
        SgdConfig {
            max_iter: self.iterations.max(1),
            ..self.sgd.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config { key: key.into(), msg };
        let non_negative = [
            ("lambda_weight", self.lambda_weight),
            ("lambda_adv", self.lambda_adv),
            ("lambda_local", self.lambda_local),
            ("sgd.lr0", self.sgd.lr0),
            ("sgd.momentum", self.sgd.momentum),
            ("sgd.weight_decay", self.sgd.weight_decay),
            ("sgd.power", self.sgd.power),
            ("adam.lr", self.adam.lr),
            ("adam.weight_decay", self.adam.weight_decay),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(key, format!("must be finite and non-negative, got {v}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(bad("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        for (key, v) in [("adam.beta1", self.adam.beta1), ("adam.beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(key, format!("must lie in [0, 1), got {v}")));
            }
        }
        if !(self.adam.eps > 0.0) {
            return Err(bad("adam.eps", "must be positive".into()));
        }
        for (key, v) in [
            ("batch_source", self.batch_source),
            ("batch_target", self.batch_target),
            ("d_steps", self.d_steps),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(bad(key, "must be at least 1".into()));
            }
        }
        self.model.validate()?;
        self.data.validate()?;
        let scene = &self.data.scene;
        if scene.num_classes != self.model.num_classes {
            return Err(bad(
                "model.num_classes",
                format!("{} disagrees with data.scene.num_classes = {}", self.model.num_classes, scene.num_classes),
            ));
        }
        if self.model.in_channels != 3 {
            return Err(bad("model.in_channels", "synthetic images have 3 channels".into()));
        }
        let m = self.model.disc_min_size();
        if !scene.height.is_multiple_of(m) || !scene.width.is_multiple_of(m) {
            return Err(bad(
                "data.scene.height",
                format!("{}x{} is not a multiple of the discriminator stride {m}", scene.height, scene.width),
            ));
        }
        if self.batch_source > self.data.n_source {
            return Err(bad("batch_source", format!("exceeds data.n_source = {}", self.data.n_source)));
        }
        if self.batch_target > self.data.n_target {
            return Err(bad("batch_target", format!("exceeds data.n_target = {}", self.data.n_target)));
        }
        Ok(())
    }

    /// Parses a JSON document (or TOML when `toml` is set); errors name the
    /// offending key path.
    pub fn parse(text: &str, toml: bool) -> Result<Self> {
        let value = parse_value(text, toml)?;
        from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, is_toml(path))
    }
}

pub fn is_toml(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "toml")
}

/// Reads a config document into a JSON tree so flags can be merged on top.
pub fn parse_value(text: &str, toml: bool) -> Result<serde_json::Value> {
    if toml {
        toml::from_str(text).map_err(|e| Error::Config {
            key: "<file>".into(),
            msg: e.message().to_string(),
        })
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config {
            key: "<file>".into(),
            msg: e.to_string(),
        })
    }
}

/// Deserializes a (possibly partial) config; absent entries at any depth
/// take their values from [`TrainConfig::default`].
pub fn from_value(value: serde_json::Value) -> Result<TrainConfig> {
    let mut merged = serde_json::to_value(TrainConfig::default()).expect("config serializes");
    merge(&mut merged, value);
    serde_path_to_error::deserialize::<_, TrainConfig>(merged).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            key: if path == "." { "<root>".into() } else { path },
            msg: e.into_inner().to_string(),
        }
    })
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
