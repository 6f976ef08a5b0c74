use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::kv;
use crate::model::ModelConfig;

/// Hyper-parameters of a training run together with the architecture it trains.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub poly_power: f64,
    pub seed: u64,
    pub augment: bool,
    /// Stop after this many iterations; the schedule still spans the full run.
    pub max_iters: Option<usize>,
    /// Checkpoint period in iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Defaults for a named model preset. The paper-scale preset runs 40 epochs, the others 10.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(TrainConfig {
            preset: name.to_string(),
            model: ModelConfig::preset(name)?,
            base_lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch: 4,
            epochs: if name == "paper" { 40 } else { 10 },
            poly_power: 0.9,
            seed: 0,
            augment: true,
            max_iters: None,
            checkpoint_every: 0,
        })
    }

    pub fn toy() -> Self {
        Self::preset("toy").expect("toy preset exists")
    }

    /// Applies `key = value` overrides. `preset`, when present, resets the defaults first.
    pub fn apply(&mut self, keys: &IndexMap<String, String>) -> Result<()> {
        if let Some(p) = keys.get("preset") {
            let seed = self.seed;
            *self = Self::preset(p)?;
            self.seed = seed;
        }
        self.model.apply_keys(keys)?;
        for (k, v) in keys {
            match k.as_str() {
                "preset" | "block_channels" | "convs_per_block" | "input_size" | "gates" | "top_head" | "decoder" | "weight_init" => {}
                "lr" => self.base_lr = kv::value(k, v)?,
                "momentum" => self.momentum = kv::value(k, v)?,
                "weight_decay" => self.weight_decay = kv::value(k, v)?,
                "batch" => self.batch = kv::value(k, v)?,
                "epochs" => self.epochs = kv::value(k, v)?,
                "poly_power" => self.poly_power = kv::value(k, v)?,
                "seed" => self.seed = kv::value(k, v)?,
                "augment" => self.augment = kv::value(k, v)?,
                "max_iters" => {
                    self.max_iters = if v == "none" { None } else { Some(kv::value(k, v)?) };
                }
                "checkpoint_every" => self.checkpoint_every = kv::value(k, v)?,
                other => return Err(Error::Invalid(format!("unknown config key '{other}'"))),
            }
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let keys = kv::parse(text)?;
        let preset = keys.get("preset").map_or("toy", String::as_str);
        let mut cfg = Self::preset(preset)?;
        cfg.apply(&keys)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let checks = [
            ("lr", self.base_lr >= 0.0 && self.base_lr.is_finite()),
            ("momentum", (0.0..1.0).contains(&self.momentum)),
            ("weight_decay", self.weight_decay >= 0.0 && self.weight_decay.is_finite()),
            ("batch", self.batch > 0),
            ("epochs", self.epochs > 0),
            ("poly_power", self.poly_power > 0.0 && self.poly_power.is_finite()),
            ("max_iters", self.max_iters != Some(0)),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((k, _)) => Err(Error::Invalid(format!("config value '{k}' out of range"))),
            None => Ok(()),
        }
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        format!(
            "preset = {}\n{}lr = {}\nmomentum = {}\nweight_decay = {}\nbatch = {}\nepochs = {}\npoly_power = {}\nseed = {}\naugment = {}\nmax_iters = {}\ncheckpoint_every = {}\n",
            self.preset,
            self.model.to_text(),
            self.base_lr,
            self.momentum,
            self.weight_decay,
            self.batch,
            self.epochs,
            self.poly_power,
            self.seed,
            self.augment,
            self.max_iters.map_or("none".to_string(), |m| m.to_string()),
            self.checkpoint_every
        )
    }
}
