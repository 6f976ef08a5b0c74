use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channel width of every transition layer and decoder block.
pub const TRANSITION_CHANNELS: usize = 32;

/// Dilation rates of the three atrous branches of the pyramid head.
pub const PYRAMID_RATES: [usize; 3] = [2, 4, 6];

/// Five-level VGG-style encoder. Block `i` runs at `input_size / 2^(i-1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub block_channels: [usize; 5],
    pub convs_per_block: usize,
    pub input_size: usize,
}

impl BackboneConfig {
    pub fn toy() -> Self {
        BackboneConfig {
            block_channels: [16, 32, 64, 64, 64],
            convs_per_block: 2,
            input_size: 64,
        }
    }

    /// VGG-16 widths at 384×384. Kept for completeness; not trained in tests.
    pub fn paper() -> Self {
        BackboneConfig {
            block_channels: [64, 128, 256, 512, 512],
            convs_per_block: 2,
            input_size: 384,
        }
    }

    /// Spatial size of encoder level `level` (1-based).
    pub fn level_size(&self, level: usize) -> usize {
        self.input_size >> (level - 1)
    }
}

/// How the per-level gate pairs are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    /// Gate units computed from encoder and decoder features.
    Learned,
    /// Every gate value fixed to this constant; no gate parameters.
    Fixed(f64),
    /// No gating (equivalent to constant 1.0); no gate parameters.
    Off,
}

/// Subgraph that turns E⁵ into T⁵.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopHead {
    /// Single 1×1 conv + ReLU (pyramid head disabled).
    Pointwise,
    /// Single 3×3 atrous conv at the given rate + ReLU.
    Atrous(usize),
    /// Single folded 3×3 atrous conv at the given rate + ReLU.
    Fold(usize),
    /// 1×1 branch plus atrous branches at rates 2, 4, 6, fused by 3×3 conv + ReLU.
    Aspp,
    /// As [`TopHead::Aspp`] with every atrous branch folded.
    FoldAspp,
}

impl TopHead {
    pub fn uses_fold(self) -> bool {
        matches!(self, TopHead::Fold(_) | TopHead::FoldAspp)
    }
}

/// Distribution of the random conv weights at initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// Uniform in `±sqrt(1/fan_in)`.
    FanIn,
    /// Uniform in `±sqrt(6/fan_in)`: keeps the activation variance through conv+ReLU stacks.
    He,
}

impl WeightInit {
    pub fn bound(self, fan_in: usize) -> f64 {
        let gain = match self {
            WeightInit::FanIn => 1.0,
            WeightInit::He => 6.0,
        };
        (gain / fan_in as f64).sqrt()
    }
}

/// Decoder layout: progressive (FPN only), parallel (concatenation only), or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Progressive,
    Parallel,
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub gates: GateMode,
    pub top: TopHead,
    pub decoder: DecoderKind,
    pub init: WeightInit,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig) -> Self {
        ModelConfig {
            backbone,
            gates: GateMode::Learned,
            top: TopHead::FoldAspp,
            decoder: DecoderKind::Dual,
            init: WeightInit::He,
        }
    }

    pub fn toy() -> Self {
        Self::new(BackboneConfig::toy())
    }

    pub fn paper() -> Self {
        Self::new(BackboneConfig::paper())
    }

    /// Smallest complete model: width 2 everywhere, 32×32 input.
    pub fn tiny() -> Self {
        Self::new(BackboneConfig {
            block_channels: [2; 5],
            convs_per_block: 2,
            input_size: 32,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Invalid(format!(
                "unknown model preset '{other}' (expected toy, paper or tiny)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.block_channels.contains(&0) || b.convs_per_block == 0 {
            return Err(Error::Invalid(
                "block widths and convs_per_block must be positive".into(),
            ));
        }
        if b.input_size == 0 || !b.input_size.is_multiple_of(16) {
            return Err(Error::Invalid(format!(
                "input_size {} must be a positive multiple of 16 so E5 sits at 1/16 resolution",
                b.input_size
            )));
        }
        if self.top.uses_fold() && !b.input_size.is_multiple_of(32) {
            return Err(Error::Invalid(format!(
                "input_size {} leaves E5 at odd size {}; folded heads need a multiple of 32",
                b.input_size,
                b.level_size(5)
            )));
        }
        if let TopHead::Atrous(r) | TopHead::Fold(r) = self.top {
            if r == 0 {
                return Err(Error::Invalid("dilation rate must be positive".into()));
            }
        }
        if let GateMode::Fixed(v) = self.gates {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!(
                    "fixed gate value {v} must lie in [0, 1]"
                )));
            }
        }
        if self.decoder == DecoderKind::Parallel && self.gates == GateMode::Learned {
            return Err(Error::Invalid(
                "learned gates read the previous decoder block, which the parallel-only decoder \
                 does not have; use gates=off or a fixed gate value"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Canonical `key = value` lines describing the architecture.
    pub fn to_text(&self) -> String {
        let b = &self.backbone;
        let widths: Vec<String> = b.block_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "block_channels = {}\nconvs_per_block = {}\ninput_size = {}\ngates = {}\ntop_head = {}\ndecoder = {}\nweight_init = {}\n",
            widths.join(","),
            b.convs_per_block,
            b.input_size,
            self.gates,
            self.top,
            self.decoder,
            self.init
        )
    }
}

impl ModelConfig {
    /// Applies architecture keys from a parsed `key = value` table on top of `self`.
    /// Keys that do not describe the architecture are ignored.
    pub fn apply_keys(&mut self, keys: &indexmap::IndexMap<String, String>) -> Result<()> {
        for (k, v) in keys {
            match k.as_str() {
                "block_channels" => {
                    let widths: Vec<usize> = v
                        .split(',')
                        .map(|w| crate::kv::value(k, w.trim()))
                        .collect::<Result<_>>()?;
                    self.backbone.block_channels = widths.try_into().map_err(|w: Vec<usize>| {
                        Error::Invalid(format!("block_channels needs 5 widths, got {}", w.len()))
                    })?;
                }
                "convs_per_block" => self.backbone.convs_per_block = crate::kv::value(k, v)?,
                "input_size" => self.backbone.input_size = crate::kv::value(k, v)?,
                "gates" => self.gates = v.parse()?,
                "top_head" => self.top = v.parse()?,
                "decoder" => self.decoder = v.parse()?,
                "weight_init" => self.init = v.parse()?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Inverse of [`ModelConfig::to_text`]; every architecture key must be present
    /// (`weight_init` only matters for fresh models and may be omitted).
    pub fn from_text(text: &str) -> Result<Self> {
        let keys = crate::kv::parse(text)?;
        for k in ["block_channels", "convs_per_block", "input_size", "gates", "top_head", "decoder"] {
            if !keys.contains_key(k) {
                return Err(Error::Invalid(format!("model description lacks '{k}'")));
            }
        }
        let mut cfg = Self::toy();
        cfg.apply_keys(&keys)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateMode::Learned => write!(f, "learned"),
            GateMode::Off => write!(f, "off"),
            GateMode::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" | "on" => Ok(GateMode::Learned),
            "off" => Ok(GateMode::Off),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|v| v.parse().ok())
                .map(GateMode::Fixed)
                .ok_or_else(|| Error::Invalid(format!("bad gate mode '{s}'"))),
        }
    }
}

impl fmt::Display for TopHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopHead::Pointwise => write!(f, "pointwise"),
            TopHead::Atrous(r) => write!(f, "atrous:{r}"),
            TopHead::Fold(r) => write!(f, "fold:{r}"),
            TopHead::Aspp => write!(f, "aspp"),
            TopHead::FoldAspp => write!(f, "fold-aspp"),
        }
    }
}

impl FromStr for TopHead {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let rate = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad dilation rate in '{s}'")))
        };
        match s {
            "pointwise" => Ok(TopHead::Pointwise),
            "aspp" => Ok(TopHead::Aspp),
            "fold-aspp" => Ok(TopHead::FoldAspp),
            _ => {
                if let Some(r) = s.strip_prefix("atrous:") {
                    Ok(TopHead::Atrous(rate(r)?))
                } else if let Some(r) = s.strip_prefix("fold:") {
                    Ok(TopHead::Fold(rate(r)?))
                } else {
                    Err(Error::Invalid(format!("bad top head '{s}'")))
                }
            }
        }
    }
}

impl fmt::Display for WeightInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightInit::FanIn => "fan_in",
            WeightInit::He => "he",
        })
    }
}

impl FromStr for WeightInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fan_in" => Ok(WeightInit::FanIn),
            "he" => Ok(WeightInit::He),
            _ => Err(Error::Invalid(format!("bad weight init '{s}' (expected fan_in or he)"))),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Progressive => "progressive",
            DecoderKind::Parallel => "parallel",
            DecoderKind::Dual => "dual",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "progressive" => Ok(DecoderKind::Progressive),
            "parallel" => Ok(DecoderKind::Parallel),
            "dual" => Ok(DecoderKind::Dual),
            _ => Err(Error::Invalid(format!("bad decoder kind '{s}'"))),
        }
    }
}

/// Rows of the component ablation ladder, each adding one mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationStage {
    /// Plain FPN: no gates, 1×1 top head, progressive decoder.
    Baseline,
    /// Baseline plus gate units.
    Gates,
    /// Plus the folded pyramid head.
    FoldAspp,
    /// Plus the parallel branch: the full model.
    Parallel,
}

impl AblationStage {
    pub const LADDER: [AblationStage; 4] = [
        AblationStage::Baseline,
        AblationStage::Gates,
        AblationStage::FoldAspp,
        AblationStage::Parallel,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationStage::Baseline => "baseline_fpn",
            AblationStage::Gates => "+gate_units",
            AblationStage::FoldAspp => "+fold_aspp",
            AblationStage::Parallel => "+parallel_branch",
        }
    }
}

/// Model configuration for an ablation row on the given backbone.
pub fn ablation_variant(backbone: BackboneConfig, stage: AblationStage) -> Result<ModelConfig> {
    let (gates, top, decoder) = match stage {
        AblationStage::Baseline => (GateMode::Off, TopHead::Pointwise, DecoderKind::Progressive),
        AblationStage::Gates => (GateMode::Learned, TopHead::Pointwise, DecoderKind::Progressive),
        AblationStage::FoldAspp => (GateMode::Learned, TopHead::FoldAspp, DecoderKind::Progressive),
        AblationStage::Parallel => (GateMode::Learned, TopHead::FoldAspp, DecoderKind::Dual),
    };
    let cfg = ModelConfig {
        backbone,
        gates,
        top,
        decoder,
        init: WeightInit::He,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Top-head variants compared against each other on a gated FPN.
pub fn pyramid_head_variants() -> Vec<TopHead> {
    let mut v: Vec<TopHead> = PYRAMID_RATES.iter().map(|&r| TopHead::Atrous(r)).collect();
    v.extend(PYRAMID_RATES.iter().map(|&r| TopHead::Fold(r)));
    v.push(TopHead::Aspp);
    v.push(TopHead::FoldAspp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for stage in AblationStage::LADDER {
            let cfg = ablation_variant(BackboneConfig::toy(), stage).unwrap();
            assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
        let mut fixed = ModelConfig::tiny();
        fixed.gates = GateMode::Fixed(0.25);
        fixed.top = TopHead::Fold(4);
        assert_eq!(ModelConfig::from_text(&fixed.to_text()).unwrap(), fixed);
        assert!(ModelConfig::from_text("input_size = 64\n").is_err());
    }

    #[test]
    fn text_round_trip_of_enums() {
        for g in [GateMode::Learned, GateMode::Off, GateMode::Fixed(0.5)] {
            assert_eq!(g.to_string().parse::<GateMode>().unwrap(), g);
        }
        for t in pyramid_head_variants().into_iter().chain([TopHead::Pointwise]) {
            assert_eq!(t.to_string().parse::<TopHead>().unwrap(), t);
        }
        for d in [DecoderKind::Progressive, DecoderKind::Parallel, DecoderKind::Dual] {
            assert_eq!(d.to_string().parse::<DecoderKind>().unwrap(), d);
        }
    }

    #[test]
    fn fold_needs_even_e5() {
        let mut cfg = ModelConfig::tiny();
        cfg.backbone.input_size = 16;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("odd"), "{err}");
        cfg.top = TopHead::Pointwise;
        cfg.validate().unwrap();
    }

    #[test]
    fn parallel_decoder_rejects_learned_gates() {
        let mut cfg = ModelConfig::toy();
        cfg.decoder = DecoderKind::Parallel;
        assert!(cfg.validate().is_err());
        cfg.gates = GateMode::Off;
        cfg.validate().unwrap();
    }

    #[test]
    fn input_size_multiple_of_16() {
        let mut cfg = ModelConfig::toy();
        cfg.backbone.input_size = 40;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ladder_configs() {
        let b = BackboneConfig::toy();
        let base = ablation_variant(b.clone(), AblationStage::Baseline).unwrap();
        assert_eq!(base.gates, GateMode::Off);
        assert_eq!(base.top, TopHead::Pointwise);
        assert_eq!(base.decoder, DecoderKind::Progressive);
        let full = ablation_variant(b, AblationStage::Parallel).unwrap();
        assert_eq!(full, ModelConfig::toy());
    }
}
