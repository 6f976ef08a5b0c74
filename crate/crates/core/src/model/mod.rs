//! The gated encoder–decoder network.

mod config;
mod network;
mod params;
mod stats;

pub use config::{
    ablation_variant, pyramid_head_variants, AblationStage, BackboneConfig, DecoderKind, GateMode, ModelConfig,
    TopHead, WeightInit, PYRAMID_RATES, TRANSITION_CHANNELS,
};
pub use network::{
    loss_terms, outputs, ForwardOutputs, GateNet, GatePair, GateVars, Graph, LossTerms, LossVars,
};
pub use params::{layer_table, Init, LayerSpec, ParamStore};
pub use stats::{gate_statistics, GateStats, GateTrend};
