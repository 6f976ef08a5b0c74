use std::fmt::Write as _;

use super::{evaluate_model, train, RunOptions, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ablation_variant, AblationStage, ModelConfig, ParamStore};

/// Seed-averaged held-out scores of one ablation variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub stage: AblationStage,
    pub model: ModelConfig,
    pub params: usize,
    pub seeds: Vec<u64>,
    /// Per-seed max-Fβ in seed order.
    pub f_beta_max: Vec<f64>,
    pub mae: Vec<f64>,
    pub s_measure: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl AblationRow {
    pub fn mean_f(&self) -> f64 {
        mean(&self.f_beta_max)
    }

    pub fn mean_mae(&self) -> f64 {
        mean(&self.mae)
    }

    pub fn mean_s(&self) -> f64 {
        mean(&self.s_measure)
    }
}

pub const ABLATION_CSV_HEADER: &str = "variant,gates,top_head,decoder,params,seeds,f_beta_max,mae,s_measure";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.stage.label(),
            r.model.gates,
            r.model.top,
            r.model.decoder,
            r.params,
            seeds.join(" "),
            r.mean_f(),
            r.mean_mae(),
            r.mean_s()
        );
    }
    s
}

/// Trains every rung of the ablation ladder once per seed, on the backbone and
/// hyper-parameters of `base`, and scores each on `test`.
pub fn run_ablation(
    base: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    seeds: &[u64],
    mut progress: impl FnMut(AblationStage, u64, f64),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(AblationStage::LADDER.len());
    for stage in AblationStage::LADDER {
        let model = ablation_variant(base.model.backbone.clone(), stage)?;
        let mut row = AblationRow {
            stage,
            params: ParamStore::<f32>::init(&model, 0).numel(),
            model: model.clone(),
            seeds: seeds.to_vec(),
            f_beta_max: Vec::new(),
            mae: Vec::new(),
            s_measure: Vec::new(),
        };
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model = model.clone();
            cfg.seed = seed;
            let out = train(&cfg, train_set, None, RunOptions::default())?;
            let m = evaluate_model(&out.net, &test_set.resized_to(cfg.model.backbone.input_size)?, cfg.batch)?;
            progress(stage, seed, m.f_beta_max);
            row.f_beta_max.push(m.f_beta_max);
            row.mae.push(m.mae);
            row.s_measure.push(m.s_measure);
        }
        rows.push(row);
    }
    Ok(rows)
}
