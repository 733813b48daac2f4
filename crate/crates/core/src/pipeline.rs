//! End-to-end helpers: train from a dataset, score a split, audit external
//! predictions.

use std::collections::HashMap;

use crate::data::{feature_matrix, Dataset, Example, Split};
use crate::error::{Error, Result};
use crate::eval::{median_threshold, subgroup_report, SubgroupReport, Threshold};
use crate::io::{LambdaSetting, PredictionFile};
use crate::model::EnsembleModel;
use crate::trainer::{
    build_model, suggest_lambda, train_baseline, train_bias_aware, Confounder, TrainConfig, TrainHistory,
    TrainingData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    BiasAware,
}

/// The evaluation threshold for a dataset: `explicit` when given, otherwise
/// the median age of the included training rows.
pub fn dataset_threshold(data: &Dataset, explicit: Option<f64>) -> Result<Threshold> {
    match explicit {
        Some(v) if v.is_finite() => Ok(Threshold::explicit(v)),
        Some(v) => Err(Error::Config(format!("age threshold {v} is not finite"))),
        None => median_threshold(&data.train_ages()),
    }
}

/// Trains from scratch. Baseline mode ignores the config's confounder.
pub fn train(data: &TrainingData, cfg: &TrainConfig, mode: Mode) -> Result<(EnsembleModel, TrainHistory)> {
    let model = build_model(data, cfg)?;
    match mode {
        Mode::Baseline => {
            let cfg = TrainConfig {
                confounder: Confounder::None,
                ..cfg.clone()
            };
            train_baseline(model, data, &cfg)
        }
        Mode::BiasAware => train_bias_aware(model, data, cfg),
    }
}

/// λ from a λ = 0 pilot run: the per-epoch mean L_c and L_bp of the pilot
/// feed [`suggest_lambda`].
pub fn pilot_lambda(data: &TrainingData, cfg: &TrainConfig) -> Result<(f64, TrainHistory)> {
    let pilot_cfg = TrainConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    let (_, history) = train(data, &pilot_cfg, Mode::BiasAware)?;
    let lc: Vec<f64> = history.epochs.iter().map(|e| e.mean_lc).collect();
    let lbp: Vec<f64> = history.epochs.iter().filter_map(|e| e.mean_lbp).collect();
    Ok((suggest_lambda(&lc, &lbp, cfg.bias_loss)?, history))
}

/// Resolves `lambda = auto` with [`pilot_lambda`] and returns the config to train with.
pub fn resolve_lambda(data: &TrainingData, cfg: &TrainConfig, setting: LambdaSetting) -> Result<TrainConfig> {
    let lambda = match setting {
        LambdaSetting::Fixed(l) => l,
        LambdaSetting::Auto => pilot_lambda(data, cfg)?.0,
    };
    Ok(TrainConfig { lambda, ..cfg.clone() })
}

/// Disease scores for the included rows of a split, in file order.
pub fn score_split<'a>(model: &EnsembleModel, data: &'a Dataset, split: Split) -> Result<(Vec<&'a Example>, Vec<f64>)> {
    let rows = data.included(split);
    if rows.is_empty() {
        return Err(Error::Data(format!("{split} split has no usable rows")));
    }
    let scores = model.disease_scores(&feature_matrix(&rows, data.feature_dim))?;
    Ok((rows, scores))
}

/// Subgroup report for a split plus the scores as a prediction file.
pub fn evaluate(
    model: &EnsembleModel,
    data: &Dataset,
    split: Split,
    threshold: &Threshold,
) -> Result<(SubgroupReport, PredictionFile)> {
    let (rows, scores) = score_split(model, data, split)?;
    let report = subgroup_report(&scores, &rows, threshold)?;
    let preds = PredictionFile {
        rows: rows.iter().zip(&scores).map(|(e, &s)| (e.id.clone(), s)).collect(),
    };
    Ok((report, preds))
}

/// Subgroup report for externally produced scores. Every prediction id must
/// exist in `split`; predictions for rows without demographics are ignored.
pub fn audit(preds: &PredictionFile, data: &Dataset, split: Split, threshold: &Threshold) -> Result<SubgroupReport> {
    let by_id: HashMap<&str, &Example> = data.split(split).map(|e| (e.id.as_str(), e)).collect();
    let mut rows = Vec::with_capacity(preds.rows.len());
    let mut scores = Vec::with_capacity(preds.rows.len());
    for (id, score) in &preds.rows {
        let e = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("prediction id `{id}` is not in the {split} split")))?;
        if e.is_included() {
            rows.push(*e);
            scores.push(*score);
        }
    }
    subgroup_report(&scores, &rows, threshold)
}
