//! Baseline and bias-aware training.
//!
//! Both trainers walk the same shuffled minibatch stream. For every batch the
//! bias-aware trainer runs three updates in order:
//!
//! 1. **(a)** encoder and disease head on the cross-entropy of the full batch;
//! 2. **(b)** bias head alone on `L_bp`, using only the control rows;
//! 3. **(c)** encoder alone on `L_br = −λ·L_bp`, same control rows, with the
//!    bias head held fixed.
//!
//! Every parameter set owns its momentum buffer, so steps (a) and (c) share
//! the encoder's optimizer state. When `λ = 0` step (c) has nothing to
//! propagate and is not taken, which makes a bias-aware run with `λ = 0`
//! reproduce the baseline's encoder and disease head bit for bit.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{feature_matrix, Dataset, Sex, Split};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::losses::{adversarial_grad, cross_entropy, BiasLossKind, LossResult, VARIANCE_FLOOR};
use crate::matrix::Matrix;
use crate::model::{EnsembleArch, EnsembleModel, InitSeeds};
use crate::nn::{backward, forward, Activation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Confounder {
    None,
    Age,
    Sex,
}

impl Confounder {
    pub fn name(self) -> &'static str {
        match self {
            Confounder::None => "none",
            Confounder::Age => "age",
            Confounder::Sex => "sex",
        }
    }
}

impl fmt::Display for Confounder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Confounder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Confounder::None),
            "age" => Ok(Confounder::Age),
            "sex" => Ok(Confounder::Sex),
            other => Err(Error::Config(format!("unknown confounder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSeeds {
    pub init_encoder: u64,
    pub init_disease: u64,
    pub init_bias: u64,
    pub shuffle: u64,
}

impl Default for TrainSeeds {
    fn default() -> Self {
        Self {
            init_encoder: 1,
            init_disease: 2,
            init_bias: 3,
            shuffle: 4,
        }
    }
}

impl TrainSeeds {
    pub fn init(&self) -> InitSeeds {
        InitSeeds {
            encoder: self.init_encoder,
            disease: self.init_disease,
            bias: self.init_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub confounder: Confounder,
    pub bias_loss: BiasLossKind,
    pub lambda: f64,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    /// Last epoch (1-based) trained at `lr_initial`.
    pub lr_switch_epoch: usize,
    pub momentum: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub encoder_dims: Vec<usize>,
    pub encoder_activation: Activation,
    pub seeds: TrainSeeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            confounder: Confounder::None,
            bias_loss: BiasLossKind::NegSqPearson,
            lambda: 0.0,
            batch_size: 40,
            lr_initial: 1e-3,
            lr_after: 1e-4,
            lr_switch_epoch: 10,
            momentum: 0.9,
            patience: 8,
            max_epochs: 50,
            encoder_dims: vec![32, 16],
            encoder_activation: Activation::Tanh,
            seeds: TrainSeeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.confounder != Confounder::None && self.batch_size < 2 {
            return Err(Error::Config("bias-aware training needs batch_size >= 2".into()));
        }
        for (name, lr) in [("lr_initial", self.lr_initial), ("lr_after", self.lr_after)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.confounder == Confounder::Age && self.bias_loss == BiasLossKind::Bce {
            return Err(Error::Config("BCE bias loss needs a binary confounder (sex)".into()));
        }
        Ok(())
    }

    pub fn arch(&self, input_dim: usize) -> EnsembleArch {
        EnsembleArch::new(input_dim, &self.encoder_dims, self.encoder_activation)
    }
}

/// Learning rate for a 1-based epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= cfg.lr_switch_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_after
    }
}

/// True once `patience` epochs have passed without a strict improvement on
/// the best validation AUC. Ties with the best do not count as improvements.
pub fn early_stop(val_aucs: &[f64], patience: usize) -> bool {
    let Some(best) = best_epoch_index(val_aucs) else {
        return false;
    };
    val_aucs.len() - 1 - best >= patience
}

/// Index of the first strict maximum.
fn best_epoch_index(val_aucs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in val_aucs.iter().enumerate() {
        if best.is_none_or(|b| v > val_aucs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Rows with label 0, order preserved. Also returns their positions in `batch`.
pub fn filter_controls(batch: &Matrix, labels: &[u8]) -> Result<(Matrix, Vec<usize>)> {
    if labels.len() != batch.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), batch.rows())));
    }
    let keep: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == 0).map(|(i, _)| i).collect();
    Ok((batch.select_rows(&keep), keep))
}

/// `λ` from typical loss magnitudes: `mean|L_c| / mean|L_bp|`, rounded to one
/// significant digit and clamped to `[0.1, 10]`.
pub fn suggest_lambda(lc_samples: &[f64], lbp_samples: &[f64], bias_loss: BiasLossKind) -> Result<f64> {
    if lc_samples.is_empty() || lbp_samples.is_empty() {
        return Err(Error::Heuristic("need loss samples for both L_c and L_bp".into()));
    }
    if lc_samples.iter().chain(lbp_samples).any(|v| !v.is_finite()) {
        return Err(Error::Heuristic("loss samples must be finite".into()));
    }
    let out_of_range = match bias_loss {
        BiasLossKind::NegSqPearson => lbp_samples.iter().any(|&v| !(-1.0..=0.0).contains(&v)),
        BiasLossKind::Bce => lbp_samples.iter().any(|&v| v < 0.0),
    };
    if out_of_range {
        return Err(Error::Heuristic(format!("L_bp samples outside the range of {bias_loss}")));
    }
    let mean_abs = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    let (lc, lbp) = (mean_abs(lc_samples), mean_abs(lbp_samples));
    if lbp < VARIANCE_FLOOR {
        return Err(Error::Heuristic("L_bp is ~0; set lambda by hand".into()));
    }
    let ratio = lc / lbp;
    let rounded = if ratio > 0.0 {
        let scale = 10f64.powf(ratio.log10().floor());
        (ratio / scale).round() * scale
    } else {
        0.0
    };
    Ok(rounded.clamp(0.1, 10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_lc: f64,
    /// Mean step-(b) bias loss, measured before the bias head moves.
    pub mean_lbp: Option<f64>,
    /// Mean bias loss seen by step (c), i.e. `L_br / λ` negated.
    pub mean_lbp_adversarial: Option<f64>,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// `None` only when no epoch ran.
    pub stop_reason: Option<StopReason>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    /// Diseased examples that reached steps (b) or (c). Always zero.
    pub diseased_in_bias_steps: usize,
    /// Batches whose steps (b)/(c) were skipped (no usable controls).
    pub skipped_bias_batches: usize,
}

impl TrainHistory {
    fn empty() -> Self {
        Self {
            epochs: Vec::new(),
            stop_reason: None,
            best_epoch: None,
            diseased_in_bias_steps: 0,
            skipped_bias_batches: 0,
        }
    }

    pub fn val_aucs(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_auc).collect()
    }

    /// One tab-separated line per epoch: epoch, lr, mean L_c, mean L_bp (or `-`), validation AUC.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let lbp = e.mean_lbp.map_or_else(|| "-".to_string(), |v| v.to_string());
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.epoch, e.lr, e.mean_lc, lbp, e.val_auc));
        }
        out
    }
}

/// Training and validation rows as matrices, with bias targets precomputed.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train_x: Matrix,
    pub train_labels: Vec<u8>,
    /// Training ages standardised with the training mean and standard deviation.
    pub train_age_z: Vec<f64>,
    pub train_sex: Vec<Sex>,
    pub val_x: Matrix,
    pub val_labels: Vec<u8>,
}

impl TrainingData {
    /// Uses the rows of the train and validation splits that have both
    /// demographics.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let train = data.included(Split::Train);
        let val = data.included(Split::Validation);
        if train.is_empty() {
            return Err(Error::Data("training split has no usable rows".into()));
        }
        if val.is_empty() {
            return Err(Error::Data("validation split has no usable rows".into()));
        }
        let ages: Vec<f64> = train.iter().map(|e| e.age.expect("included")).collect();
        let n = ages.len() as f64;
        let mean = ages.iter().sum::<f64>() / n;
        let sd = (ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > VARIANCE_FLOOR { sd } else { 1.0 };
        let out = Self {
            train_x: feature_matrix(&train, data.feature_dim),
            train_labels: train.iter().map(|e| e.label).collect(),
            train_age_z: ages.iter().map(|a| (a - mean) / sd).collect(),
            train_sex: train.iter().map(|e| e.sex.expect("included")).collect(),
            val_x: feature_matrix(&val, data.feature_dim),
            val_labels: val.iter().map(|e| e.label).collect(),
        };
        if !out.val_labels.contains(&0) || !out.val_labels.contains(&1) {
            return Err(Error::Data("validation split needs both classes for AUC".into()));
        }
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.cols()
    }

    fn bias_target(&self, row: usize, cfg: &TrainConfig) -> f64 {
        match (cfg.confounder, cfg.bias_loss) {
            (Confounder::Age, _) => self.train_age_z[row],
            (Confounder::Sex, BiasLossKind::NegSqPearson) => match self.train_sex[row] {
                Sex::Male => 1.0,
                Sex::Female => -1.0,
            },
            (Confounder::Sex, BiasLossKind::Bce) => match self.train_sex[row] {
                Sex::Male => 1.0,
                Sex::Female => 0.0,
            },
            (Confounder::None, _) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Encoder + disease head on L_c.
    A,
    /// Bias head on L_bp.
    B,
    /// Encoder on L_br.
    C,
}

/// Snapshot of one parameter update, handed to a [`TrainObserver`].
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub step: Step,
    pub before: &'a EnsembleModel,
    pub after: &'a EnsembleModel,
    /// Training-row indices fed to this step.
    pub rows: &'a [usize],
    /// Labels of those rows.
    pub labels: &'a [u8],
}

/// Receives every update of a training run. Snapshots are only taken when an
/// observer is attached.
pub trait TrainObserver {
    fn on_step(&mut self, event: &StepEvent<'_>);
}

impl<F: FnMut(&StepEvent<'_>)> TrainObserver for F {
    fn on_step(&mut self, event: &StepEvent<'_>) {
        self(event)
    }
}

/// Builds a fresh ensemble for `data` from the config's architecture and seeds.
pub fn build_model(data: &TrainingData, cfg: &TrainConfig) -> Result<EnsembleModel> {
    EnsembleModel::build(&cfg.arch(data.input_dim()), cfg.seeds.init())
}

/// Encoder + disease head only. Requires `cfg.confounder == None`.
pub fn train_baseline(model: EnsembleModel, data: &TrainingData, cfg: &TrainConfig) -> Result<(EnsembleModel, TrainHistory)> {
    if cfg.confounder != Confounder::None {
        return Err(Error::Config("baseline training takes confounder = none".into()));
    }
    run(model, data, cfg, false, None)
}

/// Three-step adversarial training. Requires a confounder.
pub fn train_bias_aware(model: EnsembleModel, data: &TrainingData, cfg: &TrainConfig) -> Result<(EnsembleModel, TrainHistory)> {
    train_bias_aware_observed(model, data, cfg, None)
}

pub fn train_bias_aware_observed(
    model: EnsembleModel,
    data: &TrainingData,
    cfg: &TrainConfig,
    observer: Option<&mut dyn TrainObserver>,
) -> Result<(EnsembleModel, TrainHistory)> {
    if cfg.confounder == Confounder::None {
        return Err(Error::Config("bias-aware training needs confounder = age or sex".into()));
    }
    run(model, data, cfg, true, observer)
}

/// Validation AUC of the disease head.
pub fn validation_auc(model: &EnsembleModel, data: &TrainingData) -> Result<f64> {
    auc(&model.disease_scores(&data.val_x)?, &data.val_labels)
}

fn notify(
    observer: &mut Option<&mut dyn TrainObserver>,
    before: Option<EnsembleModel>,
    after: &EnsembleModel,
    (epoch, batch, step): (usize, usize, Step),
    rows: &[usize],
    labels: &[u8],
) {
    if let (Some(obs), Some(before)) = (observer.as_deref_mut(), before) {
        obs.on_step(&StepEvent {
            epoch,
            batch,
            step,
            before: &before,
            after,
            rows,
            labels,
        });
    }
}

fn run(
    mut model: EnsembleModel,
    data: &TrainingData,
    cfg: &TrainConfig,
    bias_aware: bool,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<(EnsembleModel, TrainHistory)> {
    cfg.validate()?;
    if model.input_dim() != data.input_dim() {
        return Err(Error::Shape(format!(
            "model takes {} features, data has {}",
            model.input_dim(),
            data.input_dim()
        )));
    }
    let n = data.train_x.rows();
    let mut history = TrainHistory::empty();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, EnsembleModel)> = None;

    for epoch in 1..=cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut shuffle_rng);
        let (mut lc_sum, mut lc_count) = (0.0, 0usize);
        let (mut lbp_sum, mut lbp_count) = (0.0, 0usize);
        let (mut adv_sum, mut adv_count) = (0.0, 0usize);

        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let tag = |step| (epoch, batch_idx, step);
            let x = data.train_x.select_rows(rows);
            let labels: Vec<u8> = rows.iter().map(|&r| data.train_labels[r]).collect();

            // (a) θ_e, θ_c ← L_c
            let before = observer.is_some().then(|| model.clone());
            let enc_acts = forward(&model.encoder, &x)?;
            let feats = enc_acts.last().expect("forward returns the output");
            let head_acts = forward(&model.disease_head, feats)?;
            let lc = cross_entropy(head_acts.last().expect("forward returns the output"), &labels)?;
            let (d_feats, g_disease) = backward(&model.disease_head, &head_acts, &lc.grad)?;
            let (_, g_encoder) = backward(&model.encoder, &enc_acts, &d_feats)?;
            model.disease_head.sgd_momentum_step(&g_disease, lr, cfg.momentum)?;
            model.encoder.sgd_momentum_step(&g_encoder, lr, cfg.momentum)?;
            lc_sum += lc.value;
            lc_count += 1;
            notify(&mut observer, before, &model, tag(Step::A), rows, &labels);

            if !bias_aware {
                continue;
            }

            // Controls only for (b) and (c).
            let (ctrl_x, keep) = filter_controls(&x, &labels)?;
            let ctrl_rows: Vec<usize> = keep.iter().map(|&i| rows[i]).collect();
            let ctrl_labels: Vec<u8> = ctrl_rows.iter().map(|&r| data.train_labels[r]).collect();
            let targets: Vec<f64> = ctrl_rows.iter().map(|&r| data.bias_target(r, cfg)).collect();
            if ctrl_rows.is_empty() {
                history.skipped_bias_batches += 1;
                continue;
            }

            // (b) θ_bp ← L_bp, encoder frozen
            let before = observer.is_some().then(|| model.clone());
            let ctrl_acts = forward(&model.encoder, &ctrl_x)?;
            let ctrl_feats = ctrl_acts.last().expect("forward returns the output");
            let bias_acts = forward(&model.bias_head, ctrl_feats)?;
            let lbp = match bias_loss(&bias_acts, &targets, cfg.bias_loss)? {
                Some(l) => l,
                None => {
                    history.skipped_bias_batches += 1;
                    continue;
                }
            };
            let (_, g_bias) = backward(&model.bias_head, &bias_acts, &lbp.grad)?;
            model.bias_head.sgd_momentum_step(&g_bias, lr, cfg.momentum)?;
            history.diseased_in_bias_steps += ctrl_labels.iter().filter(|&&l| l == 1).count();
            lbp_sum += lbp.value;
            lbp_count += 1;
            notify(&mut observer, before, &model, tag(Step::B), &ctrl_rows, &ctrl_labels);

            // (c) θ_e ← L_br = −λ·L_bp, bias head frozen
            if cfg.lambda == 0.0 {
                continue;
            }
            let before = observer.is_some().then(|| model.clone());
            let bias_acts = forward(&model.bias_head, ctrl_feats)?;
            let Some(lbp_adv) = bias_loss(&bias_acts, &targets, cfg.bias_loss)? else {
                continue;
            };
            let g_out = adversarial_grad(&lbp_adv, cfg.lambda)?;
            let (d_feats, _) = backward(&model.bias_head, &bias_acts, &g_out)?;
            let (_, g_encoder) = backward(&model.encoder, &ctrl_acts, &d_feats)?;
            model.encoder.sgd_momentum_step(&g_encoder, lr, cfg.momentum)?;
            history.diseased_in_bias_steps += ctrl_labels.iter().filter(|&&l| l == 1).count();
            adv_sum += lbp_adv.value;
            adv_count += 1;
            notify(&mut observer, before, &model, tag(Step::C), &ctrl_rows, &ctrl_labels);
        }

        let val_auc = validation_auc(&model, data)?;
        let mean = |s: f64, c: usize| (c > 0).then(|| s / c as f64);
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            mean_lc: lc_sum / lc_count.max(1) as f64,
            mean_lbp: mean(lbp_sum, lbp_count),
            mean_lbp_adversarial: mean(adv_sum, adv_count),
            val_auc,
        });
        if best.as_ref().is_none_or(|(b, _)| val_auc > *b) {
            best = Some((val_auc, model.clone()));
            history.best_epoch = Some(epoch);
        }
        if early_stop(&history.val_aucs(), cfg.patience) {
            history.stop_reason = Some(StopReason::EarlyStop);
            break;
        }
    }
    if !history.epochs.is_empty() && history.stop_reason.is_none() {
        history.stop_reason = Some(StopReason::MaxEpochs);
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok((model, history))
}

/// Bias loss on a head output, or `None` for a degenerate batch.
fn bias_loss(bias_acts: &[Matrix], targets: &[f64], kind: BiasLossKind) -> Result<Option<LossResult>> {
    let out = bias_acts.last().expect("forward returns the output");
    match kind.evaluate(out.as_slice(), targets) {
        Ok(l) => Ok(Some(l)),
        Err(Error::DegenerateBatch(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
