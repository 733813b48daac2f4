//! Bias-aware adversarial training and classification-parity evaluation.
//!
//! An [`EnsembleModel`] has a shared encoder feeding a disease head and a
//! bias-predictor head. [`train_bias_aware`] alternates three updates per
//! minibatch: the encoder and disease head learn the diagnosis, the bias
//! head learns to predict a demographic variable from the encoding of
//! healthy subjects, and the encoder is then pushed to make that prediction
//! fail. [`subgroup_report`] measures the result as AUC per age and sex
//! group.
//!
//! The guide in `book/` walks through each piece with runnable snippets.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod kv;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use data::{Dataset, DemographicsTable, Example, Sex, Split};
pub use error::{Error, Result};
pub use eval::{auc, median_threshold, subgroup_report, Group, SubgroupReport, Threshold};
pub use losses::{adversarial_grad, bce, cross_entropy, neg_sq_pearson, BiasLossKind, LossResult};
pub use matrix::Matrix;
pub use model::{EnsembleArch, EnsembleModel, InitSeeds, Prediction};
pub use nn::{backward, finite_difference_grad, forward, Activation, Gradients, LayerSpec, ParamSet};
pub use synth::{generate, GenSpec};
pub use trainer::{
    early_stop, filter_controls, lr_schedule, suggest_lambda, train_baseline, train_bias_aware, Confounder,
    TrainConfig, TrainHistory, TrainingData,
};

// Book chapters are compiled as doc-tests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/networks.md")]
    pub struct Networks;
    #[doc = include_str!("../../../book/src/losses.md")]
    pub struct Losses;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    pub struct SyntheticData;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
