//! Baseline vs bias-aware training on a synthetic dataset where the disease
//! is easier to spot in young subjects, averaged over seeds.
//!
//! cargo run --release -p biasaware --example parity_experiment -- [seeds]

use biasaware::eval::{render_experiment_table, ExperimentRow};
use biasaware::pipeline::{dataset_threshold, evaluate, pilot_lambda, train, Mode};
use biasaware::trainer::TrainSeeds;
use biasaware::{generate, Confounder, GenSpec, Group, Split, SubgroupReport, TrainConfig, TrainingData};

fn spec() -> GenSpec {
    GenSpec {
        n_train: 3000,
        n_validation: 1000,
        n_test: 2000,
        d: 16,
        confound_strength_age: 2.5,
        entangled_signal_age: 3.0,
        difficulty_skew_sex: 0.5,
        ..GenSpec::default()
    }
}

#[derive(Default)]
struct Tally {
    all: f64,
    age_gap: f64,
    sex_gap: f64,
    runs: usize,
}

impl Tally {
    fn add(&mut self, r: &SubgroupReport) {
        self.all += r.auc(Group::All).unwrap_or(f64::NAN);
        self.age_gap += r.age_gap.unwrap_or(f64::NAN);
        self.sex_gap += r.sex_gap.unwrap_or(f64::NAN);
        self.runs += 1;
    }

    fn line(&self, name: &str) -> String {
        let n = self.runs as f64;
        format!(
            "{name:<12} all {:.3}  age gap {:.3}  sex gap {:.3}",
            self.all / n,
            self.age_gap / n,
            self.sex_gap / n
        )
    }
}

fn main() -> biasaware::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(5, |s| s.parse().expect("seed count"));
    let mut rows = Vec::new();
    let (mut base, mut zero, mut adv) = (Tally::default(), Tally::default(), Tally::default());
    for seed in 0..seeds {
        let data = generate(&spec(), 100 + seed)?;
        let td = TrainingData::from_dataset(&data)?;
        let threshold = dataset_threshold(&data, None)?;
        let base_cfg = TrainConfig {
            max_epochs: 100,
            encoder_dims: vec![16, 1],
            seeds: TrainSeeds {
                init_encoder: 10 * seed + 1,
                init_disease: 10 * seed + 2,
                init_bias: 10 * seed + 3,
                shuffle: 10 * seed + 4,
            },
            ..TrainConfig::default()
        };
        let age_cfg = TrainConfig {
            confounder: Confounder::Age,
            ..base_cfg.clone()
        };
        let (lambda, _) = pilot_lambda(&td, &age_cfg)?;

        let (model, _) = train(&td, &base_cfg, Mode::Baseline)?;
        let report = evaluate(&model, &data, Split::Test, &threshold)?.0;
        base.add(&report);
        rows.push(ExperimentRow {
            name: format!("baseline s{seed}"),
            confounder: "N/A".into(),
            lambda: None,
            bias_loss: None,
            report,
        });
        for (lam, tally) in [(0.0, &mut zero), (lambda, &mut adv)] {
            let cfg = TrainConfig { lambda: lam, ..age_cfg.clone() };
            let (model, _) = train(&td, &cfg, Mode::BiasAware)?;
            let report = evaluate(&model, &data, Split::Test, &threshold)?.0;
            tally.add(&report);
            rows.push(ExperimentRow {
                name: format!("age s{seed}"),
                confounder: "age".into(),
                lambda: Some(lam),
                bias_loss: Some("neg_sq_pearson".into()),
                report,
            });
        }
    }
    println!("{}", render_experiment_table(&rows));
    println!("{}", base.line("baseline"));
    println!("{}", zero.line("age, λ=0"));
    println!("{}", adv.line("age, auto λ"));
    Ok(())
}
