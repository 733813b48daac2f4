use std::path::Path;

use biasaware::io::{
    dataset_from_csv, dataset_to_csv, load_dataset, load_model, model_from_text, model_to_text, save_dataset,
    save_model, LambdaSetting, PredictionFile, RunConfig,
};
use biasaware::model::{EnsembleArch, InitSeeds};
use biasaware::nn::Activation;
use biasaware::{Confounder, Dataset, EnsembleModel, Error, Example, Sex, Split};
use proptest::prelude::*;

fn p() -> &'static Path {
    Path::new("mem.csv")
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn example() -> impl Strategy<Value = (Vec<f64>, u8, Option<f64>, Option<Sex>, Split)> {
    (
        prop::collection::vec(finite(), 3),
        0u8..2,
        prop::option::of(prop_oneof![(0u32..20).prop_map(|k| f64::from(k) * 5.0), 0.0f64..120.0]),
        prop::option::of(prop_oneof![Just(Sex::Male), Just(Sex::Female)]),
        prop_oneof![Just(Split::Train), Just(Split::Validation), Just(Split::Test)],
    )
}

fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(example(), 0..30).prop_map(|rows| {
        let examples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (features, label, age, sex, split))| Example {
                id: format!("row-{i}"),
                features,
                label,
                age,
                sex,
                split,
            })
            .collect();
        Dataset::new(3, examples).unwrap()
    })
}

fn bits(m: &EnsembleModel) -> Vec<u64> {
    [&m.encoder, &m.disease_head, &m.bias_head]
        .iter()
        .flat_map(|p| p.values().map(f64::to_bits).collect::<Vec<_>>())
        .collect()
}

proptest! {
    #[test]
    fn dataset_csv_round_trips(data in dataset()) {
        let text = dataset_to_csv(&data);
        let back = dataset_from_csv(&text, p()).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(dataset_to_csv(&back), text);
    }

    #[test]
    fn model_text_round_trips(
        input in 1usize..6,
        dims in prop::collection::vec(1usize..5, 1..3),
        act in prop_oneof![Just(Activation::Tanh), Just(Activation::Relu), Just(Activation::Identity)],
        seed in 0u64..1000,
        jitter in finite(),
    ) {
        let arch = EnsembleArch::new(input, &dims, act);
        let seeds = InitSeeds { encoder: seed, disease: seed + 1, bias: seed + 2 };
        let mut model = EnsembleModel::build(&arch, seeds).unwrap();
        if let Some(v) = model.bias_head.values_mut().next() {
            *v = jitter;
        }
        let back = model_from_text(&model_to_text(&model), p()).unwrap();
        prop_assert_eq!(bits(&back), bits(&model));
        prop_assert_eq!(model_to_text(&back), model_to_text(&model));
    }

    #[test]
    fn predictions_round_trip(scores in prop::collection::vec(0.0f64..=1.0, 0..40)) {
        let preds = PredictionFile {
            rows: scores.iter().enumerate().map(|(i, &s)| (format!("id{i}"), s)).collect(),
        };
        prop_assert_eq!(PredictionFile::from_csv(&preds.to_csv(), p()).unwrap(), preds);
    }

    #[test]
    fn run_config_round_trips(
        n in 1usize..5000,
        strength in -5.0f64..5.0,
        lambda in prop::option::of(0.0f64..20.0),
        epochs in 0usize..200,
        dims in prop::collection::vec(1usize..64, 1..4),
        seed in any::<u64>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.gen.n_train = n;
        cfg.gen.confound_strength_age = strength;
        cfg.train.max_epochs = epochs;
        cfg.train.encoder_dims = dims;
        cfg.train.seeds.shuffle = seed;
        cfg.train.confounder = Confounder::Sex;
        cfg.lambda = lambda.map_or(LambdaSetting::Auto, LambdaSetting::Fixed);
        cfg.train.lambda = lambda.unwrap_or(0.0);
        let back = RunConfig::parse(&cfg.render(), p()).unwrap();
        prop_assert_eq!(&back, &cfg);
    }
}

#[test]
fn header_only_file_is_an_empty_dataset() {
    let data = dataset_from_csv("id,split,label,age,sex\n", p()).unwrap();
    assert!(data.examples.is_empty());
    assert_eq!(data.feature_dim, 0);
}

#[test]
fn empty_demographic_fields_mark_rows_excluded() {
    let text = "id,split,label,age,sex,f0\na,train,0,,male,1.5\nb,train,1,40,,2\nc,test,0,35,female,0\n";
    let data = dataset_from_csv(text, p()).unwrap();
    let flags: Vec<bool> = data.examples.iter().map(Example::is_included).collect();
    assert_eq!(flags, [false, false, true]);
    assert_eq!(data.included(Split::Train).len(), 0);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let cases = [
        ("id,split,label,age,sex\na,train,0,30,male\nb,holdout,0,30,male\n", 3),
        ("id,split,label,age,sex\na,train,2,30,male\n", 2),
        ("id,split,label,age,sex,f0\na,train,0,30,male,1\nb,test,0,x,male,1\n", 3),
        ("id,split,label,age,sex,f0\na,train,0,30,male,nan\n", 2),
        ("id,split,label,age,sex\na,train,0,30,male\na,test,0,30,male\n", 3),
        ("id,split,label,age,sex\na,train,0,30,other\n", 2),
        ("id,split,label,sex,age\n", 1),
    ];
    for (text, line) in cases {
        match dataset_from_csv(text, p()) {
            Err(Error::Parse { line: got, .. }) => assert_eq!(got, line, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn unknown_config_keys_are_rejected_with_their_line() {
    let text = "n_train = 10\n# comment\nlearning_rate = 0.1\n";
    match RunConfig::parse(text, p()) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("learning_rate"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    assert!(RunConfig::parse("lambda = -1\n", p()).is_err());
    assert!(RunConfig::parse("batch_size = 1\nconfounder = age\n", p()).is_err());
}

#[test]
fn invalid_ids_are_rejected() {
    for id in ["", " padded", "with,comma", "quo\"te"] {
        let e = Example {
            id: id.into(),
            features: vec![],
            label: 0,
            age: None,
            sex: None,
            split: Split::Train,
        };
        assert!(Dataset::new(0, vec![e]).is_err(), "{id:?}");
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset_from_csv("id,split,label,age,sex,f0\na,train,1,30,male,0.25\n", p()).unwrap();
    let path = dir.path().join("d.csv");
    save_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);

    let model = EnsembleModel::build(&EnsembleArch::new(1, &[2], Activation::Tanh), InitSeeds::default()).unwrap();
    let path = dir.path().join("m.txt");
    save_model(&model, &path).unwrap();
    assert_eq!(bits(&load_model(&path).unwrap()), bits(&model));

    assert!(matches!(load_dataset(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
}
