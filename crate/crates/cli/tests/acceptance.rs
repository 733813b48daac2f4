//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any FAIL.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use biasaware::gradcheck::{check, LossCase};
use biasaware::pipeline::{dataset_threshold, evaluate, pilot_lambda, train, Mode};
use biasaware::trainer::{build_model, train_bias_aware_observed, Step, StepEvent, TrainSeeds};
use biasaware::{
    auc, generate, train_baseline, train_bias_aware, Confounder, GenSpec, Group, ParamSet, Split, TrainConfig,
    TrainingData,
};
use biasaware_cli::{run, EXIT_OK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario() -> GenSpec {
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

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 100,
        encoder_dims: vec![16, 1],
        seeds: TrainSeeds {
            init_encoder: 10 * seed + 1,
            init_disease: 10 * seed + 2,
            init_bias: 10 * seed + 3,
            shuffle: 10 * seed + 4,
        },
        ..TrainConfig::default()
    }
}

fn gradient_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for case in LossCase::ALL {
        for seed in 0..25 {
            match check(case, seed) {
                Ok(g) => worst = worst.max(g.rel_error),
                Err(e) => return outcome(false, format!("{} seed {seed}: {e}", case.name())),
            }
            checks += 1;
        }
    }
    outcome(worst <= 1e-4, format!("{checks} checks, worst relative error {worst:.2e}"))
}

fn doubled_pairs(scores: &[f64], labels: &[u8]) -> u64 {
    let mut u = 0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            u += if sp > sn { 2 } else { u64::from(sp == sn) };
        }
    }
    u
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut done = 0;
    let mut mismatches = 0;
    while done < 500 {
        let n = rng.random_range(2..=200);
        let tied = done % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if tied { f64::from(rng.random_range(0..4u8)) / 4.0 } else { rng.random() })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
        if pos == 0 || pos == n as u64 {
            continue;
        }
        let brute = doubled_pairs(&scores, &labels) as f64 / (2 * pos * (n as u64 - pos)) as f64;
        if auc(&scores, &labels).ok().map(f64::to_bits) != Some(brute.to_bits()) {
            mismatches += 1;
        }
        done += 1;
    }
    outcome(mismatches == 0, format!("{done} instances, {mismatches} mismatches"))
}

fn lambda_zero_equivalence(td: &TrainingData) -> Outcome {
    let base = config(0);
    let zero = TrainConfig {
        confounder: Confounder::Age,
        lambda: 0.0,
        ..base.clone()
    };
    let (a, ha) = train_baseline(build_model(td, &base).unwrap(), td, &base).unwrap();
    let (b, hb) = train_bias_aware(build_model(td, &zero).unwrap(), td, &zero).unwrap();
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let same = a.encoder.same_bits(&b.encoder)
        && a.disease_head.same_bits(&b.disease_head)
        && bits(ha.val_aucs()) == bits(hb.val_aucs());
    outcome(same, format!("{} epochs, parameters and validation AUCs bitwise equal: {same}", ha.epochs.len()))
}

fn untouched(a: &ParamSet, b: &ParamSet) -> bool {
    let vel = |p: &ParamSet| -> Vec<u64> {
        p.velocity()
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    a.same_bits(b) && vel(a) == vel(b)
}

fn freezing_contracts(td: &TrainingData) -> Outcome {
    let cfg = TrainConfig {
        confounder: Confounder::Age,
        lambda: 1.5,
        ..config(0)
    };
    let mut steps = [0usize; 3];
    let mut frozen_violations = 0;
    let mut diseased = 0;
    let mut observer = |e: &StepEvent<'_>| {
        let (b, a) = (e.before, e.after);
        let ok = match e.step {
            Step::A => untouched(&b.bias_head, &a.bias_head),
            Step::B => untouched(&b.encoder, &a.encoder) && untouched(&b.disease_head, &a.disease_head),
            Step::C => untouched(&b.bias_head, &a.bias_head) && untouched(&b.disease_head, &a.disease_head),
        };
        frozen_violations += usize::from(!ok);
        if e.step != Step::A {
            diseased += e.rows.iter().filter(|&&r| td.train_labels[r] != 0).count();
        }
        steps[e.step as usize] += 1;
    };
    let (_, h) = train_bias_aware_observed(build_model(td, &cfg).unwrap(), td, &cfg, Some(&mut observer)).unwrap();
    let pass = frozen_violations == 0 && diseased == 0 && h.diseased_in_bias_steps == 0 && steps[2] > 0;
    outcome(
        pass,
        format!(
            "{} epochs, steps a/b/c {}/{}/{}, freeze violations {frozen_violations}, diseased rows in b/c {diseased}",
            h.epochs.len(),
            steps[0],
            steps[1],
            steps[2]
        ),
    )
}

struct SeedRun {
    base_all: f64,
    base_gap: f64,
    adv_all: f64,
    adv_gap: f64,
    zero_min_lbp: f64,
    zero_final_lbp: f64,
    adv_mean_lbp: f64,
}

fn seed_run(seed: u64) -> SeedRun {
    let data = generate(&scenario(), 100 + seed).unwrap();
    let td = TrainingData::from_dataset(&data).unwrap();
    let threshold = dataset_threshold(&data, None).unwrap();
    let base_cfg = config(seed);
    let age_cfg = TrainConfig {
        confounder: Confounder::Age,
        ..base_cfg.clone()
    };
    let (lambda, pilot) = pilot_lambda(&td, &age_cfg).unwrap();
    let (base, _) = train(&td, &base_cfg, Mode::Baseline).unwrap();
    let base_report = evaluate(&base, &data, Split::Test, &threshold).unwrap().0;
    let adv_cfg = TrainConfig { lambda, ..age_cfg };
    let (adv, adv_hist) = train(&td, &adv_cfg, Mode::BiasAware).unwrap();
    let adv_report = evaluate(&adv, &data, Split::Test, &threshold).unwrap().0;

    let zero_lbp: Vec<f64> = pilot.epochs.iter().filter_map(|e| e.mean_lbp).collect();
    let adv_lbp: Vec<f64> = adv_hist.epochs.iter().filter_map(|e| e.mean_lbp).collect();
    SeedRun {
        base_all: base_report.auc(Group::All).unwrap(),
        base_gap: base_report.age_gap.unwrap(),
        adv_all: adv_report.auc(Group::All).unwrap(),
        adv_gap: adv_report.age_gap.unwrap(),
        zero_min_lbp: zero_lbp.iter().copied().fold(f64::INFINITY, f64::min),
        zero_final_lbp: *zero_lbp.last().unwrap(),
        adv_mean_lbp: adv_lbp.iter().sum::<f64>() / adv_lbp.len() as f64,
    }
}

fn debiasing_pattern(runs: &[SeedRun]) -> Outcome {
    let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (base_gap, adv_gap) = (mean(|r| r.base_gap), mean(|r| r.adv_gap));
    let drop = mean(|r| r.base_all) - mean(|r| r.adv_all);
    let pass = base_gap >= 0.10 && adv_gap <= 0.5 * base_gap && drop <= 0.12;
    outcome(
        pass,
        format!(
            "{} seeds, age gap {base_gap:.3} -> {adv_gap:.3}, All {:.3} -> {:.3} (drop {drop:.3})",
            runs.len(),
            mean(|r| r.base_all),
            mean(|r| r.adv_all)
        ),
    )
}

fn bias_predictor_sanity(runs: &[SeedRun]) -> Outcome {
    let learns = runs.iter().filter(|r| r.zero_min_lbp <= -0.25).count();
    let held = runs.iter().filter(|r| r.adv_mean_lbp > r.zero_final_lbp).count();
    let majority = runs.len() / 2 + 1;
    let fmt = |f: fn(&SeedRun) -> f64| runs.iter().map(|r| format!("{:.3}", f(r))).collect::<Vec<_>>().join(" ");
    outcome(
        learns >= majority && held >= majority,
        format!(
            "λ=0 reaches ≤ -0.25 in {learns}/{n} (min {}), λ>0 mean above λ=0 final in {held}/{n} ({} vs {})",
            fmt(|r| r.zero_min_lbp),
            fmt(|r| r.adv_mean_lbp),
            fmt(|r| r.zero_final_lbp),
            n = runs.len()
        ),
    )
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("biasaware").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8_lossy(&o).into_owned(), String::from_utf8_lossy(&e).into_owned())
}

fn table_one_fixture() -> Outcome {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/isic_metadata.csv");
    let (code, out, err) = cli(&["describe", "--data", fixture, "--age-threshold", "60"]);
    if code != EXIT_OK {
        return outcome(false, err);
    }
    let want = [
        "train 2000 1744 886 858 1087 657",
        "validation 150 149 90 59 87 62",
        "test 600 553 283 270 302 251",
    ];
    let got: Vec<String> = out.lines().skip(1).map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ")).collect();
    let pass = got == want;
    outcome(pass, if pass { "all 18 counts match".into() } else { format!("got {got:?}") })
}

/// generate, train and evaluate into `dir`; returns every produced file.
fn pipeline_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let conf = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/age_entangled.conf");
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    let steps: [Vec<String>; 3] = [
        ["generate", "--spec", conf, "--seed", "7", "--out", &p("data.csv")].map(String::from).to_vec(),
        [
            "train", "--data", &p("data.csv"), "--config", conf, "--mode", "bias-aware", "--out-model",
            &p("model.txt"), "--log", &p("train.log"),
        ]
        .map(String::from)
        .to_vec(),
        [
            "evaluate", "--model", &p("model.txt"), "--data", &p("data.csv"), "--report", &p("report.kv"),
            "--format", "kv", "--dump-scores", &p("scores.csv"),
        ]
        .map(String::from)
        .to_vec(),
    ];
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, _, err) = cli(&args);
        if code != EXIT_OK {
            return Err(err);
        }
    }
    let mut files = Vec::new();
    for name in ["data.csv", "model.txt", "train.log", "report.kv", "scores.csv"] {
        files.push((name.to_owned(), fs::read(dir.join(name)).map_err(|e| e.to_string())?));
    }
    Ok(files)
}

fn end_to_end_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline_files(a.path()), pipeline_files(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.as_str()).collect();
            let bytes: usize = x.iter().map(|f| f.1.len()).sum();
            outcome(
                differing.is_empty(),
                if differing.is_empty() {
                    format!("{} files, {bytes} bytes identical", x.len())
                } else {
                    format!("differing: {differing:?}")
                },
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn report(id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if let Some(limit) = budget {
        if took > limit {
            o.pass = false;
            o.detail.push_str(&format!("; over the {limit:?} budget"));
        }
    }
    println!(
        "{} criterion {id} {name}: {} [{:.2}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    o.pass
}

fn main() {
    let s = |secs| Some(Duration::from_secs(secs));
    let mut ok = true;
    ok &= report(1, "gradient suite", s(10), gradient_suite);
    ok &= report(2, "AUC oracle", s(10), auc_oracle);

    let data = generate(&scenario(), 100).unwrap();
    let td = TrainingData::from_dataset(&data).unwrap();
    ok &= report(3, "lambda = 0 equivalence", s(60), || lambda_zero_equivalence(&td));
    ok &= report(4, "freezing and control-only steps", s(60), || freezing_contracts(&td));

    let start = Instant::now();
    let runs: Vec<SeedRun> = (0..5).map(seed_run).collect();
    let sweep = start.elapsed();
    let budget = Duration::from_secs(600);
    ok &= report(5, "debiasing pattern", None, || {
        let mut o = debiasing_pattern(&runs);
        if sweep > budget {
            o.pass = false;
            o.detail.push_str("; sweep over budget");
        }
        o.detail.push_str(&format!("; sweep {:.1}s", sweep.as_secs_f64()));
        o
    });
    ok &= report(6, "bias predictor sanity", None, || bias_predictor_sanity(&runs));
    ok &= report(7, "demographics fixture", s(1), table_one_fixture);
    ok &= report(8, "end-to-end determinism", None, end_to_end_determinism);

    if !ok {
        std::process::exit(1);
    }
}
