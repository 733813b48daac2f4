//! File formats: dataset CSV, prediction CSV, model text, run config.
//!
//! Floats are always written with Rust's shortest round-trip formatting, so
//! every save/load pair reproduces the original values exactly.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Example, Sex, Split};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::losses::BiasLossKind;
use crate::matrix::Matrix;
use crate::model::EnsembleModel;
use crate::nn::{Activation, Dense, LayerSpec, ParamSet};
use crate::synth::GenSpec;
use crate::trainer::{Confounder, TrainConfig};

/// Writes `contents` to a temporary sibling of `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- datasets

const FIXED_COLUMNS: [&str; 5] = ["id", "split", "label", "age", "sex"];

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = FIXED_COLUMNS.join(",");
    for k in 0..data.feature_dim {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for e in &data.examples {
        out.push_str(&format!(
            "{},{},{},{},{}",
            e.id,
            e.split,
            e.label,
            e.age.map_or(String::new(), |a| a.to_string()),
            e.sex.map_or("", Sex::name)
        ));
        for v in &e.features {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Parses dataset CSV text. `path` only labels errors.
pub fn dataset_from_csv(text: &str, path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().take(5).ne(FIXED_COLUMNS) {
        return Err(Error::parse(path, 1, format!("header must start with {}", FIXED_COLUMNS.join(","))));
    }
    let feature_dim = header.len() - FIXED_COLUMNS.len();
    for (k, name) in header.iter().skip(5).enumerate() {
        if name != format!("f{k}") {
            return Err(Error::parse(path, 1, format!("expected column f{k}, found `{name}`")));
        }
    }
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::parse(path, line, msg);
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(bad(format!("duplicate id `{id}`")));
        }
        let split: Split = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let label = match &record[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label must be 0 or 1, got `{other}`"))),
        };
        let age = match &record[3] {
            "" => None,
            s => {
                let a: f64 = s.parse().map_err(|_| bad(format!("bad age `{s}`")))?;
                if !(a.is_finite() && a >= 0.0) {
                    return Err(bad(format!("bad age `{s}`")));
                }
                Some(a)
            }
        };
        let sex = match &record[4] {
            "" => None,
            s => Some(s.parse::<Sex>().map_err(|e| bad(e.to_string()))?),
        };
        let features = record
            .iter()
            .skip(5)
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(format!("bad feature value `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        examples.push(Example {
            id,
            features,
            label,
            age,
            sex,
            split,
        });
    }
    Dataset::new(feature_dim, examples)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_csv(&read_to_string(path)?, path)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset_to_csv(data).as_bytes())
}

// ------------------------------------------------------------- predictions

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub rows: Vec<(String, f64)>,
}

impl PredictionFile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,score\n");
        for (id, s) in &self.rows {
            out.push_str(&format!("{id},{s}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if header.iter().ne(["id", "score"]) {
            return Err(Error::parse(path, 1, "header must be `id,score`"));
        }
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                Error::parse(path, e.position().map_or(0, |p| p.line() as usize), e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let id = record[0].to_string();
            let score: f64 = record[1]
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad score `{}`", &record[1])))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::parse(path, line, format!("score {score} outside [0, 1]")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::parse(path, line, format!("duplicate id `{id}`")));
            }
            rows.push((id, score));
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

// ------------------------------------------------------------------ models

const MODEL_MAGIC: &str = "biasaware-model v1";
const PARTS: [&str; 3] = ["encoder", "disease", "bias"];

fn parts(model: &EnsembleModel) -> [&ParamSet; 3] {
    [&model.encoder, &model.disease_head, &model.bias_head]
}

/// Text serialisation: magic line, one `arch` line per part, then one
/// `param` line per weight matrix and bias vector in the order encoder
/// layers, disease head, bias head. Momentum buffers are not stored.
pub fn model_to_text(model: &EnsembleModel) -> String {
    let mut out = format!("{MODEL_MAGIC}\n");
    for (name, p) in PARTS.iter().zip(parts(model)) {
        out.push_str(&format!("arch {name}"));
        for s in p.specs() {
            out.push_str(&format!(" {}:{}:{}", s.in_dim, s.out_dim, s.activation));
        }
        out.push('\n');
    }
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    for (name, p) in PARTS.iter().zip(parts(model)) {
        for (i, layer) in p.layers().iter().enumerate() {
            out.push_str(&format!("param {name} {i} weight {}\n", join(layer.weight.as_slice())));
            out.push_str(&format!("param {name} {i} bias {}\n", join(&layer.bias)));
        }
    }
    out
}

pub fn model_from_text(text: &str, path: &Path) -> Result<EnsembleModel> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MODEL_MAGIC => {}
        _ => return Err(Error::parse(path, 1, format!("expected `{MODEL_MAGIC}`"))),
    }
    let mut specs: Vec<Vec<LayerSpec>> = Vec::with_capacity(3);
    for expected in PARTS {
        let (i, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing arch line for {expected}")))?;
        let bad = |msg: String| Error::parse(path, i + 1, msg);
        let mut tok = line.split_whitespace();
        if tok.next() != Some("arch") || tok.next() != Some(expected) {
            return Err(bad(format!("expected `arch {expected}`")));
        }
        let part = tok
            .map(|t| {
                let f: Vec<&str> = t.split(':').collect();
                if f.len() != 3 {
                    return Err(bad(format!("bad layer `{t}`")));
                }
                let dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad dimension `{s}`")));
                Ok(LayerSpec::new(dim(f[0])?, dim(f[1])?, f[2].parse().map_err(|e: Error| bad(e.to_string()))?))
            })
            .collect::<Result<Vec<_>>>()?;
        specs.push(part);
    }
    let mut sets = Vec::with_capacity(3);
    for (name, part_specs) in PARTS.iter().zip(&specs) {
        let mut layers = Vec::with_capacity(part_specs.len());
        for (li, spec) in part_specs.iter().enumerate() {
            let mut read = |kind: &str, len: usize| -> Result<Vec<f64>> {
                let (i, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(path, 0, format!("missing {name} layer {li} {kind}")))?;
                let bad = |msg: String| Error::parse(path, i + 1, msg);
                let mut tok = line.split_whitespace();
                let head = [tok.next(), tok.next(), tok.next(), tok.next()];
                let li_s = li.to_string();
                if head != [Some("param"), Some(*name), Some(li_s.as_str()), Some(kind)] {
                    return Err(bad(format!("expected `param {name} {li} {kind}`")));
                }
                let vals = tok
                    .map(|t| match t.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(bad(format!("bad value `{t}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != len {
                    return Err(bad(format!("expected {len} values, found {}", vals.len())));
                }
                Ok(vals)
            };
            let weight = read("weight", spec.in_dim * spec.out_dim)?;
            let bias = read("bias", spec.out_dim)?;
            layers.push(Dense {
                weight: Matrix::from_vec(spec.out_dim, spec.in_dim, weight)?,
                bias,
            });
        }
        sets.push(ParamSet::from_layers(part_specs, layers).map_err(|e| Error::parse(path, 0, e.to_string()))?);
    }
    if let Some((i, _)) = lines.next() {
        return Err(Error::parse(path, i + 1, "trailing content after parameters"));
    }
    let bias = sets.pop().expect("three parts");
    let disease = sets.pop().expect("three parts");
    let encoder = sets.pop().expect("three parts");
    EnsembleModel::from_parts(encoder, disease, bias).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn load_model(path: &Path) -> Result<EnsembleModel> {
    model_from_text(&read_to_string(path)?, path)
}

pub fn save_model(model: &EnsembleModel, path: &Path) -> Result<()> {
    write_atomic(path, model_to_text(model).as_bytes())
}

// -------------------------------------------------------------- run config

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSetting {
    Fixed(f64),
    /// Pick λ from a λ = 0 pilot run with [`crate::trainer::suggest_lambda`].
    Auto,
}

/// Every generator and training knob in one flat `key = value` document.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gen: GenSpec,
    pub train: TrainConfig,
    pub lambda: LambdaSetting,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gen: GenSpec::default(),
            train: TrainConfig::default(),
            lambda: LambdaSetting::Fixed(0.0),
        }
    }
}

impl RunConfig {
    pub fn to_kv(&self) -> KvDoc {
        let (g, t) = (&self.gen, &self.train);
        let mut d = KvDoc::new();
        d.push("n_train", g.n_train);
        d.push("n_validation", g.n_validation);
        d.push("n_test", g.n_test);
        d.push("d", g.d);
        d.push("signal_strength", g.signal_strength);
        d.push("confound_strength_age", g.confound_strength_age);
        d.push("confound_strength_sex", g.confound_strength_sex);
        d.push("difficulty_skew_age", g.difficulty_skew_age);
        d.push("difficulty_skew_sex", g.difficulty_skew_sex);
        d.push("entangled_signal_age", g.entangled_signal_age);
        d.push("entangled_signal_sex", g.entangled_signal_sex);
        d.push("noise_sigma", g.noise_sigma);
        d.push("prevalence", g.prevalence);
        d.push("age_min", g.age_min);
        d.push("age_max", g.age_max);
        d.push("sex_balance", g.sex_balance);
        d.push("missing_fraction", g.missing_fraction);
        d.push("confounder", t.confounder);
        d.push("bias_loss", t.bias_loss);
        d.push(
            "lambda",
            match self.lambda {
                LambdaSetting::Fixed(l) => l.to_string(),
                LambdaSetting::Auto => "auto".to_string(),
            },
        );
        d.push("batch_size", t.batch_size);
        d.push("lr_initial", t.lr_initial);
        d.push("lr_after", t.lr_after);
        d.push("lr_switch_epoch", t.lr_switch_epoch);
        d.push("momentum", t.momentum);
        d.push("patience", t.patience);
        d.push("max_epochs", t.max_epochs);
        d.push(
            "encoder_dims",
            t.encoder_dims.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        d.push("encoder_activation", t.encoder_activation);
        d.push("seed_init_encoder", t.seeds.init_encoder);
        d.push("seed_init_disease", t.seeds.init_disease);
        d.push("seed_init_bias", t.seeds.init_bias);
        d.push("seed_shuffle", t.seeds.shuffle);
        d
    }

    pub fn render(&self) -> String {
        self.to_kv().render()
    }

    /// Starts from the defaults and applies every key; unknown keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc = KvDoc::parse(text, path)?;
        let mut cfg = RunConfig::default();
        for (i, (key, value)) in doc.entries().iter().enumerate() {
            cfg.apply(key, value).map_err(|msg| {
                let line = text
                    .lines()
                    .position(|l| l.trim_start().starts_with(key.as_str()) && l.contains('='))
                    .map_or(i + 1, |p| p + 1);
                Error::parse(path, line, msg)
            })?;
        }
        cfg.gen.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        fn float(key: &str, v: &str) -> std::result::Result<f64, String> {
            let x: f64 = num(key, v)?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("`{key}` must be finite"))
            }
        }
        let (g, t) = (&mut self.gen, &mut self.train);
        match key {
            "n_train" => g.n_train = num(key, value)?,
            "n_validation" => g.n_validation = num(key, value)?,
            "n_test" => g.n_test = num(key, value)?,
            "d" => g.d = num(key, value)?,
            "signal_strength" => g.signal_strength = float(key, value)?,
            "confound_strength_age" => g.confound_strength_age = float(key, value)?,
            "confound_strength_sex" => g.confound_strength_sex = float(key, value)?,
            "difficulty_skew_age" => g.difficulty_skew_age = float(key, value)?,
            "difficulty_skew_sex" => g.difficulty_skew_sex = float(key, value)?,
            "entangled_signal_age" => g.entangled_signal_age = float(key, value)?,
            "entangled_signal_sex" => g.entangled_signal_sex = float(key, value)?,
            "noise_sigma" => g.noise_sigma = float(key, value)?,
            "prevalence" => g.prevalence = float(key, value)?,
            "age_min" => g.age_min = float(key, value)?,
            "age_max" => g.age_max = float(key, value)?,
            "sex_balance" => g.sex_balance = float(key, value)?,
            "missing_fraction" => g.missing_fraction = float(key, value)?,
            "confounder" => t.confounder = value.parse::<Confounder>().map_err(|e| e.to_string())?,
            "bias_loss" => t.bias_loss = value.parse::<BiasLossKind>().map_err(|e| e.to_string())?,
            "lambda" => {
                self.lambda = if value == "auto" {
                    LambdaSetting::Auto
                } else {
                    let l = float(key, value)?;
                    t.lambda = l;
                    LambdaSetting::Fixed(l)
                }
            }
            "batch_size" => t.batch_size = num(key, value)?,
            "lr_initial" => t.lr_initial = float(key, value)?,
            "lr_after" => t.lr_after = float(key, value)?,
            "lr_switch_epoch" => t.lr_switch_epoch = num(key, value)?,
            "momentum" => t.momentum = float(key, value)?,
            "patience" => t.patience = num(key, value)?,
            "max_epochs" => t.max_epochs = num(key, value)?,
            "encoder_dims" => {
                t.encoder_dims = value
                    .split(',')
                    .map(|s| num::<usize>(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                if t.encoder_dims.contains(&0) {
                    return Err("encoder_dims must be positive".into());
                }
            }
            "encoder_activation" => {
                t.encoder_activation = value.parse::<Activation>().map_err(|e| e.to_string())?
            }
            "seed_init_encoder" => t.seeds.init_encoder = num(key, value)?,
            "seed_init_disease" => t.seeds.init_disease = num(key, value)?,
            "seed_init_bias" => t.seeds.init_bias = num(key, value)?,
            "seed_shuffle" => t.seeds.shuffle = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}
