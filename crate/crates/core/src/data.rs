//! Examples, splits and the per-split demographics summary.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::Threshold;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn name(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Sex::Male),
            "female" => Ok(Sex::Female),
            other => Err(Error::Data(format!("unknown sex `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Vec<f64>,
    /// 0 = control, 1 = diseased.
    pub label: u8,
    /// Years; `None` when unknown.
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub split: Split,
}

impl Example {
    /// Both demographic variables are known.
    pub fn is_included(&self) -> bool {
        self.age.is_some() && self.sex.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(feature_dim: usize, examples: Vec<Example>) -> Result<Self> {
        for e in &examples {
            if e.id.is_empty()
                || e.id.trim() != e.id
                || e.id.contains([',', '"', '\n', '\r'])
            {
                return Err(Error::Data(format!("invalid example id {:?}", e.id)));
            }
            if e.features.len() != feature_dim {
                return Err(Error::Data(format!(
                    "example {} has {} features, expected {feature_dim}",
                    e.id,
                    e.features.len()
                )));
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("example {} has non-finite features", e.id)));
            }
            if e.label > 1 {
                return Err(Error::Data(format!("example {} has label {}", e.id, e.label)));
            }
            if let Some(a) = e.age {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::Data(format!("example {} has invalid age {a}", e.id)));
                }
            }
        }
        Ok(Self { feature_dim, examples })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    /// Rows of a split with both demographics known, in file order.
    pub fn included(&self, split: Split) -> Vec<&Example> {
        self.split(split).filter(|e| e.is_included()).collect()
    }

    /// Ages of the included training rows.
    pub fn train_ages(&self) -> Vec<f64> {
        self.included(Split::Train).iter().filter_map(|e| e.age).collect()
    }

    pub fn describe(&self, threshold: &Threshold) -> DemographicsTable {
        let rows = Split::ALL
            .iter()
            .map(|&split| {
                let mut row = DemographicsRow {
                    split,
                    ..DemographicsRow::default()
                };
                for e in self.split(split) {
                    row.total += 1;
                    if let (Some(age), Some(sex)) = (e.age, e.sex) {
                        row.included += 1;
                        match sex {
                            Sex::Male => row.male += 1,
                            Sex::Female => row.female += 1,
                        }
                        if threshold.is_young(age) {
                            row.young += 1;
                        } else {
                            row.old += 1;
                        }
                    }
                }
                row
            })
            .collect();
        DemographicsTable {
            threshold: *threshold,
            rows,
        }
    }
}

/// Stacks the feature rows of `rows` into a matrix.
pub fn feature_matrix(rows: &[&Example], feature_dim: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * feature_dim);
    for e in rows {
        data.extend_from_slice(&e.features);
    }
    Matrix::from_vec(rows.len(), feature_dim, data).expect("rows validated against feature_dim")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemographicsRow {
    pub split: Split,
    pub total: usize,
    pub included: usize,
    pub male: usize,
    pub female: usize,
    pub young: usize,
    pub old: usize,
}

impl Default for DemographicsRow {
    fn default() -> Self {
        Self {
            split: Split::Train,
            total: 0,
            included: 0,
            male: 0,
            female: 0,
            young: 0,
            old: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographicsTable {
    pub threshold: Threshold,
    pub rows: Vec<DemographicsRow>,
}

impl DemographicsTable {
    pub fn row(&self, split: Split) -> Option<&DemographicsRow> {
        self.rows.iter().find(|r| r.split == split)
    }

    pub fn render(&self) -> String {
        let t = crate::eval::format_threshold(self.threshold.value);
        let lt = format!("<{t}");
        let ge = format!(">={t}");
        let mut out = format!(
            "{:<12}{:>8}{:>10}{:>8}{:>8}{:>8}{:>8}\n",
            "subset", "total", "included", "male", "female", lt, ge
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12}{:>8}{:>10}{:>8}{:>8}{:>8}{:>8}\n",
                r.split.name(),
                r.total,
                r.included,
                r.male,
                r.female,
                r.young,
                r.old
            ));
        }
        out
    }
}
