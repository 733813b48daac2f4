//! Classification-parity evaluation: Mann-Whitney AUC, the median-age split
//! and per-subgroup AUC reports.

use std::fmt;

use crate::data::{Example, Sex};
use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Area under the ROC curve: the fraction of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half.
///
/// Computed from average ranks in `O(n log n)`. Ranks are kept doubled so
/// the statistic is an exact integer before the final division.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {s} is not finite")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Domain(format!("label {l} is not 0 or 1")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!("{n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled ranks (1-based) of the positives; a tie block spanning
    // positions i..j (0-based, exclusive end) has average doubled rank i + j + 1.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        doubled_rank_sum += pos_in_block * (i + j + 1) as u64;
        i = j;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSource {
    TrainMedian,
    Explicit,
}

/// Age cut-off: `Young` is `age < value`, `Old` is `age >= value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub value: f64,
    pub source: ThresholdSource,
}

impl Threshold {
    pub fn explicit(value: f64) -> Self {
        Self {
            value,
            source: ThresholdSource::Explicit,
        }
    }

    #[inline]
    pub fn is_young(&self, age: f64) -> bool {
        age < self.value
    }
}

/// Median of the training ages; even counts use the midpoint of the two
/// central order statistics.
pub fn median_threshold(train_ages: &[f64]) -> Result<Threshold> {
    if train_ages.is_empty() {
        return Err(Error::Data("no training ages to take a median of".into()));
    }
    if let Some(a) = train_ages.iter().find(|a| !a.is_finite()) {
        return Err(Error::Data(format!("age {a} is not finite")));
    }
    let mut ages = train_ages.to_vec();
    ages.sort_by(f64::total_cmp);
    let n = ages.len();
    let value = if n % 2 == 1 {
        ages[n / 2]
    } else {
        (ages[n / 2 - 1] + ages[n / 2]) / 2.0
    };
    Ok(Threshold {
        value,
        source: ThresholdSource::TrainMedian,
    })
}

/// Renders an age threshold without a trailing `.0` for whole years.
pub fn format_threshold(value: f64) -> String {
    format!("{value}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    All,
    Young,
    Old,
    Male,
    Female,
}

impl Group {
    /// Column order of the report tables.
    pub const ORDER: [Group; 5] = [Group::All, Group::Young, Group::Old, Group::Male, Group::Female];

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "All",
            Group::Young => "Young",
            Group::Old => "Old",
            Group::Male => "Male",
            Group::Female => "Female",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Young => "young",
            Group::Old => "old",
            Group::Male => "male",
            Group::Female => "female",
        }
    }

    fn contains(self, age: f64, sex: Sex, threshold: &Threshold) -> bool {
        match self {
            Group::All => true,
            Group::Young => threshold.is_young(age),
            Group::Old => !threshold.is_young(age),
            Group::Male => sex == Sex::Male,
            Group::Female => sex == Sex::Female,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRow {
    pub group: Group,
    /// `None` when the group holds a single class.
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupReport {
    /// One row per [`Group::ORDER`] entry, in that order.
    pub rows: Vec<GroupRow>,
    pub threshold: Threshold,
    /// `|AUC_old − AUC_young|`
    pub age_gap: Option<f64>,
    /// `|AUC_female − AUC_male|`
    pub sex_gap: Option<f64>,
}

fn gap(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(v) => format!("{v:.prec$}"),
        None => "n/a".to_string(),
    }
}

/// Per-subgroup AUCs for one split. `scores[i]` belongs to `rows[i]`; every
/// row must carry both demographics.
pub fn subgroup_report(scores: &[f64], rows: &[&Example], threshold: &Threshold) -> Result<SubgroupReport> {
    if rows.is_empty() {
        return Err(Error::Data("cannot report on an empty split".into()));
    }
    if scores.len() != rows.len() {
        return Err(Error::Shape(format!("{} scores for {} rows", scores.len(), rows.len())));
    }
    let mut demo = Vec::with_capacity(rows.len());
    for e in rows {
        match (e.age, e.sex) {
            (Some(a), Some(s)) => demo.push((a, s)),
            _ => return Err(Error::Data(format!("row {} lacks demographics", e.id))),
        }
    }
    let mut out = Vec::with_capacity(Group::ORDER.len());
    for group in Group::ORDER {
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for ((score, e), &(age, sex)) in scores.iter().zip(rows).zip(&demo) {
            if group.contains(age, sex, threshold) {
                s.push(*score);
                l.push(e.label);
            }
        }
        let positives = l.iter().filter(|&&v| v == 1).count();
        let auc = match auc(&s, &l) {
            Ok(v) => Some(v),
            Err(Error::UndefinedAuc(_)) => None,
            Err(e) => return Err(e),
        };
        out.push(GroupRow {
            group,
            auc,
            positives,
            negatives: l.len() - positives,
        });
    }
    let find = |g: Group| out.iter().find(|r| r.group == g).and_then(|r| r.auc);
    let age_gap = gap(find(Group::Old), find(Group::Young));
    let sex_gap = gap(find(Group::Female), find(Group::Male));
    Ok(SubgroupReport {
        rows: out,
        threshold: *threshold,
        age_gap,
        sex_gap,
    })
}

impl SubgroupReport {
    pub fn auc(&self, group: Group) -> Option<f64> {
        self.rows.iter().find(|r| r.group == group).and_then(|r| r.auc)
    }

    pub fn row(&self, group: Group) -> Option<&GroupRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    /// Aligned table with the groups as columns.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "age threshold: {} ({})\n",
            format_threshold(self.threshold.value),
            match self.threshold.source {
                ThresholdSource::TrainMedian => "training median",
                ThresholdSource::Explicit => "explicit",
            }
        );
        out.push_str(&format!("{:<10}", ""));
        for r in &self.rows {
            out.push_str(&format!("{:>9}", r.group.name()));
        }
        out.push('\n');
        out.push_str(&format!("{:<10}", "AUC"));
        for r in &self.rows {
            out.push_str(&format!("{:>9}", fmt_opt(r.auc, 4)));
        }
        out.push('\n');
        out.push_str(&format!("{:<10}", "positives"));
        for r in &self.rows {
            out.push_str(&format!("{:>9}", r.positives));
        }
        out.push('\n');
        out.push_str(&format!("{:<10}", "negatives"));
        for r in &self.rows {
            out.push_str(&format!("{:>9}", r.negatives));
        }
        out.push('\n');
        out.push_str(&format!(
            "age gap: {}  sex gap: {}\n",
            fmt_opt(self.age_gap, 4),
            fmt_opt(self.sex_gap, 4)
        ));
        out
    }

    /// Key/value document carrying every number at full precision.
    pub fn to_kv(&self) -> KvDoc {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        let mut doc = KvDoc::new();
        doc.push("age_threshold", self.threshold.value);
        doc.push(
            "age_threshold_source",
            match self.threshold.source {
                ThresholdSource::TrainMedian => "train_median",
                ThresholdSource::Explicit => "explicit",
            },
        );
        for r in &self.rows {
            let k = r.group.key();
            doc.push(format!("auc.{k}"), opt(r.auc));
            doc.push(format!("positives.{k}"), r.positives);
            doc.push(format!("negatives.{k}"), r.negatives);
        }
        doc.push("gap.age", opt(self.age_gap));
        doc.push("gap.sex", opt(self.sex_gap));
        doc
    }
}

/// One line of an experiment overview table.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub name: String,
    pub confounder: String,
    pub lambda: Option<f64>,
    pub bias_loss: Option<String>,
    pub report: SubgroupReport,
}

/// Overview of several runs, one line each, with the group AUCs in the
/// usual `All, Young, Old, Male, Female` order.
pub fn render_experiment_table(rows: &[ExperimentRow]) -> String {
    let mut out = format!(
        "{:<24}{:>11}{:>7}{:>16}",
        "experiment", "confounder", "lambda", "L_bp"
    );
    for g in Group::ORDER {
        out.push_str(&format!("{:>8}", g.name()));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:<24}{:>11}{:>7}{:>16}",
            r.name,
            r.confounder,
            r.lambda.map_or_else(|| "N/A".to_string(), |l| l.to_string()),
            r.bias_loss.as_deref().unwrap_or("N/A")
        ));
        for g in Group::ORDER {
            out.push_str(&format!("{:>8}", fmt_opt(r.report.auc(g), 3)));
        }
        out.push('\n');
    }
    out
}
