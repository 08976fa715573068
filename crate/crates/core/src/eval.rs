//! Threshold metrics, ROC curves, AUC and FPR@TPR=1.
//!
//! Every decision uses the strict rule `abnormal <=> combined > threshold`,
//! so confusion rates, ROC points and FPR@TPR=1 agree with each other.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::TrueLabel;
use crate::lof::ScoreRecord;
use crate::tsv;

/// Decimal places carried by serialized reports.
pub const REPORT_DECIMALS: i32 = 7;

fn round_report(v: f64) -> f64 {
    let scale = 10f64.powi(REPORT_DECIMALS);
    (v * scale).round() / scale
}

fn ser_rounded<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_report(*v))
}

fn ser_rounded_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round_report(*v)),
        None => s.serialize_none(),
    }
}

/// Scores split by ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSplit {
    pub normal: Vec<f64>,
    pub abnormal: Vec<f64>,
}

impl ScoreSplit {
    pub fn from_records(records: &[ScoreRecord]) -> Self {
        let mut s = Self::default();
        for r in records {
            match r.true_label {
                TrueLabel::Normal => s.normal.push(r.combined),
                TrueLabel::Abnormal => s.abnormal.push(r.combined),
            }
        }
        s
    }

    fn check(&self) -> Result<()> {
        if self.normal.is_empty() || self.abnormal.is_empty() {
            return Err(Error::SingleClass);
        }
        if self.normal.iter().chain(&self.abnormal).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
}

impl ConfusionCounts {
    pub fn abnormal(&self) -> usize {
        self.true_positive + self.false_negative
    }

    pub fn normal(&self) -> usize {
        self.false_positive + self.true_negative
    }

    pub fn total(&self) -> usize {
        self.abnormal() + self.normal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub counts: ConfusionCounts,
}

pub fn confusion_from_split(split: &ScoreSplit, threshold: f64) -> Result<Confusion> {
    split.check()?;
    let tp = split.abnormal.iter().filter(|&&s| s > threshold).count();
    let fp = split.normal.iter().filter(|&&s| s > threshold).count();
    let counts = ConfusionCounts {
        true_positive: tp,
        false_negative: split.abnormal.len() - tp,
        false_positive: fp,
        true_negative: split.normal.len() - fp,
    };
    let fpr = fp as f64 / split.normal.len() as f64;
    Ok(Confusion {
        tpr: tp as f64 / split.abnormal.len() as f64,
        fpr,
        tnr: 1.0 - fpr,
        counts,
    })
}

/// TPR, FPR and TNR at `threshold`.
pub fn confusion(records: &[ScoreRecord], threshold: f64) -> Result<Confusion> {
    confusion_from_split(&ScoreSplit::from_records(records), threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Decision threshold producing this point under `score > threshold`.
    pub threshold: f64,
}

/// Empirical ROC from (0, 0) to (1, 1).
///
/// Thresholds run over the distinct scores in descending order followed by
/// `-inf`: at the largest score nothing is flagged, and at each later
/// threshold everything strictly above it is.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    normal_count: usize,
    abnormal_count: usize,
    /// (false positives, true positives) per point.
    counts: Vec<(usize, usize)>,
}

impl RocCurve {
    pub fn from_split(split: &ScoreSplit) -> Result<Self> {
        split.check()?;
        let mut all: Vec<(f64, bool)> = split
            .normal
            .iter()
            .map(|&s| (s, false))
            .chain(split.abnormal.iter().map(|&s| (s, true)))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let n_norm = split.normal.len();
        let n_abn = split.abnormal.len();
        let point = |fp: usize, tp: usize, threshold: f64| RocPoint {
            fpr: fp as f64 / n_norm as f64,
            tpr: tp as f64 / n_abn as f64,
            threshold,
        };

        let mut points = vec![point(0, 0, all[0].0)];
        let mut counts = vec![(0, 0)];
        let (mut fp, mut tp) = (0usize, 0usize);
        let mut i = 0;
        while i < all.len() {
            let s = all[i].0;
            while i < all.len() && all[i].0 == s {
                if all[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            let next = all.get(i).map_or(f64::NEG_INFINITY, |x| x.0);
            points.push(point(fp, tp, next));
            counts.push((fp, tp));
        }
        Ok(Self {
            points,
            normal_count: n_norm,
            abnormal_count: n_abn,
            counts,
        })
    }

    /// Trapezoidal area, accumulated in integer counts and normalized once.
    pub fn auc(&self) -> f64 {
        let mut twice_area: u128 = 0;
        for w in self.counts.windows(2) {
            let (fp0, tp0) = w[0];
            let (fp1, tp1) = w[1];
            twice_area += ((fp1 - fp0) as u128) * ((tp0 + tp1) as u128);
        }
        twice_area as f64 / (2.0 * self.normal_count as f64 * self.abnormal_count as f64)
    }

    /// Lowest FPR among points with TPR = 1.
    pub fn min_fpr_at_full_tpr(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.tpr == 1.0)
            .map(|p| p.fpr)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest threshold whose point has TPR = 1.
    pub fn full_tpr_threshold(&self) -> f64 {
        self.points
            .iter()
            .find(|p| p.tpr == 1.0)
            .map_or(f64::NEG_INFINITY, |p| p.threshold)
    }

    /// `fpr<TAB>tpr<TAB>threshold` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("#fpr\ttpr\tthreshold\n");
        for p in &self.points {
            let t = if p.threshold == f64::NEG_INFINITY {
                "-inf".to_owned()
            } else {
                format!("{:e}", p.threshold)
            };
            out.push_str(&format!("{:.7}\t{:.7}\t{t}\n", p.fpr, p.tpr));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        tsv::write_text(path.as_ref(), &self.to_tsv())
    }
}

pub fn roc_auc(records: &[ScoreRecord]) -> Result<(RocCurve, f64)> {
    let roc = RocCurve::from_split(&ScoreSplit::from_records(records))?;
    let auc = roc.auc();
    Ok((roc, auc))
}

/// Closed form: share of normals scoring at or above the lowest abnormal.
pub fn fpr_at_tpr1_from_split(split: &ScoreSplit) -> Result<f64> {
    split.check()?;
    let min_abn = split.abnormal.iter().copied().fold(f64::INFINITY, f64::min);
    let flagged = split.normal.iter().filter(|&&s| s >= min_abn).count();
    Ok(flagged as f64 / split.normal.len() as f64)
}

pub fn fpr_at_tpr1(records: &[ScoreRecord]) -> Result<f64> {
    fpr_at_tpr1_from_split(&ScoreSplit::from_records(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseMetrics {
    #[serde(serialize_with = "ser_rounded")]
    pub auc: f64,
    #[serde(serialize_with = "ser_rounded")]
    pub fpr_at_tpr1: f64,
    pub abnormal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(serialize_with = "ser_rounded")]
    pub auc: f64,
    #[serde(serialize_with = "ser_rounded")]
    pub fpr_at_tpr1: f64,
    /// Operating threshold; `None` stands for `-inf` (everything flagged).
    #[serde(serialize_with = "ser_rounded_opt")]
    pub threshold: Option<f64>,
    #[serde(serialize_with = "ser_rounded")]
    pub tpr: f64,
    #[serde(serialize_with = "ser_rounded")]
    pub tnr: f64,
    #[serde(serialize_with = "ser_rounded")]
    pub fpr: f64,
    pub counts: ConfusionCounts,
    pub per_disease: BTreeMap<String, DiseaseMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Aggregate and per-disease metrics. Each disease is evaluated against all
/// normals. Without an explicit threshold the report uses the largest
/// threshold that still flags every abnormal record.
pub fn per_disease_report(records: &[ScoreRecord], threshold: Option<f64>) -> Result<EvalReport> {
    let split = ScoreSplit::from_records(records);
    let roc = RocCurve::from_split(&split)?;
    let tau = threshold.unwrap_or_else(|| roc.full_tpr_threshold());
    let c = confusion_from_split(&split, tau)?;

    let mut diseases: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.true_label == TrueLabel::Abnormal)
    {
        diseases
            .entry(r.disease_label.as_str())
            .or_default()
            .push(r.combined);
    }
    let mut per_disease = BTreeMap::new();
    for (disease, abnormal) in diseases {
        let sub = ScoreSplit {
            normal: split.normal.clone(),
            abnormal,
        };
        per_disease.insert(
            disease.to_owned(),
            DiseaseMetrics {
                auc: RocCurve::from_split(&sub)?.auc(),
                fpr_at_tpr1: fpr_at_tpr1_from_split(&sub)?,
                abnormal_count: sub.abnormal.len(),
            },
        );
    }

    Ok(EvalReport {
        auc: roc.auc(),
        fpr_at_tpr1: fpr_at_tpr1_from_split(&split)?,
        threshold: (tau != f64::NEG_INFINITY).then_some(tau),
        tpr: c.tpr,
        tnr: c.tnr,
        fpr: c.fpr,
        counts: c.counts,
        per_disease,
    })
}
