//! End-to-end experiment driver.
//!
//! A run loads a manifest and one or more feature files, partitions the
//! manifest into quarters, and for every round of the scenario trains the
//! embedding head, draws and embeds the reference groups, scores the test
//! set and evaluates it. Rounds run in parallel; results are collected and
//! written in round order so outputs are byte-identical across reruns.
//!
//! Output layout:
//!
//! ```text
//! <output_dir>/config.json          resolved configuration
//! <output_dir>/folds.tsv            quarter assignment
//! <output_dir>/report.json          pooled + averaged metrics, per-round summaries, provenance
//! <output_dir>/round_<r>/model.mhd
//! <output_dir>/round_<r>/trace.tsv
//! <output_dir>/round_<r>/reference_<group>.txt
//! <output_dir>/round_<r>/scores.tsv
//! <output_dir>/round_<r>/roc.tsv
//! <output_dir>/round_<r>/report.json
//! ```
//!
//! Set `OODR_THREADS` to cap the worker pool.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    materialize_round, partition_quarters, sample_reference, Grouping, Manifest, Partition,
    RoundSets, ScenarioSpec,
};
use crate::error::{Error, Result};
use crate::eval::{per_disease_report, EvalReport, RocCurve, ScoreSplit};
use crate::features::{FeatureFile, FeatureRecord, FeatureSet};
use crate::head::{train, HeadConfig, LabeledSet, MetricHeadModel, TrainingTrace};
use crate::lof::{save_scores, score_batch, ReferenceGroup, ScoreRecord, DEFAULT_K};
use crate::scenario::template;
use crate::tsv;

pub const THREADS_ENV: &str = "OODR_THREADS";

const HEAD_STREAM: u64 = 1;
const REFERENCE_STREAM: u64 = 2;

/// A template name or an inline scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Named(String),
    Inline(ScenarioSpec),
}

impl ScenarioRef {
    pub fn resolve(&self) -> Result<ScenarioSpec> {
        let spec = match self {
            ScenarioRef::Named(name) => template(name)?,
            ScenarioRef::Inline(spec) => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn default_k() -> usize {
    DEFAULT_K
}

/// JSON experiment configuration. Relative paths are resolved against the
/// directory of the config file by [`ExperimentConfig::load`].
///
/// `head.input_dim` and `head.num_classes` are derived from the feature
/// files and the scenario; `head.seed` is derived per round from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub features: Vec<PathBuf>,
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default = "default_k")]
    pub lof_k: usize,
    /// Overrides the sample count of every reference group.
    #[serde(default)]
    pub reference_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grouping: Grouping,
    pub output_dir: PathBuf,
    /// Let augmented records enter reference groups.
    #[serde(default)]
    pub augmented_in_reference: bool,
    /// Operating threshold for TPR / FPR / TNR; defaults to the largest
    /// threshold at which every abnormal record is flagged.
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        fix(&mut cfg.manifest);
        cfg.features.iter_mut().for_each(fix);
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&tsv::read_text(path)?, base)
    }

    /// SHA-256 of the configuration with all paths removed.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            for key in ["manifest", "features", "output_dir"] {
                obj.remove(key);
            }
        }
        Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Feature rows from one or more files, addressable by id.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    dim: usize,
    index: HashMap<String, usize>,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn from_files(files: &[FeatureFile]) -> Result<Self> {
        let dim = files.first().map_or(0, |f| f.dim());
        let mut index = HashMap::new();
        let mut values = Vec::new();
        for f in files {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: f.dim(),
                });
            }
            for (i, id) in f.ids().iter().enumerate() {
                if index.insert(id.clone(), index.len()).is_some() {
                    return Err(Error::DuplicateId(id.clone()));
                }
                values.extend(f.row(i).iter().map(|&v| v as f64));
            }
        }
        Ok(Self { dim, index, values })
    }

    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        let files = paths
            .iter()
            .map(FeatureFile::load)
            .collect::<Result<Vec<_>>>()?;
        Self::from_files(&files)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index
            .get(id)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id)
            .ok_or_else(|| Error::MissingFeature(id.to_owned()))
    }
}

/// Every manifest id has a feature row and every scenario label is declared.
pub fn check_inputs(manifest: &Manifest, table: &FeatureTable, spec: &ScenarioSpec) -> Result<()> {
    for r in manifest.records() {
        table.require(&r.id)?;
    }
    for label in spec.labels() {
        if !manifest.labels().iter().any(|l| l == label) {
            return Err(Error::LabelMismatch(format!(
                "scenario {:?} uses {label:?}, which the manifest does not declare",
                spec.name
            )));
        }
    }
    Ok(())
}

/// Deterministic per-round seed for one pipeline stage.
pub fn derive_seed(base: u64, round: usize, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((round as u64) << 16) | stream);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSeeds {
    pub round: usize,
    pub head: u64,
    pub reference: BTreeMap<String, u64>,
}

impl RoundSeeds {
    pub fn derive(base: u64, round: usize, spec: &ScenarioSpec) -> Self {
        let reference = spec
            .reference_groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let stream = REFERENCE_STREAM + ((i as u64) << 8);
                (g.name.clone(), derive_seed(base, round, stream))
            })
            .collect();
        Self {
            round,
            head: derive_seed(base, round, HEAD_STREAM),
            reference,
        }
    }
}

/// Rejects train or validation ids whose class the head is not trained on.
pub fn check_learned_labels(
    sets: &RoundSets,
    manifest: &Manifest,
    train_labels: &[String],
) -> Result<()> {
    let by_id = manifest.by_id();
    for id in sets.train.iter().chain(&sets.validation) {
        let label = &by_id[id.as_str()].class_label;
        if !train_labels.contains(label) {
            return Err(Error::LabelMismatch(format!(
                "{id} ({label}) would enter training or validation but is not a trained class"
            )));
        }
    }
    Ok(())
}

pub fn labeled_set(
    ids: &[String],
    manifest: &Manifest,
    table: &FeatureTable,
    train_labels: &[String],
) -> Result<LabeledSet> {
    let by_id = manifest.by_id();
    let mut set = LabeledSet::new(table.dim());
    for id in ids {
        let label = &by_id[id.as_str()].class_label;
        let class = train_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| {
                Error::LabelMismatch(format!("{id} ({label}) is not a trained class"))
            })?;
        set.push(table.require(id)?, class)?;
    }
    Ok(set)
}

/// Embeds `ids` with `model` (or passes raw features through when `None`).
pub fn embed_ids(
    model: Option<&MetricHeadModel>,
    ids: &[String],
    manifest: &Manifest,
    table: &FeatureTable,
) -> Result<FeatureSet> {
    let by_id = manifest.by_id();
    let records = ids
        .par_iter()
        .map(|id| {
            let x = table.require(id)?;
            let vector = match model {
                Some(m) => m.forward_embed(x)?,
                None => x.to_vec(),
            };
            let class_label = by_id
                .get(id.as_str())
                .map(|r| r.class_label.clone())
                .ok_or_else(|| Error::MissingFeature(format!("{id} is not in the manifest")))?;
            Ok(FeatureRecord {
                id: id.clone(),
                class_label,
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = match model {
        Some(m) => m.config().embed_dim,
        None => table.dim(),
    };
    FeatureSet::from_records(dim, records)
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round: usize,
    pub sets: RoundSets,
    pub seeds: RoundSeeds,
    pub model: MetricHeadModel,
    pub trace: TrainingTrace,
    pub references: BTreeMap<String, Vec<String>>,
    pub scores: Vec<ScoreRecord>,
    pub report: EvalReport,
}

/// Loaded and validated inputs of an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ScenarioSpec,
    pub manifest: Manifest,
    pub table: FeatureTable,
    pub partition: Partition,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = cfg.scenario.resolve()?;
        let manifest = Manifest::load(&cfg.manifest)?;
        let table = FeatureTable::load(&cfg.features)?;
        check_inputs(&manifest, &table, &spec)?;
        let partition = partition_quarters(&manifest, cfg.seed, cfg.grouping)?;
        Ok(Self {
            spec,
            manifest,
            table,
            partition,
        })
    }
}

/// Resolved sets, seeds and trained head of one round.
#[derive(Debug, Clone)]
pub struct TrainedRound {
    pub round: usize,
    pub sets: RoundSets,
    pub seeds: RoundSeeds,
    pub model: MetricHeadModel,
    pub trace: TrainingTrace,
}

/// Resolved sets and derived seeds of one round.
pub fn plan_round(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    round: usize,
) -> Result<(RoundSets, RoundSeeds)> {
    let sets = materialize_round(&prep.spec, &prep.manifest, &prep.partition, round)?;
    check_learned_labels(&sets, &prep.manifest, &prep.spec.train_labels())?;
    Ok((sets, RoundSeeds::derive(cfg.seed, round, &prep.spec)))
}

pub fn train_round(cfg: &ExperimentConfig, prep: &Prepared, round: usize) -> Result<TrainedRound> {
    let Prepared {
        spec,
        manifest,
        table,
        ..
    } = prep;
    let (sets, seeds) = plan_round(cfg, prep, round)?;
    let train_labels = spec.train_labels();
    let head_cfg = HeadConfig {
        input_dim: table.dim(),
        num_classes: train_labels.len(),
        seed: seeds.head,
        ..cfg.head.clone()
    };
    let train_set = labeled_set(&sets.train, manifest, table, &train_labels)?;
    let val_set = labeled_set(&sets.validation, manifest, table, &train_labels)?;
    let (model, trace) = train(&train_set, &val_set, &head_cfg)?;
    info!(
        "{} round {round}: trained on {} ids, best epoch {}",
        spec.name,
        sets.train.len(),
        trace.best_epoch
    );
    Ok(TrainedRound {
        round,
        sets,
        seeds,
        model,
        trace,
    })
}

/// Embedded reference samples of one group.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    pub name: String,
    pub ids: Vec<String>,
    pub embedded: FeatureSet,
}

/// Draws every reference group of the scenario from the round's training
/// ids and embeds it with the round's head.
pub fn draw_references(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    sets: &RoundSets,
    seeds: &RoundSeeds,
    model: &MetricHeadModel,
) -> Result<Vec<ReferenceSample>> {
    prep.spec
        .reference_groups
        .iter()
        .map(|g| {
            let mut g = g.clone();
            if let Some(n) = cfg.reference_size {
                g.sample_count = n;
            }
            let draw = sample_reference(
                &g,
                &sets.train,
                &prep.manifest,
                seeds.reference[&g.name],
                cfg.augmented_in_reference,
            )?;
            let embedded = embed_ids(Some(model), &draw.ids, &prep.manifest, &prep.table)?;
            Ok(ReferenceSample {
                name: g.name,
                ids: draw.ids,
                embedded,
            })
        })
        .collect()
}

/// Runs one round end to end.
pub fn run_round(cfg: &ExperimentConfig, prep: &Prepared, round: usize) -> Result<RoundResult> {
    let trained = train_round(cfg, prep, round)?;
    let samples = draw_references(cfg, prep, &trained.sets, &trained.seeds, &trained.model)?;
    let groups = samples
        .iter()
        .map(|s| ReferenceGroup::from_feature_set(&s.name, &s.embedded, cfg.lof_k))
        .collect::<Result<Vec<_>>>()?;
    let references = samples.into_iter().map(|s| (s.name, s.ids)).collect();

    let TrainedRound {
        sets,
        seeds,
        model,
        trace,
        ..
    } = trained;
    let test = embed_ids(Some(&model), &sets.test, &prep.manifest, &prep.table)?;
    let scores = score_batch(&groups, &test, cfg.threshold)?;
    let report = per_disease_report(&scores, cfg.threshold)?;
    assert_eq!(scores.len(), sets.test.len());
    assert_eq!(report.counts.total(), sets.test.len());

    Ok(RoundResult {
        round,
        sets,
        seeds,
        model,
        trace,
        references,
        scores,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: String,
    pub manifest_sha256: String,
    pub features_sha256: Vec<String>,
    pub seed: u64,
    pub round_seeds: Vec<RoundSeeds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub best_epoch: usize,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub reference_counts: BTreeMap<String, usize>,
    pub report: EvalReport,
}

fn round7<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e7).round() / 1e7)
}

/// Top-level `report.json`. `auc` and `fpr_at_tpr1` repeat the pooled values;
/// the `mean_*` fields average the per-round values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    #[serde(serialize_with = "round7")]
    pub auc: f64,
    #[serde(serialize_with = "round7")]
    pub fpr_at_tpr1: f64,
    #[serde(serialize_with = "round7")]
    pub mean_auc: f64,
    #[serde(serialize_with = "round7")]
    pub mean_fpr_at_tpr1: f64,
    pub pooled: EvalReport,
    pub rounds: Vec<RoundSummary>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&tsv::read_text(path.as_ref())?)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub rounds: Vec<RoundResult>,
    pub pooled_scores: Vec<ScoreRecord>,
}

/// Worker pool sized by `OODR_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Executes every round and writes all artifacts under `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    thread_pool()?.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<RunResult> {
    let prep = Prepared::load(cfg)?;
    let spec = &prep.spec;
    let rounds = (1..=spec.rotation.rounds())
        .into_par_iter()
        .map(|r| run_round(cfg, &prep, r))
        .collect::<Result<Vec<_>>>()?;

    let pooled_scores: Vec<ScoreRecord> = rounds.iter().flat_map(|r| r.scores.clone()).collect();
    let pooled = per_disease_report(&pooled_scores, cfg.threshold)?;
    let n = rounds.len() as f64;
    let provenance = Provenance {
        version: crate::VERSION.to_owned(),
        config_sha256: cfg.hash()?,
        manifest_sha256: file_sha256(&cfg.manifest)?,
        features_sha256: cfg
            .features
            .iter()
            .map(|p| file_sha256(p))
            .collect::<Result<_>>()?,
        seed: cfg.seed,
        round_seeds: rounds.iter().map(|r| r.seeds.clone()).collect(),
    };
    let report = RunReport {
        scenario: spec.name.clone(),
        auc: pooled.auc,
        fpr_at_tpr1: pooled.fpr_at_tpr1,
        mean_auc: rounds.iter().map(|r| r.report.auc).sum::<f64>() / n,
        mean_fpr_at_tpr1: rounds.iter().map(|r| r.report.fpr_at_tpr1).sum::<f64>() / n,
        pooled,
        rounds: rounds
            .iter()
            .map(|r| RoundSummary {
                round: r.round,
                best_epoch: r.trace.best_epoch,
                train_count: r.sets.train.len(),
                validation_count: r.sets.validation.len(),
                test_count: r.sets.test.len(),
                reference_counts: r
                    .references
                    .iter()
                    .map(|(k, v)| (k.clone(), v.len()))
                    .collect(),
                report: r.report.clone(),
            })
            .collect(),
        provenance,
    };
    let result = RunResult {
        report,
        rounds,
        pooled_scores,
    };
    write_outputs(cfg, &prep.partition, &result)?;
    Ok(result)
}

fn write_outputs(cfg: &ExperimentConfig, partition: &Partition, result: &RunResult) -> Result<()> {
    let dir = &cfg.output_dir;
    let stamp = format!(
        "#config_sha256 {}\n",
        result.report.provenance.config_sha256
    );
    tsv::write_text(
        &dir.join("config.json"),
        &(serde_json::to_string_pretty(cfg)? + "\n"),
    )?;
    tsv::write_text(
        &dir.join("folds.tsv"),
        &(stamp.clone() + &partition.to_tsv()),
    )?;
    for r in &result.rounds {
        let rd = dir.join(format!("round_{}", r.round));
        r.model.save(rd.join("model.mhd"))?;
        tsv::write_text(&rd.join("trace.tsv"), &(stamp.clone() + &r.trace.to_tsv()))?;
        for (name, ids) in &r.references {
            let body: String = ids.iter().map(|id| format!("{id}\n")).collect();
            tsv::write_text(
                &rd.join(format!("reference_{name}.txt")),
                &(stamp.clone() + &body),
            )?;
        }
        save_scores(&r.scores, rd.join("scores.tsv"))?;
        let text = tsv::read_text(&rd.join("scores.tsv"))?;
        tsv::write_text(&rd.join("scores.tsv"), &(stamp.clone() + &text))?;
        let roc = RocCurve::from_split(&ScoreSplit::from_records(&r.scores))?;
        tsv::write_text(&rd.join("roc.tsv"), &(stamp.clone() + &roc.to_tsv()))?;
        tsv::write_text(&rd.join("report.json"), &(r.report.to_json()? + "\n"))?;
    }
    tsv::write_text(&dir.join("report.json"), &result.report.to_json()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{QuarterSel, ReferenceGroupSpec, Rotation, SetEntry};
    use crate::synthetic::{write_synthetic, ClusterSpec, Spread, SyntheticConfig};

    fn axis(dim: usize, i: usize, s: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = s;
        v
    }

    fn fixture(dir: &Path, labels: &[&str], count: usize) -> ExperimentConfig {
        let dim = labels.len().max(6);
        let synth = SyntheticConfig {
            dim,
            seed: 5,
            clusters: labels
                .iter()
                .enumerate()
                .map(|(i, l)| ClusterSpec {
                    label: l.to_string(),
                    count,
                    mean: axis(dim, i, 8.0),
                    std: Spread::Isotropic(1.0),
                })
                .collect(),
        };
        write_synthetic(&synth, dir).unwrap();
        ExperimentConfig {
            manifest: dir.join("manifest.tsv"),
            features: vec![dir.join("features.feat1")],
            scenario: ScenarioRef::Named("fig1_cnv".into()),
            head: HeadConfig {
                hidden_dims: vec![16],
                embed_dim: 8,
                epochs: 3,
                ..HeadConfig::default()
            },
            lof_k: 5,
            reference_size: None,
            seed: 3,
            grouping: Grouping::ByImage,
            output_dir: dir.join("out"),
            augmented_in_reference: false,
            threshold: None,
        }
    }

    const ALPHA: [&str; 4] = ["normal_a", "cnv_a", "drusen_a", "dme_a"];

    #[test]
    fn fig1_rounds_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path(), &ALPHA, 40);
        let res = run(&cfg).unwrap();
        assert_eq!(res.rounds.len(), 4);
        let manifest = Manifest::load(&cfg.manifest).unwrap();
        for r in &res.rounds {
            let test_labels: std::collections::BTreeSet<_> = r
                .sets
                .test
                .iter()
                .map(|id| manifest.get(id).unwrap().class_label.as_str())
                .collect();
            let unseen: Vec<_> = test_labels
                .iter()
                .filter(|l| !["normal_a", "cnv_a"].contains(l))
                .collect();
            assert_eq!(unseen.len(), 2);
            assert_eq!(r.scores.len(), r.sets.test.len());
            assert_eq!(r.references["normal_a"].len(), 20);
            let rd = cfg.output_dir.join(format!("round_{}", r.round));
            for f in [
                "model.mhd",
                "trace.tsv",
                "scores.tsv",
                "roc.tsv",
                "report.json",
                "reference_normal_a.txt",
            ] {
                assert!(rd.join(f).exists(), "{f}");
            }
            let back = crate::lof::load_scores(rd.join("scores.tsv")).unwrap();
            assert_eq!(back.len(), r.scores.len());
        }
        let report = RunReport::load(cfg.output_dir.join("report.json")).unwrap();
        assert_eq!(report.rounds.len(), 4);
        assert_eq!(report.pooled.counts.total(), 4 * 40);
        assert_eq!(report.provenance.round_seeds.len(), 4);
        Partition::load(cfg.output_dir.join("folds.tsv")).unwrap();
    }

    #[test]
    fn supp1_single_round_on_independent_test() {
        let dir = tempfile::tempdir().unwrap();
        let labels = [
            "normal_a", "cnv_a", "drusen_a", "dme_a", "normal_i", "cnv_i", "drusen_i", "dme_i",
        ];
        let mut cfg = fixture(dir.path(), &labels, 12);
        cfg.scenario = ScenarioRef::Named("supp1".into());
        let res = run(&cfg).unwrap();
        assert_eq!(res.rounds.len(), 1);
        let r = &res.rounds[0];
        assert!(r.sets.test.iter().all(|id| id.contains("_i_")));
        assert!(r
            .sets
            .train
            .iter()
            .chain(&r.sets.validation)
            .all(|id| id.contains("_a_")));
        assert_eq!(r.sets.test.len(), 48);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path(), &ALPHA, 24);
        run(&cfg).unwrap();
        let first = std::fs::read(cfg.output_dir.join("report.json")).unwrap();
        let scores = std::fs::read(cfg.output_dir.join("round_2/scores.tsv")).unwrap();
        run(&cfg).unwrap();
        assert_eq!(
            first,
            std::fs::read(cfg.output_dir.join("report.json")).unwrap()
        );
        assert_eq!(
            scores,
            std::fs::read(cfg.output_dir.join("round_2/scores.tsv")).unwrap()
        );
    }

    #[test]
    fn missing_feature_and_label_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path(), &ALPHA, 8);
        let manifest = Manifest::load(&cfg.manifest).unwrap();
        let table = FeatureTable::load(&cfg.features).unwrap();

        let spec = template("fig2").unwrap();
        assert!(matches!(
            check_inputs(&manifest, &table, &spec),
            Err(Error::LabelMismatch(_))
        ));

        let file = FeatureFile::load(&cfg.features[0]).unwrap();
        let n = file.len() - 1;
        let trimmed = FeatureFile::new(
            file.ids()[..n].to_vec(),
            file.dim(),
            file.values()[..n * file.dim()].to_vec(),
        )
        .unwrap();
        let short = FeatureTable::from_files(&[trimmed]).unwrap();
        let spec = template("fig1_cnv").unwrap();
        assert!(matches!(
            check_inputs(&manifest, &short, &spec),
            Err(Error::MissingFeature(_))
        ));
        assert!(matches!(
            FeatureTable::from_files(&[file.clone(), file]),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn untrained_validation_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path(), &ALPHA, 8);
        let q = |v: &[u8]| QuarterSel::quarters(v.iter().copied());
        cfg.scenario = ScenarioRef::Inline(ScenarioSpec {
            name: "leaky".into(),
            train: vec![
                SetEntry::new("normal_a", q(&[1, 2])),
                SetEntry::new("cnv_a", q(&[1, 2])),
            ],
            validation: vec![SetEntry::new("drusen_a", q(&[3]))],
            test: vec![
                SetEntry::new("normal_a", q(&[4])),
                SetEntry::new("dme_a", q(&[4])),
            ],
            reference_groups: vec![ReferenceGroupSpec {
                name: "n".into(),
                class_label: "normal_a".into(),
                sample_count: 10,
            }],
            rotation: Rotation::Fixed,
        });
        assert!(matches!(run(&cfg), Err(Error::LabelMismatch(_))));
    }

    #[test]
    fn config_paths_and_hash() {
        let json = r#"{"manifest":"m.tsv","features":["a.feat1"],"scenario":"fig3","output_dir":"out","head":{"epochs":2}}"#;
        let cfg = ExperimentConfig::from_json(json, Path::new("/data/exp")).unwrap();
        assert_eq!(cfg.manifest, Path::new("/data/exp/m.tsv"));
        assert_eq!(cfg.lof_k, DEFAULT_K);
        assert_eq!(cfg.head.epochs, 2);
        assert_eq!(cfg.head.embed_dim, 128);
        let moved = ExperimentConfig::from_json(json, Path::new("/elsewhere")).unwrap();
        assert_eq!(cfg.hash().unwrap(), moved.hash().unwrap());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(cfg.hash().unwrap(), other.hash().unwrap());
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#, Path::new("")).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_round_and_stage() {
        let spec = template("fig2").unwrap();
        let a = RoundSeeds::derive(7, 1, &spec);
        let b = RoundSeeds::derive(7, 2, &spec);
        assert_ne!(a.head, b.head);
        assert_ne!(a.reference["normal_a"], a.reference["normal_b"]);
        assert_eq!(a, RoundSeeds::derive(7, 1, &spec));
    }
}
