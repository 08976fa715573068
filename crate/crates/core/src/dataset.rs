//! Sample manifests, per-class quartering, scenario round resolution and
//! reference-normal sampling.
//!
//! Manifest format (UTF-8, tab separated):
//!
//! ```text
//! #labels: normal_a,cnv_a,drusen_a,dme_a
//! img_0001<TAB>normal_a<TAB>images/img_0001.png<TAB>patient_17
//! img_0002<TAB>cnv_a<TAB>images/img_0002.png<TAB>-
//! img_0002_aug1<TAB>cnv_a<TAB>aug/img_0002_aug1.png<TAB>-<TAB>img_0002
//! ```
//!
//! The optional fifth column names the parent of an augmented record.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsv;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Original,
    Augmented { parent: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub class_label: String,
    pub source_path: String,
    pub patient_id: Option<String>,
    pub origin: Origin,
}

impl SampleRecord {
    pub fn original(id: &str, class_label: &str, source_path: &str) -> Self {
        Self {
            id: id.to_owned(),
            class_label: class_label.to_owned(),
            source_path: source_path.to_owned(),
            patient_id: None,
            origin: Origin::Original,
        }
    }

    pub fn is_augmented(&self) -> bool {
        matches!(self.origin, Origin::Augmented { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    labels: Vec<String>,
    records: Vec<SampleRecord>,
}

impl Manifest {
    /// Validates id uniqueness, declared labels and augmented parents.
    pub fn new(labels: Vec<String>, records: Vec<SampleRecord>) -> Result<Self> {
        let declared: HashSet<&str> = labels.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if !declared.contains(r.class_label.as_str()) {
                return Err(Error::UnknownLabel {
                    line: i + 2,
                    label: r.class_label.clone(),
                });
            }
        }
        for r in &records {
            if let Origin::Augmented { parent } = &r.origin {
                if !seen.contains(parent.as_str()) {
                    return Err(Error::InvalidScenario(format!(
                        "augmented record {:?} names unknown parent {parent:?}",
                        r.id
                    )));
                }
            }
        }
        Ok(Self { labels, records })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut labels: Option<Vec<String>> = None;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#labels:") {
                if labels.is_some() || !records.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "the #labels header must come first and only once".into(),
                    });
                }
                labels = Some(
                    rest.split(',')
                        .map(|s| s.trim().to_owned())
                        .filter(|s| !s.is_empty())
                        .collect(),
                );
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let Some(declared) = labels.as_ref() else {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing `#labels:` header before the first record".into(),
                });
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 && fields.len() != 5 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!(
                        "expected 4 or 5 tab-separated fields, found {}",
                        fields.len()
                    ),
                });
            }
            let id = fields[0];
            if id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty id".into(),
                });
            }
            if !declared.iter().any(|l| l == fields[1]) {
                return Err(Error::UnknownLabel {
                    line: line_no,
                    label: fields[1].to_owned(),
                });
            }
            if !seen.insert(id.to_owned()) {
                return Err(Error::DuplicateId(id.to_owned()));
            }
            let optional = |s: &str| (s != "-" && !s.is_empty()).then(|| s.to_owned());
            let origin = match fields.get(4).and_then(|s| optional(s)) {
                Some(parent) => Origin::Augmented { parent },
                None => Origin::Original,
            };
            records.push(SampleRecord {
                id: id.to_owned(),
                class_label: fields[1].to_owned(),
                source_path: fields[2].to_owned(),
                patient_id: optional(fields[3]),
                origin,
            });
        }
        Self::new(labels.unwrap_or_default(), records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&tsv::read_text(path.as_ref())?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#labels: {}\n", self.labels.join(","));
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}",
                r.id,
                r.class_label,
                r.source_path,
                r.patient_id.as_deref().unwrap_or("-")
            ));
            if let Origin::Augmented { parent } = &r.origin {
                out.push('\t');
                out.push_str(parent);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        tsv::write_text(path.as_ref(), &self.to_tsv())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn by_id(&self) -> HashMap<&str, &SampleRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Original records per class label, in manifest order.
    pub fn originals_by_class(&self) -> BTreeMap<&str, Vec<&SampleRecord>> {
        let mut map: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| !r.is_augmented()) {
            map.entry(r.class_label.as_str()).or_default().push(r);
        }
        map
    }
}

/// Unit of random quartering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    ByImage,
    ByPatient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuarterAssignment {
    pub sample_id: String,
    pub quarter: u8,
}

/// Result of quartering a manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    quarters: BTreeMap<String, u8>,
    dropped: Vec<String>,
    quarter_sizes: BTreeMap<String, usize>,
}

impl Partition {
    pub fn quarter_of(&self, id: &str) -> Option<u8> {
        self.quarters.get(id).copied()
    }

    /// Ids left out because their class count was not a multiple of four.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    /// Per-class size of every quarter (originals only).
    pub fn quarter_sizes(&self) -> &BTreeMap<String, usize> {
        &self.quarter_sizes
    }

    pub fn assignments(&self) -> impl Iterator<Item = QuarterAssignment> + '_ {
        self.quarters.iter().map(|(id, &q)| QuarterAssignment {
            sample_id: id.clone(),
            quarter: q,
        })
    }

    pub fn len(&self) -> usize {
        self.quarters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quarters.is_empty()
    }

    /// `id<TAB>quarter` lines sorted by id.
    pub fn to_tsv(&self) -> String {
        self.quarters
            .iter()
            .map(|(id, q)| format!("{id}\t{q}\n"))
            .collect()
    }

    /// Reads an exported fold file. Quarter sizes are not recoverable from
    /// it and stay empty.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut quarters = BTreeMap::new();
        for (line, l) in tsv::data_lines(text) {
            let (id, q) = l.split_once('\t').ok_or_else(|| Error::Parse {
                line,
                message: "expected `id<TAB>quarter`".into(),
            })?;
            let q: u8 = q
                .trim()
                .parse()
                .ok()
                .filter(|q| (1..=4).contains(q))
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("quarter {q:?} is not in 1..4"),
                })?;
            if quarters.insert(id.to_owned(), q).is_some() {
                return Err(Error::DuplicateId(id.to_owned()));
            }
        }
        Ok(Self {
            quarters,
            ..Self::default()
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&tsv::read_text(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        tsv::write_text(path.as_ref(), &self.to_tsv())
    }
}

/// Splits every class into four equally sized quarters.
///
/// Original records are shuffled by a seeded generator (per class for
/// `ByImage`, per patient for `ByPatient`) and dealt into quarters; the
/// `count mod 4` trailing records of the shuffled order are dropped. Augmented
/// records inherit the quarter of their parent.
pub fn partition_quarters(manifest: &Manifest, seed: u64, grouping: Grouping) -> Result<Partition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = manifest.originals_by_class();
    let mut quarters = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut quarter_sizes = BTreeMap::new();

    match grouping {
        Grouping::ByImage => {
            for (class, members) in &by_class {
                if members.len() < 4 {
                    return Err(Error::ClassTooSmall {
                        class: (*class).to_owned(),
                        count: members.len(),
                    });
                }
                let mut ids: Vec<&str> = members.iter().map(|r| r.id.as_str()).collect();
                ids.sort_unstable();
                ids.shuffle(&mut rng);
                let size = ids.len() / 4;
                for (i, id) in ids.iter().enumerate() {
                    if i < 4 * size {
                        quarters.insert((*id).to_owned(), (i / size) as u8 + 1);
                    } else {
                        dropped.push((*id).to_owned());
                    }
                }
                quarter_sizes.insert((*class).to_owned(), size);
            }
        }
        Grouping::ByPatient => {
            partition_by_patient(
                &by_class,
                &mut rng,
                &mut quarters,
                &mut dropped,
                &mut quarter_sizes,
            )?;
        }
    }

    for r in manifest.records() {
        if let Origin::Augmented { parent } = &r.origin {
            if let Some(&q) = quarters.get(parent) {
                quarters.insert(r.id.clone(), q);
            }
        }
    }

    if !dropped.is_empty() {
        info!(
            "quartering dropped {} remainder samples: {:?}",
            dropped.len(),
            dropped
        );
    }
    Ok(Partition {
        quarters,
        dropped,
        quarter_sizes,
    })
}

fn partition_by_patient(
    by_class: &BTreeMap<&str, Vec<&SampleRecord>>,
    rng: &mut ChaCha8Rng,
    quarters: &mut BTreeMap<String, u8>,
    dropped: &mut Vec<String>,
    quarter_sizes: &mut BTreeMap<String, usize>,
) -> Result<()> {
    // Records without a patient id form their own unit.
    let unit_of = |r: &SampleRecord| match &r.patient_id {
        Some(p) => format!("p:{p}"),
        None => format!("i:{}", r.id),
    };
    let mut units: BTreeMap<String, Vec<&SampleRecord>> = BTreeMap::new();
    for (class, members) in by_class {
        let patients: BTreeSet<String> = members.iter().map(|r| unit_of(r)).collect();
        if patients.len() < 4 {
            return Err(Error::ClassTooSmall {
                class: (*class).to_owned(),
                count: patients.len(),
            });
        }
        for r in members {
            units.entry(unit_of(r)).or_default().push(r);
        }
    }
    let mut order: Vec<&String> = units.keys().collect();
    order.shuffle(rng);

    let mut load: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    let mut placed: BTreeMap<&str, [Vec<&str>; 4]> = BTreeMap::new();
    for key in order {
        let members = &units[key];
        let mut best = 0;
        let mut best_cost = usize::MAX;
        for q in 0..4 {
            let cost: usize = members
                .iter()
                .map(|r| load.get(r.class_label.as_str()).map_or(0, |l| l[q]))
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best = q;
            }
        }
        for r in members {
            load.entry(r.class_label.as_str()).or_default()[best] += 1;
            placed.entry(r.class_label.as_str()).or_default()[best].push(r.id.as_str());
        }
    }
    for (class, slots) in placed {
        let size = slots.iter().map(Vec::len).min().unwrap_or(0);
        for (q, ids) in slots.iter().enumerate() {
            for (i, id) in ids.iter().enumerate() {
                if i < size {
                    quarters.insert((*id).to_owned(), q as u8 + 1);
                } else {
                    dropped.push((*id).to_owned());
                }
            }
        }
        quarter_sizes.insert(class.to_owned(), size);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    #[default]
    Fourfold,
    Fixed,
}

impl Rotation {
    pub fn rounds(self) -> usize {
        match self {
            Rotation::Fourfold => 4,
            Rotation::Fixed => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Rotation::Fourfold => "fourfold",
            Rotation::Fixed => "fixed",
        }
    }
}

/// Which part of a class an entry covers: a set of quarters, or the whole
/// class (serialized as `"all"`), which is never rotated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuarterSel {
    Quarters(BTreeSet<u8>),
    All,
}

#[derive(Serialize, Deserialize)]
enum Keyword {
    #[serde(rename = "all")]
    All,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum QuarterSelRepr {
    Quarters(BTreeSet<u8>),
    Keyword(Keyword),
}

impl Serialize for QuarterSel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            QuarterSel::Quarters(qs) => qs.serialize(s),
            QuarterSel::All => Keyword::All.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for QuarterSel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match QuarterSelRepr::deserialize(d)? {
            QuarterSelRepr::Quarters(qs) => QuarterSel::Quarters(qs),
            QuarterSelRepr::Keyword(Keyword::All) => QuarterSel::All,
        })
    }
}

impl QuarterSel {
    pub fn quarters(qs: impl IntoIterator<Item = u8>) -> Self {
        QuarterSel::Quarters(qs.into_iter().collect())
    }

    fn rotated(&self, shift: usize) -> Self {
        match self {
            QuarterSel::All => QuarterSel::All,
            QuarterSel::Quarters(qs) => QuarterSel::Quarters(
                qs.iter()
                    .map(|&q| ((q as usize - 1 + shift) % 4) as u8 + 1)
                    .collect(),
            ),
        }
    }

    fn overlaps(&self, other: &Self) -> bool {
        match (self, other) {
            (QuarterSel::Quarters(a), QuarterSel::Quarters(b)) => !a.is_disjoint(b),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetEntry {
    pub class_label: String,
    pub quarters: QuarterSel,
}

impl SetEntry {
    pub fn new(class_label: &str, quarters: QuarterSel) -> Self {
        Self {
            class_label: class_label.to_owned(),
            quarters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceGroupSpec {
    pub name: String,
    pub class_label: String,
    pub sample_count: usize,
}

/// Declarative train / validation / test layout of one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub train: Vec<SetEntry>,
    pub validation: Vec<SetEntry>,
    pub test: Vec<SetEntry>,
    pub reference_groups: Vec<ReferenceGroupSpec>,
    #[serde(default)]
    pub rotation: Rotation,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(format!("{}: {m}", self.name)));
        let sets = [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ];
        let mut all: Vec<(&str, &SetEntry)> = Vec::new();
        for (set, entries) in sets {
            for e in entries {
                if let QuarterSel::Quarters(qs) = &e.quarters {
                    if qs.is_empty() || qs.iter().any(|q| !(1..=4).contains(q)) {
                        return bad(format!(
                            "{set} entry {:?} needs quarters in 1..4",
                            e.class_label
                        ));
                    }
                }
                for (other_set, other) in &all {
                    if other.class_label == e.class_label && other.quarters.overlaps(&e.quarters) {
                        return bad(format!(
                            "class {:?} is used by both {other_set} and {set}",
                            e.class_label
                        ));
                    }
                }
                all.push((set, e));
            }
        }
        if self.train.is_empty() || self.test.is_empty() {
            return bad("train and test sets must be nonempty".into());
        }
        let mut names = HashSet::new();
        for g in &self.reference_groups {
            if !names.insert(g.name.as_str()) {
                return bad(format!("reference group {:?} declared twice", g.name));
            }
            if !self.train.iter().any(|e| e.class_label == g.class_label) {
                return bad(format!(
                    "reference group {:?} draws from {:?}, which is not a training class",
                    g.name, g.class_label
                ));
            }
        }
        if self.reference_groups.is_empty() {
            return bad("at least one reference group is required".into());
        }
        Ok(())
    }

    /// Distinct training class labels in declaration order; their position
    /// is the class index the embedding head learns.
    pub fn train_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.train {
            if !out.contains(&e.class_label) {
                out.push(e.class_label.clone());
            }
        }
        out
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .map(|e| e.class_label.as_str())
            .collect()
    }
}

/// Ids of one resolved round, each list in manifest order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundSets {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Resolves `spec` for a 1-based round. Quarter sets rotate cyclically by
/// `round - 1`. Augmented records only ever enter the training set.
pub fn materialize_round(
    spec: &ScenarioSpec,
    manifest: &Manifest,
    partition: &Partition,
    round: usize,
) -> Result<RoundSets> {
    if round == 0 || round > spec.rotation.rounds() {
        return Err(Error::InvalidRound {
            round,
            rotation: spec.rotation.name(),
        });
    }
    let shift = round - 1;
    let resolve = |entries: &[SetEntry], allow_augmented: bool| -> Vec<String> {
        let wanted: Vec<(&str, QuarterSel)> = entries
            .iter()
            .map(|e| (e.class_label.as_str(), e.quarters.rotated(shift)))
            .collect();
        let mut ids = Vec::new();
        let mut skipped = 0usize;
        for r in manifest.records() {
            let hit = wanted.iter().any(|(class, sel)| {
                *class == r.class_label
                    && match sel {
                        QuarterSel::All => true,
                        QuarterSel::Quarters(qs) => {
                            partition.quarter_of(&r.id).is_some_and(|q| qs.contains(&q))
                        }
                    }
            });
            if !hit {
                continue;
            }
            if r.is_augmented() && !allow_augmented {
                skipped += 1;
                continue;
            }
            ids.push(r.id.clone());
        }
        if skipped > 0 {
            warn!("{skipped} augmented records excluded from a validation/test set");
        }
        ids
    };
    let sets = RoundSets {
        train: resolve(&spec.train, true),
        validation: resolve(&spec.validation, false),
        test: resolve(&spec.test, false),
    };
    let mut seen = HashSet::new();
    for id in sets.train.iter().chain(&sets.validation).chain(&sets.test) {
        if !seen.insert(id.as_str()) {
            return Err(Error::Overlap(id.clone()));
        }
    }
    Ok(sets)
}

/// Reference ids drawn for one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceDraw {
    pub ids: Vec<String>,
    /// How many fewer ids than requested were available.
    pub shortfall: usize,
}

/// Draws `min(n, available)` distinct training ids of the group's class
/// uniformly without replacement.
pub fn sample_reference(
    group: &ReferenceGroupSpec,
    train_ids: &[String],
    manifest: &Manifest,
    seed: u64,
    include_augmented: bool,
) -> Result<ReferenceDraw> {
    let by_id = manifest.by_id();
    let candidates: Vec<&String> = train_ids
        .iter()
        .filter(|id| {
            by_id.get(id.as_str()).is_some_and(|r| {
                r.class_label == group.class_label && (include_augmented || !r.is_augmented())
            })
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::UnknownGroup(group.name.clone()));
    }
    let take = group.sample_count.min(candidates.len());
    let shortfall = group.sample_count - take;
    if shortfall > 0 {
        warn!(
            "reference group {:?}: requested {} but only {} available",
            group.name,
            group.sample_count,
            candidates.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = rand::seq::index::sample(&mut rng, candidates.len(), take)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    Ok(ReferenceDraw { ids, shortfall })
}
