//! Gaussian cluster generator for desk-scale experiments.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, SampleRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureFile, TrueLabel};

/// Per-cluster standard deviation: one value for all axes or one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spread {
    Isotropic(f64),
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub label: String,
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub seed: u64,
    pub clusters: Vec<ClusterSpec>,
}

impl SyntheticConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = crate::tsv::read_text(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        if self.clusters.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one cluster is required".into(),
            ));
        }
        if !self
            .clusters
            .iter()
            .any(|c| TrueLabel::from_class_label(&c.label) == TrueLabel::Normal)
        {
            return Err(Error::InvalidConfig(
                "one cluster must be a normal class".into(),
            ));
        }
        for c in &self.clusters {
            if c.mean.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: c.mean.len(),
                });
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::NonFinite(format!("mean of {:?}", c.label)));
            }
            let stds: Vec<f64> = match &c.std {
                Spread::Isotropic(s) => vec![*s],
                Spread::Diagonal(v) => {
                    if v.len() != self.dim {
                        return Err(Error::DimensionMismatch {
                            expected: self.dim,
                            found: v.len(),
                        });
                    }
                    v.clone()
                }
            };
            if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::DegenerateCovariance(c.label.clone()));
            }
        }
        Ok(())
    }
}

/// Draws every cluster and returns the matching manifest and feature file.
/// Ids are `<label>_<index>`; output is a pure function of the config.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<(Manifest, FeatureFile)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<String> = Vec::new();
    let mut records = Vec::new();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for c in &cfg.clusters {
        if !labels.contains(&c.label) {
            labels.push(c.label.clone());
        }
        for i in 0..c.count {
            let id = format!("{}_{i:05}", c.label);
            for (axis, &m) in c.mean.iter().enumerate() {
                let s = match &c.std {
                    Spread::Isotropic(s) => *s,
                    Spread::Diagonal(v) => v[axis],
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push((m + s * z) as f32);
            }
            records.push(SampleRecord::original(
                &id,
                &c.label,
                &format!("synthetic/{id}"),
            ));
            ids.push(id);
        }
    }
    let manifest = Manifest::new(labels, records)?;
    let features = FeatureFile::new(ids, cfg.dim, values)?;
    Ok((manifest, features))
}

/// Writes `manifest.tsv` and `features.feat1` into `dir`.
pub fn write_synthetic(
    cfg: &SyntheticConfig,
    dir: impl AsRef<Path>,
) -> Result<(Manifest, FeatureFile)> {
    let dir = dir.as_ref();
    let (manifest, features) = make_synthetic(cfg)?;
    manifest.save(dir.join("manifest.tsv"))?;
    features.save(dir.join("features.feat1"))?;
    Ok((manifest, features))
}
