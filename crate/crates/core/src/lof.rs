//! Local Outlier Factor in novelty mode.
//!
//! A [`ReferenceGroup`] holds normal embeddings together with each point's
//! k-distance and local reachability density (lrd). Queries are scored
//! against the group without joining it:
//!
//! ```text
//! reach(a, o) = max(k_distance(o), d(a, o))
//! lrd(a)      = |N_k(a)| / sum_{o in N_k(a)} reach(a, o)
//! LOF(q)      = mean_{o in N_k(q)} lrd(o) / lrd(q)
//! ```
//!
//! `N_k(a)` holds every reference point within `k_distance(a)`, so ties at
//! the boundary are all included. Neighbor search is an exact full scan with
//! Euclidean distance.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureSet, TrueLabel};
use crate::tsv;

/// Lower clamp on reachability sums so duplicate points give a finite lrd.
pub const REACH_SUM_FLOOR: f64 = 1e-12;

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGroup {
    name: String,
    dim: usize,
    k: usize,
    points: Vec<f64>,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// k-th smallest value (1-based `k`) of `dists`, which it reorders.
fn kth_smallest(dists: &mut [f64], k: usize) -> f64 {
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

impl ReferenceGroup {
    /// Builds the group from `n x dim` row-major `embeddings`.
    pub fn build(name: &str, embeddings: &[f64], dim: usize, k: usize) -> Result<Self> {
        if dim == 0 || !embeddings.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("a multiple of dim {dim}"),
                found: format!("{} values", embeddings.len()),
            });
        }
        let n = embeddings.len() / dim;
        if n == 0 {
            return Err(Error::EmptyGroup);
        }
        if k == 0 || k >= n {
            return Err(Error::InvalidK { k, n });
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reference group {name:?}")));
        }
        let row = |i: usize| &embeddings[i * dim..(i + 1) * dim];

        // k-distance and neighborhood (index, distance) of every point
        let neighborhoods: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
            .into_par_iter()
            .map(|o| {
                let dists: Vec<f64> = (0..n)
                    .map(|p| {
                        if p == o {
                            f64::INFINITY
                        } else {
                            euclidean(row(o), row(p))
                        }
                    })
                    .collect();
                let mut scratch = dists.clone();
                let kd = kth_smallest(&mut scratch, k);
                let hood = dists
                    .iter()
                    .enumerate()
                    .filter(|&(p, &d)| p != o && d <= kd)
                    .map(|(p, &d)| (p, d))
                    .collect();
                (kd, hood)
            })
            .collect();
        let k_distance: Vec<f64> = neighborhoods.iter().map(|(kd, _)| *kd).collect();
        let lrd = neighborhoods
            .par_iter()
            .map(|(_, hood)| {
                let sum: f64 = hood.iter().map(|&(p, d)| k_distance[p].max(d)).sum();
                hood.len() as f64 / sum.max(REACH_SUM_FLOOR)
            })
            .collect();

        Ok(Self {
            name: name.to_owned(),
            dim,
            k,
            points: embeddings.to_vec(),
            k_distance,
            lrd,
        })
    }

    pub fn from_feature_set(name: &str, set: &FeatureSet, k: usize) -> Result<Self> {
        Self::build(name, &set.flat(), set.dim(), k)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.k_distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_distance.is_empty()
    }

    pub fn k_distances(&self) -> &[f64] {
        &self.k_distance
    }

    pub fn lrds(&self) -> &[f64] {
        &self.lrd
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// LOF of `query` against the group.
    pub fn score(&self, query: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyGroup);
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query".into()));
        }
        let dists: Vec<f64> = (0..self.len())
            .map(|o| euclidean(query, self.point(o)))
            .collect();
        let mut scratch = dists.clone();
        let kd = kth_smallest(&mut scratch, self.k);
        let mut count = 0usize;
        let mut reach_sum = 0.0;
        let mut lrd_sum = 0.0;
        for (o, &d) in dists.iter().enumerate() {
            if d <= kd {
                count += 1;
                reach_sum += self.k_distance[o].max(d);
                lrd_sum += self.lrd[o];
            }
        }
        let lrd_q = count as f64 / reach_sum.max(REACH_SUM_FLOOR);
        Ok(lrd_sum / count as f64 / lrd_q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub group: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: String,
    /// One LOF per reference group, in group order.
    pub scores: Vec<GroupScore>,
    /// Minimum over `scores`: `combined > t` exactly when every group score is.
    pub combined: f64,
    pub true_label: TrueLabel,
    pub disease_label: String,
    pub predicted: Option<TrueLabel>,
}

impl ScoreRecord {
    /// Builds a record from per-group scores; `combined` is their minimum.
    pub fn new(
        sample_id: &str,
        scores: Vec<GroupScore>,
        true_label: TrueLabel,
        disease_label: &str,
        threshold: Option<f64>,
    ) -> Self {
        let combined = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
        Self {
            sample_id: sample_id.to_owned(),
            scores,
            combined,
            true_label,
            disease_label: disease_label.to_owned(),
            predicted: threshold.map(|t| decide(combined, t)),
        }
    }

    pub fn score_of(&self, group: &str) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.group == group)
            .map(|s| s.score)
    }
}

/// Abnormal exactly when `combined > threshold`.
pub fn decide(combined: f64, threshold: f64) -> TrueLabel {
    if combined > threshold {
        TrueLabel::Abnormal
    } else {
        TrueLabel::Normal
    }
}

/// Scores every query against every group. Queries are independent and
/// scored in parallel; output order follows `queries`.
pub fn score_batch(
    groups: &[ReferenceGroup],
    queries: &FeatureSet,
    threshold: Option<f64>,
) -> Result<Vec<ScoreRecord>> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup);
    }
    for g in groups {
        if g.dim() != queries.dim() {
            return Err(Error::DimensionMismatch {
                expected: g.dim(),
                found: queries.dim(),
            });
        }
    }
    queries
        .records()
        .par_iter()
        .map(|q| {
            let scores = groups
                .iter()
                .map(|g| {
                    Ok(GroupScore {
                        group: g.name().to_owned(),
                        score: g.score(&q.vector)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ScoreRecord::new(
                &q.id,
                scores,
                q.true_label(),
                &q.class_label,
                threshold,
            ))
        })
        .collect()
}

/// Writes `sample_id<TAB>true_label<TAB>disease_label<TAB>score_per_group...<TAB>combined`
/// with a `#` header naming the groups.
pub fn scores_to_tsv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("#sample_id\ttrue_label\tdisease_label");
    if let Some(first) = records.first() {
        for s in &first.scores {
            out.push('\t');
            out.push_str(&s.group);
        }
    }
    out.push_str("\tcombined\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}",
            r.sample_id,
            r.true_label.as_str(),
            r.disease_label
        ));
        for s in &r.scores {
            out.push_str(&format!("\t{:e}", s.score));
        }
        out.push_str(&format!("\t{:e}\n", r.combined));
    }
    out
}

/// Parses the scores format. Group names come from the `#sample_id` header when
/// present, otherwise `group1..groupN`. The stored combined value is checked
/// against the per-group minimum.
pub fn scores_from_tsv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut names: Option<Vec<String>> = None;
    if let Some(header) = text.lines().find_map(|l| l.strip_prefix("#sample_id")) {
        let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
        if cols.len() >= 4 {
            names = Some(
                cols[3..cols.len() - 1]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            );
        }
    }
    let mut out = Vec::new();
    for (line, l) in tsv::data_lines(text) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() < 5 {
            return Err(Error::Parse {
                line,
                message: "expected at least one group score and a combined column".into(),
            });
        }
        let true_label = TrueLabel::parse(f[1]).ok_or_else(|| Error::Parse {
            line,
            message: format!("true_label {:?} is neither normal nor abnormal", f[1]),
        })?;
        let n_groups = f.len() - 4;
        let group_names = names
            .clone()
            .unwrap_or_else(|| (1..=n_groups).map(|i| format!("group{i}")).collect());
        if group_names.len() != n_groups {
            return Err(Error::Parse {
                line,
                message: format!(
                    "{n_groups} group scores but the header names {}",
                    group_names.len()
                ),
            });
        }
        let scores = group_names
            .into_iter()
            .zip(&f[3..3 + n_groups])
            .map(|(group, v)| {
                Ok(GroupScore {
                    group,
                    score: tsv::parse_f64(v, line, "score")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let combined = tsv::parse_f64(f[f.len() - 1], line, "combined")?;
        let record = ScoreRecord::new(f[0], scores, true_label, f[2], None);
        if record.combined != combined {
            return Err(Error::Parse {
                line,
                message: format!(
                    "combined {combined} is not the minimum group score {}",
                    record.combined
                ),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    scores_from_tsv(&tsv::read_text(path.as_ref())?)
}

pub fn save_scores(records: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    tsv::write_text(path.as_ref(), &scores_to_tsv(records))
}

/// Count of scored records per disease label.
pub fn disease_counts(records: &[ScoreRecord]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.disease_label.as_str()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRecord;

    const SQUARE: [f64; 8] = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];

    #[test]
    fn unit_square_corners() {
        let g = ReferenceGroup::build("sq", &SQUARE, 2, 3).unwrap();
        for i in 0..4 {
            assert!((g.k_distances()[i] - 2f64.sqrt()).abs() < 1e-15);
            assert!((g.lrds()[i] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_square_center_scores_exactly_one() {
        let g = ReferenceGroup::build("sq", &SQUARE, 2, 3).unwrap();
        assert_eq!(g.score(&[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn far_point_matches_hand_value() {
        let g = ReferenceGroup::build("sq", &SQUARE, 2, 3).unwrap();
        let lof = g.score(&[10.0, 10.0]).unwrap();
        let hand = (162f64.sqrt() + 2.0 * 181f64.sqrt()) / (3.0 * 2f64.sqrt());
        assert!((lof - 9.34).abs() < 0.01, "{lof}");
        assert!((lof - hand).abs() < 1e-12);
    }

    #[test]
    fn identical_points_clamp() {
        let g = ReferenceGroup::build("dup", &[2.0, 2.0], 1, 1).unwrap();
        assert_eq!(g.lrds(), &[1.0 / REACH_SUM_FLOOR, 1.0 / REACH_SUM_FLOOR]);
        let g = ReferenceGroup::build("dup", &[1.0; 5], 1, 1).unwrap();
        // ties included: every other point is a neighbor
        assert!(g.lrds().iter().all(|&l| l == 4.0 / REACH_SUM_FLOOR));
        // the query ties with all five points, each reference point with four
        assert_eq!(g.score(&[1.0]).unwrap(), 0.8);
    }

    #[test]
    fn k_must_be_below_n() {
        assert!(matches!(
            ReferenceGroup::build("sq", &SQUARE, 2, 4),
            Err(Error::InvalidK { k: 4, n: 4 })
        ));
        assert!(ReferenceGroup::build("sq", &SQUARE, 2, 0).is_err());
        assert!(ReferenceGroup::build("sq", &[], 2, 1).is_err());
        assert!(ReferenceGroup::build("sq", &[0.0, f64::NAN, 1.0, 1.0], 2, 1).is_err());
    }

    #[test]
    fn grid_member_is_an_inlier() {
        let mut pts = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                pts.extend([i as f64, j as f64]);
            }
        }
        let g = ReferenceGroup::build("grid", &pts, 2, 8).unwrap();
        let lof = g.score(&[7.0, 7.0]).unwrap();
        assert!((0.9..=1.1).contains(&lof), "{lof}");
    }

    #[test]
    fn query_dimension_checked() {
        let g = ReferenceGroup::build("sq", &SQUARE, 2, 3).unwrap();
        assert!(matches!(
            g.score(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    fn query(id: &str, class: &str, v: Vec<f64>) -> FeatureRecord {
        FeatureRecord {
            id: id.into(),
            class_label: class.into(),
            vector: v,
        }
    }

    #[test]
    fn min_rule_and_strict_threshold() {
        let r = ScoreRecord::new(
            "x",
            vec![
                GroupScore {
                    group: "a".into(),
                    score: 0.5,
                },
                GroupScore {
                    group: "b".into(),
                    score: 3.0,
                },
            ],
            TrueLabel::Abnormal,
            "cnv_a",
            None,
        );
        assert_eq!(r.combined, 0.5);
        let r = ScoreRecord::new(
            "y",
            vec![GroupScore {
                group: "a".into(),
                score: 2.0,
            }],
            TrueLabel::Normal,
            "normal_a",
            Some(2.0),
        );
        assert_eq!(r.predicted, Some(TrueLabel::Normal));
        let r = ScoreRecord::new(
            "z",
            vec![
                GroupScore {
                    group: "a".into(),
                    score: 5.0,
                },
                GroupScore {
                    group: "b".into(),
                    score: 4.0,
                },
            ],
            TrueLabel::Abnormal,
            "cnv_a",
            Some(3.0),
        );
        assert_eq!(r.predicted, Some(TrueLabel::Abnormal));
    }

    #[test]
    fn batch_scoring_and_tsv() {
        let a = ReferenceGroup::build("normal_a", &SQUARE, 2, 3).unwrap();
        let shifted: Vec<f64> = SQUARE.iter().map(|v| v + 5.0).collect();
        let b = ReferenceGroup::build("normal_b", &shifted, 2, 3).unwrap();
        let qs = FeatureSet::from_records(
            2,
            vec![
                query("q1", "normal_a", vec![0.5, 0.5]),
                query("q2", "cnv_a", vec![20.0, -3.0]),
            ],
        )
        .unwrap();
        let recs = score_batch(&[a.clone(), b], &qs, Some(1.5)).unwrap();
        assert_eq!(recs[0].combined, 1.0);
        assert_eq!(recs[0].predicted, Some(TrueLabel::Normal));
        assert_eq!(recs[1].predicted, Some(TrueLabel::Abnormal));
        assert_eq!(recs[1].true_label, TrueLabel::Abnormal);
        let text = scores_to_tsv(&recs);
        assert!(text
            .starts_with("#sample_id\ttrue_label\tdisease_label\tnormal_a\tnormal_b\tcombined\n"));
        let back = scores_from_tsv(&text).unwrap();
        for (x, y) in back.iter().zip(&recs) {
            assert_eq!(x.sample_id, y.sample_id);
            assert_eq!(x.scores, y.scores);
            assert_eq!(x.combined, y.combined);
        }
        let bad = FeatureSet::from_records(1, vec![query("q", "normal_a", vec![0.0])]).unwrap();
        assert!(score_batch(&[a], &bad, None).is_err());
    }

    #[test]
    fn scores_tsv_rejects_inconsistent_combined() {
        let text = "s1\tnormal\tnormal_a\t1.0\t2.0\t2.0\n";
        assert!(scores_from_tsv(text).is_err());
        let text = "s1\tnormal\tnormal_a\t1.0\t2.0\t1.0\n";
        let r = scores_from_tsv(text).unwrap();
        assert_eq!(r[0].scores[1].group, "group2");
    }
}
