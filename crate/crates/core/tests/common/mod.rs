//! Independent oracles and fixtures shared by the integration suites.

#![allow(dead_code)]

use std::path::Path;

use oodr::head::{HeadConfig, MetricHeadModel};
use oodr::runner::{ExperimentConfig, ScenarioRef};
use oodr::synthetic::{write_synthetic, ClusterSpec, Spread, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// LOF straight from the definitions, O(n^2) per call, no shared code with
/// the library.
pub fn lof_oracle(points: &[Vec<f64>], k: usize, query: &[f64]) -> f64 {
    let n = points.len();
    let kdist_excluding = |p: &[f64], skip: Option<usize>| -> f64 {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| Some(j) != skip)
            .map(|j| dist(p, &points[j]))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d[k - 1]
    };
    let kd: Vec<f64> = (0..n)
        .map(|i| kdist_excluding(&points[i], Some(i)))
        .collect();
    let lrd = |p: &[f64], skip: Option<usize>, own_kd: f64| -> (f64, Vec<usize>) {
        let nbrs: Vec<usize> = (0..n)
            .filter(|&j| Some(j) != skip && dist(p, &points[j]) <= own_kd)
            .collect();
        let reach: f64 = nbrs.iter().map(|&j| kd[j].max(dist(p, &points[j]))).sum();
        (nbrs.len() as f64 / reach.max(1e-12), nbrs)
    };
    let lrds: Vec<f64> = (0..n).map(|i| lrd(&points[i], Some(i), kd[i]).0).collect();
    let (lrd_q, nbrs) = lrd(query, None, kdist_excluding(query, None));
    let mean: f64 = nbrs.iter().map(|&j| lrds[j]).sum::<f64>() / nbrs.len() as f64;
    mean / lrd_q
}

/// Mann-Whitney pair count with ties worth one half.
pub fn mann_whitney(normal: &[f64], abnormal: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in abnormal {
        for n in normal {
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / (normal.len() * abnormal.len()) as f64
}

/// Analytic gradient paired with its central difference (step `h`) for
/// every parameter of `model`.
pub fn gradient_pairs(
    model: &MetricHeadModel,
    batch: &[(&[f64], usize)],
    h: f64,
) -> Vec<(f64, f64)> {
    let (_, grads) = model.loss_and_grads(batch).unwrap();
    let mut probe = model.clone();
    let mut pairs = Vec::new();
    for (t, g) in grads.tensors.iter().enumerate() {
        for i in 0..g.data.len() {
            let orig = probe.tensors()[t].data[i];
            probe.tensors_mut()[t].data[i] = orig + h;
            let up = probe.loss(batch).unwrap();
            probe.tensors_mut()[t].data[i] = orig - h;
            let down = probe.loss(batch).unwrap();
            probe.tensors_mut()[t].data[i] = orig;
            pairs.push((g.data[i], (up - down) / (2.0 * h)));
        }
    }
    pairs
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between analytic gradients and central
/// differences over every parameter of `model`.
pub fn gradient_check(model: &MetricHeadModel, batch: &[(&[f64], usize)], h: f64) -> f64 {
    gradient_pairs(model, batch, h)
        .into_iter()
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Random small head configuration and batch.
pub fn random_head_case(seed: u64) -> (MetricHeadModel, Vec<(Vec<f64>, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(0..3);
    let cfg = HeadConfig {
        input_dim: rng.random_range(1..6),
        hidden_dims: (0..layers).map(|_| rng.random_range(2..7)).collect(),
        embed_dim: rng.random_range(2..6),
        alpha: rng.random_range(0.5..16.0),
        num_classes: rng.random_range(2..5),
        seed,
        ..HeadConfig::default()
    };
    let mut model = MetricHeadModel::init(&cfg, &mut rng).unwrap();
    // nonzero biases so their gradients are exercised away from init
    for t in model.tensors_mut() {
        t.data
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let mut batch = Vec::new();
    while batch.len() < rng.random_range(1..6) {
        let x: Vec<f64> = (0..cfg.input_dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        // the normalization is undefined near f = 0
        let f = model.raw_embed(&x).unwrap();
        if f.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.1 {
            batch.push((x, rng.random_range(0..cfg.num_classes)));
        }
    }
    (model, batch)
}

pub fn axis(dim: usize, i: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = s;
    v
}

pub fn cluster(label: &str, count: usize, mean: Vec<f64>, std: f64) -> ClusterSpec {
    ClusterSpec {
        label: label.to_owned(),
        count,
        mean,
        std: Spread::Isotropic(std),
    }
}

pub const DESK_DIM: usize = 16;

/// Normal plus diseases A, B, C on orthogonal axes; every pair of means is
/// `sep` standard deviations apart.
pub fn four_clusters(count: usize, sep: f64, seed: u64) -> SyntheticConfig {
    let s = sep / 2f64.sqrt();
    SyntheticConfig {
        dim: DESK_DIM,
        seed,
        clusters: ["normal_a", "cnv_a", "drusen_a", "dme_a"]
            .iter()
            .enumerate()
            .map(|(i, l)| cluster(l, count, axis(DESK_DIM, i, s), 1.0))
            .collect(),
    }
}

/// Writes `synth` under `dir` and returns an experiment over it.
pub fn experiment(
    dir: &Path,
    synth: &SyntheticConfig,
    scenario: &str,
    seed: u64,
) -> ExperimentConfig {
    write_synthetic(synth, dir).unwrap();
    ExperimentConfig {
        manifest: dir.join("manifest.tsv"),
        features: vec![dir.join("features.feat1")],
        scenario: ScenarioRef::Named(scenario.to_owned()),
        head: HeadConfig::default(),
        lof_k: oodr::lof::DEFAULT_K,
        reference_size: None,
        seed,
        grouping: Default::default(),
        output_dir: dir.join(format!("out_{scenario}")),
        augmented_in_reference: false,
        threshold: None,
    }
}
