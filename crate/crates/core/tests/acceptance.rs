//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use oodr::augment::{
    expand, flip_horizontal, plan, rotate, AugmentPipelineConfig, Fill, RasterImage,
};
use oodr::dataset::{partition_quarters, Grouping, Manifest, SampleRecord};
use oodr::eval::{
    confusion_from_split, fpr_at_tpr1_from_split, per_disease_report, RocCurve, ScoreSplit,
};
use oodr::features::TrueLabel;
use oodr::head::{adam_step, AdamConfig, AdamMoments};
use oodr::lof::{GroupScore, ReferenceGroup, ScoreRecord};
use oodr::runner::run;
use oodr::synthetic::SyntheticConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn lof_oracle_suite() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x10F);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(12..=200);
        let d = rng.random_range(1..=8);
        let k = rng.random_range(1..=10);
        // a coarse grid in some instances so duplicate points and distance ties occur
        let grid = rng.random_bool(0.3);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d)
                .map(|_| {
                    if grid {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random_range(-3.0..3.0)
                    }
                })
                .collect()
        };
        let points: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng)).collect();
        let flat: Vec<f64> = points.concat();
        let group = ReferenceGroup::build("g", &flat, d, k).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let q = draw(&mut rng);
            let got = group.score(&q).map_err(|e| e.to_string())?;
            let want = lof_oracle(&points, k, &q);
            let rel = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-9, format!("max |delta| {worst:e}"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!("500 instances, max |delta| {worst:.1e}"))
}

fn lof_hand_fixtures() -> Check {
    let square = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let g = ReferenceGroup::build("sq", &square, 2, 3).map_err(|e| e.to_string())?;
    let center = g.score(&[0.5, 0.5]).map_err(|e| e.to_string())?;
    let far = g.score(&[10.0, 10.0]).map_err(|e| e.to_string())?;
    ensure(center == 1.0, format!("center {center}"))?;
    ensure((far - 9.34).abs() <= 0.01, format!("far {far}"))?;
    Ok(format!("center {center}, far {far:.4}"))
}

fn records(normal: &[f64], abnormal: &[(f64, &str)]) -> Vec<ScoreRecord> {
    let mk = |i: usize, s: f64, t: TrueLabel, d: &str| {
        ScoreRecord::new(
            &format!("r{i}"),
            vec![GroupScore {
                group: "g".into(),
                score: s,
            }],
            t,
            d,
            None,
        )
    };
    normal
        .iter()
        .enumerate()
        .map(|(i, &s)| mk(i, s, TrueLabel::Normal, "normal"))
        .chain(
            abnormal
                .iter()
                .enumerate()
                .map(|(i, &(s, d))| mk(normal.len() + i, s, TrueLabel::Abnormal, d)),
        )
        .collect()
}

fn random_split(rng: &mut ChaCha8Rng) -> ScoreSplit {
    let ties = rng.random_bool(0.5);
    let draw = |rng: &mut ChaCha8Rng, n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if ties {
                    (rng.random_range(0..6) as f64) + shift.round()
                } else {
                    rng.random_range(0.0..1.0) + shift
                }
            })
            .collect()
    };
    let shift = rng.random_range(0.0..1.5);
    let nn = rng.random_range(1..60);
    let na = rng.random_range(1..60);
    ScoreSplit {
        normal: draw(rng, nn, 0.0),
        abnormal: draw(rng, na, shift),
    }
}

fn auc_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let split = random_split(&mut rng);
        let auc = RocCurve::from_split(&split)
            .map_err(|e| e.to_string())?
            .auc();
        worst = worst.max((auc - mann_whitney(&split.normal, &split.abnormal)).abs());
    }
    ensure(worst < 1e-12, format!("max |auc - mann_whitney| {worst:e}"))?;
    let fixtures: [(&[f64], &[f64], f64); 3] = [
        (&[0.1, 0.2, 0.3], &[0.7, 0.8], 1.0),
        (&[0.5, 0.5, 0.5], &[0.5, 0.5], 0.5),
        (&[0.1, 0.4], &[0.3, 0.9], 0.75),
    ];
    for (n, a, want) in fixtures {
        let split = ScoreSplit {
            normal: n.to_vec(),
            abnormal: a.to_vec(),
        };
        let got = RocCurve::from_split(&split)
            .map_err(|e| e.to_string())?
            .auc();
        ensure(
            got == want,
            format!("fixture {n:?} vs {a:?}: {got} != {want}"),
        )?;
    }
    Ok(format!(
        "200 sets, max |delta| {worst:.1e}; fixtures 1.0 / 0.5 / 0.75 exact"
    ))
}

fn fpr_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF9);
    for _ in 0..200 {
        let split = random_split(&mut rng);
        let roc = RocCurve::from_split(&split).map_err(|e| e.to_string())?;
        let closed = fpr_at_tpr1_from_split(&split).map_err(|e| e.to_string())?;
        let sweep = roc.min_fpr_at_full_tpr();
        ensure(
            closed == sweep,
            format!("closed form {closed} != sweep {sweep}"),
        )?;
        let c =
            confusion_from_split(&split, roc.full_tpr_threshold()).map_err(|e| e.to_string())?;
        ensure(c.tpr == 1.0 && c.fpr == closed, "operating point disagrees")?;
    }
    let fixtures: [(&[f64], &[f64], f64); 3] = [
        (&[1.0, 2.0, 3.0], &[2.5, 4.0], 1.0 / 3.0),
        (&[1.0, 2.0], &[3.0, 4.0], 0.0),
        (&[5.0, 6.0], &[1.0, 9.0], 1.0),
    ];
    for (n, a, want) in fixtures {
        let split = ScoreSplit {
            normal: n.to_vec(),
            abnormal: a.to_vec(),
        };
        let got = fpr_at_tpr1_from_split(&split).map_err(|e| e.to_string())?;
        ensure(
            got == want,
            format!("fixture {n:?} vs {a:?}: {got} != {want}"),
        )?;
    }
    let diseases = ["cnv", "drusen", "dme"];
    for _ in 0..200 {
        let normal: Vec<f64> = (0..rng.random_range(1..50))
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let abnormal: Vec<(f64, &str)> = (0..rng.random_range(1..50))
            .map(|_| {
                let d = rng.random_range(0..3);
                (rng.random_range(0.0..1.0) + 0.3 * d as f64, diseases[d])
            })
            .collect();
        let rep =
            per_disease_report(&records(&normal, &abnormal), None).map_err(|e| e.to_string())?;
        let worst = rep
            .per_disease
            .values()
            .map(|m| m.fpr_at_tpr1)
            .fold(0.0, f64::max);
        ensure(
            rep.fpr_at_tpr1 == worst,
            format!("aggregate {} != max per-disease {worst}", rep.fpr_at_tpr1),
        )?;
    }
    Ok("200 sweeps exact; fixtures 1/3, 0, 1; aggregate = max over 200 multi-disease sets".into())
}

fn gradient_check_suite() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..40 {
        let (model, batch) = random_head_case(seed);
        let refs: Vec<(&[f64], usize)> = batch.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        worst = worst.max(gradient_check(&model, &refs, 1e-5));
    }
    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("40 configs, max relative error {worst:.1e}"))
}

fn adam_fixture() -> Check {
    let mut p = [0.0];
    let mut s = AdamMoments::zeros(1);
    adam_step(&mut p, &[1.0], &mut s, 1, &AdamConfig::default()).map_err(|e| e.to_string())?;
    let delta = p[0] - (-0.001);
    ensure(delta.abs() < 1e-8, format!("theta {}", p[0]))?;
    Ok(format!("theta after one step {:.10}", p[0]))
}

fn unlearned_disease_analog() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = four_clusters(500, 8.0, 21);
    let cfg = experiment(dir.path(), &synth, "fig1_cnv", 7);
    let res = run(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pooled = &res.report.pooled;
    ensure(
        res.rounds.len() == 4,
        format!("{} rounds", res.rounds.len()),
    )?;
    for r in &res.rounds {
        let diseases: Vec<&str> = r.report.per_disease.keys().map(|s| s.as_str()).collect();
        ensure(
            diseases == ["cnv_a", "dme_a", "drusen_a"],
            format!("round {} tested {diseases:?}", r.round),
        )?;
        ensure(
            r.report.auc == 1.0 && r.report.fpr_at_tpr1 == 0.0,
            format!(
                "round {}: auc {} fpr@tpr1 {}",
                r.round, r.report.auc, r.report.fpr_at_tpr1
            ),
        )?;
    }
    ensure(
        pooled.auc == 1.0 && pooled.fpr_at_tpr1 == 0.0,
        format!("pooled auc {} fpr@tpr1 {}", pooled.auc, pooled.fpr_at_tpr1),
    )?;
    within(elapsed, 60.0)?;
    Ok(format!(
        "pooled auc {:.7}, fpr@tpr1 {:.7} over 4 folds in {:.1} s",
        pooled.auc,
        pooled.fpr_at_tpr1,
        elapsed.as_secs_f64()
    ))
}

/// Dataset α on four orthogonal axes and dataset β on two further axes.
fn two_datasets() -> SyntheticConfig {
    let mut synth = four_clusters(300, 8.0, 33);
    let s = 8.0 / 2f64.sqrt();
    synth
        .clusters
        .push(cluster("normal_b", 300, axis(DESK_DIM, 4, s), 1.0));
    synth
        .clusters
        .push(cluster("amd_b", 300, axis(DESK_DIM, 5, s), 1.0));
    synth
}

fn degradation_analog() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = two_datasets();
    let matched = run(&experiment(dir.path(), &synth, "fig2", 5)).map_err(|e| e.to_string())?;
    let mismatched = run(&experiment(dir.path(), &synth, "fig3", 5)).map_err(|e| e.to_string())?;
    let test_ids = |r: &oodr::runner::RunResult| -> Vec<Vec<String>> {
        r.rounds.iter().map(|x| x.sets.test.clone()).collect()
    };
    ensure(
        test_ids(&matched) == test_ids(&mismatched),
        "test sets differ",
    )?;
    let (a2, a3) = (matched.report.auc, mismatched.report.auc);
    ensure(
        a3 < a2,
        format!("fig3-shaped auc {a3} is not below fig2-shaped auc {a2}"),
    )?;
    Ok(format!("matched auc {a2:.7} > mismatched auc {a3:.7}"))
}

fn split_arithmetic() -> Check {
    let counts = [
        ("normal_a", 51_140),
        ("cnv_a", 37_205),
        ("drusen_a", 8_616),
        ("dme_a", 20_000),
    ];
    let mut records = Vec::new();
    for (label, n) in counts {
        for i in 0..n {
            let id = format!("{label}_{i}");
            records.push(SampleRecord::original(&id, label, &id));
        }
    }
    let labels = counts.iter().map(|(l, _)| l.to_string()).collect();
    let manifest = Manifest::new(labels, records).map_err(|e| e.to_string())?;
    let p = partition_quarters(&manifest, 1, Grouping::ByImage).map_err(|e| e.to_string())?;
    let want: BTreeMap<String, usize> = [
        ("normal_a", 12_785),
        ("cnv_a", 9_301),
        ("drusen_a", 2_154),
        ("dme_a", 5_000),
    ]
    .into_iter()
    .map(|(l, n)| (l.to_string(), n))
    .collect();
    ensure(
        p.quarter_sizes() == &want,
        format!("quarter sizes {:?}", p.quarter_sizes()),
    )?;
    ensure(
        p.dropped().len() == 1,
        format!("{} dropped", p.dropped().len()),
    )?;
    let mut per_q: BTreeMap<(String, u8), usize> = BTreeMap::new();
    for r in manifest.records() {
        if let Some(q) = p.quarter_of(&r.id) {
            *per_q.entry((r.class_label.clone(), q)).or_default() += 1;
        }
    }
    for ((label, q), n) in &per_q {
        ensure(*n == want[label], format!("{label} quarter {q} holds {n}"))?;
    }
    Ok("12785 / 9301 (+1 dropped) / 2154 / 5000".into())
}

fn augmenter_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA6);
    for (w, h, c) in [(7, 5, 1), (6, 6, 3), (1, 9, 1)] {
        let px: Vec<f32> = (0..w * h * c).map(|_| rng.random::<f32>()).collect();
        let img = RasterImage::new(w, h, c, px).map_err(|e| e.to_string())?;
        ensure(
            flip_horizontal(&flip_horizontal(&img)) == img,
            "flip is not an involution",
        )?;
        ensure(
            rotate(&img, 0.0, Fill::Black).map_err(|e| e.to_string())? == img,
            "rotate(0) changed pixels",
        )?;
    }

    let cfg = AugmentPipelineConfig {
        seed: 17,
        ..AugmentPipelineConfig::default()
    };
    let draws = plan(1604, 10_000, &cfg).map_err(|e| e.to_string())?;
    let flip_rate = draws.iter().filter(|d| d.flip).count() as f64 / 10_000.0;
    let rot_rate = draws.iter().filter(|d| d.angle_deg.is_some()).count() as f64 / 10_000.0;
    ensure(
        (flip_rate - 0.8).abs() <= 0.02,
        format!("flip rate {flip_rate}"),
    )?;
    ensure(
        (rot_rate - 0.7).abs() <= 0.02,
        format!("rotate rate {rot_rate}"),
    )?;

    let sources: Vec<(String, RasterImage)> = (0..1604)
        .map(|i| {
            let img = RasterImage::filled(4, 4, 1, (i % 7) as f32 / 7.0).unwrap();
            (format!("src{i}"), img)
        })
        .collect();
    let out = expand(&sources, 60_000, &cfg).map_err(|e| e.to_string())?;
    ensure(out.len() == 60_000, format!("{} outputs", out.len()))?;
    Ok(format!(
        "fixtures exact; flip {flip_rate:.4}, rotate {rot_rate:.4}; 1604 -> {}",
        out.len()
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = experiment(dir.path(), &four_clusters(120, 8.0, 4), "fig1_drusen", 11);
    cfg.head.epochs = 5;
    run(&cfg).map_err(|e| e.to_string())?;
    let path = cfg.output_dir.join("report.json");
    let first = std::fs::read(&path).map_err(|e| e.to_string())?;
    run(&cfg).map_err(|e| e.to_string())?;
    let second = std::fs::read(&path).map_err(|e| e.to_string())?;
    ensure(first == second, "report.json differs between runs")?;
    Ok(format!("report.json identical ({} bytes)", first.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("lof-oracle-suite", lof_oracle_suite),
        ("lof-hand-fixtures", lof_hand_fixtures),
        ("auc-suite", auc_suite),
        ("fpr-at-tpr1-suite", fpr_suite),
        ("gradient-check", gradient_check_suite),
        ("adam-first-step", adam_fixture),
        ("unlearned-disease-analog", unlearned_disease_analog),
        ("degradation-analog", degradation_analog),
        ("split-arithmetic", split_arithmetic),
        ("augmenter", augmenter_suite),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_owned()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<26} {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<26} {detail} [{secs:.2} s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
