use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use oodr::augment::{expand, load_png, provenance_tsv, save_png, AugmentPipelineConfig};
use oodr::dataset::{partition_quarters, Grouping, Manifest, Origin, SampleRecord};
use oodr::eval::{per_disease_report, RocCurve, ScoreSplit};
use oodr::head::MetricHeadModel;
use oodr::lof::{load_scores, save_scores, score_batch, ReferenceGroup, DEFAULT_K};
use oodr::runner::{
    draw_references, embed_ids, plan_round, run, train_round, ExperimentConfig, FeatureTable,
    Prepared, RunReport,
};
use oodr::synthetic::{write_synthetic, SyntheticConfig};
use oodr::FeatureFile;

#[derive(Parser)]
#[command(
    name = "oodr",
    version,
    about = "Normal-vs-abnormal screening with metric embeddings and LOF"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupingArg {
    ByImage,
    ByPatient,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::ByImage => Grouping::ByImage,
            GroupingArg::ByPatient => Grouping::ByPatient,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Assign every class to four equal quarters.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "by-image")]
        grouping: GroupingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand one class of images by random flips and rotations.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Class whose original images are expanded.
        #[arg(long)]
        class: String,
        /// Number of augmented images to produce.
        #[arg(long)]
        target: usize,
        /// JSON pipeline configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory that manifest source paths are relative to
        /// (default: the manifest's directory).
        #[arg(long)]
        image_root: Option<PathBuf>,
        /// Receives images/, provenance.tsv and the extended manifest.tsv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the embedding head for one round of an experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        round: usize,
        /// Receives model.mhd and trace.tsv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Draw and embed the reference groups of one round.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        round: usize,
        /// Head trained for the same round; retrained when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Receives reference_<group>.feat1 with embedded vectors.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score feature rows against one or more reference groups.
    Score {
        /// Embed the rows with this head first; rows are used as-is otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Reference group file (FEAT1); the group is named after the file stem.
        #[arg(long = "reference", required = true)]
        references: Vec<PathBuf>,
        #[arg(long = "features", required = true)]
        features: Vec<PathBuf>,
        /// Provides class labels; rows without a manifest entry are skipped.
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict scoring to the ids listed one per line.
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a scores file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        /// Write ROC points here.
        #[arg(long)]
        roc: Option<PathBuf>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a full experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize the report.json of a finished run.
    Report {
        /// A run output directory or its report.json.
        #[arg(long)]
        run: PathBuf,
    },
    /// Generate a Gaussian-cluster manifest and feature file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Split {
            manifest,
            seed,
            grouping,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let p = partition_quarters(&m, seed, grouping.into())?;
            p.save(&out)?;
            for (class, size) in p.quarter_sizes() {
                println!("{class}\t{size} per quarter");
            }
            println!("dropped\t{}", p.dropped().len());
        }
        Command::Augment {
            manifest,
            class,
            target,
            config,
            seed,
            image_root,
            out_dir,
        } => augment(
            &manifest, &class, target, config, seed, image_root, &out_dir,
        )?,
        Command::Train {
            config,
            round,
            out_dir,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let prep = Prepared::load(&cfg)?;
            let trained = train_round(&cfg, &prep, round)?;
            create_dir(&out_dir)?;
            trained.model.save(out_dir.join("model.mhd"))?;
            std::fs::write(out_dir.join("trace.tsv"), trained.trace.to_tsv())?;
            println!("best_epoch {}", trained.trace.best_epoch);
        }
        Command::Reference {
            config,
            round,
            model,
            out_dir,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let prep = Prepared::load(&cfg)?;
            let (sets, seeds, model) = match model {
                Some(path) => {
                    let (sets, seeds) = plan_round(&cfg, &prep, round)?;
                    (sets, seeds, MetricHeadModel::load(&path)?)
                }
                None => {
                    let t = train_round(&cfg, &prep, round)?;
                    (t.sets, t.seeds, t.model)
                }
            };
            create_dir(&out_dir)?;
            for s in draw_references(&cfg, &prep, &sets, &seeds, &model)? {
                let rows = s
                    .embedded
                    .iter()
                    .map(|r| (r.id.as_str(), r.vector.as_slice()));
                let file = FeatureFile::from_rows(s.embedded.dim(), rows)?;
                let path = out_dir.join(format!("reference_{}.feat1", s.name));
                file.save(&path)?;
                println!("{}\t{}", s.name, s.ids.len());
            }
        }
        Command::Score {
            model,
            references,
            features,
            manifest,
            ids,
            k,
            threshold,
            out,
        } => score(
            model,
            &references,
            &features,
            &manifest,
            ids,
            k,
            threshold,
            &out,
        )?,
        Command::Eval {
            scores,
            threshold,
            roc,
            report,
        } => {
            let records = load_scores(&scores)?;
            let rep = per_disease_report(&records, threshold)?;
            println!("auc {:.7}", rep.auc);
            println!("fpr_at_tpr1 {:.7}", rep.fpr_at_tpr1);
            println!("tpr {:.7}", rep.tpr);
            println!("tnr {:.7}", rep.tnr);
            for (disease, m) in &rep.per_disease {
                println!(
                    "{disease}\tauc {:.7}\tfpr_at_tpr1 {:.7}",
                    m.auc, m.fpr_at_tpr1
                );
            }
            if let Some(path) = roc {
                RocCurve::from_split(&ScoreSplit::from_records(&records))?.save(path)?;
            }
            if let Some(path) = report {
                std::fs::write(&path, rep.to_json()? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let res = run(&cfg)?;
            print_report(&res.report);
            println!("wrote {}", cfg.output_dir.join("report.json").display());
        }
        Command::Report { run } => {
            let path = if run.is_dir() {
                run.join("report.json")
            } else {
                run
            };
            print_report(&RunReport::load(&path)?);
        }
        Command::Synth { config, out_dir } => {
            let cfg = SyntheticConfig::load(&config)?;
            let (m, f) = write_synthetic(&cfg, &out_dir)?;
            println!("{} records, dim {}", m.len(), f.dim());
        }
    }
    Ok(())
}

fn print_report(r: &RunReport) {
    println!("scenario {}", r.scenario);
    println!("round\tauc\tfpr_at_tpr1\tbest_epoch\ttest");
    for s in &r.rounds {
        println!(
            "{}\t{:.7}\t{:.7}\t{}\t{}",
            s.round, s.report.auc, s.report.fpr_at_tpr1, s.best_epoch, s.test_count
        );
    }
    println!("pooled\t{:.7}\t{:.7}", r.auc, r.fpr_at_tpr1);
    println!("mean\t{:.7}\t{:.7}", r.mean_auc, r.mean_fpr_at_tpr1);
    for (disease, m) in &r.pooled.per_disease {
        println!("{disease}\t{:.7}\t{:.7}", m.auc, m.fpr_at_tpr1);
    }
}

fn augment(
    manifest_path: &Path,
    class: &str,
    target: usize,
    config: Option<PathBuf>,
    seed: Option<u64>,
    image_root: Option<PathBuf>,
    out_dir: &Path,
) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let mut cfg: AugmentPipelineConfig = match config {
        Some(p) => {
            let text =
                std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)?
        }
        None => AugmentPipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let root = image_root.unwrap_or_else(|| {
        manifest_path
            .parent()
            .unwrap_or(Path::new(""))
            .to_path_buf()
    });
    let originals: Vec<&SampleRecord> = manifest
        .records()
        .iter()
        .filter(|r| r.class_label == class && !r.is_augmented())
        .collect();
    if originals.is_empty() {
        bail!("no original records of class {class:?}");
    }
    let sources = originals
        .iter()
        .map(|r| Ok((r.id.clone(), load_png(root.join(&r.source_path))?)))
        .collect::<Result<Vec<_>>>()?;
    let outputs = expand(&sources, target, &cfg)?;
    create_dir(&out_dir.join("images"))?;

    let by_id = manifest.by_id();
    let mut records = manifest.records().to_vec();
    for o in &outputs {
        let rel = format!("images/{}.png", o.id);
        save_png(&o.image, out_dir.join(&rel))?;
        records.push(SampleRecord {
            id: o.id.clone(),
            class_label: class.to_owned(),
            source_path: rel,
            patient_id: by_id[o.parent_id.as_str()].patient_id.clone(),
            origin: Origin::Augmented {
                parent: o.parent_id.clone(),
            },
        });
    }
    std::fs::write(out_dir.join("provenance.tsv"), provenance_tsv(&outputs))?;
    Manifest::new(manifest.labels().to_vec(), records)?.save(out_dir.join("manifest.tsv"))?;
    println!("{} sources -> {} augmented", sources.len(), outputs.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score(
    model: Option<PathBuf>,
    references: &[PathBuf],
    features: &[PathBuf],
    manifest: &Path,
    ids: Option<PathBuf>,
    k: usize,
    threshold: Option<f64>,
    out: &Path,
) -> Result<()> {
    let model = model.map(MetricHeadModel::load).transpose()?;
    let manifest = Manifest::load(manifest)?;
    let table = FeatureTable::load(features)?;
    let wanted: Vec<String> = match ids {
        Some(p) => std::fs::read_to_string(&p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect(),
        None => manifest
            .records()
            .iter()
            .filter(|r| table.get(&r.id).is_some())
            .map(|r| r.id.clone())
            .collect(),
    };
    let queries = embed_ids(model.as_ref(), &wanted, &manifest, &table)?;

    let mut groups = Vec::new();
    let mut names = BTreeMap::new();
    for path in references {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("reference");
        let name = stem.strip_prefix("reference_").unwrap_or(stem).to_owned();
        if names.insert(name.clone(), ()).is_some() {
            bail!("two reference files are both named {name:?}");
        }
        let f = FeatureFile::load(path)?;
        let flat: Vec<f64> = f.values().iter().map(|&v| v as f64).collect();
        groups.push(ReferenceGroup::build(&name, &flat, f.dim(), k)?);
    }
    let records = score_batch(&groups, &queries, threshold)?;
    save_scores(&records, out)?;
    println!(
        "scored {} records against {} groups",
        records.len(),
        groups.len()
    );
    Ok(())
}
