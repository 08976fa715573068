//! Named experiment templates.
//!
//! Dataset α uses `normal_a`, `cnv_a`, `drusen_a`, `dme_a`; dataset β uses
//! `normal_b`, `amd_b`. The independent test set of `supp1` uses the
//! α labels with an `_i` suffix. Round 1 of a fourfold template trains on
//! quarters {1, 2}, validates on {3} and tests on {4}; later rounds rotate.

use crate::dataset::{QuarterSel, ReferenceGroupSpec, Rotation, ScenarioSpec, SetEntry};
use crate::error::{Error, Result};

pub const NORMAL_A: &str = "normal_a";
pub const NORMAL_B: &str = "normal_b";
pub const ALPHA_LABELS: [&str; 4] = ["normal_a", "cnv_a", "drusen_a", "dme_a"];
pub const BETA_LABELS: [&str; 2] = ["normal_b", "amd_b"];
pub const INDEPENDENT_LABELS: [&str; 4] = ["normal_i", "cnv_i", "drusen_i", "dme_i"];

/// Reference group size used by every template.
pub const REFERENCE_SIZE: usize = 5000;

pub const TEMPLATE_NAMES: [&str; 7] = [
    "fig1_cnv",
    "fig1_drusen",
    "fig1_dme",
    "fig2",
    "fig3",
    "fig4",
    "supp1",
];

fn entries(labels: &[&str], quarters: &[u8]) -> Vec<SetEntry> {
    labels
        .iter()
        .map(|l| SetEntry::new(l, QuarterSel::quarters(quarters.iter().copied())))
        .collect()
}

fn reference(label: &str) -> ReferenceGroupSpec {
    ReferenceGroupSpec {
        name: label.to_owned(),
        class_label: label.to_owned(),
        sample_count: REFERENCE_SIZE,
    }
}

fn fourfold(name: &str, trained: &[&str], references: &[&str]) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_owned(),
        train: entries(trained, &[1, 2]),
        validation: entries(trained, &[3]),
        test: entries(&ALPHA_LABELS, &[4]),
        reference_groups: references.iter().map(|l| reference(l)).collect(),
        rotation: Rotation::Fourfold,
    }
}

/// Resolves a template name.
pub fn template(name: &str) -> Result<ScenarioSpec> {
    let spec = match name {
        "fig1_cnv" => fourfold(name, &["normal_a", "cnv_a"], &[NORMAL_A]),
        "fig1_drusen" => fourfold(name, &["normal_a", "drusen_a"], &[NORMAL_A]),
        "fig1_dme" => fourfold(name, &["normal_a", "dme_a"], &[NORMAL_A]),
        "fig2" => fourfold(
            name,
            &["normal_a", "normal_b", "amd_b"],
            &[NORMAL_A, NORMAL_B],
        ),
        "fig3" => fourfold(name, &BETA_LABELS, &[NORMAL_B]),
        "fig4" => fourfold(name, &[NORMAL_A, NORMAL_B], &[NORMAL_A, NORMAL_B]),
        "supp1" => ScenarioSpec {
            name: name.to_owned(),
            train: entries(&ALPHA_LABELS, &[1, 2, 3]),
            validation: entries(&ALPHA_LABELS, &[4]),
            test: INDEPENDENT_LABELS
                .iter()
                .map(|l| SetEntry::new(l, QuarterSel::All))
                .collect(),
            reference_groups: vec![reference(NORMAL_A)],
            rotation: Rotation::Fixed,
        },
        other => {
            return Err(Error::InvalidScenario(format!(
                "unknown template {other:?}; expected one of {}",
                TEMPLATE_NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}
