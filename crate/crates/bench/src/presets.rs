//! Named experiment presets: per-dataset sweet-point hyperparameters and the
//! best trick combination for each dataset.

use deepgnn::{Backbone, Com, NormSpec, SkipSpec, TrainConfig, TrickConfig};

use crate::error::{BenchError, Result};
use crate::spec::{DatasetSource, ExperimentSpec};

/// Label smoothing used by the best-combination presets.
pub const BEST_LABEL_SMOOTHING: f64 = 0.1;

struct Sweet {
    dataset: &'static str,
    lr: f64,
    weight_decay: f64,
    dropout: f64,
    hidden: usize,
}

const SWEET: [Sweet; 4] = [
    Sweet {
        dataset: "cora",
        lr: 0.005,
        weight_decay: 5e-4,
        dropout: 0.6,
        hidden: 64,
    },
    Sweet {
        dataset: "citeseer",
        lr: 0.005,
        weight_decay: 5e-4,
        dropout: 0.6,
        hidden: 256,
    },
    Sweet {
        dataset: "pubmed",
        lr: 0.01,
        weight_decay: 5e-4,
        dropout: 0.5,
        hidden: 256,
    },
    Sweet {
        dataset: "ogbn-arxiv",
        lr: 0.005,
        weight_decay: 0.0,
        dropout: 0.1,
        hidden: 256,
    },
];

pub const PRESET_NAMES: [&str; 8] = [
    "sweet-cora",
    "sweet-citeseer",
    "sweet-pubmed",
    "sweet-arxiv",
    "best-cora",
    "best-citeseer",
    "best-pubmed",
    "best-arxiv",
];

fn sweet(key: &str) -> &'static Sweet {
    let dataset = if key == "arxiv" { "ogbn-arxiv" } else { key };
    SWEET
        .iter()
        .find(|s| s.dataset == dataset)
        .expect("preset table covers every dataset key")
}

/// Two-layer GCN with the dataset's sweet-point hyperparameters.
fn sweet_spec(key: &str) -> ExperimentSpec {
    let s = sweet(key);
    let mut trick = TrickConfig::plain(Backbone::Gcn, 2, s.hidden);
    trick.drop.feature_dropout = s.dropout;
    let train = TrainConfig {
        lr: s.lr,
        weight_decay: s.weight_decay,
        ..TrainConfig::default()
    };
    ExperimentSpec::new(
        DatasetSource::Named {
            name: s.dataset.to_string(),
        },
        trick,
        train,
    )
}

fn best_spec(key: &str) -> ExperimentSpec {
    let mut spec = sweet_spec(key);
    let t = &mut spec.trick;
    match key {
        "cora" => {
            t.backbone = Backbone::Sgc;
            t.depth = 64;
            t.skip = SkipSpec::Initial { alpha: 0.1 };
            spec.train.label_smoothing = BEST_LABEL_SMOOTHING;
        }
        "pubmed" => {
            t.backbone = Backbone::Sgc;
            t.depth = 32;
            t.skip = SkipSpec::Jumping { com: Com::Concat };
            t.drop.feature_dropout = 0.0;
            spec.search_com = true;
        }
        "citeseer" => {
            t.depth = 32;
            t.skip = SkipSpec::Initial { alpha: 0.1 };
            t.identity_mapping = Some(0.1);
            spec.train.label_smoothing = BEST_LABEL_SMOOTHING;
        }
        "arxiv" => {
            t.depth = 16;
            t.skip = SkipSpec::Initial { alpha: 0.1 };
            t.identity_mapping = Some(0.5);
            t.norm = NormSpec::Comb {
                groups: 10,
                lambda: 0.005,
                p: 2.0,
            };
        }
        _ => unreachable!("best preset keys are checked by resolve_preset"),
    }
    spec
}

/// Looks up a preset by name. `<dataset>-best` is accepted as an alias of
/// `best-<dataset>`.
pub fn resolve_preset(name: &str) -> Result<ExperimentSpec> {
    let canonical = match name.strip_suffix("-best") {
        Some(key) => format!("best-{key}"),
        None => name.to_string(),
    };
    if !PRESET_NAMES.contains(&canonical.as_str()) {
        return Err(BenchError::UnknownPreset {
            name: name.to_string(),
            available: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
        });
    }
    let spec = match canonical.split_once('-') {
        Some(("sweet", key)) => sweet_spec(key),
        Some(("best", key)) => best_spec(key),
        _ => unreachable!("preset names have a sweet- or best- prefix"),
    };
    spec.validate()?;
    Ok(spec)
}
