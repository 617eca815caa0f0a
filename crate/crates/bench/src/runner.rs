//! Repetitions, hyperparameter searches, grids and epoch timing.

use std::time::Instant;

use deepgnn::data::{generate_sbm, load_dataset};
use deepgnn::train::Trainer;
use deepgnn::{
    aggregate_runs, train_run, Com, Dataset, RunResult, SkipSpec, TrainConfig, TrickConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::spec::{data_root, DatasetSource, ExperimentSpec, SkipMode, ALPHA_GRID};

pub fn load_source(src: &DatasetSource) -> Result<Dataset> {
    Ok(match src {
        DatasetSource::Named { name } => load_dataset(data_root().join(name))?,
        DatasetSource::Path { path } => load_dataset(path)?,
        DatasetSource::Sbm(p) => generate_sbm(
            p.blocks,
            p.nodes_per_block,
            p.p_in,
            p.p_out,
            p.features,
            p.noise,
            p.seed,
        )?,
    })
}

/// One repetition: its result, or the diagnostic of the failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn test_acc(&self) -> Option<f64> {
        self.result.as_ref().map(|r| r.test_acc)
    }
}

/// Accuracy summary over the successful repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub succeeded: usize,
    pub failed: usize,
    pub mean_test_acc: Option<f64>,
    /// Sample standard deviation; absent with fewer than two successes.
    pub std_test_acc: Option<f64>,
    pub mean_val_acc: Option<f64>,
}

impl Summary {
    pub fn of(records: &[RunRecord]) -> Self {
        let ok: Vec<RunResult> = records.iter().filter_map(|r| r.result.clone()).collect();
        let (mean, std) = match ok.len() {
            0 => (None, None),
            1 => (Some(ok[0].test_acc), None),
            _ => {
                let (m, s) = aggregate_runs(&ok).expect("at least two runs");
                (Some(m), Some(s))
            }
        };
        let mean_val = (!ok.is_empty()).then(|| {
            let mut v: Vec<f64> = ok.iter().map(|r| r.best_val_acc).collect();
            v.sort_by(f64::total_cmp);
            v.iter().sum::<f64>() / v.len() as f64
        });
        Self {
            succeeded: ok.len(),
            failed: records.len() - ok.len(),
            mean_test_acc: mean,
            std_test_acc: std,
            mean_val_acc: mean_val,
        }
    }
}

/// Trains `reps` models with seeds `seed_base..seed_base + reps` on the
/// current rayon pool. Records come back in seed order.
pub fn run_reps(
    trick: &TrickConfig,
    train: &TrainConfig,
    reps: usize,
    seed_base: u64,
    data: &Dataset,
) -> Vec<RunRecord> {
    (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let seed = seed_base + k;
            let cfg = TrainConfig { seed, ..*train };
            match train_run(trick, &cfg, data) {
                Ok(r) => RunRecord {
                    seed,
                    result: Some(r),
                    error: None,
                },
                Err(e) => RunRecord {
                    seed,
                    result: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// One candidate of an alpha / COM search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub skip: SkipSpec,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Configuration whose runs are reported (after any search).
    pub trick: TrickConfig,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    pub candidates: Vec<Candidate>,
}

fn search_space(spec: &ExperimentSpec) -> Vec<SkipSpec> {
    match spec.trick.skip {
        SkipSpec::Residual { .. } if spec.search_alpha => ALPHA_GRID
            .iter()
            .map(|&alpha| SkipSpec::Residual { alpha })
            .collect(),
        SkipSpec::Initial { .. } if spec.search_alpha => ALPHA_GRID
            .iter()
            .map(|&alpha| SkipSpec::Initial { alpha })
            .collect(),
        SkipSpec::Dense { .. } if spec.search_com => Com::ALL
            .iter()
            .map(|&com| SkipSpec::Dense { com })
            .collect(),
        SkipSpec::Jumping { .. } if spec.search_com => Com::ALL
            .iter()
            .map(|&com| SkipSpec::Jumping { com })
            .collect(),
        skip => vec![skip],
    }
}

/// Runs every repetition of `spec` on `data`. With an alpha or COM search,
/// each candidate is trained and the one with the highest mean validation
/// accuracy is reported (first candidate wins ties).
pub fn run_experiment(spec: &ExperimentSpec, data: &Dataset) -> Result<Outcome> {
    spec.validate()?;
    let space = search_space(spec);
    let mut runs: Vec<(TrickConfig, Vec<RunRecord>, Summary)> = space
        .iter()
        .map(|&skip| {
            let trick = TrickConfig { skip, ..spec.trick };
            let records = run_reps(&trick, &spec.train, spec.reps, spec.seed_base, data);
            let summary = Summary::of(&records);
            (trick, records, summary)
        })
        .collect();
    let candidates = if runs.len() > 1 {
        runs.iter()
            .map(|(t, _, s)| Candidate {
                skip: t.skip,
                summary: *s,
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut best = 0;
    for (k, (_, _, s)) in runs.iter().enumerate() {
        let score = s.mean_val_acc.unwrap_or(f64::NEG_INFINITY);
        if score > runs[best].2.mean_val_acc.unwrap_or(f64::NEG_INFINITY) {
            best = k;
        }
    }
    let (trick, records, summary) = runs.swap_remove(best);
    if summary.succeeded == 0 {
        return Err(BenchError::AllRunsFailed(records.len()));
    }
    Ok(Outcome {
        trick,
        records,
        summary,
        candidates,
    })
}

/// Per-cell spec of a grid: the base spec with `values` written to the
/// grid axes and the grid removed.
pub fn cell_spec(spec: &ExperimentSpec, values: &[f64]) -> Result<ExperimentSpec> {
    let mut cell = spec.clone();
    cell.grid.clear();
    for (axis, &v) in spec.grid.iter().zip(values) {
        axis.axis.apply(&mut cell, v)?;
    }
    cell.validate()?;
    Ok(cell)
}

/// Axis values of every cell, first axis outermost.
pub fn grid_cells(spec: &ExperimentSpec) -> Vec<Vec<f64>> {
    let mut cells = vec![Vec::new()];
    for axis in &spec.grid {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    cells
}

pub struct GridOutcome {
    pub cells: Vec<(Vec<f64>, ExperimentSpec, Result<Outcome>)>,
}

/// Runs [`run_experiment`] once per grid cell. Each cell is seeded on its
/// own, so results do not depend on traversal order or worker count.
pub fn grid_search(spec: &ExperimentSpec, data: &Dataset) -> Result<GridOutcome> {
    spec.validate()?;
    if spec.grid.is_empty() {
        return Err(BenchError::spec(
            "grid search needs at least one grid.* axis",
        ));
    }
    let cells: Vec<(Vec<f64>, ExperimentSpec)> = grid_cells(spec)
        .into_iter()
        .map(|values| cell_spec(spec, &values).map(|s| (values, s)))
        .collect::<Result<_>>()?;
    let cells = cells
        .into_par_iter()
        .map(|(values, cell)| {
            let outcome = run_experiment(&cell, data);
            (values, cell, outcome)
        })
        .collect();
    Ok(GridOutcome { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub label: String,
    pub trick: TrickConfig,
    pub median_ms: f64,
    pub samples_ms: Vec<f64>,
}

fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Wall time of single training epochs (forward, backward and optimizer
/// step): `profile.warmup` untimed epochs, then the median of
/// `profile.epochs` timed ones. Variants run one after another on the
/// calling thread.
pub fn profile_epoch(spec: &ExperimentSpec, data: &Dataset) -> Result<Vec<Timing>> {
    spec.validate()?;
    let variants: Vec<(String, TrickConfig)> = if spec.profile.skip_modes.is_empty() {
        vec![(
            SkipMode::of(&spec.trick.skip).name().to_string(),
            spec.trick,
        )]
    } else {
        spec.profile
            .skip_modes
            .iter()
            .map(|m| {
                let trick = TrickConfig {
                    skip: m.with_defaults(&spec.trick.skip),
                    ..spec.trick
                };
                (m.name().to_string(), trick)
            })
            .collect()
    };
    let train = TrainConfig {
        seed: spec.seed_base,
        ..spec.train
    };
    variants
        .into_iter()
        .map(|(label, trick)| {
            let mut trainer = Trainer::new(&trick, &train, data)?;
            for epoch in 0..spec.profile.warmup {
                trainer.train_epoch(epoch)?;
            }
            let mut samples = Vec::with_capacity(spec.profile.epochs);
            for k in 0..spec.profile.epochs {
                let start = Instant::now();
                trainer.train_epoch(spec.profile.warmup + k)?;
                samples.push(start.elapsed().as_secs_f64() * 1e3);
            }
            Ok(Timing {
                label,
                trick,
                median_ms: median(&samples),
                samples_ms: samples,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{Axis, GridAxis};

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn cells_are_a_cartesian_product() {
        let mut spec = crate::presets::resolve_preset("sweet-cora").unwrap();
        spec.grid = vec![
            GridAxis {
                axis: Axis::Lr,
                values: vec![0.01, 0.001, 0.0001],
            },
            GridAxis {
                axis: Axis::WeightDecay,
                values: vec![0.0, 0.01, 0.001, 0.0001],
            },
        ];
        let cells = grid_cells(&spec);
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[1], vec![0.01, 0.01]);
        let cell = cell_spec(&spec, &cells[5]).unwrap();
        assert_eq!((cell.train.lr, cell.train.weight_decay), (0.001, 0.01));
        assert!(cell.grid.is_empty());
    }

    #[test]
    fn summary_handles_failures() {
        let records = vec![RunRecord {
            seed: 0,
            result: None,
            error: Some("diverged".into()),
        }];
        let s = Summary::of(&records);
        assert_eq!((s.succeeded, s.failed, s.mean_test_acc), (0, 1, None));
    }
}
