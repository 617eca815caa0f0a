//! Output artifacts: `results.json`, `summary.md`, `heatmap.csv` and
//! `timing.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use deepgnn::{GraphDrop, NormSpec, SkipSpec, TrickConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::runner::{Candidate, GridOutcome, Outcome, RunRecord, Summary, Timing};
use crate::spec::{backbone_name, com_name, ExperimentSpec};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const RESULTS_FILE: &str = "results.json";
pub const SUMMARY_FILE: &str = "summary.md";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsArtifact {
    pub code_version: String,
    pub spec: ExperimentSpec,
    pub dataset: String,
    /// Configuration of the reported runs (differs from `spec.trick` only
    /// after an alpha or COM search).
    pub selected: TrickConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub search: Vec<Candidate>,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
}

impl ResultsArtifact {
    pub fn new(spec: &ExperimentSpec, outcome: &Outcome) -> Self {
        Self {
            code_version: CODE_VERSION.to_string(),
            spec: spec.clone(),
            dataset: spec.dataset.label(),
            selected: outcome.trick,
            search: outcome.candidates.clone(),
            runs: outcome.records.clone(),
            summary: outcome.summary,
        }
    }

    /// Checks internal consistency against the embedded spec.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(BenchError::spec(detail));
        self.spec.validate()?;
        if self.runs.len() != self.spec.reps {
            return bad(format!(
                "{} runs recorded for {} repetitions",
                self.runs.len(),
                self.spec.reps
            ));
        }
        for (k, r) in self.runs.iter().enumerate() {
            let seed = self.spec.seed_base + k as u64;
            if r.seed != seed {
                return bad(format!("run {k} has seed {}, expected {seed}", r.seed));
            }
            if r.result.is_some() == r.error.is_some() {
                return bad(format!(
                    "run {k} must carry exactly one of result and error"
                ));
            }
            if let Some(res) = &r.result {
                if res.seed != seed || !(0.0..=1.0).contains(&res.test_acc) {
                    return bad(format!("run {k} result is inconsistent"));
                }
            }
        }
        let selected_ok = TrickConfig {
            skip: self.spec.trick.skip,
            ..self.selected
        } == self.spec.trick;
        if !selected_ok {
            return bad(
                "selected configuration differs from the spec outside the skip connection".into(),
            );
        }
        if Summary::of(&self.runs) != self.summary {
            return bad("summary does not match the recorded runs".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<ResultsArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridArtifact {
    pub code_version: String,
    pub spec: ExperimentSpec,
    pub axes: Vec<String>,
    pub cells: Vec<GridCell>,
}

impl GridArtifact {
    pub fn new(spec: &ExperimentSpec, outcome: &GridOutcome) -> Self {
        let cells = outcome
            .cells
            .iter()
            .map(|(values, cell, res)| match res {
                Ok(o) => GridCell {
                    values: values.clone(),
                    results: Some(ResultsArtifact::new(cell, o)),
                    error: None,
                },
                Err(e) => GridCell {
                    values: values.clone(),
                    results: None,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        Self {
            code_version: CODE_VERSION.to_string(),
            spec: spec.clone(),
            axes: spec
                .grid
                .iter()
                .map(|g| g.axis.name().to_string())
                .collect(),
            cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let expected: usize = self.spec.grid.iter().map(|g| g.values.len()).product();
        if self.cells.len() != expected {
            return Err(BenchError::spec(format!(
                "{} cells for a grid of {expected}",
                self.cells.len()
            )));
        }
        for cell in &self.cells {
            if let Some(r) = &cell.results {
                r.validate()?;
            }
        }
        Ok(())
    }

    /// `heatmap.csv`: one row per cell with the axis values, mean test
    /// accuracy and its standard deviation (empty when unavailable).
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::new();
        for axis in &self.axes {
            out.push_str(axis);
            out.push(',');
        }
        out.push_str("mean_acc,std\n");
        for cell in &self.cells {
            for v in &cell.values {
                write!(out, "{v},").expect("writing to a string");
            }
            let summary = cell.results.as_ref().map(|r| r.summary);
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{}",
                fmt(summary.and_then(|s| s.mean_test_acc)),
                fmt(summary.and_then(|s| s.std_test_acc))
            )
            .expect("writing to a string");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingArtifact {
    pub code_version: String,
    pub spec: ExperimentSpec,
    pub dataset: String,
    pub warmup: usize,
    pub epochs: usize,
    pub timings: Vec<Timing>,
}

impl TimingArtifact {
    pub fn new(spec: &ExperimentSpec, timings: Vec<Timing>) -> Self {
        Self {
            code_version: CODE_VERSION.to_string(),
            spec: spec.clone(),
            dataset: spec.dataset.label(),
            warmup: spec.profile.warmup,
            epochs: spec.profile.epochs,
            timings,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        for t in &self.timings {
            if t.samples_ms.len() != self.epochs || !(t.median_ms >= 0.0) {
                return Err(BenchError::spec(format!(
                    "timing `{}` is inconsistent",
                    t.label
                )));
            }
        }
        Ok(())
    }
}

/// Short trick description such as `initial(0.1)+pair+dropout(0.6)`.
pub fn describe_tricks(t: &TrickConfig) -> String {
    let mut parts = Vec::new();
    match t.skip {
        SkipSpec::None => {}
        SkipSpec::Residual { alpha } => parts.push(format!("residual({alpha})")),
        SkipSpec::Initial { alpha } => parts.push(format!("initial({alpha})")),
        SkipSpec::Dense { com } => parts.push(format!("dense({})", com_name(com))),
        SkipSpec::Jumping { com } => parts.push(format!("jumping({})", com_name(com))),
    }
    match t.norm {
        NormSpec::None => {}
        NormSpec::Batch => parts.push("batchnorm".into()),
        NormSpec::Pair { .. } => parts.push("pairnorm".into()),
        NormSpec::Node { .. } => parts.push("nodenorm".into()),
        NormSpec::Mean => parts.push("meannorm".into()),
        NormSpec::Group { .. } => parts.push("groupnorm".into()),
        NormSpec::Comb { .. } => parts.push("combnorm".into()),
    }
    if t.drop.feature_dropout > 0.0 {
        parts.push(format!("dropout({})", t.drop.feature_dropout));
    }
    match t.drop.graph {
        GraphDrop::None => {}
        GraphDrop::DropEdge { rate } => parts.push(format!("dropedge({rate})")),
        GraphDrop::DropNode { rate } => parts.push(format!("dropnode({rate})")),
        GraphDrop::Ladies { rate } => parts.push(format!("ladies({rate})")),
    }
    if let Some(lambda) = t.identity_mapping {
        parts.push(format!("identity({lambda})"));
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("+")
    }
}

fn percent(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x))
        .unwrap_or_else(|| "-".into())
}

/// Markdown table with one row in the dataset / backbone / layers / tricks /
/// accuracy layout.
pub fn summary_markdown(artifact: &ResultsArtifact) -> String {
    let t = &artifact.selected;
    let s = &artifact.summary;
    let acc = match s.std_test_acc {
        Some(_) => format!("{} ± {}", percent(s.mean_test_acc), percent(s.std_test_acc)),
        None => percent(s.mean_test_acc),
    };
    format!(
        "| Dataset | Backbone | Layers | Tricks | Test acc (%) | Runs |\n\
         |---|---|---|---|---|---|\n\
         | {} | {} | {} | {} | {} | {}/{} |\n",
        artifact.dataset,
        backbone_name(t.backbone).to_uppercase(),
        t.depth,
        describe_tricks(t),
        acc,
        s.succeeded,
        s.succeeded + s.failed,
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Reads a JSON artifact back under its strict schema.
pub fn read_artifact<A: DeserializeOwned>(path: &Path) -> Result<A> {
    let bytes = fs::read(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| BenchError::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Writes `artifact` as pretty JSON, then re-reads and re-validates it.
fn write_json<A>(path: &Path, artifact: &A, validate: impl Fn(&A) -> Result<()>) -> Result<()>
where
    A: Serialize + DeserializeOwned + PartialEq,
{
    let text = serde_json::to_vec_pretty(artifact).expect("artifacts serialize");
    write_file(path, &text)?;
    let back: A = read_artifact(path)?;
    validate(&back).map_err(|e| BenchError::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if &back != artifact {
        return Err(BenchError::Artifact {
            path: path.to_path_buf(),
            detail: "artifact does not read back identically".into(),
        });
    }
    Ok(())
}

/// Writes `results.json` and `summary.md` into `dir`.
pub fn write_results(dir: &Path, artifact: &ResultsArtifact) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let results = dir.join(RESULTS_FILE);
    write_json(&results, artifact, ResultsArtifact::validate)?;
    let summary = dir.join(SUMMARY_FILE);
    write_file(&summary, summary_markdown(artifact).as_bytes())?;
    Ok(vec![results, summary])
}

/// Writes `heatmap.csv` and the per-cell `results.json` into `dir`.
pub fn write_grid(dir: &Path, artifact: &GridArtifact) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let heatmap = dir.join(HEATMAP_FILE);
    write_file(&heatmap, artifact.heatmap_csv().as_bytes())?;
    let results = dir.join(RESULTS_FILE);
    write_json(&results, artifact, GridArtifact::validate)?;
    Ok(vec![heatmap, results])
}

pub fn write_timing(dir: &Path, artifact: &TimingArtifact) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let path = dir.join(TIMING_FILE);
    write_json(&path, artifact, TimingArtifact::validate)?;
    Ok(vec![path])
}
