//! Experiment specs in a flat `dotted.key = value` text format.
//!
//! ```text
//! # comment
//! dataset = cora                 # name under $DEEPGNN_DATA_DIR, a path, or `sbm`
//! trick.backbone = gcn           # gcn | sgc
//! trick.depth = 32
//! trick.hidden_dim = 64
//! trick.skip.mode = initial      # none | residual | initial | dense | jumping
//! trick.skip.alpha = 0.1         # residual / initial
//! trick.skip.com = concat        # dense / jumping: concat | maxpool | attention | attention_softmax
//! trick.norm.kind = pair         # none | batch | pair | node | mean | group | comb
//! trick.norm.s = 1               # pair
//! trick.norm.p = 2               # node / comb
//! trick.norm.groups = 10         # group / comb
//! trick.norm.lambda = 0.005      # group / comb
//! trick.drop.feature_dropout = 0.6
//! trick.drop.scheme = drop_edge  # none | drop_edge | drop_node | ladies
//! trick.drop.graph_rate = 0.5
//! trick.drop.layerwise = true
//! trick.identity_mapping.enabled = true
//! trick.identity_mapping.lambda = 0.1
//! train.lr = 0.005
//! train.weight_decay = 5e-4
//! train.weight_decay_output = 5e-4
//! train.max_epochs = 1000
//! train.patience = 100
//! train.label_smoothing = 0.1
//! run.reps = 10
//! run.seed_base = 0
//! run.search_alpha = false       # pick alpha from {0.1, 0.2, 0.4, 0.6, 0.8} by validation accuracy
//! run.search_com = false         # pick the COM function by validation accuracy
//! grid.lr = 0.01, 0.001, 0.0001  # at most two grid.* axes, in file order
//! grid.weight_decay = 0, 0.01
//! profile.warmup = 5
//! profile.epochs = 20
//! profile.skip_modes = none, residual, initial, jumping, dense
//! sbm.blocks = 3                 # dataset = sbm only
//! sbm.nodes_per_block = 300
//! sbm.p_in = 0.05
//! sbm.p_out = 0.002
//! sbm.features = 16
//! sbm.noise = 1
//! sbm.seed = 0
//! ```
//!
//! Unknown or repeated keys are errors, as are keys that do not apply to
//! the selected variant (for example `trick.skip.com` with `mode = initial`).

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deepgnn::{Backbone, Com, DropSpec, GraphDrop, NormSpec, SkipSpec, TrainConfig, TrickConfig};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Candidate values of the skip coefficient for `run.search_alpha`.
pub const ALPHA_GRID: [f64; 5] = [0.1, 0.2, 0.4, 0.6, 0.8];

pub const DATA_DIR_ENV: &str = "DEEPGNN_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub features: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            blocks: 3,
            nodes_per_block: 300,
            p_in: 0.05,
            p_out: 0.002,
            features: 16,
            noise: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Directory name under the data root.
    Named {
        name: String,
    },
    Path {
        path: PathBuf,
    },
    Sbm(SbmParams),
}

impl DatasetSource {
    /// Short label for reports.
    pub fn label(&self) -> String {
        match self {
            DatasetSource::Named { name } => name.clone(),
            DatasetSource::Path { path } => path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            DatasetSource::Sbm(p) => format!("sbm-{}x{}", p.blocks, p.nodes_per_block),
        }
    }

    fn spec_value(&self) -> String {
        match self {
            DatasetSource::Named { name } => name.clone(),
            DatasetSource::Path { path } => path.display().to_string(),
            DatasetSource::Sbm(_) => "sbm".into(),
        }
    }
}

/// Root directory for named datasets: `$DEEPGNN_DATA_DIR`, else `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lr,
    WeightDecay,
    Dropout,
    HiddenDim,
    Alpha,
    GraphRate,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::Lr,
        Axis::WeightDecay,
        Axis::Dropout,
        Axis::HiddenDim,
        Axis::Alpha,
        Axis::GraphRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Lr => "lr",
            Axis::WeightDecay => "weight_decay",
            Axis::Dropout => "dropout",
            Axis::HiddenDim => "hidden_dim",
            Axis::Alpha => "alpha",
            Axis::GraphRate => "graph_rate",
        }
    }

    /// Writes `value` into the field this axis controls.
    pub fn apply(self, spec: &mut ExperimentSpec, value: f64) -> Result<()> {
        let trick = &mut spec.trick;
        match self {
            Axis::Lr => spec.train.lr = value,
            Axis::WeightDecay => spec.train.weight_decay = value,
            Axis::Dropout => trick.drop.feature_dropout = value,
            Axis::HiddenDim => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(BenchError::spec(format!(
                        "hidden_dim grid value {value} is not a positive integer"
                    )));
                }
                trick.hidden_dim = value as usize;
            }
            Axis::Alpha => match &mut trick.skip {
                SkipSpec::Residual { alpha } | SkipSpec::Initial { alpha } => *alpha = value,
                _ => {
                    return Err(BenchError::spec(
                        "alpha axis needs trick.skip.mode residual or initial",
                    ))
                }
            },
            Axis::GraphRate => match &mut trick.drop.graph {
                GraphDrop::DropEdge { rate }
                | GraphDrop::DropNode { rate }
                | GraphDrop::Ladies { rate } => *rate = value,
                GraphDrop::None => {
                    return Err(BenchError::spec(
                        "graph_rate axis needs a trick.drop.scheme",
                    ))
                }
            },
        }
        Ok(())
    }
}

impl FromStr for Axis {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| BenchError::spec(format!("unknown grid axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub axis: Axis,
    pub values: Vec<f64>,
}

/// Skip-connection family without its parameters, for timing comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    None,
    Residual,
    Initial,
    Dense,
    Jumping,
}

impl SkipMode {
    pub fn of(skip: &SkipSpec) -> Self {
        match skip {
            SkipSpec::None => SkipMode::None,
            SkipSpec::Residual { .. } => SkipMode::Residual,
            SkipSpec::Initial { .. } => SkipMode::Initial,
            SkipSpec::Dense { .. } => SkipMode::Dense,
            SkipSpec::Jumping { .. } => SkipMode::Jumping,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkipMode::None => "none",
            SkipMode::Residual => "residual",
            SkipMode::Initial => "initial",
            SkipMode::Dense => "dense",
            SkipMode::Jumping => "jumping",
        }
    }

    /// Skip spec of this family, reusing `alpha` / `com` from `base` when it
    /// carries them (0.1 and concat otherwise).
    pub fn with_defaults(self, base: &SkipSpec) -> SkipSpec {
        let alpha = match *base {
            SkipSpec::Residual { alpha } | SkipSpec::Initial { alpha } => alpha,
            _ => 0.1,
        };
        let com = match *base {
            SkipSpec::Dense { com } | SkipSpec::Jumping { com } => com,
            _ => Com::Concat,
        };
        match self {
            SkipMode::None => SkipSpec::None,
            SkipMode::Residual => SkipSpec::Residual { alpha },
            SkipMode::Initial => SkipSpec::Initial { alpha },
            SkipMode::Dense => SkipSpec::Dense { com },
            SkipMode::Jumping => SkipSpec::Jumping { com },
        }
    }
}

impl FromStr for SkipMode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        [
            SkipMode::None,
            SkipMode::Residual,
            SkipMode::Initial,
            SkipMode::Dense,
            SkipMode::Jumping,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| BenchError::spec(format!("unknown skip mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub warmup: usize,
    pub epochs: usize,
    /// Skip families to time; empty times the configured model only.
    pub skip_modes: Vec<SkipMode>,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            warmup: 5,
            epochs: 20,
            skip_modes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub trick: TrickConfig,
    /// Training settings; `seed` is replaced per repetition.
    pub train: TrainConfig,
    pub reps: usize,
    pub seed_base: u64,
    pub search_alpha: bool,
    pub search_com: bool,
    pub grid: Vec<GridAxis>,
    pub profile: ProfileSpec,
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetSource, trick: TrickConfig, train: TrainConfig) -> Self {
        Self {
            dataset,
            trick,
            train,
            reps: 10,
            seed_base: 0,
            search_alpha: false,
            search_com: false,
            grid: Vec::new(),
            profile: ProfileSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trick.validate()?;
        self.train.validate()?;
        if self.reps == 0 {
            return Err(BenchError::spec("run.reps must be at least 1"));
        }
        if self.search_alpha
            && !matches!(
                self.trick.skip,
                SkipSpec::Residual { .. } | SkipSpec::Initial { .. }
            )
        {
            return Err(BenchError::spec(
                "run.search_alpha needs trick.skip.mode residual or initial",
            ));
        }
        if self.search_com
            && !matches!(
                self.trick.skip,
                SkipSpec::Dense { .. } | SkipSpec::Jumping { .. }
            )
        {
            return Err(BenchError::spec(
                "run.search_com needs trick.skip.mode dense or jumping",
            ));
        }
        if self.grid.len() > 2 {
            return Err(BenchError::spec(format!(
                "at most 2 grid axes, got {}",
                self.grid.len()
            )));
        }
        for (k, g) in self.grid.iter().enumerate() {
            if g.values.is_empty() {
                return Err(BenchError::spec(format!(
                    "grid axis {} has no values",
                    g.axis.name()
                )));
            }
            if self.grid[..k].iter().any(|h| h.axis == g.axis) {
                return Err(BenchError::spec(format!(
                    "grid axis {} listed twice",
                    g.axis.name()
                )));
            }
            if g.axis == Axis::Alpha && self.search_alpha {
                return Err(BenchError::spec(
                    "alpha cannot be both searched and gridded",
                ));
            }
            let mut probe = self.clone();
            g.axis.apply(&mut probe, g.values[0])?;
        }
        if self.profile.epochs < 20 {
            return Err(BenchError::spec(format!(
                "profile.epochs {} below the minimum of 20",
                self.profile.epochs
            )));
        }
        Ok(())
    }

    /// Canonical text form; [`parse_spec`] reads it back to an equal spec.
    pub fn to_spec_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn Display| {
            writeln!(out, "{k} = {v}").expect("writing to a string");
        };
        put("dataset", &self.dataset.spec_value());
        if let DatasetSource::Sbm(p) = &self.dataset {
            put("sbm.blocks", &p.blocks);
            put("sbm.nodes_per_block", &p.nodes_per_block);
            put("sbm.p_in", &p.p_in);
            put("sbm.p_out", &p.p_out);
            put("sbm.features", &p.features);
            put("sbm.noise", &p.noise);
            put("sbm.seed", &p.seed);
        }
        let t = &self.trick;
        put("trick.backbone", &backbone_name(t.backbone));
        put("trick.depth", &t.depth);
        put("trick.hidden_dim", &t.hidden_dim);
        put("trick.skip.mode", &SkipMode::of(&t.skip).name());
        match t.skip {
            SkipSpec::Residual { alpha } | SkipSpec::Initial { alpha } => {
                put("trick.skip.alpha", &alpha)
            }
            SkipSpec::Dense { com } | SkipSpec::Jumping { com } => {
                put("trick.skip.com", &com_name(com))
            }
            SkipSpec::None => {}
        }
        match t.norm {
            NormSpec::None => put("trick.norm.kind", &"none"),
            NormSpec::Batch => put("trick.norm.kind", &"batch"),
            NormSpec::Mean => put("trick.norm.kind", &"mean"),
            NormSpec::Pair { s } => {
                put("trick.norm.kind", &"pair");
                put("trick.norm.s", &s);
            }
            NormSpec::Node { p } => {
                put("trick.norm.kind", &"node");
                put("trick.norm.p", &p);
            }
            NormSpec::Group { groups, lambda } => {
                put("trick.norm.kind", &"group");
                put("trick.norm.groups", &groups);
                put("trick.norm.lambda", &lambda);
            }
            NormSpec::Comb { groups, lambda, p } => {
                put("trick.norm.kind", &"comb");
                put("trick.norm.groups", &groups);
                put("trick.norm.lambda", &lambda);
                put("trick.norm.p", &p);
            }
        }
        put("trick.drop.feature_dropout", &t.drop.feature_dropout);
        let scheme = match t.drop.graph {
            GraphDrop::None => "none",
            GraphDrop::DropEdge { .. } => "drop_edge",
            GraphDrop::DropNode { .. } => "drop_node",
            GraphDrop::Ladies { .. } => "ladies",
        };
        put("trick.drop.scheme", &scheme);
        if let Some(rate) = t.drop.graph.rate() {
            put("trick.drop.graph_rate", &rate);
        }
        put("trick.drop.layerwise", &t.drop.layerwise);
        put(
            "trick.identity_mapping.enabled",
            &t.identity_mapping.is_some(),
        );
        if let Some(lambda) = t.identity_mapping {
            put("trick.identity_mapping.lambda", &lambda);
        }
        let tr = &self.train;
        put("train.lr", &tr.lr);
        put("train.weight_decay", &tr.weight_decay);
        if let Some(wd) = tr.weight_decay_output {
            put("train.weight_decay_output", &wd);
        }
        put("train.max_epochs", &tr.max_epochs);
        put("train.patience", &tr.patience);
        put("train.label_smoothing", &tr.label_smoothing);
        put("run.reps", &self.reps);
        put("run.seed_base", &self.seed_base);
        put("run.search_alpha", &self.search_alpha);
        put("run.search_com", &self.search_com);
        for g in &self.grid {
            let values: Vec<String> = g.values.iter().map(f64::to_string).collect();
            put(&format!("grid.{}", g.axis.name()), &values.join(", "));
        }
        put("profile.warmup", &self.profile.warmup);
        put("profile.epochs", &self.profile.epochs);
        if !self.profile.skip_modes.is_empty() {
            let modes: Vec<&str> = self.profile.skip_modes.iter().map(|m| m.name()).collect();
            put("profile.skip_modes", &modes.join(", "));
        }
        out
    }
}

impl Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_spec_string())
    }
}

pub fn backbone_name(b: Backbone) -> &'static str {
    match b {
        Backbone::Gcn => "gcn",
        Backbone::Sgc => "sgc",
    }
}

pub fn com_name(c: Com) -> &'static str {
    match c {
        Com::Concat => "concat",
        Com::Maxpool => "maxpool",
        Com::Attention => "attention",
        Com::AttentionSoftmax => "attention_softmax",
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Key-value pairs of a spec file, consumed as they are interpreted.
struct Fields {
    entries: BTreeMap<String, Entry>,
    grid_order: Vec<String>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut grid_order = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                BenchError::parse(line, format!("expected `key = value`, got `{content}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(BenchError::parse(line, format!("malformed key `{key}`")));
            }
            if value.is_empty() {
                return Err(BenchError::parse(line, format!("empty value for `{key}`")));
            }
            if key.starts_with("grid.") {
                grid_order.push(key.to_string());
            }
            let entry = Entry {
                line,
                value: value.to_string(),
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(BenchError::parse(
                    line,
                    format!("`{key}` already set on line {}", prev.line),
                ));
            }
        }
        Ok(Self {
            entries,
            grid_order,
        })
    }

    fn take_raw(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| BenchError::parse(e.line, format!("`{key}`: {err}"))),
        }
    }

    fn require<V: FromStr>(&mut self, key: &str) -> Result<V>
    where
        V::Err: Display,
    {
        self.take(key)?
            .ok_or_else(|| BenchError::spec(format!("missing `{key}`")))
    }

    fn or<V: FromStr>(&mut self, key: &str, default: V) -> Result<V>
    where
        V::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn list<V: FromStr>(&mut self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: Display,
    {
        let Some(e) = self.take_raw(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|err| BenchError::parse(e.line, format!("`{key}`: {err}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Errors on any key left unconsumed, naming its line.
    fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(BenchError::parse(
                e.line,
                format!("unknown or inapplicable key `{key}`"),
            )),
        }
    }
}

fn choice<V: Copy>(key: &str, value: &str, options: &[(&str, V)]) -> Result<V> {
    options
        .iter()
        .find(|(n, _)| *n == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            BenchError::spec(format!(
                "`{key}` must be one of {}, got `{value}`",
                names.join(", ")
            ))
        })
}

/// Parses spec text. Keys not given take the defaults of
/// [`TrainConfig::default`] and a plain two-layer GCN with 64 hidden units.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let mut f = Fields::parse(text)?;
    let dataset: String = f.require("dataset")?;
    let dataset = if dataset == "sbm" {
        let d = SbmParams::default();
        DatasetSource::Sbm(SbmParams {
            blocks: f.or("sbm.blocks", d.blocks)?,
            nodes_per_block: f.or("sbm.nodes_per_block", d.nodes_per_block)?,
            p_in: f.or("sbm.p_in", d.p_in)?,
            p_out: f.or("sbm.p_out", d.p_out)?,
            features: f.or("sbm.features", d.features)?,
            noise: f.or("sbm.noise", d.noise)?,
            seed: f.or("sbm.seed", d.seed)?,
        })
    } else if dataset.contains('/') || dataset.starts_with('.') {
        DatasetSource::Path {
            path: dataset.into(),
        }
    } else {
        DatasetSource::Named { name: dataset }
    };

    let backbone: String = f.or("trick.backbone", "gcn".to_string())?;
    let backbone = choice(
        "trick.backbone",
        &backbone,
        &[("gcn", Backbone::Gcn), ("sgc", Backbone::Sgc)],
    )?;
    let depth = f.or("trick.depth", 2)?;
    let hidden_dim = f.or("trick.hidden_dim", 64)?;

    let mode: SkipMode = f.or("trick.skip.mode", SkipMode::None)?;
    let skip = match mode {
        SkipMode::None => SkipSpec::None,
        SkipMode::Residual | SkipMode::Initial => {
            let alpha = f.or("trick.skip.alpha", 0.1)?;
            if mode == SkipMode::Residual {
                SkipSpec::Residual { alpha }
            } else {
                SkipSpec::Initial { alpha }
            }
        }
        SkipMode::Dense | SkipMode::Jumping => {
            let com: String = f.or("trick.skip.com", "concat".to_string())?;
            let com = choice(
                "trick.skip.com",
                &com,
                &[
                    ("concat", Com::Concat),
                    ("maxpool", Com::Maxpool),
                    ("attention", Com::Attention),
                    ("attention_softmax", Com::AttentionSoftmax),
                ],
            )?;
            if mode == SkipMode::Dense {
                SkipSpec::Dense { com }
            } else {
                SkipSpec::Jumping { com }
            }
        }
    };

    let kind: String = f.or("trick.norm.kind", "none".to_string())?;
    let norm = match kind.as_str() {
        "none" => NormSpec::None,
        "batch" => NormSpec::Batch,
        "mean" => NormSpec::Mean,
        "pair" => NormSpec::Pair { s: f.or("trick.norm.s", 1.0)? },
        "node" => NormSpec::Node { p: f.or("trick.norm.p", 2.0)? },
        "group" => NormSpec::Group {
            groups: f.or("trick.norm.groups", 10)?,
            lambda: f.or("trick.norm.lambda", 0.01)?,
        },
        "comb" => NormSpec::Comb {
            groups: f.or("trick.norm.groups", 10)?,
            lambda: f.or("trick.norm.lambda", 0.01)?,
            p: f.or("trick.norm.p", 2.0)?,
        },
        other => {
            return Err(BenchError::spec(format!(
                "`trick.norm.kind` must be one of none, batch, pair, node, mean, group, comb, got `{other}`"
            )))
        }
    };

    let feature_dropout = f.or("trick.drop.feature_dropout", 0.0)?;
    let scheme: String = f.or("trick.drop.scheme", "none".to_string())?;
    let graph = match scheme.as_str() {
        "none" => GraphDrop::None,
        other => {
            let rate = f.require("trick.drop.graph_rate")?;
            match other {
                "drop_edge" => GraphDrop::DropEdge { rate },
                "drop_node" => GraphDrop::DropNode { rate },
                "ladies" => GraphDrop::Ladies { rate },
                _ => {
                    return Err(BenchError::spec(format!(
                        "`trick.drop.scheme` must be one of none, drop_edge, drop_node, ladies, got `{other}`"
                    )))
                }
            }
        }
    };
    let layerwise = f.or("trick.drop.layerwise", true)?;

    let identity_mapping = if f.or("trick.identity_mapping.enabled", false)? {
        Some(f.or("trick.identity_mapping.lambda", 0.1)?)
    } else {
        None
    };

    let defaults = TrainConfig::default();
    let train = TrainConfig {
        lr: f.or("train.lr", defaults.lr)?,
        weight_decay: f.or("train.weight_decay", defaults.weight_decay)?,
        weight_decay_output: f.take("train.weight_decay_output")?,
        max_epochs: f.or("train.max_epochs", defaults.max_epochs)?,
        patience: f.or("train.patience", defaults.patience)?,
        label_smoothing: f.or("train.label_smoothing", defaults.label_smoothing)?,
        seed: 0,
    };

    let trick = TrickConfig {
        backbone,
        depth,
        hidden_dim,
        skip,
        norm,
        drop: DropSpec {
            feature_dropout,
            graph,
            layerwise,
        },
        identity_mapping,
    };
    let mut spec = ExperimentSpec::new(dataset, trick, train);
    spec.reps = f.or("run.reps", spec.reps)?;
    spec.seed_base = f.or("run.seed_base", spec.seed_base)?;
    spec.search_alpha = f.or("run.search_alpha", false)?;
    spec.search_com = f.or("run.search_com", false)?;

    for key in std::mem::take(&mut f.grid_order) {
        let axis: Axis = key["grid.".len()..].parse()?;
        let values = f.list(&key)?.expect("grid key recorded while parsing");
        spec.grid.push(GridAxis { axis, values });
    }
    let d = ProfileSpec::default();
    spec.profile = ProfileSpec {
        warmup: f.or("profile.warmup", d.warmup)?,
        epochs: f.or("profile.epochs", d.epochs)?,
        skip_modes: f.list("profile.skip_modes")?.unwrap_or_default(),
    };
    f.finish()?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec(&text)
}
