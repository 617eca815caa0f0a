//! Declarative model configuration: backbone, depth and the trick axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Sgc,
}

/// Combiner for dense and jumping connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Com {
    Concat,
    Maxpool,
    /// Sigmoid scores normalized by their sum.
    Attention,
    /// Scores normalized with a softmax across layers.
    AttentionSoftmax,
}

impl Com {
    pub const ALL: [Com; 3] = [Com::Concat, Com::Maxpool, Com::Attention];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SkipSpec {
    None,
    Residual { alpha: f64 },
    Initial { alpha: f64 },
    Dense { com: Com },
    Jumping { com: Com },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormSpec {
    None,
    Batch,
    Pair { s: f64 },
    Node { p: f64 },
    Mean,
    Group { groups: usize, lambda: f64 },
    Comb { groups: usize, lambda: f64, p: f64 },
}

impl NormSpec {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            NormSpec::Batch | NormSpec::Group { .. } | NormSpec::Comb { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GraphDrop {
    None,
    DropEdge { rate: f64 },
    DropNode { rate: f64 },
    Ladies { rate: f64 },
}

impl GraphDrop {
    pub fn rate(&self) -> Option<f64> {
        match *self {
            GraphDrop::None => None,
            GraphDrop::DropEdge { rate }
            | GraphDrop::DropNode { rate }
            | GraphDrop::Ladies { rate } => Some(rate),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropSpec {
    pub feature_dropout: f64,
    pub graph: GraphDrop,
    /// Fresh graph sample per layer; `false` shares one sample across the
    /// layers of an epoch.
    pub layerwise: bool,
}

impl Default for DropSpec {
    fn default() -> Self {
        Self {
            feature_dropout: 0.0,
            graph: GraphDrop::None,
            layerwise: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrickConfig {
    pub backbone: Backbone,
    pub depth: usize,
    pub hidden_dim: usize,
    pub skip: SkipSpec,
    pub norm: NormSpec,
    pub drop: DropSpec,
    /// `Some(lambda)` enables identity mapping.
    pub identity_mapping: Option<f64>,
}

impl TrickConfig {
    /// Plain backbone with no tricks.
    pub fn plain(backbone: Backbone, depth: usize, hidden_dim: usize) -> Self {
        Self {
            backbone,
            depth,
            hidden_dim,
            skip: SkipSpec::None,
            norm: NormSpec::None,
            drop: DropSpec::default(),
            identity_mapping: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        match self.skip {
            SkipSpec::Residual { alpha } | SkipSpec::Initial { alpha }
                if !(0.0..=1.0).contains(&alpha) =>
            {
                return bad(format!("skip alpha {alpha} outside [0, 1]"));
            }
            _ => {}
        }
        match self.norm {
            NormSpec::Pair { s } if !(s > 0.0) => {
                return bad(format!("pair norm scale {s} must be positive"))
            }
            NormSpec::Node { p } if !(p > 0.0) => {
                return bad(format!("node norm order {p} must be positive"))
            }
            NormSpec::Group { groups, lambda } | NormSpec::Comb { groups, lambda, .. }
                if groups == 0 || !(lambda >= 0.0) =>
            {
                return bad(format!(
                    "group norm needs groups >= 1 and lambda >= 0, got ({groups}, {lambda})"
                ));
            }
            NormSpec::Comb { p, .. } if !(p > 0.0) => {
                return bad(format!("node norm order {p} must be positive"))
            }
            _ => {}
        }
        let dropout = self.drop.feature_dropout;
        if !(0.0..1.0).contains(&dropout) {
            return bad(format!("dropout rate {dropout} outside [0, 1)"));
        }
        if let Some(rate) = self.drop.graph.rate() {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("graph drop rate {rate} outside [0, 1)"));
            }
        }
        if let Some(lambda) = self.identity_mapping {
            if self.backbone != Backbone::Gcn {
                return bad("identity mapping needs per-layer weights (gcn backbone)".into());
            }
            if !(lambda >= 0.0) || lambda.is_infinite() {
                return bad(format!(
                    "identity mapping lambda {lambda} must be finite and non-negative"
                ));
            }
            // beta_1 = ln(1 + lambda) must stay within [0, 1]
            if lambda.ln_1p() > 1.0 {
                return bad(format!("identity mapping lambda {lambda} gives beta_1 > 1"));
            }
        }
        Ok(())
    }
}
