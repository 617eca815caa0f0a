//! Random dropping: feature dropout and the per-layer sparsified operators.

use crate::autodiff::{Tape, Var};
use crate::config::{Backbone, DropSpec, GraphDrop};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::sparse::{
    drop_edge, drop_node_mask, ladies_probs, ladies_sample, sym_normalize, CsrGraph,
    NormalizedAdjacency,
};

/// Whether a forward pass trains (stochastic) or evaluates (deterministic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train { seed: u64, epoch: u64 },
    Eval,
}

impl Phase {
    pub fn is_training(&self) -> bool {
        matches!(self, Phase::Train { .. })
    }
}

/// Inverted dropout in training, identity in evaluation.
pub fn feature_dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "feature_dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    tape.dropout(x, rate, rng)
}

/// Node sets `S_0 .. S_L` as membership masks, sampled from the output layer
/// backwards. `S_L` holds every node; each earlier set has
/// `ceil((1 - rate) n)` nodes drawn with probabilities restricted to the
/// next set.
pub fn ladies_sets<T: Scalar>(
    graph: &CsrGraph<T>,
    depth: usize,
    rate: f64,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<bool>>> {
    let n = graph.n();
    let size = ((1.0 - rate) * n as f64).ceil().max(1.0) as usize;
    let mut sets = vec![vec![true; n]; depth + 1];
    let mut selected: Vec<usize> = (0..n).collect();
    for l in (0..depth).rev() {
        let probs = ladies_probs(graph, &selected)?;
        let mut rng = Rng::substream(seed, Stream::GraphDrop, &[epoch, l as u64]);
        selected = ladies_sample(&probs, size, &mut rng)?;
        if selected.is_empty() {
            // no edges reach the next set; keep it so the chain stays non-empty
            selected = (0..n).filter(|&i| sets[l + 1][i]).collect();
        }
        let mask = &mut sets[l];
        mask.iter_mut().for_each(|m| *m = false);
        for &i in &selected {
            mask[i] = true;
        }
    }
    Ok(sets)
}

/// Training-time propagation operator for one layer (0-based `layer` maps
/// `X^layer` to `X^(layer+1)`). Masking always precedes normalization.
pub fn effective_adjacency<T: Scalar>(
    graph: &CsrGraph<T>,
    scheme: &GraphDrop,
    layer: usize,
    ladies: Option<&[Vec<bool>]>,
    rng: &mut Rng,
    phase: Phase,
) -> Result<NormalizedAdjacency<T>> {
    if !phase.is_training() {
        return Err(Error::invalid(
            "effective_adjacency",
            "graph dropping is disabled in evaluation",
        ));
    }
    match *scheme {
        GraphDrop::None => Ok(graph.normalized().clone()),
        GraphDrop::DropEdge { rate: 0.0 } => Ok(graph.normalized().clone()),
        GraphDrop::DropEdge { rate } => Ok(sym_normalize(&drop_edge(graph, rate, rng)?)),
        GraphDrop::DropNode { rate } => {
            let keep = drop_node_mask(graph.n(), rate, rng)?;
            Ok(sym_normalize(&graph.mask(None, Some(&keep))))
        }
        GraphDrop::Ladies { .. } => {
            let sets = ladies.ok_or_else(|| {
                Error::invalid("effective_adjacency", "LADIES needs sampled node sets")
            })?;
            if layer + 1 >= sets.len() {
                return Err(Error::invalid(
                    "effective_adjacency",
                    format!("layer {layer} beyond {} sampled sets", sets.len()),
                ));
            }
            Ok(sym_normalize(
                &graph.mask(Some(&sets[layer + 1]), Some(&sets[layer])),
            ))
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerPlan<T> {
    /// Feature dropout applied to the layer input.
    pub dropout: f64,
    pub adjacency: NormalizedAdjacency<T>,
}

/// Per-layer wiring of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPlan<T> {
    pub phase: Phase,
    pub layers: Vec<LayerPlan<T>>,
    /// Feature dropout applied before the output transform.
    pub output_dropout: f64,
}

impl<T: Scalar> ForwardPlan<T> {
    /// True when the pass draws no random numbers.
    pub fn is_deterministic(&self) -> bool {
        self.output_dropout == 0.0 && self.layers.iter().all(|l| l.dropout == 0.0)
    }

    /// Seeded stream for the feature-dropout mask at `site` (layer index, or
    /// the depth for the output).
    pub fn dropout_rng(&self, site: usize) -> Rng {
        match self.phase {
            Phase::Train { seed, epoch } => {
                Rng::substream(seed, Stream::FeatureDropout, &[epoch, site as u64])
            }
            Phase::Eval => Rng::new(0),
        }
    }
}

/// Builds the forward plan for a `depth`-layer model. GCN applies feature
/// dropout before every layer and before the output transform; SGC only
/// after the input transform and before the output transform. Evaluation
/// plans use the cached `R(A)` and no dropout.
pub fn wire_dropping<T: Scalar>(
    spec: &DropSpec,
    backbone: Backbone,
    depth: usize,
    graph: &CsrGraph<T>,
    phase: Phase,
) -> Result<ForwardPlan<T>> {
    let clean = graph.normalized();
    let Phase::Train { seed, epoch } = phase else {
        return Ok(ForwardPlan {
            phase,
            layers: (0..depth)
                .map(|_| LayerPlan {
                    dropout: 0.0,
                    adjacency: clean.clone(),
                })
                .collect(),
            output_dropout: 0.0,
        });
    };
    let rate = spec.feature_dropout;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let ladies = match spec.graph {
        GraphDrop::Ladies { rate } => Some(ladies_sets(graph, depth, rate, seed, epoch)?),
        _ => None,
    };
    let adjacency_for = |layer: usize| -> Result<NormalizedAdjacency<T>> {
        let mut rng = Rng::substream(seed, Stream::GraphDrop, &[epoch, layer as u64, 1]);
        effective_adjacency(
            graph,
            &spec.graph,
            layer,
            ladies.as_deref(),
            &mut rng,
            phase,
        )
    };
    let shared = if spec.layerwise {
        None
    } else {
        Some(adjacency_for(depth - 1)?)
    };
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let dropout = match backbone {
            Backbone::Gcn => rate,
            Backbone::Sgc if l == 0 => rate,
            Backbone::Sgc => 0.0,
        };
        let adjacency = match &shared {
            Some(a) => a.clone(),
            None => adjacency_for(l)?,
        };
        layers.push(LayerPlan { dropout, adjacency });
    }
    Ok(ForwardPlan {
        phase,
        layers,
        output_dropout: rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn ring(n: usize) -> CsrGraph<f64> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        CsrGraph::from_edges(n, &edges, true).unwrap()
    }

    const TRAIN: Phase = Phase::Train { seed: 3, epoch: 0 };

    #[test]
    fn eval_plan_is_clean() {
        let g = ring(6);
        let spec = DropSpec {
            feature_dropout: 0.6,
            graph: GraphDrop::DropEdge { rate: 0.5 },
            layerwise: true,
        };
        let plan = wire_dropping(&spec, Backbone::Gcn, 3, &g, Phase::Eval).unwrap();
        assert!(plan.is_deterministic());
        assert!(plan
            .layers
            .iter()
            .all(|l| l.adjacency.ptr_eq(g.normalized())));
    }

    #[test]
    fn zero_rate_edge_drop_reuses_cache() {
        let g = ring(6);
        let mut rng = Rng::new(1);
        let a = effective_adjacency(
            &g,
            &GraphDrop::DropEdge { rate: 0.0 },
            0,
            None,
            &mut rng,
            TRAIN,
        )
        .unwrap();
        assert!(a.ptr_eq(g.normalized()));
        assert!(effective_adjacency(
            &g,
            &GraphDrop::DropEdge { rate: 0.1 },
            0,
            None,
            &mut rng,
            Phase::Eval
        )
        .is_err());
    }

    #[test]
    fn sgc_dropout_only_at_ends() {
        let g = ring(5);
        let spec = DropSpec {
            feature_dropout: 0.5,
            ..DropSpec::default()
        };
        let plan = wire_dropping(&spec, Backbone::Sgc, 4, &g, TRAIN).unwrap();
        let rates: Vec<f64> = plan.layers.iter().map(|l| l.dropout).collect();
        assert_eq!(rates, vec![0.5, 0.0, 0.0, 0.0]);
        assert_eq!(plan.output_dropout, 0.5);
        let gcn = wire_dropping(&spec, Backbone::Gcn, 4, &g, TRAIN).unwrap();
        assert!(gcn.layers.iter().all(|l| l.dropout == 0.5));
    }

    #[test]
    fn ladies_sets_shape() {
        let g = ring(10);
        let sets = ladies_sets(&g, 3, 0.5, 9, 0).unwrap();
        assert_eq!(sets.len(), 4);
        assert!(sets[3].iter().all(|&m| m));
        for s in &sets[..3] {
            assert_eq!(s.iter().filter(|&&m| m).count(), 5);
        }
    }

    #[test]
    fn eval_dropout_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(3, 3));
        let mut rng = Rng::new(0);
        assert_eq!(
            feature_dropout(&mut tape, x, 0.9, &mut rng, false).unwrap(),
            x
        );
        assert!(feature_dropout(&mut tape, x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn layerwise_masks_differ_and_replay() {
        let g = ring(40);
        let spec = DropSpec {
            feature_dropout: 0.0,
            graph: GraphDrop::DropEdge { rate: 0.5 },
            layerwise: true,
        };
        let a = wire_dropping(&spec, Backbone::Gcn, 2, &g, TRAIN).unwrap();
        let b = wire_dropping(&spec, Backbone::Gcn, 2, &g, TRAIN).unwrap();
        assert_ne!(a.layers[0].adjacency, a.layers[1].adjacency);
        assert_eq!(a.layers[1].adjacency, b.layers[1].adjacency);
        let shared = DropSpec {
            layerwise: false,
            ..spec
        };
        let c = wire_dropping(&shared, Backbone::Gcn, 2, &g, TRAIN).unwrap();
        assert!(c.layers[0].adjacency.ptr_eq(&c.layers[1].adjacency));
    }
}
