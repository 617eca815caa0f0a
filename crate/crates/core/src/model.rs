//! Model assembly: input transform, trick-wrapped layers, output transform.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::config::{Backbone, Com, NormSpec, SkipSpec, TrickConfig};
use crate::drop::{feature_dropout, ForwardPlan};
use crate::error::{Error, Result};
use crate::layers::{identity_beta, identity_mix};
use crate::norm::{
    batch_norm, comb_norm, group_norm, mean_norm, node_norm, pair_norm, GroupNormVars,
};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::skip::{jumping_aggregate, skip_combine};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Flat, ordered parameter store. Every tensor is trainable; those flagged
/// as output parameters may get their own weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
    output: Vec<bool>,
}

impl<T: Scalar> ModelParams<T> {
    fn push(&mut self, name: String, value: Tensor<T>, output: bool) -> usize {
        self.tensors.push(value);
        self.names.push(name);
        self.output.push(output);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// True for the prediction layer's weight and bias.
    pub fn is_output(&self, i: usize) -> bool {
        self.output[i]
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }
}

#[derive(Debug, Clone)]
enum NormSlots {
    None,
    Batch {
        gamma: usize,
        beta: usize,
    },
    Group {
        assign: usize,
        gamma: Vec<usize>,
        beta: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct LayerSlots {
    weight: Option<usize>,
    norm: NormSlots,
    com: Option<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    input: (usize, usize),
    layers: Vec<LayerSlots>,
    output: (usize, usize),
    jump: Option<usize>,
}

/// Values produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    /// Final hidden embedding, before the output transform.
    pub hidden: Var,
    /// One tape variable per parameter, in store order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    cfg: TrickConfig,
    dims: Dims,
    params: ModelParams<T>,
    layout: Layout,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| {
        T::of((2.0 * rng.uniform() - 1.0) * limit)
    })
}

fn com_shape(com: Com, stack: usize, hidden: usize) -> Option<(usize, usize)> {
    match com {
        Com::Concat => Some((stack * hidden, hidden)),
        Com::Attention | Com::AttentionSoftmax => Some((hidden, 1)),
        Com::Maxpool => None,
    }
}

/// Builds a model with Glorot-uniform weights and zero biases drawn from the
/// initialization stream of `seed`.
pub fn build_model<T: Scalar>(cfg: &TrickConfig, dims: Dims, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    if dims.input == 0 || dims.classes == 0 {
        return Err(Error::Config(format!("degenerate dimensions {dims:?}")));
    }
    if dims.hidden != cfg.hidden_dim {
        return Err(Error::Config(format!(
            "hidden dimension {} differs from configured {}",
            dims.hidden, cfg.hidden_dim
        )));
    }
    let h = dims.hidden;
    let mut rng = Rng::substream(seed, Stream::Init, &[]);
    let mut p = ModelParams {
        tensors: Vec::new(),
        names: Vec::new(),
        output: Vec::new(),
    };
    let input = (
        p.push(
            "input.weight".into(),
            glorot(dims.input, h, &mut rng),
            false,
        ),
        p.push("input.bias".into(), Tensor::zeros(1, h), false),
    );
    let mut layers = Vec::with_capacity(cfg.depth);
    for l in 1..=cfg.depth {
        let weight = match cfg.backbone {
            Backbone::Gcn => {
                Some(p.push(format!("layer{l}.weight"), glorot(h, h, &mut rng), false))
            }
            Backbone::Sgc => None,
        };
        let norm = match cfg.norm {
            NormSpec::Batch => NormSlots::Batch {
                gamma: p.push(format!("layer{l}.bn.gamma"), Tensor::ones(1, h), false),
                beta: p.push(format!("layer{l}.bn.beta"), Tensor::zeros(1, h), false),
            },
            NormSpec::Group { groups, .. } | NormSpec::Comb { groups, .. } => {
                let assign = p.push(
                    format!("layer{l}.group.assign"),
                    glorot(h, groups, &mut rng),
                    false,
                );
                let gamma = (0..groups)
                    .map(|g| {
                        p.push(
                            format!("layer{l}.group{g}.gamma"),
                            Tensor::ones(1, h),
                            false,
                        )
                    })
                    .collect();
                let beta = (0..groups)
                    .map(|g| {
                        p.push(
                            format!("layer{l}.group{g}.beta"),
                            Tensor::zeros(1, h),
                            false,
                        )
                    })
                    .collect();
                NormSlots::Group {
                    assign,
                    gamma,
                    beta,
                }
            }
            _ => NormSlots::None,
        };
        let com = match cfg.skip {
            SkipSpec::Dense { com } => com_shape(com, l + 1, h)
                .map(|(r, c)| p.push(format!("layer{l}.com"), glorot(r, c, &mut rng), false)),
            _ => None,
        };
        layers.push(LayerSlots { weight, norm, com });
    }
    let jump = match cfg.skip {
        SkipSpec::Jumping { com } => com_shape(com, cfg.depth + 1, h)
            .map(|(r, c)| p.push("jump.com".into(), glorot(r, c, &mut rng), false)),
        _ => None,
    };
    let output = (
        p.push(
            "output.weight".into(),
            glorot(h, dims.classes, &mut rng),
            true,
        ),
        p.push("output.bias".into(), Tensor::zeros(1, dims.classes), true),
    );
    Ok(Model {
        cfg: *cfg,
        dims,
        params: p,
        layout: Layout {
            input,
            layers,
            output,
            jump,
        },
    })
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &TrickConfig {
        &self.cfg
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ModelParams<T>) -> Result<()> {
        let same = params.len() == self.params.len()
            && params
                .tensors
                .iter()
                .zip(&self.params.tensors)
                .all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(Error::invalid(
                "Model::set_params",
                "parameter layout differs",
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Records one forward pass over all nodes. `features` is the `n x d`
    /// input matrix; parameters become leaves when `trainable`, constants
    /// otherwise.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        features: &Arc<CsrMatrix<T>>,
        plan: &ForwardPlan<T>,
        trainable: bool,
    ) -> Result<Forward> {
        let cfg = &self.cfg;
        if plan.layers.len() != cfg.depth {
            return Err(Error::invalid(
                "Model::forward",
                format!(
                    "plan has {} layers, model has {}",
                    plan.layers.len(),
                    cfg.depth
                ),
            ));
        }
        if features.cols() != self.dims.input {
            return Err(Error::Shape {
                op: "Model::forward",
                left: (features.rows(), features.cols()),
                right: (self.dims.input, self.dims.hidden),
            });
        }
        let training = plan.phase.is_training();
        let vars: Vec<Var> = self
            .params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        let v = |i: usize| vars[i];

        let projected = tape.spmm(features, v(self.layout.input.0))?;
        let mut x = tape.add_broadcast(projected, v(self.layout.input.1))?;
        if cfg.backbone == Backbone::Gcn {
            x = tape.relu(x)?;
        }
        let mut history = vec![x];
        for (l, (slots, lp)) in self.layout.layers.iter().zip(&plan.layers).enumerate() {
            let mut rng = plan.dropout_rng(l);
            let input = feature_dropout(tape, x, lp.dropout, &mut rng, training)?;
            let propagated = tape.spmm(lp.adjacency.matrix(), input)?;
            let mut out = match (slots.weight, cfg.identity_mapping) {
                (Some(w), Some(lambda)) => {
                    identity_mix(tape, propagated, v(w), identity_beta(lambda, l + 1))?
                }
                (Some(w), None) => tape.matmul(propagated, v(w))?,
                (None, _) => propagated,
            };
            out = self.apply_norm(tape, out, &slots.norm, &vars)?;
            if cfg.backbone == Backbone::Gcn {
                out = tape.relu(out)?;
            }
            out = skip_combine(tape, &cfg.skip, out, &history, slots.com.map(v))?;
            history.push(out);
            x = out;
        }
        if let SkipSpec::Jumping { com } = cfg.skip {
            x = jumping_aggregate(tape, &history, com, self.layout.jump.map(v))?;
        }
        let hidden = x;
        let mut rng = plan.dropout_rng(cfg.depth);
        let x = feature_dropout(tape, x, plan.output_dropout, &mut rng, training)?;
        let scores = tape.matmul(x, v(self.layout.output.0))?;
        let logits = tape.add_broadcast(scores, v(self.layout.output.1))?;
        Ok(Forward {
            logits,
            hidden,
            params: vars,
        })
    }

    fn apply_norm(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        slots: &NormSlots,
        vars: &[Var],
    ) -> Result<Var> {
        let group_vars = || match slots {
            NormSlots::Group {
                assign,
                gamma,
                beta,
            } => GroupNormVars {
                assign: vars[*assign],
                gamma: gamma.iter().map(|&i| vars[i]).collect(),
                beta: beta.iter().map(|&i| vars[i]).collect(),
            },
            _ => unreachable!("group parameters are allocated for group and comb norms"),
        };
        match self.cfg.norm {
            NormSpec::None => Ok(x),
            NormSpec::Pair { s } => pair_norm(tape, x, s),
            NormSpec::Node { p } => node_norm(tape, x, p),
            NormSpec::Mean => mean_norm(tape, x),
            NormSpec::Batch => match slots {
                NormSlots::Batch { gamma, beta } => batch_norm(tape, x, vars[*gamma], vars[*beta]),
                _ => unreachable!("batch parameters are allocated for batch norm"),
            },
            NormSpec::Group { lambda, .. } => group_norm(tape, x, &group_vars(), lambda),
            NormSpec::Comb { lambda, p, .. } => comb_norm(tape, x, &group_vars(), lambda, p),
        }
    }
}
