//! Full-batch transductive training.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::TrickConfig;
use crate::data::Dataset;
use crate::drop::{wire_dropping, Phase};
use crate::error::{Error, Result};
use crate::model::{build_model, Dims, Model, ModelParams};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Separate decay for the prediction layer; `None` uses `weight_decay`.
    pub weight_decay_output: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 5e-4,
            weight_decay_output: None,
            max_epochs: 1000,
            patience: 100,
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        for wd in std::iter::once(self.weight_decay).chain(self.weight_decay_output) {
            if !(wd >= 0.0) {
                return Err(Error::Config(format!(
                    "weight decay {wd} must be non-negative"
                )));
            }
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "need 0 < patience <= max_epochs, got patience {} and max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub per_epoch: Vec<EpochRecord>,
    pub best_val_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub wall_ms_per_epoch: f64,
}

impl RunResult {
    pub fn epochs_run(&self) -> usize {
        self.per_epoch.len()
    }
}

/// Mean over rows of `-sum_c q_c log_softmax(logits)_c` with
/// `q = (1 - eps) onehot + eps / C`.
pub fn ce_loss_smoothed<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    eps: f64,
) -> Result<Var> {
    let (rows, classes) = tape.value(logits).shape();
    if labels.len() != rows {
        return Err(Error::invalid(
            "ce_loss_smoothed",
            format!("{} labels for {rows} rows", labels.len()),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(
            "ce_loss_smoothed",
            format!("label {y} out of range for {classes} classes"),
        ));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(
            "ce_loss_smoothed",
            format!("smoothing {eps} outside [0, 1)"),
        ));
    }
    let off = eps / classes as f64;
    let on = 1.0 - eps + off;
    let target = Tensor::from_fn(rows, classes, |i, c| {
        T::of(if labels[i] == c { on } else { off })
    });
    let target = tape.constant(target);
    let logp = tape.log_softmax_rows(logits)?;
    let weighted = tape.mul(logp, target)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, -T::one() / T::of_usize(rows))
}

/// First and second moment estimates for [`adam_step`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = |p: &Tensor<T>| Tensor::zeros(p.rows(), p.cols());
        Self {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update with coupled L2: `g + decay[i] * p` feeds the moments.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    decay: &[f64],
) {
    assert!(
        params.len() == grads.len() && params.len() == decay.len() && params.len() == state.m.len(),
        "adam_step: parameter, gradient, decay and state counts differ"
    );
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(
            p.shape(),
            g.shape(),
            "adam_step: gradient shape differs from parameter"
        );
        let wd = T::of(decay[k]);
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let g = gi + wd * *pi;
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Accuracy, in `[0, 1]`, of row-wise argmax predictions on `idx`.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let pred = logits.argmax_rows();
    let hits = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
    hits as f64 / idx.len() as f64
}

/// Metrics of one deterministic evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub val_acc: f64,
    pub val_loss: f64,
    pub test_acc: f64,
    pub train_acc: f64,
}

/// Owns the model, optimizer state and cached inputs of one run.
pub struct Trainer<'a, T: Scalar> {
    cfg: TrickConfig,
    train: TrainConfig,
    data: &'a Dataset<T>,
    model: Model<T>,
    adam: AdamState<T>,
    decay: Vec<f64>,
    features: Arc<CsrMatrix<T>>,
    train_idx: Arc<[usize]>,
    val_idx: Arc<[usize]>,
    train_labels: Vec<usize>,
    val_labels: Vec<usize>,
    tape: Tape<T>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(cfg: &TrickConfig, train: &TrainConfig, data: &'a Dataset<T>) -> Result<Self> {
        train.validate()?;
        let dims = Dims {
            input: data.num_features(),
            hidden: cfg.hidden_dim,
            classes: data.num_classes,
        };
        let model = build_model(cfg, dims, train.seed)?;
        let adam = AdamState::new(model.params().tensors());
        let out_decay = train.weight_decay_output.unwrap_or(train.weight_decay);
        let decay = (0..model.params().len())
            .map(|i| {
                if model.params().is_output(i) {
                    out_decay
                } else {
                    train.weight_decay
                }
            })
            .collect();
        let labels_of = |idx: &[usize]| idx.iter().map(|&i| data.labels[i]).collect::<Vec<_>>();
        Ok(Self {
            cfg: *cfg,
            train: *train,
            data,
            adam,
            decay,
            features: data.feature_matrix(),
            train_idx: data.splits.train.as_slice().into(),
            val_idx: data.splits.val.as_slice().into(),
            train_labels: labels_of(&data.splits.train),
            val_labels: labels_of(&data.splits.val),
            model,
            tape: Tape::new(),
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    /// One optimization step over the full graph; returns the training loss.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let phase = Phase::Train {
            seed: self.train.seed,
            epoch: epoch as u64,
        };
        let plan = wire_dropping(
            &self.cfg.drop,
            self.cfg.backbone,
            self.cfg.depth,
            &self.data.graph,
            phase,
        )?;
        self.tape.reset();
        let fwd = self
            .model
            .forward(&mut self.tape, &self.features, &plan, true)?;
        let selected = self
            .tape
            .select_rows(fwd.logits, Arc::clone(&self.train_idx))?;
        let loss = ce_loss_smoothed(
            &mut self.tape,
            selected,
            &self.train_labels,
            self.train.label_smoothing,
        )?;
        let loss_value = self.tape.value(loss).get(0, 0).as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: loss_value,
            });
        }
        let mut grads = self.tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = fwd
            .params
            .iter()
            .map(|&p| grads.take(p).expect("every parameter is a trainable leaf"))
            .collect();
        self.tape.reset();
        adam_step(
            self.model.params_mut().tensors_mut(),
            &grads,
            &mut self.adam,
            self.train.lr,
            &self.decay,
        );
        Ok(loss_value)
    }

    /// Logits of a deterministic pass with all dropping disabled.
    pub fn eval_logits(&mut self) -> Result<Tensor<T>> {
        let plan = wire_dropping(
            &self.cfg.drop,
            self.cfg.backbone,
            self.cfg.depth,
            &self.data.graph,
            Phase::Eval,
        )?;
        self.tape.reset();
        let fwd = self
            .model
            .forward(&mut self.tape, &self.features, &plan, false)?;
        let logits = self.tape.value(fwd.logits).clone();
        self.tape.reset();
        Ok(logits)
    }

    /// Final hidden embeddings of a deterministic pass.
    pub fn eval_hidden(&mut self) -> Result<Tensor<T>> {
        let plan = wire_dropping(
            &self.cfg.drop,
            self.cfg.backbone,
            self.cfg.depth,
            &self.data.graph,
            Phase::Eval,
        )?;
        self.tape.reset();
        let fwd = self
            .model
            .forward(&mut self.tape, &self.features, &plan, false)?;
        let hidden = self.tape.value(fwd.hidden).clone();
        self.tape.reset();
        Ok(hidden)
    }

    pub fn evaluate(&mut self) -> Result<Evaluation> {
        let logits = self.eval_logits()?;
        let data = self.data;
        let mut tape = Tape::new();
        let all = tape.constant(logits.select_rows(&self.val_idx)?);
        let val_loss = ce_loss_smoothed(&mut tape, all, &self.val_labels, 0.0)?;
        Ok(Evaluation {
            val_acc: accuracy(&logits, &data.labels, &data.splits.val),
            val_loss: tape.value(val_loss).get(0, 0).as_f64(),
            test_acc: accuracy(&logits, &data.labels, &data.splits.test),
            train_acc: accuracy(&logits, &data.labels, &data.splits.train),
        })
    }
}

/// Outcome of [`train_run_with_snapshot`]: the run record plus the
/// parameters of the best-validation epoch.
pub struct TrainedRun<T> {
    pub result: RunResult,
    pub best_params: ModelParams<T>,
    pub model: Model<T>,
}

/// Trains until `max_epochs` or until validation accuracy has not improved
/// for `patience` epochs (equal accuracy with lower validation loss counts
/// as an improvement). Test accuracy is read at the best-validation epoch.
pub fn train_run<T: Scalar>(
    cfg: &TrickConfig,
    train: &TrainConfig,
    data: &Dataset<T>,
) -> Result<RunResult> {
    train_run_with_snapshot(cfg, train, data).map(|r| r.result)
}

pub fn train_run_with_snapshot<T: Scalar>(
    cfg: &TrickConfig,
    train: &TrainConfig,
    data: &Dataset<T>,
) -> Result<TrainedRun<T>> {
    let mut trainer = Trainer::new(cfg, train, data)?;
    let mut per_epoch = Vec::new();
    let mut best: Option<(usize, Evaluation)> = None;
    let mut best_params = trainer.model.params().clone();
    let mut since_best = 0;
    let start = Instant::now();
    for epoch in 0..train.max_epochs {
        let train_loss = trainer.train_epoch(epoch)?;
        let eval = trainer.evaluate()?;
        per_epoch.push(EpochRecord {
            train_loss,
            val_acc: eval.val_acc,
            val_loss: eval.val_loss,
        });
        let improved = match &best {
            None => true,
            Some((_, b)) => {
                eval.val_acc > b.val_acc
                    || (eval.val_acc == b.val_acc && eval.val_loss < b.val_loss)
            }
        };
        if improved {
            best = Some((epoch, eval));
            best_params.clone_from(trainer.model.params());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train.patience {
                break;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let (best_val_epoch, best_eval) = best.expect("at least one epoch ran");
    let result = RunResult {
        seed: train.seed,
        wall_ms_per_epoch: elapsed / per_epoch.len() as f64,
        per_epoch,
        best_val_epoch,
        best_val_acc: best_eval.val_acc,
        test_acc: best_eval.test_acc,
    };
    Ok(TrainedRun {
        result,
        best_params,
        model: trainer.model,
    })
}

/// Mean and sample standard deviation of test accuracy. The values are
/// sorted before summation, so the result does not depend on input order.
pub fn aggregate_runs(results: &[RunResult]) -> Result<(f64, f64)> {
    if results.len() < 2 {
        return Err(Error::invalid(
            "aggregate_runs",
            format!("need at least 2 runs, got {}", results.len()),
        ));
    }
    let mut accs: Vec<f64> = results.iter().map(|r| r.test_acc).collect();
    accs.sort_by(f64::total_cmp);
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
