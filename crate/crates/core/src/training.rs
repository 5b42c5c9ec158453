//! SGD with Nesterov momentum, the ascending learning-rate schedule, early
//! stopping, checkpointing, and the epoch loop.

use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{one_hot, shuffled_epoch_order, BatchSource};
use crate::error::{Error, Result};
use crate::kernels::Mode;
use crate::losses::LossKind;
use crate::models::{save_model, Gradients, ModelGraph};
use crate::tensor::{argmax, Tensor};

/// Learning rate that replaces any scheduled value above the cap.
pub const LR_RESET: f64 = 0.0001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub lr_drop: f64,
    pub epochs_drop: u32,
    pub lr_cap: Option<f64>,
    pub momentum: f32,
    pub nesterov: bool,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_value: f64,
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::small_inception()
    }
}

impl TrainConfig {
    /// Settings of the from-scratch small inception runs.
    pub fn small_inception() -> Self {
        TrainConfig {
            init_lr: 0.0001,
            lr_drop: 0.96,
            epochs_drop: 7,
            lr_cap: None,
            momentum: 0.9,
            nesterov: true,
            batch_size: 50,
            val_batch_size: 2,
            max_epochs: 400,
            early_stop_value: 0.999,
            patience: 50,
            loss: LossKind::Hinge,
            seed: 0,
        }
    }

    /// Settings of the transfer-learning head runs.
    pub fn transfer() -> Self {
        TrainConfig {
            epochs_drop: 8,
            lr_cap: Some(0.0009),
            early_stop_value: 0.95,
            patience: 40,
            ..Self::small_inception()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.lr_drop > 0.0 && self.lr_drop < 1.0) {
            return bad("lr_drop must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.val_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.epochs_drop == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("epochs_drop, max_epochs and patience must be positive");
        }
        if self.init_lr.is_nan() || self.init_lr <= 0.0 {
            return bad("init_lr must be positive");
        }
        Ok(())
    }
}

/// `init_lr / lr_drop^floor((1 + epoch) / epochs_drop)`, replaced by
/// [`LR_RESET`] when it exceeds `lr_cap`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let exponent = ((1 + epoch) / cfg.epochs_drop as usize) as i32;
    let lr = cfg.init_lr / cfg.lr_drop.powi(exponent);
    match cfg.lr_cap {
        Some(cap) if lr > cap => LR_RESET,
        _ => lr,
    }
}

/// One in-place momentum update: `v = m v - lr g`, then
/// `p += m v - lr g` (Nesterov) or `p += v`.
pub fn sgd_nesterov_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f32,
    momentum: f32,
    nesterov: bool,
) -> Result<()> {
    param.ensure_same_shape(grad, "sgd gradient")?;
    param.ensure_same_shape(velocity, "sgd velocity")?;
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v - lr * g;
        if nesterov {
            *p += momentum * *v - lr * g;
        } else {
            *p += *v;
        }
    }
    Ok(())
}

/// Per-parameter velocities for [`sgd_nesterov_step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Optimizer {
    pub momentum: f32,
    pub nesterov: bool,
    pub velocity: IndexMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(model: &ModelGraph, momentum: f32, nesterov: bool) -> Self {
        let velocity = model
            .trainable_names()
            .into_iter()
            .map(|n| {
                let shape = model.weights().get(&n).expect("trainable exists").shape().to_vec();
                (n, Tensor::zeros(&shape))
            })
            .collect();
        Optimizer {
            momentum,
            nesterov,
            velocity,
        }
    }

    pub fn step(&mut self, model: &mut ModelGraph, grads: &Gradients, lr: f32) -> Result<()> {
        for (name, g) in grads {
            let v = self
                .velocity
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("no velocity for {name}")))?;
            let mut p = model.weights().get(name).expect("gradient names are trainable").clone();
            sgd_nesterov_step(&mut p, g, v, lr, self.momentum, self.nesterov)?;
            model.set_param(name, p)?;
        }
        Ok(())
    }
}

/// Loss, prediction and gradients of one mini-batch.
pub fn batch_gradients(
    model: &mut ModelGraph,
    images: &Tensor,
    targets: &Tensor,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Tensor, Gradients)> {
    let trace = model.forward_trace(images, Mode::Train, rng)?;
    let (value, grads) = if loss.takes_logits() {
        let logits = trace
            .logits()
            .ok_or_else(|| Error::config("cross-entropy training needs a softmax-headed model"))?;
        let (v, g) = loss.batch(logits, targets)?;
        (v, model.backward_from_logits(&trace, &g)?)
    } else {
        let (v, g) = loss.batch(trace.output(), targets)?;
        (v, model.backward(&trace, &g)?)
    };
    Ok((value, trace.output().clone(), grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Effective mini-batch size: never larger than the dataset.
fn batch_len(n: usize, cfg: &TrainConfig) -> usize {
    cfg.batch_size.min(n)
}

/// One pass over shuffled full mini-batches (a trailing partial batch is
/// dropped), updating the model after each.
pub fn train_epoch(
    model: &mut ModelGraph,
    optimizer: &mut Optimizer,
    data: &dyn BatchSource,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = model.output_shape()[0];
    let bs = batch_len(n, cfg);
    let order = shuffled_epoch_order(n, cfg.seed, epoch as u64);
    let lr = lr_schedule(epoch, cfg) as f32;
    let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
    for chunk in order.chunks_exact(bs) {
        let (images, labels) = data.fetch(chunk)?;
        let targets = one_hot(&labels, k)?;
        let (loss, output, grads) = batch_gradients(model, &images, &targets, cfg.loss, rng)?;
        optimizer.step(model, &grads, lr)?;
        loss_sum += loss;
        correct += count_correct(&output, &labels);
        seen += labels.len();
    }
    let steps = n / bs;
    Ok(EpochStats {
        loss: loss_sum / steps as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

fn count_correct(output: &Tensor, labels: &[usize]) -> usize {
    let k = output.channels();
    output
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Inference-mode class probabilities for every example, batched.
pub fn predict_all(model: &ModelGraph, data: &dyn BatchSource, batch_size: usize) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (images, l) = data.fetch(chunk)?;
        let out = model.predict(&images)?;
        probs.extend(out.data().chunks(out.channels()).map(<[f32]>::to_vec));
        labels.extend(l);
    }
    Ok((probs, labels))
}

/// Inference-mode accuracy over the whole set, in order.
pub fn evaluate_accuracy(model: &ModelGraph, data: &dyn BatchSource, batch_size: usize) -> Result<f64> {
    let (probs, labels) = predict_all(model, data, batch_size)?;
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    Patience,
    MaxEpochs,
}

/// Threshold and patience stopping on validation accuracy. Only a strict
/// improvement resets patience.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub threshold: f64,
    pub patience: usize,
    best: Option<f64>,
    wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: Option<StopReason>,
}

impl EarlyStopping {
    pub fn new(threshold: f64, patience: usize) -> Self {
        EarlyStopping {
            threshold,
            patience,
            best: None,
            wait: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, val_acc: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| val_acc > b);
        if improved {
            self.best = Some(val_acc);
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        let stop = if val_acc >= self.threshold {
            Some(StopReason::Threshold)
        } else if self.wait >= self.patience {
            Some(StopReason::Patience)
        } else {
            None
        };
        StopDecision { improved, stop }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HistorySummary {
    best_val_acc: f64,
    best_epoch: usize,
    stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    /// One JSON object per epoch, then a summary line.
    pub fn write_json_lines(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        let summary = HistorySummary {
            best_val_acc: self.best_val_acc,
            best_epoch: self.best_epoch,
            stop_reason: self.stop_reason,
        };
        writeln!(w, "{}", serde_json::to_string(&summary).expect("summary serializes"))
    }

    pub fn read_json_lines(r: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = r
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::Format(e.to_string()))?;
        let (last, body) = lines
            .split_last()
            .ok_or_else(|| Error::Format("empty training history".into()))?;
        let parse = |e: serde_json::Error| Error::Format(format!("training history: {e}"));
        let records = body
            .iter()
            .map(|l| serde_json::from_str(l).map_err(parse))
            .collect::<Result<_>>()?;
        let s: HistorySummary = serde_json::from_str(last).map_err(parse)?;
        Ok(TrainHistory {
            records,
            best_val_acc: s.best_val_acc,
            best_epoch: s.best_epoch,
            stop_reason: s.stop_reason,
        })
    }
}

/// Trains with validation accuracy measured after every epoch in inference
/// mode; the checkpoint (if any) always holds the best-so-far model.
pub fn fit(
    model: &mut ModelGraph,
    train: &dyn BatchSource,
    val: &dyn BatchSource,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainHistory> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vbs = cfg.val_batch_size;
    fit_with_evaluator(model, train, cfg, checkpoint, &mut |m: &ModelGraph, _| {
        evaluate_accuracy(m, val, vbs)
    })
}

/// [`fit`] with a caller-supplied validation metric.
pub fn fit_with_evaluator(
    model: &mut ModelGraph,
    train: &dyn BatchSource,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    evaluate: &mut dyn FnMut(&ModelGraph, usize) -> Result<f64>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut optimizer = Optimizer::new(model, cfg.momentum, cfg.nesterov);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.early_stop_value, cfg.patience);
    let mut records = Vec::new();
    let mut best_epoch = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 0..cfg.max_epochs {
        let stats = train_epoch(model, &mut optimizer, train, cfg, epoch, &mut rng)?;
        let val_acc = evaluate(model, epoch)?;
        records.push(EpochRecord {
            epoch,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            val_acc,
            lr: lr_schedule(epoch, cfg),
        });
        let decision = stopper.observe(val_acc);
        if decision.improved {
            best_epoch = epoch;
            if let Some(path) = checkpoint {
                save_model(model, path)?;
            }
        }
        if let Some(reason) = decision.stop {
            stop_reason = reason;
            break;
        }
    }
    Ok(TrainHistory {
        records,
        best_val_acc: stopper.best().expect("at least one epoch ran"),
        best_epoch,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledSet;
    use crate::models::GraphBuilder;

    fn close(a: f64, b: f64, rel: f64) {
        assert!(((a - b) / b).abs() <= rel, "{a} vs {b}");
    }

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::small_inception();
        close(lr_schedule(0, &cfg), 1e-4, 1e-7);
        close(lr_schedule(7, &cfg), 1e-4 / 0.96, 1e-7);
        close(lr_schedule(70, &cfg), 1e-4 / 0.96f64.powi(10), 1e-7);
        let mut prev = 0.0;
        for e in 0..300 {
            let lr = lr_schedule(e, &cfg);
            assert!(lr >= prev);
            prev = lr;
        }
    }

    #[test]
    fn cap_fires_at_exponent_54() {
        let cfg = TrainConfig::transfer();
        assert!(lr_schedule(430, &cfg) > 8.0e-4);
        assert_eq!(lr_schedule(431, &cfg), LR_RESET);
        assert!((0..431).all(|e| lr_schedule(e, &cfg) <= 0.0009));
    }

    #[test]
    fn nesterov_examples() {
        let mut p = Tensor::full(&[1], 1.0);
        let mut v = Tensor::zeros(&[1]);
        sgd_nesterov_step(&mut p, &Tensor::full(&[1], 0.5), &mut v, 0.1, 0.9, true).unwrap();
        assert!((v.data()[0] + 0.05).abs() < 1e-7);
        assert!((p.data()[0] - 0.905).abs() < 1e-7);

        let mut p = Tensor::full(&[2], 3.0);
        let mut v = Tensor::zeros(&[2]);
        sgd_nesterov_step(&mut p, &Tensor::zeros(&[2]), &mut v, 0.1, 0.9, true).unwrap();
        assert_eq!(p.data(), &[3.0, 3.0]);

        let mut p = Tensor::full(&[1], 1.0);
        let mut v = Tensor::zeros(&[1]);
        sgd_nesterov_step(&mut p, &Tensor::full(&[1], 0.5), &mut v, 0.1, 0.0, true).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-7);

        let mut wrong = Tensor::zeros(&[3]);
        assert!(sgd_nesterov_step(&mut p, &Tensor::zeros(&[1]), &mut wrong, 0.1, 0.9, true).is_err());
    }

    #[test]
    fn momentum_moves_further() {
        let g = Tensor::full(&[1], 1.0);
        let (mut p, mut v) = (Tensor::zeros(&[1]), Tensor::zeros(&[1]));
        for _ in 0..2 {
            sgd_nesterov_step(&mut p, &g, &mut v, 0.1, 0.9, true).unwrap();
        }
        let (mut q, mut w) = (Tensor::zeros(&[1]), Tensor::zeros(&[1]));
        for _ in 0..2 {
            sgd_nesterov_step(&mut q, &g, &mut w, 0.1, 0.0, false).unwrap();
        }
        assert!(p.data()[0] < q.data()[0]);
    }

    #[test]
    fn early_stopping_rules() {
        let mut s = EarlyStopping::new(0.95, 3);
        let seq = [0.5, 0.5, 0.5, 0.5];
        let stops: Vec<_> = seq.iter().map(|&v| s.observe(v).stop).collect();
        assert_eq!(stops, [None, None, None, Some(StopReason::Patience)]);
        let mut s = EarlyStopping::new(0.95, 3);
        assert!(s.observe(0.4).improved);
        assert!(!s.observe(0.4).improved);
        assert_eq!(s.observe(0.96).stop, Some(StopReason::Threshold));
    }

    fn linear_model() -> ModelGraph {
        let mut g = GraphBuilder::new();
        let x = g.input("x", &[2]).unwrap();
        let d = g.dense("dense", x, 2).unwrap();
        let out = g.softmax("softmax", d).unwrap();
        let mut m = g.build(out).unwrap();
        m.init_weights(3);
        m
    }

    fn separable(n: usize) -> LabeledSet {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let t = i as f32 / n as f32;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            data.extend([sign * (0.5 + t), t - 0.5]);
            labels.push(label);
        }
        LabeledSet::new(Tensor::new(&[n, 2], data).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn separable_toy_converges() {
        let mut m = linear_model();
        let data = separable(100);
        let cfg = TrainConfig {
            init_lr: 0.05,
            batch_size: 10,
            max_epochs: 50,
            early_stop_value: 1.1,
            patience: 50,
            loss: LossKind::CrossEntropy,
            ..TrainConfig::small_inception()
        };
        let h = fit(&mut m, &data, &data, &cfg, None).unwrap();
        assert_eq!(h.records.last().unwrap().train_acc, 1.0);
        for r in &h.records {
            assert_eq!(r.lr, lr_schedule(r.epoch, &cfg));
        }
    }

    #[test]
    fn scripted_threshold_and_patience() {
        let data = separable(10);
        let cfg = TrainConfig {
            batch_size: 5,
            patience: 4,
            early_stop_value: 0.95,
            ..TrainConfig::small_inception()
        };
        let mut m = linear_model();
        let script = [0.5, 0.6, 0.7, 0.96, 0.2];
        let h = fit_with_evaluator(&mut m, &data, &cfg, None, &mut |_, e| Ok(script[e])).unwrap();
        assert_eq!(h.stop_reason, StopReason::Threshold);
        assert_eq!(h.records.len(), 4);

        let mut m = linear_model();
        let h = fit_with_evaluator(&mut m, &data, &cfg, None, &mut |_, _| Ok(0.5)).unwrap();
        assert_eq!(h.stop_reason, StopReason::Patience);
        assert_eq!(h.records.len(), 5);
        assert_eq!(h.best_epoch, 0);
    }

    #[test]
    fn checkpoint_holds_best_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.drsm");
        let data = separable(20);
        let cfg = TrainConfig {
            init_lr: 0.01,
            batch_size: 5,
            max_epochs: 6,
            ..TrainConfig::small_inception()
        };
        let script = [0.3, 0.8, 0.5, 0.6, 0.7, 0.1];
        let mut snapshot = None;
        let mut m = linear_model();
        let h = fit_with_evaluator(&mut m, &data, &cfg, Some(&path), &mut |m, e| {
            if e == 1 {
                snapshot = Some(m.weights().clone());
            }
            Ok(script[e])
        })
        .unwrap();
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.best_val_acc, 0.8);
        let saved = crate::models::load_model(&path).unwrap();
        assert_eq!(saved.weights(), &snapshot.unwrap());
    }

    #[test]
    fn history_round_trip_and_determinism() {
        let cfg = TrainConfig {
            init_lr: 0.01,
            batch_size: 8,
            max_epochs: 5,
            ..TrainConfig::small_inception()
        };
        let data = separable(40);
        let run = || {
            let mut m = linear_model();
            fit(&mut m, &data, &data, &cfg, None).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        let mut buf = Vec::new();
        a.write_json_lines(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), a.records.len() + 1);
        assert_eq!(TrainHistory::read_json_lines(&buf[..]).unwrap(), a);
    }

    #[test]
    fn empty_dataset_rejected() {
        let empty = LabeledSet {
            images: Tensor::zeros(&[1, 2]),
            labels: vec![],
            k: 2,
        };
        let mut m = linear_model();
        let cfg = TrainConfig::small_inception();
        assert!(matches!(
            fit_with_evaluator(&mut m, &empty, &cfg, None, &mut |_, _| Ok(0.0)),
            Err(Error::EmptyDataset)
        ));
    }
}
