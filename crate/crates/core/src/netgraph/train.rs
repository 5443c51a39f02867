use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_rows, Compiled, Dataset, LayerGraph, NetError};
use crate::tensorcore::{sigmoid, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-5,
            epochs: 8,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainHyper {
    fn validate(&self) -> Result<(), NetError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lr) || !ok(self.weight_decay) || !ok(self.momentum) || self.momentum >= 1.0 {
            return Err(NetError::InvalidHyper(format!(
                "lr {}, momentum {}, weight decay {}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(NetError::InvalidHyper("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean training loss of the returned parameters.
    pub final_loss: f64,
    /// Training accuracy of the returned parameters.
    pub train_accuracy: f64,
}

/// Mean loss over a batch and its gradient with respect to the outputs.
/// Several outputs use softmax cross-entropy; a single output is a logit
/// under the logistic loss.
fn loss_and_grad(out: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let (n, k) = (out.shape()[0], out.shape()[1]);
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    for (i, (row, &y)) in out.data().chunks(k).zip(labels).enumerate() {
        let g = &mut grad[i * k..(i + 1) * k];
        if k == 1 {
            let z = row[0];
            let t = y as f64;
            // softplus(z) - t z, written to avoid overflow
            total += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
            g[0] = (sigmoid(z) - t) / n as f64;
        } else {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            total += m + sum.ln() - row[y];
            for (j, gv) in g.iter_mut().enumerate() {
                let p = (row[j] - m).exp() / sum;
                *gv = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
    }
    (total / n as f64, Tensor::from_parts(vec![n, k], grad))
}

fn check_labels(graph: &LayerGraph, data: &Dataset) -> Result<(), NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let k = graph.output_len();
    let classes = if k == 1 { 2 } else { k };
    if let Some(&label) = data.labels().iter().find(|&&l| l >= classes) {
        return Err(NetError::BadLabel { label, classes });
    }
    Ok(())
}

/// Compiled graphs keyed by batch size.
struct CompileCache(HashMap<usize, Compiled>);

impl CompileCache {
    fn get(&mut self, graph: &LayerGraph, batch: usize) -> Result<&Compiled, NetError> {
        if !self.0.contains_key(&batch) {
            self.0.insert(batch, graph.compile(batch)?);
        }
        Ok(&self.0[&batch])
    }
}

/// Mean loss and accuracy of `graph` over the whole dataset.
pub fn evaluate_loss(graph: &LayerGraph, data: &Dataset, batch_size: usize) -> Result<(f64, f64), NetError> {
    check_labels(graph, data)?;
    let mut cache = CompileCache(HashMap::new());
    let mut total = 0.0;
    let mut correct = 0usize;
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let (images, labels) = data.batch(chunk);
        let compiled = cache.get(graph, chunk.len())?;
        let eval = graph.run(compiled, &images)?;
        let out = eval.value(compiled.output);
        let (loss, _) = loss_and_grad(out, &labels);
        total += loss * chunk.len() as f64;
        correct += argmax_rows(out).iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok((total / data.len() as f64, correct as f64 / data.len() as f64))
}

fn diverged(err: NetError, epoch: usize) -> NetError {
    match err {
        NetError::Tensor(TensorError::NonFinite { .. }) => NetError::Divergence { epoch },
        other => other,
    }
}

/// Minibatch SGD with momentum and L2 weight decay
/// (`v = mu v + (g + wd w)`, `w -= lr v`). Deterministic for a given seed.
pub fn sgd_train(graph: &LayerGraph, data: &Dataset, hyper: &TrainHyper) -> Result<(LayerGraph, TrainReport), NetError> {
    hyper.validate()?;
    check_labels(graph, data)?;
    let mut net = graph.clone();
    let eval_batch = hyper.batch_size.max(64);
    let (initial_loss, initial_acc) = evaluate_loss(&net, data, eval_batch).map_err(|e| diverged(e, 0))?;
    let mut report = TrainReport {
        initial_loss,
        epoch_losses: Vec::with_capacity(hyper.epochs),
        final_loss: initial_loss,
        train_accuracy: initial_acc,
    };
    if hyper.epochs == 0 {
        return Ok((net, report));
    }
    let trainable = net.trainable_params();
    let mut velocity: HashMap<String, Vec<f64>> = HashMap::new();
    let mut cache = CompileCache(HashMap::new());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let (images, labels) = data.batch(chunk);
            let grads = {
                let compiled = cache.get(&net, chunk.len())?;
                let eval = net.run(compiled, &images).map_err(|e| diverged(e, epoch))?;
                let (loss, seed) = loss_and_grad(eval.value(compiled.output), &labels);
                if !loss.is_finite() {
                    return Err(NetError::Divergence { epoch });
                }
                epoch_total += loss * chunk.len() as f64;
                let wrt: Vec<_> = trainable
                    .iter()
                    .map(|name| compiled.graph.input_id(name).expect("parameter input"))
                    .collect();
                compiled.graph.backward(&eval, compiled.output, &seed, &wrt)?
            };
            for (name, grad) in trainable.iter().zip(grads) {
                let param = net.params.get_mut(name).expect("trainable parameter");
                let v = velocity.entry(name.clone()).or_insert_with(|| vec![0.0; param.len()]);
                for ((w, vel), g) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                    let d = g + hyper.weight_decay * *w;
                    *vel = hyper.momentum * *vel + d;
                    *w -= hyper.lr * *vel;
                }
                if param.data().iter().any(|w| !w.is_finite()) {
                    return Err(NetError::Divergence { epoch });
                }
            }
        }
        report.epoch_losses.push(epoch_total / data.len() as f64);
    }
    let (loss, acc) = evaluate_loss(&net, data, eval_batch).map_err(|e| diverged(e, hyper.epochs - 1))?;
    if !loss.is_finite() {
        return Err(NetError::Divergence {
            epoch: hyper.epochs - 1,
        });
    }
    report.final_loss = loss;
    report.train_accuracy = acc;
    Ok((net, report))
}
