//! AdamW with polynomial learning-rate decay, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LossConfig, OptimConfig};
use crate::data::{batch, Sample};
use crate::error::{Error, Result};
use crate::loss::combined_loss;
use crate::metrics::{confusion, Confusion};
use crate::model::Model;
use crate::tensor::{Graph, ParamStore, Tensor};

/// `lr * (1 - step / total)^power`.
pub fn poly_lr(base: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 - step as f64 / total as f64).max(0.0).powf(power)
}

/// Adaptive moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &OptimConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update with learning rate `lr`. Parameters without a gradient
    /// still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads.get(i).and_then(Option::as_ref);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub dice: f64,
    pub bce: f64,
    /// Pooled F1 at threshold 0.5 over the step's batch, before the update.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub final_loss: f64,
    /// Pooled F1 at 0.5 on the full training set after the last update.
    pub final_train_f1: f64,
    pub entries: Vec<LogEntry>,
}

/// Pooled counts at 0.5 for `prob` against `target`, both `[N, 1, H, W]`.
pub fn counts_at_half(prob: &Tensor, target: &Tensor) -> Confusion {
    let pred: Vec<bool> = prob.data().iter().map(|&p| p > 0.5).collect();
    let gt: Vec<bool> = target.data().iter().map(|&t| t > 0.5).collect();
    confusion(&pred, &gt).expect("equal lengths")
}

/// Pooled F1 at 0.5 of `model` over `samples`, one image at a time.
pub fn dataset_f1(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut c = Confusion::default();
    for s in samples {
        let (x, y) = batch(&[s])?;
        c.add(&counts_at_half(&model.predict(&x)?, &y));
    }
    Ok(c.f1())
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged { step, reason: format!("{op} produced a non-finite value") },
        Error::Domain(reason) => Error::Diverged { step, reason },
        other => other,
    }
}

/// Train in place. Batches cycle through a per-epoch shuffle drawn from
/// `seed`; when the batch size covers the dataset every step sees all of it.
pub fn train(model: &mut Model, samples: &[Sample], loss_cfg: &LossConfig, optim: &OptimConfig, seed: u64) -> Result<TrainLog> {
    loss_cfg.validate()?;
    optim.validate()?;
    if samples.is_empty() {
        return Err(Error::Usage("training needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(&model.store, optim);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = samples.len();
    let bs = optim.batch_size.min(samples.len());
    let mut entries = Vec::new();
    let mut stopped_early = false;
    let mut final_loss = f64::NAN;
    let mut steps_run = 0;

    for step in 0..optim.steps {
        if cursor + bs > order.len() {
            if bs < samples.len() {
                order.shuffle(&mut rng);
            }
            cursor = 0;
        }
        let picked: Vec<&Sample> = order[cursor..cursor + bs].iter().map(|&i| &samples[i]).collect();
        cursor += bs;
        let (x, y) = batch(&picked)?;

        let mut g = Graph::new();
        let xi = g.input(x);
        let yi = g.input(y.clone());
        let logits = model.forward(&mut g, xi).map_err(|e| diverged(step, e))?;
        let prob = g.sigmoid(logits).map_err(|e| diverged(step, e))?;
        let parts = combined_loss(&mut g, prob, yi, loss_cfg).map_err(|e| diverged(step, e))?;
        let loss = g.value(parts.total).item();
        if !loss.is_finite() {
            return Err(Error::Diverged { step, reason: format!("loss is {loss}") });
        }
        g.backward(parts.total)?;
        let grads = g.param_grads(&model.store);
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::Diverged { step, reason: "non-finite gradient".into() });
        }

        let lr = poly_lr(optim.lr, step, optim.steps, optim.poly_power);
        let last = step + 1 == optim.steps;
        let logged = step % optim.log_every == 0 || last || optim.stop_at_f1.is_some();
        let train_f1 = logged.then(|| counts_at_half(g.value(prob), &y).f1());
        if step % optim.log_every == 0 || last {
            entries.push(LogEntry {
                step,
                lr,
                loss,
                dice: g.value(parts.dice).item(),
                bce: g.value(parts.bce).item(),
                train_f1,
            });
            log::info!("step {step} loss {loss:.6} f1 {:.4}", train_f1.unwrap_or(f64::NAN));
        }
        final_loss = loss;
        steps_run = step + 1;
        if let (Some(target), Some(f1)) = (optim.stop_at_f1, train_f1) {
            if bs == samples.len() && f1 >= target {
                stopped_early = true;
                break;
            }
        }
        opt.step(&mut model.store, &grads, lr);
    }

    Ok(TrainLog {
        seed,
        steps_run,
        stopped_early,
        final_loss,
        final_train_f1: dataset_f1(model, samples)?,
        entries,
    })
}
