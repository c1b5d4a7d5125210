//! Train-and-evaluate sweeps over one configuration axis.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{batch, Sample};
use crate::error::{Error, Result};
use crate::metrics::{default_thresholds, evaluate, EvalItem, EvalReport};
use crate::model::Model;
use crate::scan::ScanStrategy;
use crate::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Scan,
    Layers,
    Patch,
    LossRatio,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan" => Ok(Axis::Scan),
            "layers" => Ok(Axis::Layers),
            "patch" => Ok(Axis::Patch),
            "loss-ratio" => Ok(Axis::LossRatio),
            other => Err(Error::Usage(format!(
                "unknown ablation axis {other:?}; expected scan, layers, patch or loss-ratio"
            ))),
        }
    }
}

pub const SCAN_VALUES: [ScanStrategy; 5] = [
    ScanStrategy::Parallel,
    ScanStrategy::Diagonal,
    ScanStrategy::ParallelSnake,
    ScanStrategy::DiagonalSnake,
    ScanStrategy::Sass,
];
pub const LAYER_VALUES: [usize; 3] = [2, 4, 8];
pub const PATCH_VALUES: [usize; 4] = [4, 8, 16, 32];
/// `(alpha, beta)`; the first two rows are BCE only and Dice only.
pub const LOSS_RATIOS: [(f64, f64); 11] = [
    (0.0, 1.0),
    (1.0, 0.0),
    (5.0, 1.0),
    (4.0, 1.0),
    (3.0, 1.0),
    (2.0, 1.0),
    (1.0, 1.0),
    (1.0, 2.0),
    (1.0, 3.0),
    (1.0, 4.0),
    (1.0, 5.0),
];

/// One labelled variant of the base configuration per axis value.
pub fn variants(base: &RunConfig, axis: Axis) -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    match axis {
        Axis::Scan => {
            for s in SCAN_VALUES {
                let mut c = base.clone();
                c.network.scan = s;
                out.push((s.name().to_string(), c));
            }
        }
        Axis::Layers => {
            for n in LAYER_VALUES {
                let mut c = base.clone();
                c.network.num_layers = n;
                out.push((n.to_string(), c));
            }
        }
        Axis::Patch => {
            for ps in PATCH_VALUES {
                let (h, w) = (base.network.image_height, base.network.image_width);
                if h % ps != 0 || w % ps != 0 {
                    continue;
                }
                let mut c = base.clone();
                c.network.patch_size = ps;
                out.push((ps.to_string(), c));
            }
        }
        Axis::LossRatio => {
            for (a, b) in LOSS_RATIOS {
                let mut c = base.clone();
                c.loss.alpha = a;
                c.loss.beta = b;
                let label = match (a, b) {
                    (_, 0.0) => "dice".to_string(),
                    (0.0, _) => "bce".to_string(),
                    _ => format!("{a}:{b}"),
                };
                out.push((label, c));
            }
        }
    }
    out
}

/// Threshold sweep of `model` over `samples`.
pub fn evaluate_model(model: &Model, samples: &[Sample], thresholds: &[f64]) -> Result<EvalReport> {
    let mut probs = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        let (x, _) = batch(&[s])?;
        probs.push(model.predict(&x)?.into_data());
        gts.push(s.mask_bits());
    }
    let items: Vec<EvalItem<'_>> = samples
        .iter()
        .zip(probs.iter().zip(&gts))
        .map(|(s, (p, g))| EvalItem { id: s.id.clone(), prob: p, gt: g })
        .collect();
    evaluate(&items, thresholds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub params: usize,
    pub steps_run: usize,
    pub final_loss: f64,
    pub train_f1: f64,
    pub ods: f64,
    pub ois: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub train_size: usize,
    pub eval_size: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,params,steps_run,final_loss,train_f1,ods,ois,precision,recall,f1,miou\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.label, r.params, r.steps_run, r.final_loss, r.train_f1, r.ods, r.ois, r.precision, r.recall, r.f1, r.miou
            );
        }
        s
    }
}

/// Train every variant on `train_set` from the same seed and evaluate it on
/// `eval_set`.
pub fn run(base: &RunConfig, axis: Axis, train_set: &[Sample], eval_set: &[Sample]) -> Result<AblationReport> {
    if eval_set.is_empty() {
        return Err(Error::Usage("ablation needs a non-empty evaluation set".into()));
    }
    let mut rows = Vec::new();
    for (label, cfg) in variants(base, axis) {
        cfg.validate()?;
        log::info!("ablation {axis:?} = {label}");
        let mut model = Model::new(cfg.network.clone(), cfg.seed)?;
        let log = train(&mut model, train_set, &cfg.loss, &cfg.optim, cfg.seed)?;
        let rep = evaluate_model(&model, eval_set, &default_thresholds())?;
        rows.push(AblationRow {
            label,
            params: model.param_count(),
            steps_run: log.steps_run,
            final_loss: log.final_loss,
            train_f1: log.final_train_f1,
            ods: rep.ods,
            ois: rep.ois,
            precision: rep.precision,
            recall: rep.recall,
            f1: rep.f1,
            miou: rep.miou,
        });
    }
    Ok(AblationReport { axis, train_size: train_set.len(), eval_size: eval_set.len(), rows })
}
