//! Mini-batch training with validation-driven LR schedule and early stopping.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, TrainError};
use crate::eval::{acc_at_k, PredictionMatrix};
use crate::model::{loss_and_grads, predict, Ablation, ModelInputs};
use crate::optim::{Adam, AdamConfig, PlateauScheduler};
use crate::params::{ModelDims, ModelParams};
use crate::relational::Dropout;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub theta_t: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 2,
            epochs: 50,
            batch_size: 64,
            dropout: 0.3,
            weight_decay: 5e-4,
            lr_init: 1e-3,
            lr_min: 1e-6,
            lr_factor: 0.1,
            plateau_patience: 2,
            early_stop_patience: 5,
            theta_t: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.dim == 0 || self.layers == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("dim, layers, epochs and batch_size must be positive");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return bad("learning rates must satisfy 0 < lr_min <= lr_init");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if !(self.theta_t >= 0.0 && self.theta_t.is_finite()) {
            return bad("theta_t must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_acc1: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation ACC@1.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// What the training loop consumes.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub inputs: ModelInputs<'a>,
    /// `(trajectory, label)` pairs, possibly with duplicates from balancing.
    pub train: &'a [(usize, usize)],
    pub valid: &'a [(usize, usize)],
    pub num_users: usize,
    pub geo_rows: usize,
}

/// Validation ACC@1 of `params`.
pub fn validation_acc1(
    params: &ModelParams,
    inputs: &ModelInputs<'_>,
    ablation: &Ablation,
    valid: &[(usize, usize)],
) -> Result<f64, Error> {
    let ids: Vec<usize> = valid.iter().map(|&(j, _)| j).collect();
    let labels: Vec<usize> = valid.iter().map(|&(_, y)| y).collect();
    let scores = predict(params, inputs, ablation, &ids)?;
    let pred = PredictionMatrix::new(scores, labels)?;
    Ok(acc_at_k(&pred, 1)?)
}

/// Trains from a fresh initialization drawn with `cfg.seed`.
///
/// One seeded stream drives initialization, per-epoch shuffling and dropout,
/// so identical inputs and seed reproduce the history bit for bit.
pub fn train(
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    ablation: &Ablation,
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::Config("training set is empty".into()).into());
    }
    if data.valid.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()).into());
    }
    let hg = data.inputs.hypergraph;
    let dims = ModelDims {
        dim: cfg.dim,
        layers: cfg.layers,
        num_pois: hg.num_pois(),
        num_trajs: hg.num_trajs(),
        num_users: data.num_users,
        geo_rows: data.geo_rows,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(dims, &mut rng);
    let mut opt = Adam::new(
        &params,
        AdamConfig {
            lr: cfg.lr_init,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut scheduler = PlateauScheduler::new(cfg.lr_factor, cfg.plateau_patience, cfg.lr_min);

    let mut order: Vec<(usize, usize)> = data.train.to_vec();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                rate: cfg.dropout,
                rng: &mut rng,
            });
            let res = loss_and_grads(&params, &data.inputs, ablation, batch, dropout)?;
            if !res.loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                }
                .into());
            }
            total += res.loss * batch.len() as f64;
            opt.step(&mut params, &res.grads);
        }
        let train_loss = total / order.len() as f64;
        let valid_acc1 = validation_acc1(&params, &data.inputs, ablation, data.valid)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_acc1,
            lr: opt.lr(),
        });

        if best.as_ref().is_none_or(|(acc, _, _)| valid_acc1 > *acc) {
            best = Some((valid_acc1, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        opt.set_lr(scheduler.observe(valid_acc1, opt.lr()));
        if stale >= cfg.early_stop_patience {
            break;
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// One `epoch<TAB>train_loss<TAB>valid_acc1<TAB>lr` line per epoch.
pub fn write_history<W: Write>(mut out: W, history: &[EpochRecord]) -> io::Result<()> {
    for r in history {
        writeln!(
            out,
            "{}\t{:.6}\t{:.4}\t{:e}",
            r.epoch, r.train_loss, r.valid_acc1, r.lr
        )?;
    }
    Ok(())
}
