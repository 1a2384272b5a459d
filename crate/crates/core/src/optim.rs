//! Adam with decoupled weight decay, and a reduce-on-plateau learning-rate schedule.

use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Moment estimates shaped like the parameters, plus the step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// One flat buffer per tensor, in [`ModelParams::named`] order.
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .named()
            .iter()
            .map(|(_, m)| vec![0.0; m.len()])
            .collect();
        Self {
            cfg,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update. Weight decay shrinks the parameters directly and never
    /// touches the moment estimates.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        let grads = grads.named();
        let mut tensors = grads
            .iter()
            .zip(self.first.iter_mut().zip(self.second.iter_mut()));
        params.for_each_mut(|_, p| {
            let ((_, g), (m, v)) = tensors.next().expect("gradients follow parameter layout");
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

/// Multiplies the learning rate by `factor` once the monitored metric has
/// failed to improve for `patience` consecutive epochs, never going below `min_lr`.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            factor,
            patience,
            min_lr,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's metric (higher is better) and returns the learning rate to use next.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}
