//! Mini-batch supervised training of a per-axis policy on a labelled dataset.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, INPUT_DIM};
use crate::dataset::{Dataset, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub shuffle: bool,
    /// Fraction of the dataset held out from gradient updates.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::Adam,
            shuffle: true,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub train_mse: f64,
    pub train_mae: f64,
    pub holdout_mse: Option<f64>,
    pub holdout_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train_size: usize,
    pub holdout_size: usize,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn initial(&self) -> &EpochStats {
        &self.epochs[0]
    }

    pub fn last(&self) -> &EpochStats {
        self.epochs.last().unwrap()
    }

    pub fn final_loss(&self) -> f64 {
        self.last().train_mse
    }

    pub fn holdout_rmse(&self) -> Option<f64> {
        self.last().holdout_mse.map(f64::sqrt)
    }

    /// `epoch,train_mse,train_mae,holdout_mse,holdout_mae`; wall time is left out so the file is reproducible.
    pub fn loss_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,train_mse,train_mae,holdout_mse,holdout_mae\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.train_mse,
                e.train_mae,
                opt(e.holdout_mse),
                opt(e.holdout_mae)
            ));
        }
        s
    }
}

pub fn network_input(s: &LabeledSample) -> [f64; INPUT_DIM] {
    [s.state.coord(s.axis), s.state.vz, s.state.cz]
}

/// `(mse, mae)` of the policy over `samples`, summed in the given order.
pub fn evaluate<'a, I>(p: &MlpParams, samples: I) -> (f64, f64)
where
    I: IntoIterator<Item = &'a LabeledSample>,
{
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for s in samples {
        let e = p.forward(network_input(s)) - s.input;
        se += e * e;
        ae += e.abs();
        n += 1;
    }
    if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (se / n as f64, ae / n as f64)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut MlpParams, grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((w, g), m), v) in p.params_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Deterministic train/holdout split: a seeded permutation, holdout taken from the tail.
pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    idx.shuffle(&mut rng);
    let mut holdout = ((n as f64) * holdout_fraction).floor() as usize;
    if holdout >= n {
        holdout = n.saturating_sub(1);
    }
    let train = idx[..n - holdout].to_vec();
    let held = idx[n - holdout..].to_vec();
    (train, held)
}

/// Trains `p0` on `ds` by minimizing the mean squared command error.
pub fn train(p0: &MlpParams, ds: &Dataset, cfg: &TrainConfig) -> Result<(MlpParams, TrainReport)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    if let Some(axis) = p0.axis() {
        if axis != ds.axis {
            return Err(Error::Config(format!(
                "policy is for axis {axis} but the dataset is for axis {}",
                ds.axis
            )));
        }
    }
    let start = Instant::now();
    let mut p = p0.clone().with_axis(ds.axis);
    let samples = &ds.samples;

    let (mut train_idx, holdout_idx) = split_indices(samples.len(), cfg.holdout_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stats = |p: &MlpParams, epoch: usize, order: &[usize]| {
        let (train_mse, train_mae) = evaluate(p, order.iter().map(|&i| &samples[i]));
        let (h_mse, h_mae) = evaluate(p, holdout_idx.iter().map(|&i| &samples[i]));
        let opt = |v: f64| (!holdout_idx.is_empty()).then_some(v);
        EpochStats {
            epoch,
            train_mse,
            train_mae,
            holdout_mse: opt(h_mse),
            holdout_mae: opt(h_mae),
        }
    };

    if cfg.shuffle {
        train_idx.shuffle(&mut rng);
    }
    let mut epochs = vec![stats(&p, 0, &train_idx)];
    let mut adam = Adam::new(p.param_count());
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle && epoch > 1 {
            train_idx.shuffle(&mut rng);
        }
        for chunk in train_idx.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(
                chunk
                    .iter()
                    .map(|&i| (network_input(&samples[i]), samples[i].input)),
            );
            let (_, grad) = p.backward(&batch)?;
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut p, &grad, cfg.learning_rate),
                Optimizer::Sgd => {
                    for (w, g) in p.params_mut().zip(&grad) {
                        *w -= cfg.learning_rate * g;
                    }
                }
            }
        }
        let e = stats(&p, epoch, &train_idx);
        if !e.train_mse.is_finite() || !p.params().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!(
                    "training loss {} (previous {})",
                    e.train_mse,
                    epochs
                        .last()
                        .map(|s: &EpochStats| s.train_mse)
                        .unwrap_or(f64::NAN)
                ),
            });
        }
        epochs.push(e);
    }

    let report = TrainReport {
        epochs,
        train_size: train_idx.len(),
        holdout_size: holdout_idx.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((p, report))
}
