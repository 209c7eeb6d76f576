//! Mini-batch training with AdaDelta on shadow weights.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, NetworkConfig, PackedModel};
use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, softmax_cross_entropy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    /// Multiplies the learning rate after every update.
    pub decay: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            eps: 1e-6,
            lr: 1.0,
            decay: 1.0,
        }
    }
}

/// AdaDelta with per-parameter squared-gradient and squared-update averages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDelta {
    pub config: AdaDeltaConfig,
    pub lr: f64,
    pub sq_grad: Vec<Vec<f32>>,
    pub sq_delta: Vec<Vec<f32>>,
    pub steps: u64,
}

impl AdaDelta {
    pub fn new(config: AdaDeltaConfig, sizes: &[usize]) -> Self {
        Self {
            lr: config.lr,
            config,
            sq_grad: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            sq_delta: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: &[&[f32]]) -> Result<()> {
        if params.len() != self.sq_grad.len() || grads.len() != params.len() {
            return Err(Error::dim(format!(
                "{} parameter groups and {} gradients for an optimizer of {}",
                params.len(),
                grads.len(),
                self.sq_grad.len()
            )));
        }
        let (rho, eps, lr) = (self.config.rho, self.config.eps, self.lr);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (eg, ed) = (&mut self.sq_grad[i], &mut self.sq_delta[i]);
            if p.len() != g.len() || p.len() != eg.len() {
                return Err(Error::dim(format!("parameter group {i} changed size")));
            }
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let acc = rho * eg[j] as f64 + (1.0 - rho) * gj * gj;
                let delta = -((ed[j] as f64 + eps).sqrt() / (acc + eps).sqrt()) * gj;
                eg[j] = acc as f32;
                ed[j] = (rho * ed[j] as f64 + (1.0 - rho) * delta * delta) as f32;
                p[j] = (p[j] as f64 + lr * delta) as f32;
            }
        }
        self.lr *= self.config.decay;
        self.steps += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub phi_seed: u64,
    pub optimizer: AdaDeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 1024,
            seed: 0,
            phi_seed: 0,
            optimizer: AdaDeltaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
    pub epsilon_a: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub network: Network,
    pub optimizer: AdaDelta,
    pub epoch: usize,
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
    rng: ChaCha8Rng,
}

/// `epoch,train_loss,val_weighted_f1,epsilon_a_1,...`
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let layers = history.first().map_or(0, |m| m.epsilon_a.len());
    let mut s = String::from("epoch,train_loss,val_weighted_f1");
    for i in 0..layers {
        let _ = write!(s, ",epsilon_a_{}", i + 1);
    }
    s.push('\n');
    for m in history {
        let _ = write!(s, "{},{},{}", m.epoch, m.train_loss, m.val_weighted_f1);
        for e in &m.epsilon_a {
            let _ = write!(s, ",{e}");
        }
        s.push('\n');
    }
    s
}

/// Stacks the listed windows of `ds` into `[n, channels, window_t]`.
pub fn gather_windows(ds: &WindowDataset, indices: &[usize]) -> Result<DenseTensor> {
    let mut data = Vec::with_capacity(indices.len() * ds.channels * ds.window_t);
    for &i in indices {
        data.extend_from_slice(ds.window(i));
    }
    DenseTensor::new(vec![indices.len(), ds.channels, ds.window_t], data)
}

fn check_dataset(ds: &WindowDataset, cfg: &NetworkConfig, what: &str) -> Result<()> {
    if ds.channels != cfg.channels() || ds.window_t != cfg.window_t {
        return Err(Error::config(format!(
            "{what} windows are {}x{} but the network expects {}x{}",
            ds.channels,
            ds.window_t,
            cfg.channels(),
            cfg.window_t
        )));
    }
    if let Some(&y) = ds.labels.iter().find(|&&y| y >= cfg.classes) {
        return Err(Error::config(format!(
            "{what} label {y} outside the network's {} classes",
            cfg.classes
        )));
    }
    Ok(())
}

impl TrainState {
    pub fn new(network_config: NetworkConfig, config: TrainConfig) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let network = Network::new(network_config, config.seed)?;
        let optimizer = AdaDelta::new(config.optimizer, &network.param_sizes());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            network,
            optimizer,
            epoch: 0,
            config,
            history: Vec::new(),
            rng,
        })
    }

    /// One update on a mini-batch; returns the batch loss.
    pub fn step(&mut self, windows: &DenseTensor, labels: &[usize]) -> Result<f64> {
        let fusion = self.network.train_fusion(self.rng.random())?;
        let (logits, cache) = self.network.forward(windows, &fusion, true)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        let grads = self.network.backward(&cache, &grad)?;
        self.network.commit_batchnorm(&cache);
        let flat = grads.flat();
        self.optimizer.step(self.network.params_mut(), &flat)?;
        Ok(loss)
    }

    /// One pass over `train` followed by the activation-scale refresh and a
    /// packed-model evaluation on `val`.
    pub fn run_epoch(&mut self, train: &WindowDataset, val: &WindowDataset) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        check_dataset(train, &self.network.config, "training")?;
        check_dataset(val, &self.network.config, "validation")?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch) {
            let x = gather_windows(train, chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            total += self.step(&x, &y)? * chunk.len() as f64;
        }
        self.network.update_activation_scales();
        self.epoch += 1;
        let m = EpochMetrics {
            epoch: self.epoch,
            train_loss: total / train.len() as f64,
            val_weighted_f1: self.evaluate(val)?,
            epsilon_a: self.network.activation_scales(),
        };
        log::info!(
            "epoch {}: loss {:.5}, validation weighted F1 {:.4}",
            m.epoch,
            m.train_loss,
            m.val_weighted_f1
        );
        self.history.push(m.clone());
        Ok(m)
    }

    /// Weighted F1 of the packed model on `ds`, with masks from the φ seed.
    pub fn evaluate(&self, ds: &WindowDataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(f64::NAN);
        }
        let packed = PackedModel::from_network(&self.network)?;
        packed.weighted_f1(ds, self.config.phi_seed, self.config.batch)
    }
}

/// Trains a fresh network for `config.epochs` epochs.
pub fn train(
    network_config: NetworkConfig,
    train_set: &WindowDataset,
    val_set: &WindowDataset,
    config: TrainConfig,
) -> Result<TrainState> {
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let epochs = config.epochs;
    let mut state = TrainState::new(network_config, config)?;
    for _ in 0..epochs {
        state.run_epoch(train_set, val_set)?;
    }
    Ok(state)
}
