//! Federated gradient averaging and the centralized baseline.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{LocalDataset, Sample};
use super::network::{Batch, LossBreakdown, Network, TaskWeights};
use crate::linalg::argmax_first;
use crate::system::{RngFactory, SimRng, Stream};
use crate::{CVector, Error, Result, C64};

/// Federated (gradient averaging across users) or centralized (pooled data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Fmtl,
    Cl,
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub mode: TrainingMode,
    /// Number of rounds `T`.
    pub iterations: usize,
    /// Step size `kappa`.
    pub learning_rate: f64,
    pub weights: TaskWeights,
    /// SNR of the broadcast parameters; `None` disables downlink noise.
    pub snr_delta_db: Option<f64>,
    /// SNR of the uploaded gradients; `None` (default) disables uplink noise.
    pub uplink_snr_db: Option<f64>,
    /// Per-user mini-batch size; `None` uses the full local training set.
    pub batch_size: Option<usize>,
    /// Validation losses are recorded every `eval_every` rounds and after the last one.
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: TrainingMode::Fmtl,
            iterations: 100,
            learning_rate: 0.001,
            weights: TaskWeights::default(),
            snr_delta_db: Some(20.0),
            uplink_snr_db: None,
            batch_size: None,
            eval_every: 1,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one training iteration is required".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        TaskWeights::new(self.weights.channel, self.weights.support)?;
        Ok(())
    }
}

/// Losses and parameters of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mode: TrainingMode,
    /// Training loss of every round (mean over users for federated runs).
    pub train_losses: Vec<LossBreakdown>,
    /// `(round, loss)` on the validation pool, evaluation mode.
    pub validation_losses: Vec<(usize, LossBreakdown)>,
    pub params: Vec<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: TaskWeights,
}

/// Adds white Gaussian noise at `snr_db` relative to the mean power of `v`.
///
/// Per-element variance is `||v||^2 / (Q 10^(snr/10))`. An infinite SNR or a
/// zero vector leaves `v` unchanged.
pub fn noisy_transmit(v: &[f64], snr_db: f64, rng: &mut SimRng) -> Vec<f64> {
    let power: f64 = v.iter().map(|x| x * x).sum();
    if snr_db == f64::INFINITY || power == 0.0 || v.is_empty() {
        return v.to_vec();
    }
    let std = (power / (v.len() as f64 * 10f64.powf(snr_db / 10.0))).sqrt();
    v.iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            x + std * z
        })
        .collect()
}

/// Indices of a mini-batch of `size` out of `n`, or all of them for full-batch.
fn batch_indices(n: usize, size: Option<usize>, rng: &mut SimRng) -> Vec<usize> {
    match size {
        Some(b) if b < n => {
            let mut idx = sample(rng, n, b).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Gradient of the weighted loss over one (mini-)batch of `dataset`.
pub fn local_gradient(
    network: &Network,
    params: &[f64],
    dataset: &LocalDataset,
    weights: TaskWeights,
    batch_size: Option<usize>,
    batch_rng: &mut SimRng,
    dropout_rng: Option<&mut SimRng>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if dataset.train.is_empty() {
        return Err(Error::domain(format!("user {} has no training samples", dataset.user)));
    }
    let idx = batch_indices(dataset.train.len(), batch_size, batch_rng);
    let picked: Vec<&Sample> = idx.iter().map(|&i| &dataset.train[i]).collect();
    network.loss_and_gradient(params, &dataset.batch(&picked), weights, dropout_rng)
}

/// Noise settings of the model exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub downlink_snr_db: f64,
    pub uplink_snr_db: f64,
}

impl Transmission {
    pub const NOISELESS: Self = Self { downlink_snr_db: f64::INFINITY, uplink_snr_db: f64::INFINITY };
}

/// One FedSGD round: every user differentiates at a noisy copy of `params`,
/// the server averages the gradients and takes one step of size `kappa`.
///
/// Returns the new parameters and the mean local training loss.
#[allow(clippy::too_many_arguments)]
pub fn federated_round(
    network: &Network,
    params: &[f64],
    datasets: &[LocalDataset],
    learning_rate: f64,
    weights: TaskWeights,
    batch_size: Option<usize>,
    transmission: Transmission,
    round: usize,
    streams: &RngFactory,
) -> Result<(Vec<f64>, LossBreakdown)> {
    if datasets.is_empty() {
        return Err(Error::domain("federated round needs at least one user"));
    }
    let r = round as u64;
    let locals: Vec<Result<(LossBreakdown, Vec<f64>)>> = datasets
        .par_iter()
        .enumerate()
        .map(|(k, ds)| {
            let u = k as u64;
            let mut down = streams.stream(Stream::TransmissionNoise, &[r, u, 0]);
            let received = noisy_transmit(params, transmission.downlink_snr_db, &mut down);
            let mut batch_rng = streams.stream(Stream::Batch, &[r, u]);
            let mut dropout_rng = streams.stream(Stream::Dropout, &[r, u]);
            let (loss, g) =
                local_gradient(network, &received, ds, weights, batch_size, &mut batch_rng, Some(&mut dropout_rng))?;
            let mut up = streams.stream(Stream::TransmissionNoise, &[r, u, 1]);
            Ok((loss, noisy_transmit(&g, transmission.uplink_snr_db, &mut up)))
        })
        .collect();
    let inv_k = 1.0 / datasets.len() as f64;
    let mut avg = vec![0.0; params.len()];
    let mut loss = LossBreakdown::default();
    for local in locals {
        let (l, g) = local?;
        for (a, v) in avg.iter_mut().zip(&g) {
            *a += v;
        }
        loss.total += l.total;
        loss.channel += l.channel;
        loss.support += l.support;
    }
    loss.total *= inv_k;
    loss.channel *= inv_k;
    loss.support *= inv_k;
    Ok((descend(params, &avg, learning_rate * inv_k), loss))
}

/// One centralized step on a (mini-)batch of the pooled training data.
///
/// With `K` users the pooled batch holds `K` times the per-user batch size, so a
/// single user reproduces [`federated_round`] without noise bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn centralized_step(
    network: &Network,
    params: &[f64],
    pooled: &LocalDataset,
    num_users: usize,
    learning_rate: f64,
    weights: TaskWeights,
    batch_size: Option<usize>,
    round: usize,
    streams: &RngFactory,
) -> Result<(Vec<f64>, LossBreakdown)> {
    let r = round as u64;
    let mut batch_rng = streams.stream(Stream::Batch, &[r, 0]);
    let mut dropout_rng = streams.stream(Stream::Dropout, &[r, 0]);
    let size = batch_size.map(|b| b * num_users.max(1));
    let (loss, g) =
        local_gradient(network, params, pooled, weights, size, &mut batch_rng, Some(&mut dropout_rng))?;
    // Mirror the federated sum-then-scale so one user matches exactly.
    let mut sum = vec![0.0; params.len()];
    for (a, v) in sum.iter_mut().zip(&g) {
        *a += v;
    }
    Ok((descend(params, &sum, learning_rate), loss))
}

fn descend(params: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
    params.iter().zip(grad).map(|(p, g)| p - step * g).collect()
}

/// Concatenates the users' samples into one dataset (user index 0).
pub fn pool(datasets: &[LocalDataset]) -> LocalDataset {
    let mut out = LocalDataset {
        user: 0,
        doa_sector: crate::channel::DoaSector::full(),
        labels: Vec::new(),
        train: Vec::new(),
        validation: Vec::new(),
    };
    for ds in datasets {
        let base = out.labels.len();
        out.labels.extend(ds.labels.iter().cloned());
        let shift = |s: &Sample| Sample { label: s.label + base, ..s.clone() };
        out.train.extend(ds.train.iter().map(shift));
        out.validation.extend(ds.validation.iter().map(shift));
    }
    out
}

/// Training state that can be checkpointed between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub network: Network,
    pub config: TrainingConfig,
    pub streams: RngFactory,
    pub params: Vec<f64>,
    /// Index of the next round to run.
    pub next_round: usize,
    pub train_losses: Vec<LossBreakdown>,
    pub validation_losses: Vec<(usize, LossBreakdown)>,
}

impl Trainer {
    /// Fresh trainer with parameters drawn from the model-initialization stream.
    pub fn new(network: Network, config: TrainingConfig, streams: RngFactory) -> Result<Self> {
        config.validate()?;
        let params = network.init_params(&mut streams.stream(Stream::ModelInit, &[]));
        Ok(Self::with_params(network, config, streams, params, 0))
    }

    pub fn with_params(
        network: Network,
        config: TrainingConfig,
        streams: RngFactory,
        params: Vec<f64>,
        next_round: usize,
    ) -> Self {
        Self {
            network,
            config,
            streams,
            params,
            next_round,
            train_losses: Vec::new(),
            validation_losses: Vec::new(),
        }
    }

    /// Runs rounds until `config.iterations` have been completed.
    ///
    /// `validation` is evaluated in evaluation mode every `eval_every` rounds.
    pub fn run(&mut self, datasets: &[LocalDataset], validation: Option<&Batch>) -> Result<()> {
        self.run_until(datasets, validation, self.config.iterations)
    }

    /// Runs rounds up to (excluding) round `stop`.
    pub fn run_until(&mut self, datasets: &[LocalDataset], validation: Option<&Batch>, stop: usize) -> Result<()> {
        self.config.validate()?;
        let stop = stop.min(self.config.iterations);
        let pooled = (self.config.mode == TrainingMode::Cl).then(|| pool(datasets));
        let transmission = Transmission {
            downlink_snr_db: self.config.snr_delta_db.unwrap_or(f64::INFINITY),
            uplink_snr_db: self.config.uplink_snr_db.unwrap_or(f64::INFINITY),
        };
        let cfg = &self.config;
        while self.next_round < stop {
            let t = self.next_round;
            let (params, loss) = match &pooled {
                Some(p) => centralized_step(
                    &self.network,
                    &self.params,
                    p,
                    datasets.len(),
                    cfg.learning_rate,
                    cfg.weights,
                    cfg.batch_size,
                    t,
                    &self.streams,
                )?,
                None => federated_round(
                    &self.network,
                    &self.params,
                    datasets,
                    cfg.learning_rate,
                    cfg.weights,
                    cfg.batch_size,
                    transmission,
                    t,
                    &self.streams,
                )?,
            };
            if !loss.total.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    iteration: t,
                    reason: format!("training loss {} with learning rate {}", loss.total, cfg.learning_rate),
                });
            }
            self.params = params;
            self.train_losses.push(loss);
            self.next_round += 1;
            if let Some(v) = validation {
                if self.next_round % cfg.eval_every == 0 || self.next_round == cfg.iterations {
                    let l = self.network.loss(&self.params, v, cfg.weights)?;
                    self.validation_losses.push((self.next_round, l));
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> TrainingReport {
        TrainingReport {
            mode: self.config.mode,
            train_losses: self.train_losses.clone(),
            validation_losses: self.validation_losses.clone(),
            params: self.params.clone(),
            iterations: self.next_round,
            learning_rate: self.config.learning_rate,
            weights: self.config.weights,
        }
    }
}

/// Initializes and trains a network on `datasets`, validating on the pooled validation samples.
pub fn train(
    network: Network,
    datasets: &[LocalDataset],
    config: &TrainingConfig,
    streams: RngFactory,
) -> Result<TrainingReport> {
    let mut trainer = Trainer::new(network, config.clone(), streams)?;
    let validation = validation_batch(datasets);
    trainer.run(datasets, validation.as_ref())?;
    Ok(trainer.report())
}

/// All users' validation samples as one batch, or `None` when there are none.
pub fn validation_batch(datasets: &[LocalDataset]) -> Option<Batch> {
    let pooled = pool(datasets);
    (!pooled.validation.is_empty()).then(|| pooled.validation_batch())
}

/// Channel estimate and `L` grid directions predicted for one feature vector.
///
/// The channel is reassembled from the `[Re; Im]` halves of head 1; the
/// directions are the grid angles at the `L` largest head-2 entries, ascending.
pub fn predict_channel_and_doa(
    network: &Network,
    params: &[f64],
    features: &[f64],
    num_paths: usize,
    grid_angles: &[f64],
) -> Result<(CVector, Vec<f64>)> {
    let x = DMatrix::from_column_slice(features.len(), 1, features);
    let (c, s) = network.forward(params, &x)?;
    if grid_angles.len() != s.nrows() {
        return Err(Error::DimensionMismatch {
            context: "support head width",
            expected: grid_angles.len(),
            found: s.nrows(),
        });
    }
    let h = channel_from_halves(c.column(0).as_slice());
    let mut scores: Vec<f64> = s.column(0).iter().copied().collect();
    let mut doas = Vec::with_capacity(num_paths);
    for _ in 0..num_paths.min(scores.len()) {
        let n = argmax_first(&scores);
        doas.push(grid_angles[n]);
        scores[n] = f64::NEG_INFINITY;
    }
    doas.sort_by(f64::total_cmp);
    Ok((h, doas))
}

/// Complex vector from its stacked real and imaginary halves.
pub fn channel_from_halves(v: &[f64]) -> CVector {
    let n = v.len() / 2;
    CVector::from_iterator(n, (0..n).map(|i| C64::new(v[i], v[n + i])))
}

/// Channel NMSE of the network over `samples`, against the labels and against the true channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    pub nmse_vs_label: f64,
    pub nmse_vs_truth: f64,
}

/// Linear NMSE of the channel head on every given sample of `dataset`.
pub fn channel_scores(
    network: &Network,
    params: &[f64],
    dataset: &LocalDataset,
    samples: &[Sample],
) -> Result<ChannelScores> {
    if samples.is_empty() {
        return Err(Error::domain("no samples to score"));
    }
    let fin = samples[0].features.len();
    let x = DMatrix::from_fn(fin, samples.len(), |r, c| samples[c].features[r]);
    let (out, _) = network.forward(params, &x)?;
    let (mut err_l, mut pow_l, mut err_t, mut pow_t) = (0.0, 0.0, 0.0, 0.0);
    for (j, s) in samples.iter().enumerate() {
        let label = &dataset.labels[s.label];
        let h = channel_from_halves(out.column(j).as_slice());
        let hl = channel_from_halves(&label.channel);
        err_l += (&h - &hl).norm_squared();
        pow_l += hl.norm_squared();
        err_t += (&h - &label.true_channel).norm_squared();
        pow_t += label.true_channel.norm_squared();
    }
    let ratio = |e: f64, p: f64| if p > 0.0 { e / p } else { f64::NAN };
    Ok(ChannelScores { nmse_vs_label: ratio(err_l, pow_l), nmse_vs_truth: ratio(err_t, pow_t) })
}
