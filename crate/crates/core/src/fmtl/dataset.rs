//! Per-user training data: noisy compressed pilots as features, BSA estimates
//! of the noiseless scenario as labels.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::Batch;
use crate::channel::{draw_user_paths, ChannelRealization, DoaSector};
use crate::estimators::{bsa_estimate_user, BsaOptions};
use crate::sensing::{observe_compressed, noise_variance_at_snr, SensingEnsemble};
use crate::system::{RngFactory, Stream, SystemConfig};
use crate::{CVector, Error, Result};

/// Fraction of channel realizations used for training; the rest validate.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Range of the per-user size factor of an imbalanced partition.
pub const IMBALANCE_RANGE: (f64, f64) = (0.7, 1.3);

// Leading path element that separates dataset streams from Monte-Carlo trial streams.
const DATASET_DOMAIN: u64 = 0xDA7A;

/// How directions and dataset sizes are distributed across users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    /// Every user draws directions from the full range; equal sizes.
    Iid,
    /// User `k` draws directions from its own sector of width `2/K`; equal sizes.
    Sector,
    /// Sectors as in `Sector`, with per-user sizes scaled by a random factor.
    Imbalanced,
}

/// Labels shared by all noisy samples of one (channel, subcarrier) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    /// `[Re(h_hat); Im(h_hat)]`, length `2 N_T`.
    pub channel: Vec<f64>,
    /// `|x_hat|`, length `N`.
    pub support: Vec<f64>,
    /// Physical directions of the underlying channel.
    pub doas: Vec<f64>,
    /// Noiseless channel the label was derived from.
    pub true_channel: CVector,
}

/// One noisy observation of one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[Re(y); Im(y); angle(y)]`, length `3 N_RF`.
    pub features: Vec<f64>,
    /// Index into [`LocalDataset::labels`].
    pub label: usize,
    pub snr_db: f64,
}

/// Training and validation samples of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    /// Zero-based user index.
    pub user: usize,
    pub doa_sector: DoaSector,
    pub labels: Vec<Label>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

/// Parameters of the dataset pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Channel realizations `V` per user.
    pub channels: usize,
    /// Noise realizations `G` per channel and SNR.
    pub noise_draws: usize,
    pub snr_levels: Vec<f64>,
}

impl DatasetSpec {
    /// Samples per user, `|snr_levels| V G M`.
    pub fn samples_per_user(&self, num_subcarriers: usize) -> u64 {
        self.snr_levels.len() as u64 * self.channels as u64 * self.noise_draws as u64 * num_subcarriers as u64
    }
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column-stacked batch of the given samples.
    pub fn batch(&self, samples: &[&Sample]) -> Batch {
        let first = &self.labels[0];
        let (fin, c, s) = (
            samples.first().map_or(0, |x| x.features.len()),
            first.channel.len(),
            first.support.len(),
        );
        let b = samples.len();
        let mut features = DMatrix::zeros(fin, b);
        let mut channel = DMatrix::zeros(c, b);
        let mut support = DMatrix::zeros(s, b);
        for (j, smp) in samples.iter().enumerate() {
            let label = &self.labels[smp.label];
            features.column_mut(j).copy_from_slice(&smp.features);
            channel.column_mut(j).copy_from_slice(&label.channel);
            support.column_mut(j).copy_from_slice(&label.support);
        }
        Batch { features, channel, support }
    }

    pub fn train_batch(&self) -> Batch {
        self.batch(&self.train.iter().collect::<Vec<_>>())
    }

    pub fn validation_batch(&self) -> Batch {
        self.batch(&self.validation.iter().collect::<Vec<_>>())
    }
}

/// Whether channel realization `v` belongs to the validation split.
///
/// Spreads validation channels evenly so any prefix of realizations keeps
/// roughly a `1 - TRAIN_FRACTION` share.
pub fn is_validation_channel(v: usize) -> bool {
    let share = 1.0 - TRAIN_FRACTION;
    ((v + 1) as f64 * share + 1e-9).floor() > (v as f64 * share + 1e-9).floor()
}

/// Feature vector `[Re(y); Im(y); angle(y)]` with angles in `(-pi, pi]`.
pub fn features_of(y: &CVector) -> Vec<f64> {
    let n = y.len();
    let mut f = Vec::with_capacity(3 * n);
    f.extend(y.iter().map(|v| v.re));
    f.extend(y.iter().map(|v| v.im));
    f.extend(y.iter().map(|v| {
        let a = v.arg();
        if a <= -PI { PI } else { a }
    }));
    f
}

/// Builds the dataset of user `user` (zero-based) from `spec.channels` channel draws.
pub fn build_dataset(
    cfg: &SystemConfig,
    ensemble: &SensingEnsemble,
    user: usize,
    spec: &DatasetSpec,
    sector: DoaSector,
    streams: &RngFactory,
) -> Result<LocalDataset> {
    if spec.snr_levels.is_empty() {
        return Err(Error::domain("at least one SNR level is required"));
    }
    if spec.channels == 0 || spec.noise_draws == 0 {
        return Err(Error::domain("channel and noise realization counts must be positive"));
    }
    let single = SystemConfig { num_users: 1, ..cfg.clone() };
    let freqs = cfg.subcarrier_frequencies();
    let m_count = cfg.num_subcarriers;
    let mut labels = Vec::with_capacity(spec.channels * m_count);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for v in 0..spec.channels {
        let key = [DATASET_DOMAIN, user as u64, v as u64];
        let mut channel_rng = streams.stream(Stream::Channel, &key);
        let paths = draw_user_paths(cfg.num_paths, &mut channel_rng, sector)?;
        let doas: Vec<f64> = paths.iter().map(|p| p.physical_doa).collect();
        let ch = ChannelRealization::from_paths(&single, vec![paths])?;
        let clean = observe_compressed(&ch, ensemble, &mut channel_rng, 0.0)?;
        let est = bsa_estimate_user(
            clean.user(0),
            ensemble,
            cfg.num_paths,
            &freqs,
            cfg.carrier_freq_hz,
            BsaOptions::default(),
        )?;
        let base = labels.len();
        for m in 0..m_count {
            let h = &est.channels[m];
            let mut channel = Vec::with_capacity(2 * h.len());
            channel.extend(h.iter().map(|c| c.re));
            channel.extend(h.iter().map(|c| c.im));
            labels.push(Label {
                channel,
                support: est.coefficients[m].iter().map(|c| c.norm()).collect(),
                doas: doas.clone(),
                true_channel: ch.channel(0, m).clone(),
            });
        }
        let target = if is_validation_channel(v) { &mut validation } else { &mut train };
        for (si, &snr) in spec.snr_levels.iter().enumerate() {
            let s2 = noise_variance_at_snr(&ch, ensemble.precoder(), snr);
            for g in 0..spec.noise_draws {
                let mut noise_rng =
                    streams.stream(Stream::Noise, &[DATASET_DOMAIN, user as u64, v as u64, si as u64, g as u64]);
                let noisy = observe_compressed(&ch, ensemble, &mut noise_rng, s2)?;
                for m in 0..m_count {
                    target.push(Sample {
                        features: features_of(noisy.get(0, m)),
                        label: base + m,
                        snr_db: snr,
                    });
                }
            }
        }
    }
    Ok(LocalDataset { user, doa_sector: sector, labels, train, validation })
}

/// Per-user channel counts `V_k` for a partition; equal to `channels` unless imbalanced.
pub fn channel_counts(partition: Partition, channels: usize, num_users: usize, streams: &RngFactory) -> Vec<usize> {
    match partition {
        Partition::Iid | Partition::Sector => vec![channels; num_users],
        Partition::Imbalanced => {
            let mut rng = streams.stream(Stream::Partition, &[DATASET_DOMAIN]);
            let zeta: Vec<f64> = (0..num_users)
                .map(|_| rng.random_range(IMBALANCE_RANGE.0..=IMBALANCE_RANGE.1))
                .collect();
            let sum: f64 = zeta.iter().sum();
            zeta.iter()
                .map(|z| ((z * num_users as f64 / sum) * channels as f64).round().max(1.0) as usize)
                .collect()
        }
    }
}

/// Builds the datasets of all `K` users under `partition`.
pub fn build_partitioned(
    cfg: &SystemConfig,
    ensemble: &SensingEnsemble,
    spec: &DatasetSpec,
    partition: Partition,
    streams: &RngFactory,
) -> Result<Vec<LocalDataset>> {
    let counts = channel_counts(partition, spec.channels, cfg.num_users, streams);
    (0..cfg.num_users)
        .map(|k| {
            let sector = match partition {
                Partition::Iid => DoaSector::full(),
                Partition::Sector | Partition::Imbalanced => DoaSector::for_user(k, cfg.num_users)?,
            };
            let local = DatasetSpec { channels: counts[k], ..spec.clone() };
            build_dataset(cfg, ensemble, k, &local, sector, streams)
        })
        .collect()
}
