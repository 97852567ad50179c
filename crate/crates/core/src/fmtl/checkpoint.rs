//! Versioned binary checkpoints for exact training resumption.
//!
//! Every random draw during training comes from a stream addressed by the root
//! seed and the round index, so the root seed and the next round fully describe
//! the random state.
//!
//! Layout (little endian): magic `BSCK`, `u32` version, `u64` root seed, `u64`
//! next round, `f64` dropout, architecture (`u64` input, `u64` hidden count,
//! hidden widths, `u64` channel head, `u64` support head), `u64` length plus
//! JSON training config, `u64` parameter count plus `f64` parameters.

use std::io::{Read, Write};
use std::path::Path;

use super::network::{Architecture, Network};
use super::training::{Trainer, TrainingConfig};
use crate::system::RngFactory;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"BSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Snapshot of a [`Trainer`] between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub dropout: f64,
    pub config: TrainingConfig,
    pub root_seed: u64,
    pub next_round: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer) -> Self {
        Self {
            architecture: trainer.network.architecture().clone(),
            dropout: trainer.network.dropout(),
            config: trainer.config.clone(),
            root_seed: trainer.streams.root_seed(),
            next_round: trainer.next_round,
            params: trainer.params.clone(),
        }
    }

    /// Trainer that continues exactly where the captured one stopped (loss history starts empty).
    pub fn restore(&self) -> Result<Trainer> {
        let network = Network::new(self.architecture.clone(), self.dropout)?;
        if network.param_count() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, architecture needs {}",
                self.params.len(),
                network.param_count()
            )));
        }
        Ok(Trainer::with_params(
            network,
            self.config.clone(),
            RngFactory::new(self.root_seed),
            self.params.clone(),
            self.next_round,
        ))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u64(&mut out, self.root_seed);
        put_u64(&mut out, self.next_round as u64);
        out.extend_from_slice(&self.dropout.to_le_bytes());
        let a = &self.architecture;
        put_u64(&mut out, a.input as u64);
        put_u64(&mut out, a.hidden.len() as u64);
        for &h in &a.hidden {
            put_u64(&mut out, h as u64);
        }
        put_u64(&mut out, a.head_channel as u64);
        put_u64(&mut out, a.head_support as u64);
        let cfg = serde_json::to_vec(&self.config)?;
        put_u64(&mut out, cfg.len() as u64);
        out.extend_from_slice(&cfg);
        put_u64(&mut out, self.params.len() as u64);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let root_seed = r.u64()?;
        let next_round = r.usize()?;
        let dropout = r.f64()?;
        let input = r.usize()?;
        let n_hidden = r.usize()?;
        let hidden = (0..n_hidden).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let head_channel = r.usize()?;
        let head_support = r.usize()?;
        let cfg_len = r.usize()?;
        let config = serde_json::from_slice(r.take(cfg_len)?)?;
        let n_params = r.usize()?;
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            architecture: Architecture { input, hidden, head_channel, head_support },
            dropout,
            config,
            root_seed,
            next_round,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes()?)?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmtl::dataset::{Label, LocalDataset, Sample};
    use crate::system::make_rng;
    use crate::CVector;
    use rand::Rng;

    fn users(arch: &Architecture) -> Vec<LocalDataset> {
        let mut rng = make_rng(0);
        (0..2)
            .map(|k| LocalDataset {
                user: k,
                doa_sector: crate::channel::DoaSector::full(),
                labels: (0..6)
                    .map(|_| Label {
                        channel: (0..arch.head_channel).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        support: (0..arch.head_support).map(|_| rng.random::<f64>()).collect(),
                        doas: vec![],
                        true_channel: CVector::zeros(arch.head_channel / 2),
                    })
                    .collect(),
                train: (0..6)
                    .map(|i| Sample {
                        features: (0..arch.input).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        label: i,
                        snr_db: 0.0,
                    })
                    .collect(),
                validation: vec![],
            })
            .collect()
    }

    #[test]
    fn resumed_training_matches_uninterrupted_run() {
        let arch = Architecture { input: 6, hidden: vec![10], head_channel: 4, head_support: 5 };
        let data = users(&arch);
        let cfg = TrainingConfig {
            iterations: 12,
            learning_rate: 0.02,
            batch_size: Some(3),
            snr_delta_db: Some(15.0),
            ..TrainingConfig::default()
        };
        let net = Network::new(arch, 0.5).unwrap();
        let mut full = Trainer::new(net.clone(), cfg.clone(), RngFactory::new(77)).unwrap();
        full.run(&data, None).unwrap();

        let mut first = Trainer::new(net, cfg, RngFactory::new(77)).unwrap();
        first.run_until(&data, None, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        Checkpoint::capture(&first).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, Checkpoint::capture(&first));
        let mut resumed = loaded.restore().unwrap();
        resumed.run(&data, None).unwrap();
        assert_eq!(resumed.next_round, 12);
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.train_losses[..], full.train_losses[5..]);
    }

    #[test]
    fn corrupted_blobs_are_rejected() {
        let arch = Architecture { input: 2, hidden: vec![3], head_channel: 2, head_support: 2 };
        let net = Network::new(arch, 0.0).unwrap();
        let t = Trainer::new(net, TrainingConfig::default(), RngFactory::new(1)).unwrap();
        let bytes = Checkpoint::capture(&t).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes).is_ok());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut future = bytes.clone();
        future[4] = 99;
        assert!(Checkpoint::from_bytes(&future).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
