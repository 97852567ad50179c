//! Scenario configuration and the subcarrier frequency grid.

mod rng;

pub use rng::{make_rng, RngFactory, SimRng, Stream};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// All scenario constants of a wideband THz massive-MIMO downlink.
///
/// Every field has a default so a config file may list any subset of them.
/// [`SystemConfig::default`] is the full-scale reference scenario;
/// [`SystemConfig::desk`] is a reduced scenario that runs in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Carrier frequency `f_c` in Hz.
    pub carrier_freq_hz: f64,
    /// Total bandwidth `B` in Hz.
    pub bandwidth_hz: f64,
    /// Number of subcarriers `M`.
    pub num_subcarriers: usize,
    /// Number of BS antennas `N_T`.
    pub num_tx_antennas: usize,
    /// Number of RF chains `N_RF`, also the compressed pilot count.
    pub num_rf_chains: usize,
    /// Number of propagation paths `L` per user.
    pub num_paths: usize,
    /// Number of users `K`.
    pub num_users: usize,
    /// Beamspace grid size `N`.
    pub grid_size: usize,
    /// Pilot SNR in dB; see [`SystemConfig::noise_variance`].
    pub snr_db: f64,
    /// Root seed of every random stream.
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 300e9,
            bandwidth_hz: 15e9,
            num_subcarriers: 128,
            num_tx_antennas: 1024,
            num_rf_chains: 32,
            num_paths: 5,
            num_users: 8,
            grid_size: 5 * 1024,
            snr_db: 20.0,
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// Full-scale reference scenario (300 GHz, 15 GHz, 128 subcarriers, 1024 antennas).
    pub fn paper() -> Self {
        Self::default()
    }

    /// Reduced scenario with the same fractional bandwidth `B/f_c = 0.05`.
    pub fn desk() -> Self {
        Self {
            num_subcarriers: 16,
            num_tx_antennas: 64,
            num_rf_chains: 8,
            num_paths: 3,
            num_users: 4,
            grid_size: 320,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("num_subcarriers", self.num_subcarriers),
            ("num_tx_antennas", self.num_tx_antennas),
            ("num_rf_chains", self.num_rf_chains),
            ("num_paths", self.num_paths),
            ("num_users", self.num_users),
            ("grid_size", self.grid_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_rf_chains >= self.num_tx_antennas {
            return Err(Error::Config(format!(
                "num_rf_chains ({}) must be below num_tx_antennas ({})",
                self.num_rf_chains, self.num_tx_antennas
            )));
        }
        if self.grid_size < self.num_tx_antennas {
            return Err(Error::Config(format!(
                "grid_size ({}) must be at least num_tx_antennas ({})",
                self.grid_size, self.num_tx_antennas
            )));
        }
        if self.bandwidth_hz >= self.carrier_freq_hz {
            return Err(Error::Config(format!(
                "bandwidth_hz ({}) must be below carrier_freq_hz ({})",
                self.bandwidth_hz, self.carrier_freq_hz
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        Ok(())
    }

    /// Parses a TOML document whose keys are the fields of this struct.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SystemConfig is always representable as TOML")
    }

    /// Frequency of subcarrier `m` (1-based): `f_c + (B/M)(m - 1 - (M-1)/2)`.
    pub fn subcarrier_frequency(&self, m: usize) -> Result<f64> {
        let count = self.num_subcarriers;
        if m == 0 || m > count {
            return Err(Error::domain(format!(
                "subcarrier index {m} outside [1, {count}]"
            )));
        }
        Ok(self.frequency_unchecked(m))
    }

    /// All `M` subcarrier frequencies in ascending order.
    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        (1..=self.num_subcarriers)
            .map(|m| self.frequency_unchecked(m))
            .collect()
    }

    fn frequency_unchecked(&self, m: usize) -> f64 {
        let count = self.num_subcarriers as f64;
        let offset = (m as f64 - 1.0) - (count - 1.0) / 2.0;
        self.carrier_freq_hz + self.bandwidth_hz / count * offset
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.num_subcarriers as f64
    }

    /// Noise variance that puts `signal_power` at `snr_db` above the noise floor.
    ///
    /// `signal_power` is the empirical mean per-element power of the noiseless
    /// observation; an infinite SNR yields zero noise.
    pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
        if snr_db == f64::INFINITY {
            0.0
        } else {
            signal_power / 10f64.powf(snr_db / 10.0)
        }
    }

    /// Largest beam-split deviation `max_m |theta - vartheta|` for a path at `physical_doa`.
    pub fn max_beam_split(&self, physical_doa: f64) -> f64 {
        let m = self.num_subcarriers as f64;
        self.bandwidth_hz * (m - 1.0) / (2.0 * m * self.carrier_freq_hz) * physical_doa.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_cfg() -> SystemConfig {
        SystemConfig::paper()
    }

    #[test]
    fn first_and_last_subcarrier_frequencies() {
        let cfg = paper_cfg();
        assert_eq!(cfg.subcarrier_frequency(1).unwrap(), 292.55859375e9);
        assert_eq!(cfg.subcarrier_frequency(128).unwrap(), 307.44140625e9);
    }

    #[test]
    fn odd_count_center_is_carrier() {
        let cfg = SystemConfig {
            num_subcarriers: 17,
            ..SystemConfig::desk()
        };
        assert_eq!(cfg.subcarrier_frequency(9).unwrap(), cfg.carrier_freq_hz);
    }

    #[test]
    fn out_of_range_subcarrier_is_rejected() {
        let cfg = paper_cfg();
        assert!(matches!(cfg.subcarrier_frequency(0), Err(Error::Domain(_))));
        assert!(matches!(cfg.subcarrier_frequency(129), Err(Error::Domain(_))));
    }

    #[test]
    fn mean_frequency_is_carrier_and_spacing_constant() {
        for cfg in [SystemConfig::paper(), SystemConfig::desk()] {
            let f = cfg.subcarrier_frequencies();
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            assert!((mean - cfg.carrier_freq_hz).abs() <= 1e-15 * cfg.carrier_freq_hz);
            let step = cfg.subcarrier_spacing();
            for w in f.windows(2) {
                assert!((w[1] - w[0] - step).abs() < 1e-3, "spacing {}", w[1] - w[0]);
            }
        }
    }

    #[test]
    fn beam_split_extent_for_reference_scenario() {
        // B(M-1)/(2 M f_c) with B = 15 GHz, M = 128, f_c = 300 GHz.
        let split = paper_cfg().max_beam_split(1.0);
        assert!((split - 0.0248046875).abs() < 1e-12, "{split}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SystemConfig::desk();
        let cases = [
            SystemConfig {
                num_rf_chains: 64,
                ..base.clone()
            },
            SystemConfig {
                grid_size: 32,
                ..base.clone()
            },
            SystemConfig {
                bandwidth_hz: 400e9,
                ..base.clone()
            },
            SystemConfig {
                num_paths: 0,
                ..base.clone()
            },
        ];
        for cfg in cases {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        base.validate().unwrap();
        paper_cfg().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = SystemConfig::from_toml_str("num_users = 2\nseed = 7\n").unwrap();
        assert_eq!(cfg.num_users, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.num_tx_antennas, 1024);
        let again = SystemConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
        assert!(SystemConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn noise_variance_convention() {
        assert_eq!(SystemConfig::noise_variance(2.0, 10.0), 0.2);
        assert_eq!(SystemConfig::noise_variance(2.0, f64::INFINITY), 0.0);
    }
}
