//! Frequency-dependent sparse THz channel with beam-split.
//!
//! A path with physical (sine-space) direction `vartheta` appears at subcarrier
//! `f_m` under the spatial direction `theta = (f_m / f_c) * vartheta`. The channel
//! of user `k` on subcarrier `m` is
//!
//! ```text
//! h_k[m] = sqrt(N_T / L) * sum_l alpha_l * a(theta_{k,m,l}) * exp(-j 2 pi tau_l f_m)
//! ```
//!
//! where `a(.)` is the unit-norm ULA steering vector.

mod codec;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::system::{SimRng, SystemConfig};
use crate::{CVector, Error, Result, C64};

/// Magnitude range of non-line-of-sight path gains.
pub const NLOS_GAIN_RANGE: (f64, f64) = (0.1, 0.4);
/// Largest path delay drawn by [`generate_channel`], in seconds.
pub const MAX_DELAY_S: f64 = 20e-9;

/// One propagation path of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalPath {
    /// Physical direction in sine-space, `[-1, 1)`.
    pub physical_doa: f64,
    /// Frequency-flat complex gain.
    pub gain: C64,
    /// Propagation delay in seconds.
    pub delay_s: f64,
}

impl PhysicalPath {
    pub fn new(physical_doa: f64, gain: C64, delay_s: f64) -> Result<Self> {
        if !(-1.0..1.0).contains(&physical_doa) {
            return Err(Error::domain(format!(
                "physical DoA {physical_doa} outside [-1, 1)"
            )));
        }
        if !(delay_s >= 0.0 && delay_s.is_finite()) {
            return Err(Error::domain(format!("negative or non-finite delay {delay_s}")));
        }
        Ok(Self {
            physical_doa,
            gain,
            delay_s,
        })
    }
}

/// Half-open interval `[lo, hi)` of sine-space directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaSector {
    pub lo: f64,
    pub hi: f64,
}

impl DoaSector {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::domain(format!("empty DoA sector [{lo}, {hi})")));
        }
        if lo < -1.0 || hi > 1.0 {
            return Err(Error::domain(format!(
                "DoA sector [{lo}, {hi}) not within [-1, 1)"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn full() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }

    /// The `user`-th (0-based) of `num_users` equal-width sectors covering `[-1, 1)`.
    pub fn for_user(user: usize, num_users: usize) -> Result<Self> {
        if user >= num_users {
            return Err(Error::domain(format!(
                "user {user} out of range for {num_users} users"
            )));
        }
        let width = 2.0 / num_users as f64;
        let hi = if user + 1 == num_users {
            1.0
        } else {
            -1.0 + width * (user + 1) as f64
        };
        Self::new(-1.0 + width * user as f64, hi)
    }

    pub fn contains(&self, doa: f64) -> bool {
        doa >= self.lo && doa < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// ULA steering vector `a(doa) = [1, e^{-j pi doa}, ..., e^{-j pi (n-1) doa}] / sqrt(n)`.
pub fn steering_vector(doa: f64, n_antennas: usize) -> CVector {
    let scale = 1.0 / (n_antennas as f64).sqrt();
    CVector::from_iterator(
        n_antennas,
        (0..n_antennas).map(|i| C64::from_polar(scale, -PI * i as f64 * doa)),
    )
}

/// Spatial direction seen at subcarrier frequency `f_m`: `(f_m / f_c) * physical_doa`.
pub fn spatial_doa(physical_doa: f64, f_m: f64, f_c: f64) -> f64 {
    f_m / f_c * physical_doa
}

/// Channels of all users on all subcarriers, with the path parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    carrier_freq_hz: f64,
    subcarrier_freqs: Vec<f64>,
    num_antennas: usize,
    num_users: usize,
    num_paths: usize,
    /// Indexed `k * M + m`.
    channels: Vec<CVector>,
    /// Indexed `k * L + l`.
    paths: Vec<PhysicalPath>,
    /// Indexed `(k * M + m) * L + l`.
    spatial_doas: Vec<f64>,
}

impl ChannelRealization {
    /// Synthesizes channels for explicitly given paths, one list per user.
    ///
    /// All users must carry the same number of paths; that count sets the
    /// normalisation `sqrt(N_T / L)`.
    pub fn from_paths(cfg: &SystemConfig, paths: Vec<Vec<PhysicalPath>>) -> Result<Self> {
        let num_users = paths.len();
        if num_users == 0 {
            return Err(Error::domain("no users"));
        }
        let num_paths = paths[0].len();
        if num_paths == 0 {
            return Err(Error::domain("users need at least one path"));
        }
        if let Some(bad) = paths.iter().find(|p| p.len() != num_paths) {
            return Err(Error::DimensionMismatch {
                context: "paths per user",
                expected: num_paths,
                found: bad.len(),
            });
        }
        let freqs = cfg.subcarrier_frequencies();
        let fc = cfg.carrier_freq_hz;
        let n_t = cfg.num_tx_antennas;
        let gamma = (n_t as f64 / num_paths as f64).sqrt();

        let mut channels = Vec::with_capacity(num_users * freqs.len());
        let mut spatial = Vec::with_capacity(num_users * freqs.len() * num_paths);
        for user_paths in &paths {
            for &f_m in &freqs {
                let mut h = CVector::zeros(n_t);
                for p in user_paths {
                    let theta = spatial_doa(p.physical_doa, f_m, fc);
                    spatial.push(theta);
                    let delay = C64::from_polar(1.0, -2.0 * PI * p.delay_s * f_m);
                    h.axpy(p.gain * delay * gamma, &steering_vector(theta, n_t), C64::new(1.0, 0.0));
                }
                channels.push(h);
            }
        }
        Ok(Self {
            carrier_freq_hz: fc,
            subcarrier_freqs: freqs,
            num_antennas: n_t,
            num_users,
            num_paths,
            channels,
            paths: paths.into_iter().flatten().collect(),
            spatial_doas: spatial,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subcarriers(&self) -> usize {
        self.subcarrier_freqs.len()
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn carrier_freq_hz(&self) -> f64 {
        self.carrier_freq_hz
    }

    pub fn subcarrier_freqs(&self) -> &[f64] {
        &self.subcarrier_freqs
    }

    /// Channel vector `h_k[m]` (0-based user and subcarrier).
    pub fn channel(&self, user: usize, subcarrier: usize) -> &CVector {
        &self.channels[user * self.num_subcarriers() + subcarrier]
    }

    /// All `M` channel vectors of one user.
    pub fn user_channels(&self, user: usize) -> &[CVector] {
        let m = self.num_subcarriers();
        &self.channels[user * m..(user + 1) * m]
    }

    pub fn paths(&self, user: usize) -> &[PhysicalPath] {
        &self.paths[user * self.num_paths..(user + 1) * self.num_paths]
    }

    pub fn physical_doas(&self, user: usize) -> Vec<f64> {
        self.paths(user).iter().map(|p| p.physical_doa).collect()
    }

    pub fn spatial_doa(&self, user: usize, subcarrier: usize, path: usize) -> f64 {
        self.spatial_doas[(user * self.num_subcarriers() + subcarrier) * self.num_paths + path]
    }

    /// Restricts the realization to a single user.
    pub fn select_user(&self, user: usize) -> Self {
        let m = self.num_subcarriers();
        let l = self.num_paths;
        Self {
            carrier_freq_hz: self.carrier_freq_hz,
            subcarrier_freqs: self.subcarrier_freqs.clone(),
            num_antennas: self.num_antennas,
            num_users: 1,
            num_paths: l,
            channels: self.user_channels(user).to_vec(),
            paths: self.paths(user).to_vec(),
            spatial_doas: self.spatial_doas[user * m * l..(user + 1) * m * l].to_vec(),
        }
    }
}

/// Draws the `L` paths of one user.
///
/// Path 0 is the line-of-sight path with unit gain magnitude; the others have
/// magnitudes uniform in [`NLOS_GAIN_RANGE`]. All phases are uniform, delays are
/// uniform in `[0, MAX_DELAY_S]` and directions uniform in `sector`.
pub fn draw_user_paths(
    num_paths: usize,
    rng: &mut SimRng,
    sector: DoaSector,
) -> Result<Vec<PhysicalPath>> {
    (0..num_paths)
        .map(|l| {
            let doa = rng.random_range(sector.lo..sector.hi);
            let magnitude = if l == 0 {
                1.0
            } else {
                rng.random_range(NLOS_GAIN_RANGE.0..=NLOS_GAIN_RANGE.1)
            };
            let phase = rng.random_range(-PI..PI);
            let delay = rng.random_range(0.0..=MAX_DELAY_S);
            PhysicalPath::new(doa, C64::from_polar(magnitude, phase), delay)
        })
        .collect()
}

/// Draws a channel realization for all `K` users of `cfg`.
///
/// Directions are drawn from `doa_sector` when given, otherwise from `[-1, 1)`.
pub fn generate_channel(
    cfg: &SystemConfig,
    rng: &mut SimRng,
    doa_sector: Option<DoaSector>,
) -> Result<ChannelRealization> {
    let sector = match doa_sector {
        Some(s) => DoaSector::new(s.lo, s.hi)?,
        None => DoaSector::full(),
    };
    let paths = (0..cfg.num_users)
        .map(|_| draw_user_paths(cfg.num_paths, rng, sector))
        .collect::<Result<Vec<_>>>()?;
    ChannelRealization::from_paths(cfg, paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::make_rng;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn broadside_steering_vector_is_flat() {
        let a = steering_vector(0.0, 4);
        for v in a.iter() {
            assert!(close(*v, C64::new(0.5, 0.0), 1e-15));
        }
    }

    #[test]
    fn endfire_steering_vector_alternates() {
        let a = steering_vector(1.0, 2);
        let s = 1.0 / 2f64.sqrt();
        assert!(close(a[0], C64::new(s, 0.0), 1e-15));
        assert!(close(a[1], C64::new(-s, 0.0), 1e-15));
    }

    #[test]
    fn steering_vectors_have_unit_norm() {
        for &doa in &[-0.99, -0.3, 0.0, 0.123, 0.77] {
            let a = steering_vector(doa, 64);
            assert!((a.norm() - 1.0).abs() < 1e-12);
            assert!(close(a[0], C64::new(0.125, 0.0), 1e-15));
        }
    }

    #[test]
    fn spatial_doa_examples() {
        assert_eq!(spatial_doa(0.8, 300e9, 300e9), 0.8);
        assert!((spatial_doa(0.8, 1.025 * 300e9, 300e9) - 0.82).abs() < 1e-12);
        assert_eq!(spatial_doa(0.0, 310e9, 300e9), 0.0);
    }

    #[test]
    fn single_on_carrier_path_is_scaled_steering_vector() {
        let cfg = SystemConfig {
            num_subcarriers: 1,
            ..SystemConfig::desk()
        };
        let path = PhysicalPath::new(0.25, C64::new(1.0, 0.0), 0.0).unwrap();
        let ch = ChannelRealization::from_paths(&cfg, vec![vec![path]]).unwrap();
        let expected = steering_vector(0.25, 64) * C64::new(8.0, 0.0);
        assert!((ch.channel(0, 0) - expected).norm() < 1e-12);
    }

    #[test]
    fn single_path_norm_is_sqrt_nt_times_gain() {
        let cfg = SystemConfig::desk();
        let mut rng = make_rng(4);
        let sector = DoaSector::full();
        for _ in 0..10 {
            let paths = draw_user_paths(1, &mut rng, sector).unwrap();
            let alpha = paths[0].gain.norm();
            let ch = ChannelRealization::from_paths(&cfg, vec![paths]).unwrap();
            for h in ch.user_channels(0) {
                assert!((h.norm() - 8.0 * alpha).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reference_scenario_channel_length() {
        let cfg = SystemConfig {
            num_users: 1,
            num_subcarriers: 2,
            ..SystemConfig::paper()
        };
        let ch = generate_channel(&cfg, &mut make_rng(0), None).unwrap();
        assert_eq!(ch.channel(0, 0).len(), 1024);
    }

    #[test]
    fn generated_channels_respect_invariants() {
        let cfg = SystemConfig::desk();
        let sector = DoaSector::for_user(1, 4).unwrap();
        let ch = generate_channel(&cfg, &mut make_rng(11), Some(sector)).unwrap();
        let freqs = cfg.subcarrier_frequencies();
        for k in 0..cfg.num_users {
            let paths = ch.paths(k);
            assert_eq!(paths[0].gain.norm(), 1.0);
            for p in &paths[1..] {
                let g = p.gain.norm();
                assert!((0.1 - 1e-12..=0.4 + 1e-12).contains(&g));
            }
            for p in paths {
                assert!(sector.contains(p.physical_doa));
                assert!((0.0..=MAX_DELAY_S).contains(&p.delay_s));
            }
            for m in 0..cfg.num_subcarriers {
                let h = ch.channel(k, m);
                assert!(h.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
                assert!(h.norm() > 0.0);
                for (l, p) in paths.iter().enumerate() {
                    let expected = freqs[m] / cfg.carrier_freq_hz * p.physical_doa;
                    assert_eq!(ch.spatial_doa(k, m, l), expected);
                }
            }
        }
    }

    #[test]
    fn beam_split_extent_matches_closed_form() {
        let cfg = SystemConfig::paper();
        let path = PhysicalPath::new(-0.999, C64::new(1.0, 0.0), 0.0).unwrap();
        let small = SystemConfig {
            num_tx_antennas: 8,
            grid_size: 40,
            num_rf_chains: 4,
            ..cfg.clone()
        };
        let ch = ChannelRealization::from_paths(&small, vec![vec![path]]).unwrap();
        let worst = (0..small.num_subcarriers)
            .map(|m| (ch.spatial_doa(0, m, 0) - path.physical_doa).abs())
            .fold(0.0, f64::max);
        assert!((worst - cfg.max_beam_split(-0.999)).abs() < 1e-12);
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = SystemConfig::desk();
        let a = generate_channel(&cfg, &mut make_rng(9), None).unwrap();
        let b = generate_channel(&cfg, &mut make_rng(9), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sectors() {
        let s = DoaSector::for_user(0, 8).unwrap();
        assert_eq!((s.lo, s.hi), (-1.0, -0.75));
        let last = DoaSector::for_user(7, 8).unwrap();
        assert_eq!(last.hi, 1.0);
        assert!(DoaSector::new(0.2, 0.2).is_err());
        let cfg = SystemConfig::desk();
        let empty = DoaSector { lo: 0.5, hi: 0.5 };
        assert!(matches!(
            generate_channel(&cfg, &mut make_rng(0), Some(empty)),
            Err(Error::Domain(_))
        ));
    }
}
