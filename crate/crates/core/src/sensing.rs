//! Beamspace dictionary, analog precoder and pilot observations.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{steering_vector, ChannelRealization};
use crate::system::{SimRng, SystemConfig};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Grid direction `phi_n = (2n - N - 1) / N` for 1-based `n`.
pub fn grid_angle(n: usize, grid_size: usize) -> f64 {
    (2.0 * n as f64 - grid_size as f64 - 1.0) / grid_size as f64
}

/// Overcomplete DFT dictionary: column `n` is `a(phi_n)`.
///
/// Returns the `n_antennas x grid_size` dictionary and the grid angles.
pub fn build_dictionary(n_antennas: usize, grid_size: usize) -> Result<(CMatrix, Vec<f64>)> {
    if n_antennas == 0 {
        return Err(Error::domain("dictionary needs at least one antenna"));
    }
    if grid_size < n_antennas {
        return Err(Error::domain(format!(
            "grid size {grid_size} smaller than antenna count {n_antennas}"
        )));
    }
    let angles: Vec<f64> = (1..=grid_size).map(|n| grid_angle(n, grid_size)).collect();
    let mut dict = CMatrix::zeros(n_antennas, grid_size);
    for (j, &phi) in angles.iter().enumerate() {
        dict.set_column(j, &steering_vector(phi, n_antennas));
    }
    Ok((dict, angles))
}

/// Analog precoder with entries `e^{j phi} / sqrt(N_T)`, `phi ~ U[-pi/2, pi/2]`.
pub fn build_precoder(cfg: &SystemConfig, rng: &mut SimRng) -> CMatrix {
    let scale = 1.0 / (cfg.num_tx_antennas as f64).sqrt();
    CMatrix::from_fn(cfg.num_rf_chains, cfg.num_tx_antennas, |_, _| {
        C64::from_polar(scale, rng.random_range(-FRAC_PI_2..=FRAC_PI_2))
    })
}

/// Unitary DFT pilot beamformer (`J = N_T`) with unit-modulus entries.
pub fn dft_pilots(n_antennas: usize) -> CMatrix {
    let scale = 1.0 / (n_antennas as f64).sqrt();
    CMatrix::from_fn(n_antennas, n_antennas, |i, j| {
        C64::from_polar(scale, -2.0 * PI * (i * j) as f64 / n_antennas as f64)
    })
}

/// Random unit-modulus pilot beamformer with full-circle phases.
pub fn random_pilots(num_pilots: usize, n_antennas: usize, rng: &mut SimRng) -> CMatrix {
    let scale = 1.0 / (n_antennas as f64).sqrt();
    CMatrix::from_fn(num_pilots, n_antennas, |_, _| {
        C64::from_polar(scale, rng.random_range(-PI..PI))
    })
}

/// Dirichlet kernel `sin(n pi a / 2) / sin(pi a / 2)`, continuous at its poles.
pub fn dirichlet_sinc(a: f64, n: usize) -> f64 {
    let n = n as f64;
    let half = PI * a / 2.0;
    let den = half.sin();
    if den.abs() < 1e-12 {
        // L'Hopital at a = 2j: n cos(n pi j) / cos(pi j).
        n * (n * half).cos() / half.cos()
    } else {
        (n * half).sin() / den
    }
}

/// Angle-domain representation `x = F^H h`.
pub fn angle_domain_transform(h: &CVector, dictionary: &CMatrix) -> Result<CVector> {
    if h.len() != dictionary.nrows() {
        return Err(Error::DimensionMismatch {
            context: "angle-domain transform",
            expected: dictionary.nrows(),
            found: h.len(),
        });
    }
    Ok(dictionary.ad_mul(h))
}

/// Dictionary, precoder and measurement matrix `A = B F` of one scenario.
#[derive(Debug, Clone)]
pub struct SensingEnsemble {
    dictionary: CMatrix,
    grid_angles: Vec<f64>,
    precoder: CMatrix,
    measurement: CMatrix,
    atom_norms: Vec<f64>,
    grid_step: f64,
}

impl SensingEnsemble {
    /// Builds the dictionary for `cfg` and draws a random precoder from `rng`.
    pub fn new(cfg: &SystemConfig, rng: &mut SimRng) -> Result<Self> {
        let precoder = build_precoder(cfg, rng);
        Self::with_precoder(cfg, precoder)
    }

    pub fn with_precoder(cfg: &SystemConfig, precoder: CMatrix) -> Result<Self> {
        let (dictionary, grid_angles) = build_dictionary(cfg.num_tx_antennas, cfg.grid_size)?;
        if precoder.ncols() != cfg.num_tx_antennas {
            return Err(Error::DimensionMismatch {
                context: "precoder columns",
                expected: cfg.num_tx_antennas,
                found: precoder.ncols(),
            });
        }
        let measurement = &precoder * &dictionary;
        let atom_norms = measurement.column_iter().map(|c| c.norm()).collect();
        Ok(Self {
            grid_step: 2.0 / cfg.grid_size as f64,
            dictionary,
            grid_angles,
            precoder,
            measurement,
            atom_norms,
        })
    }

    /// `F`, `N_T x N`.
    pub fn dictionary(&self) -> &CMatrix {
        &self.dictionary
    }

    pub fn grid_angles(&self) -> &[f64] {
        &self.grid_angles
    }

    /// `B`, `N_RF x N_T`.
    pub fn precoder(&self) -> &CMatrix {
        &self.precoder
    }

    /// `A = B F`, `N_RF x N`.
    pub fn measurement(&self) -> &CMatrix {
        &self.measurement
    }

    /// Euclidean norm of every column of `A`.
    pub fn atom_norms(&self) -> &[f64] {
        &self.atom_norms
    }

    /// Spacing `rho = 2 / N` of the direction grid.
    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn grid_size(&self) -> usize {
        self.grid_angles.len()
    }

    pub fn num_measurements(&self) -> usize {
        self.measurement.nrows()
    }

    /// Beamspace spectrum `|A_n^H r|`, optionally divided by the atom norms `||A_n||`.
    pub fn correlate(&self, r: &CVector, normalize: bool) -> Vec<f64> {
        let c = self.measurement.ad_mul(r);
        if normalize {
            c.iter()
                .zip(&self.atom_norms)
                .map(|(v, &w)| if w > 0.0 { v.norm() / w } else { 0.0 })
                .collect()
        } else {
            c.iter().map(|v| v.norm()).collect()
        }
    }

    /// Index of the grid direction closest to `doa`, treating the grid as circular.
    pub fn nearest_grid_index(&self, doa: f64) -> usize {
        let n = self.grid_size() as f64;
        let pos = ((doa * n + n - 1.0) / 2.0).round();
        pos.rem_euclid(n) as usize
    }
}

/// Whether an observation uses a full (`J >= N_T`) or compressed (`J = N_RF`) pilot set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Overdetermined,
    Compressed,
}

/// Received pilots of all users on all subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    regime: Regime,
    noise_variance: f64,
    num_users: usize,
    num_subcarriers: usize,
    /// Indexed `k * M + m`.
    received: Vec<CVector>,
}

impl PilotObservation {
    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    /// Pilot vector length `J`.
    pub fn num_pilots(&self) -> usize {
        self.received[0].len()
    }

    pub fn get(&self, user: usize, subcarrier: usize) -> &CVector {
        &self.received[user * self.num_subcarriers + subcarrier]
    }

    pub fn user(&self, user: usize) -> &[CVector] {
        let m = self.num_subcarriers;
        &self.received[user * m..(user + 1) * m]
    }

    pub fn all(&self) -> &[CVector] {
        &self.received
    }
}

fn add_noise(y: &mut CVector, variance: f64, rng: &mut SimRng) {
    if variance == 0.0 {
        return;
    }
    let sigma = (variance / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += C64::new(re * sigma, im * sigma);
    }
}

fn observe(
    channel: &ChannelRealization,
    operator: &CMatrix,
    regime: Regime,
    rng: &mut SimRng,
    noise_variance: f64,
) -> Result<PilotObservation> {
    if operator.ncols() != channel.num_antennas() {
        return Err(Error::DimensionMismatch {
            context: "pilot operator columns",
            expected: channel.num_antennas(),
            found: operator.ncols(),
        });
    }
    if operator.nrows() == 0 {
        return Err(Error::domain("at least one pilot is required"));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::domain(format!("invalid noise variance {noise_variance}")));
    }
    let mut received = Vec::with_capacity(channel.num_users() * channel.num_subcarriers());
    for k in 0..channel.num_users() {
        for h in channel.user_channels(k) {
            let mut y = operator * h;
            add_noise(&mut y, noise_variance, rng);
            received.push(y);
        }
    }
    Ok(PilotObservation {
        regime,
        noise_variance,
        num_users: channel.num_users(),
        num_subcarriers: channel.num_subcarriers(),
        received,
    })
}

/// Full pilot observation `y = F_bar h + n` with identity pilot symbols.
pub fn observe_full_pilots(
    channel: &ChannelRealization,
    pilot_beamformer: &CMatrix,
    rng: &mut SimRng,
    noise_variance: f64,
) -> Result<PilotObservation> {
    observe(channel, pilot_beamformer, Regime::Overdetermined, rng, noise_variance)
}

/// Compressed observation `y = B h + n` with `J = N_RF` pilots.
pub fn observe_compressed(
    channel: &ChannelRealization,
    ensemble: &SensingEnsemble,
    rng: &mut SimRng,
    noise_variance: f64,
) -> Result<PilotObservation> {
    observe(channel, ensemble.precoder(), Regime::Compressed, rng, noise_variance)
}

/// Mean per-element power of the noiseless observation `operator * h` over all users and subcarriers.
pub fn noiseless_power(channel: &ChannelRealization, operator: &CMatrix) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..channel.num_users() {
        for h in channel.user_channels(k) {
            let y = operator * h;
            total += y.norm_squared();
            count += y.len();
        }
    }
    total / count as f64
}

/// Noise variance that realizes `snr_db` for `channel` observed through `operator`.
pub fn noise_variance_at_snr(channel: &ChannelRealization, operator: &CMatrix, snr_db: f64) -> f64 {
    SystemConfig::noise_variance(noiseless_power(channel, operator), snr_db)
}
