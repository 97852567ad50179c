use log::warn;
use nalgebra::DMatrix;

use super::omp::closest_to_carrier;
use super::{doas_from_indices, fit_support, reconstruct, BeamspaceSpectrum, SparseChannelEstimate};
use crate::linalg::argmax_first;
use crate::sensing::{PilotObservation, Regime, SensingEnsemble};
use crate::system::SystemConfig;
use crate::{CVector, Error, Result};

/// How the fractional grid shift `(1 - f_m/f_c) phi / rho` becomes an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftRounding {
    /// Round to the nearest integer; unbiased.
    Nearest,
    /// Round toward positive infinity.
    Ceiling,
}

/// Tuning switches for [`bsa_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsaOptions {
    pub shift_rounding: ShiftRounding,
    /// Divide correlations by `||A_n||` so atoms with larger gain through the
    /// precoder do not dominate the spectrum.
    pub normalize_atoms: bool,
    /// Map per-subcarrier peaks that aliased across the `+-1` grid edge back
    /// next to the reference subcarrier's peak before computing the shift.
    pub unwrap_edges: bool,
    /// Keep every iteration's spectra in the estimate.
    pub keep_spectra: bool,
}

impl Default for BsaOptions {
    fn default() -> Self {
        Self {
            shift_rounding: ShiftRounding::Nearest,
            normalize_atoms: true,
            unwrap_edges: true,
            keep_spectra: false,
        }
    }
}

impl BsaOptions {
    /// Raw correlations, ceiling shift and no edge handling.
    pub fn literal() -> Self {
        Self {
            shift_rounding: ShiftRounding::Ceiling,
            normalize_atoms: false,
            unwrap_edges: false,
            keep_spectra: false,
        }
    }

    pub fn with_spectra(mut self) -> Self {
        self.keep_spectra = true;
        self
    }
}

/// Beamspace support alignment for every user of a compressed observation.
pub fn bsa_estimate(
    obs: &PilotObservation,
    ensemble: &SensingEnsemble,
    cfg: &SystemConfig,
    options: BsaOptions,
) -> Result<Vec<SparseChannelEstimate>> {
    if obs.regime() != Regime::Compressed {
        return Err(Error::domain("BSA needs a compressed pilot observation"));
    }
    let freqs = cfg.subcarrier_frequencies();
    (0..obs.num_users())
        .map(|k| {
            bsa_estimate_user(
                obs.user(k),
                ensemble,
                cfg.num_paths,
                &freqs,
                cfg.carrier_freq_hz,
                options,
            )
        })
        .collect()
}

/// Beamspace support alignment for one user's `M` compressed observations.
///
/// Each of the `sparsity` iterations correlates every subcarrier's residual
/// with the measurement atoms, shifts each spectrum by the beam-split offset
/// of its peak, sums the shifted spectra and takes the fused peak as a
/// physical direction. Shifting that index back per subcarrier extends each
/// support; residuals are refreshed by projecting the observation off the
/// accumulated support.
pub fn bsa_estimate_user(
    ys: &[CVector],
    ensemble: &SensingEnsemble,
    sparsity: usize,
    subcarrier_freqs: &[f64],
    carrier_freq_hz: f64,
    options: BsaOptions,
) -> Result<SparseChannelEstimate> {
    let m_count = ys.len();
    if m_count != subcarrier_freqs.len() || m_count == 0 {
        return Err(Error::DimensionMismatch {
            context: "BSA subcarrier count",
            expected: subcarrier_freqs.len(),
            found: m_count,
        });
    }
    if let Some(y) = ys.iter().find(|y| y.len() != ensemble.num_measurements()) {
        return Err(Error::DimensionMismatch {
            context: "BSA observation length",
            expected: ensemble.num_measurements(),
            found: y.len(),
        });
    }
    if sparsity == 0 || sparsity > ensemble.num_measurements() {
        return Err(Error::domain(format!(
            "sparsity {sparsity} outside [1, {}]",
            ensemble.num_measurements()
        )));
    }

    let n = ensemble.grid_size();
    let angles = ensemble.grid_angles();
    let rho = ensemble.grid_step();
    let ratios: Vec<f64> = subcarrier_freqs.iter().map(|f| f / carrier_freq_hz).collect();
    let reference = closest_to_carrier(subcarrier_freqs, carrier_freq_hz).unwrap_or(0);

    let mut residuals: Vec<CVector> = ys.to_vec();
    let mut residual_norms: Vec<Vec<f64>> = ys.iter().map(|y| vec![y.norm()]).collect();
    let mut supports: Vec<Vec<usize>> = vec![Vec::with_capacity(sparsity); m_count];
    let mut spatial: Vec<Vec<f64>> = vec![Vec::with_capacity(sparsity); m_count];
    let mut doa_indices = Vec::with_capacity(sparsity);
    let mut spectra = options.keep_spectra.then(Vec::new);
    let mut wraps = 0usize;

    for _ in 0..sparsity {
        let values: Vec<Vec<f64>> = residuals
            .iter()
            .map(|r| ensemble.correlate(r, options.normalize_atoms))
            .collect();
        let peaks: Vec<usize> = values.iter().map(|p| argmax_first(p)).collect();
        let ref_angle = angles[peaks[reference]];

        let mut shifts = Vec::with_capacity(m_count);
        let mut fused = vec![0.0; n];
        let mut shifted_rows = options.keep_spectra.then(|| Vec::with_capacity(m_count));
        for m in 0..m_count {
            let mut phi = angles[peaks[m]];
            if options.unwrap_edges {
                phi = unwrap(phi, ref_angle * ratios[m], ratios[m]);
            }
            spatial[m].push(phi);
            let raw = (1.0 - ratios[m]) * phi / rho;
            let delta = match options.shift_rounding {
                ShiftRounding::Nearest => raw.round(),
                ShiftRounding::Ceiling => raw.ceil(),
            } as i64;
            shifts.push(delta);
            let p = &values[m];
            let row: Vec<f64> = (0..n)
                .map(|i| p[(i as i64 - delta).rem_euclid(n as i64) as usize])
                .collect();
            for (f, v) in fused.iter_mut().zip(&row) {
                *f += v;
            }
            if let Some(rows) = shifted_rows.as_mut() {
                rows.push(row);
            }
        }
        let best = argmax_first(&fused);
        doa_indices.push(best);

        for m in 0..m_count {
            let raw = best as i64 - shifts[m];
            if raw < 0 || raw >= n as i64 {
                wraps += 1;
            }
            let idx = raw.rem_euclid(n as i64) as usize;
            if !supports[m].contains(&idx) {
                supports[m].push(idx);
            }
            residuals[m] = fit_support(ensemble, &supports[m], &ys[m])?.1;
            residual_norms[m].push(residuals[m].norm());
        }

        if let (Some(store), Some(rows)) = (spectra.as_mut(), shifted_rows) {
            store.push(BeamspaceSpectrum {
                values: DMatrix::from_fn(m_count, n, |m, i| values[m][i]),
                shifted: DMatrix::from_fn(m_count, n, |m, i| rows[m][i]),
                fused,
            });
        }
    }
    if wraps > 0 {
        warn!("{wraps} support indices wrapped around the direction grid");
    }

    let mut coefficients = Vec::with_capacity(m_count);
    let mut channels = Vec::with_capacity(m_count);
    for (support, y) in supports.iter().zip(ys) {
        let (x, _) = fit_support(ensemble, support, y)?;
        channels.push(reconstruct(ensemble, support, &x));
        coefficients.push(x);
    }
    let (physical_doas, doas_padded) = doas_from_indices(&doa_indices, ensemble);
    Ok(SparseChannelEstimate {
        support_sets: supports,
        coefficients,
        channels,
        physical_doas,
        spatial_doas: spatial,
        doa_indices,
        doas_padded,
        shift_wraps: wraps,
        residual_norms,
        spectra,
    })
}

/// Picks among `phi`, `phi - 2`, `phi + 2` (all equal modulo the grid period)
/// the value closest to `target` that a path at this subcarrier can produce.
fn unwrap(phi: f64, target: f64, ratio: f64) -> f64 {
    let mut best = phi;
    for cand in [phi - 2.0, phi + 2.0] {
        if cand.abs() <= ratio && (cand - target).abs() < (best - target).abs() {
            best = cand;
        }
    }
    best
}
