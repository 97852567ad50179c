//! Channel estimators: LS and LMMSE for full pilots, per-subcarrier OMP and
//! beamspace support alignment (BSA) for compressed pilots.

mod bsa;
mod ls;
mod mmse;
mod omp;

pub use bsa::{bsa_estimate, bsa_estimate_user, BsaOptions, ShiftRounding};
pub use ls::ls_estimate;
pub use mmse::{empirical_covariance, mmse_estimate, validate_covariance};
pub use omp::{omp_estimate, omp_estimate_user};

use nalgebra::DMatrix;

use crate::linalg::least_squares;
use crate::sensing::SensingEnsemble;
use crate::{CMatrix, CVector, Result, C64};

/// Beamspace spectra of one BSA iteration for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamspaceSpectrum {
    /// `M x N`, per-subcarrier correlation magnitudes.
    pub values: DMatrix<f64>,
    /// `M x N`, each row circularly shifted onto the physical-direction grid.
    pub shifted: DMatrix<f64>,
    /// Length `N`, column sums of `shifted`.
    pub fused: Vec<f64>,
}

/// Sparse beamspace estimate of one user across its subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannelEstimate {
    /// Selected grid indices per subcarrier, in selection order.
    pub support_sets: Vec<Vec<usize>>,
    /// Length-`N` coefficient vectors, nonzero only on the support.
    pub coefficients: Vec<CVector>,
    /// Reconstructed channels `F x`.
    pub channels: Vec<CVector>,
    /// Physical DoA estimates, sorted ascending.
    pub physical_doas: Vec<f64>,
    /// Spatial DoA estimates per subcarrier, one per iteration.
    pub spatial_doas: Vec<Vec<f64>>,
    /// Grid index found at each iteration on the physical-direction grid.
    pub doa_indices: Vec<usize>,
    /// Set when fewer distinct directions than paths were found and the list was padded.
    pub doas_padded: bool,
    /// Number of support indices that wrapped around the circular grid.
    pub shift_wraps: usize,
    /// Residual norm per subcarrier: the observation norm, then one entry per iteration.
    pub residual_norms: Vec<Vec<f64>>,
    /// Per-iteration spectra, kept only on request.
    pub spectra: Option<Vec<BeamspaceSpectrum>>,
}

impl SparseChannelEstimate {
    pub fn num_subcarriers(&self) -> usize {
        self.channels.len()
    }
}

/// Least-squares fit of `y` on the atoms in `support`, scattered into a length-`N` vector.
pub(crate) fn fit_support(
    ensemble: &SensingEnsemble,
    support: &[usize],
    y: &CVector,
) -> Result<(CVector, CVector)> {
    let a = ensemble.measurement();
    let sub = CMatrix::from_fn(a.nrows(), support.len(), |i, j| a[(i, support[j])]);
    let coef = least_squares(&sub, y)?;
    let residual = y - &sub * &coef;
    let mut x = CVector::zeros(ensemble.grid_size());
    for (j, &n) in support.iter().enumerate() {
        x[n] += coef[j];
    }
    Ok((x, residual))
}

/// `F x` restricted to the support of `x`.
pub(crate) fn reconstruct(ensemble: &SensingEnsemble, support: &[usize], x: &CVector) -> CVector {
    let f = ensemble.dictionary();
    let mut h = CVector::zeros(f.nrows());
    for &n in support {
        h.axpy(x[n], &f.column(n), C64::new(1.0, 0.0));
    }
    h
}

/// Grid angles at the per-iteration peaks, sorted ascending.
///
/// Repeated peaks count once; the list is padded back to one entry per
/// iteration with the strongest (first) peak, and the flag is set.
pub fn extract_doas(estimate: &SparseChannelEstimate, ensemble: &SensingEnsemble) -> (Vec<f64>, bool) {
    doas_from_indices(&estimate.doa_indices, ensemble)
}

pub(crate) fn doas_from_indices(indices: &[usize], ensemble: &SensingEnsemble) -> (Vec<f64>, bool) {
    let mut distinct: Vec<usize> = Vec::with_capacity(indices.len());
    for &n in indices {
        if !distinct.contains(&n) {
            distinct.push(n);
        }
    }
    let padded = distinct.len() < indices.len();
    let strongest = indices.first().copied();
    if let Some(s) = strongest {
        while distinct.len() < indices.len() {
            distinct.push(s);
        }
    }
    let angles = ensemble.grid_angles();
    let mut doas: Vec<f64> = distinct.iter().map(|&n| angles[n]).collect();
    doas.sort_by(f64::total_cmp);
    (doas, padded)
}
