use super::{doas_from_indices, fit_support, reconstruct, SparseChannelEstimate};
use crate::linalg::argmax_first;
use crate::sensing::SensingEnsemble;
use crate::{CVector, Error, Result};

/// Greedy OMP on a single subcarrier with `sparsity` iterations.
///
/// Atoms are compared by normalized correlation `|A_n^H r| / ||A_n||`. The
/// loop stops early when the best atom is already in the support (the
/// residual is then orthogonal to every selected atom).
pub fn omp_estimate(
    y: &CVector,
    ensemble: &SensingEnsemble,
    sparsity: usize,
) -> Result<SparseChannelEstimate> {
    check(y, ensemble, sparsity)?;
    let (support, x, residual_norms) = omp_support(y, ensemble, sparsity)?;
    let h = reconstruct(ensemble, &support, &x);
    let angles = ensemble.grid_angles();
    let spatial: Vec<f64> = support.iter().map(|&n| angles[n]).collect();
    let (doas, padded) = doas_from_indices(&support, ensemble);
    Ok(SparseChannelEstimate {
        doa_indices: support.clone(),
        support_sets: vec![support],
        coefficients: vec![x],
        channels: vec![h],
        physical_doas: doas,
        spatial_doas: vec![spatial],
        doas_padded: padded,
        shift_wraps: 0,
        residual_norms: vec![residual_norms],
        spectra: None,
    })
}

/// OMP applied independently on every subcarrier of one user.
///
/// Physical DoAs are read from the support at the subcarrier closest to the
/// carrier, where beam-split is smallest.
pub fn omp_estimate_user(
    ys: &[CVector],
    ensemble: &SensingEnsemble,
    sparsity: usize,
    subcarrier_freqs: &[f64],
    carrier_freq_hz: f64,
) -> Result<SparseChannelEstimate> {
    if ys.len() != subcarrier_freqs.len() {
        return Err(Error::DimensionMismatch {
            context: "OMP subcarrier count",
            expected: subcarrier_freqs.len(),
            found: ys.len(),
        });
    }
    let mut out = SparseChannelEstimate {
        support_sets: Vec::with_capacity(ys.len()),
        coefficients: Vec::with_capacity(ys.len()),
        channels: Vec::with_capacity(ys.len()),
        physical_doas: Vec::new(),
        spatial_doas: Vec::with_capacity(ys.len()),
        doa_indices: Vec::new(),
        doas_padded: false,
        shift_wraps: 0,
        residual_norms: Vec::with_capacity(ys.len()),
        spectra: None,
    };
    for y in ys {
        let mut one = omp_estimate(y, ensemble, sparsity)?;
        out.support_sets.push(one.support_sets.pop().unwrap_or_default());
        out.coefficients.extend(one.coefficients);
        out.channels.extend(one.channels);
        out.spatial_doas.extend(one.spatial_doas);
        out.residual_norms.extend(one.residual_norms);
    }
    let reference = closest_to_carrier(subcarrier_freqs, carrier_freq_hz);
    if let Some(m) = reference {
        out.doa_indices = out.support_sets[m].clone();
        let (doas, padded) = doas_from_indices(&out.doa_indices, ensemble);
        out.physical_doas = doas;
        out.doas_padded = padded;
    }
    Ok(out)
}

pub(crate) fn closest_to_carrier(freqs: &[f64], carrier: f64) -> Option<usize> {
    let dist: Vec<f64> = freqs.iter().map(|f| -(f - carrier).abs()).collect();
    (!dist.is_empty()).then(|| argmax_first(&dist))
}

fn check(y: &CVector, ensemble: &SensingEnsemble, sparsity: usize) -> Result<()> {
    if y.len() != ensemble.num_measurements() {
        return Err(Error::DimensionMismatch {
            context: "OMP observation length",
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
    Ok(())
}

fn omp_support(
    y: &CVector,
    ensemble: &SensingEnsemble,
    sparsity: usize,
) -> Result<(Vec<usize>, CVector, Vec<f64>)> {
    let mut support = Vec::with_capacity(sparsity);
    let mut residual = y.clone();
    let mut norms = vec![y.norm()];
    let mut x = CVector::zeros(ensemble.grid_size());
    for _ in 0..sparsity {
        let n = argmax_first(&ensemble.correlate(&residual, true));
        if support.contains(&n) {
            break;
        }
        support.push(n);
        let (coef, r) = fit_support(ensemble, &support, y)?;
        x = coef;
        residual = r;
        norms.push(residual.norm());
    }
    Ok((support, x, norms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_rng, SystemConfig};
    use crate::{CMatrix, C64};

    fn ensemble(seed: u64) -> SensingEnsemble {
        let cfg = SystemConfig { num_rf_chains: 16, ..SystemConfig::desk() };
        SensingEnsemble::new(&cfg, &mut make_rng(seed)).unwrap()
    }

    #[test]
    fn single_scaled_atom_is_recovered_exactly() {
        let ens = ensemble(0);
        let c = C64::new(0.7, -1.3);
        let y = ens.measurement().column(123) * c;
        let est = omp_estimate(&y.into_owned(), &ens, 1).unwrap();
        assert_eq!(est.support_sets[0], vec![123]);
        assert!((est.coefficients[0][123] - c).norm() < 1e-10);
        let h = ens.dictionary().column(123) * c;
        assert!((&est.channels[0] - h).norm() < 1e-10);
    }

    #[test]
    fn two_separated_atoms_match_brute_force() {
        let ens = ensemble(1);
        let a = ens.measurement();
        let y: CVector = a.column(40) * C64::new(1.0, 0.5) + a.column(250) * C64::new(-0.6, 0.2);
        let est = omp_estimate(&y, &ens, 2).unwrap();
        let mut found = est.support_sets[0].clone();
        found.sort();
        assert_eq!(found, vec![40, 250]);
        let fit = ens.measurement() * &est.coefficients[0];
        assert!((fit - &y).norm() < 1e-10);

        // Brute force over all pairs: the recovered pair is LS-optimal.
        let n = ens.grid_size();
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in i + 1..n {
                let sub = CMatrix::from_columns(&[a.column(i).into_owned(), a.column(j).into_owned()]);
                let c = crate::linalg::least_squares(&sub, &y).unwrap();
                let r = (&sub * c - &y).norm();
                if r < best.0 - 1e-12 {
                    best = (r, i, j);
                }
            }
        }
        assert_eq!((best.1, best.2), (40, 250));
    }

    #[test]
    fn zero_observation_picks_lowest_index() {
        let ens = ensemble(2);
        let est = omp_estimate(&CVector::zeros(16), &ens, 3).unwrap();
        assert_eq!(est.support_sets[0], vec![0]);
        assert!(est.coefficients[0].iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn invalid_sparsity_is_rejected() {
        let ens = ensemble(3);
        assert!(omp_estimate(&CVector::zeros(16), &ens, 0).is_err());
        assert!(omp_estimate(&CVector::zeros(16), &ens, 17).is_err());
        assert!(omp_estimate(&CVector::zeros(15), &ens, 1).is_err());
    }
}
