//! NMSE, DoA RMSE and training-overhead accounting.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::{CVector, Error, Result};

/// Smallest value reported by [`to_db`]; exact reconstructions map here instead of `-inf`.
pub const DB_FLOOR: f64 = -200.0;

/// Mean normalized squared error with the number of pairs skipped for a zero true channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmse {
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

impl Nmse {
    pub fn db(&self) -> f64 {
        to_db(self.value)
    }
}

/// `mean ||h - h_hat||^2 / ||h||^2` over all pairs, in linear scale.
///
/// Pairs whose true channel is exactly zero are skipped and counted.
pub fn nmse(true_channels: &[CVector], estimates: &[CVector]) -> Result<Nmse> {
    if true_channels.len() != estimates.len() {
        return Err(Error::DimensionMismatch {
            context: "NMSE channel count",
            expected: true_channels.len(),
            found: estimates.len(),
        });
    }
    let mut sum = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for (h, e) in true_channels.iter().zip(estimates) {
        if h.len() != e.len() {
            return Err(Error::DimensionMismatch {
                context: "NMSE channel length",
                expected: h.len(),
                found: e.len(),
            });
        }
        let power = h.norm_squared();
        if power == 0.0 {
            excluded += 1;
            continue;
        }
        sum += (h - e).norm_squared() / power;
        used += 1;
    }
    if excluded > 0 {
        warn!("{excluded} zero-norm channels excluded from NMSE");
    }
    if used == 0 {
        return Err(Error::domain("no channel with nonzero norm to normalize by"));
    }
    Ok(Nmse { value: sum / used as f64, used, excluded })
}

/// Per-pair normalized errors `||h - h_hat||^2 / ||h||^2` (zero-norm pairs skipped).
pub fn nmse_terms(true_channels: &[CVector], estimates: &[CVector]) -> Vec<f64> {
    true_channels
        .iter()
        .zip(estimates)
        .filter(|(h, _)| h.norm_squared() > 0.0)
        .map(|(h, e)| (h - e).norm_squared() / h.norm_squared())
        .collect()
}

/// `10 log10(x)`, clamped below at [`DB_FLOOR`].
pub fn to_db(x: f64) -> f64 {
    if x <= 0.0 {
        DB_FLOOR
    } else {
        (10.0 * x.log10()).max(DB_FLOOR)
    }
}

/// Squared DoA errors after pairing both lists in sorted order.
pub fn doa_squared_errors(true_doas: &[f64], est_doas: &[f64]) -> Result<Vec<f64>> {
    if true_doas.len() != est_doas.len() {
        return Err(Error::domain(format!(
            "{} true directions but {} estimates",
            true_doas.len(),
            est_doas.len()
        )));
    }
    let mut t = true_doas.to_vec();
    let mut e = est_doas.to_vec();
    t.sort_by(f64::total_cmp);
    e.sort_by(f64::total_cmp);
    Ok(t.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).collect())
}

/// Root-mean-square DoA error in sine space after sorted pairing.
pub fn doa_rmse(true_doas: &[f64], est_doas: &[f64]) -> Result<f64> {
    let sq = doa_squared_errors(true_doas, est_doas)?;
    if sq.is_empty() {
        return Ok(0.0);
    }
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Symbols exchanged by federated and centralized training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// `2 Q T K`.
    pub t_fl: u64,
    /// `sum_k D_k N_RF`.
    pub t_cl: u64,
    /// `t_cl / t_fl`.
    pub eta: f64,
}

/// Exact overhead counts for `q` parameters, `t` rounds and `k` users.
pub fn overhead(q: u64, t: u64, k: u64, sample_counts: &[u64], n_rf: u64) -> Result<OverheadReport> {
    if q == 0 || t == 0 || k == 0 || n_rf == 0 {
        return Err(Error::domain("overhead arguments must be positive"));
    }
    if sample_counts.len() as u64 != k {
        return Err(Error::DimensionMismatch {
            context: "per-user sample counts",
            expected: k as usize,
            found: sample_counts.len(),
        });
    }
    let overflow = || Error::domain("overhead count overflows u64");
    let t_fl = 2u64
        .checked_mul(q)
        .and_then(|v| v.checked_mul(t))
        .and_then(|v| v.checked_mul(k))
        .ok_or_else(overflow)?;
    let total: u64 = sample_counts
        .iter()
        .try_fold(0u64, |acc, &d| acc.checked_add(d))
        .ok_or_else(overflow)?;
    let t_cl = total.checked_mul(n_rf).ok_or_else(overflow)?;
    Ok(OverheadReport { t_fl, t_cl, eta: t_cl as f64 / t_fl as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::make_rng;
    use crate::{CMatrix, C64};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(n: usize, seed: u64) -> CVector {
        let mut rng = make_rng(seed);
        CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn nmse_examples() {
        let h = vec![random_vec(8, 1), random_vec(8, 2)];
        assert_eq!(nmse(&h, &h).unwrap().value, 0.0);
        let zeros = vec![CVector::zeros(8); 2];
        assert!((nmse(&h, &zeros).unwrap().value - 1.0).abs() < 1e-15);
        let doubled: Vec<CVector> = h.iter().map(|v| v * C64::new(2.0, 0.0)).collect();
        assert!((nmse(&h, &doubled).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(to_db(0.0), DB_FLOOR);
        assert_eq!(to_db(0.1), -10.0);
    }

    #[test]
    fn zero_true_channels_are_excluded() {
        let h = vec![CVector::zeros(4), random_vec(4, 3)];
        let e = vec![random_vec(4, 4), CVector::zeros(4)];
        let r = nmse(&h, &e).unwrap();
        assert_eq!((r.used, r.excluded), (1, 1));
        assert!((r.value - 1.0).abs() < 1e-15);
        assert!(nmse(&h[..1], &e[..1]).is_err());
    }

    #[test]
    fn doa_rmse_examples() {
        assert_eq!(doa_rmse(&[0.1, -0.3], &[0.1, -0.3]).unwrap(), 0.0);
        assert!((doa_rmse(&[0.5], &[0.5 + 2.0 / 320.0]).unwrap() - 2.0 / 320.0).abs() < 1e-15);
        assert_eq!(doa_rmse(&[0.2, -0.7, 0.4], &[0.4, 0.2, -0.7]).unwrap(), 0.0);
        assert!(matches!(doa_rmse(&[0.1], &[0.1, 0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn reference_overhead_numbers() {
        let r = overhead(1_196_928, 100, 8, &[192_000_000; 8], 32).unwrap();
        assert_eq!(r.t_fl, 1_915_084_800);
        assert_eq!(r.t_cl, 49_152_000_000);
        assert_eq!(r.eta, 49_152_000_000f64 / 1_915_084_800f64);
        assert!((r.eta - 25.6657).abs() < 1e-4);
        assert!(overhead(0, 1, 1, &[1], 1).is_err());
        assert!(overhead(1, 1, 2, &[1], 1).is_err());
        assert!(overhead(u64::MAX, 2, 1, &[1], 1).is_err());
    }

    proptest! {
        #[test]
        fn nmse_is_unitary_invariant(seed in 0u64..100_000) {
            let n = 6;
            let h = vec![random_vec(n, seed), random_vec(n, seed + 1)];
            let e = vec![random_vec(n, seed + 2), random_vec(n, seed + 3)];
            let base = nmse(&h, &e).unwrap().value;
            let mut rng = make_rng(seed);
            let m = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let u = m.qr().q();
            let rot = |v: &Vec<CVector>| v.iter().map(|x| &u * x).collect::<Vec<_>>();
            let rotated = nmse(&rot(&h), &rot(&e)).unwrap().value;
            prop_assert!((base - rotated).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn overhead_is_linear_in_each_argument(q in 1u64..10_000, t in 1u64..1000, k in 1u64..16, d in 1u64..1_000_000, n_rf in 1u64..64, c in 1u64..8) {
            let counts = vec![d; k as usize];
            let base = overhead(q, t, k, &counts, n_rf).unwrap();
            prop_assert_eq!(overhead(c * q, t, k, &counts, n_rf).unwrap().t_fl, c * base.t_fl);
            prop_assert_eq!(overhead(q, c * t, k, &counts, n_rf).unwrap().t_fl, c * base.t_fl);
            prop_assert_eq!(overhead(q, t, k, &counts, c * n_rf).unwrap().t_cl, c * base.t_cl);
            let scaled: Vec<u64> = counts.iter().map(|x| c * x).collect();
            prop_assert_eq!(overhead(q, t, k, &scaled, n_rf).unwrap().t_cl, c * base.t_cl);
            prop_assert_eq!(base.eta, base.t_cl as f64 / base.t_fl as f64);
        }
    }
}
