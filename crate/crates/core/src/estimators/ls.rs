use crate::linalg::numerical_rank;
use crate::sensing::{PilotObservation, Regime};
use crate::{CMatrix, CVector, Error, Result};

/// Least-squares channel estimate `(F^H F)^-1 F^H y` for every user and subcarrier.
///
/// Output is indexed `k * M + m`, matching [`PilotObservation::all`].
pub fn ls_estimate(obs: &PilotObservation, pilot_beamformer: &CMatrix) -> Result<Vec<CVector>> {
    if obs.regime() != Regime::Overdetermined {
        return Err(Error::domain("LS needs an overdetermined pilot observation"));
    }
    let pinv = left_pseudo_inverse(pilot_beamformer)?;
    if pinv.ncols() != obs.num_pilots() {
        return Err(Error::DimensionMismatch {
            context: "LS pilot count",
            expected: pinv.ncols(),
            found: obs.num_pilots(),
        });
    }
    Ok(obs.all().iter().map(|y| &pinv * y).collect())
}

/// `(F^H F)^-1 F^H` via a thin QR; errors unless `f` has full column rank.
pub(crate) fn left_pseudo_inverse(f: &CMatrix) -> Result<CMatrix> {
    let (j, n) = f.shape();
    if j < n {
        return Err(Error::Singular(format!(
            "{j} pilots cannot resolve {n} antennas"
        )));
    }
    let rank = numerical_rank(f);
    if rank < n {
        return Err(Error::Singular(format!("pilot matrix rank {rank} below {n}")));
    }
    let qr = f.clone().qr();
    qr.r()
        .solve_upper_triangular(&qr.q().adjoint())
        .ok_or_else(|| Error::Singular("triangular factor is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channel;
    use crate::sensing::{dft_pilots, observe_full_pilots, random_pilots};
    use crate::system::{make_rng, SystemConfig};
    use crate::C64;

    #[test]
    fn identity_pilots_return_observation() {
        let cfg = SystemConfig { num_users: 1, num_subcarriers: 2, ..SystemConfig::desk() };
        let ch = generate_channel(&cfg, &mut make_rng(0), None).unwrap();
        let eye = CMatrix::identity(64, 64);
        let obs = observe_full_pilots(&ch, &eye, &mut make_rng(1), 0.3).unwrap();
        let est = ls_estimate(&obs, &eye).unwrap();
        for (h, y) in est.iter().zip(obs.all()) {
            assert!((h - y).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_dft_pilots_are_exact() {
        let cfg = SystemConfig::desk();
        let ch = generate_channel(&cfg, &mut make_rng(3), None).unwrap();
        let f = dft_pilots(64);
        let obs = observe_full_pilots(&ch, &f, &mut make_rng(0), 0.0).unwrap();
        let est = ls_estimate(&obs, &f).unwrap();
        for (k, m) in [(0, 0), (3, 15)] {
            let h = ch.channel(k, m);
            let err = (&est[k * 16 + m] - h).norm_squared() / h.norm_squared();
            assert!(err < 1e-20, "{err}");
        }
    }

    #[test]
    fn matches_normal_equations_and_residual_is_orthogonal() {
        let mut rng = make_rng(9);
        let f = random_pilots(8, 4, &mut rng);
        let cfg = SystemConfig {
            num_tx_antennas: 4,
            num_rf_chains: 2,
            grid_size: 8,
            num_users: 1,
            num_subcarriers: 1,
            num_paths: 2,
            ..SystemConfig::desk()
        };
        let ch = generate_channel(&cfg, &mut rng, None).unwrap();
        let obs = observe_full_pilots(&ch, &f, &mut rng, 0.1).unwrap();
        let est = &ls_estimate(&obs, &f).unwrap()[0];
        let y = obs.get(0, 0);
        let oracle = (f.adjoint() * &f).lu().solve(&f.ad_mul(y)).unwrap();
        assert!((est - oracle).norm() < 1e-10);
        let residual = &f * est - y;
        assert!(f.ad_mul(&residual).norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_pilots_are_rejected() {
        let f = CMatrix::from_fn(6, 4, |i, _| C64::new(i as f64, 0.0));
        assert!(matches!(left_pseudo_inverse(&f), Err(Error::Singular(_))));
        let wide = CMatrix::identity(3, 4);
        assert!(matches!(left_pseudo_inverse(&wide), Err(Error::Singular(_))));
    }
}
