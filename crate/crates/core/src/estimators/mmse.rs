use crate::channel::{generate_channel, DoaSector};
use crate::linalg::least_squares;
use crate::sensing::{PilotObservation, Regime};
use crate::system::{SimRng, SystemConfig};
use crate::{CMatrix, CVector, Error, Result, C64};

const PSD_TOL: f64 = 1e-10;

/// Errors unless `r` is square, Hermitian and positive semidefinite (up to rounding).
pub fn validate_covariance(r: &CMatrix) -> Result<()> {
    if !r.is_square() {
        return Err(Error::domain("covariance must be square"));
    }
    let scale = r.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let asym = (r - r.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if asym > PSD_TOL * scale {
        return Err(Error::domain(format!("covariance is not Hermitian (defect {asym:e})")));
    }
    let eig = r.clone().symmetric_eigenvalues();
    let min = eig.min();
    if min < -PSD_TOL * scale {
        return Err(Error::domain(format!("covariance has negative eigenvalue {min:e}")));
    }
    Ok(())
}

/// Linear MMSE estimate `R F^H (F R F^H + s2 I)^-1 y` for every user and subcarrier.
///
/// `covariances` holds either one matrix per subcarrier (shared by all users)
/// or one per `(k, m)` pair in `k * M + m` order. Output uses `k * M + m` order.
pub fn mmse_estimate(
    obs: &PilotObservation,
    pilot_beamformer: &CMatrix,
    covariances: &[CMatrix],
    noise_variance: f64,
) -> Result<Vec<CVector>> {
    if obs.regime() != Regime::Overdetermined {
        return Err(Error::domain("MMSE needs an overdetermined pilot observation"));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::domain(format!("invalid noise variance {noise_variance}")));
    }
    let (k_count, m_count) = (obs.num_users(), obs.num_subcarriers());
    let per_user = if covariances.len() == m_count {
        false
    } else if covariances.len() == k_count * m_count {
        true
    } else {
        return Err(Error::DimensionMismatch {
            context: "covariance count",
            expected: m_count,
            found: covariances.len(),
        });
    };
    let n_t = pilot_beamformer.ncols();
    for r in covariances {
        if r.nrows() != n_t {
            return Err(Error::DimensionMismatch {
                context: "covariance size",
                expected: n_t,
                found: r.nrows(),
            });
        }
        validate_covariance(r)?;
    }
    let filters = covariances
        .iter()
        .map(|r| wiener_filter(pilot_beamformer, r, noise_variance))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(k_count * m_count);
    for k in 0..k_count {
        for m in 0..m_count {
            let w = &filters[if per_user { k * m_count + m } else { m }];
            out.push(w * obs.get(k, m));
        }
    }
    Ok(out)
}

/// `R F^H (F R F^H + s2 I)^-1`.
fn wiener_filter(f: &CMatrix, r: &CMatrix, noise_variance: f64) -> Result<CMatrix> {
    let rfh = r * f.adjoint();
    let mut gram = f * &rfh;
    for i in 0..gram.nrows() {
        gram[(i, i)] += C64::new(noise_variance, 0.0);
    }
    // W^H = G^-1 (R F^H)^H since G and R are Hermitian.
    let rhs = rfh.adjoint();
    let wh = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let mut cols = Vec::with_capacity(rhs.ncols());
            for c in rhs.column_iter() {
                cols.push(least_squares(&gram, &c.into_owned())?);
            }
            CMatrix::from_columns(&cols)
        }
    };
    Ok(wh.adjoint())
}

/// Sample covariance `(1/D) sum h h^H` per subcarrier from `draws` independent single-user channels.
pub fn empirical_covariance(
    cfg: &SystemConfig,
    rng: &mut SimRng,
    draws: usize,
    sector: Option<DoaSector>,
) -> Result<Vec<CMatrix>> {
    if draws == 0 {
        return Err(Error::domain("covariance needs at least one draw"));
    }
    let single = SystemConfig { num_users: 1, ..cfg.clone() };
    let n_t = cfg.num_tx_antennas;
    let mut acc = vec![CMatrix::zeros(n_t, n_t); cfg.num_subcarriers];
    let one = C64::new(1.0, 0.0);
    for _ in 0..draws {
        let ch = generate_channel(&single, rng, sector)?;
        for (r, h) in acc.iter_mut().zip(ch.user_channels(0)) {
            r.gerc(one, h, h, one);
        }
    }
    let scale = C64::new(1.0 / draws as f64, 0.0);
    for r in acc.iter_mut() {
        *r *= scale;
    }
    Ok(acc)
}
