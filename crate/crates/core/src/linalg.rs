//! Small dense linear-algebra helpers on top of nalgebra.

use crate::{CMatrix, CVector, Error, Result};

/// Relative tolerance for rank decisions, scaled by the largest singular value.
pub const RANK_TOL: f64 = 1e-10;

/// Minimum-norm least-squares solution of `a x = b`.
///
/// Uses QR when `a` is tall and well conditioned, and falls back to an SVD
/// pseudo-inverse (singular values below `RANK_TOL * s_max` dropped) otherwise.
pub fn least_squares(a: &CMatrix, b: &CVector) -> Result<CVector> {
    check_rhs(a, b)?;
    if a.ncols() == 0 {
        return Ok(CVector::zeros(0));
    }
    if a.nrows() >= a.ncols() {
        if let Some(x) = qr_solve(a, b) {
            return Ok(x);
        }
    }
    pinv_solve(a, b)
}

/// Least-squares solution that requires `a` to have full column rank.
pub fn least_squares_full_rank(a: &CMatrix, b: &CVector) -> Result<CVector> {
    check_rhs(a, b)?;
    if a.nrows() < a.ncols() {
        return Err(Error::Singular(format!(
            "{} x {} system cannot have full column rank",
            a.nrows(),
            a.ncols()
        )));
    }
    let rank = numerical_rank(a);
    if rank < a.ncols() {
        return Err(Error::Singular(format!(
            "rank {rank} below column count {}",
            a.ncols()
        )));
    }
    qr_solve(a, b).map_or_else(|| pinv_solve(a, b), Ok)
}

/// Number of singular values above `RANK_TOL * s_max`.
pub fn numerical_rank(a: &CMatrix) -> usize {
    if a.is_empty() {
        return 0;
    }
    let s = a.clone().singular_values();
    let s_max = s.max();
    if s_max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_TOL * s_max).count()
}

fn check_rhs(a: &CMatrix, b: &CVector) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "least-squares right-hand side",
            expected: a.nrows(),
            found: b.len(),
        });
    }
    Ok(())
}

fn qr_solve(a: &CMatrix, b: &CVector) -> Option<CVector> {
    let n = a.ncols();
    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..n).map(|i| r[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 || diag.iter().any(|&d| d <= RANK_TOL * max) {
        return None;
    }
    let qtb = qr.q().ad_mul(b);
    r.solve_upper_triangular(&qtb)
}

fn pinv_solve(a: &CMatrix, b: &CVector) -> Result<CVector> {
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if s_max == 0.0 {
        return Ok(CVector::zeros(a.ncols()));
    }
    svd.solve(b, RANK_TOL * s_max)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Index of the largest value; ties go to the lowest index. Returns 0 for empty input.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Hermitian conjugate inner product `u^H v`.
pub fn inner(u: &CVector, v: &CVector) -> crate::C64 {
    u.dotc(v)
}
