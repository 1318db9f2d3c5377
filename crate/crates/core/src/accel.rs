//! Aitken delta-squared acceleration for linearly convergent sequences.

use nalgebra::{DMatrix, DVector};

use crate::error::{FoliateError, Result};

/// Relative residual above which the vector solve is rejected.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// `x_k - (dx_k)^2 / d2x_k`.
pub fn aitken_scalar(seq: &[f64], k: usize) -> Result<f64> {
    if k + 2 >= seq.len() {
        return Err(FoliateError::DegenerateSequence(format!(
            "need entries {k}..={} but the sequence has {}",
            k + 2,
            seq.len()
        )));
    }
    let d0 = seq[k + 1] - seq[k];
    let d1 = seq[k + 2] - seq[k + 1];
    let d2 = d1 - d0;
    if d2 == 0.0 || !d2.is_finite() {
        return Err(FoliateError::DegenerateSequence(format!(
            "second difference at k = {k} is {d2}"
        )));
    }
    Ok(seq[k] - d0 * d0 / d2)
}

/// Largest number of accelerated terms obtainable from `len` iterates in dimension `n`.
pub fn max_terms(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n + 2)
}

/// `z_k - dZ_k (d2Z_k)^{-1} (z_{k+1} - z_k)` with
/// `dZ_k = [z_{k+1} - z_k, ..., z_{k+n} - z_{k+n-1}]`.
pub fn aitken_vector(seq: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = match seq.first() {
        Some(v) if !v.is_empty() => v.len(),
        _ => return Err(FoliateError::DegenerateSequence("empty sequence".into())),
    };
    if seq.iter().any(|v| v.len() != n) {
        return Err(FoliateError::Dimension(
            "sequence entries have different lengths".into(),
        ));
    }
    if k + n + 1 >= seq.len() {
        return Err(FoliateError::DegenerateSequence(format!(
            "vector Aitken in dimension {n} needs entries {k}..={} but the sequence has {}",
            k + n + 1,
            seq.len()
        )));
    }
    let diff = |i: usize| -> DVector<f64> {
        DVector::from_iterator(n, seq[i + 1].iter().zip(&seq[i]).map(|(a, b)| a - b))
    };
    let d: Vec<DVector<f64>> = (k..=k + n).map(diff).collect();
    let dz = DMatrix::from_fn(n, n, |r, c| d[c][r]);
    let d2z = DMatrix::from_fn(n, n, |r, c| d[c + 1][r] - d[c][r]);
    let rhs = d[0].clone();
    let lu = d2z.clone().lu();
    let sol = lu.solve(&rhs).ok_or_else(|| {
        FoliateError::DegenerateSequence(format!("second-difference matrix at k = {k} is singular"))
    })?;
    let resid = (&d2z * &sol - &rhs).norm();
    if !(resid <= SOLVE_RESIDUAL_TOL * rhs.norm()) || !sol.iter().all(|v| v.is_finite()) {
        return Err(FoliateError::DegenerateSequence(format!(
            "second-difference solve at k = {k} has relative residual {:e}",
            resid / rhs.norm()
        )));
    }
    let corr = dz * sol;
    Ok(seq[k].iter().zip(corr.iter()).map(|(a, c)| a - c).collect())
}

/// All available vector-Aitken terms `A z_0, A z_1, ...`, stopping at the first degenerate one.
pub fn aitken_vector_sequence(seq: &[Vec<f64>]) -> Vec<Result<Vec<f64>>> {
    let n = seq.first().map_or(1, |v| v.len());
    (0..max_terms(seq.len(), n))
        .map(|k| aitken_vector(seq, k))
        .collect()
}
