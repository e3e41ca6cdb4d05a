use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::to_dmatrix;

/// Tolerance on `‖UᵀU − I‖` for accepting a basis.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

fn check_columns(name: &str, u: &Array2<f64>) -> Result<()> {
    let gram = u.t().dot(u);
    let err = gram
        .indexed_iter()
        .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if !(err <= ORTHONORMAL_TOL) {
        return Err(Error::Domain(format!("{name} does not have orthonormal columns (error {err:.3e})")));
    }
    Ok(())
}

/// Principal angles in radians, ascending, between the column spans of `u`
/// and `v` (both with orthonormal columns and the same row count).
pub fn principal_angles(u: &Array2<f64>, v: &Array2<f64>) -> Result<Vec<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::Domain(format!("bases live in ℝ^{} and ℝ^{}", u.nrows(), v.nrows())));
    }
    check_columns("U", u)?;
    check_columns("V", v)?;
    if u.ncols() == 0 || v.ncols() == 0 {
        return Ok(Vec::new());
    }
    let s = to_dmatrix(&u.t().dot(v)).singular_values();
    let mut angles: Vec<f64> = s.iter().map(|x| x.clamp(0.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Largest principal angle between the row spans of two row bases.
pub fn max_angle_between_rows(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let angles = principal_angles(&a.t().to_owned(), &b.t().to_owned())?;
    Ok(angles.last().copied().unwrap_or(0.0))
}
