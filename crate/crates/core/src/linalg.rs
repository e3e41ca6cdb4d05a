//! Dense linear-algebra helpers shared by the environment oracle, the PCA
//! baseline and the subspace analyses. Decompositions come from `nalgebra`.

use nalgebra::DMatrix;
use ndarray::Array2;

pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Orthonormal basis (as rows) of the span of the rows of `rows`, keeping
/// singular directions whose singular value exceeds `cutoff`.
pub fn row_space_basis(rows: &Array2<f64>, cutoff: f64) -> Array2<f64> {
    let d = rows.ncols();
    if rows.nrows() == 0 {
        return Array2::zeros((0, d));
    }
    let m = to_dmatrix(rows);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] > cutoff).collect();
    let mut out = Array2::zeros((keep.len(), d));
    for (r, &i) in keep.iter().enumerate() {
        for j in 0..d {
            out[[r, j]] = vt[(i, j)];
        }
    }
    canonical_signs(&mut out);
    out
}

/// Flips each row so its largest-magnitude entry is positive.
pub fn canonical_signs(rows: &mut Array2<f64>) {
    for mut row in rows.rows_mut() {
        let pivot = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

pub fn rank(rows: &Array2<f64>, cutoff: f64) -> usize {
    row_space_basis(rows, cutoff).nrows()
}

/// Gram–Schmidt over rows (modified, two passes). Returns an error message if
/// a row is (numerically) dependent on earlier ones.
pub fn gram_schmidt_rows(rows: &Array2<f64>) -> Result<Array2<f64>, String> {
    let mut out = rows.clone();
    for i in 0..out.nrows() {
        for _ in 0..2 {
            for j in 0..i {
                let proj = out.row(i).dot(&out.row(j));
                let rj = out.row(j).to_owned();
                out.row_mut(i).scaled_add(-proj, &rj);
            }
        }
        let n = out.row(i).dot(&out.row(i)).sqrt();
        if n < 1e-10 {
            return Err(format!("row {i} is linearly dependent"));
        }
        out.row_mut(i).mapv_inplace(|v| v / n);
    }
    Ok(out)
}

/// Norm of the component of `v` orthogonal to the row space spanned by the
/// orthonormal rows of `basis`.
pub fn projection_residual(basis: &Array2<f64>, v: &[f64]) -> f64 {
    let mut r = ndarray::Array1::from(v.to_vec());
    for row in basis.rows() {
        let c = row.dot(&r);
        r.scaled_add(-c, &row);
    }
    r.dot(&r).sqrt()
}

/// `‖B Bᵀ − I‖_max` for a row basis.
pub fn orthonormality_error(basis: &Array2<f64>) -> f64 {
    let g = basis.dot(&basis.t());
    let mut worst = 0.0f64;
    for ((i, j), v) in g.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// Least-squares fit `y ≈ [x, 1] β`, returning fitted values.
pub fn affine_fit(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut design = DMatrix::zeros(n, x.ncols() + 1);
    for i in 0..n {
        for j in 0..x.ncols() {
            design[(i, j)] = x[[i, j]];
        }
        design[(i, x.ncols())] = 1.0;
    }
    let svd = design.clone().svd(true, true);
    let beta = svd.solve(&to_dmatrix(y), 1e-12).expect("svd computed with u and v");
    from_dmatrix(&(design * beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn basis_of_dependent_rows() {
        let rows = array![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]];
        let b = row_space_basis(&rows, 1e-8);
        assert_eq!(b.nrows(), 2);
        assert!(orthonormality_error(&b) < 1e-12);
        assert!(projection_residual(&b, &[5.0, -1.0, 0.0]) < 1e-12);
        assert!((projection_residual(&b, &[0.0, 0.0, 2.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn affine_fit_recovers_linear_map() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![[1.0, -1.0], [3.0, -2.0], [5.0, -3.0], [7.0, -4.0]];
        let f = affine_fit(&x, &y);
        assert!((&f - &y).mapv(f64::abs).sum() < 1e-10);
    }
}
