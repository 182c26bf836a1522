//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, SymmetricEigen};

/// Relative cutoff below which singular values count as zero.
pub const PINV_RTOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore-Penrose pseudoinverse of a symmetric matrix via its eigenbasis.
/// Returns `None` if the decomposition produces non-finite values.
pub fn pinv_sym(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    if n == 1 {
        let x = m[(0, 0)];
        if !x.is_finite() {
            return None;
        }
        return Some(DMatrix::from_element(1, 1, if x == 0.0 { 0.0 } else { 1.0 / x }));
    }
    let s = symmetrize(m);
    let eig = SymmetricEigen::new(s);
    let smax = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !smax.is_finite() {
        return None;
    }
    let cut = PINV_RTOL * smax;
    let inv = eig.eigenvalues.map(|x| if x.abs() > cut { 1.0 / x } else { 0.0 });
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&inv) * v.transpose();
    Some(symmetrize(&out))
}

/// General Moore-Penrose pseudoinverse via SVD.
pub fn pinv(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &x| a.max(x));
    if !smax.is_finite() {
        return None;
    }
    svd.pseudo_inverse(PINV_RTOL * smax).ok()
}

pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().fold(f64::INFINITY, |a, &x| a.min(x))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

/// Symmetric residual `max |m - m^T|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

/// Pairwise summation with a fixed split order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let h = n / 2;
            pairwise_sum(&xs[..h]) + pairwise_sum(&xs[h..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_sym_inverts_regular_and_drops_null_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = pinv_sym(&a).unwrap();
        assert!((&a * &p - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ps = pinv_sym(&s).unwrap();
        assert!((ps.clone() - DMatrix::from_element(2, 2, 0.25)).abs().max() < 1e-14);
        assert!((&s * &ps * &s - &s).abs().max() < 1e-14);
        assert_eq!(pinv_sym(&DMatrix::zeros(2, 2)).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn pinv_matches_penrose_conditions() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = pinv(&a).unwrap();
        assert!((&a * &p * &a - &a).abs().max() < 1e-12);
        assert!((&p * &a * &p - &p).abs().max() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }
}
