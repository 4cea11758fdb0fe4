use nalgebra::DMatrix;

use crate::sde::Matrix;

pub(crate) fn to_dyn<const D: usize>(m: &Matrix<D>) -> DMatrix<f64> {
    DMatrix::from_column_slice(D, D, m.as_slice())
}

pub(crate) fn from_dyn<const D: usize>(m: &DMatrix<f64>) -> Matrix<D> {
    Matrix::<D>::from_column_slice(m.as_slice())
}

/// Matrix exponential (scaling and squaring with a Pade approximant).
pub fn expm<const D: usize>(m: &Matrix<D>) -> Matrix<D> {
    from_dyn(&to_dyn(m).exp())
}

/// True when every eigenvalue of `b` has a strictly positive real part.
pub fn is_stable<const D: usize>(b: &Matrix<D>) -> bool {
    to_dyn(b).complex_eigenvalues().iter().all(|z| z.re > 0.0)
}

pub(crate) fn symmetrize<const D: usize>(m: &Matrix<D>) -> Matrix<D> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::matrix;

    #[test]
    fn exp_of_diagonal_and_nilpotent() {
        let d = expm(&matrix![1.0, 0.0; 0.0, -2.0]);
        assert_abs_diff_eq!(d, matrix![1f64.exp(), 0.0; 0.0, (-2f64).exp()], epsilon = 1e-14);
        let n = expm(&matrix![0.0, 3.0; 0.0, 0.0]);
        assert_abs_diff_eq!(n, matrix![1.0, 3.0; 0.0, 1.0], epsilon = 1e-14);
    }

    #[test]
    fn exp_inverse_residual() {
        let a = matrix![0.3, -1.2, 0.4; 2.0, -0.5, 0.1; -0.7, 0.2, 1.1];
        let r = expm(&a) * expm(&(-a)) - Matrix::<3>::identity();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn stability() {
        assert!(is_stable(&matrix![1.5, 1.0; 1.0, 1.5]));
        assert!(is_stable(&matrix![1.0, 1.0; 0.0, 1.0]));
        assert!(!is_stable(&matrix![1.0, 2.0; 2.0, 1.0]));
        // rotation-dominated but damped
        assert!(is_stable(&matrix![0.1, -3.0; 3.0, 0.1]));
    }
}
