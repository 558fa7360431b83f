use ndarray::{Array1, Array2};

use super::{
    cholesky, descending_order, ensure_square, frobenius, solve_lower, solve_lower_transpose,
    LinalgError,
};

const SYMMETRY_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 64;

/// Eigenvalues in descending order with matching eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Solution of the pencil `G·V = R·V·diag(values)` normalised so `Vᵀ·R·V = I`.
pub type GeneralizedEigenResult = EigenDecomposition;

fn check_symmetric(m: &Array2<f64>) -> Result<(), LinalgError> {
    let asym = frobenius(&(m - &m.t()));
    let tolerance = SYMMETRY_TOLERANCE * frobenius(m);
    if asym > tolerance {
        return Err(LinalgError::NotSymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    Ok(())
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &Array2<f64>) -> Result<EigenDecomposition, LinalgError> {
    let n = ensure_square(m)?;
    check_symmetric(m)?;
    let mut a = (m + &m.t()) * 0.5;
    let mut v = Array2::<f64>::eye(n);
    let scale = frobenius(&a);

    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
                .map(|(p, q)| a[[p, q]] * a[[p, q]])
                .sum::<f64>()
                .sqrt();
            if off <= f64::EPSILON * scale * 1e-2 {
                break;
            }
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[[p, q]];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[[p, p]];
                    let aqq = a[[q, q]];
                    // skip rotations that no longer change the diagonal
                    if apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                        a[[p, q]] = 0.0;
                        a[[q, p]] = 0.0;
                        continue;
                    }
                    rotated = true;
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                    a[[p, q]] = 0.0;
                    a[[q, p]] = 0.0;
                    for k in 0..n {
                        let vkp = v[[k, p]];
                        let vkq = v[[k, q]];
                        v[[k, p]] = c * vkp - s * vkq;
                        v[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    let order = descending_order(&diag);
    let values = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Symmetric-definite generalized eigenproblem `G·v = λ·R·v`.
///
/// Reduces to a standard problem through `R = L·Lᵀ`:
/// `L⁻¹·G·L⁻ᵀ = Q·Λ·Qᵀ` gives `V = L⁻ᵀ·Q`, which satisfies both
/// `G·V = R·V·Λ` and `Vᵀ·R·V = QᵀQ = I`.
pub fn generalized_sym_eig(
    g: &Array2<f64>,
    r: &Array2<f64>,
) -> Result<GeneralizedEigenResult, LinalgError> {
    let n = ensure_square(g)?;
    if r.dim() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!(
            "pencil shapes differ: {:?} vs {:?}",
            g.dim(),
            r.dim()
        )));
    }
    check_symmetric(g)?;
    check_symmetric(r)?;
    let l = cholesky(r)?;
    // L⁻¹·G, then L⁻¹·(L⁻¹·G)ᵀ = L⁻¹·G·L⁻ᵀ since G is symmetric
    let left = solve_lower(&l, g);
    let reduced = solve_lower(&l, &left.t().to_owned());
    let reduced = (&reduced + &reduced.t()) * 0.5;
    let eig = sym_eig(&reduced)?;
    let vectors = solve_lower_transpose(&l, &eig.vectors);
    Ok(EigenDecomposition {
        values: eig.values,
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eig(&Array2::eye(3)).unwrap();
        assert_eq!(e.values.to_vec(), vec![1.0, 1.0, 1.0]);
        let qtq = e.vectors.t().dot(&e.vectors);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let e = sym_eig(&array![[1.0, 0.0], [0.0, 3.0]]).unwrap();
        assert_eq!(e.values.to_vec(), vec![3.0, 1.0]);
        assert_eq!(e.vectors[[1, 0]].abs(), 1.0);
        assert_eq!(e.vectors[[0, 1]].abs(), 1.0);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let err = sym_eig(&array![[1.0, 2.0], [0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, LinalgError::NotSymmetric { .. }));
    }

    #[test]
    fn diagonal_pencil() {
        let g = array![[6.0, 0.0], [0.0, 2.0]];
        let r = array![[3.0, 0.0], [0.0, 1.0]];
        let e = generalized_sym_eig(&g, &r).unwrap();
        assert!((e.values[0] - 2.0).abs() < 1e-14);
        assert!((e.values[1] - 2.0).abs() < 1e-14);
        // tie keeps input order: first column belongs to coordinate 0
        assert!((e.vectors[[0, 0]].abs() - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!((e.vectors[[1, 1]].abs() - 1.0).abs() < 1e-14);
        assert_eq!(e.vectors[[1, 0]], 0.0);
        assert_eq!(e.vectors[[0, 1]], 0.0);
    }

    #[test]
    fn identity_metric_reduces_to_standard_problem() {
        let g = array![[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let a = sym_eig(&g).unwrap();
        let b = generalized_sym_eig(&g, &Array2::eye(3)).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_metric_names_pivot() {
        let g = Array2::eye(2);
        let r = array![[1.0, 0.0], [0.0, -1.0]];
        match generalized_sym_eig(&g, &r) {
            Err(LinalgError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
