use ndarray::{Array1, Array2};

use super::{LinalgError, LowRankFactorPair, Lu};

/// Capacitance matrices whose 1-norm condition estimate exceeds this are
/// treated as singular.
pub const CAPACITANCE_CONDITION_LIMIT: f64 = 1e14;

/// Solves `(b0·I + A·Cᵀ)·x = rhs` with the matrix inversion lemma:
///
/// `(b0·I + A·Cᵀ)⁻¹ = b0⁻¹·I − b0⁻²·A·K⁻¹·Cᵀ`, `K = I + Cᵀ·A / b0`.
///
/// Costs O(N·m² + m³).
pub fn woodbury_solve(
    b0: f64,
    f: &LowRankFactorPair,
    rhs: &Array1<f64>,
) -> Result<Array1<f64>, LinalgError> {
    let (n, m) = f.a.dim();
    if rhs.len() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has length {}, matrix is {n}x{n}",
            rhs.len()
        )));
    }
    if !(b0 > 0.0) {
        return Err(LinalgError::DimensionMismatch(format!(
            "prior scale must be positive, got {b0}"
        )));
    }
    if m == 0 {
        return Ok(rhs / b0);
    }
    let mut capacitance: Array2<f64> = f.c.t().dot(&f.a) / b0;
    for i in 0..m {
        capacitance[[i, i]] += 1.0;
    }
    let lu = Lu::factor(&capacitance)?;
    let condition = lu.condition_estimate(&capacitance);
    if lu.is_singular() || !(condition <= CAPACITANCE_CONDITION_LIMIT) {
        return Err(LinalgError::SingularCapacitance { condition });
    }
    let projected = f.c.t().dot(rhs) / b0;
    let t = lu.solve(&projected);
    let mut x = rhs / b0;
    x.scaled_add(-1.0 / b0, &f.a.dot(&t));
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn no_low_rank_part_divides_by_prior() {
        let f = LowRankFactorPair::empty(3);
        let x = woodbury_solve(2.0, &f, &array![2.0, 4.0, -6.0]).unwrap();
        assert_eq!(x.to_vec(), vec![1.0, 2.0, -3.0]);
    }

    #[test]
    fn identity_plus_rank_one() {
        let e1 = array![[1.0], [0.0], [0.0]];
        let f = LowRankFactorPair::new(e1.clone(), e1).unwrap();
        let x = woodbury_solve(1.0, &f, &array![1.0, 0.0, 0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn singular_capacitance_reports_condition() {
        // b0·I + A·Cᵀ = I − e1·e1ᵀ is singular
        let e1 = array![[1.0], [0.0]];
        let f = LowRankFactorPair::new(-e1.clone(), e1).unwrap();
        match woodbury_solve(1.0, &f, &array![1.0, 1.0]) {
            Err(LinalgError::SingularCapacitance { condition }) => assert!(condition > 1e14),
            other => panic!("unexpected {other:?}"),
        }
    }
}
