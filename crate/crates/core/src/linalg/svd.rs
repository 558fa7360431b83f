use ndarray::{Array1, Array2};

use super::{descending_order, thin_qr, LinalgError, LowRankFactorPair};

const MAX_SWEEPS: usize = 80;

/// `U·diag(singular_values)·Vᵀ` with orthonormal columns in `U` and `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub singular_values: Array1<f64>,
    pub v: Array2<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of an r×c matrix with r ≥ c.
///
/// Singular values come out descending. Columns of `U` for exactly (or
/// numerically) zero singular values are completed to an orthonormal set.
pub fn jacobi_svd(m: &Array2<f64>) -> ThinSvd {
    let (rows, cols) = m.dim();
    debug_assert!(rows >= cols);
    let mut u = m.clone();
    let mut v = Array2::<f64>::eye(cols);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..rows {
                    let up = u[[k, p]];
                    let uq = u[[k, q]];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let up = u[[k, p]];
                    let uq = u[[k, q]];
                    u[[k, p]] = c * up - s * uq;
                    u[[k, q]] = s * up + c * uq;
                }
                for k in 0..cols {
                    let vp = v[[k, p]];
                    let vq = v[[k, q]];
                    v[[k, p]] = c * vp - s * vq;
                    v[[k, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..cols)
        .map(|j| u.column(j).dot(&u.column(j)).sqrt())
        .collect();
    let order = descending_order(&norms);
    let sigma_max = order.first().map(|&i| norms[i]).unwrap_or(0.0);
    let cutoff = f64::EPSILON * sigma_max;

    let mut u_out = Array2::<f64>::zeros((rows, cols));
    let mut v_out = Array2::<f64>::zeros((cols, cols));
    let mut singular_values = Array1::<f64>::zeros(cols);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values[dst] = sigma;
        v_out.column_mut(dst).assign(&v.column(src));
        if sigma > cutoff && sigma > 0.0 {
            u_out.column_mut(dst).assign(&(&u.column(src) / sigma));
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut u_out, &missing);
    ThinSvd {
        u: u_out,
        singular_values,
        v: v_out,
    }
}

/// Fills the listed columns with unit vectors orthogonal to every other column.
fn complete_orthonormal(q: &mut Array2<f64>, missing: &[usize]) {
    let (rows, cols) = q.dim();
    let mut filled: Vec<bool> = vec![true; cols];
    for &j in missing {
        filled[j] = false;
    }
    for &j in missing {
        let mut best: Option<Array1<f64>> = None;
        let mut best_norm = 0.0;
        for basis in 0..rows {
            let mut cand = Array1::<f64>::zeros(rows);
            cand[basis] = 1.0;
            for _ in 0..2 {
                for k in (0..cols).filter(|&k| filled[k]) {
                    let col = q.column(k);
                    let proj = col.dot(&cand);
                    cand.scaled_add(-proj, &col);
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = Some(cand);
            }
            if best_norm > 0.7 {
                break;
            }
        }
        if let Some(b) = best {
            q.column_mut(j).assign(&(&b / best_norm));
            filled[j] = true;
        }
    }
}

/// SVD of `A·Cᵀ` in O(N·m²) without forming the N×N product.
///
/// `A = Qa·Ra`, `C = Qc·Rc`, so `A·Cᵀ = Qa·(Ra·Rcᵀ)·Qcᵀ` and only the m×m core
/// needs a dense SVD.
pub fn thin_svd_product(f: &LowRankFactorPair) -> Result<ThinSvd, LinalgError> {
    let (n, m) = f.a.dim();
    if m > n {
        return Err(LinalgError::RankExceedsDimension { rank: m, dim: n });
    }
    if m == 0 {
        return Ok(ThinSvd {
            u: Array2::zeros((n, 0)),
            singular_values: Array1::zeros(0),
            v: Array2::zeros((n, 0)),
        });
    }
    let (qa, ra) = thin_qr(&f.a)?;
    let (qc, rc) = thin_qr(&f.c)?;
    let core = ra.dot(&rc.t());
    let small = jacobi_svd(&core);
    Ok(ThinSvd {
        u: qa.dot(&small.u),
        singular_values: small.singular_values,
        v: qc.dot(&small.v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, i: usize) -> Array2<f64> {
        let mut e = Array2::zeros((n, 1));
        e[[i, 0]] = 1.0;
        e
    }

    #[test]
    fn rank_one_unit_outer_product() {
        let f = LowRankFactorPair::new(unit(4, 0), unit(4, 0)).unwrap();
        let svd = thin_svd_product(&f).unwrap();
        assert!((svd.singular_values[0] - 1.0).abs() < 1e-15);
        assert!((svd.u[[0, 0]].abs() - 1.0).abs() < 1e-15);
        assert!((svd.v[[0, 0]].abs() - 1.0).abs() < 1e-15);
        assert!(svd.u[[0, 0]] * svd.v[[0, 0]] > 0.0);
    }

    #[test]
    fn zero_factor_gives_zero_spectrum_and_orthonormal_u() {
        let f = LowRankFactorPair::new(Array2::zeros((5, 3)), Array2::ones((5, 3))).unwrap();
        let svd = thin_svd_product(&f).unwrap();
        assert!(svd.singular_values.iter().all(|&s| s == 0.0));
        let utu = svd.u.t().dot(&svd.u);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((utu[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_rank_above_dimension() {
        let f = LowRankFactorPair::new(Array2::zeros((2, 3)), Array2::zeros((2, 3))).unwrap();
        assert!(thin_svd_product(&f).is_err());
    }
}
