use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2};

use super::{ensure_square, LinalgError};

/// Lower Cholesky factor `L` with `M = L·Lᵀ`.
///
/// Right-looking and blocked: each diagonal block is factored directly, the
/// panel below it is a triangular solve, and the trailing update is a GEMM.
pub fn cholesky(m: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    const NB: usize = 48;
    let n = ensure_square(m)?;
    let mut a = m.as_standard_layout().into_owned();
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + NB).min(n);
        let nb = k1 - k0;
        // diagonal block, row-major scratch
        let mut d = vec![0.0; nb * nb];
        for i in 0..nb {
            for j in 0..=i {
                let dot: f64 = d[i * nb..i * nb + j].iter().zip(&d[j * nb..j * nb + j]).map(|(x, y)| x * y).sum();
                let sum = a[[k0 + i, k0 + j]] - dot;
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite {
                            pivot: k0 + i,
                            value: sum,
                        });
                    }
                    d[i * nb + i] = sum.sqrt();
                } else {
                    d[i * nb + j] = sum / d[j * nb + j];
                }
            }
        }
        for i in 0..nb {
            for j in 0..nb {
                a[[k0 + i, k0 + j]] = if j <= i { d[i * nb + j] } else { 0.0 };
            }
        }
        if k1 < n {
            // L21 = A21·L11⁻ᵀ, one forward substitution per row
            for r in k1..n {
                let mut row = a.slice_mut(s![r, k0..k1]);
                let v = row.as_slice_mut().expect("standard layout");
                for i in 0..nb {
                    let dot: f64 = d[i * nb..i * nb + i].iter().zip(&v[..i]).map(|(x, y)| x * y).sum();
                    v[i] = (v[i] - dot) / d[i * nb + i];
                }
            }
            let l21 = a.slice(s![k1.., k0..k1]).to_owned();
            let mut trailing = a.slice_mut(s![k1.., k1..]);
            general_mat_mul(-1.0, &l21, &l21.t(), 1.0, &mut trailing);
            a.slice_mut(s![k0..k1, k1..]).fill(0.0);
        }
        k0 = k1;
    }
    Ok(a)
}

/// Solves `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        let mut v = col.to_vec();
        for i in 0..n {
            let row = l.row(i);
            let sum = v[i] - row.slice(ndarray::s![..i]).dot(&ndarray::ArrayView1::from(&v[..i]));
            v[i] = sum / row[i];
        }
        col.assign(&ndarray::ArrayView1::from(&v));
    }
    x
}

/// Solves `Lᵀ·X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        let mut v = col.to_vec();
        // column sweep: row i of L is column i of Lᵀ
        for i in (0..n).rev() {
            let row = l.row(i);
            v[i] /= row[i];
            let xi = v[i];
            for (vk, lik) in v[..i].iter_mut().zip(row.iter()) {
                *vk -= lik * xi;
            }
        }
        col.assign(&ndarray::ArrayView1::from(&v));
    }
    x
}

/// Householder thin QR of an N×m matrix with m ≤ N.
///
/// `Q` always has orthonormal columns, including for rank-deficient input;
/// `R` is m×m upper triangular.
pub fn thin_qr(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>), LinalgError> {
    let (n, m) = a.dim();
    if m > n {
        return Err(LinalgError::RankExceedsDimension { rank: m, dim: n });
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Option<Array1<f64>>> = Vec::with_capacity(m);
    for j in 0..m {
        let x = r.slice(s![j.., j]).to_owned();
        let norm = x.dot(&x).sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.dot(&v).sqrt();
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        v /= vnorm;
        {
            let mut block = r.slice_mut(s![j.., j..]);
            let proj = v.dot(&block);
            for (i, vi) in v.iter().enumerate() {
                for (k, pk) in proj.iter().enumerate() {
                    block[[i, k]] -= 2.0 * vi * pk;
                }
            }
        }
        reflectors.push(Some(v));
    }

    let mut q = Array2::<f64>::zeros((n, m));
    for i in 0..m {
        q[[i, i]] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        if let Some(v) = v {
            let mut block = q.slice_mut(s![j.., ..]);
            let proj = v.dot(&block);
            for (i, vi) in v.iter().enumerate() {
                for (k, pk) in proj.iter().enumerate() {
                    block[[i, k]] -= 2.0 * vi * pk;
                }
            }
        }
    }

    let mut r_upper = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for k in i..m {
            r_upper[[i, k]] = r[[i, k]];
        }
    }
    Ok((q, r_upper))
}

/// LU factorisation with partial pivoting of a general square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
    singular: bool,
}

impl Lu {
    pub fn factor(m: &Array2<f64>) -> Result<Self, LinalgError> {
        let n = ensure_square(m)?;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[[k, k]].abs();
            for i in k + 1..n {
                if lu[[i, k]].abs() > best {
                    best = lu[[i, k]].abs();
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                singular = true;
                continue;
            }
            if p != k {
                for c in 0..n {
                    lu.swap([k, c], [p, c]);
                }
                perm.swap(k, p);
            }
            let pivot = lu[[k, k]];
            for i in k + 1..n {
                let f = lu[[i, k]] / pivot;
                lu[[i, k]] = f;
                for c in k + 1..n {
                    lu[[i, c]] -= f * lu[[k, c]];
                }
            }
        }
        Ok(Self { lu, perm, singular })
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.lu.nrows();
        let mut x = Array1::from_iter(self.perm.iter().map(|&p| b[p]));
        for i in 0..n {
            let mut sum = x[i];
            for k in 0..i {
                sum -= self.lu[[i, k]] * x[k];
            }
            x[i] = sum;
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..n {
                sum -= self.lu[[i, k]] * x[k];
            }
            x[i] = sum / self.lu[[i, i]];
        }
        x
    }

    /// 1-norm condition number `‖M‖₁·‖M⁻¹‖₁`, using an explicit inverse.
    pub fn condition_estimate(&self, original: &Array2<f64>) -> f64 {
        if self.singular {
            return f64::INFINITY;
        }
        let n = original.nrows();
        let norm1 = |m: &Array2<f64>| {
            (0..m.ncols())
                .map(|c| m.column(c).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let mut inv = Array2::<f64>::zeros((n, n));
        for c in 0..n {
            let mut e = Array1::<f64>::zeros(n);
            e[c] = 1.0;
            inv.column_mut(c).assign(&self.solve(&e));
        }
        let cond = norm1(original) * norm1(&inv);
        if cond.is_finite() {
            cond
        } else {
            f64::INFINITY
        }
    }
}
