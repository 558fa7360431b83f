use ndarray::Array1;

use crate::active::HessianOracle;

#[derive(Debug, Clone, PartialEq)]
pub struct CgIterate {
    pub iteration: usize,
    pub data_read: u64,
    pub w: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub w: Array1<f64>,
    /// One entry per completed iteration.
    pub iterates: Vec<CgIterate>,
    /// Set when an iterate or step became non-finite; the run stops there.
    pub diverged: bool,
}

/// Textbook conjugate gradients on `Bw = b` from `w = 0`, where every
/// product with `B` is a fresh [`HessianOracle::noisy_hvp`] (evaluated at
/// the origin). With noisy products the recurrences lose conjugacy and the
/// iteration typically blows up; that is recorded, not reported as an error.
pub fn cg_baseline<O: HessianOracle + ?Sized>(oracle: &mut O, b: &Array1<f64>, iters: usize) -> CgOutcome {
    let n = b.len();
    let origin = Array1::<f64>::zeros(n);
    let mut w = Array1::<f64>::zeros(n);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterates = Vec::with_capacity(iters);
    let mut diverged = false;
    for iteration in 1..=iters {
        if rr == 0.0 {
            break;
        }
        let bp = oracle.noisy_hvp(&origin, &p);
        let curvature = p.dot(&bp);
        let step = rr / curvature;
        if !step.is_finite() {
            diverged = true;
            break;
        }
        w.scaled_add(step, &p);
        r.scaled_add(-step, &bp);
        let rr_next = r.dot(&r);
        if !rr_next.is_finite() || w.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        p = &r + &(p * (rr_next / rr));
        rr = rr_next;
        iterates.push(CgIterate {
            iteration,
            data_read: oracle.data_read(),
            w: w.clone(),
        });
    }
    CgOutcome { w, iterates, diverged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ExactQuadratic;
    use ndarray::{array, Array2};

    #[test]
    fn exact_cg_solves_in_n_steps() {
        let b = array![[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let rhs = array![1.0, -1.0, 2.0];
        let mut oracle = ExactQuadratic::new(b.clone(), rhs.clone(), 1);
        let out = cg_baseline(&mut oracle, &rhs, 3);
        let res = b.dot(&out.w) - &rhs;
        assert!(res.dot(&res).sqrt() < 1e-12);
        assert!(!out.diverged);
        assert_eq!(out.iterates.last().unwrap().data_read, 3);
    }

    #[test]
    fn zero_rhs_stays_at_origin() {
        let mut oracle = ExactQuadratic::new(Array2::eye(2), array![0.0, 0.0], 1);
        let out = cg_baseline(&mut oracle, &array![0.0, 0.0], 5);
        assert_eq!(out.w, array![0.0, 0.0]);
        assert!(out.iterates.is_empty());
    }
}
