//! Cyclic (periodic) tridiagonal systems.
//!
//! Row `i` reads `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = r[i]`
//! with indices taken mod `n`. The solver eliminates the interior block
//! `1..n` by the Thomas algorithm and recovers `x[0]` from the first row,
//! which needs no pivoting for diagonally dominant (row or column) matrices.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CyclicTridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CyclicTridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n < 3 || lower.len() != n || upper.len() != n {
            return Err(Error::InvalidArgument(format!(
                "cyclic tridiagonal bands need equal lengths >= 3, got {}/{}/{}",
                lower.len(),
                n,
                upper.len()
            )));
        }
        Ok(Self { lower, diag, upper })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let lower = (0..n).map(|i| self.upper[(i + n - 1) % n]).collect();
        let upper = (0..n).map(|i| self.lower[(i + 1) % n]).collect();
        Self {
            lower,
            diag: self.diag.clone(),
            upper,
        }
    }

    /// `y = M x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            y[i] = self.lower[i] * x[(i + n - 1) % n]
                + self.diag[i] * x[i]
                + self.upper[i] * x[(i + 1) % n];
        }
    }

    pub fn factor(&self) -> Result<CyclicFactor> {
        CyclicFactor::new(self)
    }
}

/// Reusable factorization of a [`CyclicTridiagonal`].
#[derive(Clone, Debug)]
pub struct CyclicFactor {
    n: usize,
    // Thomas factors of the interior block (rows/cols 1..n).
    sub: Vec<f64>,
    inv_denom: Vec<f64>,
    sup_mod: Vec<f64>,
    // Interior response to x[0] = 1, with sign folded in.
    z: Vec<f64>,
    row0: (f64, f64, f64),
    inv_schur: f64,
}

impl CyclicFactor {
    fn new(m: &CyclicTridiagonal) -> Result<Self> {
        let n = m.len();
        let k = n - 1;
        let mut sub = vec![0.0; k];
        let mut inv_denom = vec![0.0; k];
        let mut sup_mod = vec![0.0; k];
        let mut prev_sup = 0.0;
        for j in 0..k {
            let row = j + 1;
            let a = if j == 0 { 0.0 } else { m.lower[row] };
            let den = m.diag[row] - a * prev_sup;
            if den == 0.0 || !den.is_finite() {
                return Err(Error::NonFinite(format!(
                    "zero pivot in cyclic tridiagonal factorization at row {row}"
                )));
            }
            sub[j] = a;
            inv_denom[j] = 1.0 / den;
            let c = if j + 1 < k { m.upper[row] } else { 0.0 };
            sup_mod[j] = c / den;
            prev_sup = sup_mod[j];
        }
        let mut f = Self {
            n,
            sub,
            inv_denom,
            sup_mod,
            z: vec![0.0; k],
            row0: (m.lower[0], m.diag[0], m.upper[0]),
            inv_schur: 0.0,
        };
        let mut z = vec![0.0; k];
        z[0] = -m.lower[1];
        z[k - 1] += -m.upper[n - 1];
        f.interior_solve(&mut z);
        let (l0, d0, u0) = f.row0;
        let schur = d0 + u0 * z[0] + l0 * z[k - 1];
        if schur == 0.0 || !schur.is_finite() {
            return Err(Error::NonFinite(
                "singular cyclic tridiagonal system".into(),
            ));
        }
        f.z = z;
        f.inv_schur = 1.0 / schur;
        Ok(f)
    }

    fn interior_solve(&self, r: &mut [f64]) {
        let k = self.n - 1;
        r[0] *= self.inv_denom[0];
        for j in 1..k {
            r[j] = (r[j] - self.sub[j] * r[j - 1]) * self.inv_denom[j];
        }
        for j in (0..k - 1).rev() {
            r[j] -= self.sup_mod[j] * r[j + 1];
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solves `M x = r` in place.
    pub fn solve_in_place(&self, r: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n);
        let k = self.n - 1;
        let r0 = r[0];
        let y = &mut r[1..];
        self.interior_solve(y);
        let (l0, _, u0) = self.row0;
        let x0 = (r0 - u0 * y[0] - l0 * y[k - 1]) * self.inv_schur;
        for (yj, zj) in y.iter_mut().zip(&self.z) {
            *yj += x0 * zj;
        }
        r[0] = x0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(m: &CyclicTridiagonal) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][(i + n - 1) % n] += m.lower[i];
            a[i][i] += m.diag[i];
            a[i][(i + 1) % n] += m.upper[i];
        }
        a
    }

    proptest! {
        #[test]
        fn solve_inverts_dominant_systems(
            n in 3usize..40,
            seed in proptest::collection::vec(-1.0f64..1.0, 120),
        ) {
            let lower: Vec<f64> = (0..n).map(|i| seed[i]).collect();
            let upper: Vec<f64> = (0..n).map(|i| seed[40 + i]).collect();
            let diag: Vec<f64> = (0..n)
                .map(|i| lower[i].abs() + upper[i].abs() + 0.1 + seed[80 + i].abs())
                .collect();
            let m = CyclicTridiagonal::new(lower, diag, upper).unwrap();
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut r = vec![0.0; n];
            m.mul_vec(&x, &mut r);
            m.factor().unwrap().solve_in_place(&mut r);
            for (a, b) in r.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transpose_matches_dense() {
        let m = CyclicTridiagonal::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![10.0, 11.0, 12.0, 13.0],
            vec![5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let a = dense(&m);
        let at = dense(&m.transpose());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[i][j], at[j][i]);
            }
        }
    }
}
