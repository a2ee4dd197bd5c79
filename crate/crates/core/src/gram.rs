//! Gram matrices of dyadic B-spline bases, their banded Cholesky
//! factorizations, and the L² ortho-projection onto Schoenberg spaces.
//!
//! The Gram matrix `G` has entries `∫_0^{2^j} N^{(r)}(u-l) N^{(r)}(u-m) du`;
//! it is symmetric positive definite and banded with half-bandwidth `r - 1`.
//! Projection coefficients are `γ = 2^j G^{-1} b` where `b` holds the moments
//! `∫ N_{mj} f dλ`; all solves go through the factorization, never through an
//! explicit inverse.

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;
use crate::spline::{eval_bspline, SplineBasis};

/// Symmetric band matrix, lower band stored row-wise.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    dim: usize,
    half_bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, half_bw: usize) -> Self {
        BandMatrix {
            dim,
            half_bw,
            data: vec![0.0; dim * (half_bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half_bw
    }

    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(row >= col && row - col <= self.half_bw);
        row * (self.half_bw + 1) + (self.half_bw - (row - col))
    }

    /// Symmetric access; entries outside the band are exactly zero.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        if r - c > self.half_bw {
            0.0
        } else {
            self.data[self.slot(r, c)]
        }
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        assert!(r - c <= self.half_bw, "entry outside band");
        let s = self.slot(r, c);
        self.data[s] = value;
    }

    /// Banded Cholesky factorization `A = L Lᵀ`.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.dim;
        let bw = self.half_bw;
        let mut l = BandMatrix::zeros(n, bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.get(i, j);
                let kmin = lo.max(j.saturating_sub(bw));
                for k in kmin..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if j < i {
                    l.set(i, j, s / l.get(j, j));
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                    }
                    l.set(i, i, s.sqrt());
                }
            }
        }
        Ok(BandCholesky { factor: l })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.factor.dim
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.factor.dim;
        let bw = self.factor.half_bw;
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.factor.get(i, k) * x[k];
            }
            x[i] = s / self.factor.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            let hi = (i + bw).min(n - 1);
            for k in (i + 1)..=hi {
                s -= self.factor.get(k, i) * x[k];
            }
            x[i] = s / self.factor.get(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Recomputes `L Lᵀ`, used to verify the factorization.
    pub fn reconstruct(&self) -> BandMatrix {
        let n = self.factor.dim;
        let bw = self.factor.half_bw;
        let mut a = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = 0.0;
                for k in 0..=j {
                    s += self.factor.get(i, k) * self.factor.get(j, k);
                }
                a.set(i, j, s);
            }
        }
        a
    }
}

/// A basis together with its factorized Gram system.
#[derive(Clone, Debug)]
pub struct GramFactor {
    basis: SplineBasis,
    matrix: BandMatrix,
    chol: BandCholesky,
}

impl GramFactor {
    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    pub fn cholesky(&self) -> &BandCholesky {
        &self.chol
    }

    /// Coefficients of the ortho-projection `π_j^{(r)} f` given the moments
    /// `moments[m] = ∫ N_{mj}^{(r)} f dλ` (indexed by basis offset):
    /// `γ = 2^j G^{-1} moments`, solved through the banded factorization.
    pub fn project(&self, moments: &[f64]) -> Result<Vec<f64>> {
        if moments.len() != self.basis.dim() {
            return Err(Error::contract(format!(
                "moment vector length {} does not match basis dimension {}",
                moments.len(),
                self.basis.dim()
            )));
        }
        let mut gamma = moments.to_vec();
        self.chol.solve_in_place(&mut gamma);
        let scale = (1u64 << self.basis.level()) as f64;
        for g in &mut gamma {
            *g *= scale;
        }
        Ok(gamma)
    }
}

/// Builds and factorizes the Gram matrix of `basis`.
///
/// Entries are integrated exactly: the integrand on each unit knot interval
/// is a polynomial of degree `2r - 2`, so an `r`-node Gauss–Legendre rule per
/// interval suffices, including the boundary-truncated entries.
pub fn gram_matrix(basis: &SplineBasis) -> Result<GramFactor> {
    let r = basis.order() as i64;
    let dim = basis.dim();
    let cells = 1i64 << basis.level();
    let rule = GaussLegendre::new(basis.order() as usize);
    let mut g = BandMatrix::zeros(dim, basis.order() as usize - 1);
    let (min_l, max_l) = basis.index_range();
    for l in min_l..=max_l {
        for m in (min_l.max(l - r + 1))..=l {
            let lo = l.max(0);
            let hi = (m + r).min(cells);
            let mut acc = 0.0;
            let mut a = lo;
            while a < hi {
                acc += rule.integrate(a as f64, (a + 1) as f64, |u| {
                    eval_bspline(basis.order(), u - l as f64, 0).unwrap()
                        * eval_bspline(basis.order(), u - m as f64, 0).unwrap()
                });
                a += 1;
            }
            g.set(basis.offset(l), basis.offset(m), acc);
        }
    }
    let chol = g.cholesky()?;
    Ok(GramFactor {
        basis: *basis,
        matrix: g,
        chol,
    })
}

/// The ℓ∞ operator norm of `G^{-1}` (maximum absolute row sum), computed by
/// solving against unit vectors. This is the `d_r` diagnostic: it should
/// stabilize as the level grows.
pub fn inf_norm_inverse_gram(gram: &GramFactor) -> f64 {
    let n = gram.matrix.dim();
    let mut row_sums = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[i] = 1.0;
        gram.chol.solve_in_place(&mut e);
        for (rs, &v) in row_sums.iter_mut().zip(e.iter()) {
            *rs += v.abs();
        }
    }
    row_sums.into_iter().fold(0.0, f64::max)
}
