//! Uniform dyadic B-spline bases on `[0,1]`.
//!
//! The order-`r` B-spline `N^{(r)}` is the `r`-fold convolution of the
//! indicator of `[0,1)`; it is nonnegative, supported on `[0, r]` and its
//! integer shifts form a partition of unity. The basis for the Schoenberg
//! space at dyadic level `j` is `N_{lj}^{(r)}(x) = N^{(r)}(2^j x - l)` for
//! `l = -r+1, …, 2^j - 1`.

use crate::error::{Error, Result};

/// Largest supported spline order. Orders beyond cubic are not used by the
/// estimators but the evaluator is generic up to this bound.
pub const MAX_ORDER: usize = 8;

/// Evaluates `N^{(r)}(u)` or one of its derivatives.
///
/// Derivatives use the difference recurrence
/// `N^{(r)′} = N^{(r-1)} - N^{(r-1)}(· - 1)` applied `deriv_order` times and
/// the value recurrence down to the order-1 indicator. Derivatives up to
/// order `r - 1` are accepted; the top one is the a.e. weak derivative (for
/// `r = 2` this is the convention `N^{(1)} - N^{(1)}(· - 1)`).
pub fn eval_bspline(r: u32, u: f64, deriv_order: u32) -> Result<f64> {
    if r < 1 {
        return Err(Error::contract("spline order must be at least 1"));
    }
    if r as usize > MAX_ORDER {
        return Err(Error::contract(format!(
            "spline order {r} exceeds supported maximum {MAX_ORDER}"
        )));
    }
    if deriv_order >= r {
        return Err(Error::contract(format!(
            "derivative order {deriv_order} invalid for spline order {r}"
        )));
    }
    Ok(bspline_raw(r, u, deriv_order))
}

fn bspline_raw(r: u32, u: f64, d: u32) -> f64 {
    if !(0.0..(r as f64)).contains(&u) {
        return 0.0;
    }
    if d > 0 {
        return bspline_raw(r - 1, u, d - 1) - bspline_raw(r - 1, u - 1.0, d - 1);
    }
    if r == 1 {
        // u ∈ [0, 1) is guaranteed by the support check above.
        return 1.0;
    }
    let rf = r as f64;
    (u * bspline_raw(r - 1, u, 0) + (rf - u) * bspline_raw(r - 1, u - 1.0, 0)) / (rf - 1.0)
}

/// A dyadic B-spline basis: order `r ≥ 1`, resolution level `j ≥ 0`,
/// dimension `2^j + r - 1`, knot spacing `2^{-j}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplineBasis {
    order: u32,
    level: u32,
}

/// The weights of the (at most `r`) basis functions that are non-zero at one
/// point, as produced by [`SplineBasis::active_row`]. `values[d]` belongs to
/// basis index `lo + d`; entries whose index falls outside the basis range
/// carry weight zero there and must be skipped.
#[derive(Clone, Copy, Debug)]
pub struct ActiveRow {
    pub lo: i64,
    pub len: usize,
    pub values: [f64; MAX_ORDER],
}

impl ActiveRow {
    /// Iterates over `(basis_index, weight)` pairs clipped to the basis range.
    pub fn entries(&self, basis: &SplineBasis) -> impl Iterator<Item = (i64, f64)> + '_ {
        let (min_l, max_l) = basis.index_range();
        let lo = self.lo;
        self.values[..self.len]
            .iter()
            .enumerate()
            .map(move |(d, &v)| (lo + d as i64, v))
            .filter(move |&(l, _)| l >= min_l && l <= max_l)
    }
}

impl SplineBasis {
    pub fn new(order: u32, level: u32) -> Result<Self> {
        if order < 1 {
            return Err(Error::contract("spline order must be at least 1"));
        }
        if order as usize > MAX_ORDER {
            return Err(Error::contract(format!(
                "spline order {order} exceeds supported maximum {MAX_ORDER}"
            )));
        }
        if level > 24 {
            return Err(Error::contract(format!(
                "resolution level {level} too large"
            )));
        }
        Ok(SplineBasis { order, level })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of basis functions, `2^j + r - 1`.
    pub fn dim(&self) -> usize {
        (1usize << self.level) + self.order as usize - 1
    }

    pub fn knot_step(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// Valid basis indices `l`, inclusive on both ends.
    pub fn index_range(&self) -> (i64, i64) {
        (-(self.order as i64) + 1, (1i64 << self.level) - 1)
    }

    /// Maps a basis index to its position in coefficient vectors.
    pub fn offset(&self, l: i64) -> usize {
        (l + self.order as i64 - 1) as usize
    }

    /// Evaluates `N_{lj}^{(r)}(x)` or a derivative (chain-rule scaled by
    /// `2^{j·deriv_order}`). For `r = 1` the last basis function is the
    /// indicator of the closed cell `[1 - 2^{-j}, 1]`.
    pub fn eval(&self, l: i64, x: f64, deriv_order: u32) -> Result<f64> {
        let (min_l, max_l) = self.index_range();
        if l < min_l || l > max_l {
            return Err(Error::contract(format!(
                "basis index {l} outside [{min_l}, {max_l}]"
            )));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::contract(format!(
                "evaluation point {x} outside [0,1]"
            )));
        }
        let u = self.scale() * x - l as f64;
        if self.order == 1 && l == max_l && deriv_order == 0 && u == 1.0 {
            return Ok(1.0);
        }
        let raw = eval_bspline(self.order, u, deriv_order)?;
        Ok(raw * self.scale().powi(deriv_order as i32))
    }

    fn scale(&self) -> f64 {
        (1u64 << self.level) as f64
    }

    /// Computes the weights of all basis functions that are non-zero at `x`
    /// in one pass. This is the triangular form of the value recurrence: it
    /// agrees with [`eval_bspline`] up to floating-point reassociation and is
    /// what the fitting hot loops use.
    pub fn active_row(&self, x: f64) -> ActiveRow {
        let r = self.order as usize;
        let w = self.scale() * x;
        let i = w.floor() as i64;
        if self.order == 1 {
            // Half-open cells except the closed rightmost one.
            let max_l = (1i64 << self.level) - 1;
            let l = i.min(max_l);
            let mut values = [0.0; MAX_ORDER];
            values[0] = 1.0;
            return ActiveRow {
                lo: l,
                len: 1,
                values,
            };
        }
        let t = w - i as f64;
        let v = triangle(r, t);
        // v[s] = N^{(r)}(t + s) is the weight of basis index i - s.
        let mut values = [0.0; MAX_ORDER];
        for s in 0..r {
            values[r - 1 - s] = v[s];
        }
        ActiveRow {
            lo: i - (r as i64 - 1),
            len: r,
            values,
        }
    }

    /// Like [`Self::active_row`] but for first derivatives, scaled by `2^j`.
    /// Requires `r ≥ 2`.
    pub fn active_row_deriv(&self, x: f64) -> ActiveRow {
        debug_assert!(self.order >= 2);
        let r = self.order as usize;
        let w = self.scale() * x;
        let i = w.floor() as i64;
        let t = w - i as f64;
        let lower = triangle(r - 1, t);
        // N^{(r)′}(t+s) = N^{(r-1)}(t+s) - N^{(r-1)}(t+s-1)
        let mut values = [0.0; MAX_ORDER];
        for s in 0..r {
            let a = if s < r - 1 { lower[s] } else { 0.0 };
            let b = if s > 0 { lower[s - 1] } else { 0.0 };
            values[r - 1 - s] = (a - b) * self.scale();
        }
        ActiveRow {
            lo: i - (r as i64 - 1),
            len: r,
            values,
        }
    }
}

/// Returns `v[s] = N^{(r)}(t + s)` for `s = 0..r`, `t ∈ [0, 1)`.
fn triangle(r: usize, t: f64) -> [f64; MAX_ORDER] {
    let mut v = [0.0f64; MAX_ORDER];
    v[0] = 1.0;
    for ord in 2..=r {
        for s in (0..ord).rev() {
            let a = t + s as f64;
            let prev_s = if s < ord - 1 { v[s] } else { 0.0 };
            let prev_sm1 = if s > 0 { v[s - 1] } else { 0.0 };
            v[s] = (a * prev_s + (ord as f64 - a) * prev_sm1) / (ord as f64 - 1.0);
        }
    }
    v
}
