//! Composite Gauss–Legendre quadrature on dyadic partitions of `[0,1]`.

use std::f64::consts::PI;

/// A Gauss–Legendre rule on the reference interval `[-1, 1]`.
///
/// Exact for polynomials of degree `2n - 1` where `n` is the node count.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-node rule. Nodes are the roots of the Legendre
    /// polynomial `P_n`, found by Newton iteration from the Chebyshev-like
    /// initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_with_deriv(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let d = legendre_with_deriv(n, x).1;
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * d * d);
        }
        nodes.reverse();
        weights.reverse();
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node/weight pairs mapped onto `[a, b]`.
    pub fn mapped<'a>(&'a self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + 'a {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Integrates `f` over `[a, b]` with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mut acc = 0.0;
        for (x, w) in self.mapped(a, b) {
            acc += w * f(x);
        }
        acc
    }
}

/// Evaluates `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre approximation of `∫_0^1 f dλ` over `2^cells_level`
/// dyadic cells with `nodes_per_cell` nodes per cell.
pub fn integrate_dyadic<F: FnMut(f64) -> f64>(
    cells_level: u32,
    nodes_per_cell: usize,
    mut f: F,
) -> f64 {
    let rule = GaussLegendre::new(nodes_per_cell);
    let cells = 1usize << cells_level;
    let h = 1.0 / cells as f64;
    let mut acc = 0.0;
    for c in 0..cells {
        let a = c as f64 * h;
        acc += rule.integrate(a, a + h, &mut f);
    }
    acc
}
