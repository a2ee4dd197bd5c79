//! Parametric families on `[0,1]` with inverse-CDF simulators.
//!
//! A model provides a density `p(θ, ·)` on `[0,1]`, a simulation map
//! `ρ(v, θ)` pushing `V ~ Uniform[0,1]` to `p(θ)`, and (optionally) the
//! derivatives needed for gradient-based refinement and variance estimation.
//! One draw set `V_1..V_k` is shared across every `θ` evaluated within an
//! estimation run, so the simulated objective varies smoothly in `θ`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::SquareMat;
use crate::quad::integrate_dyadic;

/// Compact axis-aligned parameter box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        ThetaBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&t, (&a, &b))| t >= a && t <= b)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for ((t, &a), &b) in theta.iter_mut().zip(&self.lo).zip(&self.hi) {
            *t = t.max(a).min(b);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect()
    }

    /// Distance of `theta` to the boundary, coordinatewise minimum.
    pub fn boundary_distance(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&t, (&a, &b))| (t - a).min(b - t))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A parametric family `{p(θ): θ ∈ Θ}` with a simulator `ρ(v, θ)`.
///
/// `rho` must be such that `ρ(V, θ)` with `V ~ Uniform[0,1]` has density
/// `p(θ, ·)`. The derivative methods are optional capabilities; models
/// without them return [`Error::Unsupported`].
pub trait ParametricModel: Send + Sync {
    fn id(&self) -> &'static str;

    fn theta_dim(&self) -> usize;

    fn theta_box(&self) -> &ThetaBox;

    fn density(&self, theta: &[f64], x: f64) -> f64;

    fn log_density(&self, theta: &[f64], x: f64) -> f64 {
        self.density(theta, x).ln()
    }

    /// Inverse-CDF simulation map.
    fn rho(&self, v: f64, theta: &[f64]) -> f64;

    /// `∂ρ/∂θ_q` written into `out` (length `theta_dim`).
    fn rho_dtheta(&self, _v: f64, _theta: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported("rho_dtheta"))
    }

    /// `∇_θ p(θ, x)` written into `out` (length `theta_dim`).
    fn density_dtheta(&self, _theta: &[f64], _x: f64, _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported("density_dtheta"))
    }

    /// `∇²_θ p(θ, x)` written into `out` row-major (length `theta_dim²`).
    fn density_d2theta(&self, _theta: &[f64], _x: f64, _out: &mut [f64]) -> Result<()> {
        Err(Error::Unsupported("density_d2theta"))
    }

    fn supports_rho_dtheta(&self) -> bool {
        false
    }

    /// Simulates the whole sample at once; models with per-`θ` setup cost
    /// override this.
    fn simulate_into(&self, draws: &[f64], theta: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(draws) {
            *o = self.rho(v, theta);
        }
    }

    /// `∂ρ/∂θ` for a whole draw set, written row-major into `out`
    /// (`draws.len() × theta_dim`). The default loops over [`Self::rho_dtheta`];
    /// models with per-`θ` setup cost override it.
    fn rho_dtheta_batch(&self, draws: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        let b = self.theta_dim();
        debug_assert_eq!(out.len(), draws.len() * b);
        let mut g = vec![0.0; b];
        for (i, &v) in draws.iter().enumerate() {
            self.rho_dtheta(v, theta, &mut g)?;
            out[i * b..(i + 1) * b].copy_from_slice(&g);
        }
        Ok(())
    }
}

/// The single reusable uniform draw set shared across all `θ`.
#[derive(Clone, Debug)]
pub struct SharedDraws {
    values: Vec<f64>,
    seed: u64,
}

impl SharedDraws {
    /// Generates `k` uniform draws; the same seed reproduces the same values
    /// bit-exactly.
    pub fn generate(k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..k).map(|_| rng.random::<f64>()).collect();
        SharedDraws { values, seed }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draws an i.i.d. sample of size `n` from `p(θ, ·)` by pushing fresh
/// uniforms through the simulator. Used to generate synthetic data sets.
pub fn draw_sample(model: &dyn ParametricModel, theta: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    model.simulate_into(&draws, theta, &mut out);
    out
}

/// `[ρ(V_1, θ), …, ρ(V_k, θ)]`, deterministic given the draw set.
pub fn simulate_sample(
    model: &dyn ParametricModel,
    draws: &SharedDraws,
    theta: &[f64],
) -> Result<Vec<f64>> {
    if !model.theta_box().contains(theta) {
        return Err(Error::contract(format!(
            "theta {theta:?} outside parameter box"
        )));
    }
    let mut out = vec![0.0; draws.len()];
    model.simulate_into(draws.values(), theta, &mut out);
    Ok(out)
}

/// `Ψ(θ) = ∫ ∇p ∇p′ / p dλ`, the inverse of the Cramér–Rao bound, by
/// composite quadrature. Errors if the result is not positive definite.
pub fn fisher_information(model: &dyn ParametricModel, theta: &[f64]) -> Result<SquareMat> {
    let b = model.theta_dim();
    let mut grad = vec![0.0; b];
    let mut acc = SquareMat::zeros(b);
    // accumulate the matrix integrand entry by entry over one node sweep
    let level = 7u32;
    let nodes = 12usize;
    let rule = crate::quad::GaussLegendre::new(nodes);
    let cells = 1usize << level;
    let h = 1.0 / cells as f64;
    for c in 0..cells {
        let a = c as f64 * h;
        for (x, w) in rule.mapped(a, a + h) {
            model.density_dtheta(theta, x, &mut grad)?;
            let p = model.density(theta, x);
            if p <= 0.0 {
                return Err(Error::numeric(format!(
                    "density not positive at x = {x} for theta {theta:?}"
                )));
            }
            for q in 0..b {
                for q2 in 0..b {
                    acc.add_assign(q, q2, w * grad[q] * grad[q2] / p);
                }
            }
        }
    }
    acc.symmetrize();
    if !acc.is_positive_definite() {
        return Err(Error::numeric(
            "information matrix not positive definite".to_string(),
        ));
    }
    Ok(acc)
}

/// One-parameter family `p(θ, x) = θ e^{θx} / (e^θ - 1)` on `Θ = [0.2, 3]`.
///
/// Everything is closed-form: `ρ(v, θ) = log(1 + v(e^θ - 1)) / θ`, and the
/// score is `x - E_θ[X]`, giving information `1/θ² - e^θ/(e^θ - 1)²`.
pub struct TruncatedExponential {
    theta_box: ThetaBox,
}

impl TruncatedExponential {
    pub fn new() -> Self {
        TruncatedExponential {
            theta_box: ThetaBox::new(vec![0.2], vec![3.0]),
        }
    }

    /// Closed-form information, used as an oracle in tests.
    pub fn analytic_information(theta: f64) -> f64 {
        let e = theta.exp();
        1.0 / (theta * theta) - e / ((e - 1.0) * (e - 1.0))
    }
}

impl Default for TruncatedExponential {
    fn default() -> Self {
        Self::new()
    }
}

impl ParametricModel for TruncatedExponential {
    fn id(&self) -> &'static str {
        "trunc_exp"
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    fn density(&self, theta: &[f64], x: f64) -> f64 {
        let t = theta[0];
        t * (t * x).exp() / (t.exp() - 1.0)
    }

    fn log_density(&self, theta: &[f64], x: f64) -> f64 {
        let t = theta[0];
        t.ln() + t * x - (t.exp() - 1.0).ln()
    }

    fn rho(&self, v: f64, theta: &[f64]) -> f64 {
        let t = theta[0];
        (1.0 + v * (t.exp() - 1.0)).ln() / t
    }

    fn rho_dtheta(&self, v: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        let t = theta[0];
        let em1 = t.exp() - 1.0;
        let w = 1.0 + v * em1;
        let rho = w.ln() / t;
        out[0] = v * t.exp() / (t * w) - rho / t;
        Ok(())
    }

    fn density_dtheta(&self, theta: &[f64], x: f64, out: &mut [f64]) -> Result<()> {
        let t = theta[0];
        let e = t.exp();
        let score = 1.0 / t + x - e / (e - 1.0);
        out[0] = self.density(theta, x) * score;
        Ok(())
    }

    fn density_d2theta(&self, theta: &[f64], x: f64, out: &mut [f64]) -> Result<()> {
        let t = theta[0];
        let e = t.exp();
        let score = 1.0 / t + x - e / (e - 1.0);
        let score_deriv = -1.0 / (t * t) + e / ((e - 1.0) * (e - 1.0));
        out[0] = self.density(theta, x) * (score * score + score_deriv);
        Ok(())
    }

    fn supports_rho_dtheta(&self) -> bool {
        true
    }

    fn simulate_into(&self, draws: &[f64], theta: &[f64], out: &mut [f64]) {
        let t = theta[0];
        let em1 = t.exp() - 1.0;
        let inv_t = 1.0 / t;
        for (o, &v) in out.iter_mut().zip(draws) {
            *o = (1.0 + v * em1).ln() * inv_t;
        }
    }

    fn rho_dtheta_batch(&self, draws: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        let t = theta[0];
        let e = t.exp();
        let em1 = e - 1.0;
        let inv_t = 1.0 / t;
        for (o, &v) in out.iter_mut().zip(draws) {
            let w = 1.0 + v * em1;
            let rho = w.ln() * inv_t;
            *o = v * e / (t * w) - rho * inv_t;
        }
        Ok(())
    }
}

/// Two-parameter exponential-tilted family `p(θ, x) ∝ exp(θ₁x + θ₂x²)` on
/// `Θ = [-2, 2]²`. The normalizer and CDF are computed by quadrature and the
/// inverse CDF by a bracketed Newton iteration; `∂ρ/∂θ_q` follows from
/// implicit differentiation, `∂ρ/∂θ_q = -(∂F/∂θ_q)(ρ) / p(θ, ρ)`.
pub struct TiltedQuadratic {
    theta_box: ThetaBox,
}

/// Per-`θ` context for the tilted family: normalizer and a CDF grid used to
/// bracket the Newton iterations.
struct TiltedContext {
    t1: f64,
    t2: f64,
    log_z: f64,
    grid_cdf: Vec<f64>,
}

const TILTED_GRID: usize = 256;
const TILTED_QUAD_LEVEL: u32 = 6;
const TILTED_QUAD_NODES: usize = 10;

impl TiltedQuadratic {
    pub fn new() -> Self {
        TiltedQuadratic {
            theta_box: ThetaBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]),
        }
    }

    fn unnormalized(t1: f64, t2: f64, x: f64) -> f64 {
        (t1 * x + t2 * x * x).exp()
    }

    fn context(&self, theta: &[f64]) -> TiltedContext {
        let (t1, t2) = (theta[0], theta[1]);
        let z = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |x| {
            Self::unnormalized(t1, t2, x)
        });
        let log_z = z.ln();
        // cumulative integral on a uniform grid, composite Gauss per cell
        let rule = crate::quad::GaussLegendre::new(TILTED_QUAD_NODES);
        let mut grid_cdf = vec![0.0; TILTED_GRID + 1];
        let h = 1.0 / TILTED_GRID as f64;
        let mut acc = 0.0;
        for i in 0..TILTED_GRID {
            let a = i as f64 * h;
            acc += rule.integrate(a, a + h, |x| Self::unnormalized(t1, t2, x)) / z;
            grid_cdf[i + 1] = acc;
        }
        grid_cdf[TILTED_GRID] = 1.0;
        TiltedContext {
            t1,
            t2,
            log_z,
            grid_cdf,
        }
    }

    /// CDF `F_θ(x)` by quadrature over `[0, x]`.
    pub fn cdf(&self, theta: &[f64], x: f64) -> f64 {
        let (t1, t2) = (theta[0], theta[1]);
        let z = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
            Self::unnormalized(t1, t2, u)
        });
        let rule = crate::quad::GaussLegendre::new(TILTED_QUAD_NODES);
        // split [0, x] at grid cells for stable accuracy
        let cells = 64usize;
        let h = x / cells as f64;
        let mut acc = 0.0;
        for i in 0..cells {
            acc += rule.integrate(i as f64 * h, (i + 1) as f64 * h, |u| {
                Self::unnormalized(t1, t2, u)
            });
        }
        acc / z
    }

    fn invert_cdf(ctx: &TiltedContext, v: f64) -> Result<f64> {
        // bracket from the precomputed grid, then Newton with bisection
        // safeguard; densities are bounded away from zero on compact Θ.
        let idx = ctx.grid_cdf.partition_point(|&c| c < v);
        let mut lo = ((idx.saturating_sub(1)) as f64) / TILTED_GRID as f64;
        let mut hi = (idx.min(TILTED_GRID) as f64) / TILTED_GRID as f64;
        let cdf_at = |x: f64| -> f64 {
            // integrate within the bracket cell from the grid anchor
            let anchor_idx = (x * TILTED_GRID as f64)
                .floor()
                .min(TILTED_GRID as f64 - 1.0);
            let a = anchor_idx / TILTED_GRID as f64;
            let base = ctx.grid_cdf[anchor_idx as usize];
            let rule = crate::quad::GaussLegendre::new(TILTED_QUAD_NODES);
            base + rule.integrate(a, x, |u| (ctx.t1 * u + ctx.t2 * u * u - ctx.log_z).exp())
        };
        let pdf_at = |x: f64| (ctx.t1 * x + ctx.t2 * x * x - ctx.log_z).exp();
        let mut x = 0.5 * (lo + hi);
        for _ in 0..100 {
            let f = cdf_at(x) - v;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = f / pdf_at(x);
            let mut next = x - step;
            if !(lo..=hi).contains(&next) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-12 {
                return Ok(next.clamp(0.0, 1.0));
            }
            x = next;
        }
        Err(Error::numeric(format!(
            "inverse CDF did not converge for v = {v}"
        )))
    }
}

impl Default for TiltedQuadratic {
    fn default() -> Self {
        Self::new()
    }
}

impl ParametricModel for TiltedQuadratic {
    fn id(&self) -> &'static str {
        "tilted_quad"
    }

    fn theta_dim(&self) -> usize {
        2
    }

    fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    fn density(&self, theta: &[f64], x: f64) -> f64 {
        let (t1, t2) = (theta[0], theta[1]);
        let z = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
            Self::unnormalized(t1, t2, u)
        });
        Self::unnormalized(t1, t2, x) / z
    }

    fn rho(&self, v: f64, theta: &[f64]) -> f64 {
        let ctx = self.context(theta);
        Self::invert_cdf(&ctx, v).expect("inverse CDF convergence")
    }

    fn rho_dtheta(&self, v: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        let rho = self.rho(v, theta);
        let p = self.density(theta, rho);
        // ∂F/∂θ_q (x) = ∫_0^x p(t)(t^q - E[X^q]) dt
        let mean_x = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
            u * self.density(theta, u)
        });
        let mean_x2 = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
            u * u * self.density(theta, u)
        });
        let rule = crate::quad::GaussLegendre::new(TILTED_QUAD_NODES);
        let cells = 64usize;
        let h = rho / cells as f64;
        let mut df1 = 0.0;
        let mut df2 = 0.0;
        for i in 0..cells {
            df1 += rule.integrate(i as f64 * h, (i + 1) as f64 * h, |u| {
                self.density(theta, u) * (u - mean_x)
            });
            df2 += rule.integrate(i as f64 * h, (i + 1) as f64 * h, |u| {
                self.density(theta, u) * (u * u - mean_x2)
            });
        }
        out[0] = -df1 / p;
        out[1] = -df2 / p;
        Ok(())
    }

    fn density_dtheta(&self, theta: &[f64], x: f64, out: &mut [f64]) -> Result<()> {
        let p = self.density(theta, x);
        let mean_x = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
            u * self.density(theta, u)
        });
        let mean_x2 = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
            u * u * self.density(theta, u)
        });
        out[0] = p * (x - mean_x);
        out[1] = p * (x * x - mean_x2);
        Ok(())
    }

    fn density_d2theta(&self, theta: &[f64], x: f64, out: &mut [f64]) -> Result<()> {
        // ∂²p/∂θ_q∂θ_q' = p (x^q - μ_q)(x^{q'} - μ_{q'}) - p Cov(X^q, X^{q'})
        let p = self.density(theta, x);
        let m = |k: u32| {
            integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| {
                u.powi(k as i32) * self.density(theta, u)
            })
        };
        let mu = [m(1), m(2)];
        let raw = [m(2), m(3), m(4)];
        let xs = [x, x * x];
        for q in 0..2 {
            for q2 in 0..2 {
                let cov = raw[q + q2] - mu[q] * mu[q2];
                out[q * 2 + q2] = p * ((xs[q] - mu[q]) * (xs[q2] - mu[q2]) - cov);
            }
        }
        Ok(())
    }

    fn supports_rho_dtheta(&self) -> bool {
        true
    }

    fn simulate_into(&self, draws: &[f64], theta: &[f64], out: &mut [f64]) {
        let ctx = self.context(theta);
        for (o, &v) in out.iter_mut().zip(draws) {
            *o = Self::invert_cdf(&ctx, v).expect("inverse CDF convergence");
        }
    }

    fn rho_dtheta_batch(&self, draws: &[f64], theta: &[f64], out: &mut [f64]) -> Result<()> {
        let ctx = self.context(theta);
        let pdf = |x: f64| (ctx.t1 * x + ctx.t2 * x * x - ctx.log_z).exp();
        let mu1 = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| u * pdf(u));
        let mu2 = integrate_dyadic(TILTED_QUAD_LEVEL, TILTED_QUAD_NODES, |u| u * u * pdf(u));
        // cumulative grids for ∂F/∂θ_q so each draw only needs a local patch
        let rule = crate::quad::GaussLegendre::new(TILTED_QUAD_NODES);
        let h = 1.0 / TILTED_GRID as f64;
        let mut grid_df1 = vec![0.0; TILTED_GRID + 1];
        let mut grid_df2 = vec![0.0; TILTED_GRID + 1];
        for i in 0..TILTED_GRID {
            let a = i as f64 * h;
            grid_df1[i + 1] = grid_df1[i] + rule.integrate(a, a + h, |u| pdf(u) * (u - mu1));
            grid_df2[i + 1] = grid_df2[i] + rule.integrate(a, a + h, |u| pdf(u) * (u * u - mu2));
        }
        for (i, &v) in draws.iter().enumerate() {
            let rho = Self::invert_cdf(&ctx, v)?;
            let p = pdf(rho);
            let anchor = ((rho * TILTED_GRID as f64).floor() as usize).min(TILTED_GRID - 1);
            let a = anchor as f64 * h;
            let df1 = grid_df1[anchor] + rule.integrate(a, rho, |u| pdf(u) * (u - mu1));
            let df2 = grid_df2[anchor] + rule.integrate(a, rho, |u| pdf(u) * (u * u - mu2));
            out[2 * i] = -df1 / p;
            out[2 * i + 1] = -df2 / p;
        }
        Ok(())
    }
}

/// Model lookup by the identifier used in CLI configuration.
pub fn model_by_id(id: &str) -> Option<Box<dyn ParametricModel>> {
    match id {
        "trunc_exp" => Some(Box::new(TruncatedExponential::new())),
        "tilted_quad" => Some(Box::new(TiltedQuadratic::new())),
        _ => None,
    }
}
