//! The minimum-distance objectives.
//!
//! `Q_{n,k}(θ) = ∫ (p_n - p_k(θ))² / p_n dλ` on the event that the fitted
//! data density is strictly positive, and zero otherwise. Expanding the
//! square turns the integral into a linear-quadratic form in the simulated
//! coefficients: the weight matrix, linear term and constant involve only
//! `p_n` and the candidate basis, so they are integrated once per estimation
//! run and each candidate `θ` evaluation reduces to `c₀ - 2 γ·c + γᵀWγ`.

use crate::density::{min_on_grid, SplineDensity};
use crate::error::{Error, Result};
use crate::model::ParametricModel;
use crate::quad::GaussLegendre;
use crate::spline::SplineBasis;

/// Grid density used when deciding positivity of the fitted density.
pub const POSITIVITY_PTS_PER_CELL: usize = 33;

/// Nodes per dyadic cell for the precomputed integrals.
pub const DEFAULT_NODES_PER_CELL: usize = 10;

/// The θ-independent pieces of the linear-quadratic reduction.
#[derive(Clone, Debug)]
pub struct ObjectivePrecomp {
    /// `W_{lm} = ∫ N_{lJ} N_{mJ} / p_n dλ`, dense symmetric (banded in
    /// exact arithmetic, with half-bandwidth `r - 1`).
    weight: Vec<f64>,
    /// `c_l = ∫ N_{lJ} dλ`.
    linear: Vec<f64>,
    /// `∫ p_n dλ`.
    constant: f64,
    dim: usize,
    a_n_holds: bool,
    min_pn: f64,
}

impl ObjectivePrecomp {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a_n_holds(&self) -> bool {
        self.a_n_holds
    }

    pub fn min_pn(&self) -> f64 {
        self.min_pn
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn weight(&self, l: usize, m: usize) -> f64 {
        self.weight[l * self.dim + m]
    }
}

/// Integrates the weight matrix, linear term and constant for the objective,
/// at refinement level `max(j, J)` with [`DEFAULT_NODES_PER_CELL`] nodes per
/// cell. The positivity flag comes from grid minimization of `p_n`; when it
/// fails the weight matrix is left at zero (the objective is zero there by
/// convention, so the integrals are never consumed).
pub fn precompute(p_n: &SplineDensity, basis_j: &SplineBasis) -> ObjectivePrecomp {
    let (min_pn, _) = min_on_grid(p_n, POSITIVITY_PTS_PER_CELL);
    let a_n_holds = min_pn > 0.0;
    let dim = basis_j.dim();
    let level = p_n.basis().level().max(basis_j.level());
    let rule = GaussLegendre::new(DEFAULT_NODES_PER_CELL);
    let cells = 1usize << level;
    let h = 1.0 / cells as f64;

    let mut weight = vec![0.0; dim * dim];
    let mut linear = vec![0.0; dim];
    let mut constant = 0.0;
    for c in 0..cells {
        let a = c as f64 * h;
        for (x, w) in rule.mapped(a, a + h) {
            let pn = p_n.eval(x);
            constant += w * pn;
            let row = basis_j.active_row(x);
            for (l, vl) in row.entries(basis_j) {
                let lo = basis_j.offset(l);
                linear[lo] += w * vl;
                if a_n_holds {
                    for (m, vm) in row.entries(basis_j) {
                        let mo = basis_j.offset(m);
                        weight[lo * dim + mo] += w * vl * vm / pn;
                    }
                }
            }
        }
    }
    ObjectivePrecomp {
        weight,
        linear,
        constant,
        dim,
        a_n_holds,
        min_pn,
    }
}

/// Evaluates the objective from the linear-quadratic form:
/// `constant - 2 γ·c + γᵀWγ` when the positivity event holds, else 0.
pub fn eval_qnk(pre: &ObjectivePrecomp, gamma: &[f64]) -> Result<f64> {
    if gamma.len() != pre.dim {
        return Err(Error::contract(format!(
            "coefficient vector length {} does not match precomputation dimension {}",
            gamma.len(),
            pre.dim
        )));
    }
    if !pre.a_n_holds {
        return Ok(0.0);
    }
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (l, &gl) in gamma.iter().enumerate() {
        lin += gl * pre.linear[l];
        let row = &pre.weight[l * pre.dim..(l + 1) * pre.dim];
        let mut acc = 0.0;
        for (w, &gm) in row.iter().zip(gamma.iter()) {
            acc += w * gm;
        }
        quad += gl * acc;
    }
    Ok(pre.constant - 2.0 * lin + quad)
}

/// Direct quadrature of `∫ (p_n - p_γ)² / p_n dλ`; the independent route
/// used to validate the linear-quadratic form, and the fallback when the
/// candidate space is too large to precompute a dense weight matrix.
pub fn eval_qnk_direct(
    p_n: &SplineDensity,
    candidate: &SplineDensity,
    nodes_per_cell: usize,
) -> f64 {
    let (min_pn, _) = min_on_grid(p_n, POSITIVITY_PTS_PER_CELL);
    if min_pn <= 0.0 {
        return 0.0;
    }
    let level = p_n.basis().level().max(candidate.basis().level());
    crate::quad::integrate_dyadic(level, nodes_per_cell, |x| {
        let pn = p_n.eval(x);
        let d = pn - candidate.eval(x);
        d * d / pn
    })
}

/// The ideal objective `Q_n(θ) = ∫ (p_n - p(θ))² / p_n dλ` with the model
/// density in place of the simulated fit (`k = ∞` benchmark).
pub fn eval_qn(p_n: &SplineDensity, model: &dyn ParametricModel, theta: &[f64]) -> f64 {
    let (min_pn, _) = min_on_grid(p_n, POSITIVITY_PTS_PER_CELL);
    if min_pn <= 0.0 {
        return 0.0;
    }
    let level = p_n.basis().level().max(4);
    crate::quad::integrate_dyadic(level, DEFAULT_NODES_PER_CELL, |x| {
        let pn = p_n.eval(x);
        let d = pn - model.density(theta, x);
        d * d / pn
    })
}

/// The population objective `Q(θ) = ∫ (p(θ₀) - p(θ))² / p(θ₀) dλ`, used as
/// a test oracle for identifiability and curvature checks.
pub fn eval_q_pop(model: &dyn ParametricModel, theta: &[f64], theta0: &[f64]) -> f64 {
    crate::quad::integrate_dyadic(6, DEFAULT_NODES_PER_CELL, |x| {
        let p0 = model.density(theta0, x);
        let d = p0 - model.density(theta, x);
        d * d / p0
    })
}

/// Gradient of the linear-quadratic form via the chain rule:
/// `∇_θ Q_{n,k} = 2 dγᵀ (Wγ - c)` where `dγ` is the coefficient gradient.
pub fn grad_qnk(
    pre: &ObjectivePrecomp,
    gamma: &[f64],
    dgamma: &crate::density::CoeffGradient,
) -> Result<Vec<f64>> {
    if !pre.a_n_holds {
        return Err(Error::contract(
            "objective gradient undefined when the positivity event fails",
        ));
    }
    if gamma.len() != pre.dim || dgamma.dim != pre.dim {
        return Err(Error::contract("dimension mismatch in objective gradient"));
    }
    let b = dgamma.theta_dim;
    let mut residual = vec![0.0; pre.dim];
    for l in 0..pre.dim {
        let row = &pre.weight[l * pre.dim..(l + 1) * pre.dim];
        let mut acc = 0.0;
        for (w, &gm) in row.iter().zip(gamma.iter()) {
            acc += w * gm;
        }
        residual[l] = acc - pre.linear[l];
    }
    let mut grad = vec![0.0; b];
    for l in 0..pre.dim {
        for q in 0..b {
            grad[q] += 2.0 * dgamma.get(l, q) * residual[l];
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_from_points, fit_simulated, DensitySource};
    use crate::gram::gram_matrix;
    use crate::model::{
        draw_sample, fisher_information, SharedDraws, TiltedQuadratic, TruncatedExponential,
    };
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_density(r: u32, j: u32) -> SplineDensity {
        let b = SplineBasis::new(r, j).unwrap();
        SplineDensity::from_coeffs(b, vec![1.0; b.dim()], DensitySource::Observed { n: 1 })
    }

    #[test]
    fn weight_of_uniform_density_is_gram() {
        // p_n ≡ 1 makes W the (rescaled) Gram matrix of the candidate basis
        let p_n = constant_density(2, 3);
        let basis_j = SplineBasis::new(3, 4).unwrap();
        let pre = precompute(&p_n, &basis_j);
        assert!(pre.a_n_holds());
        let g = gram_matrix(&basis_j).unwrap();
        let scale = 0.5f64.powi(basis_j.level() as i32);
        for l in 0..basis_j.dim() {
            for m in 0..basis_j.dim() {
                assert_abs_diff_eq!(
                    pre.weight(l, m),
                    scale * g.matrix().get(l, m),
                    epsilon = 1e-10
                );
            }
        }
        assert_abs_diff_eq!(pre.constant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_term_sums_to_one() {
        let p_n = constant_density(2, 3);
        let basis_j = SplineBasis::new(4, 5).unwrap();
        let pre = precompute(&p_n, &basis_j);
        let total: f64 = pre.linear().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // interior entries equal the knot step
        let step = basis_j.knot_step();
        let mid = basis_j.dim() / 2;
        assert_abs_diff_eq!(pre.linear()[mid], step, epsilon = 1e-13);
        assert!(pre.linear()[0] < step);
    }

    #[test]
    fn distance_to_itself_is_zero() {
        // express p_n in the candidate basis (same space) and evaluate
        let m = TruncatedExponential::new();
        let data = draw_sample(&m, &[1.0], 4000, 3);
        let basis = SplineBasis::new(3, 3).unwrap();
        let gram = gram_matrix(&basis).unwrap();
        let p_n = fit_from_points(&basis, &gram, &data).unwrap();
        let pre = precompute(&p_n, &basis);
        assert!(pre.a_n_holds());
        let q = eval_qnk(&pre, p_n.coeffs()).unwrap();
        assert!(q.abs() <= 1e-9, "self-distance {q}");
    }

    #[test]
    fn objective_zero_when_positivity_fails() {
        let basis = SplineBasis::new(2, 3).unwrap();
        let mut coeffs = vec![1.0; basis.dim()];
        coeffs[3] = -2.0;
        let p_n = SplineDensity::from_coeffs(basis, coeffs, DensitySource::Observed { n: 10 });
        let candidate = SplineBasis::new(3, 3).unwrap();
        let pre = precompute(&p_n, &candidate);
        assert!(!pre.a_n_holds());
        let q = eval_qnk(&pre, &vec![0.7; candidate.dim()]).unwrap();
        assert_eq!(q, 0.0);
        // the gradient is undefined off the positivity event
        let gram = gram_matrix(&candidate).unwrap();
        let m = TruncatedExponential::new();
        let draws = SharedDraws::generate(16, 1);
        let dgamma =
            crate::density::theta_gradient_coeffs(&candidate, &gram, &m, &draws, &[1.0]).unwrap();
        assert!(grad_qnk(&pre, &vec![0.7; candidate.dim()], &dgamma).is_err());
    }

    #[test]
    fn quadratic_form_matches_direct_quadrature() {
        let m = TruncatedExponential::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst = 0.0f64;
        for case in 0..100 {
            let n = 500 + (case % 7) * 300;
            let data = draw_sample(&m, &[0.5 + 0.02 * (case % 50) as f64], n, 500 + case as u64);
            let basis_n = SplineBasis::new(2, 3).unwrap();
            let gram_n = gram_matrix(&basis_n).unwrap();
            let p_n = fit_from_points(&basis_n, &gram_n, &data).unwrap();
            let basis_j = SplineBasis::new(4, 4).unwrap();
            let pre = precompute(&p_n, &basis_j);
            if !pre.a_n_holds() {
                continue;
            }
            // random bounded coefficient vector for the candidate spline
            let gamma: Vec<f64> = (0..basis_j.dim())
                .map(|_| 0.2 + 1.6 * rng.random::<f64>())
                .collect();
            let candidate = SplineDensity::from_coeffs(
                basis_j,
                gamma.clone(),
                DensitySource::Observed { n: 1 },
            );
            let via_form = eval_qnk(&pre, &gamma).unwrap();
            let via_quad = eval_qnk_direct(&p_n, &candidate, 40);
            worst = worst.max((via_form - via_quad).abs());
            assert!(via_form >= -1e-12, "objective must be nonnegative");
        }
        assert!(worst <= 1e-8, "max |form - quadrature| = {worst}");
    }

    #[test]
    fn weight_matrix_matches_refined_quadrature() {
        let m = TruncatedExponential::new();
        let data = draw_sample(&m, &[1.0], 2000, 9);
        let basis_n = SplineBasis::new(2, 3).unwrap();
        let gram_n = gram_matrix(&basis_n).unwrap();
        let p_n = fit_from_points(&basis_n, &gram_n, &data).unwrap();
        let basis_j = SplineBasis::new(3, 4).unwrap();
        let pre = precompute(&p_n, &basis_j);
        assert!(pre.a_n_holds());
        let level = basis_n.level().max(basis_j.level());
        let (lo, hi) = basis_j.index_range();
        let mut worst = 0.0f64;
        for l in lo..=hi {
            for mm in lo..=hi {
                let direct = crate::quad::integrate_dyadic(level, 40, |x| {
                    basis_j.eval(l, x, 0).unwrap() * basis_j.eval(mm, x, 0).unwrap() / p_n.eval(x)
                });
                let got = pre.weight(basis_j.offset(l), basis_j.offset(mm));
                worst = worst.max((got - direct).abs());
            }
        }
        assert!(worst <= 1e-9, "max weight entry error {worst}");
    }

    #[test]
    fn ideal_objective_nonnegative_and_zero_for_uniform() {
        let m = TiltedQuadratic::new();
        let p_n = constant_density(2, 3);
        // uniform data density and uniform model coincide at θ = (0,0)
        let q = eval_qn(&p_n, &m, &[0.0, 0.0]);
        assert!(q.abs() <= 1e-12, "Q_n at the matching point: {q}");
        let q_off = eval_qn(&p_n, &m, &[0.8, -0.3]);
        assert!(q_off > 0.0);
    }

    #[test]
    fn projection_bias_keeps_ideal_objective_positive() {
        // p_n set to the spline projection of p(θ) differs from p(θ) itself
        let m = TruncatedExponential::new();
        let theta = [1.5];
        let basis = SplineBasis::new(2, 2).unwrap();
        let gram = gram_matrix(&basis).unwrap();
        let (lo, hi) = basis.index_range();
        let moments: Vec<f64> = (lo..=hi)
            .map(|l| {
                crate::quad::integrate_dyadic(6, 10, |x| {
                    basis.eval(l, x, 0).unwrap() * m.density(&theta, x)
                })
            })
            .collect();
        let coeffs = gram.project(&moments).unwrap();
        let p_n = SplineDensity::from_coeffs(basis, coeffs, DensitySource::Observed { n: 1 });
        let q = eval_qn(&p_n, &m, &theta);
        assert!(q > 0.0, "projection bias should keep Q_n positive");
        assert!(q < 1e-3, "but small: {q}");
    }

    #[test]
    fn population_objective_identifies_truth() {
        let m = TruncatedExponential::new();
        let theta0 = [1.3];
        assert_abs_diff_eq!(eval_q_pop(&m, &theta0, &theta0), 0.0, epsilon = 1e-14);
        for i in 0..10 {
            let t = 0.2 + i as f64 * (2.8 / 9.0);
            if (t - theta0[0]).abs() > 1e-6 {
                assert!(eval_q_pop(&m, &[t], &theta0) > 0.0);
            }
        }
    }

    #[test]
    fn population_hessian_matches_information() {
        // second difference of Q at θ0 ≈ 2 ∫ ∇p∇p′/p
        let m = TruncatedExponential::new();
        let theta0 = [1.0];
        let h = 1e-3;
        let qp = eval_q_pop(&m, &[1.0 + h], &theta0);
        let qm = eval_q_pop(&m, &[1.0 - h], &theta0);
        let q0 = eval_q_pop(&m, &theta0, &theta0);
        let hess = (qp - 2.0 * q0 + qm) / (h * h);
        let info = fisher_information(&m, &theta0).unwrap();
        let expect = 2.0 * info.get(0, 0);
        assert!(
            (hess - expect).abs() / expect < 0.05,
            "hessian {hess} vs 2·info {expect}"
        );
    }

    #[test]
    fn gradient_zero_map_and_finite_difference() {
        let m = TruncatedExponential::new();
        let data = draw_sample(&m, &[1.0], 3000, 77);
        let basis_n = SplineBasis::new(2, 3).unwrap();
        let gram_n = gram_matrix(&basis_n).unwrap();
        let p_n = fit_from_points(&basis_n, &gram_n, &data).unwrap();
        let basis_j = SplineBasis::new(4, 4).unwrap();
        let gram_j = gram_matrix(&basis_j).unwrap();
        let pre = precompute(&p_n, &basis_j);
        assert!(pre.a_n_holds());

        let draws = SharedDraws::generate(50_000, 4);
        let theta = [1.1];
        let mut scratch = Vec::new();
        let fit = fit_simulated(&basis_j, &gram_j, &m, &draws, &theta, &mut scratch).unwrap();
        let dgamma =
            crate::density::theta_gradient_coeffs(&basis_j, &gram_j, &m, &draws, &theta).unwrap();
        let grad = grad_qnk(&pre, fit.coeffs(), &dgamma).unwrap();

        let h = 1e-5;
        let up = fit_simulated(&basis_j, &gram_j, &m, &draws, &[1.1 + h], &mut scratch).unwrap();
        let down = fit_simulated(&basis_j, &gram_j, &m, &draws, &[1.1 - h], &mut scratch).unwrap();
        let fd = (eval_qnk(&pre, up.coeffs()).unwrap() - eval_qnk(&pre, down.coeffs()).unwrap())
            / (2.0 * h);
        let scale = fd.abs().max(grad[0].abs()).max(1e-6);
        assert!(
            ((grad[0] - fd) / scale).abs() <= 1e-4,
            "gradient {} vs finite difference {fd}",
            grad[0]
        );
    }

    #[test]
    fn simulated_objective_tracks_ideal_objective_in_k() {
        // |Q_{n,k}(θ) - Q_n(θ)| small for large k at a handful of random θ
        let m = TruncatedExponential::new();
        let data = draw_sample(&m, &[1.0], 1000, 21);
        let basis_n = SplineBasis::new(2, 2).unwrap();
        let gram_n = gram_matrix(&basis_n).unwrap();
        let p_n = fit_from_points(&basis_n, &gram_n, &data).unwrap();
        let k = 1_000_000;
        let level_j = crate::density::resolution_rule(k, 1.5, 1.0);
        let basis_j = SplineBasis::new(4, level_j).unwrap();
        let gram_j = gram_matrix(&basis_j).unwrap();
        let pre = precompute(&p_n, &basis_j);
        assert!(pre.a_n_holds());
        let draws = SharedDraws::generate(k, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scratch = Vec::new();
        for _ in 0..5 {
            let theta = [0.3 + 2.5 * rng.random::<f64>()];
            let fit = fit_simulated(&basis_j, &gram_j, &m, &draws, &theta, &mut scratch).unwrap();
            let qnk = eval_qnk(&pre, fit.coeffs()).unwrap();
            let qn = eval_qn(&p_n, &m, &theta);
            assert!(
                (qnk - qn).abs() <= 5e-3,
                "|Qnk - Qn| = {} at θ = {:?}",
                (qnk - qn).abs(),
                theta
            );
        }
    }

    #[test]
    fn uniform_closeness_scales_with_root_k() {
        // median over reps of √k · sup_θ |Q_{n,k} - Q_n| stays bounded in k
        let m = TruncatedExponential::new();
        let n = 512;
        let taus = 1.5;
        let mut medians = Vec::new();
        for (ki, &k) in [1usize << 10, 1 << 12, 1 << 14].iter().enumerate() {
            let mut sups = Vec::new();
            for rep in 0..20 {
                let data = draw_sample(&m, &[1.0], n, 600 + rep);
                let basis_n =
                    SplineBasis::new(2, crate::density::resolution_rule(n, taus, 1.0)).unwrap();
                let gram_n = gram_matrix(&basis_n).unwrap();
                let p_n = fit_from_points(&basis_n, &gram_n, &data).unwrap();
                let level_j = crate::density::resolution_rule(k, taus, 1.0);
                let basis_j = SplineBasis::new(4, level_j).unwrap();
                let gram_j = gram_matrix(&basis_j).unwrap();
                let pre = precompute(&p_n, &basis_j);
                if !pre.a_n_holds() {
                    continue;
                }
                let draws = SharedDraws::generate(k, 9000 + (ki * 100 + rep as usize) as u64);
                let mut scratch = Vec::new();
                let mut sup = 0.0f64;
                for g in 0..50 {
                    let theta = [0.2 + 2.8 * g as f64 / 49.0];
                    let fit =
                        fit_simulated(&basis_j, &gram_j, &m, &draws, &theta, &mut scratch).unwrap();
                    let qnk = eval_qnk(&pre, fit.coeffs()).unwrap();
                    let qn = eval_qn(&p_n, &m, &theta);
                    sup = sup.max((qnk - qn).abs());
                }
                sups.push((k as f64).sqrt() * sup);
            }
            sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(sups[sups.len() / 2]);
        }
        let max = medians.iter().cloned().fold(f64::MIN, f64::max);
        let min = medians.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max / min <= 3.0,
            "√k-scaled closeness medians spread too much: {medians:?}"
        );
    }
}
