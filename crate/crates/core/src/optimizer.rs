//! Box-constrained minimization by coarse grid search plus local refinement.
//!
//! The simulated objective is only Hölder in `θ` in general, so the default
//! refinement is a derivative-free simplex; a Newton-like mode is available
//! when a gradient callable is supplied. Everything is deterministic: grid
//! ties break toward the lexicographically smallest index and the simplex
//! update order is fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ThetaBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMethod {
    NelderMead,
    NewtonLike,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub grid_points_per_dim: usize,
    pub refine_method: RefineMethod,
    pub tol_theta: f64,
    pub tol_value: f64,
    pub max_iters: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            grid_points_per_dim: 25,
            refine_method: RefineMethod::NelderMead,
            tol_theta: 1e-8,
            tol_value: 1e-12,
            max_iters: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    Converged,
    MaxIters,
    Boundary,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub status: OptStatus,
    pub evaluations: usize,
}

/// Minimizes `f` over the box. The gradient callable is consulted only in
/// [`RefineMethod::NewtonLike`] mode.
pub fn minimize<F, G>(
    mut f: F,
    mut grad: Option<G>,
    bounds: &ThetaBox,
    cfg: &OptConfig,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    assert!(cfg.grid_points_per_dim >= 3);
    assert!(cfg.tol_theta > 0.0 && cfg.tol_value > 0.0);
    let b = bounds.dim();
    let g = cfg.grid_points_per_dim;
    let mut evaluations = 0usize;
    let mut eval = |theta: &[f64], evals: &mut usize| -> Result<f64> {
        let v = f(theta);
        *evals += 1;
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective {
                theta: theta.to_vec(),
            });
        }
        Ok(v)
    };

    // ---- grid stage, lexicographic order, strict-improvement tie-break ----
    let mut idx = vec![0usize; b];
    let mut best_theta = vec![0.0; b];
    let mut best_value = f64::INFINITY;
    let mut theta = vec![0.0; b];
    loop {
        for q in 0..b {
            let t = idx[q] as f64 / (g - 1) as f64;
            theta[q] = bounds.lo[q] + t * (bounds.hi[q] - bounds.lo[q]);
        }
        let v = eval(&theta, &mut evaluations)?;
        if v < best_value {
            best_value = v;
            best_theta.copy_from_slice(&theta);
        }
        // advance the multi-index
        let mut q = b;
        loop {
            if q == 0 {
                break;
            }
            q -= 1;
            idx[q] += 1;
            if idx[q] < g {
                break;
            }
            idx[q] = 0;
            if q == 0 {
                q = usize::MAX;
                break;
            }
        }
        if q == usize::MAX {
            break;
        }
    }

    // ---- refinement ----
    let spacing: Vec<f64> = (0..b)
        .map(|q| (bounds.hi[q] - bounds.lo[q]) / (g - 1) as f64)
        .collect();
    let refined = match cfg.refine_method {
        RefineMethod::NelderMead => nelder_mead(
            &mut eval,
            &mut evaluations,
            bounds,
            cfg,
            &best_theta,
            best_value,
            &spacing,
        )?,
        RefineMethod::NewtonLike => match grad.as_mut() {
            Some(gr) => newton_like(
                &mut eval,
                &mut evaluations,
                gr,
                bounds,
                cfg,
                &best_theta,
                best_value,
            )?,
            None => {
                return Err(Error::contract(
                    "newton_like refinement requires a gradient callable",
                ))
            }
        },
    };

    let (theta_hat, value, hit_max) = refined;
    debug_assert!(value <= best_value + 1e-15);
    let status = if bounds.boundary_distance(&theta_hat) <= cfg.tol_theta.max(1e-12) {
        OptStatus::Boundary
    } else if hit_max {
        OptStatus::MaxIters
    } else {
        OptStatus::Converged
    };
    Ok(Minimum {
        theta: theta_hat,
        value,
        status,
        evaluations,
    })
}

type Refined = (Vec<f64>, f64, bool);

fn nelder_mead<E>(
    eval: &mut E,
    evals: &mut usize,
    bounds: &ThetaBox,
    cfg: &OptConfig,
    start: &[f64],
    start_value: f64,
    spacing: &[f64],
) -> Result<Refined>
where
    E: FnMut(&[f64], &mut usize) -> Result<f64>,
{
    let b = bounds.dim();
    let clamp = |mut x: Vec<f64>| {
        bounds.clamp(&mut x);
        x
    };
    // initial simplex: start plus one step along each axis (flipped at the hi wall)
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(b + 1);
    simplex.push((start.to_vec(), start_value));
    for q in 0..b {
        let mut v = start.to_vec();
        let step = spacing[q].max(1e-6 * (bounds.hi[q] - bounds.lo[q]));
        v[q] = if v[q] + step <= bounds.hi[q] {
            v[q] + step
        } else {
            v[q] - step
        };
        let v = clamp(v);
        let fv = eval(&v, evals)?;
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut hit_max = true;
    for _ in 0..cfg.max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let diam = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        // value spread is judged relative to the best value so that exact
        // minima at zero are still located to tol_theta precision
        let spread = simplex[b].1 - simplex[0].1;
        if diam <= cfg.tol_theta || spread.abs() <= cfg.tol_value * simplex[0].1.abs() {
            hit_max = false;
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; b];
        for (v, _) in &simplex[..b] {
            for (c, &x) in centroid.iter_mut().zip(v) {
                *c += x / b as f64;
            }
        }
        let worst = simplex[b].clone();
        let reflect = clamp(
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(&c, &w)| c + alpha * (c - w))
                .collect(),
        );
        let f_reflect = eval(&reflect, evals)?;
        if f_reflect < simplex[0].1 {
            let expand = clamp(
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(&c, &w)| c + gamma * (c - w))
                    .collect(),
            );
            let f_expand = eval(&expand, evals)?;
            simplex[b] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[b - 1].1 {
            simplex[b] = (reflect, f_reflect);
        } else {
            let contract = clamp(
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(&c, &w)| c + rho * (w - c))
                    .collect(),
            );
            let f_contract = eval(&contract, evals)?;
            if f_contract < worst.1 {
                simplex[b] = (contract, f_contract);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best
                        .iter()
                        .zip(&entry.0)
                        .map(|(&bq, &vq)| bq + sigma * (vq - bq))
                        .collect();
                    let shrunk = clamp(shrunk);
                    let fv = eval(&shrunk, evals)?;
                    *entry = (shrunk, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    // never worse than the grid stage: the start vertex is in the simplex
    Ok((simplex[0].0.clone(), simplex[0].1, hit_max))
}

fn newton_like<E, G>(
    eval: &mut E,
    evals: &mut usize,
    grad: &mut G,
    bounds: &ThetaBox,
    cfg: &OptConfig,
    start: &[f64],
    start_value: f64,
) -> Result<Refined>
where
    E: FnMut(&[f64], &mut usize) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let b = bounds.dim();
    let mut theta = start.to_vec();
    let mut value = start_value;
    let mut hit_max = true;
    for _ in 0..cfg.max_iters {
        let g0 = grad(&theta)?;
        // finite-difference Hessian of the gradient
        let mut hess = crate::mat::SquareMat::zeros(b);
        let fd = 1e-5;
        for q in 0..b {
            let h = fd * (bounds.hi[q] - bounds.lo[q]);
            let mut up = theta.clone();
            up[q] = (up[q] + h).min(bounds.hi[q]);
            let mut down = theta.clone();
            down[q] = (down[q] - h).max(bounds.lo[q]);
            let gu = grad(&up)?;
            let gd = grad(&down)?;
            let denom = up[q] - down[q];
            for q2 in 0..b {
                hess.set(q2, q, (gu[q2] - gd[q2]) / denom);
            }
        }
        hess.symmetrize();
        // Newton step when the Hessian is usable, otherwise steepest descent
        let step: Vec<f64> = match hess.inverse() {
            Ok(inv) if hess.is_positive_definite() => (0..b)
                .map(|q| -(0..b).map(|q2| inv.get(q, q2) * g0[q2]).sum::<f64>())
                .collect(),
            _ => {
                let scale = spacing_scale(bounds);
                g0.iter().map(|&gq| -gq * scale).collect()
            }
        };
        // backtracking line search with projection into the box
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&step).map(|(&x, &s)| x + t * s).collect();
            bounds.clamp(&mut cand);
            let v = eval(&cand, evals)?;
            if v < value {
                let move_size = cand
                    .iter()
                    .zip(&theta)
                    .map(|(a, c)| (a - c).abs())
                    .fold(0.0f64, f64::max);
                let improvement = value - v;
                theta = cand;
                value = v;
                accepted = true;
                if move_size <= cfg.tol_theta || improvement <= cfg.tol_value {
                    hit_max = false;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            hit_max = false;
            break;
        }
        if !hit_max {
            break;
        }
    }
    Ok((theta, value, hit_max))
}

fn spacing_scale(bounds: &ThetaBox) -> f64 {
    bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .map(|(&a, &b)| b - a)
        .fold(f64::INFINITY, f64::min)
        * 0.01
}
