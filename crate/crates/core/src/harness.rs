//! Seeded Monte Carlo campaigns.
//!
//! Replications are fully determined by `(master_seed, n, rep_index)`
//! through a fixed 64-bit mixing function, so campaigns parallelize over a
//! worker pool and still aggregate identically no matter the schedule:
//! records are keyed by replication index and sorted before summarizing.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{fit_simulated, resolution_rule};
use crate::error::{Error, Result};
use crate::gram::gram_matrix;
use crate::inference::{indirect_inference_estimate, EstimationConfig, EstimationStatus, KRule};
use crate::mat::SquareMat;
use crate::model::{draw_sample, fisher_information, model_by_id, ParametricModel, SharedDraws};
use crate::quad::integrate_dyadic;
use crate::spline::SplineBasis;

/// SplitMix64-style combiner; the published per-replication seed rule is
/// `mix64(master_seed, n, stream)` with even streams for data and odd
/// streams for simulation draws.
pub fn mix64(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McConfig {
    pub model: String,
    pub theta0: Vec<f64>,
    pub n_list: Vec<usize>,
    pub regime: KRule,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub estimation: EstimationConfig,
    /// Worker threads; `None` uses the process-wide pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl McConfig {
    pub fn validate(&self, model: &dyn ParametricModel) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::contract("a campaign needs at least 2 replications"));
        }
        if self.n_list.is_empty() {
            return Err(Error::contract("n_list must not be empty"));
        }
        if !model.theta_box().contains(&self.theta0)
            || model.theta_box().boundary_distance(&self.theta0) <= 0.0
        {
            return Err(Error::contract(
                "theta0 must be interior to the parameter box",
            ));
        }
        self.estimation.validate()
    }
}

/// One replication's outcome. Wall-clock seconds are recorded but excluded
/// from reproducibility comparisons.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub n: usize,
    pub k: usize,
    pub j: u32,
    pub big_j: u32,
    pub theta_hat: Vec<f64>,
    pub obj_value: f64,
    pub a_n: bool,
    pub status: EstimationStatus,
    pub seconds: f64,
    pub var_diag: Option<Vec<f64>>,
    pub covered: Option<Vec<bool>>,
}

/// Aggregates for one sample size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McSummary {
    pub n: usize,
    pub k: usize,
    pub used: usize,
    pub failures: usize,
    /// Mean of `√n(θ̂ - θ₀)`.
    pub mean_scaled: Vec<f64>,
    /// Covariance of `√n(θ̂ - θ₀)`.
    pub cov_scaled: SquareMat,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// Per-coordinate CI coverage among usable replications, when variance
    /// estimates were computed.
    pub coverage: Option<Vec<f64>>,
    /// Median plug-in variance diagonal, when computed.
    pub median_var_diag: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McReport {
    pub model: String,
    pub theta0: Vec<f64>,
    pub regime: KRule,
    pub reps: usize,
    pub records: Vec<RepRecord>,
    pub summaries: Vec<McSummary>,
    /// `Ψ(θ₀) = ∫ ∇p ∇p′ / p dλ`.
    pub fisher: SquareMat,
    /// `Ψ(θ₀)^{-1}`, the Cramér–Rao bound.
    pub cramer_rao: SquareMat,
    pub rate_slope: Option<f64>,
}

impl McReport {
    pub fn summary_for(&self, n: usize) -> Option<&McSummary> {
        self.summaries.iter().find(|s| s.n == n)
    }

    /// The records' equality modulo wall-clock fields, for reproducibility
    /// checks.
    pub fn same_results(&self, other: &McReport) -> bool {
        if self.records.len() != other.records.len() {
            return false;
        }
        self.records.iter().zip(&other.records).all(|(a, b)| {
            a.rep == b.rep
                && a.n == b.n
                && a.k == b.k
                && a.j == b.j
                && a.big_j == b.big_j
                && a.status == b.status
                && a.a_n == b.a_n
                && a.obj_value.to_bits() == b.obj_value.to_bits()
                && a.theta_hat.len() == b.theta_hat.len()
                && a.theta_hat
                    .iter()
                    .zip(&b.theta_hat)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

fn run_one_rep(model: &dyn ParametricModel, cfg: &McConfig, n: usize, rep: usize) -> RepRecord {
    let start = Instant::now();
    let data_seed = mix64(cfg.master_seed, n as u64, 2 * rep as u64);
    let draws_seed = mix64(cfg.master_seed, n as u64, 2 * rep as u64 + 1);
    let data = draw_sample(model, &cfg.theta0, n, data_seed);
    let mut est_cfg = cfg.estimation.clone();
    est_cfg.k_rule = cfg.regime;
    est_cfg.seed = draws_seed;
    match indirect_inference_estimate(&data, model, &est_cfg) {
        Ok(res) => {
            let covered = res.ci_95.as_ref().map(|cis| {
                cis.iter()
                    .zip(&cfg.theta0)
                    .map(|(&(lo, hi), &t0)| lo <= t0 && t0 <= hi)
                    .collect()
            });
            RepRecord {
                rep,
                n,
                k: res.k,
                j: res.j,
                big_j: res.big_j,
                theta_hat: res.theta_hat,
                obj_value: res.obj_value,
                a_n: res.a_n_held,
                status: res.status,
                seconds: start.elapsed().as_secs_f64(),
                var_diag: res.info_inverse_hat.as_ref().map(|m| m.diag()),
                covered,
            }
        }
        Err(_) => RepRecord {
            rep,
            n,
            k: cfg.regime.k_of(n),
            j: 0,
            big_j: 0,
            theta_hat: vec![f64::NAN; model.theta_dim()],
            obj_value: f64::NAN,
            a_n: false,
            status: EstimationStatus::Failed,
            seconds: start.elapsed().as_secs_f64(),
            var_diag: None,
            covered: None,
        },
    }
}

fn summarize(records: &[RepRecord], n: usize, k: usize, theta0: &[f64]) -> McSummary {
    let b = theta0.len();
    let usable: Vec<&RepRecord> = records
        .iter()
        .filter(|r| r.n == n && r.status.is_usable())
        .collect();
    let failures = records.iter().filter(|r| r.n == n).count() - usable.len();
    let count = usable.len();
    let scale = (n as f64).sqrt();
    let scaled: Vec<Vec<f64>> = usable
        .iter()
        .map(|r| {
            r.theta_hat
                .iter()
                .zip(theta0)
                .map(|(&t, &t0)| scale * (t - t0))
                .collect()
        })
        .collect();
    let mut mean = vec![0.0; b];
    for s in &scaled {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v / count.max(1) as f64;
        }
    }
    let mut cov = SquareMat::zeros(b);
    let mut m3 = vec![0.0; b];
    let mut m2 = vec![0.0; b];
    let mut m4 = vec![0.0; b];
    if count >= 2 {
        for s in &scaled {
            for q in 0..b {
                let dq = s[q] - mean[q];
                m2[q] += dq * dq / count as f64;
                m3[q] += dq * dq * dq / count as f64;
                m4[q] += dq * dq * dq * dq / count as f64;
                for q2 in 0..b {
                    cov.add_assign(q, q2, dq * (s[q2] - mean[q2]) / (count as f64 - 1.0));
                }
            }
        }
    }
    let skewness = (0..b)
        .map(|q| {
            if m2[q] > 0.0 {
                m3[q] / m2[q].powf(1.5)
            } else {
                0.0
            }
        })
        .collect();
    let excess_kurtosis = (0..b)
        .map(|q| {
            if m2[q] > 0.0 {
                m4[q] / (m2[q] * m2[q]) - 3.0
            } else {
                0.0
            }
        })
        .collect();

    let with_ci: Vec<&&RepRecord> = usable.iter().filter(|r| r.covered.is_some()).collect();
    let coverage = if with_ci.is_empty() {
        None
    } else {
        Some(
            (0..b)
                .map(|q| {
                    with_ci
                        .iter()
                        .filter(|r| r.covered.as_ref().unwrap()[q])
                        .count() as f64
                        / with_ci.len() as f64
                })
                .collect(),
        )
    };
    let median_var_diag = if with_ci.is_empty() {
        None
    } else {
        Some(
            (0..b)
                .map(|q| {
                    let mut vals: Vec<f64> = with_ci
                        .iter()
                        .filter_map(|r| r.var_diag.as_ref().map(|v| v[q]))
                        .collect();
                    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    vals[vals.len() / 2]
                })
                .collect(),
        )
    };
    McSummary {
        n,
        k,
        used: count,
        failures,
        mean_scaled: mean,
        cov_scaled: cov,
        skewness,
        excess_kurtosis,
        coverage,
        median_var_diag,
    }
}

/// Runs the campaign: for every `n` and replication, draw data at `θ₀`,
/// estimate, and aggregate. Per-replication errors become flagged records;
/// the campaign never aborts. Deterministic given the master seed,
/// regardless of the worker count.
pub fn run_montecarlo(cfg: &McConfig) -> Result<McReport> {
    let model = model_by_id(&cfg.model)
        .ok_or_else(|| Error::contract(format!("unknown model id '{}'", cfg.model)))?;
    cfg.validate(model.as_ref())?;

    let jobs: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep)))
        .collect();

    let run_all = || -> Vec<RepRecord> {
        jobs.par_iter()
            .map(|&(n, rep)| run_one_rep(model.as_ref(), cfg, n, rep))
            .collect()
    };
    let mut records = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::numeric(format!("worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    records.sort_by_key(|r| (r.n, r.rep));

    let fisher = fisher_information(model.as_ref(), &cfg.theta0)?;
    let cramer_rao = fisher.inverse()?;
    let summaries = cfg
        .n_list
        .iter()
        .map(|&n| summarize(&records, n, cfg.regime.k_of(n), &cfg.theta0))
        .collect();
    Ok(McReport {
        model: cfg.model.clone(),
        theta0: cfg.theta0.clone(),
        regime: cfg.regime,
        reps: cfg.reps,
        records,
        summaries,
        fisher,
        cramer_rao,
        rate_slope: None,
    })
}

/// Least-squares slope of `log MISE` against `log k` for the simulated-fit
/// estimator, with the resolution level following the rate rule (or frozen
/// at `fixed_level`).
#[allow(clippy::too_many_arguments)]
pub fn rate_check(
    model: &dyn ParametricModel,
    theta0: &[f64],
    k_list: &[usize],
    tau: f64,
    r: u32,
    reps: usize,
    master_seed: u64,
    fixed_level: Option<u32>,
) -> Result<f64> {
    if k_list.len() < 3 {
        return Err(Error::contract("rate check needs at least 3 budget values"));
    }
    let kmin = *k_list.iter().min().unwrap();
    let kmax = *k_list.iter().max().unwrap();
    if kmin < 2 {
        return Err(Error::contract("rate check budgets must be at least 2"));
    }
    if kmax < 4 * kmin {
        return Err(Error::contract(
            "rate check budgets must span at least two octaves",
        ));
    }
    if reps < 1 {
        return Err(Error::contract("rate check needs at least one replication"));
    }
    let mut points = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let level = fixed_level.unwrap_or_else(|| resolution_rule(k, tau, 1.0));
        let basis = SplineBasis::new(r, level)?;
        let gram = gram_matrix(&basis)?;
        let mut mise = 0.0;
        let mut scratch = Vec::new();
        for rep in 0..reps {
            let seed = mix64(master_seed, k as u64, rep as u64);
            let draws = SharedDraws::generate(k, seed);
            let fit = fit_simulated(&basis, &gram, model, &draws, theta0, &mut scratch)?;
            mise += integrate_dyadic(level.max(6), 10, |x| {
                let d = fit.eval(x) - model.density(theta0, x);
                d * d
            }) / reps as f64;
        }
        points.push(((k as f64).ln(), mise.ln()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TruncatedExponential;

    fn small_config() -> McConfig {
        McConfig {
            model: "trunc_exp".to_string(),
            theta0: vec![1.0],
            n_list: vec![64],
            regime: KRule::S3 { kappa: 2.0 },
            reps: 8,
            master_seed: 99,
            estimation: EstimationConfig::default(),
            workers: None,
        }
    }

    #[test]
    fn mix64_spreads_and_is_stable() {
        let a = mix64(1, 2, 3);
        assert_eq!(a, mix64(1, 2, 3));
        assert_ne!(mix64(1, 2, 3), mix64(1, 2, 4));
        assert_ne!(mix64(1, 2, 3), mix64(1, 3, 3));
        assert_ne!(mix64(1, 2, 3), mix64(2, 2, 3));
        // avalanche sanity: flipping one input bit changes many output bits
        let d = (mix64(1, 2, 3) ^ mix64(1, 2, 2)).count_ones();
        assert!(d > 16, "weak mixing: {d} bits");
    }

    #[test]
    fn smoke_campaign_completes() {
        let report = run_montecarlo(&small_config()).unwrap();
        assert_eq!(report.records.len(), 8);
        let s = &report.summaries[0];
        assert_eq!(s.used + s.failures, 8);
        assert!(s.cov_scaled.get(0, 0) >= 0.0);
    }

    #[test]
    fn serial_and_parallel_identical() {
        let mut cfg = small_config();
        cfg.workers = Some(1);
        let serial = run_montecarlo(&cfg).unwrap();
        cfg.workers = Some(4);
        let parallel = run_montecarlo(&cfg).unwrap();
        assert!(serial.same_results(&parallel));
        // and a repeated run is identical too
        let again = run_montecarlo(&cfg).unwrap();
        assert!(parallel.same_results(&again));
    }

    #[test]
    fn unknown_model_rejected() {
        let mut cfg = small_config();
        cfg.model = "who".into();
        assert!(run_montecarlo(&cfg).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let m = TruncatedExponential::new();
        let mut cfg = small_config();
        cfg.reps = 1;
        assert!(cfg.validate(&m).is_err());
        let mut cfg = small_config();
        cfg.n_list.clear();
        assert!(cfg.validate(&m).is_err());
        let mut cfg = small_config();
        cfg.theta0 = vec![0.2]; // on the boundary
        assert!(cfg.validate(&m).is_err());
    }

    #[test]
    fn rate_check_slope_in_band() {
        let m = TruncatedExponential::new();
        let ks: Vec<usize> = (8..=14).map(|e| 1usize << e).collect();
        let slope = rate_check(&m, &[1.0], &ks, 1.5, 2, 10, 5, None).unwrap();
        assert!(
            (-1.0..=-0.55).contains(&slope),
            "rate slope {slope} out of band"
        );
    }

    #[test]
    fn rate_check_frozen_level_plateaus() {
        let m = TruncatedExponential::new();
        // freeze a coarse level: for large k the bias floor dominates and
        // the MISE slope flattens
        let ks: Vec<usize> = (14..=19).map(|e| 1usize << e).collect();
        let slope = rate_check(&m, &[1.0], &ks, 1.5, 2, 10, 5, Some(1)).unwrap();
        assert!(slope.abs() < 0.3, "frozen-level slope {slope} not flat");
    }

    #[test]
    fn rate_check_single_rep_finite() {
        let m = TruncatedExponential::new();
        let ks = vec![256, 1024, 4096];
        let slope = rate_check(&m, &[1.0], &ks, 1.5, 2, 1, 77, None).unwrap();
        assert!(slope.is_finite());
    }

    #[test]
    fn rate_check_contract_violations() {
        let m = TruncatedExponential::new();
        assert!(rate_check(&m, &[1.0], &[256, 512], 1.5, 2, 1, 0, None).is_err());
        assert!(rate_check(&m, &[1.0], &[256, 300, 400], 1.5, 2, 1, 0, None).is_err());
    }
}
