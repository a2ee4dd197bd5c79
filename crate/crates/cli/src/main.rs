//! Command-line front end for the simdist estimation library.
//!
//! Exit codes: 0 on success, 2 on configuration errors (bad arguments,
//! unknown model, unreadable config or data), 3 on numeric failures during
//! a run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use simdist::harness::{run_montecarlo, McConfig};
use simdist::inference::{indirect_inference_estimate, EstimationConfig, KRule};
use simdist::model::model_by_id;
use simdist::report::{emit_csv, emit_svg_hist};

#[derive(Parser)]
#[command(name = "simdist")]
#[command(about = "Simulation-based minimum-distance estimation on [0,1]")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "UPPER")]
enum RegimeArg {
    #[value(alias = "s1")]
    S1,
    #[value(alias = "s2")]
    S2,
    #[value(alias = "s3")]
    S3,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the model parameter from a data file (one value per line).
    Estimate {
        /// Model identifier: trunc_exp or tilted_quad.
        #[arg(long)]
        model: String,
        /// CSV/text file with one observation in [0,1] per line.
        #[arg(long)]
        data: PathBuf,
        /// Simulation-budget regime.
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Budget multiplier for S1 (k = m·n²).
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        /// Budget ratio for S3 (k = κ·n).
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        /// Seed for the shared simulation draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also compute the plug-in variance and 95% intervals.
        #[arg(long)]
        variance: bool,
        /// Write the result as JSON here (stdout summary always printed).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo campaign described by a JSON config file.
    Montecarlo {
        /// JSON document mirroring the campaign configuration fields.
        #[arg(long)]
        config: PathBuf,
        /// Directory for the per-replication CSV, report JSON and histograms.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate the density-estimator MISE rate over a budget sweep.
    Ratecheck {
        #[arg(long)]
        model: String,
        /// True parameter, comma-separated for multi-dimensional models.
        #[arg(long, value_delimiter = ',')]
        theta0: Vec<f64>,
        #[arg(long)]
        kmin: usize,
        #[arg(long)]
        kmax: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1.5)]
        tau: f64,
        /// Spline order for the fits.
        #[arg(long, default_value_t = 2)]
        order: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in invariant suites.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<ConfigError>().is_some();
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

/// Marker for failures that are the caller's configuration rather than a
/// numeric breakdown.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Estimate {
            model,
            data,
            regime,
            m,
            kappa,
            seed,
            variance,
            out,
        } => estimate(
            &model,
            &data,
            regime,
            m,
            kappa,
            seed,
            variance,
            out.as_deref(),
        ),
        Command::Montecarlo { config, out_dir } => montecarlo(&config, &out_dir),
        Command::Ratecheck {
            model,
            theta0,
            kmin,
            kmax,
            reps,
            tau,
            order,
            seed,
        } => ratecheck(&model, &theta0, kmin, kmax, reps, tau, order, seed),
        Command::Selftest => selftest(),
    }
}

fn read_data(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read data file {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // accept one value per line or comma-separated rows
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| config_err(format!("bad number on line {}", lineno + 1)))?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(config_err("data file contains no observations"));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(config_err("observations must lie in [0,1]"));
    }
    Ok(values)
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    model_id: &str,
    data_path: &Path,
    regime: RegimeArg,
    m: f64,
    kappa: f64,
    seed: u64,
    variance: bool,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let model =
        model_by_id(model_id).ok_or_else(|| config_err(format!("unknown model '{model_id}'")))?;
    let data = read_data(data_path)?;
    let k_rule = match regime {
        RegimeArg::S1 => KRule::S1 { m },
        RegimeArg::S2 => KRule::S2,
        RegimeArg::S3 => KRule::S3 { kappa },
    };
    let cfg = EstimationConfig {
        k_rule,
        seed,
        compute_variance: variance,
        ..EstimationConfig::default()
    };
    let result = indirect_inference_estimate(&data, model.as_ref(), &cfg)
        .map_err(|e| anyhow!("estimation failed: {e}"))?;
    let json = serde_json::to_string_pretty(&result).context("serializing result")?;
    if let Some(path) = out {
        std::fs::write(path, &json).map_err(|e| anyhow!("cannot write {}: {e}", path.display()))?;
    }
    println!(
        "theta_hat = {:?}  (n = {}, k = {}, j = {}, J = {}, status = {})",
        result.theta_hat,
        result.n,
        result.k,
        result.j,
        result.big_j,
        result.status.as_str()
    );
    if let Some(ci) = &result.ci_95 {
        for (q, (lo, hi)) in ci.iter().enumerate() {
            println!("ci95[{}] = [{lo:.6}, {hi:.6}]", q + 1);
        }
    }
    if out.is_none() {
        println!("{json}");
    }
    Ok(())
}

fn montecarlo(config_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        config_err(format!(
            "cannot read config file {}: {e}",
            config_path.display()
        ))
    })?;
    let cfg: McConfig = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("invalid campaign config: {e}")))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", out_dir.display())))?;
    let report = run_montecarlo(&cfg).map_err(|e| anyhow!("campaign failed: {e}"))?;

    let csv_path = out_dir.join("replications.csv");
    emit_csv(&report, &csv_path).map_err(|e| anyhow!("{e}"))?;
    for q in 0..cfg.theta0.len() {
        let svg_path = out_dir.join(format!("hist_theta_{}.svg", q + 1));
        emit_svg_hist(&report, q, &svg_path).map_err(|e| anyhow!("{e}"))?;
    }
    let report_path = out_dir.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).context("serializing report")?,
    )
    .map_err(|e| anyhow!("cannot write {}: {e}", report_path.display()))?;

    for s in &report.summaries {
        println!(
            "n = {:6}  k = {:9}  used = {}/{}  var(sqrt(n)(theta-theta0)) diag = {:?}",
            s.n,
            s.k,
            s.used,
            s.used + s.failures,
            s.cov_scaled.diag()
        );
        if let Some(cov) = &s.coverage {
            println!("            ci coverage = {cov:?}");
        }
    }
    println!(
        "reference Cramer-Rao diagonal = {:?}",
        report.cramer_rao.diag()
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ratecheck(
    model_id: &str,
    theta0: &[f64],
    kmin: usize,
    kmax: usize,
    reps: usize,
    tau: f64,
    order: u32,
    seed: u64,
) -> anyhow::Result<()> {
    let model =
        model_by_id(model_id).ok_or_else(|| config_err(format!("unknown model '{model_id}'")))?;
    if kmin < 2 || kmax < 4 * kmin {
        return Err(config_err("need kmax >= 4*kmin and kmin >= 2"));
    }
    // octave-spaced budgets
    let mut ks = Vec::new();
    let mut k = kmin;
    while k <= kmax {
        ks.push(k);
        k *= 2;
    }
    let slope =
        simdist::harness::rate_check(model.as_ref(), theta0, &ks, tau, order, reps, seed, None)
            .map_err(|e| anyhow!("rate check failed: {e}"))?;
    println!(
        "budgets {:?}: log-log MISE slope = {slope:.4} (rate-rule theory: {:.4})",
        ks,
        -2.0 * tau / (2.0 * tau + 1.0)
    );
    Ok(())
}

fn selftest() -> anyhow::Result<()> {
    use simdist::gram::{gram_matrix, inf_norm_inverse_gram};
    use simdist::spline::{eval_bspline, SplineBasis};

    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("[{}] {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // partition of unity
    let mut worst = 0.0f64;
    for &(r, j) in &[(2u32, 4u32), (3, 3), (4, 5)] {
        let b = SplineBasis::new(r, j).unwrap();
        let (lo, hi) = b.index_range();
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let sum: f64 = (lo..=hi).map(|l| b.eval(l, x, 0).unwrap()).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    check("partition of unity within 1e-12", worst <= 1e-12);

    // derivative recurrence
    let mut worst = 0.0f64;
    for r in 2..=4u32 {
        for i in 0..400 {
            let u = -0.5 + i as f64 * 0.0125;
            let lhs = eval_bspline(r, u, 1).unwrap();
            let rhs = eval_bspline(r - 1, u, 0).unwrap() - eval_bspline(r - 1, u - 1.0, 0).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    check("derivative recurrence within 1e-14", worst <= 1e-14);

    // Gram bandedness and diagnostic stability
    let mut banded = true;
    for r in 2..=4u32 {
        let b = SplineBasis::new(r, 4).unwrap();
        let g = gram_matrix(&b).unwrap();
        for i in 0..b.dim() {
            for k2 in 0..b.dim() {
                if i.abs_diff(k2) >= r as usize && g.matrix().get(i, k2) != 0.0 {
                    banded = false;
                }
            }
        }
    }
    check("Gram bandedness exact", banded);

    let mut stable = true;
    for r in 2..=4u32 {
        let vals: Vec<f64> = (5..=8)
            .map(|j| inf_norm_inverse_gram(&gram_matrix(&SplineBasis::new(r, j).unwrap()).unwrap()))
            .collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        if max / min >= 1.05 {
            stable = false;
        }
    }
    check("inverse-Gram norm stable across levels", stable);

    // objective equivalence on a quick case
    {
        use simdist::density::fit_from_points;
        use simdist::model::{draw_sample, TruncatedExponential};
        use simdist::objective::{eval_qnk, eval_qnk_direct, precompute};
        let m = TruncatedExponential::new();
        let data = draw_sample(&m, &[1.0], 1000, 1);
        let bn = SplineBasis::new(2, 3).unwrap();
        let gn = gram_matrix(&bn).unwrap();
        let p_n = fit_from_points(&bn, &gn, &data).unwrap();
        let bj = SplineBasis::new(4, 4).unwrap();
        let pre = precompute(&p_n, &bj);
        let gamma: Vec<f64> = (0..bj.dim()).map(|i| 0.5 + 0.01 * i as f64).collect();
        let cand = simdist::density::SplineDensity::from_coeffs(
            bj,
            gamma.clone(),
            simdist::density::DensitySource::Observed { n: 1 },
        );
        let a = eval_qnk(&pre, &gamma).unwrap();
        let b = eval_qnk_direct(&p_n, &cand, 40);
        check(
            "linear-quadratic form matches direct quadrature",
            pre.a_n_holds() && (a - b).abs() <= 1e-8,
        );
    }

    if failures == 0 {
        println!("selftest: all checks passed");
        Ok(())
    } else {
        Err(anyhow!("selftest: {failures} check(s) failed"))
    }
}
