//! Report emission: per-replication CSV and SVG histograms.
//!
//! Output is byte-stable given an identical report: floats print with 17
//! significant digits, and everything else is formatted deterministically.
//! The wall-clock column is the one field that varies between otherwise
//! identical campaign runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::McReport;

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Renders the per-replication CSV:
/// `rep,n,k,j,J,theta_hat_1..b,obj_value,a_n,status,seconds`.
pub fn render_csv(report: &McReport) -> String {
    let b = report.theta0.len();
    let mut out = String::new();
    out.push_str("rep,n,k,j,J");
    for q in 1..=b {
        let _ = write!(out, ",theta_hat_{q}");
    }
    out.push_str(",obj_value,a_n,status,seconds\n");
    for r in &report.records {
        let _ = write!(out, "{},{},{},{},{}", r.rep, r.n, r.k, r.j, r.big_j);
        for q in 0..b {
            let _ = write!(out, ",{}", fmt_float(r.theta_hat[q]));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            fmt_float(r.obj_value),
            r.a_n,
            r.status.as_str(),
            fmt_float(r.seconds)
        );
    }
    out
}

pub fn emit_csv(report: &McReport, path: &Path) -> Result<()> {
    fs::write(path, render_csv(report)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Histogram of `√n(θ̂_q - θ₀_q)` for the largest sample size in the report,
/// with the reference normal curve `N(0, I(θ₀)_{qq})` overlaid (the
/// Cramér–Rao bound; proportional-budget campaigns visibly exceed it).
pub fn render_svg_hist(report: &McReport, coordinate: usize) -> Result<String> {
    let b = report.theta0.len();
    if coordinate >= b {
        return Err(Error::contract(format!(
            "coordinate {coordinate} out of range for dimension {b}"
        )));
    }
    let n = report
        .summaries
        .iter()
        .map(|s| s.n)
        .max()
        .ok_or_else(|| Error::contract("report has no summaries"))?;
    let scale = (n as f64).sqrt();
    let values: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.n == n && r.status.is_usable())
        .map(|r| scale * (r.theta_hat[coordinate] - report.theta0[coordinate]))
        .collect();
    if values.is_empty() {
        return Err(Error::contract("no usable replications to plot"));
    }
    let count = values.len();
    let bins = ((count as f64).sqrt().ceil() as usize).clamp(8, 48);
    let sigma2 = report.cramer_rao.get(coordinate, coordinate);
    let sigma = sigma2.sqrt();
    let lo = values
        .iter()
        .cloned()
        .fold(f64::MAX, f64::min)
        .min(-3.2 * sigma);
    let hi = values
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(3.2 * sigma);
    let width = hi - lo;
    let bin_w = width / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &values {
        let idx = (((v - lo) / bin_w) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), count);

    // layout
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (50.0, 15.0, 20.0, 35.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let norm_peak = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let max_density = counts
        .iter()
        .map(|&c| c as f64 / (count as f64 * bin_w))
        .fold(norm_peak, f64::max)
        * 1.08;
    let x_of = |v: f64| ml + (v - lo) / width * plot_w;
    let y_of = |d: f64| mt + plot_h * (1.0 - d / max_density);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">sqrt(n)(theta_hat_{} - theta0), n = {}, reps = {}</text>",
        ml,
        coordinate + 1,
        n,
        count
    );
    // bars
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let density = c as f64 / (count as f64 * bin_w);
        let x = x_of(lo + i as f64 * bin_w);
        let y = y_of(density);
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#7aa6c2\" stroke=\"#35506b\" stroke-width=\"0.5\"/>",
            x,
            y,
            plot_w / bins as f64,
            mt + plot_h - y
        );
    }
    // reference normal curve
    let mut pts = String::new();
    for i in 0..=200 {
        let v = lo + width * i as f64 / 200.0;
        let d = (-(v * v) / (2.0 * sigma2)).exp() * norm_peak;
        let _ = write!(pts, "{:.2},{:.2} ", x_of(v), y_of(d));
    }
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#b03a2e\" stroke-width=\"1.5\"/>",
        pts.trim_end()
    );
    // axis
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        mt + plot_h,
        w - mr,
        mt + plot_h
    );
    for t in [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
        let v = t * sigma;
        if v < lo || v > hi {
            continue;
        }
        let x = x_of(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"black\"/>",
            mt + plot_h,
            mt + plot_h + 4.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{:.2}</text>",
            mt + plot_h + 15.0,
            v
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_svg_hist(report: &McReport, coordinate: usize, path: &Path) -> Result<()> {
    let svg = render_svg_hist(report, coordinate)?;
    fs::write(path, svg).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_montecarlo, McConfig};
    use crate::inference::{EstimationConfig, KRule};

    fn report() -> McReport {
        run_montecarlo(&McConfig {
            model: "trunc_exp".to_string(),
            theta0: vec![1.0],
            n_list: vec![64],
            regime: KRule::S3 { kappa: 2.0 },
            reps: 6,
            master_seed: 31,
            estimation: EstimationConfig::default(),
            workers: Some(2),
        })
        .unwrap()
    }

    #[test]
    fn csv_has_header_plus_one_row_per_rep() {
        let rep = report();
        let csv = render_csv(&rep);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + rep.records.len());
        assert!(lines[0].starts_with("rep,n,k,j,J,theta_hat_1,obj_value"));
        // floats carry 17 significant digits
        assert!(lines[1].contains('e'));
    }

    #[test]
    fn csv_reemission_is_byte_identical() {
        let rep = report();
        assert_eq!(render_csv(&rep), render_csv(&rep));
    }

    #[test]
    fn svg_bins_cover_all_usable_reps() {
        let rep = report();
        let svg = render_svg_hist(&rep, 0).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert_eq!(render_svg_hist(&rep, 0).unwrap(), svg);
        assert!(render_svg_hist(&rep, 3).is_err());
    }

    #[test]
    fn emit_to_files() {
        let rep = report();
        let dir = std::env::temp_dir().join("simdist_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("reps.csv");
        let svg_path = dir.join("hist.svg");
        emit_csv(&rep, &csv_path).unwrap();
        emit_svg_hist(&rep, 0, &svg_path).unwrap();
        assert!(csv_path.exists() && svg_path.exists());
        let bad = Path::new("/nonexistent_dir_zzz/file.csv");
        assert!(matches!(emit_csv(&rep, bad), Err(Error::Io { .. })));
    }
}
