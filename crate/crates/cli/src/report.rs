//! Collate per-run artifacts (subdirectories with `manifest.json` and
//! analysis CSVs) into sweep-level tables and plots: validation error vs
//! drive, dephasing vs drive, tilt and measurement rate vs drive, and the
//! windowed time series of a modulated run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::plot;
use traj_core::analysis::fit::nelder_mead;
use traj_core::io::{self, CsvField, CsvWriter};

struct RunArtifacts {
    dir: PathBuf,
    /// Adiabaticity parameter 2Ω/κ of the run's constant drive part.
    omega_ratio: f64,
    kappa: f64,
}

pub fn report(dir: &Path) -> anyhow::Result<()> {
    let mut runs = Vec::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("cannot read report directory {}", dir.display()))?
    {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let manifest_path = path.join("manifest.json");
        if !manifest_path.exists() {
            continue;
        }
        let manifest = io::read_manifest(&manifest_path)?;
        let omega = manifest.params.omega_rabi.constant_part();
        runs.push(RunArtifacts {
            dir: path,
            omega_ratio: 2.0 * omega / manifest.params.kappa,
            kappa: manifest.params.kappa,
        });
    }
    if runs.is_empty() {
        bail!(
            "no run subdirectories with manifest.json under {}",
            dir.display()
        );
    }
    runs.sort_by(|a, b| a.omega_ratio.total_cmp(&b.omega_ratio));

    rms_table(dir, &runs)?;
    dephasing_table(dir, &runs)?;
    tilt_rate_table(dir, &runs)?;
    windowed_table(dir, &runs)?;
    println!("report: collated {} runs -> {}", runs.len(), dir.display());
    Ok(())
}

/// Mean per-variant reconstruction error vs drive.
fn rms_table(dir: &Path, runs: &[RunArtifacts]) -> anyhow::Result<()> {
    let mut rows: Vec<(f64, String, [f64; 3])> = Vec::new();
    for run in runs {
        for rms_file in find_files(&run.dir, "rms.csv") {
            let body = std::fs::read_to_string(&rms_file)?;
            let mut by_variant: BTreeMap<String, ([f64; 3], usize)> = BTreeMap::new();
            for line in body.lines().skip(1) {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() < 5 {
                    continue;
                }
                let entry = by_variant
                    .entry(cols[1].to_string())
                    .or_insert(([0.0; 3], 0));
                for i in 0..3 {
                    entry.0[i] += cols[2 + i].parse::<f64>().unwrap_or(f64::NAN);
                }
                entry.1 += 1;
            }
            for (variant, (sum, count)) in by_variant {
                let n = count.max(1) as f64;
                rows.push((
                    run.omega_ratio,
                    variant,
                    [sum[0] / n, sum[1] / n, sum[2] / n],
                ));
            }
        }
    }
    if rows.is_empty() {
        return Ok(());
    }
    let mut csv = CsvWriter::create(
        &dir.join("rms_vs_drive.csv"),
        &["two_omega_over_kappa", "variant", "rms_x", "rms_y", "rms_z", "rms_avg"],
    )?;
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (ratio, variant, rms) in &rows {
        let avg = (rms[0] + rms[1] + rms[2]) / 3.0;
        csv.row(&[
            CsvField::Float(*ratio),
            CsvField::Str(variant.clone()),
            CsvField::Float(rms[0]),
            CsvField::Float(rms[1]),
            CsvField::Float(rms[2]),
            CsvField::Float(avg),
        ])?;
        series.entry(variant.clone()).or_default().push((*ratio, avg));
    }
    csv.finish()?;
    let chart: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(k, v)| (k.as_str(), v.clone()))
        .collect();
    plot::line_chart(
        &dir.join("rms_vs_drive.svg"),
        "Reconstruction error vs drive",
        "2 Omega / kappa",
        "mean rms",
        &chart,
    )?;
    Ok(())
}

/// Fitted ensemble dephasing vs drive.
fn dephasing_table(dir: &Path, runs: &[RunArtifacts]) -> anyhow::Result<()> {
    let mut pts = Vec::new();
    for run in runs {
        for file in find_files(&run.dir, "drift_fit.csv") {
            if let Some(cols) = first_data_row(&file)? {
                let gamma_d: f64 = cols[2].parse().unwrap_or(f64::NAN);
                let err: f64 = cols[3].parse().unwrap_or(f64::NAN);
                pts.push((run.omega_ratio, gamma_d, err));
            }
        }
    }
    if pts.is_empty() {
        return Ok(());
    }
    let mut csv = CsvWriter::create(
        &dir.join("dephasing_vs_drive.csv"),
        &["two_omega_over_kappa", "gamma_d", "gamma_d_err"],
    )?;
    for (x, g, e) in &pts {
        csv.row(&[CsvField::Float(*x), CsvField::Float(*g), CsvField::Float(*e)])?;
    }
    csv.finish()?;
    plot::line_chart(
        &dir.join("dephasing_vs_drive.svg"),
        "Ensemble dephasing vs drive",
        "2 Omega / kappa",
        "Gamma_d (rad/s)",
        &[("Gamma_d", pts.iter().map(|(x, g, _)| (*x, *g)).collect())],
    )?;
    Ok(())
}

/// Tilt and measurement rate vs drive, plus the simultaneous memory-time
/// fit of both curves.
fn tilt_rate_table(dir: &Path, runs: &[RunArtifacts]) -> anyhow::Result<()> {
    let mut pts: Vec<(f64, f64, f64, f64, f64, f64)> = Vec::new();
    for run in runs {
        for file in find_files(&run.dir, "diffusion_fit.csv") {
            if let Some(cols) = first_data_row(&file)? {
                let theta: f64 = cols[0].parse().unwrap_or(f64::NAN);
                let theta_err: f64 = cols[1].parse().unwrap_or(f64::NAN);
                let rate: f64 = cols[2].parse().unwrap_or(f64::NAN);
                let rate_err: f64 = cols[3].parse().unwrap_or(f64::NAN);
                pts.push((run.omega_ratio, run.kappa, theta, theta_err, rate, rate_err));
            }
        }
    }
    if pts.is_empty() {
        return Ok(());
    }
    let mut csv = CsvWriter::create(
        &dir.join("tilt_rate_vs_drive.csv"),
        &[
            "two_omega_over_kappa",
            "theta",
            "theta_err",
            "rate",
            "rate_err",
        ],
    )?;
    for (x, _, th, the, r, re) in &pts {
        csv.row(&[
            CsvField::Float(*x),
            CsvField::Float(*th),
            CsvField::Float(*the),
            CsvField::Float(*r),
            CsvField::Float(*re),
        ])?;
    }
    csv.finish()?;

    // simultaneous fit of theta = arctan(Omega tau_c) and
    // rate = rate0 / (1 + (Omega tau_c)^2)
    if pts.len() >= 2 {
        let kappa = pts[0].1;
        let rate_guess = pts.iter().map(|p| p.4).fold(0.0, f64::max).max(1e-3);
        let objective = |v: &[f64]| -> f64 {
            let (tau_c, rate0) = (v[0].abs(), v[1].abs());
            let mut chi2 = 0.0;
            for &(x, kp, th, the, r, re) in &pts {
                let omega = x * kp / 2.0;
                let th_model = (omega * tau_c).atan();
                let r_model = rate0 / (1.0 + (omega * tau_c).powi(2));
                chi2 += ((th - th_model) / the.max(1e-3)).powi(2);
                chi2 += ((r - r_model) / re.max(0.01 * rate_guess)).powi(2);
            }
            chi2
        };
        let best = nelder_mead(
            objective,
            &[2.0 / kappa, rate_guess],
            &[0.5 / kappa, 0.2 * rate_guess],
            400,
        );
        let mut csv = CsvWriter::create(
            &dir.join("memory_time_fit.csv"),
            &["tau_c_fit", "tau_c_expected", "rate0_fit"],
        )?;
        csv.row(&[
            CsvField::Float(best[0].abs()),
            CsvField::Float(2.0 / kappa),
            CsvField::Float(best[1].abs()),
        ])?;
        csv.finish()?;
    }

    plot::line_chart(
        &dir.join("tilt_rate_vs_drive.svg"),
        "Measurement-axis tilt and rate vs drive",
        "2 Omega / kappa",
        "theta (rad) / normalized rate",
        &[
            (
                "theta",
                pts.iter().map(|(x, _, th, ..)| (*x, *th)).collect(),
            ),
            (
                "rate / rate(0)",
                {
                    let r0 = pts
                        .iter()
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .map(|p| p.4)
                        .unwrap_or(1.0);
                    pts.iter().map(|(x, _, _, _, r, _)| (*x, r / r0)).collect()
                },
            ),
        ],
    )?;
    Ok(())
}

/// Windowed time series (drive recovery) from modulated runs.
fn windowed_table(dir: &Path, runs: &[RunArtifacts]) -> anyhow::Result<()> {
    for run in runs {
        for file in find_files(&run.dir, "windowed.csv") {
            let body = std::fs::read_to_string(&file)?;
            let mut omega_pts = Vec::new();
            let mut rate_pts = Vec::new();
            for line in body.lines().skip(1) {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() < 8 || cols[7] != "1" {
                    continue;
                }
                let t: f64 = cols[0].parse().unwrap_or(f64::NAN);
                omega_pts.push((t, cols[1].parse::<f64>().unwrap_or(f64::NAN)));
                rate_pts.push((t, cols[3].parse::<f64>().unwrap_or(f64::NAN)));
            }
            if omega_pts.is_empty() {
                continue;
            }
            let name = run
                .dir
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            let mut csv = CsvWriter::create(
                &dir.join(format!("windowed_{name}.csv")),
                &["t", "omega", "rate"],
            )?;
            for ((t, om), (_, r)) in omega_pts.iter().zip(&rate_pts) {
                csv.row(&[
                    CsvField::Float(*t),
                    CsvField::Float(*om),
                    CsvField::Float(*r),
                ])?;
            }
            csv.finish()?;
            plot::line_chart(
                &dir.join(format!("windowed_{name}.svg")),
                "Recovered drive and measurement rate",
                "t (s)",
                "rad/s",
                &[("omega(t)", omega_pts), ("2 eta Gamma_m(t)", rate_pts)],
            )?;
        }
    }
    Ok(())
}

fn find_files(dir: &Path, name: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let direct = dir.join(name);
    if direct.exists() {
        found.push(direct);
    }
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                let nested = path.join(name);
                if nested.exists() {
                    found.push(nested);
                }
            }
        }
    }
    found
}

fn first_data_row(path: &Path) -> anyhow::Result<Option<Vec<String>>> {
    let body = std::fs::read_to_string(path)?;
    Ok(body
        .lines()
        .nth(1)
        .map(|l| l.split(',').map(str::to_string).collect()))
}
