//! Small fitting toolbox: weighted linear least squares, a derivative-free
//! simplex refiner, and sinusoid/exponential fits built from both.

use crate::{Result, TrajError};

/// Weighted least squares for two parameters: rows are
/// `(predictors, target, weight)`. Returns `(beta, stderr)`.
pub fn wls2(rows: &[([f64; 2], f64, f64)]) -> Result<([f64; 2], [f64; 2])> {
    let mut a11 = 0.0;
    let mut a12 = 0.0;
    let mut a22 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    let mut w_sum = 0.0;
    for (x, y, w) in rows {
        a11 += w * x[0] * x[0];
        a12 += w * x[0] * x[1];
        a22 += w * x[1] * x[1];
        b1 += w * x[0] * y;
        b2 += w * x[1] * y;
        w_sum += w;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-14 * (a11 * a22).abs().max(1e-300) || w_sum <= 0.0 {
        return Err(TrajError::Analysis(
            "rank-deficient design in least-squares fit".into(),
        ));
    }
    let beta = [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det];
    // weighted residual variance
    let mut rss = 0.0;
    for (x, y, w) in rows {
        let r = y - beta[0] * x[0] - beta[1] * x[1];
        rss += w * r * r;
    }
    let dof = (rows.len() as f64 - 2.0).max(1.0);
    let s2 = rss / dof * rows.len() as f64 / w_sum;
    let stderr = [(s2 * a22 / det).sqrt(), (s2 * a11 / det).sqrt()];
    Ok((beta, stderr))
}

/// Weighted least squares for a single scale parameter `y ≈ β x`.
pub fn wls1(rows: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut w_sum = 0.0;
    for (x, y, w) in rows {
        sxx += w * x * x;
        sxy += w * x * y;
        w_sum += w;
    }
    if sxx <= 0.0 || w_sum <= 0.0 {
        return Err(TrajError::Analysis("degenerate single-parameter fit".into()));
    }
    let beta = sxy / sxx;
    let mut rss = 0.0;
    for (x, y, w) in rows {
        let r = y - beta * x;
        rss += w * r * r;
    }
    let dof = (rows.len() as f64 - 1.0).max(1.0);
    let s2 = rss / dof * rows.len() as f64 / w_sum;
    Ok((beta, (s2 / sxx).sqrt()))
}

/// Weighted straight-line fit `y ≈ a + b x`; returns
/// `(intercept, slope, slope_err, r_squared)`.
pub fn wls_line(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if xs.len() < 2 {
        return Err(TrajError::Analysis("line fit needs >= 2 points".into()));
    }
    let rows: Vec<([f64; 2], f64, f64)> = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((&x, &y), &w)| ([1.0, x], y, w))
        .collect();
    let (beta, err) = wls2(&rows)?;
    let w_sum: f64 = ws.iter().sum();
    let y_mean: f64 = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / w_sum;
    let ss_tot: f64 = ys
        .iter()
        .zip(ws)
        .map(|(y, w)| w * (y - y_mean).powi(2))
        .sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((&x, &y), &w)| w * (y - beta[0] - beta[1] * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((beta[0], beta[1], err[1], r2))
}

/// Nelder–Mead simplex minimization.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: &[f64],
    max_iter: usize,
) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        let fv = f(&v);
        simplex.push((v, fv));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + (centroid[j] - simplex[n].0[j]))
            .collect();
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 2.0 * (centroid[j] - simplex[n].0[j]))
                .collect();
            let fe = f(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + 0.5 * (simplex[n].0[j] - centroid[j]))
                .collect();
            let fc = f(&contract);
            if fc < simplex[n].1 {
                simplex[n] = (contract, fc);
            } else {
                let best_v = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = (0..n)
                        .map(|j| best_v[j] + 0.5 * (entry.0[j] - best_v[j]))
                        .collect();
                    entry.1 = f(&shrunk);
                    entry.0 = shrunk;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].0.clone()
}

/// `y ≈ offset + amp · sin(2π t/period + phase)`, `amp ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidFit {
    pub offset: f64,
    pub amp: f64,
    pub period: f64,
    pub phase: f64,
}

impl SinusoidFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amp * (2.0 * std::f64::consts::PI * t / self.period + self.phase).sin()
    }
}

/// Coarse period scan with an exact linear subsolve per period, refined by
/// Nelder–Mead on the period.
pub fn fit_sinusoid(
    ts: &[f64],
    ys: &[f64],
    ws: &[f64],
    period_range: (f64, f64),
) -> Result<SinusoidFit> {
    if ts.len() < 5 {
        return Err(TrajError::Analysis("sinusoid fit needs >= 5 points".into()));
    }
    let solve_at = |period: f64| -> (f64, [f64; 3]) {
        // linear LS for (offset, a, b) with y = offset + a sin + b cos
        let om = 2.0 * std::f64::consts::PI / period;
        let mut m = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for ((&t, &y), &w) in ts.iter().zip(ys).zip(ws) {
            let basis = [1.0, (om * t).sin(), (om * t).cos()];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += w * basis[i] * basis[j];
                }
                rhs[i] += w * basis[i] * y;
            }
        }
        let beta = match solve3(&m, &rhs) {
            Some(b) => b,
            None => return (f64::INFINITY, [0.0; 3]),
        };
        let mut rss = 0.0;
        for ((&t, &y), &w) in ts.iter().zip(ys).zip(ws) {
            let pred = beta[0] + beta[1] * (om * t).sin() + beta[2] * (om * t).cos();
            rss += w * (y - pred).powi(2);
        }
        (rss, beta)
    };

    let (p_lo, p_hi) = period_range;
    let mut best = (f64::INFINITY, p_lo, [0.0f64; 3]);
    let n_scan = 240;
    for k in 0..=n_scan {
        let period = p_lo + (p_hi - p_lo) * k as f64 / n_scan as f64;
        let (rss, beta) = solve_at(period);
        if rss < best.0 {
            best = (rss, period, beta);
        }
    }
    let refined = nelder_mead(
        |x| solve_at(x[0].clamp(p_lo, p_hi)).0,
        &[best.1],
        &[((p_hi - p_lo) / n_scan as f64).max(p_lo * 1e-9)],
        120,
    );
    let period = refined[0].clamp(p_lo, p_hi);
    let (_, beta) = solve_at(period);
    let amp = (beta[1] * beta[1] + beta[2] * beta[2]).sqrt();
    Ok(SinusoidFit {
        offset: beta[0],
        amp,
        period,
        phase: beta[2].atan2(beta[1]),
    })
}

fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = *m;
    let mut b = *rhs;
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..3 {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some([b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]])
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
