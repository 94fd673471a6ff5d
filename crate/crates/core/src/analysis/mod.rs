//! Statistical post-processing of trajectories: binned drift/diffusion maps,
//! parameter fits, tilt and rate extraction, windowed time-dependence
//! recovery, tomographic validation and efficiency calibration.

pub mod fit;

use serde::{Deserialize, Serialize};

use crate::model::{BlochState, PhysicalParams, TomoAxis, Trajectory, VoltageRecord};
use crate::{Result, TrajError};
use fit::{wls1, wls2, wls_line};

/// Analysis plane; increments are projected onto the named pair of
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Yz,
    Xz,
    Xy,
}

impl Plane {
    pub fn project(&self, s: &BlochState) -> (f64, f64) {
        match self {
            Plane::Yz => (s.y, s.z),
            Plane::Xz => (s.x, s.z),
            Plane::Xy => (s.x, s.y),
        }
    }
}

/// Uniform binning of the unit square `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub plane: Plane,
    pub n_bins: usize,
    pub min_samples: usize,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            plane: Plane::Yz,
            n_bins: 20,
            min_samples: 50,
        }
    }
}

impl BinGrid {
    pub fn new(plane: Plane, n_bins: usize, min_samples: usize) -> Result<Self> {
        let grid = Self {
            plane,
            n_bins,
            min_samples,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 4 {
            return Err(TrajError::Analysis("n_bins must be >= 4".into()));
        }
        if self.min_samples < 10 {
            return Err(TrajError::Analysis("min_samples must be >= 10".into()));
        }
        Ok(())
    }

    fn index(&self, u: f64, v: f64) -> usize {
        let n = self.n_bins;
        let iu = (((u + 1.0) / 2.0 * n as f64) as isize).clamp(0, n as isize - 1) as usize;
        let iv = (((v + 1.0) / 2.0 * n as f64) as isize).clamp(0, n as isize - 1) as usize;
        iv * n + iu
    }

    fn center(&self, idx: usize) -> (f64, f64) {
        let n = self.n_bins;
        let iu = idx % n;
        let iv = idx / n;
        (
            -1.0 + (iu as f64 + 0.5) * 2.0 / n as f64,
            -1.0 + (iv as f64 + 0.5) * 2.0 / n as f64,
        )
    }
}

/// Per-bin increment statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub center: (f64, f64),
    pub mean_drift: (f64, f64),
    /// Sample covariance of the increments (1/m normalization).
    pub cov: [[f64; 2]; 2],
    /// Dominant eigenvector scaled so that `|v|² = λ_max`: the direction of
    /// the backaction kicks with their standard-deviation magnitude. Sign
    /// fixed to a positive second component (ties toward positive first).
    pub v: (f64, f64),
    pub count: usize,
}

#[derive(Clone, Copy, Default)]
struct BinAccum {
    n: usize,
    su: f64,
    sv: f64,
    suu: f64,
    suv: f64,
    svv: f64,
}

impl BinAccum {
    fn push(&mut self, du: f64, dv: f64) {
        self.n += 1;
        self.su += du;
        self.sv += dv;
        self.suu += du * du;
        self.suv += du * dv;
        self.svv += dv * dv;
    }

    fn stats(&self, center: (f64, f64)) -> BinStats {
        let m = self.n as f64;
        let mu = self.su / m;
        let mv = self.sv / m;
        let cuu = self.suu / m - mu * mu;
        let cuv = self.suv / m - mu * mv;
        let cvv = self.svv / m - mv * mv;
        let (lambda_max, mut eu, mut ev) = dominant_eig_2x2(cuu, cuv, cvv);
        if ev < 0.0 || (ev == 0.0 && eu < 0.0) {
            eu = -eu;
            ev = -ev;
        }
        let scale = lambda_max.sqrt();
        BinStats {
            center,
            mean_drift: (mu, mv),
            cov: [[cuu, cuv], [cuv, cvv]],
            v: (scale * eu, scale * ev),
            count: self.n,
        }
    }
}

/// Largest eigenvalue and unit eigenvector of a symmetric 2x2 matrix.
fn dominant_eig_2x2(a: f64, b: f64, d: f64) -> (f64, f64, f64) {
    let half_tr = (a + d) / 2.0;
    let disc = (((a - d) / 2.0).powi(2) + b * b).sqrt();
    let lambda = half_tr + disc;
    // eigenvector from the better-conditioned row
    let (mut eu, mut ev) = if (lambda - a).abs() > (lambda - d).abs() {
        (b, lambda - a)
    } else {
        (lambda - d, b)
    };
    let norm = (eu * eu + ev * ev).sqrt();
    if norm < 1e-300 {
        (lambda.max(0.0), 0.0, 1.0)
    } else {
        eu /= norm;
        ev /= norm;
        (lambda.max(0.0), eu, ev)
    }
}

/// Bin Bloch-vector increments by their starting point. Bins with fewer
/// than `grid.min_samples` increments are dropped.
pub fn bin_increments(trajectories: &[Trajectory], grid: &BinGrid) -> Result<Vec<BinStats>> {
    bin_increments_steps(trajectories, grid, 0, usize::MAX)
}

/// Like [`bin_increments`] but restricted to increments whose starting step
/// index lies in `[step_from, step_to)`.
pub fn bin_increments_steps(
    trajectories: &[Trajectory],
    grid: &BinGrid,
    step_from: usize,
    step_to: usize,
) -> Result<Vec<BinStats>> {
    grid.validate()?;
    if !trajectories.iter().any(|t| t.states.len() >= 2) {
        return Err(TrajError::Analysis(
            "bin_increments needs at least one trajectory with two steps".into(),
        ));
    }
    let mut accum = vec![BinAccum::default(); grid.n_bins * grid.n_bins];
    for traj in trajectories {
        if traj.states.len() < 2 {
            continue;
        }
        let hi = step_to.min(traj.states.len() - 1);
        for k in step_from..hi {
            let (u, v) = grid.plane.project(&traj.states[k]);
            let (u1, v1) = grid.plane.project(&traj.states[k + 1]);
            accum[grid.index(u, v)].push(u1 - u, v1 - v);
        }
    }
    let bins: Vec<BinStats> = accum
        .iter()
        .enumerate()
        .filter(|(_, a)| a.n >= grid.min_samples)
        .map(|(idx, a)| a.stats(grid.center(idx)))
        .collect();
    if bins.is_empty() {
        return Err(TrajError::Analysis(format!(
            "no bin reached min_samples = {}",
            grid.min_samples
        )));
    }
    Ok(bins)
}

/// Drift-fit result for `d̄y = (-Γ_d y + Ω z) dt`, `d̄z = -Ω y dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub omega: f64,
    pub omega_err: f64,
    pub gamma_d: f64,
    pub gamma_d_err: f64,
}

/// Count-weighted least squares of the binned mean drift against the
/// Lindblad drift field.
pub fn fit_drift(bins: &[BinStats], dt: f64) -> Result<DriftFit> {
    if bins.len() < 6 {
        return Err(TrajError::Analysis(format!(
            "fit_drift needs >= 6 bins, got {}",
            bins.len()
        )));
    }
    // unknowns beta = (gamma_d, omega)
    let mut rows = Vec::with_capacity(bins.len() * 2);
    for b in bins {
        let (y, z) = b.center;
        let w = b.count as f64;
        rows.push(([-y * dt, z * dt], b.mean_drift.0, w));
        rows.push(([0.0, -y * dt], b.mean_drift.1, w));
    }
    let (beta, err) = wls2(&rows)?;
    Ok(DriftFit {
        omega: beta[1],
        omega_err: err[1],
        gamma_d: beta[0],
        gamma_d_err: err[0],
    })
}

/// Mean angle between the diffusion eigenvectors near the origin and the
/// `z`-axis, signed by the `y` component. Returns `(theta, stderr)`.
pub fn extract_tilt(bins: &[BinStats], origin_region: f64) -> Result<(f64, f64)> {
    let angles: Vec<f64> = bins
        .iter()
        .filter(|b| b.center.0.abs() <= origin_region && b.center.1.abs() <= origin_region)
        .map(|b| b.v.0.atan2(b.v.1))
        .collect();
    if angles.len() < 3 {
        return Err(TrajError::Analysis(format!(
            "extract_tilt needs >= 3 bins inside |y|,|z| <= {origin_region}, got {}",
            angles.len()
        )));
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let var = angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Diffusion-fit result: the measurement rate `2ηΓ_m` in the (rotated)
/// measurement frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFit {
    pub rate: f64,
    pub rate_err: f64,
}

/// Undo the measured tilt (the frame rotation taking the tilted axis back
/// onto `ẑ`), then fit the standard-deviation field
/// `(v_y', v_z') = c (-z'y', 1 - z'²)` — the directional square root of the
/// diffusion law — and report the rate `2ηΓ_m = c²/dt`. The eigenvector
/// sign is ambiguous, so each bin's `v` is aligned with the model field
/// before fitting.
pub fn fit_diffusion(bins: &[BinStats], theta: f64, dt: f64) -> Result<DiffusionFit> {
    let (s, c) = theta.sin_cos();
    let mut rows = Vec::with_capacity(bins.len() * 2);
    for b in bins {
        let (y, z) = b.center;
        let (yr, zr) = (y * c - z * s, y * s + z * c);
        let (vy, vz) = b.v;
        let (mut vyr, mut vzr) = (vy * c - vz * s, vy * s + vz * c);
        let (fy, fz) = (-zr * yr, 1.0 - zr * zr);
        if vyr * fy + vzr * fz < 0.0 {
            vyr = -vyr;
            vzr = -vzr;
        }
        let w = b.count as f64;
        rows.push((fy, vyr, w));
        rows.push((fz, vzr, w));
    }
    let (coeff, coeff_err) = wls1(&rows)?;
    let rate = coeff * coeff / dt;
    if !rate.is_finite() {
        return Err(TrajError::Analysis("non-finite diffusion fit".into()));
    }
    Ok(DiffusionFit {
        rate,
        rate_err: 2.0 * coeff.abs() * coeff_err / dt,
    })
}

/// One time window of [`windowed_analysis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowedPoint {
    pub t_center: f64,
    pub omega: f64,
    pub omega_err: f64,
    pub rate: f64,
    pub rate_err: f64,
    pub theta: f64,
    pub n_bins: usize,
    /// False when the trajectories had not spread over enough bins for a
    /// reliable fit (reported as a gap).
    pub ok: bool,
}

/// Split the trajectories into consecutive windows and re-run the drift and
/// diffusion extraction inside each window.
pub fn windowed_analysis(
    trajectories: &[Trajectory],
    grid: &BinGrid,
    window: f64,
) -> Result<Vec<WindowedPoint>> {
    let dt = trajectories
        .first()
        .map(|t| t.dt)
        .ok_or_else(|| TrajError::Analysis("windowed_analysis needs trajectories".into()))?;
    if window < 5.0 * dt {
        return Err(TrajError::Analysis(format!(
            "window {window} shorter than 5 dt = {}",
            5.0 * dt
        )));
    }
    let steps_per_window = (window / dt).round() as usize;
    let max_steps = trajectories
        .iter()
        .map(|t| t.states.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    let n_windows = max_steps / steps_per_window;
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let from = w * steps_per_window;
        let to = from + steps_per_window;
        let t_center = (from + steps_per_window / 2) as f64 * dt;
        let gap = |n_bins| WindowedPoint {
            t_center,
            omega: f64::NAN,
            omega_err: f64::NAN,
            rate: f64::NAN,
            rate_err: f64::NAN,
            theta: f64::NAN,
            n_bins,
            ok: false,
        };
        let bins = match bin_increments_steps(trajectories, grid, from, to) {
            Ok(b) => b,
            Err(_) => {
                out.push(gap(0));
                continue;
            }
        };
        if bins.len() < 6 {
            out.push(gap(bins.len()));
            continue;
        }
        let drift = match fit_drift(&bins, dt) {
            Ok(d) => d,
            Err(_) => {
                out.push(gap(bins.len()));
                continue;
            }
        };
        let theta = extract_tilt(&bins, 0.25).map(|(t, _)| t).unwrap_or(0.0);
        let diffusion = match fit_diffusion(&bins, theta, dt) {
            Ok(d) => d,
            Err(_) => {
                out.push(gap(bins.len()));
                continue;
            }
        };
        out.push(WindowedPoint {
            t_center,
            omega: drift.omega,
            omega_err: drift.omega_err,
            rate: diffusion.rate,
            rate_err: diffusion.rate_err,
            theta,
            n_bins: bins.len(),
            ok: true,
        });
    }
    Ok(out)
}

/// One prediction/label pair entering the tomographic validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSample {
    /// Predicted coordinate at the final step, in `[-1, 1]`.
    pub prediction: f64,
    pub axis: TomoAxis,
    /// Projective outcome, 0 or 1.
    pub outcome: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationBin {
    pub prediction: f64,
    pub tomography: f64,
    pub count: usize,
    pub bernoulli_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisValidation {
    pub axis: TomoAxis,
    pub epsilon: f64,
    pub bins: Vec<ValidationBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_bins: usize,
    /// Bin width `δ = 2/n_bins`.
    pub delta: f64,
    pub per_axis: Vec<AxisValidation>,
}

impl ValidationReport {
    pub fn epsilon_for(&self, axis: TomoAxis) -> Option<f64> {
        self.per_axis
            .iter()
            .find(|a| a.axis == axis)
            .map(|a| a.epsilon)
    }

    pub fn epsilon_avg(&self) -> f64 {
        let n = self.per_axis.len().max(1) as f64;
        self.per_axis.iter().map(|a| a.epsilon).sum::<f64>() / n
    }
}

/// Bin final-step predictions and compare them with averaged projective
/// outcomes: `ε` is the count-weighted RMS deviation between the per-bin
/// mean prediction and the tomography average, and each bin carries the
/// Bernoulli uncertainty `√((1 - ⟨x⟩²)/N)`.
pub fn validate(samples: &[ValidationSample], n_bins: usize) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(TrajError::Analysis("validate needs samples".into()));
    }
    if n_bins < 2 {
        return Err(TrajError::Analysis("validate needs n_bins >= 2".into()));
    }
    let delta = 2.0 / n_bins as f64;
    let mut per_axis = Vec::new();
    for axis in TomoAxis::all() {
        let subset: Vec<&ValidationSample> =
            samples.iter().filter(|s| s.axis == axis).collect();
        if subset.is_empty() {
            continue;
        }
        let mut pred_sum = vec![0.0; n_bins];
        let mut outcome_sum = vec![0.0; n_bins];
        let mut count = vec![0usize; n_bins];
        for s in &subset {
            let idx =
                (((s.prediction + 1.0) / 2.0 * n_bins as f64) as isize).clamp(0, n_bins as isize - 1)
                    as usize;
            pred_sum[idx] += s.prediction;
            outcome_sum[idx] += f64::from(s.outcome);
            count[idx] += 1;
        }
        let mut bins = Vec::new();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n_bins {
            if count[i] == 0 {
                continue;
            }
            let n_i = count[i] as f64;
            let pred = pred_sum[i] / n_i;
            let tomo = 2.0 * outcome_sum[i] / n_i - 1.0;
            let sigma = ((1.0 - tomo * tomo).max(0.0) / n_i).sqrt();
            bins.push(ValidationBin {
                prediction: pred,
                tomography: tomo,
                count: count[i],
                bernoulli_sigma: sigma,
            });
            num += n_i * (pred - tomo).powi(2);
            den += n_i;
        }
        per_axis.push(AxisValidation {
            axis,
            epsilon: (num / den).sqrt(),
            bins,
        });
    }
    if per_axis.is_empty() {
        return Err(TrajError::Analysis("validate: no labeled samples".into()));
    }
    Ok(ValidationReport {
        n_bins,
        delta,
        per_axis,
    })
}

/// Efficiency calibration from undriven equator-prepared records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyFit {
    /// Characteristic measurement time `τ_m = 4 (dS/dT_m)⁻¹`.
    pub tau_m: f64,
    pub tau_m_err: f64,
    /// Ensemble dephasing from the decay of `⟨Y⟩(T_m)`.
    pub gamma_d: f64,
    pub gamma_d_err: f64,
    /// `η = 1/(τ_m Γ_d)`.
    pub eta: f64,
    /// `(T_m, S)` points of the histogram-separation curve.
    pub s_points: Vec<(f64, f64)>,
    pub s_slope: f64,
    pub s_intercept: f64,
    pub s_r_squared: f64,
}

/// Histogram-separation efficiency calibration: `S(T_m) = (ΔV/σ)²` from
/// Z-conditioned integrated records gives `τ_m`; the exponential decay of
/// Y-axis tomography gives `Γ_d`; together `η = 1/(τ_m Γ_d)`.
pub fn efficiency_calibration(records: &[VoltageRecord]) -> Result<EfficiencyFit> {
    // group by t_m
    let mut groups: std::collections::BTreeMap<i64, Vec<&VoltageRecord>> =
        std::collections::BTreeMap::new();
    for rec in records {
        if rec.n_m() == 0 || rec.tomo_axis.is_none() || rec.tomo_outcome.is_none() {
            continue;
        }
        groups
            .entry((rec.t_m / rec.dt).round() as i64)
            .or_default()
            .push(rec);
    }
    if groups.len() < 3 {
        return Err(TrajError::Analysis(
            "efficiency calibration needs >= 3 distinct t_m values".into(),
        ));
    }

    let mut s_ts = Vec::new();
    let mut s_vals = Vec::new();
    let mut s_ws = Vec::new();
    let mut y_ts = Vec::new();
    let mut y_vals = Vec::new();
    let mut y_ws = Vec::new();

    for recs in groups.values() {
        let t_m = recs[0].t_m;
        let dt = recs[0].dt;
        // Z-conditioned histogram separation of integrated records
        let mut v = [Vec::new(), Vec::new()];
        let mut y_sum = 0.0;
        let mut y_n = 0usize;
        for rec in recs {
            match rec.tomo_axis.unwrap() {
                TomoAxis::Z => {
                    let n = rec.n_m().min(rec.i_samples.len());
                    let integral: f64 = rec.i_samples[..n].iter().sum::<f64>() * dt;
                    v[usize::from(rec.tomo_outcome.unwrap() == 0)].push(integral);
                }
                TomoAxis::Y => {
                    y_sum += 2.0 * f64::from(rec.tomo_outcome.unwrap()) - 1.0;
                    y_n += 1;
                }
                TomoAxis::X => {}
            }
        }
        if v[0].len() >= 20 && v[1].len() >= 20 {
            let stats = |xs: &[f64]| {
                let n = xs.len() as f64;
                let m = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
                (m, var)
            };
            let (m1, var1) = stats(&v[0]);
            let (m0, var0) = stats(&v[1]);
            let pooled = ((var0 + var1) / 2.0).sqrt();
            if pooled > 0.0 {
                let s = ((m1 - m0) / pooled).powi(2);
                s_ts.push(t_m);
                s_vals.push(s);
                s_ws.push((v[0].len() + v[1].len()) as f64);
            }
        }
        if y_n >= 20 {
            let y_mean = y_sum / y_n as f64;
            if y_mean > 0.05 {
                y_ts.push(t_m);
                y_vals.push(y_mean.ln());
                // delta-method weight for ln(y)
                y_ws.push(y_n as f64 * y_mean * y_mean / (1.0 - y_mean * y_mean).max(1e-6));
            }
        }
    }

    // restrict the S fit to the linear region; the conditioned separation
    // stays linear well past S = 1 and saturates only when the histograms
    // fully split
    let mut st = Vec::new();
    let mut sv = Vec::new();
    let mut sw = Vec::new();
    for ((&t, &s), &w) in s_ts.iter().zip(&s_vals).zip(&s_ws) {
        if s <= 4.0 || st.len() < 3 {
            st.push(t);
            sv.push(s);
            sw.push(w);
        }
    }
    if st.len() < 3 {
        return Err(TrajError::Analysis(
            "efficiency calibration: too few usable S(T_m) points".into(),
        ));
    }
    let (intercept, slope, slope_err, r2) = wls_line(&st, &sv, &sw)?;
    if slope <= 0.0 {
        return Err(TrajError::Analysis(format!(
            "efficiency calibration: non-positive S(T_m) slope {slope}"
        )));
    }
    let tau_m = 4.0 / slope;
    let tau_m_err = 4.0 * slope_err / (slope * slope);

    if y_ts.len() < 3 {
        return Err(TrajError::Analysis(
            "efficiency calibration: too few Y-decay points".into(),
        ));
    }
    let (_, y_slope, y_slope_err, _) = wls_line(&y_ts, &y_vals, &y_ws)?;
    let gamma_d = -y_slope;
    if gamma_d <= 0.0 {
        return Err(TrajError::Analysis(
            "efficiency calibration: Y decay fit gave non-positive rate".into(),
        ));
    }

    Ok(EfficiencyFit {
        tau_m,
        tau_m_err,
        gamma_d,
        gamma_d_err: y_slope_err,
        eta: 1.0 / (tau_m * gamma_d),
        s_points: s_ts.into_iter().zip(s_vals).collect(),
        s_slope: slope,
        s_intercept: intercept,
        s_r_squared: r2,
    })
}

/// Steady-state reduced Bloch radius under a fast drive,
/// `|r| = √((2+η)/2η − √(((2+η)/2η)² − 2))`.
pub fn steady_radius(eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(TrajError::Analysis(format!("eta = {eta} outside (0, 1]")));
    }
    let a = (2.0 + eta) / (2.0 * eta);
    Ok((a - (a * a - 2.0).sqrt()).sqrt())
}

/// Analytic drift and diffusion direction fields for overlay against
/// [`bin_increments`] output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuiverPoint {
    pub center: (f64, f64),
    /// Lindblad drift over one step.
    pub drift: (f64, f64),
    /// Informational-backaction standard-deviation vector over one step
    /// (phase backaction in the xy plane).
    pub std_vec: (f64, f64),
}

/// Evaluate the theory maps on the grid. In the `yz` plane the driven maps
/// include the tilt `θ` and reduction `η₂ = η_avg` derived from the params'
/// constant drive; the `xz`/`xy` maps are the undriven heterodyne fields.
pub fn backaction_theory_maps(
    plane: Plane,
    params: &PhysicalParams,
    n_bins: usize,
) -> Vec<QuiverPoint> {
    let rates = crate::model::derive_rates(params).expect("valid params");
    let omega = params.omega_rabi.constant_part();
    let gamma_d = params.gamma_d();
    let dt = params.dt;
    let tau = params.tau_record();
    let (theta, eta_avg) = (rates.theta, rates.eta_avg);
    let (st, ct) = theta.sin_cos();
    let kick = (2.0 * params.eta * params.gamma_m * dt).sqrt();
    let mut out = Vec::new();
    for iv in 0..n_bins {
        for iu in 0..n_bins {
            let u = -1.0 + (iu as f64 + 0.5) * 2.0 / n_bins as f64;
            let v = -1.0 + (iv as f64 + 0.5) * 2.0 / n_bins as f64;
            if u * u + v * v > 1.0 {
                continue;
            }
            let point = match plane {
                Plane::Yz => {
                    let (y, z) = (u, v);
                    let scale = (eta_avg * dt / tau).sqrt();
                    QuiverPoint {
                        center: (u, v),
                        drift: (
                            (-gamma_d * y + omega * z) * dt,
                            -omega * y * dt,
                        ),
                        std_vec: (
                            scale * (-y * z * ct + (1.0 - y * y) * st),
                            scale * (-z * y * st + (1.0 - z * z) * ct),
                        ),
                    }
                }
                Plane::Xz => {
                    let (x, z) = (u, v);
                    QuiverPoint {
                        center: (u, v),
                        drift: (-gamma_d * x * dt, 0.0),
                        std_vec: (kick * (-z * x), kick * (1.0 - z * z)),
                    }
                }
                Plane::Xy => {
                    let (x, y) = (u, v);
                    QuiverPoint {
                        center: (u, v),
                        drift: (-gamma_d * x * dt, -gamma_d * y * dt),
                        std_vec: (kick * (-y), kick * x),
                    }
                }
            };
            out.push(point);
        }
    }
    out
}

/// Pointwise mean of equal-length series.
pub fn ensemble_average(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(TrajError::Analysis(
            "ensemble_average needs >= 2 series".into(),
        ));
    }
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) {
        return Err(TrajError::Analysis(
            "ensemble_average: length mismatch".into(),
        ));
    }
    let mut out = vec![0.0; len];
    for s in series {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    let inv = 1.0 / series.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    Ok(out)
}

/// Per-coordinate RMS deviation between a reconstructed trajectory and the
/// ground truth, over the common aligned steps (the shared initial state at
/// index 0 is skipped).
pub fn rms_vs_truth(pred: &Trajectory, truth: &Trajectory) -> Result<[f64; 3]> {
    let n = pred.states.len().min(truth.states.len());
    if n < 2 {
        return Err(TrajError::Analysis("rms_vs_truth needs >= 2 states".into()));
    }
    let mut acc = [0.0f64; 3];
    for k in 1..n {
        let p = &pred.states[k];
        let t = &truth.states[k];
        acc[0] += (p.x - t.x).powi(2);
        acc[1] += (p.y - t.y).powi(2);
        acc[2] += (p.z - t.z).powi(2);
    }
    let m = (n - 1) as f64;
    Ok([
        (acc[0] / m).sqrt(),
        (acc[1] / m).sqrt(),
        (acc[2] / m).sqrt(),
    ])
}

/// Mean per-coordinate RMS over a set of trajectory pairs.
pub fn mean_rms(pairs: &[(&Trajectory, &Trajectory)]) -> Result<[f64; 3]> {
    if pairs.is_empty() {
        return Err(TrajError::Analysis("mean_rms needs pairs".into()));
    }
    let mut acc = [0.0f64; 3];
    for (pred, truth) in pairs {
        let rms = rms_vs_truth(pred, truth)?;
        for i in 0..3 {
            acc[i] += rms[i];
        }
    }
    let n = pairs.len() as f64;
    Ok([acc[0] / n, acc[1] / n, acc[2] / n])
}
