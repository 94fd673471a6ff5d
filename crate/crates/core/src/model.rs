//! Domain types shared by the whole pipeline: Bloch states, device parameters,
//! derived rates, voltage records and trajectories.
//!
//! Conventions used everywhere in this crate:
//! * the ground state sits at the north pole, `z = +1`;
//! * the Rabi drive rotates the state in the `yz`-plane with
//!   `dy = +Ω z dt`, `dz = −Ω y dt`;
//! * all rates are angular frequencies (rad/s); presentation layers divide
//!   by 2π when printing MHz.
//!
//! Under that drift convention the resonator's delayed response measures the
//! observable `cosθ ẑ + sinθ ŷ` with `θ = arctan(Ω τ_c)`, i.e. the measurement
//! poles tilt towards `+y` for `Ω > 0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Result, TrajError};

/// Qubit state estimate in Bloch coordinates, optionally carrying an
/// unnormalized probability weight `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default = "default_weight")]
    pub p: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl BlochState {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, p: 1.0 }
    }

    /// Cardinal states of the Bloch sphere.
    pub fn plus_z() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }
    pub fn minus_z() -> Self {
        Self::new(0.0, 0.0, -1.0)
    }
    pub fn plus_y() -> Self {
        Self::new(0.0, 1.0, 0.0)
    }
    pub fn minus_y() -> Self {
        Self::new(0.0, -1.0, 0.0)
    }
    pub fn plus_x() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }
    pub fn mixed() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Squared Bloch-vector length `x² + y² + z²`; 1 for pure states.
    pub fn purity(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    /// Component along a given tomography axis.
    pub fn component(&self, axis: TomoAxis) -> f64 {
        match axis {
            TomoAxis::X => self.x,
            TomoAxis::Y => self.y,
            TomoAxis::Z => self.z,
        }
    }

    /// Counterclockwise rotation in the `yz`-plane (the Rabi-drive plane):
    /// `(y', z') = (y cosθ − z sinθ, y sinθ + z cosθ)`, `x` untouched.
    pub fn rotate_yz(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            x: self.x,
            y: self.y * c - self.z * s,
            z: self.y * s + self.z * c,
            p: self.p,
        }
    }

    /// Project onto the sphere surface if the state lies outside it.
    /// Never shrinks states that are inside.
    pub fn project_outward_only(&self) -> Self {
        let r2 = self.purity();
        if r2 > 1.0 {
            let r = r2.sqrt();
            Self {
                x: self.x / r,
                y: self.y / r,
                z: self.z / r,
                p: self.p,
            }
        } else {
            *self
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(TrajError::InvalidState(format!(
                "weight p = {} outside (0, 1]",
                self.p
            )));
        }
        if self.purity() > 1.0 + tol {
            return Err(TrajError::InvalidState(format!(
                "purity {} exceeds 1 + {tol}",
                self.purity()
            )));
        }
        Ok(())
    }
}

/// Tomography axis of the projective measurement closing a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TomoAxis {
    X,
    Y,
    Z,
}

impl TomoAxis {
    pub fn all() -> [TomoAxis; 3] {
        [TomoAxis::X, TomoAxis::Y, TomoAxis::Z]
    }
}

/// Rabi drive specification: constant, sinusoidally modulated, or tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriveSpec {
    Constant {
        omega: f64,
    },
    /// `Ω(t) = omega0 + omega1 · sin(2π t / period + phase)`
    Sinusoidal {
        omega0: f64,
        omega1: f64,
        period: f64,
        phase: f64,
    },
    /// Piecewise-linear interpolation through `(times, omegas)`.
    Tabulated {
        times: Vec<f64>,
        omegas: Vec<f64>,
    },
}

impl DriveSpec {
    pub fn constant(omega: f64) -> Self {
        DriveSpec::Constant { omega }
    }

    pub fn omega_at(&self, t: f64) -> f64 {
        match self {
            DriveSpec::Constant { omega } => *omega,
            DriveSpec::Sinusoidal {
                omega0,
                omega1,
                period,
                phase,
            } => omega0 + omega1 * (2.0 * PI * t / period + phase).sin(),
            DriveSpec::Tabulated { times, omegas } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return omegas[0];
                }
                if t >= *times.last().unwrap() {
                    return *omegas.last().unwrap();
                }
                let i = times.partition_point(|&ti| ti <= t) - 1;
                let f = (t - times[i]) / (times[i + 1] - times[i]);
                omegas[i] + f * (omegas[i + 1] - omegas[i])
            }
        }
    }

    /// The constant component of the drive (used by the steady-state tilt
    /// and rate formulas).
    pub fn constant_part(&self) -> f64 {
        match self {
            DriveSpec::Constant { omega } => *omega,
            DriveSpec::Sinusoidal { omega0, .. } => *omega0,
            DriveSpec::Tabulated { omegas, .. } => {
                if omegas.is_empty() {
                    0.0
                } else {
                    omegas.iter().sum::<f64>() / omegas.len() as f64
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DriveSpec::Constant { .. })
    }
}

/// Calibrated device and acquisition parameters.
///
/// `gamma_m` is the single-quadrature measurement dephasing rate; the total
/// measurement dephasing is `2 gamma_m` (both heterodyne quadratures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Dispersive shift χ (rad/s); the two qubit-conditioned resonances sit 2χ apart.
    pub chi: f64,
    /// Resonator linewidth κ (rad/s).
    pub kappa: f64,
    /// Rabi drive Ω(t) (rad/s).
    pub omega_rabi: DriveSpec,
    /// Qubit relaxation rate Γ₁ = 1/T₁ (1/s).
    pub gamma1: f64,
    /// Single-quadrature measurement rate Γ_m (rad/s).
    pub gamma_m: f64,
    /// Total collection efficiency η ∈ (0, 1].
    pub eta: f64,
    /// Drive detuning Δ (rad/s).
    pub delta: f64,
    /// Drive misalignment Ω_y (rad/s).
    pub omega_y: f64,
    /// Mean resonator photon number under the weak probe.
    pub nbar: f64,
    /// Weak-measurement drive strength ε (rad/s).
    pub eps_drive: f64,
    /// Record time step (s).
    pub dt: f64,
    /// Environmental dephasing rate Γ_φ,env (rad/s); 0 in the
    /// measurement-limited setting.
    #[serde(default)]
    pub gamma_phi_env: f64,
}

impl PhysicalParams {
    /// Device defaults: χ/2π = 0.47 MHz, κ/2π = 1.56 MHz, ε/2π = 0.43 MHz,
    /// T₁ = 61 µs, η = 0.188, dt = 40 ns. `nbar` follows from the
    /// steady-state response `n̄ = |2ε/κ|² / (1 + (2χ/κ)²)` and `gamma_m`
    /// is set measurement-limited so that `Γ_d = 2Γ_m` matches the
    /// dispersive prediction.
    pub fn device_defaults() -> Self {
        let chi = 2.0 * PI * 0.47e6;
        let kappa = 2.0 * PI * 1.56e6;
        let eps = 2.0 * PI * 0.43e6;
        let r = 2.0 * chi / kappa;
        let nbar = (2.0 * eps / kappa).powi(2) / (1.0 + r * r);
        let gamma_d_pred = (8.0 * chi * chi * nbar / kappa) / (1.0 + r * r);
        Self {
            chi,
            kappa,
            omega_rabi: DriveSpec::constant(0.0),
            gamma1: 1.0 / 61e-6,
            gamma_m: gamma_d_pred / 2.0,
            eta: 0.188,
            delta: 0.0,
            omega_y: 0.0,
            nbar,
            eps_drive: eps,
            dt: 40e-9,
            gamma_phi_env: 0.0,
        }
    }

    /// Set a constant drive from the adiabaticity parameter `2Ω/κ`.
    pub fn with_two_omega_over_kappa(mut self, x: f64) -> Self {
        self.omega_rabi = DriveSpec::constant(x * self.kappa / 2.0);
        self
    }

    pub fn with_drive(mut self, drive: DriveSpec) -> Self {
        self.omega_rabi = drive;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    /// Record noise timescale `τ = 1/(2ηΓ_m)`: the variance of one record
    /// sample is `τ/dt`.
    pub fn tau_record(&self) -> f64 {
        1.0 / (2.0 * self.eta * self.gamma_m)
    }

    /// Ensemble dephasing rate `Γ_d = 2Γ_m + Γ_φ,env`.
    pub fn gamma_d(&self) -> f64 {
        2.0 * self.gamma_m + self.gamma_phi_env
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa <= 0.0 {
            return Err(TrajError::InvalidParams("kappa must be > 0".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(TrajError::InvalidParams(format!(
                "eta = {} outside (0, 1]",
                self.eta
            )));
        }
        if self.dt <= 0.0 {
            return Err(TrajError::InvalidParams("dt must be > 0".into()));
        }
        for (name, v) in [
            ("chi", self.chi),
            ("gamma1", self.gamma1),
            ("gamma_m", self.gamma_m),
            ("nbar", self.nbar),
            ("gamma_phi_env", self.gamma_phi_env),
        ] {
            if v < 0.0 {
                return Err(TrajError::InvalidParams(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Rates derived from [`PhysicalParams`] via the resonator-memory formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRates {
    /// Resonator memory time `τ_c = 2/κ`.
    pub tau_c: f64,
    /// Ensemble dephasing rate `Γ_d = 2Γ_m + Γ_φ,env`.
    pub gamma_d: f64,
    /// Measurement-axis tilt `θ = arctan(Ω τ_c)` (constant drive part).
    pub theta: f64,
    /// Rate-reduction factor `η_avg = 1/(1 + (Ω τ_c)²)`.
    pub eta_avg: f64,
    /// Dispersive prediction `(8χ²n̄/κ)/(1 + (2χ/κ)²)` for the rate at which
    /// the two conditioned steady states are distinguished; equals the
    /// predicted total measurement dephasing `2Γ_m`.
    pub gamma_m_pred: f64,
}

/// Tilt of the effective measurement axis for a drive `omega`.
pub fn tilt_angle(omega: f64, kappa: f64) -> f64 {
    (omega * 2.0 / kappa).atan()
}

/// Measurement-rate reduction factor for a drive `omega`.
pub fn averaging_efficiency(omega: f64, kappa: f64) -> f64 {
    let x = omega * 2.0 / kappa;
    1.0 / (1.0 + x * x)
}

/// Evaluate the derived-rate formulas. Rejects κ ≤ 0.
pub fn derive_rates(params: &PhysicalParams) -> Result<DerivedRates> {
    if params.kappa <= 0.0 {
        return Err(TrajError::InvalidParams("kappa must be > 0".into()));
    }
    let tau_c = 2.0 / params.kappa;
    let omega = params.omega_rabi.constant_part();
    let r = 2.0 * params.chi / params.kappa;
    Ok(DerivedRates {
        tau_c,
        gamma_d: params.gamma_d(),
        theta: tilt_angle(omega, params.kappa),
        eta_avg: averaging_efficiency(omega, params.kappa),
        gamma_m_pred: (8.0 * params.chi * params.chi * params.nbar / params.kappa)
            / (1.0 + r * r),
    })
}

/// Simulation regime used to generate a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// Markovian stochastic master equation, record follows the
    /// instantaneous `z`.
    Memoryless,
    /// Resonator memory: the record follows the kernel-delayed `z_eff` and
    /// backaction acts along the tilted, attenuated observable.
    MemoryKernel,
    /// Idealized hyperbolic-boost generation; exactly invertible by the
    /// Bayesian filter.
    BoostUpdate,
}

/// One heterodyne voltage record plus its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageRecord {
    pub id: u64,
    pub regime: RegimeKind,
    #[serde(rename = "omega_spec")]
    pub drive_meta: DriveSpec,
    /// Record time step (s).
    pub dt: f64,
    /// Drive duration (s); samples past `⌈t_m/dt⌉` are zero padding.
    pub t_m: f64,
    pub i_samples: Vec<f64>,
    pub q_samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomo_axis: Option<TomoAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomo_outcome: Option<u8>,
    pub init_state: BlochState,
}

impl VoltageRecord {
    /// Number of informative (unpadded) samples.
    pub fn n_m(&self) -> usize {
        (self.t_m / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_samples.len() != self.q_samples.len() {
            return Err(TrajError::InvalidRecord(format!(
                "record {}: I/Q length mismatch ({} vs {})",
                self.id,
                self.i_samples.len(),
                self.q_samples.len()
            )));
        }
        if (self.i_samples.len() as f64) * self.dt < self.t_m - 1e-12 {
            return Err(TrajError::InvalidRecord(format!(
                "record {}: {} samples x dt < t_m",
                self.id,
                self.i_samples.len()
            )));
        }
        let pad_from = (self.t_m / self.dt).ceil() as usize;
        for k in pad_from..self.i_samples.len() {
            if self.i_samples[k] != 0.0 || self.q_samples[k] != 0.0 {
                return Err(TrajError::InvalidRecord(format!(
                    "record {}: nonzero padding at sample {k}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Bloch trajectory aligned to a record: `states[0]` is the state at `t = 0`
/// and `states[k]` the state after record sample `k-1`, so a record with
/// `n_m` informative samples pairs with `n_m + 1` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<BlochState>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_purity(&self) -> f64 {
        self.states.iter().map(|s| s.purity()).fold(0.0, f64::max)
    }
}
