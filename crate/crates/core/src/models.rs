//! Benchmark model catalog: pure dephasing (with optional echo-pulse train),
//! driven spin-boson, and a driven two-level quantum dot in ps^-1 units.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::correlation::KernelTable;
use crate::dynamics::{pauli_basis, Envelope, OperatorBasisModel, PulseEvent};
use crate::error::{Result, ScleError};
use crate::grid::TimeGrid;

/// k_B/hbar in 1/(ps*K); beta = 1/(this * T) is then in ps.
pub const KB_OVER_HBAR_PS_K: f64 = 0.13092;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn sigma_x() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(2, 2, &[Complex64::ZERO, ONE, ONE, Complex64::ZERO])
}

pub fn sigma_y() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::ZERO,
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            Complex64::ZERO,
        ],
    )
}

pub fn sigma_z() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(2, 2, &[ONE, Complex64::ZERO, Complex64::ZERO, -ONE])
}

fn qubit_state(sign_x: f64, sign_z: f64) -> DMatrix<Complex64> {
    // (I + sign_x sigma_x + sign_z sigma_z) / 2
    (DMatrix::identity(2, 2) + sigma_x() * c(sign_x) + sigma_z() * c(sign_z)) * c(0.5)
}

fn with_pauli_observables(model: OperatorBasisModel) -> OperatorBasisModel {
    let e = |k: usize| {
        DVector::from_fn(4, |i, _| if i == k { ONE } else { Complex64::ZERO })
    };
    model
        .with_observable("sigma_x", e(1))
        .with_observable("sigma_y", e(2))
        .with_observable("sigma_z", e(3))
}

/// H = omega0/2 sigma_z, S = sigma_z, rho0 = |+><+|.
pub fn make_pure_dephasing(omega0: f64) -> Result<OperatorBasisModel> {
    if omega0 <= 0.0 {
        return Err(ScleError::Domain(format!(
            "pure dephasing needs omega0 > 0, got {omega0}"
        )));
    }
    let h = sigma_z() * c(0.5 * omega0);
    let model = OperatorBasisModel::from_operators(
        "pure_dephasing",
        &h,
        &sigma_z(),
        &pauli_basis(),
        &qubit_state(1.0, 0.0),
    )?;
    Ok(with_pauli_observables(model))
}

/// Instantaneous pi rotations about y at t = 2n/omega0 (n >= 1), up to t_end.
/// The adjoint map over {I, sx, sy, sz} flips sx and sz.
pub fn pi_pulse_train(omega0: f64, t_end: f64) -> Vec<PulseEvent> {
    let period = 2.0 / omega0;
    let map = DMatrix::from_diagonal(&DVector::from_vec(vec![ONE, -ONE, ONE, -ONE]));
    let mut pulses = Vec::new();
    let mut n = 1u32;
    while n as f64 * period <= t_end * (1.0 + 1e-12) {
        pulses.push(PulseEvent { time: n as f64 * period, map: map.clone() });
        n += 1;
    }
    pulses
}

/// Closed-form reference series for the undriven pure-dephasing model:
/// dephasing envelope, <sigma_x>, <sigma_y>, and the system-bath coupling
/// energy, all on the full-step grid.
#[derive(Debug, Clone)]
pub struct PureDephasingOracle {
    pub times: Vec<f64>,
    pub envelope: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub coupling_energy: Vec<f64>,
}

/// envelope(t) = exp(-4 * int_0^t ds int_0^s ds1 Re alpha_T(s - s1)),
/// <sigma_x> = cos(omega0 t) * envelope, <sigma_y> = sin(omega0 t) * envelope
/// (unit initial coherence), coupling energy = 2 * int_0^t Im alpha(s) ds.
/// Integrals use the trapezoidal rule on the half-step kernel grid.
pub fn pure_dephasing_oracle(
    omega0: f64,
    kernels: &KernelTable,
    grid: &TimeGrid,
) -> Result<PureDephasingOracle> {
    if kernels.grid != *grid {
        return Err(ScleError::Usage(
            "oracle kernels must be tabulated on the run grid".into(),
        ));
    }
    let h = grid.half_dt();
    let n_half = grid.n_half_points();

    // Inner integral A(s) = int_0^s Re alpha_T(u) du, then D(t) = int_0^t A.
    let mut inner = Vec::with_capacity(n_half);
    let mut acc = 0.0;
    inner.push(0.0);
    for j in 1..n_half {
        acc += 0.5 * h * (kernels.alpha_t[j - 1].re + kernels.alpha_t[j].re);
        inner.push(acc);
    }
    let mut double = Vec::with_capacity(n_half);
    acc = 0.0;
    double.push(0.0);
    for j in 1..n_half {
        acc += 0.5 * h * (inner[j - 1] + inner[j]);
        double.push(acc);
    }
    let mut energy = Vec::with_capacity(n_half);
    acc = 0.0;
    energy.push(0.0);
    for j in 1..n_half {
        acc += 0.5 * h * (kernels.alpha[j - 1].im + kernels.alpha[j].im);
        energy.push(acc);
    }

    let times = grid.full_times();
    let mut envelope = Vec::with_capacity(times.len());
    let mut sx = Vec::with_capacity(times.len());
    let mut sy = Vec::with_capacity(times.len());
    let mut hi = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let env = (-4.0 * double[2 * k]).exp();
        envelope.push(env);
        sx.push((omega0 * t).cos() * env);
        sy.push((omega0 * t).sin() * env);
        hi.push(2.0 * energy[2 * k]);
    }
    Ok(PureDephasingOracle {
        times,
        envelope,
        sigma_x: sx,
        sigma_y: sy,
        coupling_energy: hi,
    })
}

/// Optional sinusoidal pump for the spin-boson model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpSpec {
    /// Peak Rabi frequency Omega.
    pub rabi: f64,
    /// Detuning from omega0.
    pub detuning: f64,
}

/// H = omega0/2 sigma_z, S = sigma_x. Without a pump the system starts
/// excited; with a pump H_p(t) = (Omega/2) sin((omega0 + delta) t) sigma_x
/// it starts in the ground state.
pub fn make_spin_boson(omega0: f64, pump: Option<PumpSpec>) -> Result<OperatorBasisModel> {
    if omega0 <= 0.0 {
        return Err(ScleError::Domain(format!(
            "spin-boson needs omega0 > 0, got {omega0}"
        )));
    }
    let h = sigma_z() * c(0.5 * omega0);
    let rho0 = qubit_state(0.0, if pump.is_some() { -1.0 } else { 1.0 });
    let mut model = OperatorBasisModel::from_operators(
        "spin_boson",
        &h,
        &sigma_x(),
        &pauli_basis(),
        &rho0,
    )?;
    if let Some(p) = pump {
        model = model.with_drive_operator(
            Envelope::Sinusoid {
                amplitude: 0.5 * p.rabi,
                frequency: omega0 + p.detuning,
            },
            &sigma_x(),
        )?;
    }
    Ok(with_pauli_observables(model))
}

/// Rabi drive of the quantum-dot model, in ps^-1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RabiSpec {
    Constant(f64),
    /// Omega(t) = amplitude * exp(-(t/tau)^2), peak at t = 0.
    Gaussian { amplitude: f64, tau: f64 },
}

impl RabiSpec {
    /// Integrated pulse area; sqrt(pi) * amplitude * tau for the Gaussian.
    pub fn area(&self, duration: f64) -> f64 {
        match self {
            RabiSpec::Constant(omega) => omega * duration,
            RabiSpec::Gaussian { amplitude, tau } => {
                std::f64::consts::PI.sqrt() * amplitude * tau
            }
        }
    }
}

/// Rotating-frame exciton model: H = delta/2 sigma_z + Omega(t)/2 sigma_x,
/// S = sigma_z/2, ground initial state. The excited-state population is
/// (1 + <sigma_z>)/2, exposed as the "population" observable.
pub fn make_quantum_dot(delta: f64, rabi: RabiSpec) -> Result<OperatorBasisModel> {
    match rabi {
        RabiSpec::Gaussian { tau, .. } if tau <= 0.0 => {
            return Err(ScleError::Domain(format!(
                "Gaussian pulse needs tau > 0, got {tau}"
            )));
        }
        _ => {}
    }
    let mut h = sigma_z() * c(0.5 * delta);
    if let RabiSpec::Constant(omega) = rabi {
        h += sigma_x() * c(0.5 * omega);
    }
    let mut model = OperatorBasisModel::from_operators(
        "quantum_dot",
        &h,
        &(sigma_z() * c(0.5)),
        &pauli_basis(),
        &qubit_state(0.0, -1.0),
    )?;
    if let RabiSpec::Gaussian { amplitude, tau } = rabi {
        model = model.with_drive_operator(
            Envelope::GaussianPulse { amplitude: 0.5 * amplitude, tau, center: 0.0 },
            &sigma_x(),
        )?;
    }
    let population = DVector::from_vec(vec![c(0.5), Complex64::ZERO, Complex64::ZERO, c(0.5)]);
    Ok(with_pauli_observables(model).with_observable("population", population))
}

/// beta in ps from temperature in kelvin.
pub fn kelvin_to_beta(t_kelvin: f64) -> Result<f64> {
    if t_kelvin <= 0.0 {
        return Err(ScleError::Domain(format!(
            "temperature must be positive, got {t_kelvin} K"
        )));
    }
    Ok(1.0 / (KB_OVER_HBAR_PS_K * t_kelvin))
}

/// Inverse of `kelvin_to_beta`.
pub fn beta_to_kelvin(beta: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(ScleError::Domain(format!(
            "beta must be positive, got {beta} ps"
        )));
    }
    Ok(1.0 / (KB_OVER_HBAR_PS_K * beta))
}
