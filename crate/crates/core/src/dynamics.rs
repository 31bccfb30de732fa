//! Operator-basis models and single-trajectory integration.
//!
//! A model is defined by structure-constant matrices over a finite operator
//! basis: `[H, Y_l] = sum_m H_lm Y_m`, `[S, Y_l] = sum_m Sc_lm Y_m`,
//! `{S, Y_l} = sum_m Sa_lm Y_m`. One trajectory integrates
//!
//! ```text
//! dY/dt = ( i H + i C(t) + i (xi_t/sqrt2) Sc + (eta_t/sqrt2) Sa ) Y
//! ```
//!
//! with classical 4th-order Runge-Kutta, reading the noises at full and half
//! steps straight off the bundle's half-step grid.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, ScleError};
use crate::grid::TimeGrid;
use crate::noise::NoiseBundle;

const CLOSURE_TOL: f64 = 1e-12;
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Time-dependent scalar coefficient of a drive term.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Constant(f64),
    /// amplitude * sin(frequency * t)
    Sinusoid { amplitude: f64, frequency: f64 },
    /// amplitude * exp(-((t - center)/tau)^2)
    GaussianPulse { amplitude: f64, tau: f64, center: f64 },
}

impl Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Envelope::Constant(a) => *a,
            Envelope::Sinusoid { amplitude, frequency } => amplitude * (frequency * t).sin(),
            Envelope::GaussianPulse { amplitude, tau, center } => {
                let r = (t - center) / tau;
                amplitude * (-r * r).exp()
            }
        }
    }
}

/// One term of the time-dependent coefficient matrix C(t).
#[derive(Debug, Clone, PartialEq)]
pub struct DriveTerm {
    pub envelope: Envelope,
    /// Structure-constant matrix of the driven operator's commutator action.
    pub matrix: DMatrix<Complex64>,
}

/// Impulsive control: an exact adjoint map applied to the expectation vector
/// at a grid-snapped time.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseEvent {
    pub time: f64,
    pub map: DMatrix<Complex64>,
}

/// A system model expressed through structure constants over a closed
/// operator basis.
#[derive(Debug, Clone)]
pub struct OperatorBasisModel {
    pub name: String,
    pub basis: Vec<DMatrix<Complex64>>,
    pub h_mat: DMatrix<Complex64>,
    pub sc_mat: DMatrix<Complex64>,
    pub sa_mat: DMatrix<Complex64>,
    pub drive: Vec<DriveTerm>,
    pub pulses: Vec<PulseEvent>,
    pub init: DVector<Complex64>,
    /// Coefficients of the coupling operator S in the basis (coupling-energy
    /// estimator).
    pub s_coeffs: DVector<Complex64>,
    /// Coefficients of the identity in the basis (bath-displacement
    /// estimator).
    pub identity_coeffs: DVector<Complex64>,
    /// Named system-observable coefficient vectors.
    pub observables: Vec<(String, DVector<Complex64>)>,
}

impl OperatorBasisModel {
    /// Builds the structure constants from explicit operator matrices and
    /// verifies basis closure.
    pub fn from_operators(
        name: impl Into<String>,
        h_sys: &DMatrix<Complex64>,
        s_op: &DMatrix<Complex64>,
        basis: &[DMatrix<Complex64>],
        rho0: &DMatrix<Complex64>,
    ) -> Result<Self> {
        let (h_mat, sc_mat, sa_mat) = structure_constants(h_sys, s_op, basis)?;
        let init = init_vector(basis, rho0)?;
        let s_coeffs = expand_in_basis(basis, s_op)
            .map_err(|e| ScleError::ModelDefinition(format!("coupling operator: {e}")))?;
        let d = basis[0].nrows();
        let identity = DMatrix::identity(d, d);
        let identity_coeffs = expand_in_basis(basis, &identity)
            .map_err(|e| ScleError::ModelDefinition(format!("identity operator: {e}")))?;
        Ok(Self {
            name: name.into(),
            basis: basis.to_vec(),
            h_mat,
            sc_mat,
            sa_mat,
            drive: Vec::new(),
            pulses: Vec::new(),
            init,
            s_coeffs,
            identity_coeffs,
            observables: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.init.len()
    }

    pub fn with_observable(
        mut self,
        name: impl Into<String>,
        coeffs: DVector<Complex64>,
    ) -> Self {
        self.observables.push((name.into(), coeffs));
        self
    }

    /// Adds a drive whose commutator action is derived from the driven
    /// operator matrix.
    pub fn with_drive_operator(
        mut self,
        envelope: Envelope,
        driven_op: &DMatrix<Complex64>,
    ) -> Result<Self> {
        let matrix = commutator_matrix(driven_op, &self.basis)?;
        self.drive.push(DriveTerm { envelope, matrix });
        Ok(self)
    }

    pub fn with_pulses(mut self, pulses: Vec<PulseEvent>) -> Self {
        self.pulses = pulses;
        self
    }

    pub fn observable(&self, name: &str) -> Option<&DVector<Complex64>> {
        self.observables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
    }

    /// Replaces the initial expectation vector with the one of `rho0`.
    pub fn with_initial_state(mut self, rho0: &DMatrix<Complex64>) -> Result<Self> {
        self.init = init_vector(&self.basis, rho0)?;
        Ok(self)
    }
}

/// Expands `op` in the basis: coefficients c with op = sum_l c_l Y_l.
pub fn expand_in_basis(
    basis: &[DMatrix<Complex64>],
    op: &DMatrix<Complex64>,
) -> Result<DVector<Complex64>> {
    let n = basis.len();
    let mut gram = DMatrix::<Complex64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            gram[(a, b)] = frobenius_inner(&basis[a], &basis[b]);
        }
    }
    let rhs = DVector::from_iterator(n, basis.iter().map(|y| frobenius_inner(y, op)));
    let lu = gram.lu();
    let coeffs = lu.solve(&rhs).ok_or_else(|| {
        ScleError::ModelDefinition("basis Gram matrix is singular (linearly dependent basis)".into())
    })?;
    // Residual check: the expansion must reproduce op.
    let mut recon = DMatrix::<Complex64>::zeros(op.nrows(), op.ncols());
    for (c, y) in coeffs.iter().zip(basis) {
        recon += y * *c;
    }
    let resid = (op - &recon).norm();
    if resid > CLOSURE_TOL * (1.0 + op.norm()) {
        return Err(ScleError::ModelDefinition(format!(
            "operator is not in the span of the basis (residual {resid:.3e})"
        )));
    }
    Ok(coeffs)
}

fn frobenius_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b - b * a
}

fn anticommutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b + b * a
}

/// Matrix M with [op, Y_l] = sum_m M_lm Y_m.
pub fn commutator_matrix(
    op: &DMatrix<Complex64>,
    basis: &[DMatrix<Complex64>],
) -> Result<DMatrix<Complex64>> {
    let n = basis.len();
    let mut mat = DMatrix::<Complex64>::zeros(n, n);
    for (l, y) in basis.iter().enumerate() {
        let target = commutator(op, y);
        let coeffs = expand_in_basis(basis, &target).map_err(|_| {
            ScleError::ModelDefinition(format!(
                "basis element {l} does not close under the commutator action"
            ))
        })?;
        for m in 0..n {
            mat[(l, m)] = coeffs[m];
        }
    }
    Ok(mat)
}

fn anticommutator_matrix(
    op: &DMatrix<Complex64>,
    basis: &[DMatrix<Complex64>],
) -> Result<DMatrix<Complex64>> {
    let n = basis.len();
    let mut mat = DMatrix::<Complex64>::zeros(n, n);
    for (l, y) in basis.iter().enumerate() {
        let target = anticommutator(op, y);
        let coeffs = expand_in_basis(basis, &target).map_err(|_| {
            ScleError::ModelDefinition(format!(
                "basis element {l} does not close under the anticommutator action"
            ))
        })?;
        for m in 0..n {
            mat[(l, m)] = coeffs[m];
        }
    }
    Ok(mat)
}

/// Structure-constant matrices for (H, S) over the given basis.
pub fn structure_constants(
    h_sys: &DMatrix<Complex64>,
    s_op: &DMatrix<Complex64>,
    basis: &[DMatrix<Complex64>],
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>)> {
    if basis.is_empty() {
        return Err(ScleError::ModelDefinition("empty operator basis".into()));
    }
    let h_mat = commutator_matrix(h_sys, basis)?;
    let sc_mat = commutator_matrix(s_op, basis)?;
    let sa_mat = anticommutator_matrix(s_op, basis)?;
    Ok((h_mat, sc_mat, sa_mat))
}

/// Initial expectation vector <Y_l> = Tr{Y_l rho0} after validating rho0.
pub fn init_vector(
    basis: &[DMatrix<Complex64>],
    rho0: &DMatrix<Complex64>,
) -> Result<DVector<Complex64>> {
    let herm_dev = (rho0 - rho0.adjoint()).norm();
    if herm_dev > 1e-10 {
        return Err(ScleError::ModelDefinition(format!(
            "initial density matrix is not Hermitian (deviation {herm_dev:.3e})"
        )));
    }
    let trace: Complex64 = rho0.diagonal().iter().sum();
    if (trace - ONE).norm() > 1e-10 {
        return Err(ScleError::ModelDefinition(format!(
            "initial density matrix has trace {trace} instead of 1"
        )));
    }
    let sym = (rho0 + rho0.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    if let Some(bad) = eig.eigenvalues.iter().find(|&&ev| ev < -1e-10) {
        return Err(ScleError::ModelDefinition(format!(
            "initial density matrix has negative eigenvalue {bad:.3e}"
        )));
    }
    Ok(DVector::from_iterator(
        basis.len(),
        basis.iter().map(|y| (y * rho0).diagonal().iter().sum::<Complex64>()),
    ))
}

/// Applies a pulse map to an expectation vector.
pub fn apply_pulse(y: &DVector<Complex64>, pulse: &PulseEvent) -> DVector<Complex64> {
    &pulse.map * y
}

/// One integrated stochastic trajectory, recorded at full steps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    /// Flat row-major [(n_steps + 1) x dim].
    values: Vec<Complex64>,
}

impl Trajectory {
    pub fn n_points(&self) -> usize {
        self.values.len() / self.dim
    }

    /// Expectation vector at full step k.
    pub fn at(&self, k: usize) -> &[Complex64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Integrates one trajectory under the given noise bundle with classical
/// RK4; pulses are applied after the step ending at their snapped time.
pub fn integrate_trajectory(
    model: &OperatorBasisModel,
    bundle: &NoiseBundle,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let n_dim = model.dim();
    let n_steps = grid.n_steps();
    if bundle.xi.len() != grid.n_half_points() {
        return Err(ScleError::Usage(format!(
            "noise bundle has {} points but the grid needs {}",
            bundle.xi.len(),
            grid.n_half_points()
        )));
    }

    // Snap pulses to full-step indices; several pulses may share one index.
    let mut pulse_schedule: Vec<(usize, &PulseEvent)> = Vec::with_capacity(model.pulses.len());
    for pulse in &model.pulses {
        let idx = ((pulse.time - grid.t_start()) / grid.dt()).round();
        if idx < 0.0 || idx > n_steps as f64 {
            return Err(ScleError::Usage(format!(
                "pulse at t = {} falls outside the grid [{}, {}]",
                pulse.time,
                grid.t_start(),
                grid.t_end()
            )));
        }
        pulse_schedule.push((idx as usize, pulse));
    }
    pulse_schedule.sort_by_key(|(idx, _)| *idx);
    let mut next_pulse = 0usize;

    let mut y = model.init.clone();
    // Pulses snapped to the grid start act on the initial vector.
    while next_pulse < pulse_schedule.len() && pulse_schedule[next_pulse].0 == 0 {
        y = apply_pulse(&y, pulse_schedule[next_pulse].1);
        next_pulse += 1;
    }

    let mut values = Vec::with_capacity((n_steps + 1) * n_dim);
    values.extend(y.iter().copied());

    let dt = grid.dt();
    let half = Complex64::new(0.5 * dt, 0.0);
    let sixth = Complex64::new(dt / 6.0, 0.0);
    let full = Complex64::new(dt, 0.0);
    let two = Complex64::new(2.0, 0.0);

    let mut k1 = DVector::<Complex64>::zeros(n_dim);
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut stage = k1.clone();

    for step in 0..n_steps {
        let t0 = grid.t_full(step);
        let tm = t0 + 0.5 * dt;
        let t1 = t0 + dt;
        let i0 = 2 * step;

        deriv(model, t0, bundle.xi[i0], bundle.eta[i0], &y, &mut k1);
        stage.copy_from(&y);
        stage.axpy(half, &k1, ONE);
        deriv(model, tm, bundle.xi[i0 + 1], bundle.eta[i0 + 1], &stage, &mut k2);
        stage.copy_from(&y);
        stage.axpy(half, &k2, ONE);
        deriv(model, tm, bundle.xi[i0 + 1], bundle.eta[i0 + 1], &stage, &mut k3);
        stage.copy_from(&y);
        stage.axpy(full, &k3, ONE);
        deriv(model, t1, bundle.xi[i0 + 2], bundle.eta[i0 + 2], &stage, &mut k4);

        k2 *= two;
        k3 *= two;
        k1 += &k2;
        k1 += &k3;
        k1 += &k4;
        y.axpy(sixth, &k1, ONE);

        while next_pulse < pulse_schedule.len() && pulse_schedule[next_pulse].0 == step + 1 {
            y = apply_pulse(&y, pulse_schedule[next_pulse].1);
            next_pulse += 1;
        }

        if !y.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(ScleError::TrajectoryDiverged(format!(
                "non-finite expectation vector at step {} (t = {})",
                step + 1,
                t1
            )));
        }
        values.extend(y.iter().copied());
    }

    Ok(Trajectory { dim: n_dim, values })
}

#[inline]
fn deriv(
    model: &OperatorBasisModel,
    t: f64,
    xi: Complex64,
    eta: Complex64,
    y: &DVector<Complex64>,
    out: &mut DVector<Complex64>,
) {
    out.gemv(I, &model.h_mat, y, Complex64::ZERO);
    for term in &model.drive {
        let c = I * term.envelope.eval(t);
        out.gemv(c, &term.matrix, y, ONE);
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    out.gemv(I * xi * inv_sqrt2, &model.sc_mat, y, ONE);
    out.gemv(eta * inv_sqrt2, &model.sa_mat, y, ONE);
}

/// Pauli basis (I, sigma_x, sigma_y, sigma_z) for two-level models.
pub fn pauli_basis() -> Vec<DMatrix<Complex64>> {
    let z = Complex64::ZERO;
    let o = ONE;
    let i = I;
    vec![
        DMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    ]
}
