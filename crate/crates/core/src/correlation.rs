//! Bath spectral densities and tabulated correlation kernels.
//!
//! All kernels are computed in the continuum limit as integrals over the
//! spectral density J(omega), truncated at `omega_max`, using composite
//! Gauss-Legendre quadrature with automatic panel refinement.

use num_complex::Complex64;

use crate::error::{Result, ScleError};
use crate::grid::TimeGrid;

/// Relative tolerance for quadrature panel refinement.
pub const QUADRATURE_RTOL: f64 = 1e-8;
const GL_ORDER: usize = 16;
const MAX_REFINEMENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralDensityKind {
    /// J(w) = Gamma wc^2 w / (pi (wc^2 + w^2))
    OhmicDebye,
    /// J(w) = a w^3 exp(-(w/wc)^2)
    SuperOhmicGauss,
}

/// Parameterized bath spectrum, the source of every kernel in the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    pub kind: SpectralDensityKind,
    pub coupling: f64,
    pub cutoff: f64,
    pub omega_max: f64,
}

impl SpectralDensity {
    /// Defaults the quadrature truncation to `50 * cutoff`.
    pub fn new(kind: SpectralDensityKind, coupling: f64, cutoff: f64) -> Result<Self> {
        Self::with_omega_max(kind, coupling, cutoff, 50.0 * cutoff)
    }

    pub fn with_omega_max(
        kind: SpectralDensityKind,
        coupling: f64,
        cutoff: f64,
        omega_max: f64,
    ) -> Result<Self> {
        if !(coupling >= 0.0) {
            return Err(ScleError::Domain(format!(
                "coupling strength must be non-negative, got {coupling}"
            )));
        }
        if !(cutoff > 0.0) {
            return Err(ScleError::Domain(format!(
                "cutoff frequency must be positive, got {cutoff}"
            )));
        }
        if !(omega_max >= 10.0 * cutoff) {
            return Err(ScleError::Domain(format!(
                "omega_max ({omega_max}) must be at least 10x the cutoff ({cutoff})"
            )));
        }
        Ok(Self { kind, coupling, cutoff, omega_max })
    }

    /// Evaluates J(omega). Negative frequencies are a domain error.
    pub fn eval(&self, omega: f64) -> Result<f64> {
        if omega < 0.0 {
            return Err(ScleError::Domain(format!(
                "spectral density evaluated at negative frequency {omega}"
            )));
        }
        Ok(self.eval_unchecked(omega))
    }

    fn eval_unchecked(&self, omega: f64) -> f64 {
        let wc = self.cutoff;
        match self.kind {
            SpectralDensityKind::OhmicDebye => {
                self.coupling * wc * wc * omega / (std::f64::consts::PI * (wc * wc + omega * omega))
            }
            SpectralDensityKind::SuperOhmicGauss => {
                let r = omega / wc;
                self.coupling * omega.powi(3) * (-r * r).exp()
            }
        }
    }

    /// d/dw J at w=0, used for the analytic w->0 limit of J(w) coth(bw/2).
    fn slope_at_zero(&self) -> f64 {
        match self.kind {
            SpectralDensityKind::OhmicDebye => self.coupling / std::f64::consts::PI,
            SpectralDensityKind::SuperOhmicGauss => 0.0,
        }
    }
}

/// Free-standing form of the spectral density evaluation.
pub fn eval_spectral_density(spec: &SpectralDensity, omega: f64) -> Result<f64> {
    spec.eval(omega)
}

/// Complex correlation kernels sampled on the half-step lag grid.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub grid: TimeGrid,
    /// The spectrum the table was built from; kept so downstream code can
    /// extend the tabulation (circulant embedding needs lags past the grid).
    pub spec: SpectralDensity,
    /// Inverse temperature; `f64::INFINITY` means zero temperature.
    pub beta: f64,
    /// Zero-temperature correlation alpha(tau).
    pub alpha: Vec<Complex64>,
    /// Finite-temperature correlation alpha_T(tau).
    pub alpha_t: Vec<Complex64>,
    /// alpha_tilde = alpha_T - alpha/2.
    pub alpha_tilde: Vec<Complex64>,
}

impl KernelTable {
    /// Tabulates all three kernels on the half-step lag grid of `grid`.
    pub fn build(spec: &SpectralDensity, beta: f64, grid: &TimeGrid) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(ScleError::Domain(format!(
                "inverse temperature must be positive or +inf, got {beta}"
            )));
        }
        let (alpha, alpha_t) = tabulate_kernels(spec, beta, grid)?;
        let alpha_tilde = alpha
            .iter()
            .zip(&alpha_t)
            .map(|(a, at)| at - a * 0.5)
            .collect();
        Ok(Self { grid: grid.clone(), spec: spec.clone(), beta, alpha, alpha_t, alpha_tilde })
    }
}

/// Zero-temperature correlation alpha(tau) on the half-step lag grid.
pub fn tabulate_alpha(spec: &SpectralDensity, grid: &TimeGrid) -> Result<Vec<Complex64>> {
    Ok(tabulate_kernels(spec, f64::INFINITY, grid)?.0)
}

/// Finite-temperature correlation alpha_T(tau) on the half-step lag grid.
pub fn tabulate_alpha_t(
    spec: &SpectralDensity,
    beta: f64,
    grid: &TimeGrid,
) -> Result<Vec<Complex64>> {
    if !(beta > 0.0) {
        return Err(ScleError::Domain(format!(
            "inverse temperature must be positive or +inf, got {beta}"
        )));
    }
    Ok(tabulate_kernels(spec, beta, grid)?.1)
}

/// Pointwise alpha_T - alpha/2 on a shared grid.
pub fn tabulate_alpha_tilde(
    alpha: &[Complex64],
    alpha_t: &[Complex64],
) -> Result<Vec<Complex64>> {
    if alpha.len() != alpha_t.len() {
        return Err(ScleError::Usage(format!(
            "alpha ({}) and alpha_T ({}) are tabulated on different grids",
            alpha.len(),
            alpha_t.len()
        )));
    }
    Ok(alpha.iter().zip(alpha_t).map(|(a, at)| at - a * 0.5).collect())
}

/// Tabulates (alpha, alpha_T) in a single pass so the shared imaginary part
/// is identical bit for bit.
pub(crate) fn tabulate_kernels(
    spec: &SpectralDensity,
    beta: f64,
    grid: &TimeGrid,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let lags: Vec<f64> = (0..grid.n_half_points()).map(|k| grid.lag(k)).collect();

    // Resolve the fastest oscillation e^{-i w_max t_max}: a handful of
    // Gauss-Legendre nodes per period.
    let oscillations = spec.omega_max * grid.max_lag() / std::f64::consts::TAU;
    let mut panels = (oscillations.ceil() as usize).max(8);

    let mut prev = eval_panels(spec, beta, &lags, panels);
    for _ in 0..MAX_REFINEMENTS {
        panels *= 2;
        let next = eval_panels(spec, beta, &lags, panels);
        let scale = next
            .1
            .iter()
            .fold(0.0f64, |m, c| m.max(c.norm()))
            .max(f64::MIN_POSITIVE);
        let worst = prev
            .0
            .iter()
            .chain(&prev.1)
            .zip(next.0.iter().chain(&next.1))
            .fold(0.0f64, |m, (p, n)| m.max((p - n).norm()));
        if worst < QUADRATURE_RTOL * scale {
            return Ok(next);
        }
        prev = next;
    }
    Err(ScleError::Numerical(format!(
        "kernel quadrature did not converge below rtol {QUADRATURE_RTOL} with {panels} panels \
         (omega_max = {}, max lag = {})",
        spec.omega_max,
        grid.max_lag()
    )))
}

fn eval_panels(
    spec: &SpectralDensity,
    beta: f64,
    lags: &[f64],
    panels: usize,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    let width = spec.omega_max / panels as f64;
    let mut alpha = vec![Complex64::ZERO; lags.len()];
    let mut alpha_t = vec![Complex64::ZERO; lags.len()];

    for p in 0..panels {
        let a = p as f64 * width;
        for (x, w) in nodes.iter().zip(&weights) {
            let omega = a + 0.5 * width * (x + 1.0);
            let jw = spec.eval_unchecked(omega) * (0.5 * width * w);
            let jw_th = jw * thermal_factor(spec, beta, omega);
            for (k, &tau) in lags.iter().enumerate() {
                let (s, c) = (omega * tau).sin_cos();
                alpha[k] += Complex64::new(jw * c, -jw * s);
                alpha_t[k].re += jw_th * c;
            }
        }
    }
    // Im alpha_T = Im alpha exactly: the imaginary integrand has no coth factor.
    for (at, a) in alpha_t.iter_mut().zip(&alpha) {
        at.im = a.im;
    }
    (alpha, alpha_t)
}

/// coth(beta omega / 2) with the analytic small-argument limit. The
/// quadrature nodes never sit exactly at omega = 0, but the limit keeps the
/// integrand J(w) coth(bw/2) -> 2 J'(0)/b well behaved there.
fn thermal_factor(spec: &SpectralDensity, beta: f64, omega: f64) -> f64 {
    if beta.is_infinite() {
        return 1.0;
    }
    let x = 0.5 * beta * omega;
    if x < 1e-8 {
        // J(w) coth(bw/2) -> 2 J'(0)/b; expressed as a factor on J(w).
        let j = spec.eval_unchecked(omega);
        if j == 0.0 {
            return 1.0;
        }
        return 2.0 * spec.slope_at_zero() / (beta * j);
    }
    1.0 / x.tanh()
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            // Legendre P_n and its derivative by recurrence.
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                weights[i] = w;
                weights[n - 1 - i] = w;
                break;
            }
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ohmic() -> SpectralDensity {
        SpectralDensity::new(SpectralDensityKind::OhmicDebye, 1.0, 0.5).unwrap()
    }

    fn super_ohmic() -> SpectralDensity {
        SpectralDensity::new(SpectralDensityKind::SuperOhmicGauss, 0.027, 2.2).unwrap()
    }

    /// Independent adaptive Simpson quadrature used as the oracle for the
    /// tabulated kernels. Deliberately a different algorithm from the
    /// Gauss-Legendre panels in the implementation.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fm)
        }
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            fm: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (left, flm) = simpson(f, a, fa, m, fm);
            let (right, frm) = simpson(f, m, fm, b, fb);
            if depth > 50 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            recurse(f, a, fa, m, fm, left, flm, tol / 2.0, depth + 1)
                + recurse(f, m, fm, b, fb, right, frm, tol / 2.0, depth + 1)
        }
        let (fa, fb) = (f(a), f(b));
        let (whole, fm) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, whole, fm, tol, 0)
    }

    fn oracle_alpha_t(spec: &SpectralDensity, beta: f64, tau: f64) -> Complex64 {
        let s = spec.clone();
        let re = adaptive_simpson(
            &move |w: f64| {
                let coth = if beta.is_infinite() {
                    1.0
                } else if 0.5 * beta * w < 1e-12 {
                    2.0 / (beta * w.max(f64::MIN_POSITIVE))
                } else {
                    1.0 / (0.5 * beta * w).tanh()
                };
                s.eval(w).unwrap() * coth * (w * tau).cos()
            },
            1e-12,
            spec.omega_max,
            1e-10,
        );
        let s = spec.clone();
        let im = adaptive_simpson(
            &move |w: f64| -s.eval(w).unwrap() * (w * tau).sin(),
            0.0,
            spec.omega_max,
            1e-10,
        );
        Complex64::new(re, im)
    }

    #[test]
    fn spectral_density_values() {
        // J(0) = 0 for both kinds.
        assert_eq!(ohmic().eval(0.0).unwrap(), 0.0);
        assert_eq!(super_ohmic().eval(0.0).unwrap(), 0.0);
        // OhmicDebye at w = wc: Gamma wc / (2 pi).
        assert!((ohmic().eval(0.5).unwrap() - 0.079577471545947668).abs() < 1e-16);
        // SuperOhmicGauss at w = wc: a wc^3 / e.
        assert!((super_ohmic().eval(2.2).unwrap() - 0.10576386781902498).abs() < 1e-15);
        assert!(ohmic().eval(-0.1).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SpectralDensity::new(SpectralDensityKind::OhmicDebye, -1.0, 0.5).is_err());
        assert!(SpectralDensity::new(SpectralDensityKind::OhmicDebye, 1.0, 0.0).is_err());
        assert!(
            SpectralDensity::with_omega_max(SpectralDensityKind::OhmicDebye, 1.0, 0.5, 1.0)
                .is_err()
        );
    }

    #[test]
    fn alpha_imaginary_part_matches_contour_closed_form() {
        // Im alpha(t) = -(Gamma wc^2 / 2) e^{-wc t} for the untruncated
        // integral; allow the omega_max truncation bound on top of the
        // quadrature tolerance.
        let spec = ohmic();
        let grid = TimeGrid::new(0.5, 10).unwrap();
        let alpha = tabulate_alpha(&spec, &grid).unwrap();
        for &t in &[0.5f64, 1.0, 2.0, 5.0] {
            let k = (t / grid.half_dt()).round() as usize;
            let expected = -0.125 * (-0.5 * t).exp();
            let truncation = 0.25 / (std::f64::consts::PI * spec.omega_max * t);
            assert!(
                (alpha[k].im - expected).abs() < 1e-8 + truncation,
                "t={t}: {} vs {expected}",
                alpha[k].im
            );
        }
        // Frozen spot value: Im alpha(2) = -0.125/e.
        let k = (2.0 / grid.half_dt()).round() as usize;
        assert!((alpha[k].im - (-0.04598493014643029)).abs() < 2e-3);
        assert_eq!(alpha[0].im, 0.0);
    }

    #[test]
    fn alpha_real_part_matches_independent_quadrature() {
        let spec = super_ohmic();
        let grid = TimeGrid::new(0.25, 8).unwrap();
        let alpha = tabulate_alpha(&spec, &grid).unwrap();
        let k = (1.0 / grid.half_dt()).round() as usize;
        // Frozen from a 1e-10 adaptive quadrature over the full Gaussian tail.
        assert!((alpha[k].re - (-0.17258150513356645)).abs() < 1e-8);
    }

    #[test]
    fn alpha_t_reduces_to_alpha_at_zero_temperature() {
        let spec = ohmic();
        let grid = TimeGrid::new(0.2, 20).unwrap();
        let table = KernelTable::build(&spec, f64::INFINITY, &grid).unwrap();
        for (a, at) in table.alpha.iter().zip(&table.alpha_t) {
            assert_eq!(a, at);
        }
        // And alpha_tilde = alpha / 2 pointwise.
        for (a, tld) in table.alpha.iter().zip(&table.alpha_tilde) {
            assert!((tld - a * 0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn finite_temperature_table_against_oracle() {
        let spec = ohmic();
        let grid = TimeGrid::new(0.25, 8).unwrap();
        let table = KernelTable::build(&spec, 1.0, &grid).unwrap();
        // Im alpha_T = Im alpha identically.
        for (a, at) in table.alpha.iter().zip(&table.alpha_t) {
            assert_eq!(a.im, at.im);
        }
        // alpha_tilde = alpha_T - alpha/2 exactly.
        for ((a, at), tld) in table.alpha.iter().zip(&table.alpha_t).zip(&table.alpha_tilde) {
            assert_eq!(*tld, at - a * 0.5);
        }
        // Spot checks against the adaptive-quadrature oracle, including the
        // omega_max-regularized Re alpha_T(0).
        for &tau in &[0.0f64, 0.25, 1.0, 2.0] {
            let k = (tau / grid.half_dt()).round() as usize;
            let oracle = oracle_alpha_t(&spec, 1.0, tau);
            assert!(
                (table.alpha_t[k] - oracle).norm() < 1e-7,
                "tau={tau}: {} vs {oracle}",
                table.alpha_t[k]
            );
        }
        // alpha_tilde spot value at t=1 against the oracle combination.
        let k = (1.0 / grid.half_dt()).round() as usize;
        let oracle = {
            let at = oracle_alpha_t(&spec, 1.0, 1.0);
            let a0 = oracle_alpha_t(&spec, f64::INFINITY, 1.0);
            at - a0 * 0.5
        };
        assert!((table.alpha_tilde[k] - oracle).norm() < 1e-7);
    }

    #[test]
    fn temperature_monotonicity_at_zero_lag() {
        let spec = ohmic();
        let grid = TimeGrid::new(0.5, 4).unwrap();
        let betas = [0.5, 1.0, 10.0, 1000.0];
        let values: Vec<f64> = betas
            .iter()
            .map(|&b| KernelTable::build(&spec, b, &grid).unwrap().alpha_t[0].re)
            .collect();
        for pair in values.windows(2) {
            assert!(pair[0] >= pair[1], "Re alpha_T(0) not monotone in beta: {values:?}");
        }
    }

    #[test]
    fn quadrature_refinement_converged() {
        // Doubling the panels once more changes nothing above tolerance:
        // re-tabulate on a finer-lag grid and compare shared points.
        let spec = ohmic();
        let coarse = TimeGrid::new(0.2, 10).unwrap();
        let fine = TimeGrid::new(0.1, 20).unwrap();
        let a = KernelTable::build(&spec, 1.0, &coarse).unwrap();
        let b = KernelTable::build(&spec, 1.0, &fine).unwrap();
        let scale = a.alpha_t.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        for k in 0..a.alpha_t.len() {
            assert!((a.alpha_t[k] - b.alpha_t[2 * k]).norm() < 2e-8 * scale);
        }
    }

    #[test]
    fn kernel_symmetry_even_autocovariance_spectrum() {
        // K(tau) = 2 Re alpha_T(|tau|) extended evenly has a real DFT that is
        // non-negative up to a small fraction of its maximum. The sharp
        // omega_max truncation leaves O(1e-4) relative negative leakage at
        // frequencies where the true spectrum vanishes, so the bound is 1e-3,
        // not machine-level.
        let spec = ohmic();
        let grid = TimeGrid::new(0.05, 200).unwrap();
        let table = KernelTable::build(&spec, 1.0, &grid).unwrap();
        let n = table.alpha_t.len();
        let m = 2 * (n - 1);
        let mut ring = vec![0.0f64; m];
        for k in 0..n {
            ring[k] = 2.0 * table.alpha_t[k].re;
            if k > 0 && k < n - 1 {
                ring[m - k] = ring[k];
            }
        }
        // Plain DFT; real by symmetry.
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            let mut s = 0.0;
            for (k, r) in ring.iter().enumerate() {
                s += r * (std::f64::consts::TAU * (j * k) as f64 / m as f64).cos();
            }
            min = min.min(s);
            max = max.max(s);
        }
        assert!(min > -1e-3 * max, "spectrum dips to {min} (max {max})");
        assert!(max > 0.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = vec![Complex64::ZERO; 4];
        let b = vec![Complex64::ZERO; 5];
        assert!(tabulate_alpha_tilde(&a, &b).is_err());
    }
}
