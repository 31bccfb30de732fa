//! Synthesis of the correlated complex noise triple (xi, eta, zeta).
//!
//! The contracted pseudo-correlations (no complex conjugation) are
//!
//! ```text
//! M{eta_t eta_s}  = 0
//! M{xi_t  eta_s}  = 2 theta(t-s) Im alpha_T(t-s)
//! M{xi_t  xi_s}   = 2 Re alpha_T(|t-s|)
//! M{zeta_t xi_s}  = 2 sqrt(2) theta(t-s) Re alpha_tilde(t-s)
//! M{zeta_t eta_s} = 2 sqrt(2) theta(t-s) Im alpha_tilde(t-s)
//! ```
//!
//! The kernels pin down only the pseudo-covariance of the triple; the
//! ordinary (conjugated) covariance is free, and it is what controls the
//! spread of individual trajectories. This module realizes the triple as a
//! stationary Gaussian field on a periodic ring, choosing the ordinary
//! covariance as small as the kernels permit.
//!
//! All five kernels are functions of t - s alone, so on a ring of length m
//! the triple decouples into frequency modes. For each mode k the contracted
//! pseudo-moments M{V-hat(k) V-hat(-k)^T} form a 3x3 Hermitian matrix P(k)
//! (the entrywise DFT of the kernel matrix). Writing P(k) = U diag(lambda) U*
//! and drawing one standard complex Gaussian 3-vector g per mode pair,
//!
//! ```text
//! V-hat(+k) = sqrt(m) U diag(|lambda|^(1/2))            g
//! V-hat(-k) = sqrt(m) conj(U) diag(sgn(lambda) |lambda|^(1/2)) conj(g)
//! ```
//!
//! reproduces every kernel exactly on-grid (no positivity requirement on
//! P(k), so no spectrum clipping), while the realized ordinary spectrum is
//! the nuclear norm sum |lambda| - the pointwise minimum any joint Gaussian
//! realization can achieve. This matters enormously in practice: the naive
//! construction (eta as white noise plus causal filters) puts ordinary
//! variance 1/delta into the trajectories at every frequency the kernels do
//! not use, and the resulting multiplicative-noise amplification grows
//! exponentially in time. Self-conjugate modes (k = 0, m/2) have real
//! symmetric P and use a real Gaussian 3-vector instead.
//!
//! zeta couples to the others only through causal cross kernels; carrying it
//! enlarges the xi/eta ordinary spectra (a causal kernel has spectral support
//! everywhere). Runs that request no bath observables therefore drop the
//! zeta row via [`NoisePlan::without_bath_channel`] and sample from the 2x2
//! sub-factorization.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use nalgebra::{Matrix3, SymmetricEigen};

use crate::correlation::{tabulate_alpha_tilde, tabulate_kernels, KernelTable};
use crate::error::{Result, ScleError};
use crate::grid::TimeGrid;

/// Deterministic per-trajectory RNG stream identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTag {
    pub master_seed: u64,
    pub index: u64,
}

impl SeedTag {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.index);
        rng
    }
}

/// How the per-mode standard Gaussians are produced. Both routes yield the
/// same joint law (hence the same five kernels); averaged observables must
/// not depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChiConstruction {
    /// A complex white-noise series is drawn in the time domain and its FFT
    /// supplies the mode Gaussians (spectral filtering of white noise).
    #[default]
    SpectralRoot,
    /// The mode Gaussians are drawn directly in the frequency domain
    /// (classic circulant embedding).
    CirculantEmbedding,
}

/// Precomputed per-mode factors for one kernel table; immutable and shared
/// across trajectory workers.
pub struct NoisePlan {
    grid: TimeGrid,
    n: usize,
    m: usize,
    construction: ChiConstruction,
    bath_channel: bool,
    /// Causal cross kernels, target values (theta(0) weight 1/2 applied).
    kernel_k: Vec<f64>,
    kernel_q: Vec<f64>,
    kernel_c: Vec<f64>,
    /// Target xi autocovariance, 2 Re alpha_T(|tau|).
    chi_cov: Vec<f64>,
    /// Entrywise DFTs of the kernel matrix over the ring, modes 0..=m/2:
    /// s is real (even kernel); k, c, q are the causal cross spectra.
    spec_s: Vec<f64>,
    spec_k: Vec<Complex64>,
    spec_c: Vec<Complex64>,
    spec_q: Vec<Complex64>,
    /// Factor pair per mode (index 0..=m/2); at the self-conjugate modes 0
    /// and m/2 only `factor_plus` is used, against a real Gaussian vector.
    factor_plus: Vec<Matrix3<Complex64>>,
    factor_minus: Vec<Matrix3<Complex64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// One realization of the correlated noise paths on the half-step grid.
/// `zeta` is empty when the plan's bath channel is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub xi: Vec<Complex64>,
    pub eta: Vec<Complex64>,
    pub zeta: Vec<Complex64>,
    pub seed_tag: SeedTag,
}

/// Builds the FFT filters realizing the five contracted kernels.
pub fn build_noise_plan(kernels: &KernelTable) -> Result<NoisePlan> {
    build_noise_plan_with(kernels, ChiConstruction::default())
}

pub fn build_noise_plan_with(
    kernels: &KernelTable,
    construction: ChiConstruction,
) -> Result<NoisePlan> {
    let grid = kernels.grid.clone();
    let n = grid.n_half_points();
    if kernels.alpha_t.len() != n || kernels.alpha_tilde.len() != n {
        return Err(ScleError::Usage(
            "kernel table is incomplete on the half-step grid".into(),
        ));
    }
    let m = (2 * n).next_power_of_two();
    let sqrt2 = std::f64::consts::SQRT_2;

    // theta(0) = 1/2 convention; only kernel_c has a nonzero value there.
    let theta = |k: usize| if k == 0 { 0.5 } else { 1.0 };
    let kernel_k: Vec<f64> =
        (0..n).map(|k| 2.0 * theta(k) * kernels.alpha_t[k].im).collect();
    let kernel_q: Vec<f64> =
        (0..n).map(|k| 2.0 * sqrt2 * theta(k) * kernels.alpha_tilde[k].im).collect();
    let kernel_c: Vec<f64> =
        (0..n).map(|k| 2.0 * sqrt2 * theta(k) * kernels.alpha_tilde[k].re).collect();
    let chi_cov: Vec<f64> = (0..n).map(|k| 2.0 * kernels.alpha_t[k].re).collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);

    // The rings must be filled with true kernel values out to lag m/2 -
    // zero-filling the unused lags puts a value discontinuity into the ring
    // and distorts the mode spectra at the percent level. Lags beyond the
    // grid never influence on-grid covariances, so extending the tabulation
    // is free of modeling choices. One pass yields alpha and alpha_T with a
    // bit-identical shared imaginary part, so alpha_tilde is consistent too.
    let ext_grid = TimeGrid::new(grid.dt(), m / 4)?;
    let (ext_alpha, ext_alpha_t) =
        tabulate_kernels(&kernels.spec, kernels.beta, &ext_grid)?;
    let ext_tilde = tabulate_alpha_tilde(&ext_alpha, &ext_alpha_t)?;
    debug_assert!(ext_grid.n_half_points() > m / 2);

    let ring_even = |vals: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut r = vec![0.0f64; m];
        for k in 0..=m / 2 {
            r[k] = vals(k);
            if k > 0 && k < m / 2 {
                r[m - k] = r[k];
            }
        }
        r
    };
    let ring_causal = |vals: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut r = vec![0.0f64; m];
        for k in 0..=m / 2 {
            r[k] = theta(k) * vals(k);
        }
        r
    };
    let dft = |ring: Vec<f64>| -> Vec<Complex64> {
        let mut buf: Vec<Complex64> =
            ring.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        fft.process(&mut buf);
        buf.truncate(m / 2 + 1);
        buf
    };

    let ring_s = ring_even(&|k| 2.0 * ext_alpha_t[k].re);
    let ring_k = ring_causal(&|k| 2.0 * ext_alpha_t[k].im);
    let ring_c = ring_causal(&|k| 2.0 * sqrt2 * ext_tilde[k].re);
    let ring_q = ring_causal(&|k| 2.0 * sqrt2 * ext_tilde[k].im);

    let spec_s: Vec<f64> = dft(ring_s).into_iter().map(|c| c.re).collect();
    let spec_k = dft(ring_k);
    let spec_c = dft(ring_c);
    let spec_q = dft(ring_q);

    let (factor_plus, factor_minus) =
        factorize_modes(&spec_s, &spec_k, &spec_c, &spec_q, true);

    Ok(NoisePlan {
        grid,
        n,
        m,
        construction,
        bath_channel: true,
        kernel_k,
        kernel_q,
        kernel_c,
        chi_cov,
        spec_s,
        spec_k,
        spec_c,
        spec_q,
        factor_plus,
        factor_minus,
        fft,
        ifft,
    })
}

/// Eigen-factorizes the 3x3 Hermitian pseudo-spectral matrix of each ring
/// mode. For mode k with P = U diag(lambda) U* the pair
/// `(U |lambda|^(1/2), conj(U) sgn(lambda) |lambda|^(1/2))` satisfies
/// `plus * minus^T = P` with no sign restriction on the eigenvalues; the
/// realized ordinary spectrum `U |lambda| U*` is the smallest possible. The
/// self-conjugate modes 0 and m/2 have real symmetric P; there a single
/// factor T = Q diag(sqrt(lambda) or i sqrt(-lambda)) with T T^T = P is
/// stored in the `plus` slot and applied to a real Gaussian vector.
fn factorize_modes(
    spec_s: &[f64],
    spec_k: &[Complex64],
    spec_c: &[Complex64],
    spec_q: &[Complex64],
    bath: bool,
) -> (Vec<Matrix3<Complex64>>, Vec<Matrix3<Complex64>>) {
    let half = spec_s.len() - 1;
    let mut plus = Vec::with_capacity(half + 1);
    let mut minus = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let (c, q) = if bath {
            (spec_c[k], spec_q[k])
        } else {
            (Complex64::ZERO, Complex64::ZERO)
        };
        if k == 0 || k == half {
            // Real symmetric block; at these modes every causal spectrum is
            // real because the ring pairs each lag with its mirror image.
            let p = nalgebra::Matrix3::new(
                spec_s[k], spec_k[k].re, c.re,
                spec_k[k].re, 0.0, q.re,
                c.re, q.re, 0.0,
            );
            let eig = SymmetricEigen::new(p);
            let mut t = Matrix3::<Complex64>::zeros();
            for col in 0..3 {
                let lam = eig.eigenvalues[col];
                let root = if lam >= 0.0 {
                    Complex64::new(lam.sqrt(), 0.0)
                } else {
                    Complex64::new(0.0, (-lam).sqrt())
                };
                for row in 0..3 {
                    t[(row, col)] = root * eig.eigenvectors[(row, col)];
                }
            }
            plus.push(t);
            minus.push(Matrix3::zeros());
        } else {
            let p = Matrix3::new(
                Complex64::new(spec_s[k], 0.0), spec_k[k], c.conj(),
                spec_k[k].conj(), Complex64::ZERO, q.conj(),
                c, q, Complex64::ZERO,
            );
            let eig = SymmetricEigen::new(p);
            let mut bp = Matrix3::<Complex64>::zeros();
            let mut bm = Matrix3::<Complex64>::zeros();
            for col in 0..3 {
                let lam = eig.eigenvalues[col];
                let root = lam.abs().sqrt();
                let signed = lam.signum() * root;
                for row in 0..3 {
                    let u = eig.eigenvectors[(row, col)];
                    bp[(row, col)] = u * root;
                    bm[(row, col)] = u.conj() * signed;
                }
            }
            plus.push(bp);
            minus.push(bm);
        }
    }
    (plus, minus)
}

impl NoisePlan {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn pad_length(&self) -> usize {
        self.m
    }

    pub fn construction(&self) -> ChiConstruction {
        self.construction
    }

    /// Whether bundles carry the zeta path (and the white component of xi
    /// that correlates with it).
    pub fn has_bath_channel(&self) -> bool {
        self.bath_channel
    }

    /// Drops the zeta row from the mode matrices and re-factorizes. The
    /// xi/eta kernels are unchanged, but their realized ordinary spectra
    /// shrink (a causal cross kernel forces spectral support everywhere), so
    /// per-trajectory variance is lower. Use for runs that request no bath
    /// observables; bundles then carry an empty `zeta`.
    pub fn without_bath_channel(mut self) -> Self {
        if self.bath_channel {
            self.bath_channel = false;
            let (plus, minus) = factorize_modes(
                &self.spec_s, &self.spec_k, &self.spec_c, &self.spec_q, false,
            );
            self.factor_plus = plus;
            self.factor_minus = minus;
        }
        self
    }

    /// Realized ordinary (conjugated) per-point variances E|xi|^2, E|eta|^2,
    /// E|zeta|^2 of the stationary triple.
    pub fn ordinary_variance(&self) -> [f64; 3] {
        let half = self.m / 2;
        let mut acc = [0.0f64; 3];
        for k in 0..=half {
            for row in 0..3 {
                let mut s = 0.0;
                for col in 0..3 {
                    s += self.factor_plus[k][(row, col)].norm_sqr();
                    if k != 0 && k != half {
                        s += self.factor_minus[k][(row, col)].norm_sqr();
                    }
                }
                acc[row] += s;
            }
        }
        let inv_m = 1.0 / self.m as f64;
        [acc[0] * inv_m, acc[1] * inv_m, acc[2] * inv_m]
    }

    /// Draws one bundle. The (master_seed, index) pair fully determines the
    /// output, independent of worker count.
    pub fn sample_bundle(&self, seed_tag: SeedTag) -> NoiseBundle {
        let mut rng = seed_tag.rng();
        let (n, m) = (self.n, self.m);
        let half = m / 2;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let root_m = (m as f64).sqrt();

        // Per-mode standard Gaussians: g[c][k] is CN(0,1) for the paired
        // modes k = 1..m/2-1, and edge[c][0|1] is N(0,1) real for the
        // self-conjugate modes 0 and m/2. Both constructions consume the RNG
        // in a fixed order, so bundles are worker-count independent.
        let mut g = vec![vec![Complex64::ZERO; half]; 3];
        let mut edge = [[0.0f64; 3]; 2];
        match self.construction {
            ChiConstruction::CirculantEmbedding => {
                for c in 0..3 {
                    edge[0][c] = rng.sample(StandardNormal);
                }
                for k in 1..half {
                    for c in 0..3 {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        g[c][k] = Complex64::new(re, im) * inv_sqrt2;
                    }
                }
                for c in 0..3 {
                    edge[1][c] = rng.sample(StandardNormal);
                }
            }
            ChiConstruction::SpectralRoot => {
                // A complex white series (unit ordinary variance, zero
                // pseudo-variance) has iid CN(0,1) DFT coefficients at every
                // mode once scaled by 1/sqrt(m).
                let inv_root_m = 1.0 / root_m;
                for c in 0..3 {
                    let mut buf: Vec<Complex64> = (0..m)
                        .map(|_| {
                            let re: f64 = rng.sample(StandardNormal);
                            let im: f64 = rng.sample(StandardNormal);
                            Complex64::new(re, im) * inv_sqrt2
                        })
                        .collect();
                    self.fft.process(&mut buf);
                    for k in 1..half {
                        g[c][k] = buf[k] * inv_root_m;
                    }
                    let sqrt2 = std::f64::consts::SQRT_2;
                    edge[0][c] = sqrt2 * buf[0].re * inv_root_m;
                    edge[1][c] = sqrt2 * buf[half].re * inv_root_m;
                }
            }
        }

        // Assemble the mode coefficients of each component and invert.
        let comps = if self.bath_channel { 3 } else { 2 };
        let mut v = vec![vec![Complex64::ZERO; m]; comps];
        for k in 1..half {
            let bp = &self.factor_plus[k];
            let bm = &self.factor_minus[k];
            for (row, vc) in v.iter_mut().enumerate() {
                let mut fwd = Complex64::ZERO;
                let mut bwd = Complex64::ZERO;
                for col in 0..3 {
                    fwd += bp[(row, col)] * g[col][k];
                    bwd += bm[(row, col)] * g[col][k].conj();
                }
                vc[k] = fwd * root_m;
                vc[m - k] = bwd * root_m;
            }
        }
        for (e, k) in [(0usize, 0usize), (1, half)] {
            let t = &self.factor_plus[if e == 0 { 0 } else { half }];
            for (row, vc) in v.iter_mut().enumerate() {
                let mut s = Complex64::ZERO;
                for col in 0..3 {
                    s += t[(row, col)] * edge[e][col];
                }
                vc[k] = s * root_m;
            }
        }

        let inv_m = 1.0 / m as f64;
        let mut paths = v.into_iter().map(|mut vc| {
            self.ifft.process(&mut vc);
            vc.truncate(n);
            for z in &mut vc {
                *z *= inv_m;
            }
            vc
        });
        let xi = paths.next().expect("xi path");
        let eta = paths.next().expect("eta path");
        let zeta = paths.next().unwrap_or_default();

        NoiseBundle { xi, eta, zeta, seed_tag }
    }

    /// Target pseudo-correlation M{a_t b_s} for half-grid indices (t, s).
    pub fn target(&self, pair: CorrelationPair, t_idx: usize, s_idx: usize) -> Complex64 {
        let causal = |kernel: &[f64]| -> f64 {
            if t_idx >= s_idx {
                let lag = t_idx - s_idx;
                if lag < self.n {
                    kernel[lag]
                } else {
                    0.0
                }
            } else {
                0.0
            }
        };
        let v = match pair {
            CorrelationPair::EtaEta => 0.0,
            CorrelationPair::XiEta => causal(&self.kernel_k),
            CorrelationPair::XiXi => {
                let lag = t_idx.abs_diff(s_idx);
                if lag < self.n {
                    self.chi_cov[lag]
                } else {
                    0.0
                }
            }
            CorrelationPair::ZetaXi => causal(&self.kernel_c),
            CorrelationPair::ZetaEta => causal(&self.kernel_q),
        };
        Complex64::new(v, 0.0)
    }
}

impl NoiseBundle {
    pub fn is_finite(&self) -> bool {
        self.xi
            .iter()
            .chain(&self.eta)
            .chain(&self.zeta)
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    fn series(&self, which: NoiseSeries) -> &[Complex64] {
        match which {
            NoiseSeries::Xi => &self.xi,
            NoiseSeries::Eta => &self.eta,
            NoiseSeries::Zeta => &self.zeta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NoiseSeries {
    Xi,
    Eta,
    Zeta,
}

/// The five contracted kernels, as (left series, right series) selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationPair {
    EtaEta,
    XiEta,
    XiXi,
    ZetaXi,
    ZetaEta,
}

impl CorrelationPair {
    pub const ALL: [CorrelationPair; 5] = [
        CorrelationPair::EtaEta,
        CorrelationPair::XiEta,
        CorrelationPair::XiXi,
        CorrelationPair::ZetaXi,
        CorrelationPair::ZetaEta,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorrelationPair::EtaEta => "eta_eta",
            CorrelationPair::XiEta => "xi_eta",
            CorrelationPair::XiXi => "xi_xi",
            CorrelationPair::ZetaXi => "zeta_xi",
            CorrelationPair::ZetaEta => "zeta_eta",
        }
    }

    fn selectors(&self) -> (NoiseSeries, NoiseSeries) {
        match self {
            CorrelationPair::EtaEta => (NoiseSeries::Eta, NoiseSeries::Eta),
            CorrelationPair::XiEta => (NoiseSeries::Xi, NoiseSeries::Eta),
            CorrelationPair::XiXi => (NoiseSeries::Xi, NoiseSeries::Xi),
            CorrelationPair::ZetaXi => (NoiseSeries::Zeta, NoiseSeries::Xi),
            CorrelationPair::ZetaEta => (NoiseSeries::Zeta, NoiseSeries::Eta),
        }
    }
}

/// Empirical pseudo-correlation of one pair on a (t, s) probe grid, with
/// per-point standard errors and the plan's target values.
#[derive(Debug, Clone)]
pub struct CorrelationEstimate {
    pub pair: CorrelationPair,
    /// Half-grid indices probed, both axes.
    pub probes: Vec<usize>,
    /// Row-major (t, s) estimates.
    pub estimate: Vec<Complex64>,
    pub stderr: Vec<f64>,
    pub target: Vec<Complex64>,
    pub n_samples: u64,
}

impl CorrelationEstimate {
    /// Worst z-score over the probe grid. Points with zero standard error
    /// must match the target to absolute 1e-12 of the kernel scale.
    pub fn max_z(&self) -> f64 {
        let scale = self
            .target
            .iter()
            .fold(0.0f64, |m, t| m.max(t.norm()))
            .max(1e-300);
        let mut worst = 0.0f64;
        for ((e, t), se) in self.estimate.iter().zip(&self.target).zip(&self.stderr) {
            let dev = (e - t).norm();
            let z = if *se > 0.0 {
                dev / se
            } else if dev <= 1e-12 * scale {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        worst
    }

    pub fn passes(&self, n_sigma: f64) -> bool {
        self.max_z() <= n_sigma
    }
}

struct PairAccum {
    sum: Vec<Complex64>,
    sum_sq: Vec<f64>,
}

impl PairAccum {
    fn new(p: usize) -> Self {
        Self { sum: vec![Complex64::ZERO; p * p], sum_sq: vec![0.0; p * p] }
    }

    fn add(&mut self, a: &[Complex64], b: &[Complex64]) {
        let p = a.len();
        for i in 0..p {
            let ai = a[i];
            let row = i * p;
            for j in 0..p {
                let prod = ai * b[j];
                self.sum[row + j] += prod;
                self.sum_sq[row + j] += prod.norm_sqr();
            }
        }
    }

    fn merge(&mut self, other: &PairAccum) {
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        for (s, o) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *s += o;
        }
    }

    fn finish(
        self,
        plan: &NoisePlan,
        pair: CorrelationPair,
        probes: &[usize],
        n_samples: u64,
    ) -> CorrelationEstimate {
        let r = n_samples as f64;
        let p = probes.len();
        let mut estimate = Vec::with_capacity(p * p);
        let mut stderr = Vec::with_capacity(p * p);
        let mut target = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                let mean = self.sum[i * p + j] / r;
                let var = (self.sum_sq[i * p + j] / r - mean.norm_sqr()).max(0.0);
                estimate.push(mean);
                stderr.push((var / r).sqrt());
                target.push(plan.target(pair, probes[i], probes[j]));
            }
        }
        CorrelationEstimate { pair, probes: probes.to_vec(), estimate, stderr, target, n_samples }
    }
}

/// Empirical pseudo-correlation over an explicit set of bundles.
pub fn empirical_correlation(
    plan: &NoisePlan,
    bundles: &[NoiseBundle],
    which: CorrelationPair,
    probes: &[usize],
) -> Result<CorrelationEstimate> {
    if bundles.len() < 1000 {
        return Err(ScleError::Usage(format!(
            "empirical correlation needs at least 1000 bundles, got {}",
            bundles.len()
        )));
    }
    validate_probes(plan, probes)?;
    let (sa, sb) = which.selectors();
    let mut acc = PairAccum::new(probes.len());
    let mut av = vec![Complex64::ZERO; probes.len()];
    let mut bv = vec![Complex64::ZERO; probes.len()];
    for bundle in bundles {
        gather(bundle.series(sa), probes, &mut av);
        gather(bundle.series(sb), probes, &mut bv);
        acc.add(&av, &bv);
    }
    Ok(acc.finish(plan, which, probes, bundles.len() as u64))
}

/// Streams freshly sampled bundles through all five pair estimators without
/// retaining them; used by the noise-check front end.
pub fn empirical_correlations_streaming(
    plan: &NoisePlan,
    master_seed: u64,
    n_samples: u64,
    probes: &[usize],
) -> Result<Vec<CorrelationEstimate>> {
    if n_samples < 1000 {
        return Err(ScleError::Usage(format!(
            "empirical correlation needs at least 1000 samples, got {n_samples}"
        )));
    }
    validate_probes(plan, probes)?;
    let p = probes.len();
    const CHUNK: u64 = 512;
    let n_chunks = n_samples.div_ceil(CHUNK);

    // fold/reduce keeps one accumulator set per worker; with large probe
    // grids a per-chunk accumulator collection would dominate memory.
    let new_accs = || -> [PairAccum; 5] {
        [
            PairAccum::new(p),
            PairAccum::new(p),
            PairAccum::new(p),
            PairAccum::new(p),
            PairAccum::new(p),
        ]
    };
    let merged = (0..n_chunks)
        .into_par_iter()
        .fold(new_accs, |mut accs, c| {
            let mut vals = [
                vec![Complex64::ZERO; p],
                vec![Complex64::ZERO; p],
                vec![Complex64::ZERO; p],
            ];
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n_samples);
            for i in lo..hi {
                let bundle = plan.sample_bundle(SeedTag { master_seed, index: i });
                gather(&bundle.xi, probes, &mut vals[0]);
                gather(&bundle.eta, probes, &mut vals[1]);
                gather(&bundle.zeta, probes, &mut vals[2]);
                for (k, pair) in CorrelationPair::ALL.iter().enumerate() {
                    let (sa, sb) = pair.selectors();
                    let a = match sa {
                        NoiseSeries::Xi => &vals[0],
                        NoiseSeries::Eta => &vals[1],
                        NoiseSeries::Zeta => &vals[2],
                    };
                    let b = match sb {
                        NoiseSeries::Xi => &vals[0],
                        NoiseSeries::Eta => &vals[1],
                        NoiseSeries::Zeta => &vals[2],
                    };
                    accs[k].add(a, b);
                }
            }
            accs
        })
        .reduce(new_accs, |mut left, right| {
            for (m, r) in left.iter_mut().zip(right.iter()) {
                m.merge(r);
            }
            left
        });
    Ok(merged
        .into_iter()
        .zip(CorrelationPair::ALL)
        .map(|(acc, pair)| acc.finish(plan, pair, probes, n_samples))
        .collect())
}

fn gather(series: &[Complex64], probes: &[usize], out: &mut [Complex64]) {
    for (o, &idx) in out.iter_mut().zip(probes) {
        *o = series[idx];
    }
}

fn validate_probes(plan: &NoisePlan, probes: &[usize]) -> Result<()> {
    if !plan.bath_channel {
        return Err(ScleError::Usage(
            "correlation validation needs the bath channel enabled".into(),
        ));
    }
    if probes.is_empty() {
        return Err(ScleError::Usage("probe set is empty".into()));
    }
    if let Some(&bad) = probes.iter().find(|&&i| i >= plan.n) {
        return Err(ScleError::Usage(format!(
            "probe index {bad} outside the half-step grid (n = {})",
            plan.n
        )));
    }
    Ok(())
}

/// Evenly spaced probe indices over the half-step grid.
pub fn even_probes(plan: &NoisePlan, count: usize) -> Vec<usize> {
    let n = plan.n_points();
    let count = count.min(n).max(1);
    (0..count).map(|i| i * (n - 1) / (count.max(2) - 1).max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{KernelTable, SpectralDensity, SpectralDensityKind};

    fn plan(gamma: f64, beta: f64, dt: f64, steps: usize) -> NoisePlan {
        let spec = SpectralDensity::new(SpectralDensityKind::OhmicDebye, gamma, 0.5).unwrap();
        let grid = TimeGrid::new(dt, steps).unwrap();
        let kernels = KernelTable::build(&spec, beta, &grid).unwrap();
        build_noise_plan(&kernels).unwrap()
    }

    #[test]
    fn degenerate_bath_gives_zero_noise() {
        // Gamma = 0: every kernel vanishes, every mode matrix is zero, and
        // the minimal realization is identically zero noise.
        let p = plan(0.0, 1.0, 0.1, 20);
        let b = p.sample_bundle(SeedTag { master_seed: 7, index: 3 });
        assert!(b.xi.iter().all(|c| *c == Complex64::ZERO));
        assert!(b.eta.iter().all(|c| *c == Complex64::ZERO));
        assert!(b.zeta.iter().all(|c| *c == Complex64::ZERO));
        assert!(b.is_finite());

        let p = plan(0.0, 1.0, 0.1, 20).without_bath_channel();
        let b = p.sample_bundle(SeedTag { master_seed: 7, index: 3 });
        assert!(b.xi.iter().all(|c| *c == Complex64::ZERO));
        assert!(b.zeta.is_empty());
    }

    #[test]
    fn empirical_variances_match_plan() {
        // The stationary per-point variances of the sampled paths agree with
        // the factorization's row norms, and dropping the bath channel can
        // only shrink the xi/eta variances.
        let p = plan(1.0, 1.0, 0.1, 30);
        let var = p.ordinary_variance();
        assert!(var.iter().all(|v| *v > 0.0));

        let n_samples = 2000u64;
        let mut acc = [0.0f64; 3];
        let mut count = 0usize;
        for i in 0..n_samples {
            let b = p.sample_bundle(SeedTag { master_seed: 11, index: i });
            for j in 0..p.n_points() {
                acc[0] += b.xi[j].norm_sqr();
                acc[1] += b.eta[j].norm_sqr();
                acc[2] += b.zeta[j].norm_sqr();
                count += 1;
            }
        }
        for (a, v) in acc.iter().zip(&var) {
            let emp = a / count as f64;
            assert!(
                (emp - v).abs() < 0.2 * v,
                "empirical {emp} vs plan {v} (all: {var:?})"
            );
        }

        // Compressing to the xi/eta block cannot grow the nuclear norm, so
        // the combined variance shrinks (componentwise it need not).
        let q = plan(1.0, 1.0, 0.1, 30).without_bath_channel();
        let qvar = q.ordinary_variance();
        assert!(qvar[0] + qvar[1] <= var[0] + var[1] + 1e-12);
        assert!(qvar[2].abs() < 1e-12);
    }

    #[test]
    fn same_seed_tag_is_bitwise_identical() {
        let p = plan(1.0, 1.0, 0.05, 40);
        let tag = SeedTag { master_seed: 99, index: 12345 };
        let a = p.sample_bundle(tag);
        let b = p.sample_bundle(tag);
        assert_eq!(a, b);
        let c = p.sample_bundle(SeedTag { master_seed: 99, index: 12346 });
        assert_ne!(a, c);
    }

    #[test]
    fn pad_length_allows_linear_convolution() {
        let p = plan(1.0, 1.0, 0.05, 40);
        assert!(p.pad_length() >= 2 * p.n_points());
    }

    #[test]
    fn empirical_kernels_within_five_sigma() {
        let p = plan(1.0, 1.0, 0.1, 30);
        let probes = even_probes(&p, 12);
        let reports =
            empirical_correlations_streaming(&p, 2024, 20_000, &probes).unwrap();
        for r in &reports {
            assert!(
                r.passes(5.5),
                "{} failed: max z = {}",
                r.pair.name(),
                r.max_z()
            );
        }
    }

    #[test]
    fn causality_of_cross_kernels() {
        // M{xi_t eta_s} for t < s is zero within statistical error.
        let p = plan(1.0, 1.0, 0.1, 30);
        let probes = vec![5usize, 40];
        let reports = empirical_correlations_streaming(&p, 5, 10_000, &probes).unwrap();
        let xi_eta = &reports[1];
        assert_eq!(xi_eta.pair, CorrelationPair::XiEta);
        // (t, s) = (probe 0, probe 1) has t < s: target is zero.
        assert_eq!(xi_eta.target[1], Complex64::ZERO);
        let dev = xi_eta.estimate[1].norm();
        assert!(dev < 5.5 * xi_eta.stderr[1], "acausal leak: {dev}");
    }

    #[test]
    fn zero_mean_noise() {
        let p = plan(1.0, 1.0, 0.1, 20);
        let n_samples = 20_000u64;
        let mut mean = Complex64::ZERO;
        for i in 0..n_samples {
            let b = p.sample_bundle(SeedTag { master_seed: 1, index: i });
            mean += b.xi[10];
        }
        mean /= n_samples as f64;
        // The mean shrinks like sqrt(E|xi|^2 / R); bound with a generous
        // variance estimate.
        assert!(mean.norm() < 5.0 * 3.0 / (n_samples as f64).sqrt());
    }

    #[test]
    fn too_few_bundles_is_usage_error() {
        let p = plan(1.0, 1.0, 0.1, 10);
        let bundles: Vec<NoiseBundle> = (0..10)
            .map(|i| p.sample_bundle(SeedTag { master_seed: 0, index: i }))
            .collect();
        assert!(matches!(
            empirical_correlation(&p, &bundles, CorrelationPair::XiXi, &[0, 5]),
            Err(ScleError::Usage(_))
        ));
    }

    #[test]
    fn both_constructions_share_targets() {
        let spec = SpectralDensity::new(SpectralDensityKind::OhmicDebye, 1.0, 0.5).unwrap();
        let grid = TimeGrid::new(0.1, 30).unwrap();
        let kernels = KernelTable::build(&spec, 1.0, &grid).unwrap();
        let pa = build_noise_plan_with(&kernels, ChiConstruction::SpectralRoot).unwrap();
        let pb = build_noise_plan_with(&kernels, ChiConstruction::CirculantEmbedding).unwrap();
        let probes = even_probes(&pa, 10);
        let ra = empirical_correlations_streaming(&pa, 3, 20_000, &probes).unwrap();
        let rb = empirical_correlations_streaming(&pb, 4, 20_000, &probes).unwrap();
        for (a, b) in ra.iter().zip(&rb) {
            assert!(a.passes(5.5), "{} (spectral root): z={}", a.pair.name(), a.max_z());
            assert!(b.passes(5.5), "{} (circulant): z={}", b.pair.name(), b.max_z());
        }
    }
}
