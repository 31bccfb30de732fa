//! Trajectory ensembles: noise-averaged estimators with standard errors,
//! deterministic parallel execution, and exact checkpoint/resume.
//!
//! Trajectories are grouped into fixed-size blocks. Each block is accumulated
//! sequentially; blocks are merged in index order, so the result is identical
//! for any worker count and resume is exact at block boundaries.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{integrate_trajectory, OperatorBasisModel};
use crate::error::{Result, ScleError};
use crate::noise::{NoisePlan, SeedTag};

/// Trajectories per accumulation block. Part of the reproducibility
/// contract: changing it changes the floating-point merge order.
pub const BLOCK_SIZE: u64 = 256;
const BLOCKS_PER_CHUNK: u64 = 16;
/// Runs fail when more than this fraction of trajectories diverges.
pub const MAX_REJECTED_FRACTION: f64 = 1e-3;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SCLECKP1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableKind {
    /// sum_l b_l <Y_l(t)>
    System,
    /// (sum_l b_l <Y_l(t)>) * zeta_t with b the coupling-operator coefficients
    CouplingEnergy,
    /// (sum_l b_l <Y_l(t)>) * zeta_t with b the identity coefficients
    BathDisplacement,
}

/// One requested estimator.
#[derive(Debug, Clone)]
pub struct ObservableRequest {
    pub name: String,
    pub kind: ObservableKind,
    pub coeffs: DVector<Complex64>,
}

impl ObservableRequest {
    pub fn system(name: impl Into<String>, coeffs: DVector<Complex64>) -> Self {
        Self { name: name.into(), kind: ObservableKind::System, coeffs }
    }

    pub fn coupling_energy(model: &OperatorBasisModel) -> Self {
        Self {
            name: "coupling_energy".into(),
            kind: ObservableKind::CouplingEnergy,
            coeffs: model.s_coeffs.clone(),
        }
    }

    pub fn bath_displacement(model: &OperatorBasisModel) -> Self {
        Self {
            name: "bath_displacement".into(),
            kind: ObservableKind::BathDisplacement,
            coeffs: model.identity_coeffs.clone(),
        }
    }
}

/// Streaming per-observable, per-time mean and M2 over trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    pub n_obs: usize,
    pub n_times: usize,
    pub count: u64,
    pub rejected: u64,
    pub master_seed: u64,
    mean: Vec<Complex64>,
    m2: Vec<f64>,
}

impl EnsembleAccumulator {
    pub fn new(n_obs: usize, n_times: usize, master_seed: u64) -> Self {
        Self {
            n_obs,
            n_times,
            count: 0,
            rejected: 0,
            master_seed,
            mean: vec![Complex64::ZERO; n_obs * n_times],
            m2: vec![0.0; n_obs * n_times],
        }
    }

    /// Welford update with one trajectory's estimator values
    /// (n_obs * n_times, row-major by observable).
    pub fn accumulate(&mut self, sample: &[Complex64]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        let inv_n = 1.0 / self.count as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *m;
            *m += delta * inv_n;
            *s += (delta.conj() * (x - *m)).re;
        }
    }

    /// Pairwise merge; `other` is consumed on the right (index order).
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<()> {
        if self.n_obs != other.n_obs
            || self.n_times != other.n_times
            || self.master_seed != other.master_seed
        {
            return Err(ScleError::Usage(
                "cannot merge accumulators with different shapes or seeds".into(),
            ));
        }
        if other.count == 0 {
            self.rejected += other.rejected;
            return Ok(());
        }
        if self.count == 0 {
            let rej = self.rejected;
            *self = other.clone();
            self.rejected += rej;
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * (nb / n);
            self.m2[i] += other.m2[i] + delta.norm_sqr() * na * nb / n;
        }
        self.count += other.count;
        self.rejected += other.rejected;
        Ok(())
    }

    pub fn mean_at(&self, obs: usize, k: usize) -> Complex64 {
        self.mean[obs * self.n_times + k]
    }

    pub fn stderr_at(&self, obs: usize, k: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = self.m2[obs * self.n_times + k] / (self.count - 1) as f64;
        (var / self.count as f64).sqrt()
    }
}

/// Associative pairwise merge of two accumulators.
pub fn merge_accumulators(
    a: &EnsembleAccumulator,
    b: &EnsembleAccumulator,
) -> Result<EnsembleAccumulator> {
    let mut out = a.clone();
    out.merge(b)?;
    Ok(out)
}

/// One noise-averaged estimator series.
#[derive(Debug, Clone)]
pub struct ObservableSeries {
    pub name: String,
    pub kind: ObservableKind,
    pub mean: Vec<Complex64>,
    pub stderr: Vec<f64>,
}

/// Final ensemble output.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub observables: Vec<ObservableSeries>,
    pub n_trajectories: u64,
    pub rejected: u64,
    pub master_seed: u64,
}

impl EnsembleResult {
    pub fn series(&self, name: &str) -> Option<&ObservableSeries> {
        self.observables.iter().find(|s| s.name == name)
    }
}

/// Checkpointing and early-stop controls for `run_ensemble`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write a checkpoint to this path every `checkpoint_every` trajectories
    /// (rounded up to block boundaries).
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every: Option<u64>,
    /// Resume from this checkpoint if the file exists.
    pub resume_from: Option<PathBuf>,
    /// Stop (with a checkpoint written) after at least this many
    /// trajectories; used to exercise interrupt/resume.
    pub stop_after: Option<u64>,
    /// Identifies the run configuration inside checkpoints.
    pub fingerprint: String,
}

/// Outcome of `run_ensemble`: either the full result or an interruption at a
/// block boundary with a checkpoint on disk.
#[derive(Debug)]
pub enum RunOutcome {
    Complete(EnsembleResult),
    Interrupted { next_index: u64 },
}

impl RunOutcome {
    pub fn into_result(self) -> Result<EnsembleResult> {
        match self {
            RunOutcome::Complete(r) => Ok(r),
            RunOutcome::Interrupted { next_index } => Err(ScleError::Run(format!(
                "run interrupted at trajectory {next_index}"
            ))),
        }
    }
}

/// Runs `n_traj` trajectories and accumulates every requested estimator.
pub fn run_ensemble(
    model: &OperatorBasisModel,
    plan: &NoisePlan,
    n_traj: u64,
    master_seed: u64,
    requests: &[ObservableRequest],
) -> Result<EnsembleResult> {
    match run_ensemble_with(model, plan, n_traj, master_seed, requests, &RunOptions::default())? {
        RunOutcome::Complete(r) => Ok(r),
        RunOutcome::Interrupted { .. } => unreachable!("no stop requested"),
    }
}

pub fn run_ensemble_with(
    model: &OperatorBasisModel,
    plan: &NoisePlan,
    n_traj: u64,
    master_seed: u64,
    requests: &[ObservableRequest],
    options: &RunOptions,
) -> Result<RunOutcome> {
    if n_traj == 0 {
        return Err(ScleError::Usage("ensemble needs at least one trajectory".into()));
    }
    if requests.is_empty() {
        return Err(ScleError::Usage("no observables requested".into()));
    }
    for req in requests {
        if req.coeffs.len() != model.dim() {
            return Err(ScleError::Usage(format!(
                "observable '{}' has {} coefficients for a basis of dimension {}",
                req.name,
                req.coeffs.len(),
                model.dim()
            )));
        }
        if req.kind != ObservableKind::System && !plan.has_bath_channel() {
            return Err(ScleError::Usage(format!(
                "observable '{}' needs the noise plan's bath channel",
                req.name
            )));
        }
    }

    let grid = plan.grid().clone();
    let n_times = grid.n_full_points();
    let n_obs = requests.len();

    let mut master = EnsembleAccumulator::new(n_obs, n_times, master_seed);
    let mut next_index = 0u64;
    if let Some(path) = &options.resume_from {
        if path.exists() {
            let (acc, idx) = load_checkpoint(path, &options.fingerprint)?;
            if acc.n_obs != n_obs || acc.n_times != n_times || acc.master_seed != master_seed {
                return Err(ScleError::Usage(format!(
                    "checkpoint {} does not match this run configuration",
                    path.display()
                )));
            }
            master = acc;
            next_index = idx;
        }
    }

    let n_blocks = n_traj.div_ceil(BLOCK_SIZE);
    let checkpoint_blocks = options
        .checkpoint_every
        .map(|every| every.div_ceil(BLOCK_SIZE).max(1));
    let mut blocks_since_checkpoint = 0u64;

    // An early-stop request truncates the chunk so the interruption lands on
    // the first block boundary at or past the requested count.
    let stop_block = options
        .stop_after
        .map(|s| s.div_ceil(BLOCK_SIZE).max(1))
        .unwrap_or(u64::MAX);

    let mut block = next_index / BLOCK_SIZE;
    while block < n_blocks {
        let chunk_end = (block + BLOCKS_PER_CHUNK).min(n_blocks).min(stop_block.max(block + 1));
        let partials: Vec<Result<EnsembleAccumulator>> = (block..chunk_end)
            .into_par_iter()
            .map(|b| run_block(model, plan, n_traj, master_seed, requests, b, n_times))
            .collect();
        for partial in partials {
            master.merge(&partial?)?;
        }
        let done_blocks = chunk_end - block;
        block = chunk_end;
        next_index = (block * BLOCK_SIZE).min(n_traj);

        if let (Some(path), Some(every)) = (&options.checkpoint_path, checkpoint_blocks) {
            blocks_since_checkpoint += done_blocks;
            if blocks_since_checkpoint >= every && block < n_blocks {
                write_checkpoint(path, &options.fingerprint, &master, next_index)?;
                blocks_since_checkpoint = 0;
            }
        }
        if let Some(stop) = options.stop_after {
            if next_index >= stop && block < n_blocks {
                if let Some(path) = &options.checkpoint_path {
                    write_checkpoint(path, &options.fingerprint, &master, next_index)?;
                }
                return Ok(RunOutcome::Interrupted { next_index });
            }
        }
    }

    let rejected_fraction = master.rejected as f64 / n_traj as f64;
    if rejected_fraction > MAX_REJECTED_FRACTION {
        return Err(ScleError::Run(format!(
            "{} of {} trajectories diverged ({:.3}%), above the {:.1}% limit",
            master.rejected,
            n_traj,
            100.0 * rejected_fraction,
            100.0 * MAX_REJECTED_FRACTION
        )));
    }

    let times = grid.full_times();
    let observables = requests
        .iter()
        .enumerate()
        .map(|(o, req)| ObservableSeries {
            name: req.name.clone(),
            kind: req.kind,
            mean: (0..n_times).map(|k| master.mean_at(o, k)).collect(),
            stderr: (0..n_times).map(|k| master.stderr_at(o, k)).collect(),
        })
        .collect();

    Ok(RunOutcome::Complete(EnsembleResult {
        times,
        observables,
        n_trajectories: master.count,
        rejected: master.rejected,
        master_seed,
    }))
}

fn run_block(
    model: &OperatorBasisModel,
    plan: &NoisePlan,
    n_traj: u64,
    master_seed: u64,
    requests: &[ObservableRequest],
    block: u64,
    n_times: usize,
) -> Result<EnsembleAccumulator> {
    let grid = plan.grid();
    let n_obs = requests.len();
    let mut acc = EnsembleAccumulator::new(n_obs, n_times, master_seed);
    let mut sample = vec![Complex64::ZERO; n_obs * n_times];

    let lo = block * BLOCK_SIZE;
    let hi = ((block + 1) * BLOCK_SIZE).min(n_traj);
    for index in lo..hi {
        let bundle = plan.sample_bundle(SeedTag { master_seed, index });
        let traj = match integrate_trajectory(model, &bundle, grid) {
            Ok(t) => t,
            Err(ScleError::TrajectoryDiverged(_)) => {
                acc.rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for (o, req) in requests.iter().enumerate() {
            let row = &mut sample[o * n_times..(o + 1) * n_times];
            for (k, slot) in row.iter_mut().enumerate() {
                let y = traj.at(k);
                let mut v = Complex64::ZERO;
                for (c, yv) in req.coeffs.iter().zip(y) {
                    v += c * yv;
                }
                if !matches!(req.kind, ObservableKind::System) {
                    // zeta read at the full-step point paired with time t.
                    v *= bundle.zeta[2 * k];
                }
                *slot = v;
            }
        }
        acc.accumulate(&sample);
    }
    Ok(acc)
}

/// Time-integrated squared deviation E(t) between two real series, by the
/// trapezoidal rule.
pub fn accumulated_error(oracle: &[f64], stochastic: &[f64], dt: f64) -> Result<Vec<f64>> {
    if oracle.len() != stochastic.len() {
        return Err(ScleError::Usage(format!(
            "series lengths differ: {} vs {}",
            oracle.len(),
            stochastic.len()
        )));
    }
    let sq: Vec<f64> = oracle
        .iter()
        .zip(stochastic)
        .map(|(a, s)| (a - s) * (a - s))
        .collect();
    let mut out = Vec::with_capacity(sq.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in sq.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    Ok(out)
}

fn write_checkpoint(
    path: &Path,
    fingerprint: &str,
    acc: &EnsembleAccumulator,
    next_index: u64,
) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    let mut buf = Vec::with_capacity(64 + acc.mean.len() * 24 + fingerprint.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fingerprint.len() as u32).to_le_bytes());
    buf.extend_from_slice(fingerprint.as_bytes());
    buf.extend_from_slice(&acc.master_seed.to_le_bytes());
    buf.extend_from_slice(&next_index.to_le_bytes());
    buf.extend_from_slice(&(acc.n_obs as u32).to_le_bytes());
    buf.extend_from_slice(&(acc.n_times as u32).to_le_bytes());
    buf.extend_from_slice(&acc.count.to_le_bytes());
    buf.extend_from_slice(&acc.rejected.to_le_bytes());
    for m in &acc.mean {
        buf.extend_from_slice(&m.re.to_le_bytes());
        buf.extend_from_slice(&m.im.to_le_bytes());
    }
    for s in &acc.m2 {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn load_checkpoint(path: &Path, fingerprint: &str) -> Result<(EnsembleAccumulator, u64)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(ScleError::Usage(format!(
                "checkpoint {} is truncated",
                path.display()
            )));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(ScleError::Usage(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ScleError::Usage(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let fp_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let fp = std::str::from_utf8(take(fp_len)?)
        .map_err(|_| ScleError::Usage("corrupt checkpoint fingerprint".into()))?;
    if fp != fingerprint {
        return Err(ScleError::Usage(
            "checkpoint was written by a different run configuration".into(),
        ));
    }
    let master_seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let next_index = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let n_obs = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let n_times = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let rejected = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let slots = n_obs * n_times;
    let mut mean = Vec::with_capacity(slots);
    for _ in 0..slots {
        let re = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let im = f64::from_le_bytes(take(8)?.try_into().unwrap());
        mean.push(Complex64::new(re, im));
    }
    let mut m2 = Vec::with_capacity(slots);
    for _ in 0..slots {
        m2.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    Ok((
        EnsembleAccumulator { n_obs, n_times, count, rejected, master_seed, mean, m2 },
        next_index,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{KernelTable, SpectralDensity, SpectralDensityKind};
    use crate::grid::TimeGrid;
    use crate::models::make_pure_dephasing;
    use crate::noise::build_noise_plan;
    use proptest::prelude::*;

    fn sigma_x_request(model: &OperatorBasisModel) -> ObservableRequest {
        ObservableRequest::system("sigma_x", model.observable("sigma_x").unwrap().clone())
    }

    fn plan_for(gamma: f64, beta: f64, dt: f64, steps: usize) -> crate::noise::NoisePlan {
        let spec = SpectralDensity::new(SpectralDensityKind::OhmicDebye, gamma, 0.5).unwrap();
        let grid = TimeGrid::new(dt, steps).unwrap();
        let kernels = KernelTable::build(&spec, beta, &grid).unwrap();
        build_noise_plan(&kernels).unwrap()
    }

    #[test]
    fn decoupled_bath_gives_exact_cosine_for_sigma_x() {
        let model = make_pure_dephasing(1.0).unwrap();
        let plan = plan_for(0.0, 1.0, 0.01, 100).without_bath_channel();
        let result =
            run_ensemble(&model, &plan, 8, 1, &[sigma_x_request(&model)]).unwrap();
        let sx = result.series("sigma_x").unwrap();
        for (k, (&t, m)) in result.times.iter().zip(&sx.mean).enumerate() {
            assert!((m.re - t.cos()).abs() < 1e-9, "k={k}");
            // All trajectories identical for this component.
            assert!(sx.stderr[k] < 1e-12);
        }
    }

    #[test]
    fn identity_is_normalized_on_average() {
        let model = make_pure_dephasing(1.0).unwrap();
        let plan = plan_for(1.0, 1.0, 0.05, 60);
        let req = ObservableRequest::system("identity", model.identity_coeffs.clone());
        let result = run_ensemble(&model, &plan, 4000, 7, &[req]).unwrap();
        let id = result.series("identity").unwrap();
        for (k, m) in id.mean.iter().enumerate() {
            let tol = 5.0 * id.stderr[k] + 1e-12;
            assert!((m.re - 1.0).abs() <= tol, "k={k}: {} vs 1 (tol {tol})", m.re);
            assert!(m.im.abs() <= tol);
        }
    }

    #[test]
    fn worker_count_does_not_change_the_result() {
        let model = make_pure_dephasing(1.0).unwrap();
        let plan = plan_for(1.0, 1.0, 0.05, 40);
        let reqs = [sigma_x_request(&model)];
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_ensemble(&model, &plan, 1000, 42, &reqs).unwrap())
        };
        let a = run_with(1);
        let b = run_with(4);
        let sa = a.series("sigma_x").unwrap();
        let sb = b.series("sigma_x").unwrap();
        assert_eq!(sa.mean, sb.mean);
        assert_eq!(sa.stderr, sb.stderr);
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("run.ckpt");
        let model = make_pure_dephasing(1.0).unwrap();
        let plan = plan_for(1.0, 1.0, 0.05, 40);
        let reqs = [sigma_x_request(&model)];

        let uninterrupted = run_ensemble(&model, &plan, 2000, 5, &reqs).unwrap();

        let options = RunOptions {
            checkpoint_path: Some(ckpt.clone()),
            checkpoint_every: Some(512),
            resume_from: None,
            stop_after: Some(1000),
            fingerprint: "test-config".into(),
        };
        match run_ensemble_with(&model, &plan, 2000, 5, &reqs, &options).unwrap() {
            RunOutcome::Interrupted { next_index } => assert!(next_index >= 1000),
            RunOutcome::Complete(_) => panic!("expected interruption"),
        }

        let resume = RunOptions {
            checkpoint_path: Some(ckpt.clone()),
            checkpoint_every: Some(512),
            resume_from: Some(ckpt),
            stop_after: None,
            fingerprint: "test-config".into(),
        };
        let resumed = match run_ensemble_with(&model, &plan, 2000, 5, &reqs, &resume).unwrap() {
            RunOutcome::Complete(r) => r,
            RunOutcome::Interrupted { .. } => panic!("expected completion"),
        };
        let a = uninterrupted.series("sigma_x").unwrap();
        let b = resumed.series("sigma_x").unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn checkpoint_fingerprint_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("run.ckpt");
        let acc = EnsembleAccumulator::new(1, 3, 9);
        write_checkpoint(&ckpt, "config-a", &acc, 0).unwrap();
        assert!(load_checkpoint(&ckpt, "config-b").is_err());
        assert!(load_checkpoint(&ckpt, "config-a").is_ok());
    }

    #[test]
    fn accumulated_error_examples() {
        let zeros = vec![0.0; 11];
        let e = accumulated_error(&zeros, &zeros, 0.1).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));

        // Constant offset delta: E(T) = delta^2 T.
        let a = vec![0.0; 11];
        let b = vec![0.3; 11];
        let e = accumulated_error(&a, &b, 0.1).unwrap();
        assert!((e[10] - 0.09 * 1.0).abs() < 1e-12);

        assert!(accumulated_error(&a, &[0.0; 5], 0.1).is_err());
    }

    #[test]
    fn merge_identities() {
        let mut rng_vals = (0..40).map(|i| Complex64::new((i as f64).sin(), (i as f64).cos()));
        let mut a = EnsembleAccumulator::new(2, 2, 0);
        for _ in 0..10 {
            let s: Vec<Complex64> = (&mut rng_vals).take(4).collect();
            a.accumulate(&s);
        }
        let empty = EnsembleAccumulator::new(2, 2, 0);
        let merged = merge_accumulators(&a, &empty).unwrap();
        assert_eq!(merged, a);
        let merged = merge_accumulators(&empty, &a).unwrap();
        assert_eq!(merged.count, a.count);

        let shape_mismatch = EnsembleAccumulator::new(2, 3, 0);
        assert!(merge_accumulators(&a, &shape_mismatch).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn merge_of_halves_matches_single_pass(
            data in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 8..64),
            split in 1usize..7,
        ) {
            let samples: Vec<Complex64> =
                data.iter().map(|&(r, i)| Complex64::new(r, i)).collect();
            let split = split.min(samples.len() - 1);

            let mut single = EnsembleAccumulator::new(1, 1, 0);
            for s in &samples {
                single.accumulate(std::slice::from_ref(s));
            }
            let mut left = EnsembleAccumulator::new(1, 1, 0);
            for s in &samples[..split] {
                left.accumulate(std::slice::from_ref(s));
            }
            let mut right = EnsembleAccumulator::new(1, 1, 0);
            for s in &samples[split..] {
                right.accumulate(std::slice::from_ref(s));
            }
            let merged = merge_accumulators(&left, &right).unwrap();
            prop_assert_eq!(merged.count, single.count);
            let scale = single.mean_at(0, 0).norm().max(1.0);
            prop_assert!((merged.mean_at(0, 0) - single.mean_at(0, 0)).norm() < 1e-12 * scale);
            let v_scale = single.m2[0].abs().max(1.0);
            prop_assert!((merged.m2[0] - single.m2[0]).abs() < 1e-10 * v_scale);
        }
    }
}
