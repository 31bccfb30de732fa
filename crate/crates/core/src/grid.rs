use crate::error::{Result, ScleError};

/// Uniform simulation time grid.
///
/// The integrator steps on the full grid `t_start + k*dt` while kernels and
/// noise paths live on the half-step subgrid `t_start + k*dt/2`, so that
/// Runge-Kutta midpoints never need interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        Self::with_start(0.0, dt, n_steps)
    }

    pub fn with_start(t_start: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ScleError::Usage(format!("time step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(ScleError::Usage("grid needs at least one step".into()));
        }
        Ok(Self { t_start, dt, n_steps })
    }

    /// Builds a grid spanning `[t_start, t_end]`. The span must be an integer
    /// multiple of `dt`; a remainder is rejected rather than rounded away.
    pub fn from_span(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ScleError::Usage(format!("time step must be positive, got {dt}")));
        }
        let span = t_end - t_start;
        if !(span > 0.0) {
            return Err(ScleError::Usage(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        let n = (span / dt).round();
        if n < 1.0 || ((n * dt - span).abs() > 1e-9 * span.max(dt)) {
            return Err(ScleError::Usage(format!(
                "span {span} is not an integer multiple of dt {dt}"
            )));
        }
        Self::with_start(t_start, dt, n as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn half_dt(&self) -> f64 {
        self.dt / 2.0
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.dt * self.n_steps as f64
    }

    /// Number of half-step points, `2*n_steps + 1`.
    pub fn n_half_points(&self) -> usize {
        2 * self.n_steps + 1
    }

    /// Number of full-step points, `n_steps + 1`.
    pub fn n_full_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn t_full(&self, k: usize) -> f64 {
        self.t_start + self.dt * k as f64
    }

    pub fn t_half(&self, k: usize) -> f64 {
        self.t_start + self.dt * 0.5 * k as f64
    }

    /// Lag value of the k-th half-step point, used for kernel tabulation.
    pub fn lag(&self, k: usize) -> f64 {
        self.dt * 0.5 * k as f64
    }

    /// Largest tabulated lag (the full span of the grid).
    pub fn max_lag(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn full_times(&self) -> Vec<f64> {
        (0..self.n_full_points()).map(|k| self.t_full(k)).collect()
    }
}
