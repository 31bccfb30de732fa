//! Strict JSON run configuration: unknown keys are rejected, every default is
//! resolved up front, and the resolved form is echoed into result metadata.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::json;

use crate::correlation::{SpectralDensity, SpectralDensityKind};
use crate::dynamics::OperatorBasisModel;
use crate::error::{Result, ScleError};
use crate::grid::TimeGrid;
use crate::models::{
    make_pure_dephasing, make_quantum_dot, make_spin_boson, kelvin_to_beta, pi_pulse_train,
    PumpSpec, RabiSpec,
};
use crate::noise::ChiConstruction;

/// Complex matrix as rows of [re, im] pairs.
type RawMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    PureDephasing {
        omega0: f64,
        /// Echo pulses at t = 2n/omega0 across the whole grid.
        #[serde(default)]
        pulse_train: bool,
    },
    SpinBoson {
        omega0: f64,
        #[serde(default)]
        pump: Option<PumpConfig>,
    },
    QuantumDot {
        delta: f64,
        rabi: RabiConfig,
    },
    Custom {
        name: String,
        hamiltonian: RawMatrix,
        coupling: RawMatrix,
        basis: Vec<RawMatrix>,
        rho0: RawMatrix,
    },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfig {
    pub rabi: f64,
    #[serde(default)]
    pub detuning: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum RabiConfig {
    Constant { omega: f64 },
    Gaussian { amplitude: f64, tau: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralDensityName {
    OhmicDebye,
    SuperOhmicGauss,
}

impl From<SpectralDensityName> for SpectralDensityKind {
    fn from(n: SpectralDensityName) -> Self {
        match n {
            SpectralDensityName::OhmicDebye => SpectralDensityKind::OhmicDebye,
            SpectralDensityName::SuperOhmicGauss => SpectralDensityKind::SuperOhmicGauss,
        }
    }
}

/// beta accepts a number or the string "inf" (zero temperature).
fn de_beta<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum B {
        Number(f64),
        Text(String),
    }
    match Option::<B>::deserialize(d)? {
        None => Ok(None),
        Some(B::Number(x)) => Ok(Some(x)),
        Some(B::Text(s)) if s == "inf" => Ok(Some(f64::INFINITY)),
        Some(B::Text(s)) => Err(serde::de::Error::custom(format!(
            "beta must be a number or \"inf\", got \"{s}\""
        ))),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub spectral_density: SpectralDensityName,
    pub coupling: f64,
    pub cutoff: f64,
    #[serde(default, deserialize_with = "de_beta")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub temperature_kelvin: Option<f64>,
    /// Frequency-integration cutoff; default 50 * cutoff.
    #[serde(default)]
    pub omega_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub t_start: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ChiConstructionName {
    SpectralRoot,
    CirculantEmbedding,
}

impl From<ChiConstructionName> for ChiConstruction {
    fn from(n: ChiConstructionName) -> Self {
        match n {
            ChiConstructionName::SpectralRoot => ChiConstruction::SpectralRoot,
            ChiConstructionName::CirculantEmbedding => ChiConstruction::CirculantEmbedding,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelConfig,
    bath: BathConfig,
    grid: GridConfig,
    trajectories: u64,
    master_seed: u64,
    #[serde(default)]
    observables: Option<Vec<String>>,
    #[serde(default)]
    output_path: Option<String>,
    #[serde(default)]
    checkpoint_every: Option<u64>,
    #[serde(default)]
    chi_construction: Option<ChiConstructionName>,
}

/// Fully resolved and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub spec: SpectralDensity,
    pub beta: f64,
    pub temperature_kelvin: Option<f64>,
    pub grid: TimeGrid,
    pub trajectories: u64,
    pub master_seed: u64,
    pub observables: Vec<String>,
    pub output_path: String,
    pub checkpoint_every: Option<u64>,
    pub chi_construction: ChiConstructionName,
}

/// Parses and validates a JSON run configuration. Schema violations report
/// the path to the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        ScleError::Config(format!("at {}: {}", e.path(), e.inner()))
    })?;

    let beta = match (raw.bath.beta, raw.bath.temperature_kelvin) {
        (Some(_), Some(_)) => {
            return Err(ScleError::Config(
                "bath: give exactly one of beta / temperature_kelvin, not both".into(),
            ))
        }
        (None, None) => {
            return Err(ScleError::Config(
                "bath: one of beta / temperature_kelvin is required".into(),
            ))
        }
        (Some(b), None) => {
            if !(b > 0.0) {
                return Err(ScleError::Config(format!("bath.beta must be positive, got {b}")));
            }
            b
        }
        (None, Some(t)) => kelvin_to_beta(t)
            .map_err(|e| ScleError::Config(format!("bath.temperature_kelvin: {e}")))?,
    };

    let base = SpectralDensity::new(raw.bath.spectral_density.into(), raw.bath.coupling, raw.bath.cutoff)
        .map_err(|e| ScleError::Config(format!("bath: {e}")))?;
    let spec = match raw.bath.omega_max {
        Some(w) => SpectralDensity::with_omega_max(
            raw.bath.spectral_density.into(),
            raw.bath.coupling,
            raw.bath.cutoff,
            w,
        )
        .map_err(|e| ScleError::Config(format!("bath.omega_max: {e}")))?,
        None => base,
    };

    let grid = TimeGrid::from_span(raw.grid.t_start, raw.grid.t_end, raw.grid.dt)
        .map_err(|e| ScleError::Config(format!("grid: {e}")))?;

    if raw.trajectories == 0 {
        return Err(ScleError::Config("trajectories must be at least 1".into()));
    }

    let observables = raw
        .observables
        .unwrap_or_else(|| default_observables(&raw.model));
    if observables.is_empty() {
        return Err(ScleError::Config("observables must not be empty".into()));
    }

    Ok(RunConfig {
        model: raw.model,
        spec,
        beta,
        temperature_kelvin: raw.bath.temperature_kelvin,
        grid,
        trajectories: raw.trajectories,
        master_seed: raw.master_seed,
        observables,
        output_path: raw.output_path.unwrap_or_else(|| "results".into()),
        checkpoint_every: raw.checkpoint_every,
        chi_construction: raw
            .chi_construction
            .unwrap_or(ChiConstructionName::SpectralRoot),
    })
}

fn default_observables(model: &ModelConfig) -> Vec<String> {
    let mut obs: Vec<String> = ["sigma_x", "sigma_y", "sigma_z", "identity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    match model {
        ModelConfig::QuantumDot { .. } => {
            obs.push("population".into());
            obs.push("bath_displacement".into());
        }
        ModelConfig::Custom { .. } => {
            obs = vec!["identity".into(), "coupling_energy".into()];
        }
        _ => {}
    }
    obs
}

fn parse_matrix(raw: &RawMatrix, what: &str) -> Result<DMatrix<Complex64>> {
    let rows = raw.len();
    if rows == 0 || raw.iter().any(|r| r.len() != raw[0].len()) {
        return Err(ScleError::Config(format!("{what}: ragged or empty matrix")));
    }
    let cols = raw[0].len();
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        Complex64::new(raw[i][j][0], raw[i][j][1])
    }))
}

impl RunConfig {
    /// Instantiates the configured model (pulse trains span the grid).
    pub fn build_model(&self) -> Result<OperatorBasisModel> {
        match &self.model {
            ModelConfig::PureDephasing { omega0, pulse_train } => {
                let mut m = make_pure_dephasing(*omega0)?;
                if *pulse_train {
                    m = m.with_pulses(pi_pulse_train(*omega0, self.grid.t_end()));
                }
                Ok(m)
            }
            ModelConfig::SpinBoson { omega0, pump } => make_spin_boson(
                *omega0,
                pump.map(|p| PumpSpec { rabi: p.rabi, detuning: p.detuning }),
            ),
            ModelConfig::QuantumDot { delta, rabi } => {
                let rabi = match rabi {
                    RabiConfig::Constant { omega } => RabiSpec::Constant(*omega),
                    RabiConfig::Gaussian { amplitude, tau } => {
                        RabiSpec::Gaussian { amplitude: *amplitude, tau: *tau }
                    }
                };
                make_quantum_dot(*delta, rabi)
            }
            ModelConfig::Custom { name, hamiltonian, coupling, basis, rho0 } => {
                let h = parse_matrix(hamiltonian, "model.hamiltonian")?;
                let s = parse_matrix(coupling, "model.coupling")?;
                let basis: Vec<DMatrix<Complex64>> = basis
                    .iter()
                    .map(|b| parse_matrix(b, "model.basis"))
                    .collect::<Result<_>>()?;
                let rho = parse_matrix(rho0, "model.rho0")?;
                OperatorBasisModel::from_operators(name.clone(), &h, &s, &basis, &rho)
            }
        }
    }

    /// Resolved configuration with every default explicit; embedded in the
    /// metadata JSON and fingerprinted for checkpoints.
    pub fn resolved_json(&self) -> serde_json::Value {
        json!({
            "model": self.model,
            "bath": {
                "spectral_density": match self.spec.kind {
                    SpectralDensityKind::OhmicDebye => "ohmic_debye",
                    SpectralDensityKind::SuperOhmicGauss => "super_ohmic_gauss",
                },
                "coupling": self.spec.coupling,
                "cutoff": self.spec.cutoff,
                "omega_max": self.spec.omega_max,
                "beta": if self.beta.is_infinite() {
                    json!("inf")
                } else {
                    json!(self.beta)
                },
                "temperature_kelvin": self.temperature_kelvin,
            },
            "grid": {
                "dt": self.grid.dt(),
                "t_start": self.grid.t_start(),
                "t_end": self.grid.t_end(),
                "n_steps": self.grid.n_steps(),
            },
            "trajectories": self.trajectories,
            "master_seed": self.master_seed,
            "observables": self.observables,
            "output_path": self.output_path,
            "checkpoint_every": self.checkpoint_every,
            "chi_construction": self.chi_construction,
        })
    }

    /// Canonical string identifying the physics of this run (checkpoint
    /// compatibility check); excludes output paths and checkpoint cadence.
    pub fn fingerprint(&self) -> String {
        let mut v = self.resolved_json();
        let obj = v.as_object_mut().unwrap();
        obj.remove("output_path");
        obj.remove("checkpoint_every");
        v.to_string()
    }
}
