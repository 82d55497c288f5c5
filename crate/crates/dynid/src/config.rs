//! Run configuration: chain, trajectory catalog, plant, controller gains and
//! pipeline settings, all backed by one TOML document.
//!
//! A bundled default document ships inside the crate. User files may contain
//! any subset of the sections; omitted sections fall back to the bundled
//! defaults wholesale.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::ChainConfig;
use crate::error::{Error, Result};

pub const BUNDLED_CONFIG: &str = include_str!("../assets/default.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub chain: ChainConfig,
    pub catalog: CatalogConfig,
    pub plant: PlantConfig,
    pub gains: GainsConfig,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartialConfig {
    chain: Option<ChainConfig>,
    catalog: Option<CatalogConfig>,
    plant: Option<PlantConfig>,
    gains: Option<GainsConfig>,
    pipeline: Option<PipelineConfig>,
}

impl RunConfig {
    pub fn bundled() -> Result<Self> {
        toml::from_str(BUNDLED_CONFIG).map_err(|e| Error::Config(format!("bundled config: {e}")))
    }

    /// Parse a user document; sections missing from it use bundled values.
    pub fn parse(text: &str) -> Result<Self> {
        let partial: PartialConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let base = RunConfig::bundled()?;
        Ok(RunConfig {
            chain: partial.chain.unwrap_or(base.chain),
            catalog: partial.catalog.unwrap_or(base.catalog),
            plant: partial.plant.unwrap_or(base.plant),
            gains: partial.gains.unwrap_or(base.gains),
            pipeline: partial.pipeline.unwrap_or(base.pipeline),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Hash of the canonical serialized form, for run manifests.
    pub fn digest(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.pipeline.validate(self.plant.control_period)?;
        Ok(())
    }
}

/// Trajectory-catalog generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogConfig {
    /// Sampling/control period of generated references (s).
    pub control_period: f64,
    /// Per-axis excitation amplitudes (deg).
    pub amplitudes_deg: Vec<f64>,
    /// Velocity cap at speed factor 1 (rad/s); scales linearly with factor.
    pub vel_cap: f64,
    /// Acceleration cap at factor 1 (rad/s²); scales with factor².
    pub acc_cap: f64,
    /// Jerk cap at factor 1 (rad/s³); scales with factor³.
    pub jerk_cap: f64,
    /// Speed factors for the single-joint grid pattern.
    pub single_speeds: [f64; 3],
    /// Speed factors for the in-phase adjacent-pair pattern.
    pub pair_speeds: [f64; 3],
    /// Speed factors for the opposite-phase adjacent-pair pattern.
    pub opposite_speeds: [f64; 3],
    /// AP family speed factors: high (AP01-AP03), then the two C variants.
    pub ap_speeds: [f64; 3],
    /// Speed factor for the aggregated AG trajectories.
    pub ag_speed: f64,
    /// Speed factor for the per-posture concatenated trajectories.
    pub concat_speed: f64,
    /// Speed factor for validation trajectories.
    pub validation_speed: f64,
    /// Rest hold before motion starts (s).
    pub lead_in: f64,
    /// Rest hold after motion ends (s).
    pub tail_hold: f64,
}

/// Plant realization-layer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Command dead time (s); must be a multiple of `integration_step`.
    pub dead_time: f64,
    /// Control period (s).
    pub control_period: f64,
    /// Forward-dynamics integration step (s); must divide the control period.
    pub integration_step: f64,
    /// Link-side encoder resolution (bits).
    pub encoder_bits: u32,
    /// Standard deviation of torque (current-sensing) noise (N·m).
    pub torque_noise_std: f64,
    /// Bandwidth of the torque noise (Hz); white noise shaped by a single
    /// pole so the disturbance lives where drivetrain noise does.
    #[serde(default = "default_noise_bw")]
    pub torque_noise_bandwidth_hz: f64,
    /// Divergence guard on |joint velocity| (rad/s).
    pub velocity_limit: f64,
    /// Symmetric clamp on applied torque (N·m).
    pub torque_clamp: f64,
    /// Settling time holding the start posture before logging begins (s).
    #[serde(default = "default_settle")]
    pub settle_time: f64,
}

fn default_settle() -> f64 {
    1.0
}

fn default_noise_bw() -> f64 {
    3.0
}

fn default_step_limit() -> f64 {
    1.0
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.integration_step <= 0.0 || self.control_period <= 0.0 {
            return Err(Error::Config("plant periods must be positive".into()));
        }
        let sub = self.control_period / self.integration_step;
        if (sub - sub.round()).abs() > 1e-9 {
            return Err(Error::Config("integration_step must divide control_period".into()));
        }
        if self.dead_time < 0.0 {
            return Err(Error::Config("dead_time must be nonnegative".into()));
        }
        let dt = self.dead_time / self.integration_step;
        if (dt - dt.round()).abs() > 1e-9 {
            return Err(Error::Config("dead_time must be a multiple of integration_step".into()));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.control_period / self.integration_step).round() as usize
    }

    pub fn dead_time_substeps(&self) -> usize {
        (self.dead_time / self.integration_step).round() as usize
    }

    pub fn encoder_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / f64::from(1u32 << self.encoder_bits)
    }
}

/// FF+PD controller settings. Realization inertia/damping default to the
/// plant's diagonal inertia at the nominal posture and its viscous-friction
/// values; explicit arrays override that.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainsConfig {
    pub kp: f64,
    pub kv: f64,
    /// Pseudo-differentiation time constant (s).
    pub tf: f64,
    #[serde(default)]
    pub mhat: Vec<f64>,
    #[serde(default)]
    pub dhat: Vec<f64>,
}

/// Identification pipeline settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Resampling intervals (ms).
    pub ts_ms: Vec<u32>,
    /// Ascending positive-definiteness margins for the feasible projection.
    pub eps_ladder: Vec<f64>,
    pub audit_grid_points: usize,
    pub audit_worst_k: usize,
    /// Noise seeds; the first seed drives the primary run.
    pub seeds: Vec<u64>,
    /// Enable encoder quantization, dead time and torque noise.
    pub imperfections: bool,
    /// "full" runs refinement; "routing" stops after the OLS audit.
    pub stage: String,
    /// Restrict to these trajectory labels (empty = whole catalog).
    #[serde(default)]
    pub labels: Vec<String>,
    pub clie_max_iter: usize,
    pub clie_lambda0: f64,
    pub clie_jac_step_rel: f64,
    pub clie_bound_factor: f64,
    pub clie_positive_floor: f64,
    #[serde(default = "default_step_limit")]
    pub clie_step_limit_rel: f64,
    /// Fraction of variance the PCA score space must cover for selection.
    pub pca_variance: f64,
    /// Dispersion slack when choosing the preferred sampling interval.
    pub preferred_ts_slack: f64,
    /// Constraint-exchange round cap per ladder margin.
    pub sdp_exchange_rounds: usize,
    /// Record wall-clock refinement cost in records.json.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn validate(&self, control_period: f64) -> Result<()> {
        if self.ts_ms.is_empty() {
            return Err(Error::Config("ts_ms must be non-empty".into()));
        }
        for &ts in &self.ts_ms {
            let ratio = ts as f64 * 1e-3 / control_period;
            if ts == 0 || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "ts {ts} ms must be a positive multiple of the control period"
                )));
            }
        }
        if !self.eps_ladder.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("eps_ladder must be strictly ascending".into()));
        }
        if self.stage != "full" && self.stage != "routing" {
            return Err(Error::Config("stage must be 'full' or 'routing'".into()));
        }
        if self.audit_grid_points < 2 {
            return Err(Error::Config("audit_grid_points must be at least 2".into()));
        }
        Ok(())
    }
}
