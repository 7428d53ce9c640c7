use serde::{Deserialize, Serialize};

use crate::control::{AutoFocusConfig, HapticConfig};
use crate::error::{Error, Result};
use crate::imaging::FocusProfile;
use crate::operator::OperatorConfig;
use crate::phantom::PhantomConfig;
use crate::robot::RobotConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manual,
    Cooperative,
    HybridCooperative,
    Teleoperated,
    HybridTeleoperated,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Manual,
        Mode::Cooperative,
        Mode::HybridCooperative,
        Mode::Teleoperated,
        Mode::HybridTeleoperated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Manual => "manual",
            Mode::Cooperative => "cooperative",
            Mode::HybridCooperative => "hybrid_cooperative",
            Mode::Teleoperated => "teleoperated",
            Mode::HybridTeleoperated => "hybrid_teleoperated",
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, Mode::HybridCooperative | Mode::HybridTeleoperated)
    }

    pub fn is_teleoperated(self) -> bool {
        matches!(self, Mode::Teleoperated | Mode::HybridTeleoperated)
    }

    pub fn is_cooperative(self) -> bool {
        matches!(self, Mode::Cooperative | Mode::HybridCooperative)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

/// Axial controller used by the hybrid modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxialController {
    /// Image optimizer only.
    Optimizer,
    /// Prior model only, no image feedback after registration.
    Model,
    /// Prior model with image-based fine tuning.
    Combined,
}

impl AxialController {
    pub fn name(self) -> &'static str {
        match self {
            AxialController::Optimizer => "optimizer",
            AxialController::Model => "model",
            AxialController::Combined => "combined",
        }
    }

    pub fn needs_registration(self) -> bool {
        !matches!(self, AxialController::Optimizer)
    }
}

/// Direction treated as axial by the hybrid split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxialFrame {
    /// Base-frame vertical, i.e. the probe axis with orientation locked.
    Vertical,
    /// Local tissue normal under the tip, bumps included.
    SurfaceNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub frame_px: usize,
    pub fov_m: f64,
    pub noise_std: f64,
    pub gain_per_mm: f64,
    pub texture_seed: u64,
    pub texture_tile_px: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            frame_px: 128,
            fov_m: 500e-6,
            noise_std: 2e-5,
            gain_per_mm: 0.4,
            texture_seed: 1,
            texture_tile_px: 512,
        }
    }
}

/// Complete run configuration; this is also the schema of the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub schema_version: u32,
    pub control_rate_hz: f64,
    pub pcle_rate_hz: f64,
    /// Hard time limit of a run.
    pub duration_s: f64,
    pub mode: Mode,
    pub seed: u64,
    pub axial_controller: AxialController,
    pub axial_frame: AxialFrame,
    /// Abort the run on the first contact.
    pub safety_strict: bool,
    /// Initial probe-to-tissue distance.
    pub start_distance_m: f64,
    /// Cooperative admittance gain.
    pub alpha_m_s_n: f64,
    /// Teleoperation motion scale.
    pub beta: f64,
    /// Stop once the scripted path is complete.
    pub stop_when_finished: bool,
    /// Record one log entry every this many control ticks.
    pub log_every: u32,
    pub focus: FocusProfile,
    pub render: RenderConfig,
    pub phantom: PhantomConfig,
    pub robot: RobotConfig,
    pub autofocus: AutoFocusConfig,
    pub haptic: HapticConfig,
    pub operator: OperatorConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            control_rate_hz: 240.0,
            pcle_rate_hz: 60.0,
            duration_s: 240.0,
            mode: Mode::HybridTeleoperated,
            seed: 1,
            axial_controller: AxialController::Combined,
            axial_frame: AxialFrame::Vertical,
            safety_strict: false,
            start_distance_m: 690e-6,
            alpha_m_s_n: 10e-6,
            beta: 0.015,
            stop_when_finished: false,
            log_every: 1,
            focus: FocusProfile::default(),
            render: RenderConfig::default(),
            phantom: PhantomConfig::default(),
            robot: RobotConfig::default(),
            autofocus: AutoFocusConfig::default(),
            haptic: HapticConfig::default(),
            operator: OperatorConfig::default(),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.into(),
        reason: reason.into(),
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "<document>".into());
            invalid(&key, e.to_string().trim().replace('\n', " "))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Control ticks per camera frame.
    pub fn ticks_per_frame(&self) -> u64 {
        (self.control_rate_hz / self.pcle_rate_hz).round() as u64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.pcle_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        if !(self.pcle_rate_hz > 0.0) {
            return Err(invalid("pcle_rate_hz", "must be positive"));
        }
        if !(self.control_rate_hz >= self.pcle_rate_hz) {
            return Err(invalid("control_rate_hz", "must be at least pcle_rate_hz"));
        }
        let ratio = self.control_rate_hz / self.pcle_rate_hz;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(invalid(
                "control_rate_hz",
                format!("must be an integer multiple of pcle_rate_hz (ratio {ratio:.4})"),
            ));
        }
        if !(self.duration_s > 0.0) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if !(self.start_distance_m > 0.0) {
            return Err(invalid("start_distance_m", "must be positive"));
        }
        if !(self.alpha_m_s_n > 0.0) {
            return Err(invalid("alpha_m_s_n", "must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid("beta", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(invalid("log_every", "must be at least 1"));
        }
        if self.render.frame_px < 16 || !(self.render.fov_m > 0.0) || !(self.render.noise_std >= 0.0) {
            return Err(invalid("render", "need frame_px >= 16, positive fov and non-negative noise"));
        }
        self.focus.validate()?;
        self.autofocus.validate()?;
        self.haptic.validate()?;
        if (self.robot.resolution_m - self.autofocus.resolution_m).abs() > 0.0 {
            log::warn!("auto-focus resolution differs from the robot resolution");
        }
        Ok(())
    }
}
