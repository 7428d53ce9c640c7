//! Wire messages. Every message is a JSON document `{type, seq, payload}`;
//! the server greets with `hello`, streams `telemetry` and answers each
//! `command` with an `ack`.

use retsim_core::control::AxialDecision;
use retsim_core::sim::{Event, Mode};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    #[serde(default)]
    pub payload: serde_json::Value,
}

impl Envelope {
    pub fn new<T: Serialize>(kind: &str, seq: u64, payload: &T) -> Self {
        Self {
            kind: kind.into(),
            seq,
            payload: serde_json::to_value(payload).expect("protocol types serialize"),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionCommand {
    /// Virtual hand force in the lateral plane (N).
    SteerForce { force_n: [f64; 2] },
    /// Master handle displacement (mm).
    SteerMtmDelta { delta_mm: [f64; 3] },
    SetMode { mode: Mode },
    Pedal { pressed: bool },
    /// Runs the scripted registration pass around the registration region.
    StartRegistration,
    Reset,
}

impl SessionCommand {
    pub fn name(&self) -> &'static str {
        match self {
            SessionCommand::SteerForce { .. } => "steer_force",
            SessionCommand::SteerMtmDelta { .. } => "steer_mtm_delta",
            SessionCommand::SetMode { .. } => "set_mode",
            SessionCommand::Pedal { .. } => "pedal",
            SessionCommand::StartRegistration => "start_registration",
            SessionCommand::Reset => "reset",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ack {
    /// `seq` of the command being answered.
    pub command_seq: u64,
    pub kind: Option<String>,
    pub rejected: bool,
    /// A payload exceeded its safety cap and was scaled down.
    pub clamped: bool,
    pub reason: Option<String>,
}

impl Ack {
    pub fn ok(kind: &str) -> Self {
        Self {
            kind: Some(kind.into()),
            ..Self::default()
        }
    }

    pub fn reject(kind: Option<&str>, reason: impl Into<String>) -> Self {
        Self {
            kind: kind.map(str::to_owned),
            rejected: true,
            reason: Some(reason.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol_version: u32,
    pub server_version: String,
    pub control_rate_hz: f64,
    pub telemetry_rate_hz: f64,
    pub mode: Mode,
    pub t1: f64,
    pub t2: f64,
    pub force_cap_n: f64,
}

/// Sent by a client that wants to check the protocol version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientHello {
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thumbnail {
    pub width: usize,
    pub height: usize,
    /// Row-major 8-bit grayscale, base-64.
    pub data_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t: f64,
    pub mode: Mode,
    pub pedal: bool,
    pub registering: bool,
    pub probe_position_m: [f64; 3],
    pub probe_distance_m: f64,
    pub cr: Option<f64>,
    pub in_focus: bool,
    pub axial_cmd_m_s: f64,
    pub axial_decision: Option<AxialDecision>,
    pub thumbnail: Option<Thumbnail>,
    /// Events since the previous telemetry frame.
    pub events: Vec<Event>,
}
