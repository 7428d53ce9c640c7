use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{AxialController, Mode, SimConfig};
use crate::control::AxialDecision;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Registration,
    Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Contact { distance_m: f64 },
    LimitHit { joints: Vec<usize> },
    RegistrationDone { points: usize },
    RegistrationFailed { reason: String },
    TaskFinished,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Contact { .. } => "contact",
            Event::LimitHit { .. } => "limit_hit",
            Event::RegistrationDone { .. } => "registration_done",
            Event::RegistrationFailed { .. } => "registration_failed",
            Event::TaskFinished => "task_finished",
        }
    }
}

/// A frame captured on this tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u64,
    pub score: f64,
    pub intensity: f64,
    pub distance_m: f64,
}

/// One control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub phase: Phase,
    /// Probe tip position (m).
    pub tip: [f64; 3],
    /// Tip position before quantisation to the stage resolution.
    pub tip_continuous: [f64; 3],
    pub q: [f64; 5],
    pub qd: [f64; 5],
    /// Commanded tip twist (linear m/s, angular rad/s).
    pub twist: [f64; 6],
    /// Axial velocity command along the tissue normal (m/s).
    pub axial_cmd: f64,
    pub axial_decision: Option<AxialDecision>,
    /// Score of the newest frame available to the controller.
    pub cr: Option<f64>,
    pub frame: Option<FrameRecord>,
    pub distance_m: f64,
    pub pedal: bool,
    /// Human steering reached the controller on this tick.
    pub steering_consumed: bool,
    /// Magnitude of the haptic force rendered on the master (N).
    pub haptic_n: f64,
    pub events: Vec<Event>,
}

/// First line of a JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: String,
    pub mode: Mode,
    pub axial_controller: AxialController,
    pub seed: u64,
    pub control_rate_hz: f64,
    pub pcle_rate_hz: f64,
}

impl LogHeader {
    pub const FORMAT: &'static str = "retsim-log";

    pub fn for_config(cfg: &SimConfig) -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            mode: cfg.mode,
            axial_controller: cfg.axial_controller,
            seed: cfg.seed,
            control_rate_hz: cfg.control_rate_hz,
            pcle_rate_hz: cfg.pcle_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<TickRecord>,
}

impl RunLog {
    pub fn frames(&self) -> impl Iterator<Item = (&TickRecord, &FrameRecord)> {
        self.records.iter().filter_map(|r| r.frame.as_ref().map(|f| (r, f)))
    }

    pub fn events(&self) -> impl Iterator<Item = (f64, &Event)> {
        self.records
            .iter()
            .flat_map(|r| r.events.iter().map(move |e| (r.t, e)))
    }

    pub fn write_jsonl<W: Write>(&self, header: &LogHeader, mut w: W) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(header).map_err(json_err)?)?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).map_err(json_err)?)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a log written by [`RunLog::write_jsonl`].
    pub fn read_jsonl(text: &str) -> Result<(LogHeader, RunLog)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: LogHeader = serde_json::from_str(lines.next().unwrap_or("")).map_err(json_err)?;
        let records = lines
            .map(|l| serde_json::from_str(l).map_err(json_err))
            .collect::<Result<Vec<TickRecord>>>()?;
        Ok((header, RunLog { records }))
    }
}

pub(crate) fn json_err(e: serde_json::Error) -> crate::error::Error {
    crate::error::Error::Io(format!("json: {e}"))
}
