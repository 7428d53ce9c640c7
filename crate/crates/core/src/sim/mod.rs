//! Closed-loop simulation: configuration, engine, scripted runs, logs and
//! metrics.

pub mod config;
pub mod driver;
pub mod engine;
pub mod experiments;
pub mod log;
pub mod metrics;

pub use config::{AxialController, AxialFrame, Mode, RenderConfig, SimConfig, SCHEMA_VERSION};
pub use driver::{run_scripted, RunSummary, Simulation, Stage};
pub use engine::{build_renderer, CapturedFrame, Engine, HumanInput, RunStatus};
pub use log::{Event, FrameRecord, LogHeader, Phase, RunLog, TickRecord};
pub use experiments::{
    run_experiment, run_experiment_with_logs, ArmReport, ExperimentOptions, ExperimentReport, RunReport, EXPERIMENTS,
};
