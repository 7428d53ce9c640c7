use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use retsim_cli::{cmd_experiment, cmd_focus_sweep, cmd_run, cmd_serve, init_logging, Failure, RunArgs};
use retsim_core::sim::{ExperimentOptions, Mode};

#[derive(Parser)]
#[command(name = "retsim", version, about = "Robot-assisted retinal pCLE scanning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scripted simulation from a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long, default_value = "retsim-out")]
        out: PathBuf,
    },
    /// Run an experiment suite: exp1, exp2, exp3 or user_task.
    Experiment {
        name: String,
        #[arg(long, default_value = "retsim-out")]
        out: PathBuf,
    },
    /// Score frames over a range of probe distances and write a CSV.
    FocusSweep {
        #[arg(long = "min_um", alias = "min-um", default_value_t = 200.0)]
        min_um: f64,
        #[arg(long = "max_um", alias = "max-um", default_value_t = 2400.0)]
        max_um: f64,
        #[arg(long = "step_um", alias = "step-um", default_value_t = 10.0)]
        step_um: f64,
        #[arg(long, default_value = "focus_sweep.csv")]
        out: PathBuf,
    },
    /// Serve a live session over HTTP and websocket until ctrl-c.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        config: PathBuf,
        /// Where the session's tick log is streamed.
        #[arg(long, default_value = "session.jsonl")]
        log: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, mode, out } => {
            let o = cmd_run(&RunArgs { config, seed, mode, out })?;
            let s = &o.report.summary;
            println!(
                "{} ({}) seed {}: {} ticks, mean CR {}, in focus {}, {} contacts",
                s.mode.name(),
                s.axial_controller.name(),
                s.seed,
                s.ticks,
                fmt_opt(s.mean_cr),
                fmt_opt(s.in_focus_fraction),
                s.contacts
            );
            println!("wrote {} and {}", o.log_path.display(), o.report_path.display());
        }
        Command::Experiment { name, out } => {
            let report = cmd_experiment(&name, &out, &ExperimentOptions::default())?;
            for a in &report.arms {
                println!(
                    "{:<20} mean CR {}  in focus {}  MS {}",
                    a.name,
                    fmt_opt(a.mean_cr),
                    fmt_opt(a.in_focus_fraction),
                    a.motion_smoothness.map_or("-".into(), |v| format!("{v:.4e}"))
                );
            }
            println!("wrote {}", out.join("report.json").display());
        }
        Command::FocusSweep {
            min_um,
            max_um,
            step_um,
            out,
        } => {
            let rows = cmd_focus_sweep(min_um, max_um, step_um, &out)?;
            if let Some(peak) = rows.iter().max_by(|a, b| a.cr.total_cmp(&b.cr)) {
                println!("{} rows, peak CR {:.3} at {} um", rows.len(), peak.cr, peak.distance_um);
            }
            println!("wrote {}", out.display());
        }
        Command::Serve { port, config, log } => cmd_serve(port, &config, &log)?,
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
