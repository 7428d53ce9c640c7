//! Task metrics computed from a run log.

use nalgebra::Vector3;

use super::log::{Event, Phase, RunLog};
use crate::error::{Error, Result};

/// Mean Euclidean norm of the third finite difference
/// `(p[i+3] − 3p[i+2] + 3p[i+1] − p[i]) / dt³` (m/s³).
pub fn motion_smoothness(traj: &[Vector3<f64>], dt: f64) -> Result<f64> {
    if traj.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "smoothness needs at least 4 samples, got {}",
            traj.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("sample interval must be positive, got {dt}")));
    }
    let dt3 = dt * dt * dt;
    let total: f64 = traj
        .windows(4)
        .map(|w| ((w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]) / dt3).norm())
        .sum();
    Ok(total / (traj.len() - 3) as f64)
}

fn non_empty(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        Err(Error::InvalidArgument("no frames to evaluate".into()))
    } else {
        Ok(())
    }
}

pub fn mean_of(scores: &[f64]) -> Result<f64> {
    non_empty(scores)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Share of scores at or above `t2`.
pub fn fraction_at_least(scores: &[f64], t2: f64) -> Result<f64> {
    non_empty(scores)?;
    Ok(scores.iter().filter(|&&s| s >= t2).count() as f64 / scores.len() as f64)
}

/// Scores of the frames captured during the task phase.
pub fn task_scores(log: &RunLog) -> Vec<f64> {
    log.frames()
        .filter(|(r, _)| r.phase == Phase::Task)
        .map(|(_, f)| f.score)
        .collect()
}

pub fn mean_cr(log: &RunLog) -> Result<f64> {
    mean_of(&task_scores(log))
}

pub fn in_focus_fraction(log: &RunLog, t2: f64) -> Result<f64> {
    fraction_at_least(&task_scores(log), t2)
}

/// Time from the first task tick with the pedal pressed to the end of the
/// path, or `None` if the path was not completed.
pub fn completion_time(log: &RunLog) -> Result<Option<f64>> {
    if log.records.is_empty() {
        return Err(Error::InvalidArgument("empty log".into()));
    }
    let start = log
        .records
        .iter()
        .find(|r| r.phase == Phase::Task && r.pedal)
        .map(|r| r.t);
    let end = log
        .events()
        .find(|(_, e)| matches!(e, Event::TaskFinished))
        .map(|(t, _)| t);
    Ok(match (start, end) {
        (Some(s), Some(e)) => Some(e - s),
        _ => None,
    })
}

/// Duration of the registration phase.
pub fn registration_time(log: &RunLog) -> f64 {
    let mut it = log.records.iter().filter(|r| r.phase == Phase::Registration);
    match (it.next(), it.next_back()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    }
}
