//! Local-pipeline latency measurement on simulated frames.

use serde::Serialize;

use super::local::{local_tick, SessionState, StageReport};
use super::remote::{remote_tick, RemoteConfig, RemoteState};
use super::ticker::{Ticker, LOOP_HZ};
use super::wire::{encode_msg, WireMessage};
use crate::error::{Error, Result};
use crate::tactile::FeedbackMode;
use crate::tiltnet::Model;

/// Budget for one local tick at the loop rate.
pub const TICK_BUDGET_US: f64 = 1_000_000.0 / LOOP_HZ as f64;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub mode: FeedbackMode,
    pub ticks: usize,
    pub paced: bool,
    pub overruns: u64,
    pub stages: StageReport,
    pub budget_us: f64,
}

impl BenchReport {
    pub fn within_budget(&self) -> bool {
        self.stages.total.p99_us < self.budget_us
    }
}

/// Feeds `ticks` remote frames (with a slowly rotating TCP) through the local
/// pipeline. Frame generation is not timed. With `paced` the loop waits on a
/// 60 Hz ticker between frames.
pub fn run_bench(mode: FeedbackMode, model: Option<&Model>, ticks: usize, paced: bool, seed: u64) -> Result<BenchReport> {
    if ticks == 0 {
        return Err(Error::Config("bench needs at least one tick".into()));
    }
    if mode == FeedbackMode::CnnPattern && model.is_none() {
        return Err(Error::MissingModel);
    }
    let mut remote = RemoteState::new(RemoteConfig {
        holder_tilt_deg: 45.0,
        seed,
        ..RemoteConfig::default()
    })?;
    let mut session = SessionState::new(mode);
    let mut ticker = paced.then(|| Ticker::new(LOOP_HZ));
    let sweep = [
        super::wire::Command {
            seq: 0,
            t_us: 0,
            target_tilt_deg: 90,
            gripper_pos: 20,
            mode,
            grasp: false,
        },
        super::wire::Command {
            seq: 1,
            t_us: 0,
            target_tilt_deg: -90,
            gripper_pos: 10,
            mode,
            grasp: false,
        },
    ];
    for i in 0..ticks {
        let cmd = (i % 120 == 0).then(|| sweep[(i / 120) % 2]);
        let rt = remote_tick(&mut remote, cmd.as_ref(), i as u64)?;
        let frame = encode_msg(&WireMessage::SensorPair(rt.pair));
        if let Some(t) = ticker.as_mut() {
            t.wait();
        }
        local_tick(&mut session, &frame, model, i as u64)?;
    }
    Ok(BenchReport {
        mode,
        ticks,
        paced,
        overruns: ticker.map_or(0, |t| t.overruns()),
        stages: session.stats.report(),
        budget_us: TICK_BUDGET_US,
    })
}
