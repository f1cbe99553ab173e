//! Remote side: the simulated gripper holding a tilted pipette.
//!
//! Each tick applies at most one command, slews the TCP toward its target at
//! a bounded rate and renders the sensor pair for the current relative angle
//! (snapped to the nearest tilt class).

use super::wire::{Command, GraspResult, SensorPair};
use crate::error::{Error, Result};
use crate::sim::{mix_seed, render_band_pair, ContactParams};
use crate::tactile::{wrap_line_angle, TiltClass, MAX_GRIPPER_POS};

pub const SLEW_DEG_PER_S: f64 = 90.0;
/// A grasp succeeds when the pipette lies within this angle of the TCP.
pub const GRASP_TOLERANCE_DEG: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Pipette tilt in the holder, degrees.
    pub holder_tilt_deg: f64,
    pub slew_deg_per_s: f64,
    pub tick_hz: u32,
    pub contact: ContactParams,
    pub seed: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            holder_tilt_deg: 0.0,
            slew_deg_per_s: SLEW_DEG_PER_S,
            tick_hz: super::ticker::LOOP_HZ,
            contact: ContactParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspOutcome {
    pub success: bool,
    pub relative_deg: f64,
    pub ticks_used: u32,
}

#[derive(Debug, Clone)]
pub struct RemoteState {
    cfg: RemoteConfig,
    orientation_deg: f64,
    target_deg: f64,
    gripper_pos: u8,
    seq: u32,
    tick: u64,
    episode_start: u64,
}

impl RemoteState {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        cfg.contact.validate()?;
        if !(cfg.slew_deg_per_s > 0.0) || cfg.tick_hz == 0 {
            return Err(Error::Config("slew rate and tick rate must be positive".into()));
        }
        if !cfg.holder_tilt_deg.is_finite() {
            return Err(Error::Config("holder tilt must be finite".into()));
        }
        Ok(Self {
            cfg,
            orientation_deg: 0.0,
            target_deg: 0.0,
            gripper_pos: 0,
            seq: 0,
            tick: 0,
            episode_start: 0,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    pub fn orientation_deg(&self) -> f64 {
        self.orientation_deg
    }

    pub fn target_deg(&self) -> f64 {
        self.target_deg
    }

    pub fn gripper_pos(&self) -> u8 {
        self.gripper_pos
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Pipette angle relative to the TCP, in (-90, 90].
    pub fn relative_deg(&self) -> f64 {
        wrap_line_angle(self.cfg.holder_tilt_deg - self.orientation_deg)
    }

    pub fn relative_class(&self) -> TiltClass {
        TiltClass::nearest(self.relative_deg())
    }

    fn step_deg(&self) -> f64 {
        self.cfg.slew_deg_per_s / f64::from(self.cfg.tick_hz)
    }

    pub fn settled(&self) -> bool {
        self.orientation_deg == self.target_deg
    }

    /// Starts a new trial: TCP back to 0 with a new holder tilt.
    pub fn reset_episode(&mut self, holder_tilt_deg: f64) {
        self.cfg.holder_tilt_deg = holder_tilt_deg;
        self.orientation_deg = 0.0;
        self.target_deg = 0.0;
        self.gripper_pos = 0;
        self.episode_start = self.tick;
    }

    fn apply(&mut self, cmd: &Command) -> Option<GraspOutcome> {
        self.target_deg = f64::from(cmd.target_tilt_deg).clamp(-90.0, 90.0);
        self.gripper_pos = cmd.gripper_pos.min(MAX_GRIPPER_POS);
        cmd.grasp.then(|| {
            let rel = self.relative_deg();
            GraspOutcome {
                success: rel.abs() <= GRASP_TOLERANCE_DEG,
                relative_deg: rel,
                ticks_used: (self.tick - self.episode_start + 1) as u32,
            }
        })
    }

    fn slew(&mut self) {
        let step = self.step_deg();
        let d = self.target_deg - self.orientation_deg;
        if d.abs() <= step {
            self.orientation_deg = self.target_deg;
        } else {
            self.orientation_deg += step.copysign(d);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteTick {
    pub pair: SensorPair,
    pub grasp: Option<GraspOutcome>,
}

impl RemoteTick {
    pub fn grasp_message(&self) -> Option<GraspResult> {
        self.grasp.map(|g| GraspResult {
            seq: self.pair.seq,
            t_us: self.pair.t_us,
            success: g.success,
            relative_centideg: (g.relative_deg * 100.0).round() as i16,
            ticks_used: g.ticks_used,
        })
    }
}

/// One remote tick. A grasp is judged at the orientation reached before this
/// tick's slew step.
pub fn remote_tick(state: &mut RemoteState, cmd: Option<&Command>, t_us: u64) -> Result<RemoteTick> {
    let grasp = cmd.and_then(|c| state.apply(c));
    state.slew();
    let class = state.relative_class();
    let bf = render_band_pair(
        f64::from(class.degrees()),
        state.gripper_pos,
        &state.cfg.contact,
        mix_seed(state.cfg.seed, state.tick),
    )?;
    let pair = SensorPair {
        seq: state.seq,
        t_us,
        gripper_pos: state.gripper_pos,
        left: bf.left.to_bytes(),
        right: bf.right.to_bytes(),
    };
    state.seq = state.seq.wrapping_add(1);
    state.tick += 1;
    Ok(RemoteTick { pair, grasp })
}
