//! One-line JSON mirror of the wire messages for the browser console.
//!
//! Field names match the binary layout; byte arrays become number lists.
//! Commands coming back from the console may omit `grasp` (defaults false).

use serde::{Deserialize, Serialize};

use super::wire::{Command, Electrode, GraspResult, Heartbeat, SensorPair, WireMessage};
use crate::error::{Error, Result};
use crate::tactile::{FeedbackMode, ELECTRODE_CELLS, MAX_GRIPPER_POS, SENSOR_SIDE};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum JsonMessage {
    SensorPair {
        seq: u32,
        t_us: u64,
        gripper_pos: u8,
        left: Vec<u8>,
        right: Vec<u8>,
    },
    Command {
        seq: u32,
        t_us: u64,
        target_tilt_deg: i16,
        gripper_pos: u8,
        mode: u8,
        #[serde(default)]
        grasp: bool,
    },
    Electrode {
        seq: u32,
        t_us: u64,
        left: Vec<u8>,
        right: Vec<u8>,
        predicted: u8,
    },
    Heartbeat {
        seq: u32,
        t_us: u64,
    },
    GraspResult {
        seq: u32,
        t_us: u64,
        success: bool,
        relative_centideg: i16,
        ticks_used: u32,
    },
}

fn fixed<const N: usize>(v: Vec<u8>, field: &str) -> Result<[u8; N]> {
    let n = v.len();
    v.try_into()
        .map_err(|_| Error::format("json", format!("{field} has {n} entries, expected {N}")))
}

pub fn to_json_line(m: &WireMessage) -> String {
    let j = match *m {
        WireMessage::SensorPair(p) => JsonMessage::SensorPair {
            seq: p.seq,
            t_us: p.t_us,
            gripper_pos: p.gripper_pos,
            left: p.left.to_vec(),
            right: p.right.to_vec(),
        },
        WireMessage::Command(c) => JsonMessage::Command {
            seq: c.seq,
            t_us: c.t_us,
            target_tilt_deg: c.target_tilt_deg,
            gripper_pos: c.gripper_pos,
            mode: c.mode.code(),
            grasp: c.grasp,
        },
        WireMessage::Electrode(e) => JsonMessage::Electrode {
            seq: e.seq,
            t_us: e.t_us,
            left: e.left.to_vec(),
            right: e.right.to_vec(),
            predicted: e.predicted,
        },
        WireMessage::Heartbeat(h) => JsonMessage::Heartbeat { seq: h.seq, t_us: h.t_us },
        WireMessage::GraspResult(g) => JsonMessage::GraspResult {
            seq: g.seq,
            t_us: g.t_us,
            success: g.success,
            relative_centideg: g.relative_centideg,
            ticks_used: g.ticks_used,
        },
    };
    serde_json::to_string(&j).expect("plain data always serializes")
}

pub fn from_json_line(line: &str) -> Result<WireMessage> {
    let j: JsonMessage = serde_json::from_str(line.trim())?;
    const GRID: usize = SENSOR_SIDE * SENSOR_SIDE;
    let check_pos = |g: u8| {
        if g > MAX_GRIPPER_POS {
            Err(Error::GripperPos(i64::from(g)))
        } else {
            Ok(g)
        }
    };
    Ok(match j {
        JsonMessage::SensorPair {
            seq,
            t_us,
            gripper_pos,
            left,
            right,
        } => WireMessage::SensorPair(SensorPair {
            seq,
            t_us,
            gripper_pos: check_pos(gripper_pos)?,
            left: fixed::<GRID>(left, "left")?,
            right: fixed::<GRID>(right, "right")?,
        }),
        JsonMessage::Command {
            seq,
            t_us,
            target_tilt_deg,
            gripper_pos,
            mode,
            grasp,
        } => WireMessage::Command(Command {
            seq,
            t_us,
            target_tilt_deg,
            gripper_pos: check_pos(gripper_pos)?,
            mode: FeedbackMode::from_code(mode)
                .ok_or_else(|| Error::format("json", format!("unknown mode {mode}")))?,
            grasp,
        }),
        JsonMessage::Electrode {
            seq,
            t_us,
            left,
            right,
            predicted,
        } => WireMessage::Electrode(Electrode {
            seq,
            t_us,
            left: fixed::<ELECTRODE_CELLS>(left, "left")?,
            right: fixed::<ELECTRODE_CELLS>(right, "right")?,
            predicted,
        }),
        JsonMessage::Heartbeat { seq, t_us } => WireMessage::Heartbeat(Heartbeat { seq, t_us }),
        JsonMessage::GraspResult {
            seq,
            t_us,
            success,
            relative_centideg,
            ticks_used,
        } => WireMessage::GraspResult(GraspResult {
            seq,
            t_us,
            success,
            relative_centideg,
            ticks_used,
        }),
    })
}
