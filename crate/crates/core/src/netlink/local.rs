//! Local side: turns each incoming sensor pair into electrode commands.

use std::time::Instant;

use super::ticker::{LatencyWindow, Percentiles};
use super::wire::{decode_msg, encode_msg, Electrode, ProtocolError, ProtocolErrorKind, SensorPair, SeqTracker, WireMessage, NO_PREDICTION};
use crate::error::Result;
use crate::render::{apply_mask, encode_electrode, thumb_view, PatternBank, RenderedFeedback};
use crate::resample::downsize_pair;
use crate::tactile::{BiFrame, ElectrodeFrame, FeedbackMode, Finger, SensorFrame, TiltClass};
use crate::tiltnet::{predict_tilt, Model};

pub const STAGES: [&str; 5] = ["decode", "downsize", "inference", "mask_encode", "encode"];

#[derive(Debug, Clone, Default)]
pub struct StageStats {
    pub decode: LatencyWindow,
    pub downsize: LatencyWindow,
    pub inference: LatencyWindow,
    pub mask_encode: LatencyWindow,
    pub encode: LatencyWindow,
    pub total: LatencyWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StageReport {
    pub decode: Percentiles,
    pub downsize: Percentiles,
    pub inference: Percentiles,
    pub mask_encode: Percentiles,
    pub encode: Percentiles,
    pub total: Percentiles,
}

impl StageStats {
    pub fn report(&self) -> StageReport {
        StageReport {
            decode: self.decode.percentiles(),
            downsize: self.downsize.percentiles(),
            inference: self.inference.percentiles(),
            mask_encode: self.mask_encode.percentiles(),
            encode: self.encode.percentiles(),
            total: self.total.percentiles(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub mode: FeedbackMode,
    pub stats: StageStats,
    /// Ticks that could not render as requested (pattern mode without a model).
    pub faults: u64,
    pub frames: u64,
    seq_in: SeqTracker,
}

impl SessionState {
    pub fn new(mode: FeedbackMode) -> Self {
        Self {
            mode,
            stats: StageStats::default(),
            faults: 0,
            frames: 0,
            seq_in: SeqTracker::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalOutput {
    pub electrode: Electrode,
    pub frame: Vec<u8>,
    pub feedback: RenderedFeedback,
    pub input: BiFrame,
}

/// Rebuilds a sensor pair from its wire form (forces back in newtons).
pub fn biframe_of(p: &SensorPair) -> Result<BiFrame> {
    BiFrame::new(
        SensorFrame::from_bytes(Finger::Left, &p.left),
        SensorFrame::from_bytes(Finger::Right, &p.right),
        p.gripper_pos,
    )
}

fn lap(window: &mut LatencyWindow, since: &mut Instant) {
    let now = Instant::now();
    window.record(now - *since);
    *since = now;
}

/// Decodes one SensorPair frame, renders feedback for the session mode and
/// encodes the Electrode reply. Pattern mode without a model is logged and
/// counted as a fault; the electrodes stay off.
pub fn local_tick(state: &mut SessionState, frame: &[u8], model: Option<&Model>, t_us: u64) -> Result<LocalOutput> {
    let start = Instant::now();
    let mut t = start;

    let pair = match decode_msg(frame)? {
        WireMessage::SensorPair(p) => p,
        other => {
            return Err(ProtocolError::new(4, ProtocolErrorKind::UnexpectedMessage(other.type_name())).into())
        }
    };
    state.seq_in.check(pair.seq)?;
    let input = biframe_of(&pair)?;
    lap(&mut state.stats.decode, &mut t);

    let mut fb = RenderedFeedback::off();
    if state.mode != FeedbackMode::None {
        let (dl, dr) = downsize_pair(&input);
        lap(&mut state.stats.downsize, &mut t);
        let pattern = match (state.mode, model) {
            (FeedbackMode::CnnPattern, Some(m)) => {
                let (class, conf) = predict_tilt(m, &input)?;
                lap(&mut state.stats.inference, &mut t);
                fb.predicted = Some(class);
                fb.confidence = Some(conf);
                Some(class)
            }
            (FeedbackMode::CnnPattern, None) => {
                log::error!("pattern feedback requested but no model is loaded");
                state.faults += 1;
                None
            }
            _ => None,
        };
        match (state.mode, pattern) {
            (FeedbackMode::Downsized, _) => {
                fb.left = thumb_view(encode_electrode(&dl));
                fb.right = encode_electrode(&dr);
            }
            (FeedbackMode::CnnPattern, Some(class)) => {
                let mask = PatternBank::shared().index_finger(class);
                fb.left = thumb_view(encode_electrode(&apply_mask(&dl, mask)));
                fb.right = encode_electrode(&apply_mask(&dr, mask));
            }
            _ => {
                fb.left = ElectrodeFrame::off();
                fb.right = ElectrodeFrame::off();
            }
        }
        lap(&mut state.stats.mask_encode, &mut t);
    }

    let electrode = Electrode {
        seq: pair.seq,
        t_us,
        left: fb.left.to_bytes(),
        right: fb.right.to_bytes(),
        predicted: fb.predicted.map_or(NO_PREDICTION, |c: TiltClass| c.index() as u8),
    };
    let out = encode_msg(&WireMessage::Electrode(electrode));
    lap(&mut state.stats.encode, &mut t);
    state.stats.total.record(start.elapsed());
    state.frames += 1;
    Ok(LocalOutput {
        electrode,
        frame: out,
        feedback: fb,
        input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_feedback;
    use crate::sim::{render_contact, ContactParams};
    use crate::tiltnet::ModelSpec;

    fn frame(seq: u32, deg: i32) -> Vec<u8> {
        let bf = render_contact(TiltClass::from_degrees(deg).unwrap(), 25, &ContactParams::default(), u64::from(seq)).unwrap();
        encode_msg(&WireMessage::SensorPair(SensorPair {
            seq,
            t_us: 0,
            gripper_pos: 25,
            left: bf.left.to_bytes(),
            right: bf.right.to_bytes(),
        }))
    }

    #[test]
    fn matches_reference_renderer() {
        let model = Model::init(ModelSpec::default(), 3).unwrap();
        for (i, mode) in FeedbackMode::ALL.into_iter().enumerate() {
            let mut s = SessionState::new(mode);
            let out = local_tick(&mut s, &frame(i as u32, 30), Some(&model), 5).unwrap();
            let reference = render_feedback(mode, &out.input, Some(&model)).unwrap();
            assert_eq!(out.feedback, reference);
            assert_eq!(decode_msg(&out.frame).unwrap(), WireMessage::Electrode(out.electrode));
        }
    }

    #[test]
    fn missing_model_is_a_fault_not_an_error() {
        let mut s = SessionState::new(FeedbackMode::CnnPattern);
        let out = local_tick(&mut s, &frame(0, 0), None, 0).unwrap();
        assert_eq!(s.faults, 1);
        assert_eq!(out.electrode.predicted, NO_PREDICTION);
        assert!(out.feedback.left.is_off() && out.feedback.right.is_off());
    }

    #[test]
    fn rejects_regressions_and_wrong_types() {
        let mut s = SessionState::new(FeedbackMode::Downsized);
        local_tick(&mut s, &frame(4, 0), None, 0).unwrap();
        assert!(local_tick(&mut s, &frame(4, 0), None, 0).is_err());
        let hb = encode_msg(&WireMessage::Heartbeat(super::super::wire::Heartbeat { seq: 9, t_us: 0 }));
        assert!(local_tick(&mut s, &hb, None, 0).is_err());
        assert_eq!(s.frames, 1);
    }

    #[test]
    fn stage_timings_recorded() {
        let model = Model::init(ModelSpec::default(), 3).unwrap();
        let mut s = SessionState::new(FeedbackMode::CnnPattern);
        for i in 0..4 {
            local_tick(&mut s, &frame(i, 45), Some(&model), 0).unwrap();
        }
        let r = s.stats.report();
        assert_eq!(r.inference.count, 4);
        assert_eq!(r.total.count, 4);
        assert!(r.total.max_us >= r.inference.p50_us);
    }
}
