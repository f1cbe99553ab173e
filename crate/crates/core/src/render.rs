//! Electro-tactile rendering: bicubic downsizing followed, in pattern mode,
//! by an AND with the line pattern of the predicted tilt.
//!
//! The right pad drives the index-finger electrodes and the left pad the
//! thumb. Electrode frames are expressed in each finger's own contact
//! coordinates, so the thumb output is the mirror image of what the
//! (flipped) left sensor frame gives directly and the thumb patterns are the
//! mirrored index patterns.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::resample::downsize_pair;
use crate::tactile::{
    is_contact, mirror_columns, BiFrame, DownsizedFrame, ElectrodeFrame, FeedbackMode,
    PatternMask, TiltClass, ELECTRODE_COLS, ELECTRODE_ROWS, MAX_FORCE_N,
};
use crate::tiltnet::{predict_tilt, Model};

/// Intensity of an electrode driven right at the contact threshold.
pub const INTENSITY_FLOOR: u8 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternBank {
    index: [PatternMask; TiltClass::COUNT],
    thumb: [PatternMask; TiltClass::COUNT],
}

impl PatternBank {
    pub fn index_finger(&self, class: TiltClass) -> &PatternMask {
        &self.index[class.index()]
    }

    pub fn thumb(&self, class: TiltClass) -> &PatternMask {
        &self.thumb[class.index()]
    }

    /// Built on first use and shared afterwards.
    pub fn shared() -> &'static PatternBank {
        static BANK: OnceLock<PatternBank> = OnceLock::new();
        BANK.get_or_init(build_bank)
    }
}

const TIE_EPS: f64 = 1e-9;

/// Nearest cell indices for a coordinate; both neighbours when it sits on a
/// cell boundary.
fn nearest_cells(v: f64) -> (usize, Option<usize>) {
    let lo = v.floor();
    let frac = v - lo;
    if (frac - 0.5).abs() < TIE_EPS {
        (lo as usize, Some(lo as usize + 1))
    } else {
        (v.round() as usize, None)
    }
}

/// Rasterizes a one-cell-thick line through the middle of the electrode grid.
pub fn line_mask(angle_deg: f64) -> PatternMask {
    let mut cells = [[false; ELECTRODE_COLS]; ELECTRODE_ROWS];
    let cy = (ELECTRODE_ROWS as f64 - 1.0) / 2.0;
    let cx = (ELECTRODE_COLS as f64 - 1.0) / 2.0;
    let (s, c) = angle_deg.to_radians().sin_cos();
    let step = 0.01;
    let reach = (ELECTRODE_ROWS.max(ELECTRODE_COLS)) as f64;
    let n = (reach / step) as i64;
    for k in 0..n {
        let t = (k as f64 + 0.5) * step;
        for t in [t, -t] {
            let x = cx + c * t;
            let y = cy - s * t;
            if x <= -0.5 || x >= ELECTRODE_COLS as f64 - 0.5 {
                continue;
            }
            if y <= -0.5 || y >= ELECTRODE_ROWS as f64 - 0.5 {
                continue;
            }
            let (r0, r1) = nearest_cells(y);
            let (c0, c1) = nearest_cells(x);
            for r in std::iter::once(r0).chain(r1) {
                for col in std::iter::once(c0).chain(c1) {
                    if r < ELECTRODE_ROWS && col < ELECTRODE_COLS {
                        cells[r][col] = true;
                    }
                }
            }
        }
    }
    PatternMask { cells }
}

pub fn build_bank() -> PatternBank {
    let index: [PatternMask; TiltClass::COUNT] = std::array::from_fn(|i| {
        let class = TiltClass::from_index(i).expect("index in range");
        line_mask(f64::from(class.degrees()))
    });
    let thumb = index.map(|m| m.mirrored());
    PatternBank { index, thumb }
}

/// Keeps a downsized value only where the pattern is set and the value
/// counts as contact.
pub fn apply_mask(d: &DownsizedFrame, m: &PatternMask) -> DownsizedFrame {
    let mut out = DownsizedFrame::zeros();
    for i in 0..ELECTRODE_ROWS {
        for j in 0..ELECTRODE_COLS {
            let v = d.values[i][j];
            if m.cells[i][j] && is_contact(v) {
                out.values[i][j] = v;
            }
        }
    }
    out
}

/// Off below 1 N, then affine from [`INTENSITY_FLOOR`] at 1 N to 255 at 9 N.
pub fn intensity_of(force: f64) -> u8 {
    if !is_contact(force) {
        return 0;
    }
    let f = force.min(MAX_FORCE_N);
    let span = f64::from(255 - INTENSITY_FLOOR);
    (f64::from(INTENSITY_FLOOR) + (f - 1.0) / (MAX_FORCE_N - 1.0) * span).round() as u8
}

pub fn encode_electrode(d: &DownsizedFrame) -> ElectrodeFrame {
    let mut out = ElectrodeFrame::off();
    for (o, v) in out.intensities.iter_mut().flatten().zip(d.values.iter().flatten()) {
        *o = intensity_of(*v);
    }
    out
}

pub(crate) fn thumb_view(frame: ElectrodeFrame) -> ElectrodeFrame {
    ElectrodeFrame {
        intensities: mirror_columns(&frame.intensities),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedFeedback {
    /// Thumb electrodes, driven by the left pad.
    pub left: ElectrodeFrame,
    /// Index-finger electrodes, driven by the right pad.
    pub right: ElectrodeFrame,
    pub predicted: Option<TiltClass>,
    pub confidence: Option<f64>,
}

impl RenderedFeedback {
    pub fn off() -> Self {
        Self {
            left: ElectrodeFrame::off(),
            right: ElectrodeFrame::off(),
            predicted: None,
            confidence: None,
        }
    }
}

/// Downsized-mode output: every contact cell is stimulated.
pub fn render_downsized(biframe: &BiFrame) -> (ElectrodeFrame, ElectrodeFrame) {
    let (dl, dr) = downsize_pair(biframe);
    (thumb_view(encode_electrode(&dl)), encode_electrode(&dr))
}

/// Pattern-mode output for a given class, independent of any classifier.
pub fn render_pattern(biframe: &BiFrame, class: TiltClass) -> (ElectrodeFrame, ElectrodeFrame) {
    let bank = PatternBank::shared();
    let mask = bank.index_finger(class);
    let (dl, dr) = downsize_pair(biframe);
    (
        thumb_view(encode_electrode(&apply_mask(&dl, mask))),
        encode_electrode(&apply_mask(&dr, mask)),
    )
}

pub fn render_feedback(
    mode: FeedbackMode,
    biframe: &BiFrame,
    model: Option<&Model>,
) -> Result<RenderedFeedback> {
    match mode {
        FeedbackMode::None => Ok(RenderedFeedback::off()),
        FeedbackMode::Downsized => {
            let (left, right) = render_downsized(biframe);
            Ok(RenderedFeedback {
                left,
                right,
                predicted: None,
                confidence: None,
            })
        }
        FeedbackMode::CnnPattern => {
            let model = model.ok_or(Error::MissingModel)?;
            let (class, conf) = predict_tilt(model, biframe)?;
            let (left, right) = render_pattern(biframe, class);
            Ok(RenderedFeedback {
                left,
                right,
                predicted: Some(class),
                confidence: Some(conf),
            })
        }
    }
}
