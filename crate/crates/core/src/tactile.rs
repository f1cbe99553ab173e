//! Shared domain types for the sensing and rendering chain.
//!
//! Forces are kept as `f64` newtons everywhere inside the crate and only
//! squeezed into bytes at file and wire boundaries ([`quantize_force`]).
//! Electrode grids are 5 rows tall and 4 columns wide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Taxels per side of a sensor pad.
pub const SENSOR_SIDE: usize = 10;
pub const ELECTRODE_ROWS: usize = 5;
pub const ELECTRODE_COLS: usize = 4;
pub const ELECTRODE_CELLS: usize = ELECTRODE_ROWS * ELECTRODE_COLS;

/// Upper end of the sensing range.
pub const MAX_FORCE_N: f64 = 9.0;
/// Forces below this are stored but count as "no contact".
pub const CONTACT_THRESHOLD_N: f64 = 1.0;
/// Full-scale electrode current corresponding to intensity 255.
pub const MAX_CURRENT_MA: f64 = 10.0;
pub const CARRIER_HZ: u32 = 120;
pub const MAX_GRIPPER_POS: u8 = 30;
pub const GRIPPER_POSITIONS: usize = MAX_GRIPPER_POS as usize + 1;

/// Physical pad areas; informational only, nothing is computed from them.
pub const SENSOR_AREA_CM2: f64 = 5.8;
pub const ELECTRODE_AREA_CM2: f64 = 1.44;

pub type ForceGrid = [[f64; SENSOR_SIDE]; SENSOR_SIDE];
pub type ElectrodeGrid<T> = [[T; ELECTRODE_COLS]; ELECTRODE_ROWS];

/// Maps a force to a storage byte. Out-of-range inputs saturate.
pub fn quantize_force(f: f64) -> u8 {
    debug_assert!(f.is_finite());
    (f.clamp(0.0, MAX_FORCE_N) / MAX_FORCE_N * 255.0).round() as u8
}

pub fn dequantize_force(q: u8) -> f64 {
    f64::from(q) / 255.0 * MAX_FORCE_N
}

pub fn is_contact(f: f64) -> bool {
    f >= CONTACT_THRESHOLD_N
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Finger {
    Left,
    Right,
}

/// One pad's 10x10 force image. Row 0 is the distal edge, column 0 the
/// leftmost taxel seen from the contact surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub finger: Finger,
    pub forces: ForceGrid,
}

impl SensorFrame {
    pub fn zeros(finger: Finger) -> Self {
        Self {
            finger,
            forces: [[0.0; SENSOR_SIDE]; SENSOR_SIDE],
        }
    }

    pub fn from_forces(finger: Finger, mut forces: ForceGrid) -> Self {
        for v in forces.iter_mut().flatten() {
            *v = v.clamp(0.0, MAX_FORCE_N);
        }
        Self { finger, forces }
    }

    pub fn to_bytes(&self) -> [u8; SENSOR_SIDE * SENSOR_SIDE] {
        let mut out = [0u8; SENSOR_SIDE * SENSOR_SIDE];
        for (o, v) in out.iter_mut().zip(self.forces.iter().flatten()) {
            *o = quantize_force(*v);
        }
        out
    }

    pub fn from_bytes(finger: Finger, bytes: &[u8; SENSOR_SIDE * SENSOR_SIDE]) -> Self {
        let mut forces = [[0.0; SENSOR_SIDE]; SENSOR_SIDE];
        for (v, b) in forces.iter_mut().flatten().zip(bytes) {
            *v = dequantize_force(*b);
        }
        Self { finger, forces }
    }

    pub fn total_force(&self) -> f64 {
        self.forces.iter().flatten().sum()
    }
}

/// Mirrors a left-finger frame left-to-right so both fingers share one
/// orientation convention. Applying it twice gives back the input.
pub fn flip_left(frame: &SensorFrame) -> Result<SensorFrame> {
    if frame.finger != Finger::Left {
        return Err(Error::WrongFinger {
            expected: Finger::Left,
            got: frame.finger,
        });
    }
    Ok(SensorFrame {
        finger: Finger::Left,
        forces: mirror_columns(&frame.forces),
    })
}

pub(crate) fn mirror_columns<T: Copy, const R: usize, const C: usize>(
    grid: &[[T; C]; R],
) -> [[T; C]; R] {
    let mut out = *grid;
    for row in out.iter_mut() {
        row.reverse();
    }
    out
}

/// A left/right sample pair. `left` has already been flipped at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct BiFrame {
    pub left: SensorFrame,
    pub right: SensorFrame,
    pub gripper_pos: u8,
    pub label: Option<TiltClass>,
}

impl BiFrame {
    pub fn new(left: SensorFrame, right: SensorFrame, gripper_pos: u8) -> Result<Self> {
        if left.finger != Finger::Left {
            return Err(Error::WrongFinger {
                expected: Finger::Left,
                got: left.finger,
            });
        }
        if right.finger != Finger::Right {
            return Err(Error::WrongFinger {
                expected: Finger::Right,
                got: right.finger,
            });
        }
        check_gripper_pos(i64::from(gripper_pos))?;
        Ok(Self {
            left,
            right,
            gripper_pos,
            label: None,
        })
    }

    pub fn with_label(mut self, label: TiltClass) -> Self {
        self.label = Some(label);
        self
    }
}

pub fn check_gripper_pos(pos: i64) -> Result<u8> {
    if (0..=i64::from(MAX_GRIPPER_POS)).contains(&pos) {
        Ok(pos as u8)
    } else {
        Err(Error::GripperPos(pos))
    }
}

/// Tilt angles in ascending order; the class index is the position here.
pub const TILT_DEGREES: [i32; 9] = [-90, -60, -45, -30, 0, 30, 45, 60, 90];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TiltClass(u8);

impl TiltClass {
    pub const COUNT: usize = TILT_DEGREES.len();
    pub const ZERO: TiltClass = TiltClass(4);

    pub fn from_index(index: usize) -> Result<Self> {
        if index < Self::COUNT {
            Ok(TiltClass(index as u8))
        } else {
            Err(Error::ClassIndex(index))
        }
    }

    pub fn from_degrees(deg: i32) -> Result<Self> {
        class_of_degrees(deg)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn degrees(self) -> i32 {
        TILT_DEGREES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = TiltClass> {
        (0..Self::COUNT as u8).map(TiltClass)
    }

    /// The class whose angle is nearest to `deg` as a line orientation
    /// (angles are compared modulo 180). Ties go to the class closest in
    /// plain degrees, then to the smaller magnitude, so 90 maps to 90 and
    /// +-15 map to 0.
    pub fn nearest(deg: f64) -> TiltClass {
        const EPS: f64 = 1e-9;
        let key = |c: TiltClass| {
            let a = f64::from(c.degrees());
            (line_angle_diff(deg, a).abs(), (deg - a).abs(), a.abs())
        };
        let mut best = TiltClass::ZERO;
        let mut bk = key(best);
        for c in Self::all() {
            let k = key(c);
            let better = if (k.0 - bk.0).abs() > EPS {
                k.0 < bk.0
            } else if (k.1 - bk.1).abs() > EPS {
                k.1 < bk.1
            } else {
                k.2 < bk.2
            };
            if better {
                best = c;
                bk = k;
            }
        }
        best
    }
}

impl std::fmt::Display for TiltClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

pub fn class_of_degrees(deg: i32) -> Result<TiltClass> {
    TILT_DEGREES
        .iter()
        .position(|&d| d == deg)
        .map(|i| TiltClass(i as u8))
        .ok_or(Error::UnknownAngle(deg))
}

pub fn degrees_of_class(class: TiltClass) -> i32 {
    class.degrees()
}

/// Wraps an angle difference between two line orientations into (-90, 90].
pub fn line_angle_diff(a: f64, b: f64) -> f64 {
    wrap_line_angle(a - b)
}

pub fn wrap_line_angle(deg: f64) -> f64 {
    let mut d = deg.rem_euclid(180.0);
    if d > 90.0 {
        d -= 180.0;
    }
    if d <= -90.0 {
        d += 180.0;
    }
    d
}

/// Bicubic output on the electrode grid, newtons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsizedFrame {
    pub values: ElectrodeGrid<f64>,
}

impl DownsizedFrame {
    pub fn zeros() -> Self {
        Self {
            values: [[0.0; ELECTRODE_COLS]; ELECTRODE_ROWS],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatternMask {
    pub cells: ElectrodeGrid<bool>,
}

impl PatternMask {
    pub fn count(&self) -> usize {
        self.cells.iter().flatten().filter(|&&c| c).count()
    }

    pub fn mirrored(&self) -> Self {
        Self {
            cells: mirror_columns(&self.cells),
        }
    }
}

/// Per-electrode stimulus, 0 = off, 255 = full current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectrodeFrame {
    pub intensities: ElectrodeGrid<u8>,
}

impl ElectrodeFrame {
    pub const CARRIER_HZ: u32 = CARRIER_HZ;

    pub fn off() -> Self {
        Self {
            intensities: [[0; ELECTRODE_COLS]; ELECTRODE_ROWS],
        }
    }

    pub fn carrier_hz(&self) -> u32 {
        CARRIER_HZ
    }

    pub fn to_bytes(&self) -> [u8; ELECTRODE_CELLS] {
        let mut out = [0u8; ELECTRODE_CELLS];
        for (o, v) in out.iter_mut().zip(self.intensities.iter().flatten()) {
            *o = *v;
        }
        out
    }

    pub fn from_bytes(bytes: &[u8; ELECTRODE_CELLS]) -> Self {
        let mut intensities = [[0u8; ELECTRODE_COLS]; ELECTRODE_ROWS];
        for (v, b) in intensities.iter_mut().flatten().zip(bytes) {
            *v = *b;
        }
        Self { intensities }
    }

    pub fn current_ma(&self, row: usize, col: usize) -> f64 {
        f64::from(self.intensities[row][col]) / 255.0 * MAX_CURRENT_MA
    }

    pub fn is_off(&self) -> bool {
        self.intensities.iter().flatten().all(|&v| v == 0)
    }

    pub fn active_cells(&self) -> PatternMask {
        let mut cells = [[false; ELECTRODE_COLS]; ELECTRODE_ROWS];
        for (c, v) in cells.iter_mut().flatten().zip(self.intensities.iter().flatten()) {
            *c = *v > 0;
        }
        PatternMask { cells }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeedbackMode {
    None,
    Downsized,
    CnnPattern,
}

impl FeedbackMode {
    pub const ALL: [FeedbackMode; 3] = [
        FeedbackMode::None,
        FeedbackMode::Downsized,
        FeedbackMode::CnnPattern,
    ];

    pub fn code(self) -> u8 {
        match self {
            FeedbackMode::None => 0,
            FeedbackMode::Downsized => 1,
            FeedbackMode::CnnPattern => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeedbackMode::None),
            1 => Some(FeedbackMode::Downsized),
            2 => Some(FeedbackMode::CnnPattern),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeedbackMode::None => "none",
            FeedbackMode::Downsized => "downsize",
            FeedbackMode::CnnPattern => "pattern",
        }
    }
}

impl std::str::FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "0" => Ok(FeedbackMode::None),
            "downsize" | "downsized" | "1" => Ok(FeedbackMode::Downsized),
            "pattern" | "cnn" | "cnnpattern" | "2" => Ok(FeedbackMode::CnnPattern),
            other => Err(format!("unknown feedback mode '{other}' (none|downsize|pattern)")),
        }
    }
}
