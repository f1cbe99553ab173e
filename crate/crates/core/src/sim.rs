//! Synthetic contact model standing in for the pipette/gripper rig.
//!
//! A pressed cylinder shows up on a flat pad as a straight band. The band
//! runs through the pad center (plus a small jitter) at the tilt angle, has
//! a Gaussian cross-section that widens as the gripper closes, and its peak
//! pressure follows an affine closure curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tactile::{
    check_gripper_pos, flip_left, BiFrame, Finger, ForceGrid, SensorFrame, TiltClass,
    MAX_FORCE_N, MAX_GRIPPER_POS, SENSOR_SIDE,
};

/// Peak band pressure as a function of closure step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ForceCurve {
    /// Linear from `at_open` (closure 0) to `at_closed` (closure 30).
    Affine { at_open: f64, at_closed: f64 },
}

impl ForceCurve {
    pub fn peak(&self, gripper_pos: u8) -> f64 {
        match *self {
            ForceCurve::Affine { at_open, at_closed } => {
                let t = f64::from(gripper_pos) / f64::from(MAX_GRIPPER_POS);
                at_open + (at_closed - at_open) * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Mean band center offset from the pad center, (columns, rows).
    pub center_offset: (f64, f64),
    /// Per-sample center jitter, uniform in +-this many taxels on each axis.
    pub offset_jitter: f64,
    /// Gaussian sigma of the band cross-section at closure 0, taxels.
    pub base_width: f64,
    /// Sigma increase per closure step.
    pub width_gain: f64,
    pub force_curve: ForceCurve,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            center_offset: (0.0, 0.0),
            offset_jitter: 0.75,
            base_width: 0.6,
            width_gain: 0.01,
            force_curve: ForceCurve::Affine {
                at_open: 1.0,
                at_closed: 8.0,
            },
            noise_sigma: 0.2,
            rng_seed: 0,
        }
    }
}

impl ContactParams {
    pub fn noiseless(mut self) -> Self {
        self.noise_sigma = 0.0;
        self
    }

    pub fn centered(mut self) -> Self {
        self.center_offset = (0.0, 0.0);
        self.offset_jitter = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_width > 0.0) {
            return Err(Error::Config("base_width must be > 0".into()));
        }
        if self.width_gain < 0.0 {
            return Err(Error::Config("width_gain must be >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(self.offset_jitter >= 0.0) {
            return Err(Error::Config("offset_jitter must be >= 0".into()));
        }
        let lo = self.force_curve.peak(0);
        let hi = self.force_curve.peak(MAX_GRIPPER_POS);
        if hi > MAX_FORCE_N || lo < 0.0 || hi < lo {
            return Err(Error::Config(format!(
                "force curve must be non-decreasing within [0, 9] N (got {lo}..{hi})"
            )));
        }
        Ok(())
    }

    pub fn band_sigma(&self, gripper_pos: u8) -> f64 {
        self.base_width + self.width_gain * f64::from(gripper_pos)
    }
}

/// Geometry of one rendered band in a pad's own coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub angle_deg: f64,
    /// Center offset from the pad center, (columns, rows).
    pub offset: (f64, f64),
    pub sigma: f64,
    pub peak: f64,
}

impl Band {
    /// Signed distance of taxel (row, col) from the band axis. Positive
    /// angles rise to the right (rows grow downward).
    #[inline]
    pub fn distance(&self, row: usize, col: usize) -> f64 {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let mid = (SENSOR_SIDE as f64 - 1.0) / 2.0;
        let x = col as f64 - mid - self.offset.0;
        let y = row as f64 - mid - self.offset.1;
        x * s + y * c
    }

    pub fn rasterize(&self) -> ForceGrid {
        let mut g = [[0.0; SENSOR_SIDE]; SENSOR_SIDE];
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        for (r, row) in g.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let d = self.distance(r, c);
                *v = self.peak * (-d * d * inv).exp();
            }
        }
        g
    }
}

/// splitmix64 finalizer, used to derive independent per-record streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn add_noise(grid: &mut ForceGrid, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma checked non-negative");
        for v in grid.iter_mut().flatten() {
            *v += normal.sample(rng);
        }
    }
    for v in grid.iter_mut().flatten() {
        *v = v.clamp(0.0, MAX_FORCE_N);
    }
}

/// Renders a contact pair for a band at an arbitrary angle. `sample_seed`
/// selects the jitter and noise draws; the tilt does not enter the seed.
pub fn render_band_pair(
    angle_deg: f64,
    gripper_pos: u8,
    params: &ContactParams,
    sample_seed: u64,
) -> Result<BiFrame> {
    check_gripper_pos(i64::from(gripper_pos))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.rng_seed, sample_seed));
    let j = params.offset_jitter;
    let (jx, jy) = if j > 0.0 {
        (rng.random_range(-j..=j), rng.random_range(-j..=j))
    } else {
        (0.0, 0.0)
    };
    let offset = (params.center_offset.0 + jx, params.center_offset.1 + jy);
    let sigma = params.band_sigma(gripper_pos);
    let peak = params.force_curve.peak(gripper_pos);

    let right_band = Band {
        angle_deg,
        offset,
        sigma,
        peak,
    };
    // The left pad faces the right one, so it sees the band mirrored.
    let left_band = Band {
        angle_deg: -angle_deg,
        offset: (-offset.0, offset.1),
        sigma,
        peak,
    };

    let mut right = right_band.rasterize();
    let mut left_raw = left_band.rasterize();
    add_noise(&mut right, params.noise_sigma, &mut rng);
    add_noise(&mut left_raw, params.noise_sigma, &mut rng);

    let left = flip_left(&SensorFrame {
        finger: Finger::Left,
        forces: left_raw,
    })?;
    BiFrame::new(
        left,
        SensorFrame {
            finger: Finger::Right,
            forces: right,
        },
        gripper_pos,
    )
}

/// Labeled contact pair for one tilt class.
pub fn render_contact(
    tilt: TiltClass,
    gripper_pos: u8,
    params: &ContactParams,
    sample_seed: u64,
) -> Result<BiFrame> {
    Ok(render_band_pair(f64::from(tilt.degrees()), gripper_pos, params, sample_seed)?.with_label(tilt))
}
