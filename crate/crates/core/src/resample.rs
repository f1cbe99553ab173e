//! Bicubic downsizing of a sensor pad onto the electrode grid.
//!
//! Sample positions use pixel-center alignment and out-of-range taps are
//! clamped to the nearest edge row/column, so a left-right mirrored input
//! gives an exactly mirrored output.

use crate::tactile::{
    BiFrame, DownsizedFrame, ForceGrid, ELECTRODE_COLS, ELECTRODE_ROWS, MAX_FORCE_N, SENSOR_SIDE,
};

/// Catmull-Rom.
pub const DEFAULT_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicKernel {
    pub a: f64,
}

impl Default for CubicKernel {
    fn default() -> Self {
        Self { a: DEFAULT_A }
    }
}

impl CubicKernel {
    pub fn new(a: f64) -> Self {
        debug_assert!(a < 0.0, "cubic sharpness must be negative");
        Self { a }
    }

    #[inline]
    pub fn weight(&self, t: f64) -> f64 {
        kernel_weight(t, self.a)
    }
}

/// Two-piece cubic convolution kernel with support (-2, 2).
#[inline]
pub fn kernel_weight(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Source coordinate sampled by output index `i` when mapping `src` cells onto `dst`.
#[inline]
pub fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

/// 4-tap indices and weights along one axis for output index `i`.
fn taps(i: usize, src: usize, dst: usize, kernel: CubicKernel) -> [(usize, f64); 4] {
    let pos = source_coord(i, src, dst);
    let base = pos.floor() as isize;
    let mut out = [(0usize, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let idx = base - 1 + k as isize;
        let w = kernel.weight(pos - idx as f64);
        *slot = (idx.clamp(0, src as isize - 1) as usize, w);
    }
    out
}

/// Resamples an arbitrary `R x C` row-major grid to `out_rows x out_cols`
/// without clamping the result.
pub fn bicubic_resize_raw(
    src: &[f64],
    rows: usize,
    cols: usize,
    out_rows: usize,
    out_cols: usize,
    kernel: CubicKernel,
) -> Vec<f64> {
    assert_eq!(src.len(), rows * cols, "source length does not match shape");
    let row_taps: Vec<_> = (0..out_rows)
        .map(|i| taps(i, rows, out_rows, kernel))
        .collect();
    let col_taps: Vec<_> = (0..out_cols)
        .map(|j| taps(j, cols, out_cols, kernel))
        .collect();
    let mut out = vec![0.0; out_rows * out_cols];
    for (i, rt) in row_taps.iter().enumerate() {
        for (j, ct) in col_taps.iter().enumerate() {
            let mut acc = 0.0;
            for &(r, wy) in rt {
                let mut row_acc = 0.0;
                for &(c, wx) in ct {
                    row_acc += src[r * cols + c] * wx;
                }
                acc += row_acc * wy;
            }
            out[i * out_cols + j] = acc;
        }
    }
    out
}

/// 10x10 to 5x4 before the physical clamp. Linear in the input.
pub fn bicubic_downsize_unclamped(forces: &ForceGrid, kernel: CubicKernel) -> DownsizedFrame {
    let flat: Vec<f64> = forces.iter().flatten().copied().collect();
    let out = bicubic_resize_raw(
        &flat,
        SENSOR_SIDE,
        SENSOR_SIDE,
        ELECTRODE_ROWS,
        ELECTRODE_COLS,
        kernel,
    );
    let mut frame = DownsizedFrame::zeros();
    for (v, o) in frame.values.iter_mut().flatten().zip(out) {
        *v = o;
    }
    frame
}

/// Downsizes one pad and clamps overshoot back into the sensing range.
pub fn bicubic_downsize(forces: &ForceGrid) -> DownsizedFrame {
    let mut frame = bicubic_downsize_unclamped(forces, CubicKernel::default());
    for v in frame.values.iter_mut().flatten() {
        *v = v.clamp(0.0, MAX_FORCE_N);
    }
    frame
}

pub fn downsize_pair(biframe: &BiFrame) -> (DownsizedFrame, DownsizedFrame) {
    (
        bicubic_downsize(&biframe.left.forces),
        bicubic_downsize(&biframe.right.forces),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tactile::{Finger, SensorFrame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_weight(0.0, -0.5), 1.0);
        assert_eq!(kernel_weight(1.0, -0.5), 0.0);
        assert_eq!(kernel_weight(-1.0, -0.5), 0.0);
        assert_eq!(kernel_weight(2.0, -0.5), 0.0);
        assert_eq!(kernel_weight(3.7, -0.5), 0.0);
        // (a+2)/8 - (a+3)/4 + 1 at a = -0.5
        assert!((kernel_weight(0.5, -0.5) - 0.5625).abs() < 1e-15);
        assert!((kernel_weight(-0.5, -0.5) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn kernel_partition_of_unity() {
        for a in [-0.5, -0.75, -1.0] {
            for k in 0..100 {
                let frac = k as f64 / 100.0;
                let s: f64 = (-2..=2).map(|n| kernel_weight(frac - n as f64, a)).sum();
                assert!((s - 1.0).abs() < 1e-12, "a={a} frac={frac} sum={s}");
            }
        }
    }

    #[test]
    fn sample_positions() {
        assert_eq!(source_coord(0, 10, 5), 0.5);
        assert_eq!(source_coord(4, 10, 5), 8.5);
        assert_eq!(source_coord(0, 10, 4), 0.75);
        assert_eq!(source_coord(3, 10, 4), 8.25);
    }

    #[test]
    fn constant_and_zero() {
        let out = bicubic_downsize(&[[3.0; 10]; 10]);
        for v in out.values.iter().flatten() {
            assert!((v - 3.0).abs() <= 1e-12);
        }
        let z = bicubic_downsize(&[[0.0; 10]; 10]);
        assert!(z.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn overshoot_is_clamped() {
        let mut g = [[0.0; 10]; 10];
        for row in g.iter_mut().skip(4).take(2) {
            *row = [9.0; 10];
        }
        let raw = bicubic_downsize_unclamped(&g, CubicKernel::default());
        let clamped = bicubic_downsize(&g);
        assert!(raw.values.iter().flatten().any(|&v| v < 0.0));
        assert!(clamped
            .values
            .iter()
            .flatten()
            .all(|&v| (0.0..=9.0).contains(&v)));
    }

    #[test]
    fn mirror_symmetry_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut g = [[0.0; 10]; 10];
            for v in g.iter_mut().flatten() {
                *v = rng.random_range(0.0..9.0);
            }
            let mut m = g;
            for row in m.iter_mut() {
                row.reverse();
            }
            let a = bicubic_downsize(&g);
            let b = bicubic_downsize(&m);
            for i in 0..5 {
                for j in 0..4 {
                    assert!((a.values[i][j] - b.values[i][3 - j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pair_is_per_finger() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut l = [[0.0; 10]; 10];
        let mut r = [[0.0; 10]; 10];
        for v in l.iter_mut().chain(r.iter_mut()).flatten() {
            *v = rng.random_range(0.0..9.0);
        }
        let bf = BiFrame::new(
            SensorFrame::from_forces(Finger::Left, l),
            SensorFrame::from_forces(Finger::Right, r),
            5,
        )
        .unwrap();
        let (dl, dr) = downsize_pair(&bf);
        assert_eq!(dl, bicubic_downsize(&l));
        assert_eq!(dr, bicubic_downsize(&r));

        let swapped = BiFrame::new(
            SensorFrame::from_forces(Finger::Left, r),
            SensorFrame::from_forces(Finger::Right, l),
            5,
        )
        .unwrap();
        let (sl, sr) = downsize_pair(&swapped);
        assert_eq!((sl, sr), (dr, dl));

        let zc = BiFrame::new(
            SensorFrame::zeros(Finger::Left),
            SensorFrame::from_forces(Finger::Right, [[2.5; 10]; 10]),
            0,
        )
        .unwrap();
        let (zl, zr) = downsize_pair(&zc);
        assert!(zl.values.iter().flatten().all(|&v| v == 0.0));
        assert!(zr.values.iter().flatten().all(|&v| (v - 2.5).abs() < 1e-12));
    }
}
