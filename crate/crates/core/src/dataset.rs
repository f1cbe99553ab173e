//! Labeled dataset generation, stratified splitting and the `TXDS` file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "TXDS" | u16 version = 1 | u32 count | count x record
//! record = u8 label | u8 gripper_pos | u32 sample_id | 100 B left | 100 B right
//! ```
//!
//! Grids are quantized with [`quantize_force`](crate::tactile::quantize_force),
//! row-major, left pad already flipped.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sim::{mix_seed, render_contact, ContactParams};
use crate::tactile::{
    BiFrame, Finger, SensorFrame, TiltClass, GRIPPER_POSITIONS, MAX_GRIPPER_POS, SENSOR_SIDE,
};

pub const DATASET_MAGIC: &[u8; 4] = b"TXDS";
pub const DATASET_VERSION: u16 = 1;
pub const DEFAULT_REPS_PER_CELL: usize = 32;
const HEADER_LEN: usize = 4 + 2 + 4;
const GRID_BYTES: usize = SENSOR_SIDE * SENSOR_SIDE;
const RECORD_LEN: usize = 1 + 1 + 4 + 2 * GRID_BYTES;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub biframe: BiFrame,
    pub label: TiltClass,
    pub gripper_pos: u8,
    pub sample_id: u32,
}

impl DatasetRecord {
    /// The record as it reads back from a dataset file.
    pub fn quantized(&self) -> DatasetRecord {
        let left = SensorFrame::from_bytes(Finger::Left, &self.biframe.left.to_bytes());
        let right = SensorFrame::from_bytes(Finger::Right, &self.biframe.right.to_bytes());
        DatasetRecord {
            biframe: BiFrame {
                left,
                right,
                gripper_pos: self.gripper_pos,
                label: Some(self.label),
            },
            ..self.clone()
        }
    }
}

/// Seed for one (class, closure, repetition) cell, independent of how many
/// repetitions the dataset has.
pub fn record_seed(class: TiltClass, gripper_pos: u8, rep: usize) -> u64 {
    mix_seed(
        mix_seed(class.index() as u64, u64::from(gripper_pos)),
        rep as u64,
    )
}

/// Every (class, closure) cell gets `reps_per_cell` samples; class-major order.
pub fn gen_dataset(params: &ContactParams, reps_per_cell: usize) -> Result<Vec<DatasetRecord>> {
    if reps_per_cell == 0 {
        return Err(Error::Config("reps_per_cell must be >= 1".into()));
    }
    params.validate()?;
    let mut out = Vec::with_capacity(TiltClass::COUNT * GRIPPER_POSITIONS * reps_per_cell);
    for class in TiltClass::all() {
        for pos in 0..=MAX_GRIPPER_POS {
            for rep in 0..reps_per_cell {
                let biframe = render_contact(class, pos, params, record_seed(class, pos, rep))?;
                let sample_id = out.len() as u32;
                out.push(DatasetRecord {
                    biframe,
                    label: class,
                    gripper_pos: pos,
                    sample_id,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// Per-class 50/25/25 split. Within a class of `k` records, train gets
/// `k / 2`, validation gets the larger half of the remainder and test the
/// rest. Each part is shuffled.
pub fn split_dataset(records: &[DatasetRecord], seed: u64) -> Split {
    let mut by_class: Vec<Vec<&DatasetRecord>> = vec![Vec::new(); TiltClass::COUNT];
    for r in records {
        by_class[r.label.index()].push(r);
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (ci, mut members) in by_class.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ci as u64));
        members.shuffle(&mut rng);
        let k = members.len();
        let n_train = k / 2;
        let n_val = (k - n_train).div_ceil(2);
        split.train.extend(members[..n_train].iter().map(|r| (*r).clone()));
        split
            .val
            .extend(members[n_train..n_train + n_val].iter().map(|r| (*r).clone()));
        split
            .test
            .extend(members[n_train + n_val..].iter().map(|r| (*r).clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    split.train.shuffle(&mut rng);
    split.val.shuffle(&mut rng);
    split.test.shuffle(&mut rng);
    split
}

pub fn encode_dataset(records: &[DatasetRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * RECORD_LEN);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.push(r.label.index() as u8);
        out.push(r.gripper_pos);
        out.extend_from_slice(&r.sample_id.to_le_bytes());
        out.extend_from_slice(&r.biframe.left.to_bytes());
        out.extend_from_slice(&r.biframe.right.to_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<DatasetRecord>> {
    let bad = |msg: String| Error::format("dataset", msg);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(bad("missing TXDS magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DATASET_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * RECORD_LEN {
        return Err(bad(format!(
            "header says {count} records ({} bytes) but body has {} bytes",
            count * RECORD_LEN,
            body.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let label = TiltClass::from_index(usize::from(rec[0]))
            .map_err(|_| bad(format!("record {i}: label {} out of range", rec[0])))?;
        let gripper_pos = rec[1];
        if gripper_pos > MAX_GRIPPER_POS {
            return Err(bad(format!("record {i}: gripper_pos {gripper_pos} > 30")));
        }
        let sample_id = u32::from_le_bytes(rec[2..6].try_into().unwrap());
        let left: &[u8; GRID_BYTES] = rec[6..6 + GRID_BYTES].try_into().unwrap();
        let right: &[u8; GRID_BYTES] = rec[6 + GRID_BYTES..].try_into().unwrap();
        out.push(DatasetRecord {
            biframe: BiFrame {
                left: SensorFrame::from_bytes(Finger::Left, left),
                right: SensorFrame::from_bytes(Finger::Right, right),
                gripper_pos,
                label: Some(label),
            },
            label,
            gripper_pos,
            sample_id,
        });
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    fs::write(path, encode_dataset(records)).map_err(|e| Error::file(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_dataset(&bytes)
}

pub fn class_histogram(records: &[DatasetRecord]) -> [usize; TiltClass::COUNT] {
    let mut h = [0; TiltClass::COUNT];
    for r in records {
        h[r.label.index()] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rep_per_cell() {
        let recs = gen_dataset(&ContactParams::default(), 1).unwrap();
        assert_eq!(recs.len(), 279);
        assert!(class_histogram(&recs).iter().all(|&n| n == 31));
        let ids: Vec<u32> = recs.iter().map(|r| r.sample_id).collect();
        assert_eq!(ids, (0..279).collect::<Vec<_>>());
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(gen_dataset(&ContactParams::default(), 0).is_err());
    }

    #[test]
    fn record_seeds_do_not_depend_on_rep_count() {
        let a = gen_dataset(&ContactParams::default(), 1).unwrap();
        let b = gen_dataset(&ContactParams::default(), 2).unwrap();
        // first rep of each cell is identical
        for (i, r) in a.iter().enumerate() {
            assert_eq!(r.biframe, b[2 * i].biframe);
        }
    }

    #[test]
    fn file_roundtrip_is_quantized_identity() {
        let recs = gen_dataset(&ContactParams::default(), 1).unwrap();
        let bytes = encode_dataset(&recs);
        assert_eq!(bytes.len(), 10 + 279 * 206);
        let back = decode_dataset(&bytes).unwrap();
        let expect: Vec<_> = recs.iter().map(DatasetRecord::quantized).collect();
        assert_eq!(back, expect);
        assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn malformed_files_rejected() {
        let recs = gen_dataset(&ContactParams::default(), 1).unwrap();
        let bytes = encode_dataset(&recs[..3]);
        assert!(decode_dataset(&bytes[..5]).is_err());
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_dataset(&bad_magic).is_err());
        let mut bad_label = bytes.clone();
        bad_label[10] = 9;
        assert!(decode_dataset(&bad_label).is_err());
        let mut bad_version = bytes;
        bad_version[4] = 2;
        assert!(decode_dataset(&bad_version).is_err());
    }

    #[test]
    fn split_rounds_val_up() {
        let recs = gen_dataset(&ContactParams::default(), 1).unwrap();
        // 31 per class: 15 train, 8 val, 8 test
        let s = split_dataset(&recs, 1);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (135, 72, 72));
        let s = split_dataset(&recs[..30], 1);
        // one class with 30: 15 / 8 / 7
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (15, 8, 7));
    }
}
