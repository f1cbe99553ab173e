//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`. The plain `*_json` functions carry the logic and are what
//! the native tests exercise.

use serde_json::json;
use wasm_bindgen::prelude::*;

use teletact::render::{render_downsized, render_pattern};
use teletact::resample::kernel_weight;
use teletact::sim::{render_band_pair, ContactParams};
use teletact::tactile::{BiFrame, TiltClass};

fn contact(tilt_deg: f64, gripper_pos: u8, noise: f64, seed: u32) -> Result<BiFrame, String> {
    let params = ContactParams {
        noise_sigma: noise.max(0.0),
        ..ContactParams::default()
    };
    render_band_pair(tilt_deg, gripper_pos, &params, u64::from(seed)).map_err(|e| e.to_string())
}

pub fn contact_frames_json(tilt_deg: f64, gripper_pos: u8, noise: f64, seed: u32) -> Result<String, String> {
    let bf = contact(tilt_deg, gripper_pos, noise, seed)?;
    let flat = |g: &[[f64; 10]; 10]| g.iter().flatten().copied().collect::<Vec<f64>>();
    Ok(json!({
        "left": flat(&bf.left.forces),
        "right": flat(&bf.right.forces),
    })
    .to_string())
}

/// Electrode output for a contact. Pattern mode draws the line of the
/// nearest tilt class, standing in for a perfect classifier.
pub fn electrodes_json(
    tilt_deg: f64,
    gripper_pos: u8,
    noise: f64,
    seed: u32,
    mode: &str,
) -> Result<String, String> {
    let bf = contact(tilt_deg, gripper_pos, noise, seed)?;
    let (thumb, index, class) = match mode {
        "downsize" => {
            let (t, i) = render_downsized(&bf);
            (t, i, None)
        }
        "pattern" => {
            let c = TiltClass::nearest(tilt_deg);
            let (t, i) = render_pattern(&bf, c);
            (t, i, Some(c.degrees()))
        }
        other => return Err(format!("unknown mode {other:?} (downsize|pattern)")),
    };
    let flat = |g: &[[u8; 4]; 5]| g.iter().flatten().copied().collect::<Vec<u8>>();
    Ok(json!({
        "thumb": flat(&thumb.intensities),
        "index": flat(&index.intensities),
        "class": class,
    })
    .to_string())
}

/// Cubic convolution kernel sampled on [-2, 2].
pub fn kernel_curve_json(a: f64, samples: usize) -> String {
    let n = samples.clamp(2, 4096);
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
            [t, kernel_weight(t, a)]
        })
        .collect();
    json!(pts).to_string()
}

#[wasm_bindgen]
pub fn contact_frames(tilt_deg: f64, gripper_pos: u8, noise: f64, seed: u32) -> Result<String, JsValue> {
    contact_frames_json(tilt_deg, gripper_pos, noise, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn electrodes(tilt_deg: f64, gripper_pos: u8, noise: f64, seed: u32, mode: &str) -> Result<String, JsValue> {
    electrodes_json(tilt_deg, gripper_pos, noise, seed, mode).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kernel_curve(a: f64, samples: usize) -> String {
    kernel_curve_json(a, samples)
}
