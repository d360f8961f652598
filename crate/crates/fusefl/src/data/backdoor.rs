//! Backdoor injection: label-indexed trigger patterns stamped into images.
//!
//! The pattern library is a fixed set of per-class binary masks derived from
//! a frozen seed, so the same class always gets the same trigger positions
//! across runs and resolutions. Stamped pixels take a per-sample random
//! intensity, mirroring shapes drawn in random colors.

use std::collections::BTreeSet;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, STREAM_BACKDOOR};

/// Frozen library seed; changing it changes every trigger pattern.
const PATTERN_LIBRARY_SEED: u64 = 0x0BAD_5EED_0000_0001;

#[derive(Debug, Clone)]
pub struct BackdoorConfig {
    pub target_clients: BTreeSet<usize>,
    pub patch_side: usize,
    pub intensity_range: (f64, f64),
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        BackdoorConfig {
            target_clients: BTreeSet::new(),
            patch_side: 10,
            intensity_range: (0.5, 1.0),
        }
    }
}

/// The per-class trigger masks for a `patch_side` x `patch_side` window.
/// Deterministic; distinct and non-empty for every class.
pub fn class_patterns(num_classes: usize, patch_side: usize) -> Vec<Vec<bool>> {
    let area = patch_side * patch_side;
    let mut patterns: Vec<Vec<bool>> = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        for attempt in 0..u64::MAX {
            let mut rng = rng_from(derive_seed(
                PATTERN_LIBRARY_SEED,
                STREAM_BACKDOOR,
                class as u64,
                attempt,
            ));
            let mask: Vec<bool> = (0..area).map(|_| rng.random::<bool>()).collect();
            if area > 0 && !mask.iter().any(|&b| b) {
                continue;
            }
            if patterns.iter().any(|p| *p == mask) {
                continue;
            }
            patterns.push(mask);
            break;
        }
    }
    patterns
}

/// Stamp each sample with its class's trigger in the top-left window.
/// Returns a modified copy; the input dataset is untouched.
pub fn inject_backdoor(ds: &Dataset, bd: &BackdoorConfig, seed: u64) -> Result<Dataset> {
    let (channels, height, width) = match ds.inputs.shape() {
        [_, c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::Input(format!(
                "backdoor needs image-shaped inputs [N,C,H,W], got {other:?}"
            )))
        }
    };
    if bd.patch_side > height || bd.patch_side > width {
        return Err(Error::Config(format!(
            "patch side {} exceeds image size {height}x{width}",
            bd.patch_side
        )));
    }
    let (lo, hi) = bd.intensity_range;
    if !(lo <= hi) {
        return Err(Error::Config(format!(
            "intensity range [{lo}, {hi}] is empty"
        )));
    }
    let mut out = ds.clone();
    if bd.patch_side == 0 {
        return Ok(out);
    }
    let patterns = class_patterns(ds.num_classes, bd.patch_side);
    let mut rng = rng_from(derive_seed(seed, STREAM_BACKDOOR, 0, 0));
    let stride = out.inputs.sample_len();
    for i in 0..out.labels.len() {
        let intensity = if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        };
        let mask = &patterns[out.labels[i]];
        let base = i * stride;
        let values = out.inputs.values_mut();
        for ch in 0..channels {
            for py in 0..bd.patch_side {
                for px in 0..bd.patch_side {
                    if mask[py * bd.patch_side + px] {
                        values[base + ch * height * width + py * width + px] = intensity;
                    }
                }
            }
        }
    }
    Ok(out)
}
