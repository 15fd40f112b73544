//! Log-mel spectrogram containers and fixed-size patch extraction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const MEL_BANDS: usize = 96;
pub const PATCH_FRAMES: usize = 101;
/// 50% overlap between consecutive patches.
pub const PATCH_HOP: usize = 50;
pub const HOP_SECONDS: f64 = 0.010;
pub const WINDOW_SECONDS: f64 = 0.030;

/// Log-mel spectrogram of one clip, `[frames, 96]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpec {
    values: Tensor,
    pub sample_rate: u32,
}

impl LogMelSpec {
    pub fn new(values: Tensor, sample_rate: u32) -> Result<Self> {
        match *values.shape() {
            [_, MEL_BANDS] => {}
            _ => return Err(dim_err("LogMelSpec", format!("expected [frames, {MEL_BANDS}], got {:?}", values.shape()))),
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("log-mel values must be finite".into()));
        }
        Ok(LogMelSpec { values, sample_rate })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values.data()[t * MEL_BANDS..(t + 1) * MEL_BANDS]
    }

    /// Frames `[start, start + 101)` as a patch.
    pub fn window(&self, clip_id: &str, start: usize) -> Result<Patch> {
        if start + PATCH_FRAMES > self.frames() {
            return Err(Error::Ineligible(format!(
                "{clip_id}: window [{start}, {}) exceeds {} frames",
                start + PATCH_FRAMES,
                self.frames()
            )));
        }
        let data = self.values.data()[start * MEL_BANDS..(start + PATCH_FRAMES) * MEL_BANDS].to_vec();
        Patch::new(Tensor::new(alloc::vec![PATCH_FRAMES, MEL_BANDS], data)?, clip_id.into(), start)
    }
}

/// One `101 x 96` network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    values: Tensor,
    pub clip_id: String,
    pub start_frame: usize,
}

impl Patch {
    pub fn new(values: Tensor, clip_id: String, start_frame: usize) -> Result<Self> {
        if values.shape() != [PATCH_FRAMES, MEL_BANDS] {
            return Err(dim_err("Patch", format!("expected [{PATCH_FRAMES}, {MEL_BANDS}], got {:?}", values.shape())));
        }
        Ok(Patch { values, clip_id, start_frame })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn band(&self, b: usize) -> impl Iterator<Item = f32> + '_ {
        (0..PATCH_FRAMES).map(move |t| self.values.data()[t * MEL_BANDS + b])
    }

    /// `[1, 101, 96]` view for batching into `[N, 1, 101, 96]`.
    pub fn as_input(&self) -> Tensor {
        self.values.clone().reshape(&[1, PATCH_FRAMES, MEL_BANDS]).expect("patch shape is fixed")
    }
}

/// Start frames of the 50%-overlap windows of a clip with `frames >= 101`
/// frames; a trailing partial window is anchored to the clip end.
pub fn patch_starts(frames: usize) -> Vec<usize> {
    if frames < PATCH_FRAMES {
        return alloc::vec![0];
    }
    let last = frames - PATCH_FRAMES;
    let mut starts: Vec<usize> = (0..=last).step_by(PATCH_HOP).collect();
    if *starts.last().expect("non-empty") != last {
        starts.push(last);
    }
    starts
}

/// Splits a clip into `101 x 96` patches. Clips shorter than 101 frames are
/// tiled by repeating their frames cyclically.
pub fn extract_patches(spec: &LogMelSpec, clip_id: &str) -> Vec<Patch> {
    let frames = spec.frames();
    if frames == 0 {
        return Vec::new();
    }
    if frames < PATCH_FRAMES {
        let mut data = Vec::with_capacity(PATCH_FRAMES * MEL_BANDS);
        for t in 0..PATCH_FRAMES {
            data.extend_from_slice(spec.frame(t % frames));
        }
        let values = Tensor::new(alloc::vec![PATCH_FRAMES, MEL_BANDS], data).expect("fixed shape");
        return alloc::vec![Patch { values, clip_id: clip_id.into(), start_frame: 0 }];
    }
    patch_starts(frames)
        .into_iter()
        .map(|s| spec.window(clip_id, s).expect("start within clip"))
        .collect()
}
