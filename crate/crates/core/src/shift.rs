//! Time and frequency shift protocols with classification consistency and
//! mean absolute change of the top-class probability.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::patch::{LogMelSpec, Patch, MEL_BANDS, PATCH_FRAMES};
use crate::rng::{derive, ChaCha8Rng};
use crate::tensor::Tensor;

/// The unshifted patch covers `[0.5, 1.5)` s.
pub const ANCHOR_FRAME: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Time,
    Freq,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Time => "time",
            Protocol::Freq => "freq",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Protocol::Time),
            "freq" => Ok(Protocol::Freq),
            other => Err(Error::Argument(format!("unknown protocol `{other}` (expected time or freq)"))),
        }
    }
}

/// Frames needed for the time protocol at magnitude `n_f`.
pub fn time_protocol_frames(n_f: usize) -> usize {
    ANCHOR_FRAME + n_f + PATCH_FRAMES
}

/// Patches starting at frame 50 and at frame `50 + n_f`.
pub fn time_shift_protocol(spec: &LogMelSpec, clip_id: &str, n_f: usize) -> Result<(Patch, Patch)> {
    if spec.frames() < time_protocol_frames(n_f) {
        return Err(Error::Ineligible(format!(
            "{clip_id}: {} frames, time shift by {n_f} needs {}",
            spec.frames(),
            time_protocol_frames(n_f)
        )));
    }
    Ok((spec.window(clip_id, ANCHOR_FRAME)?, spec.window(clip_id, ANCHOR_FRAME + n_f)?))
}

/// Moves every band up by `n_b`, dropping the top `n_b` bands and filling the
/// bottom ones with Gaussian noise matching the mean and standard deviation
/// of the original lowest band.
pub fn freq_shift_protocol(patch: &Patch, n_b: usize, rng: &mut ChaCha8Rng) -> Result<Patch> {
    if n_b >= MEL_BANDS {
        return Err(Error::Argument(format!("band shift {n_b} must be below {MEL_BANDS}")));
    }
    if n_b == 0 {
        return Ok(patch.clone());
    }
    let (mean, std) = band_stats(patch, 0);
    let noise = Normal::new(mean, std).map_err(|e| Error::Argument(format!("noise: {e}")))?;
    let src = patch.values().data();
    let mut out = Vec::with_capacity(src.len());
    for t in 0..PATCH_FRAMES {
        let row = &src[t * MEL_BANDS..(t + 1) * MEL_BANDS];
        out.extend((0..n_b).map(|_| noise.sample(rng) as f32));
        out.extend_from_slice(&row[..MEL_BANDS - n_b]);
    }
    Patch::new(Tensor::new(alloc::vec![PATCH_FRAMES, MEL_BANDS], out)?, patch.clip_id.clone(), patch.start_frame)
}

/// Mean and population standard deviation of band `b` over time.
pub fn band_stats(patch: &Patch, b: usize) -> (f64, f64) {
    let n = PATCH_FRAMES as f64;
    let mean = patch.band(b).map(f64::from).sum::<f64>() / n;
    let var = patch.band(b).map(|v| (f64::from(v) - mean) * (f64::from(v) - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Anything that maps `[1, 101, 96]` inputs to per-class probabilities.
pub trait Scorer {
    fn score(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f32>>>;
}

impl Scorer for Network {
    fn score(&self, inputs: &[Tensor]) -> Result<Vec<Vec<f32>>> {
        self.predict(inputs, 32)
    }
}

/// A clip under evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalClip {
    pub id: String,
    pub spec: LogMelSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub clip_id: String,
    pub top_before: usize,
    pub top_after: usize,
    /// `|p_after - p_before|` for the pre-shift top class.
    pub abs_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub protocol: Protocol,
    pub magnitude: usize,
    pub consistency_pct: f64,
    pub mac: f64,
    pub per_example: Vec<ShiftRecord>,
}

impl ShiftReport {
    pub fn from_records(protocol: Protocol, magnitude: usize, per_example: Vec<ShiftRecord>) -> Result<Self> {
        if per_example.is_empty() {
            return Err(Error::Argument(format!("no eligible clips for {protocol}-{magnitude}")));
        }
        let n = per_example.len() as f64;
        let same = per_example.iter().filter(|r| r.top_before == r.top_after).count() as f64;
        let mac = per_example.iter().map(|r| r.abs_change).sum::<f64>() / n;
        Ok(ShiftReport { protocol, magnitude, consistency_pct: 100.0 * same / n, mac, per_example })
    }
}

/// Index of the largest score; the first one wins ties.
pub fn top_class(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Compares one pair of score vectors.
pub fn compare(clip_id: &str, before: &[f32], after: &[f32]) -> ShiftRecord {
    let top_before = top_class(before);
    ShiftRecord {
        clip_id: clip_id.to_string(),
        top_before,
        top_after: top_class(after),
        abs_change: libm::fabs(f64::from(after[top_before]) - f64::from(before[top_before])),
    }
}

/// Clips long enough for the protocol at every magnitude up to `max_n`.
pub fn eligible(clips: &[EvalClip], protocol: Protocol, max_n: usize) -> Vec<&EvalClip> {
    let need = match protocol {
        Protocol::Time => time_protocol_frames(max_n),
        Protocol::Freq => ANCHOR_FRAME + PATCH_FRAMES,
    };
    clips.iter().filter(|c| c.spec.frames() >= need).collect()
}

/// Builds the original and shifted patch of one clip.
pub fn shifted_pair(clip: &EvalClip, protocol: Protocol, n: usize, seed: u64) -> Result<(Patch, Patch)> {
    match protocol {
        Protocol::Time => time_shift_protocol(&clip.spec, &clip.id, n),
        Protocol::Freq => {
            let original = clip.spec.window(&clip.id, ANCHOR_FRAME)?;
            let mut rng = derive(seed, &format!("freq/{n}/{}", clip.id));
            let shifted = freq_shift_protocol(&original, n, &mut rng)?;
            Ok((original, shifted))
        }
    }
}

/// Runs one protocol at magnitude `n` over every clip. Noise for the
/// frequency protocol comes from a per-clip stream derived from `seed`.
pub fn shift_consistency<S: Scorer + ?Sized>(
    scorer: &S,
    clips: &[EvalClip],
    protocol: Protocol,
    n: usize,
    seed: u64,
) -> Result<ShiftReport> {
    if clips.is_empty() {
        return Err(Error::Argument(format!("no eligible clips for {protocol}-{n}")));
    }
    let mut inputs = Vec::with_capacity(2 * clips.len());
    for clip in clips {
        let (a, b) = shifted_pair(clip, protocol, n, seed)?;
        inputs.push(a.as_input());
        inputs.push(b.as_input());
    }
    let scores = scorer.score(&inputs)?;
    let records = clips
        .iter()
        .zip(scores.chunks(2))
        .map(|(clip, pair)| compare(&clip.id, &pair[0], &pair[1]))
        .collect();
    ShiftReport::from_records(protocol, n, records)
}
