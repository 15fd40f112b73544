//! Deterministic synthetic sound-event clips. Each class is a time-frequency
//! pattern (stationary tone, repeating linear chirp or a train of short
//! transients) over white background noise, with a random onset per clip.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive;

/// Event level before the noise is added.
const EVENT_RMS: f64 = 0.1;
const PEAK_LIMIT: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    /// Sinusoid with its frequency drawn uniformly from `[lo_hz, hi_hz]`.
    Tone { lo_hz: f64, hi_hz: f64 },
    /// Linear sweeps from `start_hz` to `end_hz`, restarting every `period_s`.
    Chirp { start_hz: f64, end_hz: f64, period_s: f64 },
    /// Exponentially decaying bursts at `center_hz`, `rate_hz` per second.
    TransientTrain { rate_hz: f64, center_hz: f64, decay_s: f64 },
}

impl Recipe {
    fn validate(&self, nyquist: f64, errs: &mut Vec<String>) {
        let in_band = |f: f64| f > 0.0 && f < nyquist;
        match *self {
            Recipe::Tone { lo_hz, hi_hz } => {
                if !(in_band(lo_hz) && in_band(hi_hz) && lo_hz <= hi_hz) {
                    errs.push(format!("tone range [{lo_hz}, {hi_hz}] Hz is invalid"));
                }
            }
            Recipe::Chirp { start_hz, end_hz, period_s } => {
                if !(in_band(start_hz) && in_band(end_hz) && period_s > 0.0) {
                    errs.push(format!("chirp {start_hz}->{end_hz} Hz every {period_s} s is invalid"));
                }
            }
            Recipe::TransientTrain { rate_hz, center_hz, decay_s } => {
                if !(rate_hz > 0.0 && in_band(center_hz) && decay_s > 0.0) {
                    errs.push(format!("transient train at {rate_hz}/s, {center_hz} Hz is invalid"));
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// One recipe per class.
    pub recipes: Vec<Recipe>,
    pub noise_snr_db: f64,
    /// Event onsets are uniform in `[0, onset_jitter_s]`.
    pub onset_jitter_s: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Four classes: a tone, an upward chirp and two transient trains that
    /// differ only in rate.
    pub fn four_class(clips_per_class: usize, seed: u64) -> Self {
        SynthSpec {
            clips_per_class,
            clip_seconds: 2.0,
            sample_rate: 16_000,
            recipes: alloc::vec![
                Recipe::Tone { lo_hz: 600.0, hi_hz: 900.0 },
                Recipe::Chirp { start_hz: 600.0, end_hz: 2400.0, period_s: 0.25 },
                Recipe::TransientTrain { rate_hz: 8.0, center_hz: 1500.0, decay_s: 0.01 },
                Recipe::TransientTrain { rate_hz: 12.0, center_hz: 1500.0, decay_s: 0.01 },
            ],
            noise_snr_db: 20.0,
            onset_jitter_s: 0.15,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.recipes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.recipes.is_empty() {
            errs.push("at least one class recipe is required".into());
        }
        if self.clips_per_class == 0 {
            errs.push("clips_per_class must be positive".into());
        }
        if !(self.clip_seconds >= 2.0) {
            errs.push(format!("clip_seconds must be at least 2.0, got {}", self.clip_seconds));
        }
        if self.sample_rate < 8_000 {
            errs.push(format!("sample_rate must be at least 8000 Hz, got {}", self.sample_rate));
        }
        if !self.noise_snr_db.is_finite() {
            errs.push("noise_snr_db must be finite".into());
        }
        if !(self.onset_jitter_s >= 0.0 && self.onset_jitter_s < self.clip_seconds) {
            errs.push(format!("onset_jitter_s {} must lie in [0, clip_seconds)", self.onset_jitter_s));
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for r in &self.recipes {
            r.validate(nyquist, &mut errs);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub onset_s: f64,
    pub samples: Vec<f32>,
}

/// Sizes of the train/val/eval parts of `n` clips (70/10/20).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

pub fn clip_id(class: usize, index: usize) -> String {
    format!("c{class}_{index:04}")
}

/// All clips, class by class, each class split 70/10/20 in index order.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let (train, val, _) = split_sizes(spec.clips_per_class);
    let mut clips = Vec::with_capacity(spec.num_classes() * spec.clips_per_class);
    for class in 0..spec.num_classes() {
        for index in 0..spec.clips_per_class {
            let split = if index < train {
                Split::Train
            } else if index < train + val {
                Split::Val
            } else {
                Split::Eval
            };
            clips.push(render_clip(spec, class, index, split));
        }
    }
    Ok(clips)
}

fn render_clip(spec: &SynthSpec, class: usize, index: usize, split: Split) -> SynthClip {
    let id = clip_id(class, index);
    let mut rng = derive(spec.seed, &id);
    let sr = f64::from(spec.sample_rate);
    let len = libm::round(spec.clip_seconds * sr) as usize;
    let onset_s = rng.random::<f64>() * spec.onset_jitter_s;
    let onset = libm::round(onset_s * sr) as usize;

    let mut event = alloc::vec![0.0f64; len];
    render_event(&spec.recipes[class], &mut event[onset..], sr, &mut rng);
    let active = &event[onset..];
    let rms = libm::sqrt(active.iter().map(|v| v * v).sum::<f64>() / active.len().max(1) as f64);
    let gain = if rms > 0.0 { EVENT_RMS / rms } else { 0.0 };
    let noise_rms = EVENT_RMS / libm::pow(10.0, spec.noise_snr_db / 20.0);
    let noise = Normal::new(0.0, noise_rms).expect("finite noise level");
    let mut mix: Vec<f64> = event.iter().map(|&e| gain * e + noise.sample(&mut rng)).collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    if peak > PEAK_LIMIT {
        mix.iter_mut().for_each(|v| *v *= PEAK_LIMIT / peak);
    }
    SynthClip { id, label: class, split, onset_s: onset as f64 / sr, samples: mix.into_iter().map(|v| v as f32).collect() }
}

fn render_event(recipe: &Recipe, out: &mut [f64], sr: f64, rng: &mut impl Rng) {
    match *recipe {
        Recipe::Tone { lo_hz, hi_hz } => {
            let f = lo_hz + rng.random::<f64>() * (hi_hz - lo_hz);
            let phase = rng.random::<f64>() * 2.0 * PI;
            for (n, v) in out.iter_mut().enumerate() {
                *v = libm::sin(2.0 * PI * f * n as f64 / sr + phase);
            }
        }
        Recipe::Chirp { start_hz, end_hz, period_s } => {
            let slope = (end_hz - start_hz) / period_s;
            for (n, v) in out.iter_mut().enumerate() {
                let t = libm::fmod(n as f64 / sr, period_s);
                *v = libm::sin(2.0 * PI * (start_hz * t + 0.5 * slope * t * t));
            }
        }
        Recipe::TransientTrain { rate_hz, center_hz, decay_s } => {
            let period = sr / rate_hz;
            let mut start = 0.0;
            while (start as usize) < out.len() {
                let phase = rng.random::<f64>() * 2.0 * PI;
                let s = start as usize;
                let span = ((8.0 * decay_s * sr) as usize).min(out.len() - s);
                for k in 0..span {
                    let t = k as f64 / sr;
                    out[s + k] += libm::exp(-t / decay_s) * libm::sin(2.0 * PI * center_hz * t + phase);
                }
                start += period;
            }
        }
    }
}
