//! Log-mel frontend: Hann-windowed STFT (30 ms window, 10 ms hop), a
//! 96-band Slaney mel filterbank over 0 Hz..Nyquist and a natural-log
//! energy floor.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use shiftpool_core::patch::{LogMelSpec, HOP_SECONDS, MEL_BANDS, WINDOW_SECONDS};
use shiftpool_core::{Error, Result, Tensor};

pub const ENERGY_FLOOR: f64 = 1e-10;
pub const MIN_SAMPLE_RATE: u32 = 8_000;

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    }
}

/// Frame geometry derived from the sample rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftGeometry {
    pub sample_rate: u32,
    pub win: usize,
    pub hop: usize,
    pub n_fft: usize,
}

impl StftGeometry {
    pub fn new(sample_rate: u32) -> Self {
        let sr = f64::from(sample_rate);
        let win = (WINDOW_SECONDS * sr).round() as usize;
        let hop = (HOP_SECONDS * sr).round() as usize;
        StftGeometry { sample_rate, win, hop, n_fft: win.next_power_of_two() }
    }

    /// Frames for `len` samples with `win / 2` zeros padded on both sides.
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Triangular filters with Slaney area normalization, `[bands][bins]`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, bands: usize) -> Self {
        let nyquist = f64::from(sample_rate) / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
        let bin_hz: Vec<f64> =
            (0..n_fft / 2 + 1).map(|k| k as f64 * f64::from(sample_rate) / n_fft as f64).collect();
        let weights = (0..bands)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let norm = 2.0 / (hi - lo);
                bin_hz
                    .iter()
                    .map(|&f| {
                        let rise = (f - lo) / (mid - lo);
                        let fall = (hi - f) / (hi - mid);
                        norm * rise.min(fall).max(0.0)
                    })
                    .collect()
            })
            .collect();
        MelFilterbank { weights, centers_hz: edges[1..=bands].to_vec() }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

/// Reusable log-mel extractor for one sample rate.
pub struct LogMel {
    geometry: StftGeometry,
    window: Vec<f64>,
    bank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(sample_rate: u32) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::Format(format!("sample rate {sample_rate} Hz is below {MIN_SAMPLE_RATE} Hz")));
        }
        let geometry = StftGeometry::new(sample_rate);
        // Periodic Hann window.
        let window = (0..geometry.win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / geometry.win as f64).cos())
            .collect();
        let bank = MelFilterbank::new(sample_rate, geometry.n_fft, MEL_BANDS);
        let fft = FftPlanner::new().plan_fft_forward(geometry.n_fft);
        Ok(LogMel { geometry, window, bank, fft })
    }

    pub fn geometry(&self) -> StftGeometry {
        self.geometry
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// `[frames, 96]` log-mel energies of mono samples in `[-1, 1]`.
    pub fn compute(&self, samples: &[f32]) -> Result<LogMelSpec> {
        if samples.is_empty() {
            return Err(Error::Format("empty audio".into()));
        }
        let g = self.geometry;
        let pad = g.win / 2;
        let frames = g.frames(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); g.n_fft];
        let mut power = vec![0.0f64; g.bins()];
        let mut out = Vec::with_capacity(frames * MEL_BANDS);
        for t in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = (t * g.hop) as isize - pad as isize;
            for (n, w) in self.window.iter().enumerate() {
                let idx = start + n as isize;
                if idx >= 0 && (idx as usize) < samples.len() {
                    buf[n].re = f64::from(samples[idx as usize]) * w;
                }
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filter in &self.bank.weights {
                let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                out.push(e.max(ENERGY_FLOOR).ln() as f32);
            }
        }
        LogMelSpec::new(Tensor::new(vec![frames, MEL_BANDS], out)?, g.sample_rate)
    }
}

/// One-shot convenience wrapper around [`LogMel`].
pub fn logmel(samples: &[f32], sample_rate: u32) -> Result<LogMelSpec> {
    LogMel::new(sample_rate)?.compute(samples)
}
