//! Multichannel STFT analysis and overlap-add synthesis.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::{czero, Scalar};
use crate::types::{AudioClip, ComplexSpectrogram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub window_size: usize,
    pub shift: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 512-point FFT, 25 ms Hann frames, 10 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 512,
            window_size: 400,
            shift: 160,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.shift > self.window_size || self.window_size > self.fft_size {
            bail!(
                Config,
                "STFT requires 0 < shift <= window_size <= fft_size, got {}/{}/{}",
                self.shift,
                self.window_size,
                self.fft_size
            );
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            1 + (len - self.window_size) / self.shift
        }
    }

    /// Number of samples produced by [`istft`] for `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.shift + self.window_size
        }
    }

    fn pad(&self) -> usize {
        (self.fft_size - self.window_size) / 2
    }

    /// Periodic Hann analysis window.
    pub fn analysis_window<T: Scalar>(&self) -> Vec<T> {
        let n = self.window_size;
        (0..n)
            .map(|i| {
                let s = (T::PI() * T::of_usize(i) / T::of_usize(n)).sin();
                s * s
            })
            .collect()
    }

    /// Synthesis window that is biorthogonal to the analysis window for this
    /// shift, so that overlap-add reconstructs the interior exactly.
    pub fn synthesis_window<T: Scalar>(&self) -> Vec<T> {
        let w = self.analysis_window::<T>();
        let n = self.window_size;
        let hop = self.shift;
        (0..n)
            .map(|i| {
                let mut denom = T::zero();
                // every frame offset congruent to i modulo the hop overlaps here
                let mut j = i % hop;
                while j < n {
                    denom += w[j] * w[j];
                    j += hop;
                }
                if denom > T::of(1e-12) {
                    w[i] / denom
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

/// Forward STFT of every channel.
pub fn stft<T: Scalar>(clip: &AudioClip<T>, cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    cfg.validate()?;
    let len = clip.len();
    if len < cfg.window_size {
        bail!(
            InvalidArgument,
            "clip of {len} samples is shorter than one {}-sample window",
            cfg.window_size
        );
    }
    let frames = cfg.frames_for(len);
    let bins = cfg.bins();
    let d = clip.num_channels();
    let window = cfg.analysis_window::<T>();
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.fft_size);
    let mut out = ComplexSpectrogram::zeros(d, frames, bins);
    let mut buf = vec![czero::<T>(); cfg.fft_size];
    let pad = cfg.pad();
    for c in 0..d {
        let x = clip.channel(c);
        for t in 0..frames {
            buf.iter_mut().for_each(|b| *b = czero());
            let start = t * cfg.shift;
            for (i, w) in window.iter().enumerate() {
                buf[pad + i] = Complex::new(x[start + i] * *w, T::zero());
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out.set(c, t, f, buf[f]);
            }
        }
    }
    Ok(out)
}

/// Inverse STFT by weighted overlap-add.
pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>, cfg: &StftConfig, sample_rate: u32) -> Result<AudioClip<T>> {
    cfg.validate()?;
    if spec.bins() != cfg.bins() {
        bail!(
            Shape,
            "spectrogram has {} bins but fft size {} implies {}",
            spec.bins(),
            cfg.fft_size,
            cfg.bins()
        );
    }
    let n = cfg.fft_size;
    let frames = spec.frames();
    let len = cfg.signal_len(frames);
    let synth = cfg.synthesis_window::<T>();
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let scale = T::one() / T::of_usize(n);
    let pad = cfg.pad();
    let mut buf = vec![czero::<T>(); n];
    let mut out = AudioClip::zeros(sample_rate, spec.channels(), len);
    for c in 0..spec.channels() {
        let y = out.channel_mut(c);
        for t in 0..frames {
            for f in 0..n {
                buf[f] = if f < cfg.bins() {
                    spec.get(c, t, f)
                } else {
                    spec.get(c, t, n - f).conj()
                };
            }
            // DC and Nyquist bins of a real signal are real.
            buf[0].im = T::zero();
            if n % 2 == 0 {
                buf[n / 2].im = T::zero();
            }
            ifft.process(&mut buf);
            let start = t * cfg.shift;
            for (i, w) in synth.iter().enumerate() {
                y[start + i] += buf[pad + i].re * scale * *w;
            }
        }
    }
    Ok(out)
}
