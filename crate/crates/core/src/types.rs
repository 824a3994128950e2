//! Core data containers: multichannel audio, complex spectrograms and
//! per-bin class affiliations (masks).

use num_complex::Complex;

use crate::error::{bail, Result};
use crate::scalar::{czero, Scalar};

/// Multichannel time-domain signal. Samples are stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip<T> {
    pub sample_rate: u32,
    channels: usize,
    samples: Vec<T>,
}

impl<T: Scalar> AudioClip<T> {
    pub fn new(sample_rate: u32, channels: Vec<Vec<T>>) -> Result<Self> {
        if sample_rate == 0 {
            bail!(InvalidArgument, "sample rate must be positive");
        }
        if channels.is_empty() {
            bail!(InvalidArgument, "clip needs at least one channel");
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            bail!(Shape, "all channels must have equal length");
        }
        let n = channels.len();
        Ok(Self {
            sample_rate,
            channels: n,
            samples: channels.into_iter().flatten().collect(),
        })
    }

    pub fn zeros(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels,
            samples: vec![T::zero(); channels * len],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.len();
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.len();
        &mut self.samples[c * n..(c + 1) * n]
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    /// Selects a subset of channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Self {
        let chans = channels.iter().map(|&c| self.channel(c).to_vec()).collect();
        Self::new(self.sample_rate, chans).expect("valid selection")
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> AudioClip<U> {
        AudioClip {
            sample_rate: self.sample_rate,
            channels: self.channels,
            samples: self.samples.iter().map(|&s| f(s)).collect(),
        }
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }
}

/// Complex STFT tensor with dims (channels D, frames T, frequencies F).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T> {
    channels: usize,
    frames: usize,
    bins: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            data: vec![czero(); channels * frames * bins],
        }
    }

    pub fn from_vec(channels: usize, frames: usize, bins: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != channels * frames * bins {
            bail!(
                Shape,
                "spectrogram data has {} values, expected {channels}x{frames}x{bins}",
                data.len()
            );
        }
        Ok(Self {
            channels,
            frames,
            bins,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn idx(&self, d: usize, t: usize, f: usize) -> usize {
        (d * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, d: usize, t: usize, f: usize) -> Complex<T> {
        self.data[self.idx(d, t, f)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, t: usize, f: usize, v: Complex<T>) {
        let i = self.idx(d, t, f);
        self.data[i] = v;
    }

    /// Observation vector `y_tf` across channels.
    pub fn vector(&self, t: usize, f: usize) -> Vec<Complex<T>> {
        (0..self.channels).map(|d| self.get(d, t, f)).collect()
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn channel(&self, d: usize) -> &[Complex<T>] {
        let n = self.frames * self.bins;
        &self.data[d * n..(d + 1) * n]
    }

    pub fn select_channels(&self, channels: &[usize]) -> Self {
        let data = channels.iter().flat_map(|&c| self.channel(c).iter().copied()).collect();
        Self::from_vec(channels.len(), self.frames, self.bins, data).expect("valid selection")
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z = *z * s);
        out
    }

    /// Elementwise sum of two spectrograms of identical shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.channels, self.frames, self.bins) != (other.channels, other.frames, other.bins) {
            bail!(Shape, "cannot add spectrograms of different shapes");
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::from_vec(self.channels, self.frames, self.bins, data)
    }
}

/// Real tensor of dims (classes K, frames T, frequencies F), values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAffiliations<T> {
    classes: usize,
    frames: usize,
    bins: usize,
    data: Vec<T>,
}

impl<T: Scalar> ClassAffiliations<T> {
    pub fn from_vec(classes: usize, frames: usize, bins: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != classes * frames * bins {
            bail!(
                Shape,
                "affiliation data has {} values, expected {classes}x{frames}x{bins}",
                data.len()
            );
        }
        Ok(Self {
            classes,
            frames,
            bins,
            data,
        })
    }

    /// Uniform affiliations `1 / K`.
    pub fn uniform(classes: usize, frames: usize, bins: usize) -> Self {
        let v = T::one() / T::of_usize(classes);
        Self {
            classes,
            frames,
            bins,
            data: vec![v; classes * frames * bins],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn idx(&self, k: usize, t: usize, f: usize) -> usize {
        (k * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, k: usize, t: usize, f: usize) -> T {
        self.data[self.idx(k, t, f)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, t: usize, f: usize, v: T) {
        let i = self.idx(k, t, f);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Mask of one class, laid out (T, F).
    pub fn class(&self, k: usize) -> &[T] {
        let n = self.frames * self.bins;
        &self.data[k * n..(k + 1) * n]
    }

    /// Largest deviation of `sum_k gamma_ktf` from one.
    pub fn normalization_defect(&self) -> T {
        let mut worst = T::zero();
        for t in 0..self.frames {
            for f in 0..self.bins {
                let s: T = (0..self.classes).map(|k| self.get(k, t, f)).sum();
                worst = worst.max((s - T::one()).abs());
            }
        }
        worst
    }

    /// Divides every (t, f) column by its class sum plus `eps`.
    pub fn renormalize(&mut self, eps: T) {
        for t in 0..self.frames {
            for f in 0..self.bins {
                let s: T = (0..self.classes).map(|k| self.get(k, t, f)).sum::<T>() + eps;
                for k in 0..self.classes {
                    let v = self.get(k, t, f) / s;
                    self.set(k, t, f, v);
                }
            }
        }
    }

    /// Reorders classes per frequency: output class `k` at bin `f` takes
    /// input class `perm[f][k]`.
    pub fn permuted(&self, perm: &[Vec<usize>]) -> Result<Self> {
        if perm.len() != self.bins {
            bail!(Shape, "permutation map covers {} bins, expected {}", perm.len(), self.bins);
        }
        let mut out = self.clone();
        for (f, p) in perm.iter().enumerate() {
            check_permutation(p, self.classes)?;
            for k in 0..self.classes {
                for t in 0..self.frames {
                    out.set(k, t, f, self.get(p[k], t, f));
                }
            }
        }
        Ok(out)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ClassAffiliations<U> {
        ClassAffiliations {
            classes: self.classes,
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub(crate) fn check_permutation(p: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if p.len() != k {
        bail!(InvalidArgument, "permutation {p:?} has wrong length, expected {k}");
    }
    for &i in p {
        if i >= k || seen[i] {
            bail!(InvalidArgument, "malformed permutation {p:?}");
        }
        seen[i] = true;
    }
    Ok(())
}
