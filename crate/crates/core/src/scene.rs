//! Synthetic multichannel scenes with a known speech/noise decomposition and
//! the SNR bookkeeping used to score beamformers on them.
//!
//! Microphones sit on a uniform linear array along the x axis, centred on
//! the origin. A far-field plane wave from azimuth `theta` (measured from the
//! array axis) reaches microphone `d` at position `p_d` with delay
//! `tau_d = -p_d cos(theta) / c`.

use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::beamformer::BeamformerWeights;
use crate::error::{bail, Result};
use crate::kvconfig::{KeyValues, Range};
use crate::manifest::{format_manifest, ManifestRecord};
use crate::scalar::Scalar;
use crate::stft::{stft, StftConfig};
use crate::types::{AudioClip, ClassAffiliations, ComplexSpectrogram};
use crate::wav::{read_wav, write_wav, WavEncoding};

pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceModel {
    /// Harmonic and noise bursts separated by silence.
    Surrogate,
    /// First channel of a WAV file, looped or trimmed to the scene length.
    Wav { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Propagation {
    Anechoic {
        azimuth_deg: f64,
    },
    /// Direct path plus an exponentially decaying random tail per channel.
    Rir {
        azimuth_deg: f64,
        t60: f64,
        /// Direct-to-reverberant energy ratio.
        #[serde(default = "default_drr")]
        drr_db: f64,
    },
}

fn default_drr() -> f64 {
    3.0
}

impl Propagation {
    pub fn azimuth_deg(&self) -> f64 {
        match *self {
            Propagation::Anechoic { azimuth_deg } | Propagation::Rir { azimuth_deg, .. } => azimuth_deg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Independent Gaussian noise per channel.
    White,
    /// Sum of plane waves from isotropically distributed directions.
    Diffuse { waves: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub channels: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub spacing_m: f64,
    pub source: SourceModel,
    pub propagation: Propagation,
    pub noise: NoiseModel,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            channels: 6,
            duration_secs: 3.0,
            sample_rate: 16000,
            spacing_m: 0.04,
            source: SourceModel::Surrogate,
            propagation: Propagation::Anechoic { azimuth_deg: 60.0 },
            noise: NoiseModel::Diffuse { waves: 64 },
            snr_db: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            bail!(Config, "a scene needs at least two microphones, got {}", self.channels);
        }
        if !self.snr_db.is_finite() {
            bail!(Config, "requested SNR must be finite, got {}", self.snr_db);
        }
        if !(self.duration_secs > 0.0) || self.sample_rate == 0 {
            bail!(Config, "duration and sample rate must be positive");
        }
        if !(self.spacing_m > 0.0) {
            bail!(Config, "microphone spacing must be positive");
        }
        if let Propagation::Rir { t60, .. } = self.propagation {
            if !(0.0..=0.7).contains(&t60) {
                bail!(Config, "T60 must lie in [0, 0.7] s, got {t60}");
            }
        }
        if let NoiseModel::Diffuse { waves } = self.noise {
            if waves == 0 {
                bail!(Config, "diffuse noise needs at least one plane wave");
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.duration_secs * f64::from(self.sample_rate)).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Microphone x coordinates in metres.
    pub fn positions(&self) -> Vec<f64> {
        let mid = (self.channels as f64 - 1.0) / 2.0;
        (0..self.channels).map(|d| (d as f64 - mid) * self.spacing_m).collect()
    }

    /// Plane-wave delays in seconds for a direction with cosine `cos_theta`
    /// relative to the array axis.
    pub fn delays(&self, cos_theta: f64) -> Vec<f64> {
        self.positions().iter().map(|p| -p * cos_theta / SPEED_OF_SOUND).collect()
    }
}

/// A generated scene. `mixture = speech + noise` sample for sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub mixture: AudioClip<f64>,
    /// Source image at every microphone, after propagation.
    pub speech: AudioClip<f64>,
    pub noise: AudioClip<f64>,
}

impl SceneBundle {
    /// Binary oracle masks `[speech, noise]` from channel 0: a bin belongs to
    /// speech when `|X|^2 > |N|^2`.
    pub fn oracle_masks(&self, cfg: &StftConfig) -> Result<ClassAffiliations<f64>> {
        let x = stft(&self.speech.select(&[0]), cfg)?;
        let n = stft(&self.noise.select(&[0]), cfg)?;
        oracle_masks(&x, &n)
    }
}

/// Binary masks `[speech, noise]` comparing channel 0 of two spectrograms.
pub fn oracle_masks<T: Scalar>(speech: &ComplexSpectrogram<T>, noise: &ComplexSpectrogram<T>) -> Result<ClassAffiliations<T>> {
    let (frames, bins) = (speech.frames(), speech.bins());
    if noise.frames() != frames || noise.bins() != bins {
        bail!(Shape, "speech and noise spectrograms differ in size");
    }
    let mut m = ClassAffiliations::from_vec(2, frames, bins, vec![T::zero(); 2 * frames * bins])?;
    for t in 0..frames {
        for f in 0..bins {
            let s = speech.get(0, t, f).norm_sqr() > noise.get(0, t, f).norm_sqr();
            m.set(usize::from(!s), t, f, T::one());
        }
    }
    Ok(m)
}

fn fft_real(x: &[f64], n: usize) -> Vec<C64> {
    let mut buf: Vec<C64> = (0..n).map(|i| C64::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Inverse FFT keeping the first `len` real samples.
fn ifft_real(mut spec: Vec<C64>, len: usize) -> Vec<f64> {
    let n = spec.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().take(len).map(|z| z.re / n as f64).collect()
}

/// Angular frequency of FFT bin `k` for an `n`-point transform.
fn omega(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * fs * k / n as f64
}

/// Delays `x` by a (fractional) number of seconds per channel, circularly
/// over `x.len()` samples.
pub fn fractional_delay(x: &[f64], delays: &[f64], fs: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let s = fft_real(x, n);
    delays
        .iter()
        .map(|&tau| {
            let y: Vec<C64> = s.iter().enumerate().map(|(k, z)| z * C64::from_polar(1.0, -omega(k, n, fs) * tau)).collect();
            ifft_real(y, n)
        })
        .collect()
}

fn propagate(spec: &SceneSpec, src: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let fs = f64::from(spec.sample_rate);
    let cos = spec.propagation.azimuth_deg().to_radians().cos();
    let delays = spec.delays(cos);
    match spec.propagation {
        Propagation::Anechoic { .. } => fractional_delay(src, &delays, fs),
        Propagation::Rir { t60, drr_db, .. } => {
            let n = src.len();
            let tail_len = (t60 * fs).ceil() as usize;
            if tail_len == 0 {
                return fractional_delay(src, &delays, fs);
            }
            let m = n + tail_len + 64;
            let s = fft_real(src, m);
            let onset = (0.002 * fs) as usize;
            let decay = 3.0 * std::f64::consts::LN_10 / t60;
            let tail_energy = 10f64.powf(-drr_db / 10.0);
            delays
                .iter()
                .map(|&tau| {
                    let mut tail = vec![0.0; tail_len];
                    let mut energy = 0.0;
                    for (i, v) in tail.iter_mut().enumerate().skip(onset) {
                        let g: f64 = StandardNormal.sample(rng);
                        *v = g * (-decay * i as f64 / fs).exp();
                        energy += *v * *v;
                    }
                    let gain = if energy > 0.0 { (tail_energy / energy).sqrt() } else { 0.0 };
                    tail.iter_mut().for_each(|v| *v *= gain);
                    let h = fft_real(&tail, m);
                    let y: Vec<C64> = s
                        .iter()
                        .zip(&h)
                        .enumerate()
                        .map(|(k, (z, hk))| {
                            let direct = C64::from_polar(1.0, -omega(k, m, fs) * tau);
                            z * (direct + hk * C64::from_polar(1.0, -omega(k, m, fs) * tau))
                        })
                        .collect();
                    ifft_real(y, n)
                })
                .collect()
        }
    }
}

fn white_noise(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = spec.len();
    (0..spec.channels)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Level of the spatially white sensor noise added to the diffuse field.
pub const SENSOR_NOISE_DB: f64 = -30.0;

fn diffuse_noise(spec: &SceneSpec, waves: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = spec.len();
    let fs = f64::from(spec.sample_rate);
    let half = n / 2;
    let mut acc = vec![vec![C64::new(0.0, 0.0); n]; spec.channels];
    let pos = spec.positions();
    let norm = 1.0 / (waves as f64).sqrt();
    for _ in 0..waves {
        // cosine of the angle to the array axis, uniform for isotropic 3-D
        let cos: f64 = rng.random_range(-1.0..1.0);
        let w: Vec<C64> = (0..=half)
            .map(|k| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                if k == 0 || (n % 2 == 0 && k == half) {
                    C64::new(re, 0.0)
                } else {
                    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                }
            })
            .collect();
        for (d, &p) in pos.iter().enumerate() {
            let tau = -p * cos / SPEED_OF_SOUND;
            for (k, wk) in w.iter().enumerate() {
                acc[d][k] += wk * C64::from_polar(norm, -omega(k, n, fs) * tau);
            }
        }
    }
    let mut field: Vec<Vec<f64>> = acc
        .into_iter()
        .map(|mut a| {
            // Hermitian completion so the inverse transform is real.
            for k in half + 1..n {
                a[k] = a[n - k].conj();
            }
            if n % 2 == 0 && half > 0 {
                a[half] = C64::new(a[half].re, 0.0);
            }
            ifft_real(a, n)
        })
        .collect();
    // uncorrelated microphone self-noise
    let power = field.iter().flatten().map(|v| v * v).sum::<f64>() / (n * spec.channels).max(1) as f64;
    let sigma = (power * 10f64.powf(SENSOR_NOISE_DB / 10.0)).sqrt();
    for ch in &mut field {
        for v in ch.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v += sigma * g;
        }
    }
    field
}

/// Speech surrogate: amplitude-modulated noise bursts with a per-burst
/// low-pass tilt, separated by silence. Normalized to unit RMS.
pub fn surrogate_source(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (rng.random_range(0.0..0.3) * fs) as usize;
    while t < len {
        let n = ((rng.random_range(0.1..0.5) * fs) as usize).min(len - t);
        let ramp = (0.02 * fs) as usize;
        let am_rate = rng.random_range(3.0..6.0);
        let am_phase = rng.random_range(0.0..two_pi);
        let env = |i: usize| {
            let a = (i.min(n - 1 - i.min(n - 1)) as f64 / ramp as f64).min(1.0);
            let attack = 0.5 - 0.5 * (std::f64::consts::PI * a).cos();
            attack * (0.6 + 0.4 * (two_pi * am_rate * i as f64 / fs + am_phase).sin())
        };
        let level = 10f64.powf(rng.random_range(-6.0..0.0) / 20.0);
        // one-pole low-pass y = (1 - a) g + a y_prev
        let tilt = rng.random_range(0.3..0.7);
        let mut y = 0.0;
        for i in 0..n {
            let g: f64 = StandardNormal.sample(rng);
            y = (1.0 - tilt) * g + tilt * y;
            out[t + i] += level * env(i) * y;
        }
        let gap = if rng.random_bool(0.15) { rng.random_range(0.3..0.7) } else { rng.random_range(0.05..0.3) };
        t += n + (gap * fs) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

fn load_source(path: &str, len: usize, fs: u32) -> Result<Vec<f64>> {
    let clip = read_wav(path)?;
    if clip.sample_rate != fs {
        bail!(Config, "source {path} is sampled at {} Hz, scene needs {fs} Hz", clip.sample_rate);
    }
    let ch = clip.channel(0);
    if ch.is_empty() {
        bail!(InvalidArgument, "source {path} is empty");
    }
    Ok((0..len).map(|i| ch[i % ch.len()]).collect())
}

/// Generates one scene. Deterministic in `spec.seed`; the noise is scaled so
/// the broadband SNR on channel 0 equals `spec.snr_db`.
pub fn synth_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let len = spec.len();
    let fs = f64::from(spec.sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let src = match &spec.source {
        SourceModel::Surrogate => surrogate_source(len, fs, &mut rng),
        SourceModel::Wav { path } => load_source(path, len, spec.sample_rate)?,
    };
    let speech = propagate(spec, &src, &mut rng);
    let noise = match spec.noise {
        NoiseModel::White => white_noise(spec, &mut rng),
        NoiseModel::Diffuse { waves } => diffuse_noise(spec, waves, &mut rng),
    };
    let px: f64 = speech[0].iter().map(|v| v * v).sum();
    let pn: f64 = noise[0].iter().map(|v| v * v).sum();
    if !(px > 0.0) {
        bail!(InvalidArgument, "source has zero power; no SNR can be reached");
    }
    if !(pn > 0.0) {
        bail!(InvalidArgument, "noise has zero power");
    }
    let gain = (px / (pn * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let noise: Vec<Vec<f64>> = noise.into_iter().map(|c| c.into_iter().map(|v| v * gain).collect()).collect();
    let mixture: Vec<Vec<f64>> = speech
        .iter()
        .zip(&noise)
        .map(|(x, n)| x.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok(SceneBundle {
        spec: spec.clone(),
        mixture: AudioClip::new(spec.sample_rate, mixture)?,
        speech: AudioClip::new(spec.sample_rate, speech)?,
        noise: AudioClip::new(spec.sample_rate, noise)?,
    })
}

/// SNR of the beamformed components against every input channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub input_snr_db: Vec<f64>,
    pub best_input_snr_db: f64,
    pub output_snr_db: f64,
    /// Output SNR minus the best input channel SNR.
    pub gain_db: f64,
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Beamforms the speech and noise spectrograms separately with `w` and
/// compares output to per-channel input SNR.
pub fn snr_metrics<T: Scalar>(
    speech: &ComplexSpectrogram<T>,
    noise: &ComplexSpectrogram<T>,
    w: &BeamformerWeights<T>,
) -> Result<SnrReport> {
    let (d, frames, bins) = (speech.channels(), speech.frames(), speech.bins());
    if noise.channels() != d || noise.frames() != frames || noise.bins() != bins {
        bail!(Shape, "speech and noise spectrograms differ in shape");
    }
    if w.dims != d || w.bins != bins {
        bail!(Shape, "weights do not match the spectrograms");
    }
    let mut ex = vec![0.0; d];
    let mut en = vec![0.0; d];
    let (mut ox, mut on) = (0.0, 0.0);
    for t in 0..frames {
        for f in 0..bins {
            let wf = w.at(f);
            let (mut bx, mut bn) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for c in 0..d {
                let x = speech.get(c, t, f);
                let n = noise.get(c, t, f);
                let x = C64::new(x.re.as_f64(), x.im.as_f64());
                let n = C64::new(n.re.as_f64(), n.im.as_f64());
                ex[c] += x.norm_sqr();
                en[c] += n.norm_sqr();
                let wc = C64::new(wf[c].re.as_f64(), wf[c].im.as_f64()).conj();
                bx += wc * x;
                bn += wc * n;
            }
            ox += bx.norm_sqr();
            on += bn.norm_sqr();
        }
    }
    if en.iter().any(|&e| !(e > 0.0)) || !(on > 0.0) {
        bail!(InvalidArgument, "noise energy is zero; SNR undefined");
    }
    let input: Vec<f64> = ex.iter().zip(&en).map(|(x, n)| db(x / n)).collect();
    let best = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let output = db(ox / on);
    Ok(SnrReport {
        input_snr_db: input,
        best_input_snr_db: best,
        output_snr_db: output,
        gain_db: output - best,
    })
}

/// Ranges from which per-scene specs are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSetConfig {
    pub scenes: usize,
    pub seed: u64,
    pub channels: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub spacing_m: f64,
    pub snr_db: (f64, f64),
    /// 0 keeps scenes anechoic.
    pub t60: (f64, f64),
    pub noise: NoiseModel,
    pub source: SourceModel,
}

impl Default for SceneSetConfig {
    fn default() -> Self {
        Self {
            scenes: 10,
            seed: 0,
            channels: 6,
            duration_secs: 3.0,
            sample_rate: 16000,
            spacing_m: 0.04,
            snr_db: (-5.0, 5.0),
            t60: (0.0, 0.0),
            noise: NoiseModel::Diffuse { waves: 64 },
            source: SourceModel::Surrogate,
        }
    }
}

impl SceneSetConfig {
    /// Spec of scene `index`; independent of how many scenes are requested.
    pub fn scene(&self, index: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        let snr = uniform(&mut rng, self.snr_db);
        let azimuth = rng.random_range(0.0..180.0);
        let t60 = uniform(&mut rng, self.t60);
        let seed = rng.random();
        SceneSpec {
            channels: self.channels,
            duration_secs: self.duration_secs,
            sample_rate: self.sample_rate,
            spacing_m: self.spacing_m,
            source: self.source.clone(),
            propagation: if t60 > 0.0 {
                Propagation::Rir {
                    azimuth_deg: azimuth,
                    t60,
                    drr_db: default_drr(),
                }
            } else {
                Propagation::Anechoic { azimuth_deg: azimuth }
            },
            noise: self.noise.clone(),
            snr_db: snr,
            seed,
        }
    }
}

impl SceneSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            bail!(Config, "scene set needs at least one scene");
        }
        if self.snr_db.0 > self.snr_db.1 || self.t60.0 > self.t60.1 {
            bail!(Config, "ranges must be ordered lo,hi");
        }
        self.scene(0).validate()
    }

    /// Overrides fields from `scenes`, `seed`, `channels`, `duration`,
    /// `sample_rate`, `spacing`, `snr_db`, `t60`, `noise` (`white` or
    /// `diffuse`), `waves` and `source` (`surrogate` or a WAV path).
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        if let Some(v) = kv.take("scenes")? {
            self.scenes = v;
        }
        if let Some(v) = kv.take("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.take("channels")? {
            self.channels = v;
        }
        if let Some(v) = kv.take("duration")? {
            self.duration_secs = v;
        }
        if let Some(v) = kv.take("sample_rate")? {
            self.sample_rate = v;
        }
        if let Some(v) = kv.take("spacing")? {
            self.spacing_m = v;
        }
        if let Some(Range(lo, hi)) = kv.take("snr_db")? {
            self.snr_db = (lo, hi);
        }
        if let Some(Range(lo, hi)) = kv.take("t60")? {
            self.t60 = (lo, hi);
        }
        let waves: Option<usize> = kv.take("waves")?;
        match kv.take::<String>("noise")?.as_deref() {
            None => {}
            Some("white") => self.noise = NoiseModel::White,
            Some("diffuse") => self.noise = NoiseModel::Diffuse { waves: 64 },
            Some(other) => bail!(Config, "noise = {other:?}: expected white or diffuse"),
        }
        if let Some(w) = waves {
            match &mut self.noise {
                NoiseModel::Diffuse { waves } => *waves = w,
                NoiseModel::White => bail!(Config, "waves only applies to diffuse noise"),
            }
        }
        match kv.take::<String>("source")? {
            None => {}
            Some(s) if s == "surrogate" => self.source = SourceModel::Surrogate,
            Some(path) => self.source = SourceModel::Wav { path },
        }
        Ok(())
    }
}

/// Directory name of scene `index` inside a set.
pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Generates every scene of `cfg` in parallel, writes each into its own
/// directory under `out` and a `manifest.jsonl` with relative paths.
/// Returns the manifest path.
pub fn write_scene_set(cfg: &SceneSetConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let records = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| {
            let id = scene_id(i);
            let bundle = synth_scene(&cfg.scene(i))?;
            write_scene(&out.join(&id), &bundle)?;
            let rel = |name: &str| PathBuf::from(&id).join(name);
            Ok(ManifestRecord {
                mixture: Some(rel("mixture.wav")),
                channels: None,
                speech: Some(rel("speech.wav")),
                noise: Some(rel("noise.wav")),
                id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = out.join("manifest.jsonl");
    std::fs::write(&path, format_manifest(&records)?)?;
    Ok(path)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Writes `mixture.wav`, `speech.wav`, `noise.wav` (32-bit float) and
/// `scene.json` into `dir`.
pub fn write_scene(dir: &Path, bundle: &SceneBundle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_wav(dir.join("mixture.wav"), &bundle.mixture, WavEncoding::Float32)?;
    write_wav(dir.join("speech.wav"), &bundle.speech, WavEncoding::Float32)?;
    write_wav(dir.join("noise.wav"), &bundle.noise, WavEncoding::Float32)?;
    std::fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&bundle.spec)? + "\n")?;
    Ok(())
}
