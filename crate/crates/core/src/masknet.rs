//! Per-channel neural mask estimator.
//!
//! Each microphone channel is processed on its own: log-power features are
//! normalized per utterance, passed through an affine input layer with
//! learnable per-bin scale and shift, a bidirectional tanh recurrent layer,
//! two ReLU layers and an output layer with `K * F` units. The per-channel
//! masks are pooled over channels afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{bail, Result};
use crate::types::{ClassAffiliations, ComplexSpectrogram};

/// Floor inside the log-power features.
pub const FEATURE_FLOOR: f64 = 1e-10;
/// Added to the class sum when renormalizing sigmoid outputs.
pub const SIGMOID_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softmax,
    Sigmoid,
}

impl std::str::FromStr for Activation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "sigmoid" => Ok(Self::Sigmoid),
            _ => Err(crate::Error::Config(format!("unknown activation {s:?} (softmax | sigmoid)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskNetConfig {
    pub bins: usize,
    pub hidden: usize,
    pub ff: usize,
    pub classes: usize,
    pub activation: Activation,
}

impl MaskNetConfig {
    pub fn new(bins: usize, activation: Activation) -> Self {
        Self {
            bins,
            hidden: 64,
            ff: 128,
            classes: 2,
            activation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Median,
}

impl std::str::FromStr for Pooling {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            _ => Err(crate::Error::Config(format!("unknown pooling {s:?} (mean | median)"))),
        }
    }
}

/// Layer names in registration order.
pub const LAYERS: [&str; 14] = [
    "input_scale",
    "input_shift",
    "fwd_in",
    "fwd_bias",
    "fwd_rec",
    "bwd_in",
    "bwd_bias",
    "bwd_rec",
    "ff1_w",
    "ff1_b",
    "ff2_w",
    "ff2_b",
    "out_w",
    "out_b",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MaskNet {
    pub config: MaskNetConfig,
    /// One tensor per entry of [`LAYERS`].
    pub params: Vec<Tensor>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let a = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::real(shape, (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("shape matches data")
}

impl MaskNet {
    /// Uniform `+-1/sqrt(fan_in)` initialization from `seed`; the input
    /// normalization starts as the identity.
    pub fn new(config: MaskNetConfig, seed: u64) -> Self {
        let (f, h, m, k) = (config.bins, config.hidden, config.ff, config.classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = vec![
            Tensor::full(&[f], 1.0),
            Tensor::full(&[f], 0.0),
            uniform(&mut rng, &[f, h], f),
            uniform(&mut rng, &[h], f),
            uniform(&mut rng, &[h, h], h),
            uniform(&mut rng, &[f, h], f),
            uniform(&mut rng, &[h], f),
            uniform(&mut rng, &[h, h], h),
            uniform(&mut rng, &[2 * h, m], 2 * h),
            uniform(&mut rng, &[m], 2 * h),
            uniform(&mut rng, &[m, m], m),
            uniform(&mut rng, &[m], m),
            uniform(&mut rng, &[m, k * f], m),
            uniform(&mut rng, &[k * f], m),
        ];
        Self { config, params }
    }

    /// Rebuilds a network from stored tensors, checking every shape.
    pub fn from_params(config: MaskNetConfig, params: Vec<Tensor>) -> Result<Self> {
        let expect = Self::new(config, 0);
        if params.len() != expect.params.len() {
            bail!(Format, "expected {} parameter tensors, got {}", expect.params.len(), params.len());
        }
        for ((name, want), got) in LAYERS.iter().zip(&expect.params).zip(&params) {
            if want.shape() != got.shape() || got.as_real().is_none() {
                bail!(Format, "layer {name}: expected real {:?}, got {:?}", want.shape(), got.shape());
            }
            if !got.all_finite() {
                bail!(NonFinite, "layer {name} has non-finite entries");
            }
        }
        Ok(Self { config, params })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        LAYERS.iter().position(|l| *l == name).map(|i| &self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter on `tape`, in [`LAYERS`] order.
    pub fn register(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.iter().map(|p| tape.parameter(p.clone())).collect()
    }

    /// Records the forward pass with parameters already registered.
    pub fn forward_with(&self, tape: &mut Tape, p: &[Var], spec: &ComplexSpectrogram<f64>) -> Result<MaskForward> {
        let cfg = self.config;
        let (d, frames, bins) = (spec.channels(), spec.frames(), spec.bins());
        if bins != cfg.bins {
            bail!(Shape, "network expects {} bins, spectrogram has {bins}", cfg.bins);
        }
        let (h, m, k) = (cfg.hidden, cfg.ff, cfg.classes);
        let x = tape.constant(features(spec)?);
        let scale = tape.reshape(p[0], &[1, 1, bins])?;
        let shift = tape.reshape(p[1], &[1, 1, bins])?;
        let x = tape.mul(x, scale)?;
        let x = tape.add(x, shift)?;

        let mut dirs = Vec::with_capacity(2);
        for (i, reverse) in [(2, false), (5, true)] {
            let proj = tape.matmul(x, p[i])?;
            let bias = tape.reshape(p[i + 1], &[1, 1, h])?;
            let proj = tape.add(proj, bias)?;
            dirs.push(tape.rnn_tanh(proj, p[i + 2], reverse)?);
        }
        let hcat = tape.concat(&dirs, 2)?;
        let mut z = hcat;
        for (wi, width) in [(8, m), (10, m)] {
            let a = tape.matmul(z, p[wi])?;
            let b = tape.reshape(p[wi + 1], &[1, 1, width])?;
            let a = tape.add(a, b)?;
            z = tape.relu(a)?;
        }
        let o = tape.matmul(z, p[12])?;
        let ob = tape.reshape(p[13], &[1, 1, k * bins])?;
        let o = tape.add(o, ob)?;
        let o = tape.reshape(o, &[d, frames, k, bins])?;
        let logits = tape.permute(o, &[0, 2, 1, 3])?;
        let per_channel = match cfg.activation {
            Activation::Softmax => tape.softmax(logits, 1)?,
            Activation::Sigmoid => tape.sigmoid(logits)?,
        };
        let mean = tape.mean(per_channel, &[0])?;
        let mean = tape.reshape(mean, &[k, frames, bins])?;
        let pooled = match cfg.activation {
            Activation::Softmax => mean,
            Activation::Sigmoid => {
                let s = tape.sum(mean, &[0])?;
                let s = tape.add_scalar(s, SIGMOID_EPS);
                tape.div(mean, s)?
            }
        };
        Ok(MaskForward {
            params: p.to_vec(),
            logits,
            per_channel,
            pooled,
        })
    }

    /// Registers the parameters and records the forward pass.
    pub fn forward(&self, tape: &mut Tape, spec: &ComplexSpectrogram<f64>) -> Result<MaskForward> {
        let p = self.register(tape)?;
        self.forward_with(tape, &p, spec)
    }

    /// Per-channel masks `(D, K, T, F)` without keeping a tape around.
    pub fn per_channel_masks(&self, spec: &ComplexSpectrogram<f64>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, spec)?;
        Ok(tape.value(out.per_channel).clone())
    }

    /// Pooled masks ready for covariance estimation or EM.
    pub fn masks(&self, spec: &ComplexSpectrogram<f64>, pooling: Pooling) -> Result<ClassAffiliations<f64>> {
        let per = self.per_channel_masks(spec)?;
        pool(&per, pooling, self.config.activation)
    }

    /// Reorders the output units of every bin: afterwards output class `k`
    /// at bin `f` is what class `map[f][k]` was before.
    pub fn permute_output_weights(&mut self, map: &[Vec<usize>]) -> Result<()> {
        permute_output_units(&mut self.params, self.config, map)
    }
}

/// Applies [`MaskNet::permute_output_weights`] to any tensor list laid out
/// like the parameters (for example optimizer moments).
pub fn permute_output_units(params: &mut [Tensor], config: MaskNetConfig, map: &[Vec<usize>]) -> Result<()> {
    let (f, k, m) = (config.bins, config.classes, config.ff);
    validate_map(map, f, k)?;
    if params.len() != LAYERS.len() {
        bail!(Shape, "expected {} tensors, got {}", LAYERS.len(), params.len());
    }
    let (Some(w), Some(b)) = (params[12].as_real(), params[13].as_real()) else {
        bail!(DType, "output layer must be real");
    };
    if w.len() != m * k * f || b.len() != k * f {
        bail!(Shape, "output layer does not match {m}x{}", k * f);
    }
    let mut w2 = w.to_vec();
    let mut b2 = b.to_vec();
    for (bin, perm) in map.iter().enumerate() {
        for (kk, &src) in perm.iter().enumerate() {
            let (to, from) = (kk * f + bin, src * f + bin);
            b2[to] = b[from];
            for r in 0..m {
                w2[r * k * f + to] = w[r * k * f + from];
            }
        }
    }
    params[12] = Tensor::real(&[m, k * f], w2)?;
    params[13] = Tensor::real(&[k * f], b2)?;
    Ok(())
}

/// Checks that `map` holds one permutation of `0..k` per bin.
pub fn validate_map(map: &[Vec<usize>], bins: usize, k: usize) -> Result<()> {
    if map.len() != bins {
        bail!(InvalidArgument, "permutation map has {} bins, network has {bins}", map.len());
    }
    for (f, p) in map.iter().enumerate() {
        let mut seen = vec![false; k];
        if p.len() != k || p.iter().any(|&c| c >= k || std::mem::replace(&mut seen[c], true)) {
            bail!(InvalidArgument, "entry {p:?} at bin {f} is not a permutation of 0..{k}");
        }
    }
    Ok(())
}

/// Tape nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct MaskForward {
    pub params: Vec<Var>,
    /// Pre-activation outputs `(D, K, T, F)`.
    pub logits: Var,
    /// `(D, K, T, F)`.
    pub per_channel: Var,
    /// Mean over channels `(K, T, F)`, summing to one over `K`.
    pub pooled: Var,
}

/// Log-power features `(D, T, F)`, normalized to zero mean and unit variance
/// per channel over the whole utterance.
pub fn features(spec: &ComplexSpectrogram<f64>) -> Result<Tensor> {
    let (d, frames, bins) = (spec.channels(), spec.frames(), spec.bins());
    let n = frames * bins;
    if n == 0 {
        bail!(InvalidArgument, "empty spectrogram");
    }
    let mut out = Vec::with_capacity(d * n);
    for c in 0..d {
        let lp: Vec<f64> = spec.channel(c).iter().map(|z| (z.norm_sqr() + FEATURE_FLOOR).ln()).collect();
        let mean = lp.iter().sum::<f64>() / n as f64;
        let var = lp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(1e-8);
        out.extend(lp.iter().map(|v| (v - mean) / sd));
    }
    Tensor::real(&[d, frames, bins], out)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Pools per-channel masks `(D, K, T, F)` over channels.
///
/// Sigmoid outputs are renormalized as `m_k / (sum_j m_j + eps)` under
/// either rule; median-pooled softmax outputs are divided by their class sum.
pub fn pool(per_channel: &Tensor, pooling: Pooling, activation: Activation) -> Result<ClassAffiliations<f64>> {
    let s = per_channel.shape();
    if s.len() != 4 || s[0] == 0 {
        bail!(Shape, "per-channel masks must be (D, K, T, F), got {:?}", s);
    }
    let (d, k, frames, bins) = (s[0], s[1], s[2], s[3]);
    let v = per_channel.as_real().ok_or_else(|| crate::Error::DType("masks must be real".into()))?;
    let stride = k * frames * bins;
    let mut out = vec![0.0; stride];
    let mut lane = vec![0.0; d];
    for (i, o) in out.iter_mut().enumerate() {
        for (c, l) in lane.iter_mut().enumerate() {
            *l = v[c * stride + i];
        }
        *o = match pooling {
            Pooling::Mean => lane.iter().sum::<f64>() / d as f64,
            Pooling::Median => median(&mut lane),
        };
    }
    let mut g = ClassAffiliations::from_vec(k, frames, bins, out)?;
    if activation == Activation::Sigmoid {
        g.renormalize(SIGMOID_EPS);
    } else if pooling == Pooling::Median {
        // medians of positive softmax outputs never sum to zero
        g.renormalize(0.0);
    }
    Ok(g)
}
