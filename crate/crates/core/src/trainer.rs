//! Unsupervised training of the mask estimator through one recorded M-step
//! and E-step, plus the two inference paths.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{bail, Error, Result};
use crate::kvconfig::KeyValues;
use crate::manifest::ManifestRecord;
use crate::masknet::{permute_output_units, Activation, MaskNet, MaskNetConfig, Pooling};
use crate::mixture::graph::{self, GraphEStep, GraphObservations, GraphParams};
use crate::mixture::{self, permutation_align, LikelihoodVariant, ShapeInit, WEIGHT_FLOOR};
use crate::stft::{stft, StftConfig};
use crate::types::{ClassAffiliations, ComplexSpectrogram};

/// The trainable rows of the loss table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Observation likelihood with weights from the network affiliations.
    MlGamma0,
    /// Observation likelihood with weights re-estimated from the E-step
    /// affiliations.
    MlGamma,
    /// Observation likelihood with equal weights `1/K`.
    #[default]
    MlEqual,
    /// Auxiliary function weighted by the network affiliations.
    AuxGamma0,
    /// Auxiliary function weighted by the E-step affiliations.
    AuxGamma,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::MlGamma0,
        LossVariant::MlGamma,
        LossVariant::MlEqual,
        LossVariant::AuxGamma0,
        LossVariant::AuxGamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::MlGamma0 => "ml_gamma0",
            LossVariant::MlGamma => "ml_gamma",
            LossVariant::MlEqual => "ml_equal",
            LossVariant::AuxGamma0 => "aux_gamma0",
            LossVariant::AuxGamma => "aux_gamma",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ml" {
            return Ok(LossVariant::MlGamma0);
        }
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::full(p.shape(), 0.0)).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update in place. Returns the gradient norm before clipping.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<f64> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            bail!(Shape, "{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len());
        }
        let mut sq = 0.0;
        for g in grads {
            let Some(g) = g.as_real() else {
                bail!(DType, "parameter gradients must be real");
            };
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            bail!(NonFinite, "gradient norm is {norm}");
        }
        let c = self.config;
        let scale = if c.clip > 0.0 && norm > c.clip { c.clip / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i].as_real().expect("checked above");
            let shape = params[i].shape().to_vec();
            if g.len() != params[i].numel() {
                bail!(Shape, "gradient {i} has {} entries for {:?}", g.len(), shape);
            }
            let mut p = params[i].as_real().expect("real parameters").to_vec();
            let mut m = self.m[i].as_real().expect("real moments").to_vec();
            let mut v = self.v[i].as_real().expect("real moments").to_vec();
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let step = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                p[j] -= c.lr * (step + c.weight_decay * p[j]);
            }
            params[i] = Tensor::real(&shape, p)?;
            self.m[i] = Tensor::real(&shape, m)?;
            self.v[i] = Tensor::real(&shape, v)?;
        }
        Ok(norm)
    }

    /// Keeps the moments attached to their output units after a weight
    /// permutation.
    pub fn permute_output_units(&mut self, config: MaskNetConfig, map: &[Vec<usize>]) -> Result<()> {
        permute_output_units(&mut self.m, config, map)?;
        permute_output_units(&mut self.v, config, map)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_variant: LossVariant,
    pub activation: Activation,
    pub adam: AdamConfig,
    /// Utterances whose gradients are summed per update.
    pub batch_size: usize,
    pub steps: usize,
    /// Steps between permutation-alignment weight fixes; 0 disables them.
    pub pa_interval: usize,
    /// Utterances held out for permutation alignment.
    pub pa_batch: usize,
    pub seed: u64,
    pub hidden: usize,
    pub ff: usize,
    /// Refine masks with one M-step and E-step at inference time.
    pub extra_em_step: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_variant: LossVariant::MlEqual,
            activation: Activation::Softmax,
            adam: AdamConfig::default(),
            batch_size: 1,
            steps: 2000,
            pa_interval: 100,
            pa_batch: 4,
            seed: 0,
            hidden: 64,
            ff: 128,
            extra_em_step: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            bail!(Config, "steps must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if self.pa_interval > 0 && self.pa_batch == 0 {
            bail!(Config, "pa_batch must be at least 1 when pa_interval > 0");
        }
        if self.hidden == 0 || self.ff == 0 {
            bail!(Config, "hidden and ff must be positive");
        }
        let a = &self.adam;
        let finite = [a.lr, a.beta1, a.beta2, a.eps, a.clip, a.weight_decay].iter().all(|x| x.is_finite());
        if !finite || a.lr <= 0.0 || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            bail!(Config, "invalid optimizer settings {a:?}");
        }
        if a.clip < 0.0 || a.weight_decay < 0.0 {
            bail!(Config, "clip and weight_decay must be non-negative");
        }
        Ok(())
    }

    /// Applies `key = value` overrides on top of `self`.
    pub fn apply(mut self, mut kv: KeyValues) -> Result<Self> {
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.take($key)? {
                    $field = v;
                }
            };
        }
        set!("loss_variant", self.loss_variant);
        set!("activation", self.activation);
        set!("lr", self.adam.lr);
        set!("beta1", self.adam.beta1);
        set!("beta2", self.adam.beta2);
        set!("adam_eps", self.adam.eps);
        set!("clip", self.adam.clip);
        set!("weight_decay", self.adam.weight_decay);
        set!("batch_size", self.batch_size);
        set!("steps", self.steps);
        set!("pa_interval", self.pa_interval);
        set!("pa_batch", self.pa_batch);
        set!("seed", self.seed);
        set!("hidden", self.hidden);
        set!("ff", self.ff);
        set!("extra_em_step", self.extra_em_step);
        kv.finish()?;
        self.validate()?;
        Ok(self)
    }

    pub fn to_kv(&self) -> String {
        let a = &self.adam;
        let act = match self.activation {
            Activation::Softmax => "softmax",
            Activation::Sigmoid => "sigmoid",
        };
        format!(
            "loss_variant = {}\nactivation = {act}\nlr = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nadam_eps = {:?}\n\
             clip = {:?}\nweight_decay = {:?}\nbatch_size = {}\nsteps = {}\npa_interval = {}\npa_batch = {}\n\
             seed = {}\nhidden = {}\nff = {}\nextra_em_step = {}\n",
            self.loss_variant,
            a.lr,
            a.beta1,
            a.beta2,
            a.eps,
            a.clip,
            a.weight_decay,
            self.batch_size,
            self.steps,
            self.pa_interval,
            self.pa_batch,
            self.seed,
            self.hidden,
            self.ff,
            self.extra_em_step
        )
    }

    pub fn net_config(&self, bins: usize) -> MaskNetConfig {
        MaskNetConfig {
            bins,
            hidden: self.hidden,
            ff: self.ff,
            classes: 2,
            activation: self.activation,
        }
    }
}

/// Tape nodes of the training objective for one utterance.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    /// Pooled network affiliations (K, T, F).
    pub gamma0: Var,
    pub mixture: GraphParams,
    pub estep: GraphEStep,
    /// Negative log-likelihood summed over all bins.
    pub raw: Var,
    /// `raw / (T F)`.
    pub loss: Var,
}

/// Records forward pass, M-step, E-step and loss for one utterance.
pub fn loss_graph(
    tape: &mut Tape,
    net: &MaskNet,
    params: &[Var],
    spec: &ComplexSpectrogram<f64>,
    variant: LossVariant,
) -> Result<LossGraph> {
    if spec.channels() < 2 {
        bail!(InvalidArgument, "training needs at least two channels, got {}", spec.channels());
    }
    let fwd = net.forward_with(tape, params, spec)?;
    let obs = GraphObservations::new(tape, &mixture::normalize(spec))?;
    let g0 = graph::to_kft(tape, fwd.pooled)?;
    let mix = graph::m_step(tape, &obs, g0)?;
    let est = graph::e_step(tape, &obs, &mix)?;
    let ll = match variant {
        LossVariant::MlGamma0 => graph::log_likelihood(tape, &est, LikelihoodVariant::Ml, None)?,
        LossVariant::MlEqual => graph::log_likelihood(tape, &est, LikelihoodVariant::MlEqual, None)?,
        LossVariant::MlGamma => {
            let w = tape.mean(est.gamma, &[2])?;
            let w = tape.clamp_min(w, WEIGHT_FLOOR)?;
            let lw = tape.ln(w)?;
            let lj = tape.add(lw, est.log_density)?;
            let l = tape.logsumexp(lj, 0)?;
            tape.sum_all(l)?
        }
        LossVariant::AuxGamma0 => graph::log_likelihood(tape, &est, LikelihoodVariant::Auxiliary, Some(g0))?,
        LossVariant::AuxGamma => graph::log_likelihood(tape, &est, LikelihoodVariant::Auxiliary, Some(est.gamma))?,
    };
    let raw = tape.neg(ll);
    let loss = tape.scale(raw, 1.0 / (spec.frames() * spec.bins()) as f64);
    Ok(LossGraph {
        gamma0: fwd.pooled,
        mixture: mix,
        estep: est,
        raw,
        loss,
    })
}

/// Result of differentiating the loss of one or more utterances.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Gradients of the summed normalized losses, in parameter order.
    pub grads: Vec<Tensor>,
    /// Mean normalized loss over the batch.
    pub loss: f64,
    /// Mean raw loss over the batch.
    pub raw_loss: f64,
    /// Mixture weights (K, F, 1) and shapes (K, F, D, D) of the last utterance.
    pub weights: Tensor,
    pub shapes: Tensor,
}

/// Diagnostics of a rejected step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub step: usize,
    pub utterances: Vec<usize>,
    pub reason: String,
    /// (t, f) positions with non-finite log-joint values, at most 32.
    pub culprits: Vec<(usize, usize)>,
}

const MAX_CULPRITS: usize = 32;

fn culprits(tape: &Tape, g: &LossGraph) -> Vec<(usize, usize)> {
    let lj = tape.value(g.estep.log_joint);
    let s = lj.shape().to_vec();
    let (k, bins, frames) = (s[0], s[1], s[2]);
    let v = lj.as_real().expect("real log-joint");
    let mut out = Vec::new();
    for t in 0..frames {
        for f in 0..bins {
            if (0..k).any(|kk| !v[(kk * bins + f) * frames + t].is_finite()) {
                out.push((t, f));
                if out.len() == MAX_CULPRITS {
                    return out;
                }
            }
        }
    }
    out
}

/// (t, f) positions where the pooled network masks are not finite.
fn mask_culprits(net: &MaskNet, spec: &ComplexSpectrogram<f64>) -> Result<Vec<(usize, usize)>> {
    let g = net.masks(spec, Pooling::Mean)?;
    let mut out = Vec::new();
    for t in 0..g.frames() {
        for f in 0..g.bins() {
            if (0..g.classes()).any(|k| !g.get(k, t, f).is_finite()) && out.len() < MAX_CULPRITS {
                out.push((t, f));
            }
        }
    }
    Ok(out)
}

/// Gradients of the summed loss over `batch`. A non-finite loss or gradient
/// is returned as `Err(Rejection)`.
pub fn training_step(
    net: &MaskNet,
    batch: &[&ComplexSpectrogram<f64>],
    variant: LossVariant,
) -> Result<std::result::Result<StepOutput, Rejection>> {
    if batch.is_empty() {
        bail!(InvalidArgument, "empty batch");
    }
    let mut grads: Vec<Tensor> = net.params.iter().map(|p| Tensor::full(p.shape(), 0.0)).collect();
    let (mut loss, mut raw) = (0.0, 0.0);
    let mut last = None;
    for (i, spec) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let p = net.register(&mut tape)?;
        let g = match loss_graph(&mut tape, net, &p, spec, variant) {
            Ok(g) => g,
            Err(e @ (Error::NonFinite(_) | Error::NotPositiveDefinite { .. } | Error::NotHermitian { .. })) => {
                return Ok(Err(Rejection {
                    step: 0,
                    utterances: vec![i],
                    reason: e.to_string(),
                    culprits: mask_culprits(net, spec)?,
                }));
            }
            Err(e) => return Err(e),
        };
        let l = tape.value(g.loss).item().expect("scalar loss");
        if !l.is_finite() {
            return Ok(Err(Rejection {
                step: 0,
                utterances: vec![i],
                reason: format!("loss is {l}"),
                culprits: culprits(&tape, &g),
            }));
        }
        let gr = tape.backward(g.loss)?;
        for (acc, v) in grads.iter_mut().zip(&p) {
            let d = gr.wrt(*v);
            if !d.all_finite() {
                return Ok(Err(Rejection {
                    step: 0,
                    utterances: vec![i],
                    reason: "non-finite gradient".into(),
                    culprits: culprits(&tape, &g),
                }));
            }
            let sum: Vec<f64> = acc
                .as_real()
                .expect("real")
                .iter()
                .zip(d.as_real().expect("real parameter gradient"))
                .map(|(a, b)| a + b)
                .collect();
            *acc = Tensor::real(acc.shape(), sum)?;
        }
        loss += l;
        raw += tape.value(g.raw).item().expect("scalar loss");
        last = Some((tape.value(g.mixture.weights).clone(), tape.value(g.mixture.shapes).clone()));
    }
    let n = batch.len() as f64;
    let (weights, shapes) = last.expect("non-empty batch");
    Ok(Ok(StepOutput {
        grads,
        loss: loss / n,
        raw_loss: raw / n,
        weights,
        shapes,
    }))
}

/// Evaluates the normalized loss without recording gradients.
pub fn evaluate_loss(net: &MaskNet, spec: &ComplexSpectrogram<f64>, variant: LossVariant) -> Result<f64> {
    let mut tape = Tape::new();
    let p = net.register(&mut tape)?;
    let g = loss_graph(&mut tape, net, &p, spec, variant)?;
    Ok(tape.value(g.loss).item().expect("scalar loss"))
}

/// Network masks, median-pooled over channels, optionally refined by one
/// M-step (identity start, one application) and one E-step.
pub fn infer_masks(net: &MaskNet, spec: &ComplexSpectrogram<f64>, extra_em_step: bool) -> Result<ClassAffiliations<f64>> {
    infer_masks_pooled(net, spec, Pooling::Median, extra_em_step)
}

pub fn infer_masks_pooled(
    net: &MaskNet,
    spec: &ComplexSpectrogram<f64>,
    pooling: Pooling,
    extra_em_step: bool,
) -> Result<ClassAffiliations<f64>> {
    let g = net.masks(spec, pooling)?;
    if !extra_em_step {
        return Ok(g);
    }
    let obs = mixture::normalize(spec);
    let (p, _) = mixture::m_step(&obs, &g, ShapeInit::Identity, 1)?;
    mixture::e_step(&obs, &p)
}

/// Anything that yields training spectrograms by index.
pub trait UtteranceSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, i: usize) -> String {
        i.to_string()
    }

    fn spectrogram(&self, i: usize) -> Result<ComplexSpectrogram<f64>>;
}

impl UtteranceSource for Vec<ComplexSpectrogram<f64>> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn spectrogram(&self, i: usize) -> Result<ComplexSpectrogram<f64>> {
        Ok(self[i].clone())
    }
}

/// Reads and transforms manifest records on demand.
pub struct ManifestSource {
    pub records: Vec<ManifestRecord>,
    pub stft: StftConfig,
}

impl UtteranceSource for ManifestSource {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn id(&self, i: usize) -> String {
        self.records[i].id.clone()
    }

    fn spectrogram(&self, i: usize) -> Result<ComplexSpectrogram<f64>> {
        stft(&self.records[i].load_mixture()?, &self.stft)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub raw_loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationFix {
    /// Number of completed updates when the fix was applied.
    pub step: usize,
    /// Bins whose output units were reordered.
    pub bins_permuted: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_variant: LossVariant,
    /// Accepted steps only, so every loss is finite.
    pub steps: Vec<StepRecord>,
    pub permutation_fixes: Vec<PermutationFix>,
    pub rejected: Vec<Rejection>,
    pub held_out: Vec<String>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    fn window(&self) -> usize {
        (self.steps.len() / 10).max(1)
    }

    /// Mean loss over the first 10% of accepted steps.
    pub fn initial_smoothed(&self) -> Option<f64> {
        let w = self.window();
        (!self.steps.is_empty()).then(|| self.steps[..w].iter().map(|s| s.loss).sum::<f64>() / w as f64)
    }

    /// Mean loss over the last 10% of accepted steps.
    pub fn final_smoothed(&self) -> Option<f64> {
        let w = self.window();
        let n = self.steps.len();
        (n > 0).then(|| self.steps[n - w..].iter().map(|s| s.loss).sum::<f64>() / w as f64)
    }
}

pub struct Trained {
    pub net: MaskNet,
    pub report: TrainReport,
}

fn count_permuted(map: &[Vec<usize>]) -> usize {
    map.iter().filter(|p| p.iter().enumerate().any(|(i, &k)| i != k)).count()
}

/// Aligns the network's output classes across bins on the held-out batch
/// and moves the output-layer weights and their optimizer moments.
fn fix_permutation(net: &mut MaskNet, adam: &mut Adam, held: &[ComplexSpectrogram<f64>]) -> Result<usize> {
    let k = net.config.classes;
    let bins = net.config.bins;
    let mut parts = Vec::with_capacity(held.len());
    let mut frames = 0;
    for spec in held {
        let g = net.masks(spec, Pooling::Mean)?;
        frames += g.frames();
        parts.push(g);
    }
    // concatenate along time
    let mut data = vec![0.0; k * frames * bins];
    let mut t0 = 0;
    for g in &parts {
        for kk in 0..k {
            for t in 0..g.frames() {
                for f in 0..bins {
                    data[(kk * frames + t0 + t) * bins + f] = g.get(kk, t, f);
                }
            }
        }
        t0 += g.frames();
    }
    let joint = ClassAffiliations::from_vec(k, frames, bins, data)?;
    let (_, map) = permutation_align(&joint)?;
    let n = count_permuted(&map);
    if n > 0 {
        net.permute_output_weights(&map)?;
        adam.permute_output_units(net.config, &map)?;
    }
    Ok(n)
}

/// Trains from scratch, or from `init` when given.
pub fn train(source: &dyn UtteranceSource, cfg: &TrainConfig, init: Option<MaskNet>) -> Result<Trained> {
    cfg.validate()?;
    if source.is_empty() {
        bail!(InvalidArgument, "no training utterances");
    }
    let start = Instant::now();
    let n = source.len();
    let mut held_idx: Vec<usize> = Vec::new();
    let mut train_idx: Vec<usize> = (0..n).collect();
    if cfg.pa_interval > 0 {
        if n > cfg.pa_batch {
            held_idx = train_idx.split_off(n - cfg.pa_batch);
        } else {
            log::warn!("only {n} utterances; permutation alignment reuses training data");
            held_idx = (0..n.min(cfg.pa_batch)).collect();
        }
    }
    let held: Vec<ComplexSpectrogram<f64>> = held_idx.iter().map(|&i| source.spectrogram(i)).collect::<Result<_>>()?;

    let mut net = match init {
        Some(net) => net,
        None => {
            let bins = source.spectrogram(train_idx[0])?.bins();
            MaskNet::new(cfg.net_config(bins), cfg.seed)
        }
    };
    let mut adam = Adam::new(cfg.adam, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_0d_e7);
    let mut order: Vec<usize> = Vec::new();
    let mut report = TrainReport {
        loss_variant: cfg.loss_variant,
        held_out: held_idx.iter().map(|&i| source.id(i)).collect(),
        ..Default::default()
    };

    for step in 0..cfg.steps {
        if cfg.pa_interval > 0 && step % cfg.pa_interval == 0 {
            let bins_permuted = fix_permutation(&mut net, &mut adam, &held)?;
            report.permutation_fixes.push(PermutationFix { step, bins_permuted });
        }
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if order.is_empty() {
                order = train_idx.clone();
                order.shuffle(&mut rng);
                order.reverse();
            }
            idx.push(order.pop().expect("refilled"));
        }
        let specs: Vec<ComplexSpectrogram<f64>> = idx.iter().map(|&i| source.spectrogram(i)).collect::<Result<_>>()?;
        let refs: Vec<&ComplexSpectrogram<f64>> = specs.iter().collect();
        let outcome = match training_step(&net, &refs, cfg.loss_variant)? {
            Ok(out) => match adam.update(&mut net.params, &out.grads) {
                Ok(grad_norm) => Ok(StepRecord {
                    step,
                    loss: out.loss,
                    raw_loss: out.raw_loss,
                    grad_norm,
                }),
                Err(e) => Err(Rejection {
                    step,
                    utterances: idx.clone(),
                    reason: e.to_string(),
                    culprits: Vec::new(),
                }),
            },
            Err(mut r) => {
                r.step = step;
                r.utterances = r.utterances.iter().map(|&b| idx[b]).collect();
                Err(r)
            }
        };
        match outcome {
            Ok(rec) => {
                log::debug!("step {step}: loss {:.6} |g| {:.3}", rec.loss, rec.grad_norm);
                report.steps.push(rec);
            }
            Err(r) => {
                log::warn!("step {step} rejected: {}", r.reason);
                report.rejected.push(r);
                if 2 * report.rejected.len() >= cfg.steps {
                    report.wall_clock_secs = start.elapsed().as_secs_f64();
                    return Err(Error::Aborted {
                        reason: format!("{} of {} steps rejected", report.rejected.len(), cfg.steps),
                        report: Box::new(report),
                    });
                }
            }
        }
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(Trained { net, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(v.name().parse::<LossVariant>().unwrap(), v);
        }
        assert_eq!("ml".parse::<LossVariant>().unwrap(), LossVariant::MlGamma0);
        assert!("mle".parse::<LossVariant>().is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = TrainConfig {
            loss_variant: LossVariant::AuxGamma,
            activation: Activation::Sigmoid,
            steps: 7,
            ..Default::default()
        };
        let back = TrainConfig::default().apply(KeyValues::parse(&cfg.to_kv()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::default().apply(KeyValues::parse("steps = 0").unwrap()).is_err());
        assert!(TrainConfig::default().apply(KeyValues::parse("bogus = 1").unwrap()).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let params = vec![Tensor::real(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let mut p = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &[Tensor::full(&[3], 0.0)]).unwrap();
        assert_eq!(p, params);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::real(&[2], vec![0.0, 0.0]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &[Tensor::real(&[2], vec![3.0, -0.5]).unwrap()]).unwrap();
        let v = p[0].as_real().unwrap();
        assert!((v[0] + 1e-3).abs() < 1e-9 && (v[1] - 1e-3).abs() < 1e-9, "{v:?}");
    }
}
