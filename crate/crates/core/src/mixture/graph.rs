//! Differentiable M-step, E-step and likelihoods recorded on a [`Tape`].
//!
//! Internally every per-class quantity is laid out (K, F, T) so that the
//! frequency axis is a batch axis of the Hermitian primitives.

use crate::autodiff::{Tape, Tensor, Var, C64};
use crate::error::{bail, Result};

use super::{log_normalizer, LikelihoodVariant, NormalizedObservations, WEIGHT_FLOOR};

/// Observations recorded as tape constants.
#[derive(Clone, Copy, Debug)]
pub struct GraphObservations {
    /// (F, T, D)
    pub y: Var,
    /// (F, D, T)
    yt: Var,
    /// 1 / |y|^2 as a (1, F, T) real constant (the identity-initialized
    /// quadratic form).
    inv_norm: Var,
    pub frames: usize,
    pub bins: usize,
    pub dims: usize,
}

impl GraphObservations {
    pub fn new(tape: &mut Tape, obs: &NormalizedObservations<f64>) -> Result<Self> {
        let (frames, bins, dims) = (obs.frames(), obs.bins(), obs.dims());
        let mut y = Vec::with_capacity(frames * bins * dims);
        let mut yt = vec![C64::new(0.0, 0.0); frames * bins * dims];
        let mut inv = Vec::with_capacity(frames * bins);
        for f in 0..bins {
            for t in 0..frames {
                let v = obs.vector(t, f);
                y.extend_from_slice(v);
                for (d, z) in v.iter().enumerate() {
                    yt[(f * dims + d) * frames + t] = *z;
                }
                inv.push(1.0 / v.iter().map(|z| z.norm_sqr()).sum::<f64>());
            }
        }
        Ok(Self {
            y: tape.constant(Tensor::complex(&[bins, frames, dims], y)?),
            yt: tape.constant(Tensor::complex(&[bins, dims, frames], yt)?),
            inv_norm: tape.constant(Tensor::real(&[1, bins, frames], inv)?),
            frames,
            bins,
            dims,
        })
    }
}

/// Mixture parameters as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct GraphParams {
    /// (K, F, 1)
    pub weights: Var,
    /// (K, F, D, D)
    pub shapes: Var,
}

/// Converts (K, T, F) affiliations to the internal (K, F, T) layout.
pub fn to_kft(tape: &mut Tape, gamma_ktf: Var) -> Result<Var> {
    tape.permute(gamma_ktf, &[0, 2, 1])
}

/// Converts internal (K, F, T) affiliations back to (K, T, F).
pub fn to_ktf(tape: &mut Tape, gamma_kft: Var) -> Result<Var> {
    tape.permute(gamma_kft, &[0, 2, 1])
}

/// Single M-step from affiliations `gamma (K, F, T)` with identity-initialized
/// shapes and one fixed-point application.
pub fn m_step(tape: &mut Tape, obs: &GraphObservations, gamma: Var) -> Result<GraphParams> {
    let s = tape.shape(gamma).to_vec();
    if s.len() != 3 || s[1] != obs.bins || s[2] != obs.frames {
        bail!(Shape, "affiliations {:?} do not match (K, F={}, T={})", s, obs.bins, obs.frames);
    }
    let k = s[0];
    let weights = tape.mean(gamma, &[2])?;
    let mass = tape.sum(gamma, &[2])?;
    // w_ktf = gamma / (y^H I^{-1} y)
    let w = tape.mul(gamma, obs.inv_norm)?;
    let w = tape.reshape(w, &[k, obs.bins, obs.frames, 1])?;
    let w = tape.to_complex(w)?;
    let yc = tape.conj(obs.y)?;
    let wy = tape.mul(w, yc)?;
    // sum_t w y y^H
    let scatter = tape.matmul(obs.yt, wy)?;
    let mass = tape.reshape(mass, &[k, obs.bins, 1, 1])?;
    let dims = tape.constant(Tensor::scalar(obs.dims as f64));
    let scale = tape.div(dims, mass)?;
    let scale = tape.to_complex(scale)?;
    let shapes = tape.mul(scatter, scale)?;
    Ok(GraphParams { weights, shapes })
}

/// Outputs of a recorded E-step, all (K, F, T).
#[derive(Clone, Copy, Debug)]
pub struct GraphEStep {
    pub log_density: Var,
    pub log_joint: Var,
    pub gamma: Var,
}

pub fn e_step(tape: &mut Tape, obs: &GraphObservations, params: &GraphParams) -> Result<GraphEStep> {
    let d = obs.dims;
    let k = tape.shape(params.shapes)[0];
    let q = tape.quadratic_form(params.shapes, obs.y)?;
    let lq = tape.ln(q)?;
    let ld = tape.log_det_hermitian(params.shapes)?;
    let ld = tape.reshape(ld, &[k, obs.bins, 1])?;
    let dlq = tape.scale(lq, -(d as f64));
    let lp = tape.sub(dlq, ld)?;
    let log_density = tape.add_scalar(lp, log_normalizer::<f64>(d));
    let w = tape.clamp_min(params.weights, WEIGHT_FLOOR)?;
    let lw = tape.ln(w)?;
    let log_joint = tape.add(lw, log_density)?;
    let gamma = tape.softmax(log_joint, 0)?;
    Ok(GraphEStep {
        log_density,
        log_joint,
        gamma,
    })
}

/// Recorded likelihood of the requested variant. `aux` (K, F, T) is required
/// for [`LikelihoodVariant::Auxiliary`].
pub fn log_likelihood(tape: &mut Tape, estep: &GraphEStep, variant: LikelihoodVariant, aux: Option<Var>) -> Result<Var> {
    match variant {
        LikelihoodVariant::Ml => {
            let l = tape.logsumexp(estep.log_joint, 0)?;
            tape.sum_all(l)
        }
        LikelihoodVariant::MlEqual => {
            let s = tape.shape(estep.log_density).to_vec();
            let l = tape.logsumexp(estep.log_density, 0)?;
            let l = tape.sum_all(l)?;
            Ok(tape.add_scalar(l, -((s[1] * s[2]) as f64) * (s[0] as f64).ln()))
        }
        LikelihoodVariant::Auxiliary => {
            let Some(g) = aux else {
                bail!(InvalidArgument, "auxiliary likelihood needs affiliations");
            };
            if tape.shape(g) != tape.shape(estep.log_joint) {
                bail!(Shape, "auxiliary affiliations {:?} vs {:?}", tape.shape(g), tape.shape(estep.log_joint));
            }
            let p = tape.mul(g, estep.log_joint)?;
            tape.sum_all(p)
        }
    }
}
