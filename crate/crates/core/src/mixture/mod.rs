//! Complex angular central Gaussian mixture model over unit-norm observations.
//!
//! Everything in this module is plain (not recorded on a tape) and generic
//! over [`Scalar`]. The differentiable training-time counterparts live in
//! [`graph`].

mod align;
pub mod graph;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::linalg;
use crate::scalar::{czero, Scalar};
use crate::types::{ClassAffiliations, ComplexSpectrogram};

pub use align::{apply_permutations, pearson, permutation_align, permutations};

/// Unit-norm observation vectors, laid out (T, F, D).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedObservations<T> {
    frames: usize,
    bins: usize,
    dims: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> NormalizedObservations<T> {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn vector(&self, t: usize, f: usize) -> &[Complex<T>] {
        let o = (t * self.bins + f) * self.dims;
        &self.data[o..o + self.dims]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }
}

/// Divides every (t, f) observation vector by its Euclidean norm. Zero
/// vectors become `(1, ..., 1) / sqrt(D)`.
pub fn normalize<T: Scalar>(spec: &ComplexSpectrogram<T>) -> NormalizedObservations<T> {
    let (d, frames, bins) = (spec.channels(), spec.frames(), spec.bins());
    let mut data = Vec::with_capacity(d * frames * bins);
    let fallback = Complex::new(T::one() / T::of_usize(d).sqrt(), T::zero());
    for t in 0..frames {
        for f in 0..bins {
            let start = data.len();
            data.extend((0..d).map(|c| spec.get(c, t, f)));
            let v = &mut data[start..];
            let n = linalg::norm(v);
            if n > T::zero() {
                v.iter_mut().for_each(|z| *z = *z / n);
            } else {
                v.iter_mut().for_each(|z| *z = fallback);
            }
        }
    }
    NormalizedObservations {
        frames,
        bins,
        dims: d,
        data,
    }
}

/// Mixture weights `pi (K, F)` and shape matrices `B (K, F, D, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams<T> {
    classes: usize,
    bins: usize,
    dims: usize,
    weights: Vec<T>,
    shapes: Vec<Complex<T>>,
}

impl<T: Scalar> MixtureParams<T> {
    pub fn new(classes: usize, bins: usize, dims: usize, weights: Vec<T>, shapes: Vec<Complex<T>>) -> Result<Self> {
        if weights.len() != classes * bins || shapes.len() != classes * bins * dims * dims {
            bail!(
                Shape,
                "mixture params with {} weights and {} shape entries do not fit K={classes}, F={bins}, D={dims}",
                weights.len(),
                shapes.len()
            );
        }
        Ok(Self {
            classes,
            bins,
            dims,
            weights,
            shapes,
        })
    }

    /// Uniform weights and identity shapes.
    pub fn identity(classes: usize, bins: usize, dims: usize) -> Self {
        let mut shapes = vec![czero::<T>(); classes * bins * dims * dims];
        for m in shapes.chunks_mut(dims * dims) {
            for i in 0..dims {
                m[i * dims + i] = Complex::new(T::one(), T::zero());
            }
        }
        Self {
            classes,
            bins,
            dims,
            weights: vec![T::one() / T::of_usize(classes); classes * bins],
            shapes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn weight(&self, k: usize, f: usize) -> T {
        self.weights[k * self.bins + f]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn shape(&self, k: usize, f: usize) -> &[Complex<T>] {
        let n = self.dims * self.dims;
        let o = (k * self.bins + f) * n;
        &self.shapes[o..o + n]
    }

    pub fn shapes(&self) -> &[Complex<T>] {
        &self.shapes
    }

    /// Checks the weight simplex and Hermitian symmetry of every shape.
    pub fn validate(&self) -> Result<()> {
        let tol = T::of(1e-10).max(T::kernel_tol());
        for f in 0..self.bins {
            let s: T = (0..self.classes).map(|k| self.weight(k, f)).sum();
            if (s - T::one()).abs() > tol || (0..self.classes).any(|k| self.weight(k, f) < T::zero()) {
                bail!(InvalidArgument, "mixture weights at frequency {f} are not a distribution");
            }
            for k in 0..self.classes {
                let defect = linalg::hermitian_defect(self.shape(k, f), self.dims);
                if defect > tol {
                    return Err(Error::NotHermitian {
                        index: vec![k, f],
                        defect: defect.as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> MixtureParams<U> {
        MixtureParams {
            classes: self.classes,
            bins: self.bins,
            dims: self.dims,
            weights: self.weights.iter().map(|&v| f(v)).collect(),
            shapes: self.shapes.iter().map(|z| Complex::new(f(z.re), f(z.im))).collect(),
        }
    }
}

/// `ln((D-1)!) - ln 2 - D ln(pi)`.
pub fn log_normalizer<T: Scalar>(d: usize) -> T {
    let lf: f64 = (1..d).map(|i| (i as f64).ln()).sum();
    T::of(lf - std::f64::consts::LN_2 - d as f64 * std::f64::consts::PI.ln())
}

/// One regularized, factored mixture component.
#[derive(Clone, Debug)]
pub struct CacgComponent<T> {
    dims: usize,
    chol: Vec<Complex<T>>,
    constant: T,
}

impl<T: Scalar> CacgComponent<T> {
    /// Factors `B + 1e-10 tr(B)/D I`; `None` if it is not positive definite.
    pub fn new(b: &[Complex<T>], d: usize) -> Option<Self> {
        let mut h = b.to_vec();
        linalg::add_ridge(&mut h, d, T::of(linalg::RIDGE));
        let chol = linalg::cholesky(&h, d)?;
        let constant = log_normalizer::<T>(d) - linalg::cholesky_log_det(&chol, d);
        Some(Self { dims: d, chol, constant })
    }

    /// `y^H B^{-1} y`.
    pub fn quadratic(&self, y: &[Complex<T>]) -> T {
        let mut u = y.to_vec();
        linalg::forward_substitute(&self.chol, self.dims, &mut u);
        // y^H (L L^H)^{-1} y = |L^{-1} y|^2
        u.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn log_density(&self, y: &[Complex<T>]) -> T {
        self.constant - T::of_usize(self.dims) * self.quadratic(y).ln()
    }
}

/// `ln p(y | B)` for a unit vector `y`, evaluated in the log domain.
pub fn cacg_log_density<T: Scalar>(y: &[Complex<T>], b: &[Complex<T>]) -> Result<T> {
    let d = y.len();
    if b.len() != d * d {
        bail!(Shape, "shape matrix with {} entries for a {d}-dimensional observation", b.len());
    }
    let c = CacgComponent::new(b, d).ok_or(Error::NotPositiveDefinite { index: vec![] })?;
    let v = c.log_density(y);
    if !v.is_finite() {
        bail!(NonFinite, "cACG log density is {v}");
    }
    Ok(v)
}

/// Starting point of the shape fixed-point iteration.
#[derive(Clone, Copy, Debug)]
pub enum ShapeInit<'a, T> {
    Identity,
    Previous(&'a MixtureParams<T>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MStepDiagnostics {
    /// (class, frequency) pairs with zero affiliation mass; their shape was
    /// reset to the identity.
    pub empty: Vec<(usize, usize)>,
}

/// M-step: mixture weights from mean affiliations and shape matrices from
/// `fixed_point_iters` applications of the weighted fixed-point update.
///
/// Applications after the first (or any started from a previous estimate)
/// are rescaled to `tr(B) = D`; the density is invariant to the scale of `B`.
pub fn m_step<T: Scalar>(
    obs: &NormalizedObservations<T>,
    gamma: &ClassAffiliations<T>,
    init: ShapeInit<'_, T>,
    fixed_point_iters: usize,
) -> Result<(MixtureParams<T>, MStepDiagnostics)> {
    let (k, frames, bins, d) = (gamma.classes(), obs.frames, obs.bins, obs.dims);
    if gamma.frames() != frames || gamma.bins() != bins {
        bail!(
            Shape,
            "affiliations ({}x{}) do not match observations ({frames}x{bins})",
            gamma.frames(),
            gamma.bins()
        );
    }
    if frames == 0 {
        bail!(InvalidArgument, "m_step needs at least one frame");
    }
    if fixed_point_iters == 0 {
        bail!(InvalidArgument, "m_step needs at least one fixed-point application");
    }
    if let ShapeInit::Previous(p) = init {
        if p.classes != k || p.bins != bins || p.dims != d {
            bail!(Shape, "previous mixture params do not match K={k}, F={bins}, D={d}");
        }
    }
    let per_bin: Vec<Result<BinParams<T>>> = (0..bins)
        .into_par_iter()
        .map(|f| m_step_bin(obs, gamma, init, fixed_point_iters, f))
        .collect();
    let mut weights = vec![T::zero(); k * bins];
    let mut shapes = vec![czero::<T>(); k * bins * d * d];
    let mut diag = MStepDiagnostics::default();
    for (f, r) in per_bin.into_iter().enumerate() {
        let bp = r?;
        for kk in 0..k {
            weights[kk * bins + f] = bp.weights[kk];
            let o = (kk * bins + f) * d * d;
            shapes[o..o + d * d].copy_from_slice(&bp.shapes[kk * d * d..(kk + 1) * d * d]);
            if bp.empty[kk] {
                diag.empty.push((kk, f));
            }
        }
    }
    diag.empty.sort_unstable();
    Ok((MixtureParams::new(k, bins, d, weights, shapes)?, diag))
}

struct BinParams<T> {
    weights: Vec<T>,
    shapes: Vec<Complex<T>>,
    empty: Vec<bool>,
}

fn m_step_bin<T: Scalar>(
    obs: &NormalizedObservations<T>,
    gamma: &ClassAffiliations<T>,
    init: ShapeInit<'_, T>,
    iters: usize,
    f: usize,
) -> Result<BinParams<T>> {
    let (k, frames, d) = (gamma.classes(), obs.frames, obs.dims);
    let dt = T::of_usize(d);
    let mut weights = vec![T::zero(); k];
    let mut shapes = vec![czero::<T>(); k * d * d];
    let mut empty = vec![false; k];
    for kk in 0..k {
        let mass: T = (0..frames).map(|t| gamma.get(kk, t, f)).sum();
        weights[kk] = mass / T::of_usize(frames);
        let out = &mut shapes[kk * d * d..(kk + 1) * d * d];
        if !(mass > T::zero()) {
            empty[kk] = true;
            for i in 0..d {
                out[i * d + i] = Complex::new(T::one(), T::zero());
            }
            continue;
        }
        let mut prev: Option<Vec<Complex<T>>> = match init {
            ShapeInit::Identity => None,
            ShapeInit::Previous(p) => Some(p.shape(kk, f).to_vec()),
        };
        for _ in 0..iters {
            let comp = match &prev {
                None => None,
                Some(b) => Some(CacgComponent::new(b, d).ok_or(Error::NotPositiveDefinite { index: vec![kk, f] })?),
            };
            let mut acc = vec![czero::<T>(); d * d];
            for t in 0..frames {
                let g = gamma.get(kk, t, f);
                if g == T::zero() {
                    continue;
                }
                let y = obs.vector(t, f);
                let q = match &comp {
                    None => y.iter().map(|z| z.norm_sqr()).sum(),
                    Some(c) => c.quadratic(y),
                };
                let w = g / q;
                for i in 0..d {
                    let yi = y[i] * w;
                    for j in i..d {
                        acc[i * d + j] += yi * y[j].conj();
                    }
                }
            }
            let scale = dt / mass;
            for i in 0..d {
                acc[i * d + i].im = T::zero();
                for j in i..d {
                    acc[i * d + j] = acc[i * d + j] * scale;
                    acc[j * d + i] = acc[i * d + j].conj();
                }
            }
            if prev.is_some() {
                let tr = linalg::trace(&acc, d);
                if tr > T::zero() {
                    let s = dt / tr;
                    acc.iter_mut().for_each(|z| *z = *z * s);
                }
            }
            prev = Some(acc);
        }
        out.copy_from_slice(&prev.expect("at least one application"));
    }
    Ok(BinParams { weights, shapes, empty })
}

/// Factors every (k, f) component once.
fn components<T: Scalar>(params: &MixtureParams<T>) -> Result<Vec<CacgComponent<T>>> {
    let (k, bins, d) = (params.classes, params.bins, params.dims);
    let mut out = Vec::with_capacity(k * bins);
    for kk in 0..k {
        for f in 0..bins {
            out.push(CacgComponent::new(params.shape(kk, f), d).ok_or(Error::NotPositiveDefinite { index: vec![kk, f] })?);
        }
    }
    Ok(out)
}

fn check_compat<T: Scalar>(obs: &NormalizedObservations<T>, params: &MixtureParams<T>) -> Result<()> {
    if obs.bins != params.bins || obs.dims != params.dims {
        bail!(
            Shape,
            "observations (F={}, D={}) do not match mixture params (F={}, D={})",
            obs.bins,
            obs.dims,
            params.bins,
            params.dims
        );
    }
    Ok(())
}

/// Per-(k, t, f) log densities `ln p(y_tf | B_kf)`, laid out (K, T, F).
pub fn log_densities<T: Scalar>(obs: &NormalizedObservations<T>, params: &MixtureParams<T>) -> Result<Vec<T>> {
    check_compat(obs, params)?;
    let comps = components(params)?;
    let (k, frames, bins) = (params.classes, obs.frames, obs.bins);
    let per_bin: Vec<Vec<T>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let mut v = Vec::with_capacity(k * frames);
            for kk in 0..k {
                let c = &comps[kk * bins + f];
                for t in 0..frames {
                    v.push(c.log_density(obs.vector(t, f)));
                }
            }
            v
        })
        .collect();
    let mut out = vec![T::zero(); k * frames * bins];
    for (f, v) in per_bin.iter().enumerate() {
        for kk in 0..k {
            for t in 0..frames {
                let x = v[kk * frames + t];
                if !x.is_finite() {
                    bail!(NonFinite, "log density {x} at t={t}, f={f}, k={kk}");
                }
                out[(kk * frames + t) * bins + f] = x;
            }
        }
    }
    Ok(out)
}

pub(crate) fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// E-step: posterior class affiliations via log-sum-exp.
pub fn e_step<T: Scalar>(obs: &NormalizedObservations<T>, params: &MixtureParams<T>) -> Result<ClassAffiliations<T>> {
    let lp = log_densities(obs, params)?;
    let (k, frames, bins) = (params.classes, obs.frames, obs.bins);
    let mut gamma = vec![T::zero(); k * frames * bins];
    let mut lj = vec![T::zero(); k];
    for t in 0..frames {
        for f in 0..bins {
            for kk in 0..k {
                lj[kk] = params.weight(kk, f).ln() + lp[(kk * frames + t) * bins + f];
            }
            let z = logsumexp(&lj);
            if z == T::neg_infinity() {
                bail!(NonFinite, "every class has zero posterior mass at t={t}, f={f}");
            }
            for kk in 0..k {
                gamma[(kk * frames + t) * bins + f] = (lj[kk] - z).exp();
            }
        }
    }
    ClassAffiliations::from_vec(k, frames, bins, gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodVariant {
    /// `sum_tf ln sum_k pi_kf p(y_tf | B_kf)`.
    Ml,
    /// As [`LikelihoodVariant::Ml`] with `pi_kf = 1/K`.
    MlEqual,
    /// `sum_ktf g_ktf ln(pi_kf p(y_tf | B_kf))` for given affiliations `g`.
    Auxiliary,
}

/// Floor applied to mixture weights before logarithms in the auxiliary function.
pub const WEIGHT_FLOOR: f64 = 1e-10;

pub fn log_likelihood<T: Scalar>(
    obs: &NormalizedObservations<T>,
    params: &MixtureParams<T>,
    aux: Option<&ClassAffiliations<T>>,
    variant: LikelihoodVariant,
) -> Result<T> {
    let lp = log_densities(obs, params)?;
    let (k, frames, bins) = (params.classes, obs.frames, obs.bins);
    let ln_k = T::of_usize(k).ln();
    let mut total = T::zero();
    let mut lj = vec![T::zero(); k];
    match variant {
        LikelihoodVariant::Ml | LikelihoodVariant::MlEqual => {
            for f in 0..bins {
                for t in 0..frames {
                    for kk in 0..k {
                        let lw = if variant == LikelihoodVariant::Ml { params.weight(kk, f).ln() } else { -ln_k };
                        lj[kk] = lw + lp[(kk * frames + t) * bins + f];
                    }
                    total += logsumexp(&lj);
                }
            }
        }
        LikelihoodVariant::Auxiliary => {
            let Some(g) = aux else {
                bail!(InvalidArgument, "auxiliary likelihood needs affiliations");
            };
            if g.classes() != k || g.frames() != frames || g.bins() != bins {
                bail!(Shape, "auxiliary affiliations do not match K={k}, T={frames}, F={bins}");
            }
            let floor = T::of(WEIGHT_FLOOR);
            for kk in 0..k {
                for f in 0..bins {
                    let lw = params.weight(kk, f).max(floor).ln();
                    for t in 0..frames {
                        total += g.get(kk, t, f) * (lw + lp[(kk * frames + t) * bins + f]);
                    }
                }
            }
        }
    }
    if !total.is_finite() {
        bail!(NonFinite, "log-likelihood is {total}");
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug)]
pub enum EmInit<'a, T> {
    Affiliations(&'a ClassAffiliations<T>),
    /// Random affiliations from the given seed.
    Random(u64),
}

#[derive(Clone, Debug)]
pub struct EmFit<T> {
    pub params: MixtureParams<T>,
    pub gamma: ClassAffiliations<T>,
    /// `Ml` log-likelihood after the M-step of every iteration.
    pub trace: Vec<f64>,
    pub diagnostics: MStepDiagnostics,
}

/// Random affiliations, normalized over classes.
pub fn random_affiliations<T: Scalar>(classes: usize, frames: usize, bins: usize, seed: u64) -> ClassAffiliations<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ClassAffiliations::from_vec(
        classes,
        frames,
        bins,
        (0..classes * frames * bins)
            .map(|_| T::of(rng.random_range(0.01..1.0)))
            .collect(),
    )
    .expect("consistent size");
    g.renormalize(T::zero());
    g
}

/// Plain EM over `iterations` rounds of M-step then E-step.
///
/// The first M-step starts its shape update from the identity, later ones
/// from the previous estimate, each with `fixed_point_iters` applications.
pub fn em_fit<T: Scalar>(
    obs: &NormalizedObservations<T>,
    classes: usize,
    iterations: usize,
    init: EmInit<'_, T>,
    fixed_point_iters: usize,
) -> Result<EmFit<T>> {
    if iterations == 0 {
        bail!(InvalidArgument, "em_fit needs at least one iteration");
    }
    if classes == 0 {
        bail!(InvalidArgument, "em_fit needs at least one class");
    }
    let mut gamma = match init {
        EmInit::Affiliations(g) => {
            if g.classes() != classes {
                bail!(Shape, "initial affiliations have {} classes, expected {classes}", g.classes());
            }
            g.clone()
        }
        EmInit::Random(seed) => random_affiliations(classes, obs.frames, obs.bins, seed),
    };
    let mut params: Option<MixtureParams<T>> = None;
    let mut trace = Vec::with_capacity(iterations);
    let mut diagnostics = MStepDiagnostics::default();
    for _ in 0..iterations {
        let init = match &params {
            None => ShapeInit::Identity,
            Some(p) => ShapeInit::Previous(p),
        };
        let (p, diag) = m_step(obs, &gamma, init, fixed_point_iters)?;
        trace.push(log_likelihood(obs, &p, None, LikelihoodVariant::Ml)?.as_f64());
        gamma = e_step(obs, &p)?;
        diagnostics = diag;
        params = Some(p);
    }
    Ok(EmFit {
        params: params.expect("iterations >= 1"),
        gamma,
        trace,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn normalize_examples() {
        let spec = ComplexSpectrogram::from_vec(2, 1, 2, vec![c(3.0, 0.0), c(0.0, 0.0), c(0.0, 4.0), c(0.0, 0.0)]).unwrap();
        let obs = normalize(&spec);
        let v = obs.vector(0, 0);
        assert!((v[0] - c(0.6, 0.0)).norm() < 1e-15 && (v[1] - c(0.0, 0.8)).norm() < 1e-15);
        let z = obs.vector(0, 1);
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(z, &[c(s, 0.0), c(s, 0.0)]);
    }

    #[test]
    fn density_constant_on_the_circle_for_one_channel() {
        for b in [0.1, 1.0, 7.5] {
            let v = cacg_log_density(&[c(0.6, 0.8)], &[c(b, 0.0)]).unwrap();
            assert!((v - (1.0 / (2.0 * std::f64::consts::PI)).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn density_at_identity_for_two_channels() {
        let s = 1.0 / 2f64.sqrt();
        let eye = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)];
        let v = cacg_log_density(&[c(s, 0.0), c(0.0, s)], &eye).unwrap();
        let pi = std::f64::consts::PI;
        assert!((v - (1.0 / (2.0 * pi * pi)).ln()).abs() < 1e-9);
    }

    #[test]
    fn k1_em_converges_immediately() {
        let spec = ComplexSpectrogram::from_vec(
            2,
            3,
            1,
            vec![c(1.0, 0.0), c(0.2, 0.1), c(-0.3, 0.5), c(0.4, 0.0), c(1.0, 1.0), c(0.0, -2.0)],
        )
        .unwrap();
        let obs = normalize(&spec);
        let fit = em_fit(&obs, 1, 3, EmInit::Random(1), 1).unwrap();
        assert!(fit.gamma.data().iter().all(|&g| g == 1.0));
        assert!(fit.params.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn zero_mass_class_is_flagged() {
        let spec = ComplexSpectrogram::from_vec(2, 2, 1, vec![c(1.0, 0.0), c(0.5, 0.0), c(0.0, 1.0), c(1.0, 0.0)]).unwrap();
        let obs = normalize(&spec);
        let g = ClassAffiliations::from_vec(2, 2, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let (p, diag) = m_step(&obs, &g, ShapeInit::Identity, 1).unwrap();
        assert_eq!(diag.empty, vec![(1, 0)]);
        assert_eq!(p.shape(1, 0), &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    }
}
