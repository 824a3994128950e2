//! Mask-driven spatial covariance estimation and the GEV (max-SNR) beamformer.
//!
//! Matrices are stored per frequency as row-major `d x d` blocks, so a
//! `(F, D, D)` stack is a flat vector of length `F * D * D`.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{bail, Error, Result};
use crate::linalg;
use crate::scalar::{czero, Scalar};
use crate::types::{ClassAffiliations, ComplexSpectrogram};

/// Speech and noise spatial covariance matrices, each `(F, D, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariancePair<T> {
    pub bins: usize,
    pub dims: usize,
    pub speech: Vec<Complex<T>>,
    pub noise: Vec<Complex<T>>,
}

impl<T: Scalar> CovariancePair<T> {
    pub fn new(bins: usize, dims: usize, speech: Vec<Complex<T>>, noise: Vec<Complex<T>>) -> Result<Self> {
        let n = bins * dims * dims;
        if speech.len() != n || noise.len() != n {
            bail!(Shape, "covariance stacks must have {n} entries, got {} and {}", speech.len(), noise.len());
        }
        Ok(Self { bins, dims, speech, noise })
    }

    pub fn speech_at(&self, f: usize) -> &[Complex<T>] {
        let dd = self.dims * self.dims;
        &self.speech[f * dd..(f + 1) * dd]
    }

    pub fn noise_at(&self, f: usize) -> &[Complex<T>] {
        let dd = self.dims * self.dims;
        &self.noise[f * dd..(f + 1) * dd]
    }
}

/// Bins where a mask had no mass and the covariance fell back to a scaled
/// identity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CovarianceDiagnostics {
    /// `(class, frequency)` pairs.
    pub empty: Vec<(usize, usize)>,
}

/// Mask-weighted covariance `sum_t m_tf y y^H / sum_t m_tf` for every bin.
///
/// `mask` is laid out (T, F). A bin without mask mass gets
/// `tr(R_f) / D * I` where `R_f` is the unweighted sample covariance (or `I`
/// when the bin is silent); the boolean output flags those bins.
pub fn masked_covariance<T: Scalar>(spec: &ComplexSpectrogram<T>, mask: &[T]) -> Result<(Vec<Complex<T>>, Vec<bool>)> {
    let (d, frames, bins) = (spec.channels(), spec.frames(), spec.bins());
    if mask.len() != frames * bins {
        bail!(Shape, "mask has {} entries, spectrogram needs {frames}x{bins}", mask.len());
    }
    let per_bin: Vec<(Vec<Complex<T>>, bool)> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let mut acc = vec![czero::<T>(); d * d];
            let mut plain = T::zero();
            let mut mass = T::zero();
            let mut y = vec![czero::<T>(); d];
            for t in 0..frames {
                for (c, v) in y.iter_mut().enumerate() {
                    *v = spec.get(c, t, f);
                }
                plain += y.iter().map(|z| z.norm_sqr()).sum::<T>();
                let m = mask[t * bins + f];
                if m == T::zero() {
                    continue;
                }
                mass += m;
                for i in 0..d {
                    let yi = y[i] * m;
                    for j in 0..d {
                        acc[i * d + j] += yi * y[j].conj();
                    }
                }
            }
            if mass > T::zero() {
                acc.iter_mut().for_each(|z| *z = *z / mass);
                (acc, false)
            } else {
                let load = if plain > T::zero() {
                    plain / T::of_usize(frames * d)
                } else {
                    T::one()
                };
                let mut eye = vec![czero::<T>(); d * d];
                for i in 0..d {
                    eye[i * d + i] = Complex::new(load, T::zero());
                }
                (eye, true)
            }
        })
        .collect();
    let mut out = Vec::with_capacity(bins * d * d);
    let mut empty = Vec::with_capacity(bins);
    for (m, e) in per_bin {
        out.extend(m);
        empty.push(e);
    }
    Ok((out, empty))
}

/// Speech and noise covariances from a `K`-class mask set.
pub fn estimate_covariances<T: Scalar>(
    spec: &ComplexSpectrogram<T>,
    masks: &ClassAffiliations<T>,
    speech: usize,
    noise: usize,
) -> Result<(CovariancePair<T>, CovarianceDiagnostics)> {
    let k = masks.classes();
    if speech >= k || noise >= k || speech == noise {
        bail!(InvalidArgument, "speech class {speech} and noise class {noise} must be distinct and < {k}");
    }
    if masks.frames() != spec.frames() || masks.bins() != spec.bins() {
        bail!(
            Shape,
            "masks ({}x{}) do not match spectrogram ({}x{})",
            masks.frames(),
            masks.bins(),
            spec.frames(),
            spec.bins()
        );
    }
    let (xx, ex) = masked_covariance(spec, masks.class(speech))?;
    let (nn, en) = masked_covariance(spec, masks.class(noise))?;
    let mut diag = CovarianceDiagnostics::default();
    for (f, &e) in ex.iter().enumerate() {
        if e {
            diag.empty.push((speech, f));
        }
    }
    for (f, &e) in en.iter().enumerate() {
        if e {
            diag.empty.push((noise, f));
        }
    }
    diag.empty.sort_unstable();
    Ok((CovariancePair::new(spec.bins(), spec.channels(), xx, nn)?, diag))
}

/// Covariances of known speech and noise components (all-ones masks).
pub fn oracle_covariances<T: Scalar>(
    speech: &ComplexSpectrogram<T>,
    noise: &ComplexSpectrogram<T>,
) -> Result<CovariancePair<T>> {
    let ones = vec![T::one(); speech.frames() * speech.bins()];
    let (xx, _) = masked_covariance(speech, &ones)?;
    let (nn, _) = masked_covariance(noise, &ones)?;
    if speech.bins() != noise.bins() || speech.channels() != noise.channels() {
        bail!(Shape, "speech and noise spectrograms differ in shape");
    }
    CovariancePair::new(speech.bins(), speech.channels(), xx, nn)
}

/// Divides every `(D, D)` block by its trace.
pub fn normalize_noise_covariance<T: Scalar>(noise: &[Complex<T>], dims: usize) -> Result<Vec<Complex<T>>> {
    let dd = dims * dims;
    if dims == 0 || noise.len() % dd != 0 {
        bail!(Shape, "noise stack of {} entries is not a multiple of {dims}x{dims}", noise.len());
    }
    let mut out = noise.to_vec();
    for (f, block) in out.chunks_mut(dd).enumerate() {
        let tr = linalg::trace(block, dims);
        if !(tr > T::zero()) {
            bail!(InvalidArgument, "noise covariance at frequency {f} has nonpositive trace {tr}");
        }
        block.iter_mut().for_each(|z| *z = *z / tr);
    }
    Ok(out)
}

/// Per-frequency beamformer vectors `(F, D)` and generalized eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerWeights<T> {
    pub bins: usize,
    pub dims: usize,
    pub w: Vec<Complex<T>>,
    pub lambda: Vec<T>,
}

impl<T: Scalar> BeamformerWeights<T> {
    pub fn at(&self, f: usize) -> &[Complex<T>] {
        &self.w[f * self.dims..(f + 1) * self.dims]
    }

    /// The same unit vector at every frequency.
    pub fn constant(bins: usize, w: &[Complex<T>]) -> Self {
        Self {
            bins,
            dims: w.len(),
            w: (0..bins).flat_map(|_| w.iter().copied()).collect(),
            lambda: vec![T::one(); bins],
        }
    }
}

/// Rotates `w` so its largest-magnitude entry is real and positive.
pub fn canonical_phase<T: Scalar>(w: &mut [Complex<T>]) {
    let Some(big) = w.iter().copied().max_by(|a, b| a.norm_sqr().partial_cmp(&b.norm_sqr()).unwrap_or(std::cmp::Ordering::Equal))
    else {
        return;
    };
    let r = big.norm();
    if r > T::zero() {
        let rot = big.conj() / r;
        w.iter_mut().for_each(|z| *z = *z * rot);
    }
}

/// Principal generalized eigenvector of one `(Phi_xx, Phi_nn)` pair, with
/// `Phi_nn` already trace-normalized.
fn gev_bin<T: Scalar>(xx: &[Complex<T>], nn: &[Complex<T>], d: usize, f: usize) -> Result<(Vec<Complex<T>>, T)> {
    let mut reg = nn.to_vec();
    linalg::add_ridge(&mut reg, d, T::of(linalg::RIDGE));
    let l = linalg::cholesky(&reg, d).ok_or(Error::NotPositiveDefinite { index: vec![f] })?;
    // A = L^{-1} Phi_xx, then M = L^{-1} A^H = L^{-1} Phi_xx L^{-H}
    let mut a = vec![czero::<T>(); d * d];
    let mut col = vec![czero::<T>(); d];
    for j in 0..d {
        for i in 0..d {
            col[i] = xx[i * d + j];
        }
        linalg::forward_substitute(&l, d, &mut col);
        for i in 0..d {
            a[i * d + j] = col[i];
        }
    }
    let mut m = vec![czero::<T>(); d * d];
    for j in 0..d {
        for i in 0..d {
            col[i] = a[j * d + i].conj();
        }
        linalg::forward_substitute(&l, d, &mut col);
        for i in 0..d {
            m[i * d + j] = col[i];
        }
    }
    let (values, vectors) = linalg::hermitian_eigh(&m, d);
    let mut u: Vec<Complex<T>> = (0..d).map(|i| vectors[i * d + d - 1]).collect();
    let n = linalg::norm(&u);
    u.iter_mut().for_each(|z| *z = *z / n);
    linalg::back_substitute_adjoint(&l, d, &mut u);
    canonical_phase(&mut u);
    Ok((u, values[d - 1]))
}

/// GEV beamformer: the noise covariance is trace-normalized, Cholesky
/// whitened and the principal eigenvector of the whitened speech covariance
/// is mapped back with `L^{-H}`.
pub fn gev_weights<T: Scalar>(cov: &CovariancePair<T>) -> Result<BeamformerWeights<T>> {
    let d = cov.dims;
    let nn = normalize_noise_covariance(&cov.noise, d)?;
    let dd = d * d;
    let per_bin: Vec<Result<(Vec<Complex<T>>, T)>> = (0..cov.bins)
        .into_par_iter()
        .map(|f| gev_bin(cov.speech_at(f), &nn[f * dd..(f + 1) * dd], d, f))
        .collect();
    let mut w = Vec::with_capacity(cov.bins * d);
    let mut lambda = Vec::with_capacity(cov.bins);
    for r in per_bin {
        let (v, l) = r?;
        w.extend(v);
        lambda.push(l);
    }
    Ok(BeamformerWeights {
        bins: cov.bins,
        dims: d,
        w,
        lambda,
    })
}

fn hermitian_form<T: Scalar>(a: &[Complex<T>], d: usize, w: &[Complex<T>]) -> T {
    let aw = linalg::mat_vec(a, d, w);
    w.iter().zip(&aw).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `w^H Phi_xx w / w^H Phi_nn w`.
pub fn rayleigh_quotient<T: Scalar>(xx: &[Complex<T>], nn: &[Complex<T>], d: usize, w: &[Complex<T>]) -> T {
    hermitian_form(xx, d, w) / hermitian_form(nn, d, w)
}

/// `||Phi_xx w - lambda Phi_nn w|| / ||Phi_xx w||`.
pub fn eigen_residual<T: Scalar>(xx: &[Complex<T>], nn: &[Complex<T>], d: usize, w: &[Complex<T>], lambda: T) -> T {
    let a = linalg::mat_vec(xx, d, w);
    let b = linalg::mat_vec(nn, d, w);
    let r: Vec<Complex<T>> = a.iter().zip(&b).map(|(x, y)| *x - *y * lambda).collect();
    let na = linalg::norm(&a);
    if na > T::zero() {
        linalg::norm(&r) / na
    } else {
        linalg::norm(&r)
    }
}

/// `x_tf = w_f^H y_tf` as a one-channel spectrogram.
pub fn apply_beamformer<T: Scalar>(spec: &ComplexSpectrogram<T>, w: &BeamformerWeights<T>) -> Result<ComplexSpectrogram<T>> {
    let (d, frames, bins) = (spec.channels(), spec.frames(), spec.bins());
    if w.dims != d || w.bins != bins {
        bail!(Shape, "weights ({}x{}) do not match spectrogram ({bins} bins, {d} channels)", w.bins, w.dims);
    }
    let mut out = ComplexSpectrogram::zeros(1, frames, bins);
    for t in 0..frames {
        for f in 0..bins {
            let wf = w.at(f);
            let v = (0..d).fold(czero::<T>(), |acc, c| acc + wf[c].conj() * spec.get(c, t, f));
            out.set(0, t, f, v);
        }
    }
    Ok(out)
}

/// Mean over frequencies of `lambda_max(Phi) / tr(Phi)` for one class's
/// mask-weighted covariance. Close to one for a coherent point source, close
/// to `1 / D` for spatially white or diffuse sound.
pub fn directivity<T: Scalar>(spec: &ComplexSpectrogram<T>, mask: &[T]) -> Result<T> {
    let d = spec.channels();
    let (cov, _) = masked_covariance(spec, mask)?;
    let bins = spec.bins();
    let mut acc = T::zero();
    for block in cov.chunks(d * d) {
        let tr = linalg::trace(block, d);
        if tr > T::zero() {
            let (values, _) = linalg::hermitian_eigh(block, d);
            acc += values[d - 1] / tr;
        }
    }
    Ok(acc / T::of_usize(bins.max(1)))
}

/// Picks the most directional class as speech; the noise class is the least
/// directional one. Returns `(speech, noise)`.
pub fn select_speech_class<T: Scalar>(spec: &ComplexSpectrogram<T>, masks: &ClassAffiliations<T>) -> Result<(usize, usize)> {
    let k = masks.classes();
    if k < 2 {
        bail!(InvalidArgument, "need at least two classes to pick speech and noise");
    }
    let scores: Vec<T> = (0..k).map(|c| directivity(spec, masks.class(c))).collect::<Result<_>>()?;
    let cmp = |a: &(usize, &T), b: &(usize, &T)| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal);
    let speech = scores.iter().enumerate().max_by(cmp).map(|(i, _)| i).unwrap_or(0);
    let noise = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != speech)
        .min_by(cmp)
        .map(|(i, _)| i)
        .unwrap_or(1);
    Ok((speech, noise))
}

/// Mask-driven enhancement: choose classes, estimate covariances, compute
/// GEV weights and beamform.
pub fn enhance<T: Scalar>(
    spec: &ComplexSpectrogram<T>,
    masks: &ClassAffiliations<T>,
) -> Result<(ComplexSpectrogram<T>, BeamformerWeights<T>, CovarianceDiagnostics)> {
    let (speech, noise) = select_speech_class(spec, masks)?;
    let (cov, diag) = estimate_covariances(spec, masks, speech, noise)?;
    let w = gev_weights(&cov)?;
    Ok((apply_beamformer(spec, &w)?, w, diag))
}
