mod common;

use beamlearn::beamformer::*;
use beamlearn::scene::{snr_metrics, synth_scene, NoiseModel, SceneSetConfig};
use beamlearn::stft::{stft, StftConfig};
use beamlearn::types::{ClassAffiliations, ComplexSpectrogram};
use common::*;
use num_complex::Complex64 as C64;
use rand::Rng;

fn random_spec(seed: u64, d: usize, frames: usize, bins: usize) -> ComplexSpectrogram<f64> {
    let mut r = rng(seed);
    ComplexSpectrogram::from_vec(d, frames, bins, random_cvec(&mut r, d * frames * bins)).unwrap()
}

fn herm_form(a: &[C64], d: usize, w: &[C64]) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            s += w[i].conj() * a[i * d + j] * w[j];
        }
    }
    s.re
}

#[test]
fn masked_covariance_matches_double_loop() {
    let (d, frames, bins) = (3, 20, 5);
    let spec = random_spec(1, d, frames, bins);
    let mut r = rng(2);
    let mask: Vec<f64> = (0..frames * bins).map(|_| r.random_range(0.0..1.0)).collect();
    let (cov, empty) = masked_covariance(&spec, &mask).unwrap();
    assert!(empty.iter().all(|e| !e));
    for f in 0..bins {
        let mass: f64 = (0..frames).map(|t| mask[t * bins + f]).sum();
        for i in 0..d {
            for j in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for t in 0..frames {
                    acc += spec.get(i, t, f) * spec.get(j, t, f).conj() * mask[t * bins + f];
                }
                let got = cov[(f * d + i) * d + j];
                assert!((got - acc / mass).norm() < 1e-12, "f {f} ({i},{j})");
            }
        }
    }
}

#[test]
fn single_frame_mask_gives_rank_one_covariance() {
    let (d, frames, bins) = (3, 6, 2);
    let spec = random_spec(3, d, frames, bins);
    let mut mask = vec![0.0; frames * bins];
    for f in 0..bins {
        mask[4 * bins + f] = 0.7;
    }
    let (cov, _) = masked_covariance(&spec, &mask).unwrap();
    for f in 0..bins {
        for i in 0..d {
            for j in 0..d {
                let expect = spec.get(i, 4, f) * spec.get(j, 4, f).conj();
                assert!((cov[(f * d + i) * d + j] - expect).norm() < 1e-14);
            }
        }
    }
}

#[test]
fn empty_mask_falls_back_to_scaled_identity_with_diagnostic() {
    let spec = random_spec(4, 2, 8, 3);
    let mut m = ClassAffiliations::uniform(2, 8, 3);
    for t in 0..8 {
        m.set(0, t, 1, 0.0);
        m.set(1, t, 1, 1.0);
    }
    let (cov, diag) = estimate_covariances(&spec, &m, 0, 1).unwrap();
    assert_eq!(diag.empty, vec![(0, 1)]);
    let x = cov.speech_at(1);
    assert!(x[1].norm() == 0.0 && x[2].norm() == 0.0 && (x[0] - x[3]).norm() < 1e-15 && x[0].re > 0.0);
    assert!(estimate_covariances(&spec, &m, 0, 0).is_err());
}

#[test]
fn noise_normalization_examples() {
    let mut r = rng(5);
    let a = random_pd(&mut r, 4);
    let n = normalize_noise_covariance(&a, 4).unwrap();
    let tr: f64 = (0..4).map(|i| n[i * 5].re).sum();
    assert!((tr - 1.0).abs() < 1e-12);
    let five: Vec<C64> = a.iter().map(|z| z * 5.0).collect();
    let n5 = normalize_noise_covariance(&five, 4).unwrap();
    assert!(n.iter().zip(&n5).all(|(x, y)| (x - y).norm() < 1e-15));
}

#[test]
fn whitened_rank_one_example() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let dvec = [C64::new(s, 0.0), C64::new(0.0, s)];
    let xx: Vec<C64> = (0..4).map(|i| dvec[i / 2] * dvec[i % 2].conj()).collect();
    let nn = vec![C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.0)];
    let w = gev_weights(&CovariancePair::new(1, 2, xx.clone(), nn.clone()).unwrap()).unwrap();
    let wf = w.at(0);
    // w parallel to d: |<d, w>| = ||w||
    let inner: C64 = dvec.iter().zip(wf).map(|(a, b)| a.conj() * b).sum();
    let norm = wf.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!((inner.norm() - norm).abs() < 1e-12);
    // the solver factors the ridged noise matrix (1 + 1e-10) I / 2
    let nr = regularized(&nn, 2)[0].re;
    assert!((w.lambda[0] - 1.0 / nr).abs() < 1e-12, "{}", w.lambda[0]);
    assert!(eigen_residual(&xx, &nn, 2, wf, w.lambda[0]) < 1e-8);
    // unit-norm eigenvector in the whitened domain: ||L^H w|| = 1
    assert!((norm * nr.sqrt() - 1.0).abs() < 1e-12);
}

#[test]
fn equal_covariances_have_unit_eigenvalue() {
    let mut r = rng(6);
    let a = random_pd(&mut r, 3);
    let n = normalize_noise_covariance(&a, 3).unwrap();
    let w = gev_weights(&CovariancePair::new(1, 3, n.clone(), n.clone()).unwrap()).unwrap();
    assert!((w.lambda[0] - 1.0).abs() < 1e-10);
    assert!(eigen_residual(&n, &n, 3, w.at(0), w.lambda[0]) < 1e-8);
}

#[test]
fn random_pairs_satisfy_residual_and_rayleigh_maximality() {
    let (d, bins) = (4, 12);
    let mut r = rng(7);
    let xx: Vec<C64> = (0..bins).flat_map(|_| random_pd(&mut r, d)).collect();
    let nn: Vec<C64> = (0..bins).flat_map(|_| random_pd(&mut r, d)).collect();
    let cov = CovariancePair::new(bins, d, xx, nn).unwrap();
    let w = gev_weights(&cov).unwrap();
    for f in 0..bins {
        let nt = normalize_noise_covariance(cov.noise_at(f), d).unwrap();
        let xf = cov.speech_at(f);
        let wf = w.at(f);
        assert!(eigen_residual(xf, &nt, d, wf, w.lambda[f]) < 1e-8);
        let q = herm_form(xf, d, wf) / herm_form(&nt, d, wf);
        assert!((q - w.lambda[f]).abs() < 1e-8 * q);
        assert!((rayleigh_quotient(xf, &nt, d, wf) - q).abs() < 1e-10 * q);
        for _ in 0..1000 {
            let v = random_unit(&mut r, d);
            let qv = herm_form(xf, d, &v) / herm_form(&nt, d, &v);
            assert!(qv <= q * (1.0 + 1e-8), "f {f}: {qv} > {q}");
        }
    }
}

#[test]
fn noise_scale_does_not_change_weights() {
    let (d, bins) = (3, 6);
    let mut r = rng(8);
    let xx: Vec<C64> = (0..bins).flat_map(|_| random_pd(&mut r, d)).collect();
    let nn: Vec<C64> = (0..bins).flat_map(|_| random_pd(&mut r, d)).collect();
    let a = gev_weights(&CovariancePair::new(bins, d, xx.clone(), nn.clone()).unwrap()).unwrap();
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let scaled: Vec<C64> = nn.iter().map(|z| z * c).collect();
        let b = gev_weights(&CovariancePair::new(bins, d, xx.clone(), scaled).unwrap()).unwrap();
        for (x, y) in a.w.iter().zip(&b.w) {
            assert!((x - y).norm() < 1e-10, "c = {c}");
        }
    }
}

#[test]
fn apply_beamformer_examples() {
    let (d, frames, bins) = (3, 7, 4);
    let spec = random_spec(9, d, frames, bins);
    let e1 = BeamformerWeights::constant(bins, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let out = apply_beamformer(&spec, &e1).unwrap();
    assert_eq!(out.channel(0), spec.channel(0));

    let mut r = rng(10);
    let w = BeamformerWeights {
        bins,
        dims: d,
        w: random_cvec(&mut r, bins * d),
        lambda: vec![1.0; bins],
    };
    let out = apply_beamformer(&spec, &w).unwrap();
    for t in 0..frames {
        for f in 0..bins {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..d {
                acc += w.w[f * d + c].conj() * spec.get(c, t, f);
            }
            assert!((out.get(0, t, f) - acc).norm() < 1e-12);
        }
    }

    // identical channels and the normalized sum: a scaled copy
    let mut same = ComplexSpectrogram::zeros(d, frames, bins);
    for t in 0..frames {
        for f in 0..bins {
            for c in 0..d {
                same.set(c, t, f, spec.get(0, t, f));
            }
        }
    }
    let s = 1.0 / (d as f64).sqrt();
    let sum = BeamformerWeights::constant(bins, &vec![C64::new(s, 0.0); d]);
    let out = apply_beamformer(&same, &sum).unwrap();
    for (a, b) in out.channel(0).iter().zip(spec.channel(0)) {
        assert!((a - b * (d as f64).sqrt()).norm() < 1e-12);
    }
}

#[test]
fn oracle_covariances_beat_every_input_channel() {
    let cfg = StftConfig::default();
    for noise in [NoiseModel::White, NoiseModel::Diffuse { waves: 64 }] {
        let set = SceneSetConfig {
            scenes: 3,
            seed: 11,
            duration_secs: 1.0,
            noise,
            ..Default::default()
        };
        for i in 0..3 {
            let b = synth_scene(&set.scene(i)).unwrap();
            let x = stft(&b.speech, &cfg).unwrap();
            let n = stft(&b.noise, &cfg).unwrap();
            let w = gev_weights(&oracle_covariances(&x, &n).unwrap()).unwrap();
            let rep = snr_metrics(&x, &n, &w).unwrap();
            assert!(rep.input_snr_db.iter().all(|&s| rep.output_snr_db >= s), "{rep:?}");
        }
    }
}

#[test]
fn oracle_masks_pick_speech_by_directivity() {
    let cfg = StftConfig::default();
    let set = SceneSetConfig {
        scenes: 2,
        seed: 12,
        duration_secs: 1.0,
        ..Default::default()
    };
    for i in 0..2 {
        let b = synth_scene(&set.scene(i)).unwrap();
        let y = stft(&b.mixture, &cfg).unwrap();
        let m = b.oracle_masks(&cfg).unwrap();
        assert_eq!(select_speech_class(&y, &m).unwrap(), (0, 1));
        let swapped = m.permuted(&vec![vec![1, 0]; y.bins()]).unwrap();
        assert_eq!(select_speech_class(&y, &swapped).unwrap(), (1, 0));
    }
}
