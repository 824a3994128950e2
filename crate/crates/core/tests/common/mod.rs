//! Independent dense-algebra oracles shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<C64> {
    let v = random_cvec(rng, d);
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / n).collect()
}

/// Dense Hermitian PD matrix `A A^H + d/2 I`.
pub fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> Vec<C64> {
    let a = random_cvec(rng, d * d);
    let mut b = vec![c(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            b[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k].conj()).sum();
        }
        b[i * d + i] += d as f64 * 0.5;
    }
    b
}

/// `B + 1e-10 tr(B)/D I`.
pub fn regularized(b: &[C64], d: usize) -> Vec<C64> {
    let tr: f64 = (0..d).map(|i| b[i * d + i].re).sum();
    let mut r = b.to_vec();
    for i in 0..d {
        r[i * d + i] += 1e-10 * tr / d as f64;
    }
    r
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(m: &[C64], d: usize) -> Vec<C64> {
    let mut a = m.to_vec();
    let mut inv = vec![c(0.0, 0.0); d * d];
    for i in 0..d {
        inv[i * d + i] = c(1.0, 0.0);
    }
    for col in 0..d {
        let p = (col..d).max_by(|&x, &y| a[x * d + col].norm().total_cmp(&a[y * d + col].norm())).unwrap();
        for k in 0..d {
            a.swap(col * d + k, p * d + k);
            inv.swap(col * d + k, p * d + k);
        }
        let piv = a[col * d + col];
        for k in 0..d {
            a[col * d + k] /= piv;
            inv[col * d + k] /= piv;
        }
        for r in 0..d {
            if r != col {
                let f = a[r * d + col];
                for k in 0..d {
                    let (ak, ik) = (a[col * d + k], inv[col * d + k]);
                    a[r * d + k] -= f * ak;
                    inv[r * d + k] -= f * ik;
                }
            }
        }
    }
    inv
}

/// Determinant by LU elimination with partial pivoting.
pub fn dense_det(m: &[C64], d: usize) -> C64 {
    let mut a = m.to_vec();
    let mut det = c(1.0, 0.0);
    for col in 0..d {
        let p = (col..d).max_by(|&x, &y| a[x * d + col].norm().total_cmp(&a[y * d + col].norm())).unwrap();
        if p != col {
            for k in 0..d {
                a.swap(col * d + k, p * d + k);
            }
            det = -det;
        }
        let piv = a[col * d + col];
        det *= piv;
        for r in col + 1..d {
            let f = a[r * d + col] / piv;
            for k in col..d {
                let v = a[col * d + k];
                a[r * d + k] -= f * v;
            }
        }
    }
    det
}

pub fn mat_vec(m: &[C64], d: usize, v: &[C64]) -> Vec<C64> {
    (0..d).map(|i| (0..d).map(|k| m[i * d + k] * v[k]).sum()).collect()
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Direct cACG log density `ln[(D-1)!/(2 pi^D det B)] - D ln(y^H B^{-1} y)`
/// from the regularized matrix, through dense inverse and determinant.
pub fn direct_log_density(y: &[C64], b: &[C64]) -> f64 {
    let d = y.len();
    let br = regularized(b, d);
    let inv = dense_inverse(&br, d);
    let q = dot(y, &mat_vec(&inv, d, y)).re;
    let det = dense_det(&br, d).re;
    let fact: f64 = (1..d).map(|i| i as f64).product();
    (fact / (2.0 * std::f64::consts::PI.powi(d as i32) * det)).ln() - d as f64 * q.ln()
}
