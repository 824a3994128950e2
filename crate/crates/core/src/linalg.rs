//! Small dense Hermitian kernels used per frequency bin.
//!
//! Matrices are square, row-major slices of length `d * d`. Dimensions are
//! tiny (number of microphones) so everything here is straightforward
//! O(d^3) code without blocking.

use num_complex::Complex;

use crate::scalar::{czero, Scalar};

/// Relative ridge added to the diagonal before Cholesky factorization.
pub const RIDGE: f64 = 1e-10;

/// Largest deviation from Hermitian symmetry, relative to the largest entry.
pub fn hermitian_defect<T: Scalar>(a: &[Complex<T>], d: usize) -> T {
    let mut scale = T::zero();
    let mut defect = T::zero();
    for i in 0..d {
        for j in 0..d {
            scale = scale.max(a[i * d + j].norm());
            if j >= i {
                defect = defect.max((a[i * d + j] - a[j * d + i].conj()).norm());
            }
        }
    }
    if scale > T::zero() {
        defect / scale
    } else {
        T::zero()
    }
}

/// Real part of the trace.
pub fn trace<T: Scalar>(a: &[Complex<T>], d: usize) -> T {
    (0..d).map(|i| a[i * d + i].re).sum()
}

/// `a + eps * tr(a) / d * I`, in place.
pub fn add_ridge<T: Scalar>(a: &mut [Complex<T>], d: usize, eps: T) {
    let load = eps * trace(a, d) / T::of_usize(d);
    for i in 0..d {
        a[i * d + i].re += load;
    }
}

/// Lower Cholesky factor of the Hermitian part of `a`.
///
/// Only the lower triangle is read. Returns `None` when a pivot is not
/// strictly positive.
pub fn cholesky<T: Scalar>(a: &[Complex<T>], d: usize) -> Option<Vec<Complex<T>>> {
    let mut l = vec![czero::<T>(); d * d];
    for j in 0..d {
        let mut diag = a[j * d + j].re;
        for k in 0..j {
            diag -= l[j * d + k].norm_sqr();
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = Complex::new(ljj, T::zero());
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k].conj();
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L x = b` in place.
pub fn forward_substitute<T: Scalar>(l: &[Complex<T>], d: usize, b: &mut [Complex<T>]) {
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * b[k];
        }
        b[i] = s / l[i * d + i].re;
    }
}

/// Solves `L^H x = b` in place.
pub fn back_substitute_adjoint<T: Scalar>(l: &[Complex<T>], d: usize, b: &mut [Complex<T>]) {
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in i + 1..d {
            s -= l[k * d + i].conj() * b[k];
        }
        b[i] = s / l[i * d + i].re;
    }
}

/// Solves `L L^H x = b` in place.
pub fn cholesky_solve<T: Scalar>(l: &[Complex<T>], d: usize, b: &mut [Complex<T>]) {
    forward_substitute(l, d, b);
    back_substitute_adjoint(l, d, b);
}

/// `ln det(L L^H)`.
pub fn cholesky_log_det<T: Scalar>(l: &[Complex<T>], d: usize) -> T {
    let two = T::of(2.0);
    (0..d).map(|i| two * l[i * d + i].re.ln()).sum()
}

/// Inverse of `L L^H` (Hermitian, full storage).
pub fn cholesky_inverse<T: Scalar>(l: &[Complex<T>], d: usize) -> Vec<Complex<T>> {
    let mut inv = vec![czero::<T>(); d * d];
    let mut col = vec![czero::<T>(); d];
    for j in 0..d {
        col.iter_mut().for_each(|c| *c = czero());
        col[j] = Complex::new(T::one(), T::zero());
        cholesky_solve(l, d, &mut col);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    inv
}

/// `y^H A^{-1} y` given the Cholesky factor of `A`; returns the solve too.
pub fn quadratic_form<T: Scalar>(l: &[Complex<T>], d: usize, y: &[Complex<T>]) -> (T, Vec<Complex<T>>) {
    let mut u = y.to_vec();
    cholesky_solve(l, d, &mut u);
    let q = y.iter().zip(&u).map(|(a, b)| (a.conj() * b).re).sum();
    (q, u)
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching unit-norm
/// eigenvectors as columns of a row-major `d x d` matrix.
pub fn hermitian_eigh<T: Scalar>(a: &[Complex<T>], d: usize) -> (Vec<T>, Vec<Complex<T>>) {
    let mut m: Vec<Complex<T>> = a.to_vec();
    // Work on the exact Hermitian part.
    for i in 0..d {
        m[i * d + i] = Complex::new(m[i * d + i].re, T::zero());
        for j in i + 1..d {
            let h = (m[i * d + j] + m[j * d + i].conj()) * T::of(0.5);
            m[i * d + j] = h;
            m[j * d + i] = h.conj();
        }
    }
    let mut v = vec![czero::<T>(); d * d];
    for i in 0..d {
        v[i * d + i] = Complex::new(T::one(), T::zero());
    }

    let frob: T = m.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
    let tol = T::kernel_tol() * frob;
    for _sweep in 0..100 {
        let off: T = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j].norm_sqr())
            .sum::<T>()
            .sqrt();
        if off <= tol || frob == T::zero() {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                let r = apq.norm();
                if r <= T::min_positive_value() {
                    continue;
                }
                // Phase that makes the (p, q) entry real, then a real rotation.
                let phase = apq / r;
                let tau = (m[q * d + q].re - m[p * d + p].re) / (T::of(2.0) * r);
                let t = tau.signum() / (tau.abs() + (T::one() + tau * tau).sqrt());
                let t = if tau == T::zero() { T::one() } else { t };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                let e = phase.conj();
                // U = [[c, s], [-s e, c e]] acting on columns p and q.
                let u_pp = Complex::new(c, T::zero());
                let u_pq = Complex::new(s, T::zero());
                let u_qp = -e * s;
                let u_qq = e * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = mkp * u_pp + mkq * u_qp;
                    m[k * d + q] = mkp * u_pq + mkq * u_qq;
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = vkp * u_pp + vkq * u_qp;
                    v[k * d + q] = vkp * u_pq + vkq * u_qq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = u_pp.conj() * mpk + u_qp.conj() * mqk;
                    m[q * d + k] = u_pq.conj() * mpk + u_qq.conj() * mqk;
                }
                m[p * d + q] = czero();
                m[q * d + p] = czero();
                m[p * d + p].im = T::zero();
                m[q * d + q].im = T::zero();
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[i * d + i].re.partial_cmp(&m[j * d + j].re).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[i * d + i].re).collect();
    let mut vectors = vec![czero::<T>(); d * d];
    for (new, &old) in order.iter().enumerate() {
        let norm: T = (0..d).map(|k| v[k * d + old].norm_sqr()).sum::<T>().sqrt();
        for k in 0..d {
            vectors[k * d + new] = v[k * d + old] / norm;
        }
    }
    (values, vectors)
}

/// `A x` for a square matrix.
pub fn mat_vec<T: Scalar>(a: &[Complex<T>], d: usize, x: &[Complex<T>]) -> Vec<Complex<T>> {
    (0..d)
        .map(|i| (0..d).fold(czero(), |acc, j| acc + a[i * d + j] * x[j]))
        .collect()
}

/// Euclidean norm of a complex vector.
pub fn norm<T: Scalar>(x: &[Complex<T>]) -> T {
    x.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C;

    fn random_pd(d: usize, seed: u64) -> Vec<C> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<C> = (0..d * d)
            .map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut a = vec![C::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    a[i * d + j] += g[i * d + k] * g[j * d + k].conj();
                }
            }
            a[i * d + i] += 0.1;
        }
        a
    }

    #[test]
    fn cholesky_reconstructs() {
        let d = 4;
        let a = random_pd(d, 1);
        let l = cholesky(&a, d).unwrap();
        for i in 0..d {
            for j in 0..d {
                let s: C = (0..d).map(|k| l[i * d + k] * l[j * d + k].conj()).sum();
                assert!((s - a[i * d + j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![C::new(1.0, 0.0), C::new(2.0, 0.0), C::new(2.0, 0.0), C::new(1.0, 0.0)];
        assert!(cholesky(&a, 2).is_none());
    }

    #[test]
    fn jacobi_eigenpairs() {
        for d in 1..=6 {
            let a = random_pd(d, d as u64);
            let (vals, vecs) = hermitian_eigh(&a, d);
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            for n in 0..d {
                let v: Vec<C> = (0..d).map(|k| vecs[k * d + n]).collect();
                let av = mat_vec(&a, d, &v);
                let res: f64 = av.iter().zip(&v).map(|(x, y)| (x - y * vals[n]).norm_sqr()).sum::<f64>().sqrt();
                assert!(res < 1e-10, "d={d} residual {res}");
            }
        }
    }

    #[test]
    fn jacobi_works_in_f32() {
        let a: Vec<Complex<f32>> = vec![
            Complex::new(2.0, 0.0),
            Complex::new(0.0, 1.0),
            Complex::new(0.0, -1.0),
            Complex::new(2.0, 0.0),
        ];
        let (vals, _) = hermitian_eigh(&a, 2);
        assert!((vals[0] - 1.0).abs() < 1e-5 && (vals[1] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn log_det_of_diagonal() {
        let a = vec![C::new(2.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(3.0, 0.0)];
        let l = cholesky(&a, 2).unwrap();
        assert!((cholesky_log_det(&l, 2) - 6f64.ln()).abs() < 1e-15);
    }
}
