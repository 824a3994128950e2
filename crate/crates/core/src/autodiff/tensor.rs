use std::ops::AddAssign;

use num_complex::Complex64;

use crate::error::{bail, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real,
    Complex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    Real(Vec<f64>),
    /// Interleaved (re, im) pairs.
    Complex(Vec<C64>),
}

/// Immutable dense row-major tensor of `f64` or `Complex<f64>` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Data,
}

impl Tensor {
    pub fn real(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Data::Real(data),
        })
    }

    pub fn complex(shape: &[usize], data: Vec<C64>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Data::Complex(data),
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: Data::Real(vec![v]),
        }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: match dtype {
                DType::Real => Data::Real(vec![0.0; n]),
                DType::Complex => Data::Complex(vec![C64::new(0.0, 0.0); n]),
            },
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: Data::Real(vec![v; numel(shape)]),
        }
    }

    /// Complex identity matrices with the given batch shape.
    pub fn eye(batch: &[usize], d: usize) -> Self {
        let mut shape = batch.to_vec();
        shape.extend([d, d]);
        let mut data = vec![C64::new(0.0, 0.0); numel(&shape)];
        for m in data.chunks_mut(d * d) {
            for i in 0..d {
                m[i * d + i] = C64::new(1.0, 0.0);
            }
        }
        Self {
            shape,
            data: Data::Complex(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            Data::Real(_) => DType::Real,
            Data::Complex(_) => DType::Complex,
        }
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            Data::Real(v) => Some(v),
            Data::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&[C64]> {
        match &self.data {
            Data::Complex(v) => Some(v),
            Data::Real(_) => None,
        }
    }

    pub fn into_real(self) -> Option<Vec<f64>> {
        match self.data {
            Data::Real(v) => Some(v),
            Data::Complex(_) => None,
        }
    }

    pub fn into_complex(self) -> Option<Vec<C64>> {
        match self.data {
            Data::Complex(v) => Some(v),
            Data::Real(_) => None,
        }
    }

    /// Value of a single-element real tensor.
    pub fn item(&self) -> Option<f64> {
        match &self.data {
            Data::Real(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            bail!(Shape, "cannot reshape {:?} into {:?}", self.shape, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub(crate) fn r(&self) -> &[f64] {
        self.as_real().expect("real tensor")
    }

    pub(crate) fn c(&self) -> &[C64] {
        self.as_complex().expect("complex tensor")
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Data) -> Self {
        debug_assert_eq!(
            numel(&shape),
            match &data {
                Data::Real(v) => v.len(),
                Data::Complex(v) => v.len(),
            }
        );
        Self { shape, data }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            Data::Real(v) => v.iter().all(|x| x.is_finite()),
            Data::Complex(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if numel(shape) != len {
        bail!(Shape, "{} values do not fill shape {:?}", len, shape);
    }
    Ok(())
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Numpy-style broadcast of two shapes (aligned on the trailing axis).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => bail!(Shape, "shapes {:?} and {:?} do not broadcast", a, b),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Flat source offset for every element of `out_shape` under `strides`.
pub(crate) fn gather_offsets(out_shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n = numel(out_shape);
    let mut offs = Vec::with_capacity(n);
    if n == 0 {
        return offs;
    }
    let nd = out_shape.len();
    if nd == 0 {
        offs.push(0);
        return offs;
    }
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    let inner = out_shape[nd - 1];
    let inner_stride = strides[nd - 1];
    loop {
        for i in 0..inner {
            offs.push(off + i * inner_stride);
        }
        // advance all but the innermost axis
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return offs;
            }
            ax -= 1;
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn zip_broadcast<A: Copy, B: Copy, O>(
    a: &[A],
    ash: &[usize],
    b: &[B],
    bsh: &[usize],
    f: impl Fn(A, B) -> O,
) -> Result<(Vec<usize>, Vec<O>)> {
    if ash == bsh {
        return Ok((ash.to_vec(), a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()));
    }
    let out = broadcast_shape(ash, bsh)?;
    if numel(bsh) == 1 {
        let y = b[0];
        let v = if numel(ash) == numel(&out) {
            a.iter().map(|&x| f(x, y)).collect()
        } else {
            let oa = gather_offsets(&out, &broadcast_strides(ash, &out));
            oa.iter().map(|&i| f(a[i], y)).collect()
        };
        return Ok((out, v));
    }
    let oa = gather_offsets(&out, &broadcast_strides(ash, &out));
    let ob = gather_offsets(&out, &broadcast_strides(bsh, &out));
    let v = oa.iter().zip(&ob).map(|(&i, &j)| f(a[i], b[j])).collect();
    Ok((out, v))
}

/// Sums `g` (shaped `gshape`) down to `target`, which must broadcast to `gshape`.
pub(crate) fn reduce_to<T: Copy + AddAssign + Default>(g: &[T], gshape: &[usize], target: &[usize]) -> Vec<T> {
    if gshape == target {
        return g.to_vec();
    }
    let mut out = vec![T::default(); numel(target)];
    let offs = gather_offsets(gshape, &broadcast_strides(target, gshape));
    for (v, &o) in g.iter().zip(&offs) {
        out[o] += *v;
    }
    out
}

/// Expands `g` shaped `small` to `big` by repetition along broadcast axes.
pub(crate) fn expand_to<T: Copy>(g: &[T], small: &[usize], big: &[usize]) -> Vec<T> {
    if small == big {
        return g.to_vec();
    }
    gather_offsets(big, &broadcast_strides(small, big))
        .into_iter()
        .map(|o| g[o])
        .collect()
}

pub(crate) fn permute_data<T: Copy>(x: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let own = contiguous_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| own[p]).collect();
    let data = gather_offsets(&out_shape, &strides).into_iter().map(|o| x[o]).collect();
    (out_shape, data)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 1]).unwrap(), vec![2, 4, 3]);
        assert!(broadcast_shape(&[2, 3], &[4, 3]).is_err());
        assert_eq!(broadcast_shape(&[], &[5]).unwrap(), vec![5]);
    }

    #[test]
    fn reduce_inverts_expand_counts() {
        let g = vec![1.0; 24];
        let r = reduce_to(&g, &[2, 3, 4], &[3, 1]);
        assert_eq!(r, vec![8.0; 3]);
        let e = expand_to(&[1.0, 2.0, 3.0], &[3, 1], &[2, 3, 2]);
        assert_eq!(e, vec![1., 1., 2., 2., 3., 3., 1., 1., 2., 2., 3., 3.]);
    }

    #[test]
    fn permute_transposes() {
        let (s, d) = permute_data(&[1, 2, 3, 4, 5, 6], &[2, 3], &[1, 0]);
        assert_eq!(s, vec![3, 2]);
        assert_eq!(d, vec![1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn shape_checked_on_construction() {
        assert!(Tensor::real(&[2, 2], vec![0.0; 3]).is_err());
    }
}
