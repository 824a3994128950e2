use std::sync::Arc;

use crate::error::{bail, Error, Result};
use crate::linalg;

use super::kernels::{self, batch_map, dgemm, zgemm};
use super::tensor::{
    contiguous_strides, expand_to, inverse_permutation, numel, permute_data, reduce_to, zip_broadcast, DType, Data,
    Tensor, C64,
};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Ln(Var),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Softmax(Var, usize),
    LogSumExp(Var, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice { x: Var, axis: usize, start: usize },
    Concat(Vec<Var>, usize),
    MatMul(Var, Var),
    ToComplex(Var),
    MakeComplex(Var, Var),
    Re(Var),
    Im(Var),
    Conj(Var),
    Abs2(Var),
    HermT(Var),
    HermSolve { b: Var, v: Var, chol: Vec<C64> },
    LogDetHerm { b: Var, inv: Vec<C64> },
    QuadForm { b: Var, y: Var, u: Vec<C64> },
    L2Normalize { z: Var, norms: Vec<f64> },
    RnnTanh { p: Var, w: Var, reverse: bool },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    parameter: bool,
}

/// Reverse-mode computation graph over real and complex tensors.
///
/// Complex nodes carry the cotangent `G = dl/dRe + j dl/dIm = 2 dl/dz*` for
/// the real-valued loss `l`; real nodes carry the ordinary gradient. With
/// this convention the chain rule through `w = f(z)` reads
/// `G_z = conj(dw/dz) G_w + dw/dz* conj(G_w)` for every primitive.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dtype(&self, v: Var) -> DType {
        self.nodes[v.0].value.dtype()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            parameter: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf (receives no gradient of interest).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a trainable real leaf.
    pub fn parameter(&mut self, t: Tensor) -> Result<Var> {
        if t.dtype() != DType::Real {
            bail!(DType, "parameters must be real tensors");
        }
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].parameter = true;
        Ok(v)
    }

    pub fn parameters(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].parameter)
            .map(Var)
            .collect()
    }

    fn same_dtype(&self, a: Var, b: Var, what: &str) -> Result<DType> {
        let (da, db) = (self.dtype(a), self.dtype(b));
        if da != db {
            bail!(DType, "{what}: operands have dtypes {da:?} and {db:?}");
        }
        Ok(da)
    }

    fn require(&self, v: Var, dtype: DType, what: &str) -> Result<()> {
        if self.dtype(v) != dtype {
            bail!(DType, "{what} expects a {dtype:?} tensor, got {:?}", self.dtype(v));
        }
        Ok(())
    }

    // ---- elementwise ---------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, op: fn(Var, Var) -> Op, fr: fn(f64, f64) -> f64, fc: fn(C64, C64) -> C64) -> Result<Var> {
        let dtype = self.same_dtype(a, b, "elementwise op")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match dtype {
            DType::Real => {
                let (s, d) = zip_broadcast(ta.r(), ta.shape(), tb.r(), tb.shape(), fr)?;
                Tensor::from_parts(s, Data::Real(d))
            }
            DType::Complex => {
                let (s, d) = zip_broadcast(ta.c(), ta.shape(), tb.c(), tb.shape(), fc)?;
                Tensor::from_parts(s, Data::Complex(d))
            }
        };
        Ok(self.push(out, op(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div, |x, y| x / y, |x, y| x / y)
    }

    /// Multiplication by a real constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = map_any(self.value(x), |v| v * c, |z| z * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = map_any(self.value(x), |v| v + c, |z| z + c);
        self.push(out, Op::AddScalar(x))
    }

    fn unary_real(&mut self, x: Var, what: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.require(x, DType::Real, what)?;
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), Data::Real(t.r().iter().map(|&v| f(v)).collect()));
        Ok(self.push(out, op))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary_real(x, "ln", f64::ln, Op::Ln(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary_real(x, "exp", f64::exp, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary_real(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary_real(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary_real(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    /// `max(x, floor)`; the gradient is passed only where `x >= floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.unary_real(x, "clamp_min", move |v| v.max(floor), Op::ClampMin(x, floor))
    }

    // ---- reductions ------------------------------------------------------

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut target = shape.clone();
        for &a in axes {
            if a >= shape.len() {
                bail!(Shape, "sum axis {a} out of range for {:?}", shape);
            }
            target[a] = 1;
        }
        let t = self.value(x);
        let out = match t.data() {
            Data::Real(v) => Tensor::from_parts(target.clone(), Data::Real(reduce_to(v, &shape, &target))),
            Data::Complex(v) => Tensor::from_parts(target.clone(), Data::Complex(reduce_to(v, &shape, &target))),
        };
        Ok(self.push(out, Op::Sum(x)))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.sum(x, &axes)?;
        self.reshape(s, &[])
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let n: usize = axes.iter().map(|&a| self.shape(x).get(a).copied().unwrap_or(1)).product();
        let s = self.sum(x, axes)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.require(x, DType::Real, "softmax")?;
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let out = axis_map(t.r(), t.shape(), axis, |xs, ys| {
            let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (x, y) in xs.iter().zip(ys.iter_mut()) {
                *y = (x - m).exp();
                s += *y;
            }
            ys.iter_mut().for_each(|y| *y /= s);
        });
        let out = Tensor::from_parts(t.shape().to_vec(), Data::Real(out));
        Ok(self.push(out, Op::Softmax(x, axis)))
    }

    /// `ln sum exp` along `axis`, keeping it as a size-1 dim.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.require(x, DType::Real, "logsumexp")?;
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let mut shape = t.shape().to_vec();
        let n = shape[axis];
        let full = axis_map(t.r(), t.shape(), axis, |xs, ys| {
            ys.iter_mut().for_each(|y| *y = logsumexp(xs));
        });
        shape[axis] = 1;
        // every lane holds the same value; keep the first
        let (outer, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            data.extend_from_slice(&full[o * n * inner..o * n * inner + inner]);
        }
        let out = Tensor::from_parts(shape, Data::Real(data));
        Ok(self.push(out, Op::LogSumExp(x, axis)))
    }

    // ---- shape ------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut seen = vec![false; t.ndim()];
        if perm.len() != t.ndim() || perm.iter().any(|&p| p >= t.ndim() || std::mem::replace(&mut seen[p], true)) {
            bail!(Shape, "invalid permutation {perm:?} for shape {:?}", t.shape());
        }
        let out = match t.data() {
            Data::Real(v) => {
                let (s, d) = permute_data(v, t.shape(), perm);
                Tensor::from_parts(s, Data::Real(d))
            }
            Data::Complex(v) => {
                let (s, d) = permute_data(v, t.shape(), perm);
                Tensor::from_parts(s, Data::Complex(d))
            }
        };
        Ok(self.push(out, Op::Permute(x, perm.to_vec())))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        if start + len > t.shape()[axis] {
            bail!(Shape, "slice {start}..{} exceeds axis {axis} of {:?}", start + len, t.shape());
        }
        let (outer, inner) = split_axis(t.shape(), axis);
        let n = t.shape()[axis];
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let out = match t.data() {
            Data::Real(v) => Tensor::from_parts(shape, Data::Real(slice_lanes(v, outer, n, inner, start, len))),
            Data::Complex(v) => Tensor::from_parts(shape, Data::Complex(slice_lanes(v, outer, n, inner, start, len))),
        };
        Ok(self.push(out, Op::Slice { x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            bail!(Shape, "concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        check_axis(&base, axis)?;
        let dtype = self.dtype(first);
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len() && (0..s.len()).all(|i| i == axis || s[i] == base[i]);
            if !compatible || self.dtype(x) != dtype {
                bail!(Shape, "cannot concat {:?} with {:?} along axis {axis}", s, base);
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, inner) = split_axis(&base, axis);
        let out = match dtype {
            DType::Real => {
                let parts: Vec<(&[f64], usize)> = xs.iter().map(|&x| (self.value(x).r(), self.shape(x)[axis])).collect();
                Tensor::from_parts(shape, Data::Real(concat_lanes(&parts, outer, inner)))
            }
            DType::Complex => {
                let parts: Vec<(&[C64], usize)> = xs.iter().map(|&x| (self.value(x).c(), self.shape(x)[axis])).collect();
                Tensor::from_parts(shape, Data::Complex(concat_lanes(&parts, outer, inner)))
            }
        };
        Ok(self.push(out, Op::Concat(xs.to_vec(), axis)))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut s = self.shape(x).to_vec();
            if axis > s.len() {
                bail!(Shape, "stack axis {axis} out of range");
            }
            s.insert(axis, 1);
            expanded.push(self.reshape(x, &s)?);
        }
        self.concat(&expanded, axis)
    }

    // ---- linear algebra ----------------------------------------------------

    /// Batched matrix product `(..., m, k) @ (..., k, n)` with broadcast batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dtype = self.same_dtype(a, b, "matmul")?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            bail!(Shape, "matmul of {:?} and {:?}", sa, sb);
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let map = batch_map(&sa[..sa.len() - 2], &sb[..sb.len() - 2])?;
        let mut shape = map.out.clone();
        shape.extend([m, n]);
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match dtype {
            DType::Real => {
                let (av, bv) = (ta.r(), tb.r());
                let mut c = vec![0.0; numel(&shape)];
                for (o, (&ia, &ib)) in map.a.iter().zip(&map.b).enumerate() {
                    dgemm(m, k, n, &av[ia * m * k..], (k, 1), &bv[ib * k * n..], (n, 1), 0.0, &mut c[o * m * n..]);
                }
                Tensor::from_parts(shape, Data::Real(c))
            }
            DType::Complex => {
                let (av, bv) = (ta.c(), tb.c());
                let mut c = vec![C64::new(0.0, 0.0); numel(&shape)];
                for (o, (&ia, &ib)) in map.a.iter().zip(&map.b).enumerate() {
                    zgemm(m, k, n, &av[ia * m * k..], (k, 1), &bv[ib * k * n..], (n, 1), 0.0, &mut c[o * m * n..]);
                }
                Tensor::from_parts(shape, Data::Complex(c))
            }
        };
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    // ---- complex -----------------------------------------------------------

    pub fn to_complex(&mut self, x: Var) -> Result<Var> {
        self.require(x, DType::Real, "to_complex")?;
        let t = self.value(x);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            Data::Complex(t.r().iter().map(|&v| C64::new(v, 0.0)).collect()),
        );
        Ok(self.push(out, Op::ToComplex(x)))
    }

    pub fn make_complex(&mut self, re: Var, im: Var) -> Result<Var> {
        self.require(re, DType::Real, "make_complex")?;
        self.require(im, DType::Real, "make_complex")?;
        if self.shape(re) != self.shape(im) {
            bail!(Shape, "make_complex parts {:?} vs {:?}", self.shape(re), self.shape(im));
        }
        let (a, b) = (self.value(re), self.value(im));
        let data = a.r().iter().zip(b.r()).map(|(&x, &y)| C64::new(x, y)).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), Data::Complex(data));
        Ok(self.push(out, Op::MakeComplex(re, im)))
    }

    fn complex_to_real(&mut self, z: Var, what: &str, f: fn(C64) -> f64, op: Op) -> Result<Var> {
        self.require(z, DType::Complex, what)?;
        let t = self.value(z);
        let out = Tensor::from_parts(t.shape().to_vec(), Data::Real(t.c().iter().map(|&v| f(v)).collect()));
        Ok(self.push(out, op))
    }

    pub fn re(&mut self, z: Var) -> Result<Var> {
        self.complex_to_real(z, "re", |v| v.re, Op::Re(z))
    }

    pub fn im(&mut self, z: Var) -> Result<Var> {
        self.complex_to_real(z, "im", |v| v.im, Op::Im(z))
    }

    /// `|z|^2`.
    pub fn abs2(&mut self, z: Var) -> Result<Var> {
        self.complex_to_real(z, "abs2", |v| v.norm_sqr(), Op::Abs2(z))
    }

    pub fn conj(&mut self, z: Var) -> Result<Var> {
        self.require(z, DType::Complex, "conj")?;
        let t = self.value(z);
        let out = Tensor::from_parts(t.shape().to_vec(), Data::Complex(t.c().iter().map(|v| v.conj()).collect()));
        Ok(self.push(out, Op::Conj(z)))
    }

    /// Conjugate transpose of the last two axes.
    pub fn herm_t(&mut self, z: Var) -> Result<Var> {
        self.require(z, DType::Complex, "herm_t")?;
        let t = self.value(z);
        if t.ndim() < 2 {
            bail!(Shape, "herm_t needs at least 2 dims, got {:?}", t.shape());
        }
        let (s, d) = conj_transpose(t.c(), t.shape());
        let out = Tensor::from_parts(s, Data::Complex(d));
        Ok(self.push(out, Op::HermT(z)))
    }

    fn hermitian_batch(&self, b: Var, what: &str) -> Result<(Vec<usize>, usize)> {
        self.require(b, DType::Complex, what)?;
        let s = self.shape(b);
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            bail!(Shape, "{what} needs square matrices, got {:?}", s);
        }
        let d = s[s.len() - 1];
        let batch = s[..s.len() - 2].to_vec();
        let data = self.value(b).c();
        for (i, m) in data.chunks(d * d.max(1)).enumerate() {
            let defect = linalg::hermitian_defect(m, d);
            if defect > HERMITIAN_TOL {
                return Err(Error::NotHermitian {
                    index: unravel(i, &batch),
                    defect,
                });
            }
        }
        Ok((batch, d))
    }

    fn factor_all(&self, b: Var, batch: &[usize], d: usize) -> Result<Vec<C64>> {
        let data = self.value(b).c();
        let mut chol = Vec::with_capacity(data.len());
        for (i, m) in data.chunks(d * d).enumerate() {
            match kernels::regularized_cholesky(m, d) {
                Some(l) => chol.extend(l),
                None => {
                    return Err(Error::NotPositiveDefinite {
                        index: unravel(i, batch),
                    })
                }
            }
        }
        Ok(chol)
    }

    /// `B^{-1} V` for Hermitian PD `B (..., D, D)` and `V (..., D, N)`.
    ///
    /// `B` is regularized by a relative ridge before Cholesky factorization.
    pub fn hermitian_solve(&mut self, b: Var, v: Var) -> Result<Var> {
        let (bbatch, d) = self.hermitian_batch(b, "hermitian_solve")?;
        self.require(v, DType::Complex, "hermitian_solve")?;
        let sv = self.shape(v).to_vec();
        if sv.len() < 2 || sv[sv.len() - 2] != d {
            bail!(Shape, "hermitian_solve of {:?} with rhs {:?}", self.shape(b), sv);
        }
        let n = sv[sv.len() - 1];
        let map = batch_map(&bbatch, &sv[..sv.len() - 2])?;
        let chol = self.factor_all(b, &bbatch, d)?;
        let vv = self.value(v).c();
        let mut shape = map.out.clone();
        shape.extend([d, n]);
        let mut out = vec![C64::new(0.0, 0.0); numel(&shape)];
        let mut col = vec![C64::new(0.0, 0.0); d];
        for (o, (&ib, &iv)) in map.a.iter().zip(&map.b).enumerate() {
            let l = &chol[ib * d * d..(ib + 1) * d * d];
            for j in 0..n {
                for i in 0..d {
                    col[i] = vv[iv * d * n + i * n + j];
                }
                linalg::cholesky_solve(l, d, &mut col);
                for i in 0..d {
                    out[o * d * n + i * n + j] = col[i];
                }
            }
        }
        let out = Tensor::from_parts(shape, Data::Complex(out));
        Ok(self.push(out, Op::HermSolve { b, v, chol }))
    }

    /// `ln det B` for Hermitian PD `B (..., D, D)`, regularized as in
    /// [`Tape::hermitian_solve`]; real output of the batch shape.
    pub fn log_det_hermitian(&mut self, b: Var) -> Result<Var> {
        let (batch, d) = self.hermitian_batch(b, "log_det_hermitian")?;
        let chol = self.factor_all(b, &batch, d)?;
        let mut vals = Vec::with_capacity(numel(&batch));
        let mut inv = Vec::with_capacity(chol.len());
        for l in chol.chunks(d * d) {
            vals.push(linalg::cholesky_log_det(l, d));
            inv.extend(linalg::cholesky_inverse(l, d));
        }
        let out = Tensor::from_parts(batch, Data::Real(vals));
        Ok(self.push(out, Op::LogDetHerm { b, inv }))
    }

    /// `y_n^H B^{-1} y_n` for every row `y_n` of `Y (..., N, D)`; real output
    /// `(..., N)` over the broadcast batch of `B (..., D, D)` and `Y`.
    pub fn quadratic_form(&mut self, b: Var, y: Var) -> Result<Var> {
        let (bbatch, d) = self.hermitian_batch(b, "quadratic_form")?;
        self.require(y, DType::Complex, "quadratic_form")?;
        let sy = self.shape(y).to_vec();
        if sy.len() < 2 || sy[sy.len() - 1] != d {
            bail!(Shape, "quadratic_form of {:?} with vectors {:?}", self.shape(b), sy);
        }
        let n = sy[sy.len() - 2];
        let map = batch_map(&bbatch, &sy[..sy.len() - 2])?;
        let chol = self.factor_all(b, &bbatch, d)?;
        let yv = self.value(y).c();
        let mut shape = map.out.clone();
        shape.push(n);
        let mut q = vec![0.0; numel(&shape)];
        let mut u = vec![C64::new(0.0, 0.0); numel(&shape) * d];
        for (o, (&ib, &iy)) in map.a.iter().zip(&map.b).enumerate() {
            let l = &chol[ib * d * d..(ib + 1) * d * d];
            for r in 0..n {
                let yr = &yv[(iy * n + r) * d..(iy * n + r + 1) * d];
                let ur = &mut u[(o * n + r) * d..(o * n + r + 1) * d];
                ur.copy_from_slice(yr);
                linalg::cholesky_solve(l, d, ur);
                q[o * n + r] = yr.iter().zip(ur.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            }
        }
        let out = Tensor::from_parts(shape, Data::Real(q));
        Ok(self.push(out, Op::QuadForm { b, y, u }))
    }

    /// Unit-norm scaling along the last axis; zero vectors map to `1/sqrt(D)`.
    pub fn l2_normalize(&mut self, z: Var) -> Result<Var> {
        self.require(z, DType::Complex, "l2_normalize")?;
        let t = self.value(z);
        let d = *t.shape().last().ok_or_else(|| Error::Shape("l2_normalize of a scalar".into()))?;
        let mut data = t.c().to_vec();
        let mut norms = Vec::with_capacity(data.len() / d.max(1));
        for row in data.chunks_mut(d) {
            let n = linalg::norm(row);
            norms.push(n);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            } else {
                let c = 1.0 / (d as f64).sqrt();
                row.iter_mut().for_each(|v| *v = C64::new(c, 0.0));
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), Data::Complex(data));
        Ok(self.push(out, Op::L2Normalize { z, norms }))
    }

    /// Elman recurrence `h_t = tanh(p_t + h_{t-1} W)` over `p (B, T, H)`.
    ///
    /// `p` already contains the input projection and bias. With `reverse`
    /// the recursion runs from the last frame to the first.
    pub fn rnn_tanh(&mut self, p: Var, w: Var, reverse: bool) -> Result<Var> {
        self.require(p, DType::Real, "rnn_tanh")?;
        self.require(w, DType::Real, "rnn_tanh")?;
        let (sp, sw) = (self.shape(p).to_vec(), self.shape(w).to_vec());
        if sp.len() != 3 || sw != [sp[2], sp[2]] {
            bail!(Shape, "rnn_tanh input {:?} with recurrent weights {:?}", sp, sw);
        }
        let out = kernels::rnn_forward(self.value(p).r(), self.value(w).r(), sp[0], sp[1], sp[2], reverse);
        let out = Tensor::from_parts(sp, Data::Real(out));
        Ok(self.push(out, Op::RnnTanh { p, w, reverse }))
    }

    // ---- backward --------------------------------------------------------------

    /// Propagates cotangents from the scalar real `loss` to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dtype() != DType::Real || lv.numel() != 1 {
            bail!(
                InvalidArgument,
                "loss must be a scalar real node, got {:?} of shape {:?}",
                lv.dtype(),
                lv.shape()
            );
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), Data::Real(vec![1.0])));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            parameters: self.parameters(),
            shapes: self.nodes.iter().map(|n| (n.value.shape().to_vec(), n.value.dtype())).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, reduce_any(g, self.shape(*a)));
                accumulate(grads, *b, reduce_any(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, reduce_any(g, self.shape(*a)));
                accumulate(grads, *b, reduce_any(&map_any(g, |v| -v, |z| -z), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (ga, gb) = match (g.data(), ta.data(), tb.data()) {
                    (Data::Real(gv), Data::Real(av), Data::Real(bv)) => {
                        let (s, ga) = zip_broadcast(gv, g.shape(), bv, tb.shape(), |g, b| g * b)?;
                        let (_, gb) = zip_broadcast(gv, g.shape(), av, ta.shape(), |g, a| g * a)?;
                        (real(s.clone(), ga), real(s, gb))
                    }
                    (Data::Complex(gv), Data::Complex(av), Data::Complex(bv)) => {
                        let (s, ga) = zip_broadcast(gv, g.shape(), bv, tb.shape(), |g, b| g * b.conj())?;
                        let (_, gb) = zip_broadcast(gv, g.shape(), av, ta.shape(), |g, a| g * a.conj())?;
                        (cplx(s.clone(), ga), cplx(s, gb))
                    }
                    _ => unreachable!("dtype checked on record"),
                };
                accumulate(grads, *a, reduce_any(&ga, ta.shape()));
                accumulate(grads, *b, reduce_any(&gb, tb.shape()));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (ga, gb) = match (g.data(), y.data(), tb.data()) {
                    (Data::Real(gv), Data::Real(yv), Data::Real(bv)) => {
                        let (s, ga) = zip_broadcast(gv, g.shape(), bv, tb.shape(), |g, b| g / b)?;
                        let gy: Vec<f64> = gv.iter().zip(yv).map(|(g, y)| -g * y).collect();
                        let (_, gb) = zip_broadcast(&gy, g.shape(), bv, tb.shape(), |g, b| g / b)?;
                        (real(s.clone(), ga), real(s, gb))
                    }
                    (Data::Complex(gv), Data::Complex(yv), Data::Complex(bv)) => {
                        let (s, ga) = zip_broadcast(gv, g.shape(), bv, tb.shape(), |g, b| g / b.conj())?;
                        let gy: Vec<C64> = gv.iter().zip(yv).map(|(g, y)| -g * y.conj()).collect();
                        let (_, gb) = zip_broadcast(&gy, g.shape(), bv, tb.shape(), |g, b| g / b.conj())?;
                        (cplx(s.clone(), ga), cplx(s, gb))
                    }
                    _ => unreachable!("dtype checked on record"),
                };
                accumulate(grads, *a, reduce_any(&ga, ta.shape()));
                accumulate(grads, *b, reduce_any(&gb, tb.shape()));
            }
            Op::Scale(x, c) => accumulate(grads, *x, map_any(g, |v| v * c, |z| z * c)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::Ln(x) => {
                let xv = self.value(*x).r();
                accumulate(grads, *x, real_zip(g, xv, |g, x| g / x));
            }
            Op::Exp(x) => accumulate(grads, *x, real_zip(g, y.r(), |g, y| g * y)),
            Op::Sigmoid(x) => accumulate(grads, *x, real_zip(g, y.r(), |g, y| g * y * (1.0 - y))),
            Op::Tanh(x) => accumulate(grads, *x, real_zip(g, y.r(), |g, y| g * (1.0 - y * y))),
            Op::Relu(x) => {
                let xv = self.value(*x).r();
                accumulate(grads, *x, real_zip(g, xv, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::ClampMin(x, floor) => {
                let xv = self.value(*x).r();
                let floor = *floor;
                accumulate(grads, *x, real_zip(g, xv, move |g, x| if x >= floor { g } else { 0.0 }));
            }
            Op::Sum(x) => {
                let s = self.shape(*x);
                let out = match g.data() {
                    Data::Real(v) => real(s.to_vec(), expand_to(v, g.shape(), s)),
                    Data::Complex(v) => cplx(s.to_vec(), expand_to(v, g.shape(), s)),
                };
                accumulate(grads, *x, out);
            }
            Op::Softmax(x, axis) => {
                let gv = g.r();
                let yv = y.r();
                let (outer, inner) = split_axis(y.shape(), *axis);
                let n = y.shape()[*axis];
                let mut gx = vec![0.0; yv.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * n * inner + j;
                        let dot: f64 = (0..n).map(|k| gv[base + k * inner] * yv[base + k * inner]).sum();
                        for k in 0..n {
                            let idx = base + k * inner;
                            gx[idx] = yv[idx] * (gv[idx] - dot);
                        }
                    }
                }
                accumulate(grads, *x, real(y.shape().to_vec(), gx));
            }
            Op::LogSumExp(x, axis) => {
                let tx = self.value(*x);
                let xv = tx.r();
                let (outer, inner) = split_axis(tx.shape(), *axis);
                let n = tx.shape()[*axis];
                let (gv, yv) = (g.r(), y.r());
                let mut gx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let r = o * inner + j;
                        for k in 0..n {
                            let idx = o * n * inner + k * inner + j;
                            let w = if yv[r] == f64::NEG_INFINITY { 0.0 } else { (xv[idx] - yv[r]).exp() };
                            gx[idx] = gv[r] * w;
                        }
                    }
                }
                accumulate(grads, *x, real(tx.shape().to_vec(), gx));
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                accumulate(grads, *x, g.reshaped(&s)?);
            }
            Op::Permute(x, perm) => {
                let inv = inverse_permutation(perm);
                let out = match g.data() {
                    Data::Real(v) => {
                        let (s, d) = permute_data(v, g.shape(), &inv);
                        real(s, d)
                    }
                    Data::Complex(v) => {
                        let (s, d) = permute_data(v, g.shape(), &inv);
                        cplx(s, d)
                    }
                };
                accumulate(grads, *x, out);
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x).to_vec();
                let (outer, inner) = split_axis(&s, *axis);
                let (n, len) = (s[*axis], g.shape()[*axis]);
                let out = match g.data() {
                    Data::Real(v) => real(s.clone(), unslice_lanes(v, outer, n, inner, *start, len)),
                    Data::Complex(v) => cplx(s.clone(), unslice_lanes(v, outer, n, inner, *start, len)),
                };
                accumulate(grads, *x, out);
            }
            Op::Concat(xs, axis) => {
                let (outer, inner) = split_axis(g.shape(), *axis);
                let n = g.shape()[*axis];
                let mut start = 0;
                for &x in xs {
                    let s = self.shape(x).to_vec();
                    let len = s[*axis];
                    let out = match g.data() {
                        Data::Real(v) => real(s, slice_lanes(v, outer, n, inner, start, len)),
                        Data::Complex(v) => cplx(s, slice_lanes(v, outer, n, inner, start, len)),
                    };
                    accumulate(grads, x, out);
                    start += len;
                }
            }
            Op::MatMul(a, b) => {
                let (ga, gb) = self.matmul_backward(*a, *b, g)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::ToComplex(x) => {
                let out = real(g.shape().to_vec(), g.c().iter().map(|z| z.re).collect());
                accumulate(grads, *x, out);
            }
            Op::MakeComplex(re, im) => {
                accumulate(grads, *re, real(g.shape().to_vec(), g.c().iter().map(|z| z.re).collect()));
                accumulate(grads, *im, real(g.shape().to_vec(), g.c().iter().map(|z| z.im).collect()));
            }
            Op::Re(z) => {
                accumulate(grads, *z, cplx(g.shape().to_vec(), g.r().iter().map(|&v| C64::new(v, 0.0)).collect()));
            }
            Op::Im(z) => {
                accumulate(grads, *z, cplx(g.shape().to_vec(), g.r().iter().map(|&v| C64::new(0.0, v)).collect()));
            }
            Op::Conj(z) => accumulate(grads, *z, cplx(g.shape().to_vec(), g.c().iter().map(|v| v.conj()).collect())),
            Op::Abs2(z) => {
                let zv = self.value(*z).c();
                let out = g.r().iter().zip(zv).map(|(&g, z)| z * (2.0 * g)).collect();
                accumulate(grads, *z, cplx(g.shape().to_vec(), out));
            }
            Op::HermT(z) => {
                let (s, d) = conj_transpose(g.c(), g.shape());
                accumulate(grads, *z, cplx(s, d));
            }
            Op::HermSolve { b, v, chol } => {
                let (gb, gv) = self.solve_backward(*b, *v, chol, y, g)?;
                accumulate(grads, *b, gb);
                accumulate(grads, *v, gv);
            }
            Op::LogDetHerm { b, inv } => {
                let sb = self.shape(*b).to_vec();
                let d = sb[sb.len() - 1];
                let mut out = Vec::with_capacity(inv.len());
                for (m, &gs) in inv.chunks(d * d).zip(g.r()) {
                    let mut gm: Vec<C64> = m.iter().map(|v| v * gs).collect();
                    kernels::ridge_adjoint(&mut gm, d);
                    out.extend(gm);
                }
                accumulate(grads, *b, cplx(sb, out));
            }
            Op::QuadForm { b, y: yv, u } => {
                let (gb, gy) = self.quadform_backward(*b, *yv, u, g)?;
                accumulate(grads, *b, gb);
                accumulate(grads, *yv, gy);
            }
            Op::L2Normalize { z, norms } => {
                let d = *y.shape().last().expect("non-scalar");
                let mut out = Vec::with_capacity(y.numel());
                for ((w, gw), &n) in y.c().chunks(d).zip(g.c().chunks(d)).zip(norms) {
                    if n > 0.0 {
                        let proj: f64 = w.iter().zip(gw).map(|(a, b)| (a.conj() * b).re).sum();
                        out.extend(w.iter().zip(gw).map(|(a, b)| (b - a * proj) / n));
                    } else {
                        out.extend(std::iter::repeat_n(C64::new(0.0, 0.0), d));
                    }
                }
                accumulate(grads, *z, cplx(y.shape().to_vec(), out));
            }
            Op::RnnTanh { p, w, reverse } => {
                let s = y.shape();
                let (dp, dw) = kernels::rnn_backward(g.r(), y.r(), self.value(*w).r(), s[0], s[1], s[2], *reverse);
                accumulate(grads, *p, real(s.to_vec(), dp));
                accumulate(grads, *w, real(vec![s[2], s[2]], dw));
            }
        }
        Ok(())
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &Tensor) -> Result<(Tensor, Tensor)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let map = batch_map(&sa[..sa.len() - 2], &sb[..sb.len() - 2])?;
        Ok(match (g.data(), ta.data(), tb.data()) {
            (Data::Real(gv), Data::Real(av), Data::Real(bv)) => {
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for (o, (&ia, &ib)) in map.a.iter().zip(&map.b).enumerate() {
                    let go = &gv[o * m * n..];
                    // dA = G B^T, dB = A^T G
                    dgemm(m, n, k, go, (n, 1), &bv[ib * k * n..], (1, n), 1.0, &mut ga[ia * m * k..]);
                    dgemm(k, m, n, &av[ia * m * k..], (1, k), go, (n, 1), 1.0, &mut gb[ib * k * n..]);
                }
                (real(sa.to_vec(), ga), real(sb.to_vec(), gb))
            }
            (Data::Complex(gv), Data::Complex(av), Data::Complex(bv)) => {
                let ac: Vec<C64> = av.iter().map(|z| z.conj()).collect();
                let bc: Vec<C64> = bv.iter().map(|z| z.conj()).collect();
                let mut ga = vec![C64::new(0.0, 0.0); av.len()];
                let mut gb = vec![C64::new(0.0, 0.0); bv.len()];
                for (o, (&ia, &ib)) in map.a.iter().zip(&map.b).enumerate() {
                    let go = &gv[o * m * n..];
                    // dA = G B^H, dB = A^H G
                    zgemm(m, n, k, go, (n, 1), &bc[ib * k * n..], (1, n), 1.0, &mut ga[ia * m * k..]);
                    zgemm(k, m, n, &ac[ia * m * k..], (1, k), go, (n, 1), 1.0, &mut gb[ib * k * n..]);
                }
                (cplx(sa.to_vec(), ga), cplx(sb.to_vec(), gb))
            }
            _ => unreachable!("dtype checked on record"),
        })
    }

    fn solve_backward(&self, b: Var, v: Var, chol: &[C64], u: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        let (sb, sv) = (self.shape(b).to_vec(), self.shape(v).to_vec());
        let d = sb[sb.len() - 1];
        let n = sv[sv.len() - 1];
        let map = batch_map(&sb[..sb.len() - 2], &sv[..sv.len() - 2])?;
        let (uv, gv) = (u.c(), g.c());
        let mut gb = vec![C64::new(0.0, 0.0); numel(&sb)];
        let mut gvv = vec![C64::new(0.0, 0.0); numel(&sv)];
        let mut col = vec![C64::new(0.0, 0.0); d];
        for (o, (&ib, &iv)) in map.a.iter().zip(&map.b).enumerate() {
            let l = &chol[ib * d * d..(ib + 1) * d * d];
            let gbm = &mut gb[ib * d * d..(ib + 1) * d * d];
            for j in 0..n {
                for i in 0..d {
                    col[i] = gv[o * d * n + i * n + j];
                }
                // dV = B^{-1} G, dB = -dV U^H
                linalg::cholesky_solve(l, d, &mut col);
                for i in 0..d {
                    gvv[iv * d * n + i * n + j] += col[i];
                    for c in 0..d {
                        gbm[i * d + c] -= col[i] * uv[o * d * n + c * n + j].conj();
                    }
                }
            }
        }
        for m in gb.chunks_mut(d * d) {
            kernels::ridge_adjoint(m, d);
        }
        Ok((cplx(sb, gb), cplx(sv, gvv)))
    }

    fn quadform_backward(&self, b: Var, y: Var, u: &[C64], g: &Tensor) -> Result<(Tensor, Tensor)> {
        let (sb, sy) = (self.shape(b).to_vec(), self.shape(y).to_vec());
        let d = sb[sb.len() - 1];
        let n = sy[sy.len() - 2];
        let map = batch_map(&sb[..sb.len() - 2], &sy[..sy.len() - 2])?;
        let gq = g.r();
        let mut gb = vec![C64::new(0.0, 0.0); numel(&sb)];
        let mut gy = vec![C64::new(0.0, 0.0); numel(&sy)];
        for (o, (&ib, &iy)) in map.a.iter().zip(&map.b).enumerate() {
            let gbm = &mut gb[ib * d * d..(ib + 1) * d * d];
            for r in 0..n {
                let w = gq[o * n + r];
                if w == 0.0 {
                    continue;
                }
                let ur = &u[(o * n + r) * d..(o * n + r + 1) * d];
                let gyr = &mut gy[(iy * n + r) * d..(iy * n + r + 1) * d];
                // dY = 2 g u, dB = -g u u^H
                for i in 0..d {
                    gyr[i] += ur[i] * (2.0 * w);
                    let ui = ur[i] * w;
                    for c in 0..d {
                        gbm[i * d + c] -= ui * ur[c].conj();
                    }
                }
            }
        }
        for m in gb.chunks_mut(d * d) {
            kernels::ridge_adjoint(m, d);
        }
        Ok((cplx(sb, gb), cplx(sy, gy)))
    }
}

/// Cotangents of every node reached from the loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    parameters: Vec<Var>,
    shapes: Vec<(Vec<usize>, DType)>,
}

impl Gradients {
    /// Stored cotangent of a node: the real gradient for real nodes,
    /// `dl/dRe + j dl/dIm` for complex nodes. `None` if unreached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Cotangent of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (s, d) = &self.shapes[v.0];
            Tensor::zeros(s, *d)
        })
    }

    /// Wirtinger partial `dl/dz*` of a complex node (half the stored cotangent).
    pub fn wirtinger(&self, v: Var) -> Option<Vec<C64>> {
        self.get(v).and_then(|t| t.as_complex()).map(|c| c.iter().map(|z| z * 0.5).collect())
    }

    /// Real gradient of every registered parameter, in registration order.
    pub fn parameter_grads(&self) -> Vec<(Var, Tensor)> {
        self.parameters.iter().map(|&p| (p, self.wrt(p))).collect()
    }
}

// ---- helpers ------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn real(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::from_parts(shape, Data::Real(data))
}

fn cplx(shape: Vec<usize>, data: Vec<C64>) -> Tensor {
    Tensor::from_parts(shape, Data::Complex(data))
}

fn map_any(t: &Tensor, fr: impl Fn(f64) -> f64, fc: impl Fn(C64) -> C64) -> Tensor {
    match t.data() {
        Data::Real(v) => real(t.shape().to_vec(), v.iter().map(|&x| fr(x)).collect()),
        Data::Complex(v) => cplx(t.shape().to_vec(), v.iter().map(|&z| fc(z)).collect()),
    }
}

fn real_zip(g: &Tensor, x: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
    real(g.shape().to_vec(), g.r().iter().zip(x).map(|(&a, &b)| f(a, b)).collect())
}

fn reduce_any(g: &Tensor, target: &[usize]) -> Tensor {
    match g.data() {
        Data::Real(v) => real(target.to_vec(), reduce_to(v, g.shape(), target)),
        Data::Complex(v) => cplx(target.to_vec(), reduce_to(v, g.shape(), target)),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        slot @ None => *slot = Some(g),
        Some(acc) => {
            let merged = match (acc.data(), g.data()) {
                (Data::Real(a), Data::Real(b)) => Data::Real(a.iter().zip(b).map(|(x, y)| x + y).collect()),
                (Data::Complex(a), Data::Complex(b)) => Data::Complex(a.iter().zip(b).map(|(x, y)| x + y).collect()),
                _ => unreachable!("cotangent dtype follows the node dtype"),
            };
            *acc = Tensor::from_parts(acc.shape().to_vec(), merged);
        }
    }
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        bail!(Shape, "axis {axis} out of range for shape {:?}", shape);
    }
    Ok(())
}

/// (product of dims before `axis`, product of dims after `axis`).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

/// Applies `f` to every 1-D lane along `axis`.
fn axis_map(x: &[f64], shape: &[usize], axis: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let (outer, inner) = split_axis(shape, axis);
    let n = shape[axis];
    let mut out = vec![0.0; x.len()];
    let mut lane = vec![0.0; n];
    let mut res = vec![0.0; n];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * n * inner + j;
            for k in 0..n {
                lane[k] = x[base + k * inner];
            }
            f(&lane, &mut res);
            for k in 0..n {
                out[base + k * inner] = res[k];
            }
        }
    }
    out
}

fn slice_lanes<T: Copy>(x: &[T], outer: usize, n: usize, inner: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
    }
    out
}

fn unslice_lanes<T: Copy + Default>(g: &[T], outer: usize, n: usize, inner: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::default(); outer * n * inner];
    for o in 0..outer {
        out[(o * n + start) * inner..(o * n + start + len) * inner]
            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

fn concat_lanes<T: Copy>(parts: &[(&[T], usize)], outer: usize, inner: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (data, n) in parts {
            out.extend_from_slice(&data[o * n * inner..(o + 1) * n * inner]);
        }
    }
    out
}

fn conj_transpose(x: &[C64], shape: &[usize]) -> (Vec<usize>, Vec<C64>) {
    let nd = shape.len();
    let mut perm: Vec<usize> = (0..nd).collect();
    perm.swap(nd - 1, nd - 2);
    let (s, d) = permute_data(x, shape, &perm);
    (s, d.into_iter().map(|z| z.conj()).collect())
}

fn unravel(mut i: usize, shape: &[usize]) -> Vec<usize> {
    let strides = contiguous_strides(shape);
    strides
        .iter()
        .map(|&s| {
            let v = i / s.max(1);
            i %= s.max(1);
            v
        })
        .collect()
}
