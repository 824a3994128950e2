//! Central finite-difference checks for tape gradients.
//!
//! The checker rebuilds the graph from scratch for every perturbed input, so
//! the analytic gradients it compares against come from a single
//! [`Tape::backward`] call while the numerical ones never touch the backward
//! rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DType, Data, Tape, Tensor, Var, C64};
use crate::error::{bail, Result};

/// Which component of an input element is perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

/// One scalar coordinate of one input tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub part: Part,
}

#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub probe: Probe,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub results: Vec<ProbeResult>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.results.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ProbeResult> {
        self.results
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Every scalar coordinate of `inputs` (real and imaginary parts of complex ones).
pub fn all_probes(inputs: &[Tensor]) -> Vec<Probe> {
    let mut out = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for index in 0..t.numel() {
            out.push(Probe { input: i, index, part: Part::Re });
            if t.dtype() == DType::Complex {
                out.push(Probe { input: i, index, part: Part::Im });
            }
        }
    }
    out
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences with step `h`. Real inputs are registered as parameters,
/// complex ones as constants (their cotangent is read all the same).
pub fn check_gradients<F>(inputs: &[Tensor], probes: &[Probe], h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(xs.len());
        for x in xs {
            vars.push(match x.dtype() {
                DType::Real => tape.parameter(x.clone())?,
                DType::Complex => tape.constant(x.clone()),
            });
        }
        let loss = build(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (tape, vars, loss) = eval(inputs)?;
    let grads = tape.backward(loss)?;
    let mut results = Vec::with_capacity(probes.len());
    for &probe in probes {
        let Some(x) = inputs.get(probe.input) else {
            bail!(InvalidArgument, "probe refers to missing input {}", probe.input);
        };
        if probe.index >= x.numel() || (probe.part == Part::Im && x.dtype() == DType::Real) {
            bail!(InvalidArgument, "probe {probe:?} does not address input of shape {:?}", x.shape());
        }
        let g = grads.wrt(vars[probe.input]);
        let analytic = match (g.data(), probe.part) {
            (Data::Real(v), _) => v[probe.index],
            (Data::Complex(v), Part::Re) => v[probe.index].re,
            (Data::Complex(v), Part::Im) => v[probe.index].im,
        };
        let value_at = |delta: f64| -> Result<f64> {
            let mut xs = inputs.to_vec();
            xs[probe.input] = perturbed(&xs[probe.input], probe, delta);
            let (tape, _, loss) = eval(&xs)?;
            tape.value(loss)
                .item()
                .ok_or_else(|| crate::Error::InvalidArgument("loss is not a real scalar".into()))
        };
        let numeric = (value_at(h)? - value_at(-h)?) / (2.0 * h);
        results.push(ProbeResult {
            probe,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { results })
}

fn perturbed(t: &Tensor, p: Probe, delta: f64) -> Tensor {
    match t.data() {
        Data::Real(v) => {
            let mut v = v.clone();
            v[p.index] += delta;
            Tensor::real(t.shape(), v).expect("same shape")
        }
        Data::Complex(v) => {
            let mut v = v.clone();
            match p.part {
                Part::Re => v[p.index].re += delta,
                Part::Im => v[p.index].im += delta,
            }
            Tensor::complex(t.shape(), v).expect("same shape")
        }
    }
}

/// Random primitive applied by [`RandomGraph`]. Operands index the running
/// pool of real (`R`) or complex (`C`) 3x3 nodes.
#[derive(Clone, Debug)]
pub enum GraphOp {
    AddR(usize, usize),
    SubC(usize, usize),
    MulR(usize, usize),
    MulC(usize, usize),
    DivR(usize, usize),
    DivC(usize, usize, usize),
    ScaleC(usize, f64),
    ExpTanh(usize),
    Sigmoid(usize),
    LnSoft(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Softmax(usize, usize),
    LseCentre(usize, usize),
    MeanBroadcast(usize, usize),
    MatMulR(usize, usize),
    MatMulC(usize, usize),
    MakeComplex(usize, usize),
    ToComplex(usize),
    Conj(usize),
    Abs2(usize),
    Re(usize),
    Im(usize),
    HermT(usize),
    Transpose(usize),
    SliceConcat(usize),
    StackSum(usize, usize),
    LogDet(usize),
    Solve(usize, usize),
    QuadForm(usize, usize),
    L2Normalize(usize),
    Rnn(usize, usize),
}

/// Seeded random computation graph over three real 3x3 parameters, ending in
/// a random linear functional of its last real and complex nodes.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub inputs: Vec<Tensor>,
    pub ops: Vec<GraphOp>,
    readout_r: Tensor,
    readout_c: Tensor,
}

const N: usize = 3;

impl RandomGraph {
    pub fn new(seed: u64, num_ops: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..N * N).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let inputs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::real(&[N, N], mat(&mut rng)).expect("shape"))
            .collect();
        // the pools start with the three parameters and one complex pairing
        let (mut nr, mut nc) = (3usize, 1usize);
        let mut ops = Vec::with_capacity(num_ops);
        for i in 0..num_ops {
            let r = |rng: &mut ChaCha8Rng, n: usize| rng.random_range(0..n);
            let choice = if i == 0 { 17 } else { rng.random_range(0..32) };
            let op = match choice {
                0 => GraphOp::AddR(r(&mut rng, nr), r(&mut rng, nr)),
                1 => GraphOp::SubC(r(&mut rng, nc), r(&mut rng, nc)),
                2 => GraphOp::MulR(r(&mut rng, nr), r(&mut rng, nr)),
                3 => GraphOp::MulC(r(&mut rng, nc), r(&mut rng, nc)),
                4 => GraphOp::DivR(r(&mut rng, nr), r(&mut rng, nr)),
                5 => GraphOp::DivC(r(&mut rng, nc), r(&mut rng, nr), r(&mut rng, nr)),
                6 => GraphOp::ScaleC(r(&mut rng, nc), rng.random_range(-2.0..2.0)),
                7 => GraphOp::ExpTanh(r(&mut rng, nr)),
                8 => GraphOp::Sigmoid(r(&mut rng, nr)),
                9 => GraphOp::LnSoft(r(&mut rng, nr)),
                10 => GraphOp::Relu(r(&mut rng, nr)),
                11 => GraphOp::ClampMin(r(&mut rng, nr), rng.random_range(-0.5..0.5)),
                12 => GraphOp::Softmax(r(&mut rng, nr), r(&mut rng, 2)),
                13 => GraphOp::LseCentre(r(&mut rng, nr), r(&mut rng, 2)),
                14 => GraphOp::MeanBroadcast(r(&mut rng, nr), r(&mut rng, 2)),
                15 => GraphOp::MatMulR(r(&mut rng, nr), r(&mut rng, nr)),
                16 => GraphOp::MatMulC(r(&mut rng, nc), r(&mut rng, nc)),
                17 => GraphOp::MakeComplex(r(&mut rng, nr), r(&mut rng, nr)),
                18 => GraphOp::ToComplex(r(&mut rng, nr)),
                19 => GraphOp::Conj(r(&mut rng, nc)),
                20 => GraphOp::Abs2(r(&mut rng, nc)),
                21 => GraphOp::Re(r(&mut rng, nc)),
                22 => GraphOp::Im(r(&mut rng, nc)),
                23 => GraphOp::HermT(r(&mut rng, nc)),
                24 => GraphOp::Transpose(r(&mut rng, nr)),
                25 => GraphOp::SliceConcat(r(&mut rng, nc)),
                26 => GraphOp::StackSum(r(&mut rng, nr), r(&mut rng, nr)),
                27 => GraphOp::LogDet(r(&mut rng, nc)),
                28 => GraphOp::Solve(r(&mut rng, nc), r(&mut rng, nc)),
                29 => GraphOp::QuadForm(r(&mut rng, nc), r(&mut rng, nc)),
                30 => GraphOp::L2Normalize(r(&mut rng, nc)),
                _ => GraphOp::Rnn(r(&mut rng, nr), r(&mut rng, nr)),
            };
            if op_yields_complex(&op) {
                nc += 1;
            } else {
                nr += 1;
            }
            ops.push(op);
        }
        let readout_r = Tensor::real(&[N, N], mat(&mut rng)).expect("shape");
        let readout_c = Tensor::complex(
            &[N, N],
            (0..N * N)
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .expect("shape");
        Self {
            inputs,
            ops,
            readout_r,
            readout_c,
        }
    }

    /// Records the graph on `tape` from the three parameter nodes.
    pub fn build(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        let mut rp: Vec<Var> = params.to_vec();
        let mut cp: Vec<Var> = Vec::new();
        // a fixed complex seed so complex ops can run before any MakeComplex
        let seed_c = tape.make_complex(params[0], params[1])?;
        cp.push(seed_c);
        for op in &self.ops {
            let out = self.apply(tape, op, &rp, &cp)?;
            if op_yields_complex(op) {
                cp.push(out);
            } else {
                rp.push(out);
            }
        }
        let wr = tape.constant(self.readout_r.clone());
        let wc = tape.constant(self.readout_c.clone());
        let lr = tape.mul(*rp.last().expect("non-empty"), wr)?;
        let lr = tape.sum_all(lr)?;
        let lc = tape.mul(*cp.last().expect("non-empty"), wc)?;
        let lc = tape.re(lc)?;
        let lc = tape.sum_all(lc)?;
        tape.add(lr, lc)
    }

    fn apply(&self, t: &mut Tape, op: &GraphOp, rp: &[Var], cp: &[Var]) -> Result<Var> {
        use GraphOp::*;
        Ok(match *op {
            AddR(a, b) => t.add(rp[a], rp[b])?,
            SubC(a, b) => t.sub(cp[a], cp[b])?,
            MulR(a, b) => t.mul(rp[a], rp[b])?,
            MulC(a, b) => t.mul(cp[a], cp[b])?,
            DivR(a, b) => {
                let sq = t.mul(rp[b], rp[b])?;
                let den = t.add_scalar(sq, 1.0);
                t.div(rp[a], den)?
            }
            DivC(a, b, c) => {
                let sq = t.mul(rp[b], rp[b])?;
                let re = t.add_scalar(sq, 1.0);
                let den = t.make_complex(re, rp[c])?;
                t.div(cp[a], den)?
            }
            ScaleC(a, c) => t.scale(cp[a], c),
            ExpTanh(a) => {
                let th = t.tanh(rp[a])?;
                t.exp(th)?
            }
            Sigmoid(a) => t.sigmoid(rp[a])?,
            LnSoft(a) => {
                let sq = t.mul(rp[a], rp[a])?;
                let p = t.add_scalar(sq, 0.5);
                t.ln(p)?
            }
            Relu(a) => t.relu(rp[a])?,
            ClampMin(a, f) => t.clamp_min(rp[a], f)?,
            Softmax(a, axis) => t.softmax(rp[a], axis)?,
            LseCentre(a, axis) => {
                let l = t.logsumexp(rp[a], axis)?;
                t.sub(rp[a], l)?
            }
            MeanBroadcast(a, axis) => {
                let m = t.mean(rp[a], &[axis])?;
                t.mul(rp[a], m)?
            }
            MatMulR(a, b) => t.matmul(rp[a], rp[b])?,
            MatMulC(a, b) => t.matmul(cp[a], cp[b])?,
            MakeComplex(a, b) => t.make_complex(rp[a], rp[b])?,
            ToComplex(a) => t.to_complex(rp[a])?,
            Conj(a) => t.conj(cp[a])?,
            Abs2(a) => t.abs2(cp[a])?,
            Re(a) => t.re(cp[a])?,
            Im(a) => t.im(cp[a])?,
            HermT(a) => t.herm_t(cp[a])?,
            Transpose(a) => t.permute(rp[a], &[1, 0])?,
            SliceConcat(a) => {
                let head = t.slice(cp[a], 1, 0, 1)?;
                let tail = t.slice(cp[a], 1, 1, N - 1)?;
                t.concat(&[tail, head], 1)?
            }
            StackSum(a, b) => {
                let s = t.stack(&[rp[a], rp[b]], 0)?;
                let s = t.sum(s, &[0])?;
                t.reshape(s, &[N, N])?
            }
            LogDet(a) => {
                let h = self.hermitian_pd(t, cp[a])?;
                let ld = t.log_det_hermitian(h)?;
                let ld = t.reshape(ld, &[1, 1])?;
                t.mul(rp_any(rp), ld)?
            }
            Solve(a, b) => {
                let h = self.hermitian_pd(t, cp[a])?;
                t.hermitian_solve(h, cp[b])?
            }
            QuadForm(a, b) => {
                let h = self.hermitian_pd(t, cp[a])?;
                let q = t.quadratic_form(h, cp[b])?;
                let q = t.reshape(q, &[N, 1])?;
                t.mul(rp_any(rp), q)?
            }
            L2Normalize(a) => t.l2_normalize(cp[a])?,
            Rnn(a, b) => {
                let p = t.reshape(rp[a], &[1, N, N])?;
                let w = t.scale(rp[b], 0.5);
                let h = t.rnn_tanh(p, w, a % 2 == 1)?;
                t.reshape(h, &[N, N])?
            }
        })
    }

    /// `A A^H + I` from an arbitrary complex matrix.
    fn hermitian_pd(&self, t: &mut Tape, a: Var) -> Result<Var> {
        let ah = t.herm_t(a)?;
        let g = t.matmul(a, ah)?;
        let eye = t.constant(Tensor::eye(&[], N));
        t.add(g, eye)
    }
}

fn rp_any(rp: &[Var]) -> Var {
    rp[rp.len() - 1]
}

fn op_yields_complex(op: &GraphOp) -> bool {
    use GraphOp::*;
    matches!(
        op,
        SubC(..) | MulC(..) | DivC(..) | ScaleC(..) | MatMulC(..) | MakeComplex(..) | ToComplex(..) | Conj(..) | HermT(..) | SliceConcat(..) | Solve(..) | L2Normalize(..)
    )
}
