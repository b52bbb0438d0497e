use super::gemm::{gemm, View};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    WindowSoftmax { x: Var, width: Option<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<T>, rstd: Vec<T> },
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Transpose(Var),
    Reshape(Var),
    GatherDot { v: Var, pool: Var, idx: Vec<usize> },
    Pick { x: Var, idx: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::WindowSoftmax { .. } => "window_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1d { .. } => "conv1d",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::GatherDot { .. } => "gather_dot",
            Op::Pick { .. } => "pick",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of one forward pass. Confined to a single thread; build a fresh
/// graph per pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, len, inner)` strides for reducing over `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn gelu_parts<T: Float>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044_715);
    let half = T::of(0.5);
    let inner = c * (x + k * x * x * x);
    let th = inner.tanh();
    let value = half * x * (T::one() + th);
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    let deriv = half * (T::one() + th) + half * x * (T::one() - th * th) * dinner;
    (value, deriv)
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf tensor; rejected when it holds a non-finite value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_unchecked(value, Op::Leaf, requires_grad))
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last `backward` call with respect to leaf `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn grad_data(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0)?.as_deref()
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(Tensor { shape, data }, op, requires_grad))
    }

    fn d(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn s(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0]
            .value
            .dims2()
            .ok_or_else(|| Error::invalid(format!("{op}: expected a rank-2 tensor, got {:?}", self.s(v))))
    }

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<()> {
        if axis >= self.s(v).len() {
            return Err(Error::invalid(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.s(v)
            )));
        }
        Ok(())
    }

    // ---- forward operations -------------------------------------------

    /// Matrix product of rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2("matmul", a)?;
        let (br, bc) = self.dims2("matmul", b)?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", self.s(a), self.s(b)));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let av = View::row_major(self.d(a), ar, ac);
            let bv = View::row_major(self.d(b), br, bc);
            let av = if ta { av.t() } else { av };
            let bv = if tb { bv.t() } else { bv };
            gemm(av, bv, T::zero(), &mut out);
        }
        self.push(vec![m, n], out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.s(a) != self.s(b) {
            return Err(Error::shape(op, self.s(a), self.s(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.d(a).iter().zip(self.d(b)).map(|(&x, &y)| x + y).collect();
        self.push(self.s(a).to_vec(), out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.d(a).iter().zip(self.d(b)).map(|(&x, &y)| x - y).collect();
        self.push(self.s(a).to_vec(), out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.d(a).iter().zip(self.d(b)).map(|(&x, &y)| x * y).collect();
        self.push(self.s(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector of length `n` to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.s(x).last().unwrap();
        if self.s(b) != [n] {
            return Err(Error::shape("add_row", self.s(x), self.s(b)));
        }
        let bias = self.d(b);
        let out = self
            .d(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        self.push(self.s(x).to_vec(), out, Op::AddRow(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let out = self.d(x).iter().map(|&v| v * c).collect();
        self.push(self.s(x).to_vec(), out, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.d(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push(self.s(x).to_vec(), out, Op::Relu(x), &[x])
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.d(x).iter().map(|&v| gelu_parts(v).0).collect();
        self.push(self.s(x).to_vec(), out, Op::Gelu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.d(x).iter().map(|&v| v.exp()).collect();
        self.push(self.s(x).to_vec(), out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.d(x).iter().map(|&v| v.ln()).collect();
        self.push(self.s(x).to_vec(), out, Op::Log(x), &[x])
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let (outer, len, inner) = axis_split(self.s(x), axis);
        let src = self.d(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mx = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for j in 0..len {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / z;
                }
            }
        }
        self.push(self.s(x).to_vec(), out, Op::Softmax { x, axis }, &[x])
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let (outer, len, inner) = axis_split(self.s(x), axis);
        let src = self.d(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mx = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let z: T = (0..len).map(|j| (src[at(j)] - mx).exp()).sum();
                let lse = mx + z.ln();
                for j in 0..len {
                    out[at(j)] = src[at(j)] - lse;
                }
            }
        }
        self.push(self.s(x).to_vec(), out, Op::LogSoftmax { x, axis }, &[x])
    }

    /// Softmax over the last axis of square score blocks `[.., T, T]`,
    /// restricted to a causal band: row `t` only sees columns
    /// `t - width + 1 ..= t` (all of `0 ..= t` when `width` is `None`).
    ///
    /// Equivalent to adding `-inf` outside the band before a softmax; masked
    /// entries are exactly zero and receive exactly zero gradient.
    pub fn window_softmax(&mut self, x: Var, width: Option<usize>) -> Result<Var> {
        let shape = self.s(x).to_vec();
        let r = shape.len();
        if r < 2 || shape[r - 1] != shape[r - 2] {
            return Err(Error::invalid(format!(
                "window_softmax: expected square trailing dims, got {shape:?}"
            )));
        }
        if width == Some(0) {
            return Err(Error::invalid("window_softmax: width must be positive"));
        }
        let t = shape[r - 1];
        let src = self.d(x);
        let mut out = vec![T::zero(); src.len()];
        for (blk_in, blk_out) in src.chunks(t * t).zip(out.chunks_mut(t * t)) {
            for row in 0..t {
                let lo = width.map_or(0, |w| (row + 1).saturating_sub(w));
                let xs = &blk_in[row * t + lo..=row * t + row];
                let ys = &mut blk_out[row * t + lo..=row * t + row];
                let mx = xs.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for (y, &v) in ys.iter_mut().zip(xs) {
                    *y = (v - mx).exp();
                    z += *y;
                }
                for y in ys.iter_mut() {
                    *y = *y / z;
                }
            }
        }
        self.push(shape, out, Op::WindowSoftmax { x, width }, &[x])
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = *self.s(x).last().unwrap();
        if self.s(gain) != [n] || self.s(bias) != [n] {
            return Err(Error::shape("layer_norm", self.s(x), self.s(gain)));
        }
        let eps = T::of(eps);
        let nf = T::of(n as f64);
        let (g, b) = (self.d(gain), self.d(bias));
        let rows = self.d(x).len() / n;
        let mut normed = vec![T::zero(); rows * n];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * n];
        for (r, row) in self.d(x).chunks(n).enumerate() {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                normed[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let shape = self.s(x).to_vec();
        self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Strided 1-D convolution over time with explicit left zero padding.
    ///
    /// `x` is `[L, C_in]`, `w` is `[K, C_in, C_out]`, `b` is `[C_out]`;
    /// the output is `[floor((L + pad - K) / stride) + 1, C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (len, cin) = self.dims2("conv1d", x)?;
        let ws = self.s(w).to_vec();
        if ws.len() != 3 || ws[1] != cin || self.s(b) != [ws[2]] {
            return Err(Error::shape("conv1d", self.s(x), &ws));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d: stride must be positive"));
        }
        let (k, cout) = (ws[0], ws[2]);
        if len + pad < k {
            return Err(Error::invalid(format!(
                "conv1d: input length {len} (+{pad} padding) shorter than kernel {k}"
            )));
        }
        let lout = (len + pad - k) / stride + 1;
        let mut out = Vec::with_capacity(lout * cout);
        for _ in 0..lout {
            out.extend_from_slice(self.d(b));
        }
        let geo = ConvGeometry {
            len,
            cin,
            k,
            cout,
            stride,
            pad,
            lout,
        };
        let xd = self.d(x);
        let wd = self.d(w);
        let o0 = geo.first_interior();
        for o in 0..o0.min(lout) {
            let patch = geo.patch(xd, o);
            let wv = View::row_major(wd, k * cin, cout);
            gemm(
                View::row_major(&patch, 1, k * cin),
                wv,
                T::one(),
                &mut out[o * cout..(o + 1) * cout],
            );
        }
        if o0 < lout {
            let av = geo.interior_view(xd, o0);
            gemm(av, View::row_major(wd, k * cin, cout), T::one(), &mut out[o0 * cout..]);
        }
        self.push(vec![lout, cout], out, Op::Conv1d { x, w, b, stride, pad }, &[x, w, b])
    }

    /// Sum of elementwise products, as a one-element tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = dot(self.d(a), self.d(b));
        self.push(vec![1], vec![v], Op::Dot(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.d(x).iter().copied().sum();
        self.push(vec![1], vec![v], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::of(self.d(x).len() as f64);
        let v = self.d(x).iter().copied().sum::<T>() / n;
        self.push(vec![1], vec![v], Op::Mean(x), &[x])
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let shape = self.s(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.d(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let base = o * len * inner + j * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut oshape: Vec<usize> = shape.iter().enumerate().filter(|&(a, _)| a != axis).map(|(_, &d)| d).collect();
        if oshape.is_empty() {
            oshape.push(1);
        }
        self.push(oshape, out, Op::SumAxis { x, axis }, &[x])
    }

    /// Sub-range `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("narrow", x, axis)?;
        let shape = self.s(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow: range {start}..{} out of bounds for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.d(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push(oshape, out, Op::Narrow { x, axis, start }, &[x])
    }

    /// Splits `x` along `axis` into pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        self.check_axis("split", x, axis)?;
        let total: usize = sizes.iter().sum();
        if total != self.s(x)[axis] {
            return Err(Error::shape("split", self.s(x), sizes));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &n in sizes {
            parts.push(self.narrow(x, axis, start, n)?);
            start += n;
        }
        Ok(parts)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat: no inputs"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.s(first).to_vec();
        for &v in &xs[1..] {
            let s = self.s(v);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(a, (p, q))| a == axis || p == q);
            if !ok {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = xs.iter().map(|&v| self.s(v)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let l = self.s(v)[axis];
                out.extend_from_slice(&self.d(v)[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        self.push(
            oshape,
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let src = self.d(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.d(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.s(x), shape));
        }
        let out = self.d(x).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(x), &[x])
    }

    /// `out[n, m] = v[n] . pool[idx[n * M + m]]` for `v: [N, H]`,
    /// `pool: [P, H]`, producing `[N, M]`.
    pub fn gather_dot(&mut self, v: Var, pool: Var, idx: Vec<usize>, m: usize) -> Result<Var> {
        let (n, h) = self.dims2("gather_dot", v)?;
        let (p, h2) = self.dims2("gather_dot", pool)?;
        if h != h2 {
            return Err(Error::shape("gather_dot", self.s(v), self.s(pool)));
        }
        if m == 0 || idx.len() != n * m {
            return Err(Error::invalid(format!(
                "gather_dot: {} indices for {n} rows x {m} candidates",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= p) {
            return Err(Error::invalid(format!("gather_dot: index {bad} out of pool of {p}")));
        }
        let (vd, pd) = (self.d(v), self.d(pool));
        let out = (0..n * m)
            .map(|e| {
                let r = e / m;
                let j = idx[e];
                dot(&vd[r * h..(r + 1) * h], &pd[j * h..(j + 1) * h])
            })
            .collect();
        self.push(vec![n, m], out, Op::GatherDot { v, pool, idx }, &[v, pool])
    }

    /// `out[n] = x[n, idx[n]]`.
    pub fn pick(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, c) = self.dims2("pick", x)?;
        if idx.len() != n {
            return Err(Error::shape("pick", self.s(x), &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::invalid(format!("pick: index {bad} out of {c} columns")));
        }
        let src = self.d(x);
        let out = idx.iter().enumerate().map(|(r, &j)| src[r * c + j]).collect();
        self.push(vec![n], out, Op::Pick { x, idx }, &[x])
    }

    // ---- reverse pass --------------------------------------------------

    /// Populates the gradient of every `requires_grad` leaf with respect to
    /// the scalar `loss`. Leaves unreachable from `loss` get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward: empty graph"));
        }
        if self.d(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.s(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = nodes[a.0].value.dims2().unwrap();
                let (br, bc) = nodes[b.0].value.dims2().unwrap();
                let av = View::row_major(self.d(a), ar, ac);
                let bv = View::row_major(self.d(b), br, bc);
                let ae = if ta { av.t() } else { av };
                let be = if tb { bv.t() } else { bv };
                let gv = View::row_major(g, ae.rows, be.cols);
                if let Some(ga) = slot(nodes, grads, a) {
                    if ta {
                        gemm(be, gv.t(), T::one(), ga);
                    } else {
                        gemm(gv, be.t(), T::one(), ga);
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    if tb {
                        gemm(gv.t(), ae, T::one(), gb);
                    } else {
                        gemm(ae.t(), gv, T::one(), gb);
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    axpy(T::one(), g, gb);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    axpy(-T::one(), g, gb);
                }
            }
            &Op::AddRow(x, b) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    axpy(T::one(), g, gx);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        axpy(T::one(), row, gb);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((d, &gi), &bv) in ga.iter_mut().zip(g).zip(self.d(b)) {
                        *d += gi * bv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for ((d, &gi), &av) in gb.iter_mut().zip(g).zip(self.d(a)) {
                        *d += gi * av;
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    axpy(c, g, gx);
                }
            }
            &Op::Relu(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Gelu(x) => {
                let xd = self.d(x);
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, &gi), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *d += gi * gelu_parts(v).1;
                    }
                }
            }
            &Op::Exp(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *d += gi * y;
                    }
                }
            }
            &Op::Log(x) => {
                let xd = self.d(x);
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((d, &gi), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *d += gi / v;
                    }
                }
            }
            &Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), axis);
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for k in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + k;
                            let s: T = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] += out[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
            }
            &Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), axis);
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for k in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + k;
                            let s: T = (0..len).map(|j| g[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] += g[at(j)] - out[at(j)].exp() * s;
                            }
                        }
                    }
                }
            }
            &Op::WindowSoftmax { x, width } => {
                let t = *nodes[x.0].value.shape().last().unwrap();
                if let Some(gx) = slot(nodes, grads, x) {
                    for ((gb, ob), db) in g.chunks(t * t).zip(out.chunks(t * t)).zip(gx.chunks_mut(t * t)) {
                        for row in 0..t {
                            let lo = width.map_or(0, |w| (row + 1).saturating_sub(w));
                            let r = row * t + lo..=row * t + row;
                            let s: T = gb[r.clone()].iter().zip(&ob[r.clone()]).map(|(&a, &b)| a * b).sum();
                            for j in r {
                                db[j] += ob[j] * (gb[j] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let n = nodes[gain.0].value.len();
                let nf = T::of(n as f64);
                let gd = self.d(*gain);
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for (grow, hrow) in g.chunks(n).zip(normed.chunks(n)) {
                        for j in 0..n {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for grow in g.chunks(n) {
                        axpy(T::one(), grow, gb);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let mut dh = vec![T::zero(); n];
                    for (r, (grow, hrow)) in g.chunks(n).zip(normed.chunks(n)).enumerate() {
                        for j in 0..n {
                            dh[j] = grow[j] * gd[j];
                        }
                        let m1 = dh.iter().copied().sum::<T>() / nf;
                        let m2 = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        let dst = &mut gx[r * n..(r + 1) * n];
                        for j in 0..n {
                            dst[j] += rstd[r] * (dh[j] - m1 - hrow[j] * m2);
                        }
                    }
                }
            }
            &Op::Conv1d { x, w, b, stride, pad } => {
                let (len, cin) = nodes[x.0].value.dims2().unwrap();
                let ws = nodes[w.0].value.shape();
                let (k, cout) = (ws[0], ws[2]);
                let lout = g.len() / cout;
                let geo = ConvGeometry {
                    len,
                    cin,
                    k,
                    cout,
                    stride,
                    pad,
                    lout,
                };
                let o0 = geo.first_interior().min(lout);
                let xd = self.d(x);
                let wd = self.d(w);
                if let Some(gb) = slot(nodes, grads, b) {
                    for row in g.chunks(cout) {
                        axpy(T::one(), row, gb);
                    }
                }
                if let Some(gw) = slot(nodes, grads, w) {
                    for o in 0..o0 {
                        let patch = geo.patch(xd, o);
                        gemm(
                            View::row_major(&patch, 1, k * cin).t(),
                            View::row_major(&g[o * cout..(o + 1) * cout], 1, cout),
                            T::one(),
                            gw,
                        );
                    }
                    if o0 < lout {
                        let av = geo.interior_view(xd, o0);
                        gemm(
                            av.t(),
                            View::row_major(&g[o0 * cout..], lout - o0, cout),
                            T::one(),
                            gw,
                        );
                    }
                }
                if let Some(gx) = slot(nodes, grads, x) {
                    let kc = k * cin;
                    let mut dpatch = vec![T::zero(); lout * kc];
                    gemm(
                        View::row_major(g, lout, cout),
                        View::row_major(wd, kc, cout).t(),
                        T::zero(),
                        &mut dpatch,
                    );
                    for o in 0..lout {
                        let start = (o * stride) as isize - pad as isize;
                        let row = &dpatch[o * kc..(o + 1) * kc];
                        for kk in 0..k {
                            let t = start + kk as isize;
                            if t < 0 || t as usize >= len {
                                continue;
                            }
                            let t = t as usize;
                            axpy(T::one(), &row[kk * cin..(kk + 1) * cin], &mut gx[t * cin..(t + 1) * cin]);
                        }
                    }
                }
            }
            &Op::Dot(a, b) => {
                let gs = g[0];
                if let Some(ga) = slot(nodes, grads, a) {
                    axpy(gs, self.d(b), ga);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    axpy(gs, self.d(a), gb);
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(x) => {
                let n = T::of(nodes[x.0].value.len() as f64);
                if let Some(gx) = slot(nodes, grads, x) {
                    let v = g[0] / n;
                    gx.iter_mut().for_each(|d| *d += v);
                }
            }
            &Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), axis);
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for j in 0..len {
                            let base = o * len * inner + j * inner;
                            axpy(T::one(), &g[o * inner..(o + 1) * inner], &mut gx[base..base + inner]);
                        }
                    }
                }
            }
            &Op::Narrow { x, axis, start } => {
                let (outer, full, inner) = axis_split(nodes[x.0].value.shape(), axis);
                let len = nodes[i].value.shape()[axis];
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        axpy(
                            T::one(),
                            &g[o * len * inner..(o + 1) * len * inner],
                            &mut gx[base..base + len * inner],
                        );
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(nodes[i].value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let l = nodes[v.0].value.shape()[*axis];
                    if let Some(gv) = slot(nodes, grads, v) {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            axpy(
                                T::one(),
                                &g[src..src + l * inner],
                                &mut gv[o * l * inner..(o + 1) * l * inner],
                            );
                        }
                    }
                    offset += l;
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = nodes[x.0].value.dims2().unwrap();
                if let Some(gx) = slot(nodes, grads, x) {
                    for a in 0..r {
                        for b2 in 0..c {
                            gx[a * c + b2] += g[b2 * r + a];
                        }
                    }
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    axpy(T::one(), g, gx);
                }
            }
            Op::GatherDot { v, pool, idx } => {
                let (n, h) = nodes[v.0].value.dims2().unwrap();
                let m = idx.len() / n;
                let (vd, pd) = (self.d(*v), self.d(*pool));
                if let Some(gv) = slot(nodes, grads, *v) {
                    for r in 0..n {
                        let dst = &mut gv[r * h..(r + 1) * h];
                        for c in 0..m {
                            let j = idx[r * m + c];
                            axpy(g[r * m + c], &pd[j * h..(j + 1) * h], dst);
                        }
                    }
                }
                if let Some(gp) = slot(nodes, grads, *pool) {
                    for r in 0..n {
                        let src = &vd[r * h..(r + 1) * h];
                        for c in 0..m {
                            let j = idx[r * m + c];
                            axpy(g[r * m + c], src, &mut gp[j * h..(j + 1) * h]);
                        }
                    }
                }
            }
            Op::Pick { x, idx } => {
                let c = nodes[x.0].value.shape()[1];
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (r, &j) in idx.iter().enumerate() {
                        gx[r * c + j] += g[r];
                    }
                }
            }
        }
    }
}

fn slot<'g, T: Float>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]))
}

/// Index arithmetic shared by the convolution forward and reverse passes.
struct ConvGeometry {
    len: usize,
    cin: usize,
    k: usize,
    #[allow(dead_code)]
    cout: usize,
    stride: usize,
    pad: usize,
    lout: usize,
}

impl ConvGeometry {
    /// First output position whose window lies entirely inside the input.
    fn first_interior(&self) -> usize {
        self.pad.div_ceil(self.stride)
    }

    /// Zero-padded receptive window of output position `o`, flattened.
    fn patch<T: Float>(&self, x: &[T], o: usize) -> Vec<T> {
        let mut p = vec![T::zero(); self.k * self.cin];
        let start = (o * self.stride) as isize - self.pad as isize;
        for kk in 0..self.k {
            let t = start + kk as isize;
            if t >= 0 && (t as usize) < self.len {
                let t = t as usize;
                p[kk * self.cin..(kk + 1) * self.cin].copy_from_slice(&x[t * self.cin..(t + 1) * self.cin]);
            }
        }
        p
    }

    /// Overlapping strided view of the windows of positions `o0..lout`;
    /// consecutive windows are contiguous rows of the input.
    fn interior_view<'a, T>(&self, x: &'a [T], o0: usize) -> View<'a, T> {
        let start = (o0 * self.stride - self.pad) * self.cin;
        View {
            data: &x[start..],
            rows: self.lout - o0,
            cols: self.k * self.cin,
            rs: self.stride * self.cin,
            cs: 1,
        }
    }
}
