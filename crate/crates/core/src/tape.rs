//! Single-use reverse-mode tape.
//!
//! Every primitive application appends one node holding its output value and
//! whatever it needs for the backward sweep. Inputs always precede outputs, so
//! the backward pass is a single reverse scan over the node list.
//!
//! Shape rules:
//!
//! | op              | inputs                        | output            |
//! |-----------------|-------------------------------|-------------------|
//! | `matmul`        | `[m,k]`, `[k,n]`              | `[m,n]`           |
//! | `add/sub/mul`   | equal shapes, or one `[1]`    | the larger shape  |
//! | `concat`        | equal except on `axis`        | summed on `axis`  |
//! | `slice`         | any rank                      | `len` on `axis`   |
//! | `transpose`     | `[m,n]`                       | `[n,m]`           |
//! | `softmax`       | any rank, over the last dim   | same              |
//! | `layer_norm`    | `[..,d]`, `[d]`, `[d]`        | same as input     |
//! | `upsample2x`    | `[h,w]` or `[h,w,c]`          | `[2h,2w(,c)]`     |
//! | `sum`           | any                           | `[1]`             |

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer-norm variance floor. Small enough that normalized rows have unit
/// variance to within 1e-8 whenever the raw variance exceeds 1e-2.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Recip(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Upsample2x(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Recip(..) => "recip",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Upsample2x(..) => "upsample2x",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-axis bilinear taps for 2x upsampling with half-pixel centers.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

fn hwc(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w] => Some((h, w, 1)),
        [h, w, c] => Some((h, w, c)),
        _ => None,
    }
}

/// Splits a shape around `axis` into (outer, axis_len, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient written by [`Tape::backward`] into a grad-enabled leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Records an input. Leaves with `requires_grad` receive a gradient on backward.
    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` as a constant, blocking gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, data: Vec<f64>, shape: &[usize], op: Op) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = self.op_requires_grad(&op);
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => rg(a) || rg(b),
            Op::Concat { inputs, .. } => inputs.iter().any(rg),
            Op::LayerNorm { x, gamma, beta, .. } => rg(x) || rg(gamma) || rg(beta),
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Slice { x, .. }
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Gelu(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Recip(x)
            | Op::Softmax(x)
            | Op::Upsample2x(x)
            | Op::Sum(x) => rg(x),
        }
    }

    // ----- forward primitives -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("lhs {sa:?} and rhs {sb:?} have incompatible inner dims"),
                ))
            }
        };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        self.push(out, &[m, n], Op::MatMul(a, b))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (data, shape) = if ta.shape() == tb.shape() {
            let d = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (d, ta.shape().to_vec())
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            (
                ta.data().iter().map(|&x| f(x, y)).collect(),
                ta.shape().to_vec(),
            )
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            (
                tb.data().iter().map(|&y| f(x, y)).collect(),
                tb.shape().to_vec(),
            )
        } else {
            return Err(Error::shape(
                name,
                format!(
                    "{:?} vs {:?} (only scalar broadcasting is allowed)",
                    ta.shape(),
                    tb.shape()
                ),
            ));
        };
        self.push(data, &shape, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push(data, &shape, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v + c).collect();
        let shape = t.shape().to_vec();
        self.push(data, &shape, Op::AddScalar(x))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(
            out,
            &shape,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push(out, &oshape, Op::Slice { x, axis, start })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = match *self.shape(x) {
            [r, c] => (r, c),
            ref s => {
                return Err(Error::shape(
                    "transpose",
                    format!("expected rank 2, got {s:?}"),
                ))
            }
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(out, &[c, r], Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let data = self.value(x).data().to_vec();
        self.push(data, shape, Op::Reshape(x))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(data, &shape, op)
    }

    /// Exact GELU, `0.5 x (1 + erf(x / sqrt 2))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, gelu_scalar, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid_scalar, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, softplus_scalar, Op::Softplus(x))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = t.shape().to_vec();
        self.push(out, &shape, Op::Softmax(x))
    }

    /// Normalizes the last dimension, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input last dim {d}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        self.push(
            out,
            &shape,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Bilinear 2x upsampling of the two leading (spatial) axes.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (h, w, c) = hwc(&shape).ok_or_else(|| {
            Error::shape(
                "upsample2x",
                format!("expected [h,w] or [h,w,c], got {shape:?}"),
            )
        })?;
        let (ty, tx) = (upsample_taps(h), upsample_taps(w));
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; oh * ow * c];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let dst = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                for &(yy, wy) in &[(y0, wy0), (y1, wy1)] {
                    for &(xx, wx) in &[(x0, wx0), (x1, wx1)] {
                        let wgt = wy * wx;
                        if wgt == 0.0 {
                            continue;
                        }
                        let s = &src[(yy * w + xx) * c..(yy * w + xx + 1) * c];
                        for (o, &v) in dst.iter_mut().zip(s) {
                            *o += wgt * v;
                        }
                    }
                }
            }
        }
        let mut oshape = shape;
        oshape[0] = oh;
        oshape[1] = ow;
        self.push(out, &oshape, Op::Upsample2x(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(vec![s], &[1], Op::Sum(x))
    }

    // ----- backward -----

    /// Writes `d loss / d leaf` into every grad-enabled leaf. Leaves that do not
    /// participate receive zeros. The tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NotScalar(self.nodes[loss.0].value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            self.propagate(i, &up, &mut grads)?;
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let g = grads
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            node.value.set_grad(g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let rg = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if rg(*a) {
                    let ga = acc(grads, *a, m * k);
                    let bd = tb.data();
                    for r in 0..m {
                        let urow = &up[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[r * k + p] += urow.iter().zip(brow).map(|(u, b)| u * b).sum::<f64>();
                        }
                    }
                }
                if rg(*b) {
                    let gb = acc(grads, *b, k * n);
                    let ad = ta.data();
                    for r in 0..m {
                        let urow = &up[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = ad[r * k + p];
                            if a_rp == 0.0 {
                                continue;
                            }
                            for (g, &u) in gb[p * n..(p + 1) * n].iter_mut().zip(urow) {
                                *g += a_rp * u;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    if !rg(v) {
                        continue;
                    }
                    let n = val(v).numel();
                    let g = acc(grads, v, n);
                    if n == up.len() {
                        for (g, u) in g.iter_mut().zip(up) {
                            *g += s * u;
                        }
                    } else {
                        g[0] += s * up.iter().sum::<f64>();
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if !rg(v) {
                        continue;
                    }
                    let n = val(v).numel();
                    let od = val(other).data();
                    let g = acc(grads, v, n);
                    if n == up.len() {
                        if od.len() == n {
                            for ((g, u), o) in g.iter_mut().zip(up).zip(od) {
                                *g += u * o;
                            }
                        } else {
                            for (g, u) in g.iter_mut().zip(up) {
                                *g += u * od[0];
                            }
                        }
                    } else {
                        g[0] += up.iter().zip(od).map(|(u, o)| u * o).sum::<f64>();
                    }
                }
            }
            Op::Scale(x, f) => {
                if rg(*x) {
                    let g = acc(grads, *x, up.len());
                    for (g, u) in g.iter_mut().zip(up) {
                        *g += f * u;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if rg(*x) {
                    let g = acc(grads, *x, up.len());
                    for (g, u) in g.iter_mut().zip(up) {
                        *g += u;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = val(v).shape()[*axis];
                    if rg(v) {
                        let g = acc(grads, v, outer * len * inner);
                        for o in 0..outer {
                            let src = &up
                                [(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (g, u) in g[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                            {
                                *g += u;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if rg(*x) {
                    let (outer, n, inner) = split_axis(val(*x).shape(), *axis);
                    let len = out.shape()[*axis];
                    let g = acc(grads, *x, outer * n * inner);
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        for (g, u) in g[base..base + len * inner]
                            .iter_mut()
                            .zip(&up[o * len * inner..(o + 1) * len * inner])
                        {
                            *g += u;
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if rg(*x) {
                    let (r, c) = (val(*x).shape()[0], val(*x).shape()[1]);
                    let g = acc(grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += up[j * r + i];
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if rg(*x) {
                    let xd = val(*x).data();
                    let g = acc(grads, *x, up.len());
                    for ((g, u), &xv) in g.iter_mut().zip(up).zip(xd) {
                        *g += u * gelu_grad(xv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if rg(*x) {
                    let g = acc(grads, *x, up.len());
                    for ((g, u), &y) in g.iter_mut().zip(up).zip(out.data()) {
                        *g += u * y * (1.0 - y);
                    }
                }
            }
            Op::Softplus(x) => {
                if rg(*x) {
                    let xd = val(*x).data();
                    let g = acc(grads, *x, up.len());
                    for ((g, u), &xv) in g.iter_mut().zip(up).zip(xd) {
                        *g += u * sigmoid_scalar(xv);
                    }
                }
            }
            Op::Recip(x) => {
                if rg(*x) {
                    let g = acc(grads, *x, up.len());
                    for ((g, u), &y) in g.iter_mut().zip(up).zip(out.data()) {
                        *g -= u * y * y;
                    }
                }
            }
            Op::Softmax(x) => {
                if rg(*x) {
                    let d = *out.shape().last().unwrap();
                    let g = acc(grads, *x, up.len());
                    for ((grow, urow), yrow) in
                        g.chunks_mut(d).zip(up.chunks(d)).zip(out.data().chunks(d))
                    {
                        let dot: f64 = urow.iter().zip(yrow).map(|(u, y)| u * y).sum();
                        for ((g, u), y) in grow.iter_mut().zip(urow).zip(yrow) {
                            *g += y * (u - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(*gamma).numel();
                let gd = val(*gamma).data();
                if rg(*gamma) {
                    let g = acc(grads, *gamma, d);
                    for (urow, hrow) in up.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += urow[j] * hrow[j];
                        }
                    }
                }
                if rg(*beta) {
                    let g = acc(grads, *beta, d);
                    for urow in up.chunks(d) {
                        for j in 0..d {
                            g[j] += urow[j];
                        }
                    }
                }
                if rg(*x) {
                    let g = acc(grads, *x, up.len());
                    let mut dh = vec![0.0; d];
                    for (r, (grow, (urow, hrow))) in g
                        .chunks_mut(d)
                        .zip(up.chunks(d).zip(xhat.chunks(d)))
                        .enumerate()
                    {
                        for j in 0..d {
                            dh[j] = urow[j] * gd[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            grow[j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Upsample2x(x) => {
                if rg(*x) {
                    let (h, w, c) = hwc(val(*x).shape()).unwrap();
                    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
                    let ow = 2 * w;
                    let g = acc(grads, *x, h * w * c);
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let u = &up[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                            for &(yy, wy) in &[(y0, wy0), (y1, wy1)] {
                                for &(xx, wx) in &[(x0, wx0), (x1, wx1)] {
                                    let wgt = wy * wx;
                                    if wgt == 0.0 {
                                        continue;
                                    }
                                    let dst = &mut g[(yy * w + xx) * c..(yy * w + xx + 1) * c];
                                    for (d, &uv) in dst.iter_mut().zip(u) {
                                        *d += wgt * uv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if rg(*x) {
                    let n = val(*x).numel();
                    let g = acc(grads, *x, n);
                    for g in g.iter_mut() {
                        *g += up[0];
                    }
                }
            }
        }
        Ok(())
    }
}
