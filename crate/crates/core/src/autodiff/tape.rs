//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and enough
//! saved state to run its vector-Jacobian product. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! The op set is deliberately small: exactly what the multi-view fusion
//! graph needs, with no general broadcasting.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Transpose(Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    RepeatRows(Var),
    MaxAll {
        input: Var,
        index: usize,
    },
    Bce {
        pred: Var,
        label: f64,
        clamped: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Variance epsilon used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Records a computation graph for one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Returns `None` for values that do not depend on any parameter.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but yields zeros for unreachable values.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; len])
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `out[p×s] += a[p×q] · b[q×s]` on raw slices.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, s: usize) {
    for i in 0..p {
        let row = &mut out[i * s..(i + 1) * s];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * s..(k + 1) * s];
            row.iter_mut().zip(brow).for_each(|(o, bv)| *o += aik * bv);
        }
    }
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf, honoring the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor.clone(), Op::Leaf, rg)
    }

    /// Records a constant input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::dim(
                op,
                format!("expected a matrix, got shape {other:?}"),
            )),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.matrix_dims(a, "matmul")?;
        let (q2, s) = self.matrix_dims(b, "matmul")?;
        if q != q2 {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; p * s];
        matmul_into(self.data(a), self.data(b), &mut out, p, q, s);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![p, s], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let out = transpose_raw(self.data(a), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    /// Sums any number of same-shaped values.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Usage("add_n of an empty list".into()))?;
        let mut out = self.data(first).to_vec();
        for &v in &inputs[1..] {
            self.same_shape(first, v, "add_n")?;
            add_into(&mut out, self.data(v));
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        let shape = self.shape(first).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddN(inputs.to_vec()), rg))
    }

    /// Adds a bias vector of width `q` to every row of a `p×q` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, q) = self.matrix_dims(a, "add_row")?;
        if self.value(bias).numel() != q {
            return Err(Error::dim(
                "add_row",
                format!(
                    "matrix {:?} with bias {:?}",
                    self.shape(a),
                    self.shape(bias)
                ),
            ));
        }
        let b = self.data(bias);
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % q])
            .collect();
        let rg = self.rg(a) || self.rg(bias);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(a, bias), rg))
    }

    /// `x·W + b` for a `p×in` input, `in×out` weight and width-`out` bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone().with_requires_grad(false);
        value.zero_grad();
        value.data_mut().iter_mut().for_each(|x| *x *= c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone().with_requires_grad(false);
        value.zero_grad();
        value.data_mut().iter_mut().for_each(|x| *x += c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone().with_requires_grad(false);
        value.zero_grad();
        value.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.data(a);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len)
                    .map(|k| x[idx(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (x[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { input: a, axis }, rg))
    }

    /// Normalizes each slice along the last axis, then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if self.value(gain).numel() != d || self.value(shift).numel() != d {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "input {shape:?}, gain {:?}, shift {:?}",
                    self.shape(gain),
                    self.shape(shift)
                ),
            ));
        }
        let rows = self.value(x).numel() / d;
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(shift);
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(shift);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                input: x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Joins values along `axis`; every other axis must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Usage("concat of an empty list".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("{base:?} vs {s:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` consecutive entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let src_shape = self.shape(a).to_vec();
        if axis >= src_shape.len() || len == 0 || start + len > src_shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {src_shape:?}", start + len),
            ));
        }
        let (outer, src_len, inner) = axis_split(&src_shape, axis);
        let x = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * src_len + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = src_shape;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Narrow {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Dilated 1-D convolution over the row axis with "same" zero padding.
    ///
    /// `x` is `L×C_in`, `kernel` is `w×C_in×C_out`, `bias` has `C_out`
    /// entries; `w` must be odd so the output keeps `L` rows.
    pub fn dilated_conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    ) -> Result<Var> {
        let (len, c_in) = self.matrix_dims(x, "dilated_conv1d")?;
        let (w, kc_in, c_out) = match self.shape(kernel) {
            [w, ci, co] => (*w, *ci, *co),
            other => {
                return Err(Error::dim(
                    "dilated_conv1d",
                    format!("kernel must be w×C_in×C_out, got {other:?}"),
                ))
            }
        };
        if w % 2 == 0 {
            return Err(Error::Config(format!("kernel width {w} must be odd")));
        }
        if dilation < 1 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        if kc_in != c_in || self.value(bias).numel() != c_out {
            return Err(Error::dim(
                "dilated_conv1d",
                format!(
                    "input {:?}, kernel {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(kernel),
                    self.shape(bias)
                ),
            ));
        }
        let xs = self.data(x);
        let ks = self.data(kernel);
        let bs = self.data(bias);
        let half = (w - 1) / 2;
        let mut out = vec![0.0; len * c_out];
        for i in 0..len {
            let row = &mut out[i * c_out..(i + 1) * c_out];
            row.copy_from_slice(bs);
            for j in 0..w {
                let pos = i as isize + (j as isize - half as isize) * dilation as isize;
                if pos < 0 || pos >= len as isize {
                    continue;
                }
                let xrow = &xs[pos as usize * c_in..(pos as usize + 1) * c_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    let krow = &ks[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                    row.iter_mut().zip(krow).for_each(|(o, k)| *o += xv * k);
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            Tensor::new(vec![len, c_out], out)?,
            Op::Conv1d {
                input: x,
                kernel,
                bias,
                dilation,
            },
            rg,
        ))
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales
    /// survivors by `1/(1-p)`. Only call this in training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(a, mask)
    }

    /// Applies a fixed multiplicative mask; used for reproducible gradient checks.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(Error::dim("dropout", "mask length differs from input"));
        }
        let out: Vec<f64> = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { input: a, mask }, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::MeanAll(a), rg)
    }

    /// Column means of a `p×q` matrix as a `1×q` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (p, q) = self.matrix_dims(a, "mean_rows")?;
        let x = self.data(a);
        let mut out = vec![0.0; q];
        for i in 0..p {
            add_into(&mut out, &x[i * q..(i + 1) * q]);
        }
        out.iter_mut().for_each(|v| *v /= p as f64);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![1, q], out)?, Op::MeanRows(a), rg))
    }

    /// Stacks a single row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let q = self.value(a).numel();
        if n == 0 {
            return Err(Error::Usage("repeat_rows with n = 0".into()));
        }
        let row = self.data(a).to_vec();
        let out = row.repeat(n);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, q], out)?, Op::RepeatRows(a), rg))
    }

    /// Maximum entry; the gradient goes to the first maximal element.
    pub fn max_all(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let mut index = 0;
        for (i, &v) in x.iter().enumerate() {
            if v > x[index] {
                index = i;
            }
        }
        let m = x[index];
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::MaxAll { input: a, index }, rg)
    }

    /// Binary cross-entropy of a scalar probability against a 0/1 label,
    /// with the probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, pred: Var, label: f64) -> Result<Var> {
        if self.value(pred).numel() != 1 {
            return Err(Error::Usage("bce expects a scalar prediction".into()));
        }
        let p = self.scalar(pred);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let clamped = pc != p;
        let loss = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                label,
                clamped,
            },
            rg,
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &upstream, &mut grads);
            }
            grads[idx] = Some(upstream);
        }
        // Only report gradients for values that actually depend on parameters.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut send = |v: Var, g: &dyn Fn(&mut [f64])| {
            if !self.rg(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).numel()]);
            g(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.value(*a).dims2().unwrap();
                let s = self.value(*b).numel() / q;
                // dA = dY · Bᵀ, dB = Aᵀ · dY
                send(*a, &|ga| {
                    let bt = transpose_raw(self.data(*b), q, s);
                    matmul_into(dy, &bt, ga, p, s, q);
                });
                send(*b, &|gb| {
                    let at = transpose_raw(self.data(*a), p, q);
                    matmul_into(&at, dy, gb, q, p, s);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                send(*a, &|ga| add_into(ga, &transpose_raw(dy, c, r)));
            }
            Op::Add(a, b) => {
                send(*a, &|ga| add_into(ga, dy));
                send(*b, &|gb| add_into(gb, dy));
            }
            Op::AddN(inputs) => {
                for v in inputs {
                    send(*v, &|g| add_into(g, dy));
                }
            }
            Op::AddRow(a, bias) => {
                send(*a, &|ga| add_into(ga, dy));
                let q = self.value(*bias).numel();
                send(*bias, &|gb| {
                    for (i, d) in dy.iter().enumerate() {
                        gb[i % q] += d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                send(*a, &|ga| {
                    ga.iter_mut()
                        .zip(dy.iter().zip(bv))
                        .for_each(|(g, (d, y))| *g += d * y)
                });
                send(*b, &|gb| {
                    gb.iter_mut()
                        .zip(dy.iter().zip(av))
                        .for_each(|(g, (d, x))| *g += d * x)
                });
            }
            Op::Scale(a, c) => {
                send(*a, &|ga| {
                    ga.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d)
                });
            }
            Op::AddScalar(a) => send(*a, &|ga| add_into(ga, dy)),
            Op::Relu(a) => {
                let x = self.data(*a);
                send(*a, &|ga| {
                    for i in 0..ga.len() {
                        if x[i] > 0.0 {
                            ga[i] += dy[i];
                        }
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                send(*input, &|gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..len).map(|k| dy[idx(k)] * y[idx(k)]).sum();
                            for k in 0..len {
                                gx[idx(k)] += y[idx(k)] * (dy[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gain).numel();
                let rows = inv_std.len();
                let gv = self.data(*gain);
                send(*input, &|gx| {
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..d).map(|j| dy[r * d + j] * gv[j]).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = (0..d).map(|j| dxhat[j] * xhat[r * d + j]).sum();
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            gx[r * d + j] +=
                                scale * (d as f64 * dxhat[j] - sum_d - xhat[r * d + j] * sum_dx);
                        }
                    }
                });
                send(*gain, &|gg| {
                    for (i, d_out) in dy.iter().enumerate() {
                        gg[i % d] += d_out * xhat[i];
                    }
                });
                send(*shift, &|gs| {
                    for (i, d_out) in dy.iter().enumerate() {
                        gs[i % d] += d_out;
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    let start = offset;
                    send(*v, &|g| {
                        for o in 0..outer {
                            let src = (o * total + start) * inner;
                            let dst = o * len * inner;
                            add_into(&mut g[dst..dst + len * inner], &dy[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, src_len, inner) = axis_split(self.shape(*input), *axis);
                let len = node.value.shape()[*axis];
                send(*input, &|g| {
                    for o in 0..outer {
                        let dst = (o * src_len + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut g[dst..dst + len * inner], &dy[src..src + len * inner]);
                    }
                });
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                dilation,
            } => {
                let (len, c_in) = self.value(*input).dims2().unwrap();
                let kshape = self.shape(*kernel);
                let (w, c_out) = (kshape[0], kshape[2]);
                let half = (w - 1) / 2;
                let xs = self.data(*input);
                let ks = self.data(*kernel);
                let taps = |i: usize, j: usize| -> Option<usize> {
                    let pos = i as isize + (j as isize - half as isize) * *dilation as isize;
                    (pos >= 0 && pos < len as isize).then_some(pos as usize)
                };
                send(*input, &|gx| {
                    for i in 0..len {
                        let drow = &dy[i * c_out..(i + 1) * c_out];
                        for j in 0..w {
                            let Some(pos) = taps(i, j) else { continue };
                            for c in 0..c_in {
                                let krow = &ks[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                                gx[pos * c_in + c] +=
                                    drow.iter().zip(krow).map(|(d, k)| d * k).sum::<f64>();
                            }
                        }
                    }
                });
                send(*kernel, &|gk| {
                    for i in 0..len {
                        let drow = &dy[i * c_out..(i + 1) * c_out];
                        for j in 0..w {
                            let Some(pos) = taps(i, j) else { continue };
                            for c in 0..c_in {
                                let xv = xs[pos * c_in + c];
                                let krow =
                                    &mut gk[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                                krow.iter_mut().zip(drow).for_each(|(g, d)| *g += xv * d);
                            }
                        }
                    }
                });
                send(*bias, &|gb| {
                    for i in 0..len {
                        add_into(gb, &dy[i * c_out..(i + 1) * c_out]);
                    }
                });
            }
            Op::Dropout { input, mask } => {
                send(*input, &|g| {
                    g.iter_mut()
                        .zip(dy.iter().zip(mask))
                        .for_each(|(g, (d, m))| *g += d * m)
                });
            }
            Op::SumAll(a) => send(*a, &|g| g.iter_mut().for_each(|v| *v += dy[0])),
            Op::MeanAll(a) => {
                let n = self.value(*a).numel() as f64;
                send(*a, &|g| g.iter_mut().for_each(|v| *v += dy[0] / n));
            }
            Op::MeanRows(a) => {
                let (p, q) = self.value(*a).dims2().unwrap();
                send(*a, &|g| {
                    for (i, v) in g.iter_mut().enumerate() {
                        *v += dy[i % q] / p as f64;
                    }
                });
            }
            Op::RepeatRows(a) => {
                let q = self.value(*a).numel();
                send(*a, &|g| {
                    for (i, d) in dy.iter().enumerate() {
                        g[i % q] += d;
                    }
                });
            }
            Op::MaxAll { input, index } => send(*input, &|g| g[*index] += dy[0]),
            Op::Bce {
                pred,
                label,
                clamped,
            } => {
                if !clamped {
                    let p = self.scalar(*pred);
                    send(*pred, &|g| g[0] += dy[0] * (p - label) / (p * (1.0 - p)));
                }
            }
        }
    }
}
