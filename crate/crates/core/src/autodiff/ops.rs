//! Primitive kernels: forward evaluation and vector-Jacobian products.

use super::tensor::Tensor;
use crate::error::{LcmError, Result};

/// Lower clamp applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// The closed set of differentiable operations a tape can record.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// `[m,n] -> [n,m]`
    Transpose,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    Scale(f64),
    /// `[m,n] + [n]`, bias broadcast over rows (also `[n] + [n]`).
    AddBias,
    Tanh,
    Relu,
    /// Elementwise natural log with the input clamped at [`PROB_FLOOR`].
    Log,
    /// Softmax over the last axis, row by row.
    Softmax,
    /// Gathers rows of a `[V,d]` table.
    Gather(Vec<usize>),
    /// Mean of consecutive row segments of the given lengths.
    SegmentMean(Vec<usize>),
    /// Mean of a 2-D tensor along `axis` (0 = down columns, 1 = across rows).
    MeanAxis(usize),
    Sum,
    Mean,
    /// `KL(target || predicted)` averaged over rows; inputs are
    /// `(target, predicted)`.
    KlDivergence,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Transpose => "transpose",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::AddBias => "add_bias",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Log => "log",
            Primitive::Softmax => "softmax",
            Primitive::Gather(_) => "gather",
            Primitive::SegmentMean(_) => "segment_mean",
            Primitive::MeanAxis(_) => "mean_axis",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::KlDivergence => "kl_divergence",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::AddBias
            | Primitive::KlDivergence => 2,
            _ => 1,
        }
    }

    fn shape_err(&self, detail: String) -> LcmError {
        LcmError::Shape { primitive: self.name(), detail }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.arity() {
            return Err(self.shape_err(format!(
                "expected {} inputs, got {}",
                self.arity(),
                inputs.len()
            )));
        }
        let a = inputs[0];
        match self {
            Primitive::MatMul => {
                let b = inputs[1];
                match (a.shape(), b.shape()) {
                    ([m, k], [k2, n]) if k == k2 => {
                        Tensor::matrix(*m, *n, matmul(a.data(), b.data(), *m, *k, *n))
                    }
                    (sa, sb) => Err(self.shape_err(format!("{sa:?} x {sb:?}"))),
                }
            }
            Primitive::Transpose => match a.shape() {
                [m, n] => Tensor::matrix(*n, *m, transpose(a.data(), *m, *n)),
                s => Err(self.shape_err(format!("expected 2-D, got {s:?}"))),
            },
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let b = inputs[1];
                if a.shape() != b.shape() {
                    return Err(self.shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let f: fn(f64, f64) -> f64 = match self {
                    Primitive::Add => |x, y| x + y,
                    Primitive::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::Scale(c) => map(a, |x| c * x),
            Primitive::AddBias => {
                let b = inputs[1];
                let n = *a.shape().last().unwrap_or(&0);
                if a.shape().len() > 2 || b.shape() != [n] {
                    return Err(self.shape_err(format!("{:?} + bias {:?}", a.shape(), b.shape())));
                }
                let mut out = a.clone();
                for row in out.data_mut().chunks_mut(n) {
                    for (o, &bias) in row.iter_mut().zip(b.data()) {
                        *o += bias;
                    }
                }
                Ok(out)
            }
            Primitive::Tanh => map(a, f64::tanh),
            Primitive::Relu => map(a, |x| x.max(0.0)),
            Primitive::Log => map(a, |x| x.max(PROB_FLOOR).ln()),
            Primitive::Softmax => {
                if a.shape().len() > 2 {
                    return Err(self.shape_err(format!("expected 1-D or 2-D, got {:?}", a.shape())));
                }
                let n = *a.shape().last().unwrap();
                let mut out = Vec::with_capacity(a.len());
                for row in a.data().chunks(n) {
                    out.extend(softmax_row(row));
                }
                Tensor::new(a.shape().to_vec(), out)
            }
            Primitive::Gather(idx) => {
                let (rows, cols) = match a.shape() {
                    [r, c] => (*r, *c),
                    s => return Err(self.shape_err(format!("table must be 2-D, got {s:?}"))),
                };
                if idx.is_empty() {
                    return Err(self.shape_err("no indices".into()));
                }
                if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
                    return Err(self.shape_err(format!("index {bad} out of range for {rows} rows")));
                }
                let mut out = Vec::with_capacity(idx.len() * cols);
                for &i in idx {
                    out.extend_from_slice(a.row(i));
                }
                Tensor::matrix(idx.len(), cols, out)
            }
            Primitive::SegmentMean(lens) => {
                let (rows, cols) = match a.shape() {
                    [r, c] => (*r, *c),
                    s => return Err(self.shape_err(format!("expected 2-D, got {s:?}"))),
                };
                if lens.is_empty() || lens.contains(&0) || lens.iter().sum::<usize>() != rows {
                    return Err(self.shape_err(format!("segments {lens:?} do not tile {rows} rows")));
                }
                let mut out = vec![0.0; lens.len() * cols];
                let mut start = 0;
                for (s, &len) in lens.iter().enumerate() {
                    let dst = &mut out[s * cols..(s + 1) * cols];
                    for r in start..start + len {
                        for (o, &v) in dst.iter_mut().zip(a.row(r)) {
                            *o += v;
                        }
                    }
                    let inv = 1.0 / len as f64;
                    dst.iter_mut().for_each(|o| *o *= inv);
                    start += len;
                }
                Tensor::matrix(lens.len(), cols, out)
            }
            Primitive::MeanAxis(axis) => {
                let (m, n) = match a.shape() {
                    [m, n] => (*m, *n),
                    s => return Err(self.shape_err(format!("expected 2-D, got {s:?}"))),
                };
                match axis {
                    0 => {
                        let mut out = vec![0.0; n];
                        for row in a.rows() {
                            out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                        }
                        out.iter_mut().for_each(|o| *o /= m as f64);
                        Tensor::vector(out)
                    }
                    1 => Tensor::vector(a.rows().map(|r| r.iter().sum::<f64>() / n as f64).collect()),
                    _ => Err(self.shape_err(format!("axis {axis} out of range"))),
                }
            }
            Primitive::Sum => Ok(Tensor::scalar(a.data().iter().sum())),
            Primitive::Mean => Ok(Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)),
            Primitive::KlDivergence => {
                let p = inputs[1];
                if a.shape() != p.shape() || a.shape().len() > 2 {
                    return Err(self.shape_err(format!("{:?} vs {:?}", a.shape(), p.shape())));
                }
                let n = *a.shape().last().unwrap();
                let rows = a.len() / n;
                let total: f64 = a
                    .data()
                    .chunks(n)
                    .zip(p.data().chunks(n))
                    .map(|(t, q)| kl_row(t, q))
                    .sum();
                Ok(Tensor::scalar(total / rows as f64))
            }
        }
    }

    /// Gradients with respect to each input given the upstream gradient.
    pub fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let a = inputs[0];
        let g = grad.data();
        match self {
            Primitive::MatMul => {
                let b = inputs[1];
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                // dA = G B^T, dB = A^T G
                let bt = transpose(b.data(), k, n);
                let at = transpose(a.data(), m, k);
                vec![
                    Tensor::matrix(m, k, matmul(g, &bt, m, n, k)).unwrap(),
                    Tensor::matrix(k, n, matmul(&at, g, k, m, n)).unwrap(),
                ]
            }
            Primitive::Transpose => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                vec![Tensor::matrix(m, n, transpose(g, n, m)).unwrap()]
            }
            Primitive::Add => vec![grad.clone(), grad.clone()],
            Primitive::Sub => vec![grad.clone(), map(grad, |x| -x).unwrap()],
            Primitive::Mul => {
                let b = inputs[1];
                vec![zip(grad, b, |g, y| g * y), zip(grad, a, |g, x| g * x)]
            }
            Primitive::Scale(c) => vec![map(grad, |x| c * x).unwrap()],
            Primitive::AddBias => {
                let b = inputs[1];
                let n = b.len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
                vec![grad.clone(), Tensor::vector(gb).unwrap()]
            }
            Primitive::Tanh => vec![zip(grad, output, |g, y| g * (1.0 - y * y))],
            Primitive::Relu => vec![zip(grad, a, |g, x| if x > 0.0 { g } else { 0.0 })],
            Primitive::Log => {
                vec![zip(grad, a, |g, x| if x > PROB_FLOOR { g / x } else { 0.0 })]
            }
            Primitive::Softmax => {
                let n = *output.shape().last().unwrap();
                let mut out = Vec::with_capacity(output.len());
                for (y, gy) in output.data().chunks(n).zip(g.chunks(n)) {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    out.extend(y.iter().zip(gy).map(|(&yi, &gi)| yi * (gi - dot)));
                }
                vec![Tensor::new(output.shape().to_vec(), out).unwrap()]
            }
            Primitive::Gather(idx) => {
                let cols = a.shape()[1];
                let mut out = Tensor::zeros(a.shape());
                let data = out.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut data[i * cols..(i + 1) * cols];
                    dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(o, &v)| *o += v);
                }
                vec![out]
            }
            Primitive::SegmentMean(lens) => {
                let cols = a.shape()[1];
                let mut out = Vec::with_capacity(a.len());
                for (s, &len) in lens.iter().enumerate() {
                    let inv = 1.0 / len as f64;
                    let gs = &g[s * cols..(s + 1) * cols];
                    for _ in 0..len {
                        out.extend(gs.iter().map(|v| v * inv));
                    }
                }
                vec![Tensor::new(a.shape().to_vec(), out).unwrap()]
            }
            Primitive::MeanAxis(axis) => {
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(if *axis == 0 { g[j] / m as f64 } else { g[i] / n as f64 });
                    }
                }
                vec![Tensor::matrix(m, n, out).unwrap()]
            }
            Primitive::Sum => vec![fill(a, g[0])],
            Primitive::Mean => vec![fill(a, g[0] / a.len() as f64)],
            Primitive::KlDivergence => {
                let p = inputs[1];
                let n = *a.shape().last().unwrap();
                let scale = g[0] / (a.len() / n) as f64;
                let gt = zip(a, p, |t, q| {
                    if t > 0.0 {
                        scale * (t.ln() - q.max(PROB_FLOOR).ln() + 1.0)
                    } else {
                        0.0
                    }
                });
                let gp = zip(a, p, |t, q| if q > PROB_FLOOR { -scale * t / q } else { 0.0 });
                vec![gt, gp]
            }
        }
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn fill(like: &Tensor, v: f64) -> Tensor {
    Tensor::new(like.shape().to_vec(), vec![v; like.len()]).unwrap()
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    row.iter().map(move |&x| (x - max).exp() / z)
}

pub(crate) fn kl_row(target: &[f64], predicted: &[f64]) -> f64 {
    target
        .iter()
        .zip(predicted)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &q)| t * (t.ln() - q.max(PROB_FLOOR).ln()))
        .sum()
}
