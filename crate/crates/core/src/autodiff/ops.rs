use std::sync::Arc;

use super::kernels::{self, ConvGeom, PlaneMap};
use crate::error::{Error, Result};

/// Elementwise operation kinds exposed through [`Tape::elementwise`](super::Tape::elementwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Subtract,
    Multiply,
    Divide,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Minimum,
    Scale(f64),
}

impl ElementwiseKind {
    pub fn arity(self) -> usize {
        match self {
            Self::Add | Self::Subtract | Self::Multiply | Self::Divide | Self::Minimum => 2,
            Self::Relu | Self::Sigmoid | Self::Exp | Self::Log | Self::Scale(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Where a gather index came from. Arg-max gathers are piecewise decisions and
/// take part in the tape's decision signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatherOrigin {
    Plain,
    ArgMax,
}

/// A recorded operation together with the forward data its derivative rule needs.
///
/// Saved operands are the node's input tensors themselves (shared, not copied).
/// Extra saved state per kind:
/// - `Relu`: the sign mask of the input.
/// - `Minimum`: the mask of positions routed to the first operand.
/// - `Gather`: the index map (for max reductions and pooling, the arg-max positions).
/// - `CrossEntropy` / `SoftMargin`: the probabilities and targets of the fused loss.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div { eps: f64 },
    Scale(f64),
    Relu { mask: Arc<Vec<f64>> },
    Sigmoid,
    Exp,
    Log,
    Minimum { first: Arc<Vec<f64>> },
    /// `out[i] = x[index[i]]`
    Gather { index: Arc<Vec<usize>>, origin: GatherOrigin },
    /// `out[index[i]] += x[i]`
    ScatterAdd { index: Arc<Vec<usize>>, out_len: usize },
    Reshape,
    MatMul,
    Conv2d { geom: ConvGeom },
    /// Input gradient of a correlation; operands `(upstream, kernel)`.
    ConvInputGrad { geom: ConvGeom },
    /// Kernel gradient of a correlation; operands `(input, upstream)`.
    ConvKernelGrad { geom: ConvGeom },
    PlaneLinear { map: Arc<PlaneMap>, transposed: bool },
    /// Batch-mean softmax cross-entropy over `[N, C]` logits (first order only).
    CrossEntropy { probs: Arc<Vec<f64>>, labels: Arc<Vec<usize>> },
    /// Multilabel soft margin loss over `[N, C]` logits (first order only).
    SoftMargin { targets: Arc<Vec<f64>> },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::Div { .. } => "divide",
            Op::Scale(_) => "scale",
            Op::Relu { .. } => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Minimum { .. } => "minimum",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Reshape => "reshape",
            Op::MatMul => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv2d_input_grad",
            Op::ConvKernelGrad { .. } => "conv2d_kernel_grad",
            Op::PlaneLinear { .. } => "plane_linear",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SoftMargin { .. } => "multilabel_soft_margin",
        }
    }

    /// Whether the derivative rule is itself built from differentiable operations.
    pub(crate) fn has_second_order(&self) -> bool {
        !matches!(self, Op::CrossEntropy { .. } | Op::SoftMargin { .. })
    }

    /// Recomputes the output values from operand values. Used both when the
    /// node is first recorded and when the tape is replayed.
    pub(crate) fn compute(&self, inputs: &[(&[usize], &[f64])], out_shape: &[usize]) -> Result<Vec<f64>> {
        let un = |f: fn(f64) -> f64| inputs[0].1.iter().map(|&v| f(v)).collect::<Vec<_>>();
        let bin = |f: &dyn Fn(f64, f64) -> f64| {
            inputs[0]
                .1
                .iter()
                .zip(inputs[1].1)
                .map(|(&a, &b)| f(a, b))
                .collect::<Vec<_>>()
        };
        Ok(match self {
            Op::Leaf => inputs[0].1.to_vec(),
            Op::Add => bin(&|a, b| a + b),
            Op::Sub => bin(&|a, b| a - b),
            Op::Mul => bin(&|a, b| a * b),
            Op::Div { eps } => {
                let eps = *eps;
                if eps == 0.0 && inputs[1].1.contains(&0.0) {
                    return Err(Error::Domain {
                        op: "divide",
                        detail: "zero denominator with epsilon disabled".into(),
                    });
                }
                bin(&|a, b| a / (b + eps))
            }
            Op::Scale(c) => {
                let c = *c;
                inputs[0].1.iter().map(|&v| v * c).collect()
            }
            Op::Relu { .. } => un(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Sigmoid => un(sigmoid),
            Op::Exp => un(f64::exp),
            Op::Log => {
                if inputs[0].1.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: "non-positive argument".into(),
                    });
                }
                un(f64::ln)
            }
            Op::Minimum { first } => inputs[0]
                .1
                .iter()
                .zip(inputs[1].1)
                .zip(first.iter())
                .map(|((&a, &b), &f)| if f > 0.0 { a } else { b })
                .collect(),
            Op::Gather { index, .. } => index.iter().map(|&i| inputs[0].1[i]).collect(),
            Op::ScatterAdd { index, out_len } => {
                let mut out = vec![0.0; *out_len];
                for (&i, &v) in index.iter().zip(inputs[0].1) {
                    out[i] += v;
                }
                out
            }
            Op::Reshape => inputs[0].1.to_vec(),
            Op::MatMul => {
                let (a, b) = (inputs[0].0, inputs[1].0);
                kernels::matmul(inputs[0].1, inputs[1].1, a[0], a[1], b[1])
            }
            Op::Conv2d { geom } => kernels::conv2d(inputs[0].1, inputs[1].1, geom),
            Op::ConvInputGrad { geom } => kernels::conv2d_input_grad(inputs[0].1, inputs[1].1, geom),
            Op::ConvKernelGrad { geom } => kernels::conv2d_kernel_grad(inputs[0].1, inputs[1].1, geom),
            Op::PlaneLinear { map, transposed } => {
                let in_plane = if *transposed { map.out_len() } else { map.in_len() };
                let planes = inputs[0].1.len() / in_plane.max(1);
                if *transposed {
                    map.apply_transposed(inputs[0].1, planes)
                } else {
                    map.apply(inputs[0].1, planes)
                }
            }
            Op::CrossEntropy { labels, .. } => {
                let shape = inputs[0].0;
                vec![cross_entropy_value(inputs[0].1, shape[0], shape[1], labels)]
            }
            Op::SoftMargin { targets } => {
                let shape = inputs[0].0;
                vec![soft_margin_value(inputs[0].1, shape[0], shape[1], targets)]
            }
        })
        .inspect(|v| {
            debug_assert_eq!(v.len(), out_shape.iter().product::<usize>());
        })
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(v))` without overflow.
pub(crate) fn log_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// Row-wise softmax of an `[n, c]` matrix.
pub fn softmax_rows(logits: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[i * c..(i + 1) * c];
        let mut z = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    out
}

fn cross_entropy_value(logits: &[f64], n: usize, c: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / n as f64
}

fn soft_margin_value(logits: &[f64], n: usize, c: usize, targets: &[f64]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| -(y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z)))
        .sum();
    total / (n * c) as f64
}
