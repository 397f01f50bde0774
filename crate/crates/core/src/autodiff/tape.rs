use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::kernels::{ConvGeom, PlaneMap};
use super::ops::{softmax_rows, ElementwiseKind, GatherOrigin, Op, ReduceKind};
use super::tensor::{strides, NodeId, Tensor};
use crate::error::{Error, Result};

/// Default safeguard added to every denominator of [`Tape::div`].
pub const DEFAULT_DIV_EPSILON: f64 = 1e-8;

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) output: Tensor,
}

/// Append-only record of differentiable operations.
///
/// Every operation whose operands include a tape-live tensor appends a node;
/// operations on constants are evaluated eagerly and leave no trace. Parents
/// always precede their children. A tape is single-writer: it is not `Sync`.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<NodeId>>,
    div_epsilon: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_div_epsilon(DEFAULT_DIV_EPSILON)
    }

    /// A tape whose [`div`](Self::div) adds `eps` to denominators. With `eps == 0`
    /// a zero denominator is a domain error.
    pub fn with_div_epsilon(eps: f64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            div_epsilon: eps,
        }
    }

    pub fn div_epsilon(&self) -> f64 {
        self.div_epsilon
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a trainable leaf.
    pub fn param(&self, value: &Tensor) -> Tensor {
        let t = self.leaf(value);
        self.params.borrow_mut().push(t.node().expect("leaf has node"));
        t
    }

    /// Registers a differentiable leaf that is not a trainable parameter.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        let output = value.detach();
        nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: output.clone(),
        });
        output.with_node(id)
    }

    pub fn params(&self) -> Vec<NodeId> {
        self.params.borrow().clone()
    }

    pub(crate) fn record(&self, op: Op, inputs: Vec<Tensor>, out_shape: Vec<usize>) -> Result<Tensor> {
        let views: Vec<(&[usize], &[f64])> = inputs.iter().map(|t| (t.shape(), t.data())).collect();
        let data = op.compute(&views, &out_shape)?;
        let out = Tensor::from_parts(out_shape, Arc::new(data), None);
        if inputs.iter().all(|t| t.node().is_none()) {
            return Ok(out);
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            op,
            inputs,
            output: out.clone(),
        });
        Ok(out.with_node(id))
    }

    // ---- elementwise ------------------------------------------------------

    pub fn elementwise(&self, kind: ElementwiseKind, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != kind.arity() {
            return Err(Error::shape(
                "elementwise",
                format!("{kind:?} takes {} operands, got {}", kind.arity(), inputs.len()),
            ));
        }
        match kind {
            ElementwiseKind::Add => self.add(inputs[0], inputs[1]),
            ElementwiseKind::Subtract => self.sub(inputs[0], inputs[1]),
            ElementwiseKind::Multiply => self.mul(inputs[0], inputs[1]),
            ElementwiseKind::Divide => self.div(inputs[0], inputs[1]),
            ElementwiseKind::Minimum => self.minimum(inputs[0], inputs[1]),
            ElementwiseKind::Relu => self.relu(inputs[0]),
            ElementwiseKind::Sigmoid => self.sigmoid(inputs[0]),
            ElementwiseKind::Exp => self.exp(inputs[0]),
            ElementwiseKind::Log => self.log(inputs[0]),
            ElementwiseKind::Scale(c) => self.scale(inputs[0], c),
        }
    }

    /// Aligns two operands: equal shapes pass through, a single-element operand
    /// is broadcast to the other's shape, anything else is rejected.
    fn align(&self, op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
        if a.shape() == b.shape() {
            return Ok((a.clone(), b.clone()));
        }
        if b.is_scalar() && !a.is_scalar() {
            return Ok((a.clone(), self.broadcast(b, a.shape(), &[])?));
        }
        if a.is_scalar() && !b.is_scalar() {
            return Ok((self.broadcast(a, b.shape(), &[])?, b.clone()));
        }
        if a.is_scalar() && b.is_scalar() {
            return Ok((a.clone(), self.reshape(b, a.shape())?));
        }
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }

    fn binary(&self, name: &'static str, op: Op, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (a, b) = self.align(name, a, b)?;
        let shape = a.shape().to_vec();
        self.record(op, vec![a, b], shape)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", Op::Add, a, b)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("subtract", Op::Sub, a, b)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("multiply", Op::Mul, a, b)
    }

    /// `a / (b + eps)` with the tape's configured epsilon.
    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.div_with_epsilon(a, b, self.div_epsilon)
    }

    pub fn div_with_epsilon(&self, a: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
        self.binary("divide", Op::Div { eps }, a, b)
    }

    /// Elementwise minimum; ties select the first operand.
    pub fn minimum(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (a, b) = self.align("minimum", a, b)?;
        let first = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| if x <= y { 1.0 } else { 0.0 })
            .collect();
        let shape = a.shape().to_vec();
        self.record(Op::Minimum { first: Arc::new(first) }, vec![a, b], shape)
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.record(Op::Scale(c), vec![a.clone()], a.shape().to_vec())
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.scale(a, -1.0)
    }

    /// ReLU with derivative 0 at exactly 0.
    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        let mask = a.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        self.record(Op::Relu { mask: Arc::new(mask) }, vec![a.clone()], a.shape().to_vec())
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        self.record(Op::Sigmoid, vec![a.clone()], a.shape().to_vec())
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.record(Op::Exp, vec![a.clone()], a.shape().to_vec())
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.record(Op::Log, vec![a.clone()], a.shape().to_vec())
    }

    // ---- indexing and layout ---------------------------------------------

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != a.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        self.record(Op::Reshape, vec![a.clone()], shape.to_vec())
    }

    /// `out[i] = a[index[i]]`, output reshaped to `shape`.
    pub fn gather(&self, a: &Tensor, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Tensor> {
        self.gather_from(a, index, shape, GatherOrigin::Plain)
    }

    fn gather_from(&self, a: &Tensor, index: Arc<Vec<usize>>, shape: &[usize], origin: GatherOrigin) -> Result<Tensor> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape("gather", format!("{} indices for shape {shape:?}", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= a.numel()) {
            return Err(Error::shape("gather", format!("index {bad} out of range {}", a.numel())));
        }
        self.record(Op::Gather { index, origin }, vec![a.clone()], shape.to_vec())
    }

    /// `out[index[i]] += a[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, a: &Tensor, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Tensor> {
        let out_len = shape.iter().product::<usize>();
        if index.len() != a.numel() {
            return Err(Error::shape("scatter_add", format!("{} indices for {} values", index.len(), a.numel())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_len) {
            return Err(Error::shape("scatter_add", format!("index {bad} out of range {out_len}")));
        }
        self.record(Op::ScatterAdd { index, out_len }, vec![a.clone()], shape.to_vec())
    }

    /// Broadcasts `a` into `shape`; `dims[i]` names the output axis that input axis `i` maps to.
    pub fn broadcast(&self, a: &Tensor, shape: &[usize], dims: &[usize]) -> Result<Tensor> {
        if dims.len() != a.shape().len() && !(dims.is_empty() && a.is_scalar()) {
            return Err(Error::shape("broadcast", format!("dims {dims:?} for input {:?}", a.shape())));
        }
        for (i, &d) in dims.iter().enumerate() {
            if d >= shape.len() || shape[d] != a.shape()[i] {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let in_strides = strides(a.shape());
        let numel: usize = shape.iter().product();
        let mut index = Vec::with_capacity(numel);
        let mut coord = vec![0usize; shape.len()];
        for _ in 0..numel {
            let src: usize = dims.iter().enumerate().map(|(i, &d)| coord[d] * in_strides[i]).sum();
            index.push(src);
            for ax in (0..shape.len()).rev() {
                coord[ax] += 1;
                if coord[ax] < shape[ax] {
                    break;
                }
                coord[ax] = 0;
            }
        }
        self.gather(a, Arc::new(index), shape)
    }

    pub fn transpose2d(&self, a: &Tensor) -> Result<Tensor> {
        let &[r, c] = a.shape() else {
            return Err(Error::shape("transpose", format!("expected a matrix, got {:?}", a.shape())));
        };
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(a, Arc::new(index), &[c, r])
    }

    // ---- reductions -------------------------------------------------------

    /// Reduces over `axes` (removed from the output shape).
    pub fn reduce(&self, kind: ReduceKind, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let (out_shape, map, extent) = reduction_map(a.shape(), axes)?;
        match kind {
            ReduceKind::Sum => self.scatter_add(a, Arc::new(map), &out_shape),
            ReduceKind::Mean => {
                let s = self.scatter_add(a, Arc::new(map), &out_shape)?;
                self.scale(&s, 1.0 / extent as f64)
            }
            ReduceKind::Max => {
                let out_len = out_shape.iter().product::<usize>();
                let mut best: Vec<Option<usize>> = vec![None; out_len];
                let data = a.data();
                for (i, &o) in map.iter().enumerate() {
                    match best[o] {
                        Some(j) if data[j] >= data[i] => {}
                        _ => best[o] = Some(i),
                    }
                }
                let index = best.into_iter().map(|b| b.expect("non-empty extent")).collect();
                self.gather_from(a, Arc::new(index), &out_shape, GatherOrigin::ArgMax)
            }
        }
    }

    pub fn sum(&self, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, a, axes)
    }

    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..a.shape().len()).collect();
        if axes.is_empty() {
            return Ok(a.clone());
        }
        self.sum(a, &axes)
    }

    pub fn mean_all(&self, a: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..a.shape().len()).collect();
        if axes.is_empty() {
            return Ok(a.clone());
        }
        self.reduce(ReduceKind::Mean, a, &axes)
    }

    // ---- network primitives ----------------------------------------------

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        match (a.shape(), b.shape()) {
            (&[m, k1], &[k2, n]) if k1 == k2 => self.record(Op::MatMul, vec![a.clone(), b.clone()], vec![m, n]),
            _ => Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            }),
        }
    }

    /// Zero-padded cross-correlation, NCHW input and OIHW kernel.
    pub fn conv2d(&self, input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let geom = ConvGeom::new(input.shape(), kernel.shape(), stride, padding)?;
        self.record(Op::Conv2d { geom }, vec![input.clone(), kernel.clone()], geom.output_shape())
    }

    pub(crate) fn conv2d_input_grad(&self, upstream: &Tensor, kernel: &Tensor, geom: ConvGeom) -> Result<Tensor> {
        self.record(
            Op::ConvInputGrad { geom },
            vec![upstream.clone(), kernel.clone()],
            geom.input_shape(),
        )
    }

    pub(crate) fn conv2d_kernel_grad(&self, input: &Tensor, upstream: &Tensor, geom: ConvGeom) -> Result<Tensor> {
        self.record(
            Op::ConvKernelGrad { geom },
            vec![input.clone(), upstream.clone()],
            geom.kernel_shape(),
        )
    }

    /// Max pooling over the last two axes of an NCHW tensor; ties go to the lowest flat index.
    pub fn maxpool2d(&self, input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
        let &[n, c, h, w] = input.shape() else {
            return Err(Error::shape("maxpool2d", format!("expected NCHW, got {:?}", input.shape())));
        };
        if window == 0 || stride == 0 {
            return Err(Error::shape("maxpool2d", "window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(Error::shape("maxpool2d", format!("window {window} exceeds spatial extent {h}x{w}")));
        }
        if !(h - window).is_multiple_of(stride) || !(w - window).is_multiple_of(stride) {
            return Err(Error::shape(
                "maxpool2d",
                format!("spatial extent {h}x{w} does not tile with window {window} stride {stride}"),
            ));
        }
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let data = input.data();
        let mut index = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for p in 0..oh {
                for q in 0..ow {
                    let mut best = base + p * stride * w + q * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = base + (p * stride + dy) * w + q * stride + dx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    index.push(best);
                }
            }
        }
        self.gather_from(input, Arc::new(index), &[n, c, oh, ow], GatherOrigin::ArgMax)
    }

    /// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape().len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("expected NCHW, got {:?}", input.shape())));
        }
        self.reduce(ReduceKind::Mean, input, &[2, 3])
    }

    /// Align-corners bilinear upsampling of the last two axes to `(out_h, out_w)`.
    pub fn bilinear_upsample(&self, input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        let rank = input.shape().len();
        if rank < 2 {
            return Err(Error::shape("bilinear_upsample", "need at least two axes"));
        }
        let (h, w) = (input.shape()[rank - 2], input.shape()[rank - 1]);
        if out_h < h || out_w < w {
            return Err(Error::shape(
                "bilinear_upsample",
                format!("downscaling {h}x{w} to {out_h}x{out_w} is not supported"),
            ));
        }
        let map = Arc::new(PlaneMap::bilinear((h, w), (out_h, out_w)));
        let mut shape = input.shape().to_vec();
        shape[rank - 2] = out_h;
        shape[rank - 1] = out_w;
        self.record(
            Op::PlaneLinear { map, transposed: false },
            vec![input.clone()],
            shape,
        )
    }

    pub(crate) fn plane_linear(&self, input: &Tensor, map: &Arc<PlaneMap>, transposed: bool, shape: Vec<usize>) -> Result<Tensor> {
        self.record(
            Op::PlaneLinear {
                map: Arc::clone(map),
                transposed,
            },
            vec![input.clone()],
            shape,
        )
    }

    // ---- fused losses -------------------------------------------------------

    /// Batch-mean cross-entropy of `[N, C]` logits against class ids (log-sum-exp form).
    pub fn cross_entropy(&self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let &[n, c] = logits.shape() else {
            return Err(Error::shape("cross_entropy", format!("expected [N, C], got {:?}", logits.shape())));
        };
        if labels.len() != n || n == 0 {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Domain {
                op: "cross_entropy",
                detail: format!("label {bad} out of range for {c} classes"),
            });
        }
        let probs = softmax_rows(logits.data(), n, c);
        self.record(
            Op::CrossEntropy {
                probs: Arc::new(probs),
                labels: Arc::new(labels.to_vec()),
            },
            vec![logits.clone()],
            vec![],
        )
    }

    /// Mean over samples and classes of `-[y log s(z) + (1-y) log s(-z)]`.
    pub fn multilabel_soft_margin(&self, logits: &Tensor, targets: &[Vec<bool>]) -> Result<Tensor> {
        let &[n, c] = logits.shape() else {
            return Err(Error::shape("multilabel_soft_margin", format!("expected [N, C], got {:?}", logits.shape())));
        };
        if targets.len() != n || n == 0 || targets.iter().any(|t| t.len() != c) {
            return Err(Error::shape("multilabel_soft_margin", "target rows must match logits"));
        }
        if targets.iter().any(|t| !t.iter().any(|&b| b)) {
            return Err(Error::Domain {
                op: "multilabel_soft_margin",
                detail: "every target needs at least one positive class".into(),
            });
        }
        let flat = targets
            .iter()
            .flat_map(|t| t.iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect();
        self.record(Op::SoftMargin { targets: Arc::new(flat) }, vec![logits.clone()], vec![])
    }

    // ---- introspection ----------------------------------------------------

    /// Hash of every piecewise decision recorded so far (ReLU signs, minimum
    /// routing, arg-max positions). Two evaluations with equal signatures lie on
    /// the same smooth piece of the computed function.
    pub fn decision_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in self.nodes.borrow().iter() {
            match &node.op {
                Op::Relu { mask } => mask.iter().for_each(|m| m.to_bits().hash(&mut h)),
                Op::Minimum { first } => first.iter().for_each(|m| m.to_bits().hash(&mut h)),
                Op::Gather {
                    index,
                    origin: GatherOrigin::ArgMax,
                } => index.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Re-evaluates every node from its parents' replayed outputs and checks the
    /// stored outputs are reproduced bit-exactly.
    pub fn replay_matches(&self) -> Result<bool> {
        let nodes = self.nodes.borrow();
        let mut replayed: Vec<Arc<Vec<f64>>> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let values = if let Op::Leaf = node.op {
                Arc::clone(node.output.data_arc())
            } else {
                let inputs: Vec<(&[usize], &[f64])> = node
                    .inputs
                    .iter()
                    .map(|t| {
                        let data: &[f64] = match t.node() {
                            Some(id) => &replayed[id.0],
                            None => t.data(),
                        };
                        (t.shape(), data)
                    })
                    .collect();
                Arc::new(node.op.compute(&inputs, node.output.shape())?)
            };
            let same = values
                .iter()
                .zip(node.output.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
            replayed.push(values);
        }
        Ok(true)
    }

    /// Parents precede children for every recorded node.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .all(|(i, n)| n.inputs.iter().filter_map(Tensor::node).all(|p| p.0 < i))
    }
}

/// Output shape, per-element output index, and reduction extent for reducing `axes` of `shape`.
fn reduction_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != axes.len() || sorted.iter().any(|&a| a >= shape.len()) {
        return Err(Error::shape("reduce", format!("invalid axes {axes:?} for shape {shape:?}")));
    }
    let extent: usize = sorted.iter().map(|&a| shape[a]).product();
    if extent == 0 {
        return Err(Error::shape("reduce", format!("empty reduction extent over axes {axes:?}")));
    }
    let kept: Vec<usize> = (0..shape.len()).filter(|a| !sorted.contains(a)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&a| shape[a]).collect();
    let out_strides = strides(&out_shape);
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut coord = vec![0usize; shape.len()];
    for _ in 0..numel {
        map.push(kept.iter().zip(&out_strides).map(|(&a, &s)| coord[a] * s).sum());
        for ax in (0..shape.len()).rev() {
            coord[ax] += 1;
            if coord[ax] < shape[ax] {
                break;
            }
            coord[ax] = 0;
        }
    }
    Ok((out_shape, map, extent))
}
