use std::sync::Arc;

use super::ops::{sigmoid, Op};
use super::tape::Tape;
use super::tensor::{NodeId, Tensor};
use crate::error::{Error, Result};

impl Tape {
    /// Reverse-mode gradients of the scalar `root` with respect to each tensor in `wrt`.
    ///
    /// Handles that do not influence `root` (including constants) get zero
    /// gradients. With `create_graph`, every derivative rule is itself evaluated
    /// with recorded operations, so the returned gradients are tape-live and can
    /// be differentiated again.
    pub fn backward(&self, root: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        if !root.is_scalar() {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let zeros = || wrt.iter().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        let Some(root_id) = root.node() else {
            return Ok(zeros());
        };
        let targets: Vec<Option<NodeId>> = wrt
            .iter()
            .map(|t| t.node().filter(|id| id.0 <= root_id.0))
            .collect();
        let Some(lo) = targets.iter().flatten().map(|id| id.0).min() else {
            return Ok(zeros());
        };
        let span = root_id.0 - lo + 1;

        let mut is_target = vec![false; span];
        for id in targets.iter().flatten() {
            is_target[id.0 - lo] = true;
        }
        // depends[i]: node lo+i is downstream of (or equal to) some target.
        let mut depends = is_target.clone();
        {
            let nodes = self.nodes.borrow();
            for i in 0..span {
                if depends[i] {
                    continue;
                }
                depends[i] = nodes[lo + i]
                    .inputs
                    .iter()
                    .filter_map(Tensor::node)
                    .any(|p| p.0 >= lo && depends[p.0 - lo]);
            }
        }
        if !depends[span - 1] {
            return Ok(zeros());
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; span];
        grads[span - 1] = Some(Tensor::full(root.shape(), 1.0));

        for i in (0..span).rev() {
            if !depends[i] {
                continue;
            }
            let Some(g) = (if is_target[i] { grads[i].clone() } else { grads[i].take() }) else {
                continue;
            };
            let (op, inputs, output) = {
                let nodes = self.nodes.borrow();
                let node = &nodes[lo + i];
                (node.op.clone(), node.inputs.clone(), node.output.clone())
            };
            if let Op::Leaf = op {
                continue;
            }
            if create_graph && !op.has_second_order() {
                return Err(Error::UnsupportedSecondOrder(op.name()));
            }
            let need: Vec<bool> = inputs
                .iter()
                .map(|t| t.node().is_some_and(|p| p.0 >= lo && depends[p.0 - lo]))
                .collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let parents: Vec<Option<NodeId>> = inputs.iter().map(Tensor::node).collect();
            let (inputs, output, g) = if create_graph {
                (inputs, output.with_node(NodeId(lo + i)), g)
            } else {
                (inputs.iter().map(Tensor::detach).collect(), output, g.detach())
            };
            let contributions = self.vjp(&op, &inputs, &output, &g, &need)?;
            for ((parent, contribution), needed) in parents.iter().zip(contributions).zip(&need) {
                let (Some(c), Some(parent), true) = (contribution, parent, *needed) else {
                    continue;
                };
                let slot = parent.0 - lo;
                grads[slot] = Some(match grads[slot].take() {
                    Some(acc) => self.add(&acc, &c)?,
                    None => c,
                });
            }
        }

        Ok(wrt
            .iter()
            .zip(&targets)
            .map(|(t, id)| match id {
                Some(id) => grads[id.0 - lo].clone().unwrap_or_else(|| Tensor::zeros(t.shape())),
                None => Tensor::zeros(t.shape()),
            })
            .collect())
    }

    /// Vector-Jacobian products for one node. Entries for inputs not in `need` may be `None`.
    fn vjp(&self, op: &Op, x: &[Tensor], out: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| need.get(i).copied().unwrap_or(false);
        let mut res: Vec<Option<Tensor>> = vec![None; x.len()];
        match op {
            Op::Leaf => {}
            Op::Add => {
                res[0] = want(0).then(|| g.clone());
                res[1] = want(1).then(|| g.clone());
            }
            Op::Sub => {
                res[0] = want(0).then(|| g.clone());
                if want(1) {
                    res[1] = Some(self.neg(g)?);
                }
            }
            Op::Mul => {
                if want(0) {
                    res[0] = Some(self.mul(g, &x[1])?);
                }
                if want(1) {
                    res[1] = Some(self.mul(g, &x[0])?);
                }
            }
            Op::Div { eps } => {
                if want(0) {
                    res[0] = Some(self.div_with_epsilon(g, &x[1], *eps)?);
                }
                if want(1) {
                    let ga = self.mul(g, &x[0])?;
                    let once = self.div_with_epsilon(&ga, &x[1], *eps)?;
                    let twice = self.div_with_epsilon(&once, &x[1], *eps)?;
                    res[1] = Some(self.neg(&twice)?);
                }
            }
            Op::Scale(c) => res[0] = Some(self.scale(g, *c)?),
            Op::Relu { mask } => {
                let mask = Tensor::from_parts(x[0].shape().to_vec(), Arc::clone(mask), None);
                res[0] = Some(self.mul(g, &mask)?);
            }
            Op::Sigmoid => {
                let one_minus = self.sub(&Tensor::scalar(1.0), out)?;
                let slope = self.mul(out, &one_minus)?;
                res[0] = Some(self.mul(g, &slope)?);
            }
            Op::Exp => res[0] = Some(self.mul(g, out)?),
            Op::Log => res[0] = Some(self.div_with_epsilon(g, &x[0], 0.0)?),
            Op::Minimum { first } => {
                let shape = x[0].shape().to_vec();
                if want(0) {
                    let m = Tensor::from_parts(shape.clone(), Arc::clone(first), None);
                    res[0] = Some(self.mul(g, &m)?);
                }
                if want(1) {
                    let other = first.iter().map(|f| 1.0 - f).collect();
                    let m = Tensor::from_parts(shape, Arc::new(other), None);
                    res[1] = Some(self.mul(g, &m)?);
                }
            }
            Op::Gather { index, .. } => {
                res[0] = Some(self.scatter_add(g, Arc::clone(index), x[0].shape())?);
            }
            Op::ScatterAdd { index, .. } => {
                res[0] = Some(self.gather(g, Arc::clone(index), x[0].shape())?);
            }
            Op::Reshape => res[0] = Some(self.reshape(g, x[0].shape())?),
            Op::MatMul => {
                if want(0) {
                    let bt = self.transpose2d(&x[1])?;
                    res[0] = Some(self.matmul(g, &bt)?);
                }
                if want(1) {
                    let at = self.transpose2d(&x[0])?;
                    res[1] = Some(self.matmul(&at, g)?);
                }
            }
            Op::Conv2d { geom } => {
                if want(0) {
                    res[0] = Some(self.conv2d_input_grad(g, &x[1], *geom)?);
                }
                if want(1) {
                    res[1] = Some(self.conv2d_kernel_grad(&x[0], g, *geom)?);
                }
            }
            Op::ConvInputGrad { geom } => {
                // out = dX(u, k); <g, dX(u, k)> = <u, conv(g, k)> = <k, dK(g, u)>
                if want(0) {
                    res[0] = Some(self.conv2d(g, &x[1], geom.stride, geom.padding)?);
                }
                if want(1) {
                    res[1] = Some(self.conv2d_kernel_grad(g, &x[0], *geom)?);
                }
            }
            Op::ConvKernelGrad { geom } => {
                // out = dK(x, u); <g, dK(x, u)> = <x, dX(u, g)> = <u, conv(x, g)>
                if want(0) {
                    res[0] = Some(self.conv2d_input_grad(&x[1], g, *geom)?);
                }
                if want(1) {
                    res[1] = Some(self.conv2d(&x[0], g, geom.stride, geom.padding)?);
                }
            }
            Op::PlaneLinear { map, transposed } => {
                res[0] = Some(self.plane_linear(g, map, !transposed, x[0].shape().to_vec())?);
            }
            Op::CrossEntropy { probs, labels } => {
                let (n, c) = (x[0].shape()[0], x[0].shape()[1]);
                let scale = g.data()[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] -= scale;
                }
                res[0] = Some(Tensor::from_parts(vec![n, c], Arc::new(d), None));
            }
            Op::SoftMargin { targets } => {
                let shape = x[0].shape().to_vec();
                let scale = g.data()[0] / x[0].numel() as f64;
                let d = x[0]
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                res[0] = Some(Tensor::from_parts(shape, Arc::new(d), None));
            }
        }
        Ok(res)
    }
}
