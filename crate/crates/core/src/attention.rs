//! Class-specific gradient attention.
//!
//! Both mechanisms weight the feature channels `F^k` of a tracked layer by a
//! per-channel scalar derived from `G^k = dY^c/dF^k`:
//! - Grad-CAM: `alpha_k = mean_ij G^k_ij`, map `ReLU(sum_k alpha_k F^k)`.
//! - A_ch: `w_k = sum_ij ReLU(G^k_ij)`, map `(1/Z) ReLU(sum_k w_k F^k)`, `Z = H W`.
//!
//! Maps are batched `[N, H, W]` tensors, one class per sample. When the
//! gradients were built with `create_graph`, the maps stay differentiable with
//! respect to the model parameters.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{ForwardRecord, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    GradCam,
    ACh,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::GradCam => "grad-cam",
            Mechanism::ACh => "a-ch",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad-cam" => Ok(Mechanism::GradCam),
            "a-ch" => Ok(Mechanism::ACh),
            other => Err(Error::Config(format!("unknown mechanism {other:?} (expected grad-cam or a-ch)"))),
        }
    }
}

/// A batch of attention maps, `values[n]` being the map of sample `n` for `classes[n]`.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub values: Tensor,
    pub classes: Vec<usize>,
    pub layer: Layer,
    pub mechanism: Mechanism,
}

impl AttentionMap {
    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }

    /// Row-major values of sample `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let (h, w) = self.spatial();
        &self.values.data()[n * h * w..(n + 1) * h * w]
    }
}

/// Scalar `sum_n Y[n, classes[n]]`.
pub fn selected_logit_sum(tape: &Tape, logits: &Tensor, classes: &[usize]) -> Result<Tensor> {
    let &[n, c] = logits.shape() else {
        return Err(Error::shape("select_logits", format!("expected [N, C], got {:?}", logits.shape())));
    };
    if classes.len() != n {
        return Err(Error::shape("select_logits", format!("{} classes for {n} samples", classes.len())));
    }
    if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
        return Err(Error::Domain {
            op: "select_logits",
            detail: format!("class {bad} out of range for {c} classes"),
        });
    }
    let index: Vec<usize> = classes.iter().enumerate().map(|(i, &k)| i * c + k).collect();
    let picked = tape.gather(logits, Arc::new(index), &[n])?;
    tape.sum_all(&picked)
}

/// Per-sample gradients of the selected logits with respect to each requested
/// tracked layer, from a single backward pass over `sum_n Y^{c_n}_n`.
///
/// Valid because the network never mixes samples within a batch.
pub fn class_gradients(
    tape: &Tape,
    record: &ForwardRecord,
    classes: &[usize],
    layers: &[Layer],
    create_graph: bool,
) -> Result<Vec<Tensor>> {
    let root = selected_logit_sum(tape, &record.logits, classes)?;
    let features: Vec<&Tensor> = layers.iter().map(|&l| record.feature(l)).collect();
    if let Some(f) = features.iter().find(|f| f.node().is_none()) {
        return Err(Error::shape("class_gradients", format!("feature map {:?} is not on the tape", f.shape())));
    }
    tape.backward(&root, &features, create_graph)
}

fn check_pair(op: &'static str, features: &Tensor, grads: &Tensor) -> Result<()> {
    if features.shape().len() != 4 {
        return Err(Error::shape(op, format!("expected NCHW features, got {:?}", features.shape())));
    }
    if features.shape() != grads.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: features.shape().to_vec(),
            rhs: grads.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-channel weights `[N, C]`: the spatial mean of `G` for Grad-CAM and the
/// spatial sum of `ReLU(G)` for A_ch.
pub fn channel_weights(tape: &Tape, grads: &Tensor, mechanism: Mechanism) -> Result<Tensor> {
    match mechanism {
        Mechanism::GradCam => tape.reduce(crate::autodiff::ReduceKind::Mean, grads, &[2, 3]),
        Mechanism::ACh => tape.sum(&tape.relu(grads)?, &[2, 3]),
    }
}

/// `sum_k w[n, k] F[n, k]`, shape `[N, H, W]`.
fn weighted_sum(tape: &Tape, features: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let wide = tape.broadcast(weights, features.shape(), &[0, 1])?;
    tape.sum(&tape.mul(&wide, features)?, &[1])
}

/// Grad-CAM map `ReLU(sum_k alpha_k F^k)` with `alpha_k` the spatial mean of `G^k`.
pub fn grad_cam(tape: &Tape, features: &Tensor, grads: &Tensor) -> Result<Tensor> {
    check_pair("grad_cam", features, grads)?;
    let alpha = channel_weights(tape, grads, Mechanism::GradCam)?;
    tape.relu(&weighted_sum(tape, features, &alpha)?)
}

/// Channel-weighted map `(1/Z) ReLU(sum_k [sum_ij ReLU(G^k_ij)] F^k)`.
pub fn a_ch(tape: &Tape, features: &Tensor, grads: &Tensor) -> Result<Tensor> {
    check_pair("a_ch", features, grads)?;
    let z = (features.shape()[2] * features.shape()[3]) as f64;
    let w = channel_weights(tape, grads, Mechanism::ACh)?;
    tape.scale(&tape.relu(&weighted_sum(tape, features, &w)?)?, 1.0 / z)
}

pub fn attention_from(tape: &Tape, features: &Tensor, grads: &Tensor, mechanism: Mechanism) -> Result<Tensor> {
    match mechanism {
        Mechanism::GradCam => grad_cam(tape, features, grads),
        Mechanism::ACh => a_ch(tape, features, grads),
    }
}

/// Attention maps for `classes` at each requested layer. With `create_graph`
/// the maps are differentiable in the model parameters.
pub fn attention_maps(
    tape: &Tape,
    record: &ForwardRecord,
    classes: &[usize],
    layers: &[Layer],
    mechanism: Mechanism,
    create_graph: bool,
) -> Result<Vec<AttentionMap>> {
    let grads = class_gradients(tape, record, classes, layers, create_graph)?;
    layers
        .iter()
        .zip(&grads)
        .map(|(&layer, g)| {
            Ok(AttentionMap {
                values: attention_from(tape, record.feature(layer), g, mechanism)?,
                classes: classes.to_vec(),
                layer,
                mechanism,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, forward, ModelConfig};

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn grad_cam_hand_example() {
        let tape = Tape::new();
        let f = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = t(&[1, 1, 2, 2], &[1.0, -1.0, 1.0, 1.0]);
        assert_eq!(channel_weights(&tape, &g, Mechanism::GradCam).unwrap().data(), &[0.5]);
        assert_eq!(grad_cam(&tape, &f, &g).unwrap().data(), &[0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn a_ch_hand_example() {
        let tape = Tape::new();
        let f = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = t(&[1, 1, 2, 2], &[1.0, -1.0, 1.0, 1.0]);
        assert_eq!(channel_weights(&tape, &g, Mechanism::ACh).unwrap().data(), &[3.0]);
        assert_eq!(a_ch(&tape, &f, &g).unwrap().data(), &[0.75, 1.5, 2.25, 3.0]);
    }

    #[test]
    fn negative_gradients_give_zero_maps() {
        let tape = Tape::new();
        let f = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let g = t(&[1, 1, 2, 2], &[-1.0, -0.5, -2.0, -0.1]);
        assert!(grad_cam(&tape, &f, &g).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a_ch(&tape, &f, &g).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_cam_is_linear_in_gradient_scale() {
        let tape = Tape::new();
        let f = t(&[1, 2, 2, 2], &[1.0, 0.0, 2.0, 1.0, 0.5, 3.0, 0.0, 1.0]);
        let g = t(&[1, 2, 2, 2], &[0.3, -0.1, 0.2, 0.4, -0.2, 0.1, 0.5, -0.3]);
        let base = weighted_sum(&tape, &f, &channel_weights(&tape, &g, Mechanism::GradCam).unwrap()).unwrap();
        let g3 = tape.scale(&g, 3.0).unwrap();
        let scaled = weighted_sum(&tape, &f, &channel_weights(&tape, &g3, Mechanism::GradCam).unwrap()).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((3.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tape = Tape::new();
        let f = Tensor::zeros(&[1, 1, 2, 2]);
        let g = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(grad_cam(&tape, &f, &g).is_err());
        assert!(a_ch(&tape, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 2])).is_err());
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: vec![3, 4],
            input_size: (8, 8),
            input_channels: 1,
            classes: 3,
            kernel_size: 3,
            multi_label: false,
        }
    }

    fn image(seed: f64) -> Vec<f64> {
        (0..64).map(|i| ((i as f64 + seed) * 0.37).sin().abs()).collect()
    }

    #[test]
    fn batched_gradients_match_single_sample_backward() {
        let p = build_model(&tiny(), 4).unwrap();
        let x = t(&[2, 1, 8, 8], &[image(0.0), image(5.0)].concat());
        let tape = Tape::new();
        let rec = forward(&tape, &p, &x).unwrap();
        let both = class_gradients(&tape, &rec, &[2, 0], &[Layer::Last], false).unwrap();
        for (n, class) in [(0usize, 2usize), (1, 0)] {
            let tape = Tape::new();
            let xi = t(&[1, 1, 8, 8], &image(if n == 0 { 0.0 } else { 5.0 }));
            let rec = forward(&tape, &p, &xi).unwrap();
            let one = class_gradients(&tape, &rec, &[class], &[Layer::Last], false).unwrap();
            let len = one[0].numel();
            assert_eq!(&both[0].data()[n * len..(n + 1) * len], one[0].data());
        }
    }

    #[test]
    fn zero_head_row_gives_zero_gradient() {
        let mut p = build_model(&tiny(), 4).unwrap();
        let mut head = p.get("head.weight").unwrap().to_vec();
        for r in 0..4 {
            head[r * 3 + 1] = 0.0;
        }
        p.set("head.weight", t(&[4, 3], &head)).unwrap();
        let tape = Tape::new();
        let rec = forward(&tape, &p, &t(&[1, 1, 8, 8], &image(1.0))).unwrap();
        let g = class_gradients(&tape, &rec, &[1], &[Layer::Inner, Layer::Last], false).unwrap();
        assert!(g.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn maps_have_feature_resolution_and_are_non_negative() {
        let p = build_model(&tiny(), 8).unwrap();
        let tape = Tape::new();
        let rec = forward(&tape, &p, &t(&[1, 1, 8, 8], &image(2.0))).unwrap();
        for mech in [Mechanism::GradCam, Mechanism::ACh] {
            let maps = attention_maps(&tape, &rec, &[0], &[Layer::Inner, Layer::Last], mech, true).unwrap();
            assert_eq!(maps[0].spatial(), (4, 4));
            assert_eq!(maps[1].spatial(), (2, 2));
            assert!(maps.iter().all(|m| m.values.data().iter().all(|&v| v >= 0.0)));
            assert!(maps.iter().all(|m| m.values.node().is_some()));
        }
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in [Mechanism::GradCam, Mechanism::ACh] {
            assert_eq!(m.as_str().parse::<Mechanism>().unwrap(), m);
        }
        assert!("cam".parse::<Mechanism>().is_err());
    }
}
