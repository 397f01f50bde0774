use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{softmax_rows, Tape, Tensor};
use crate::error::{Error, Result};

/// Architecture of the desk-scale classifier.
///
/// Each block is `conv(k x k, padding k/2) -> ReLU -> maxpool 2x2`; the head is
/// global average pooling followed by an affine layer. Attention is read from
/// the output of the penultimate block (inner) and of the final block (last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub classes: usize,
    pub kernel_size: usize,
    pub multi_label: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            input_size: (32, 32),
            input_channels: 3,
            classes: 10,
            kernel_size: 3,
            multi_label: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 blocks so inner and last attention layers differ, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || self.input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        let (h, w) = self.input_size;
        let mut size = (h, w);
        for _ in &self.channels {
            if size.0 % 2 != 0 || size.1 % 2 != 0 {
                return Err(Error::Config(format!(
                    "input {h}x{w} does not halve cleanly through {} pooling stages",
                    self.channels.len()
                )));
            }
            size = (size.0 / 2, size.1 / 2);
        }
        if size.0 < 2 || size.1 < 2 {
            return Err(Error::Config(format!(
                "final attention map would be {}x{}; need at least 2x2",
                size.0, size.1
            )));
        }
        Ok(())
    }

    /// Spatial size of the output of block `b` (0-based).
    pub fn block_output_size(&self, b: usize) -> (usize, usize) {
        let f = 1 << (b + 1);
        (self.input_size.0 / f, self.input_size.1 / f)
    }

    pub fn inner_size(&self) -> (usize, usize) {
        self.block_output_size(self.channels.len() - 2)
    }

    pub fn last_size(&self) -> (usize, usize) {
        self.block_output_size(self.channels.len() - 1)
    }

    /// Shapes of all parameters, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        let mut prev = self.input_channels;
        for (i, &c) in self.channels.iter().enumerate() {
            shapes.push((format!("conv{i}.weight"), vec![c, prev, k, k]));
            shapes.push((format!("conv{i}.bias"), vec![c]));
            prev = c;
        }
        shapes.push(("head.weight".into(), vec![prev, self.classes]));
        shapes.push(("head.bias".into(), vec![self.classes]));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Trainable parameters of a [`ModelConfig`] network.
#[derive(Debug, Clone)]
pub struct Params {
    pub config: ModelConfig,
    pub tensors: Vec<Param>,
}

impl Params {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: slot.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        slot.value = value;
        Ok(())
    }

    /// All parameter values concatenated in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Params> {
        if flat.len() != self.count() {
            return Err(Error::shape("with_flat", format!("{} values for {} parameters", flat.len(), self.count())));
        }
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|p| {
                let n = p.value.numel();
                let value = Tensor::new(p.value.shape().to_vec(), flat[offset..offset + n].to_vec())?;
                offset += n;
                Ok(Param {
                    name: p.name.clone(),
                    value,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Params {
            config: self.config.clone(),
            tensors,
        })
    }
}

/// Builds a network with fan-in scaled Gaussian weights (std `sqrt(2 / fan_in)`) and zero biases.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Params> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = config
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let numel = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; numel]
            } else {
                // conv kernels are OIHW; the head matrix is [in, out]
                let fan_in: usize = if shape.len() == 4 { shape[1..].iter().product() } else { shape[0] };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            };
            Ok(Param {
                name,
                value: Tensor::new(shape, data)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Params {
        config: config.clone(),
        tensors,
    })
}

/// Which tracked feature layer to read attention from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Inner,
    Last,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Inner => "inner",
            Layer::Last => "last",
        }
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    /// Pre-softmax class scores, `[N, C]`, tape-live.
    pub logits: Tensor,
    /// Softmax (single-label) or per-class sigmoid (multi-label) of the logits, row-major `[N, C]`.
    pub probabilities: Vec<f64>,
    /// Output of the penultimate block, `[N, C_in, H, W]`, tape-live.
    pub inner: Tensor,
    /// Output of the final block, `[N, C_last, H/2, W/2]`, tape-live.
    pub last: Tensor,
    /// Tape handles of the parameters, in storage order.
    pub params: Vec<Tensor>,
    pub batch: usize,
    pub classes: usize,
}

impl ForwardRecord {
    pub fn feature(&self, layer: Layer) -> &Tensor {
        match layer {
            Layer::Inner => &self.inner,
            Layer::Last => &self.last,
        }
    }

    pub fn probability_row(&self, n: usize) -> &[f64] {
        &self.probabilities[n * self.classes..(n + 1) * self.classes]
    }
}

/// Runs the network on an NCHW batch, registering every parameter on `tape`.
pub fn forward(tape: &Tape, params: &Params, batch: &Tensor) -> Result<ForwardRecord> {
    let cfg = &params.config;
    let expect = [cfg.input_channels, cfg.input_size.0, cfg.input_size.1];
    if batch.shape().len() != 4 || batch.shape()[1..] != expect {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: batch.shape().to_vec(),
            rhs: [&[0usize][..], &expect[..]].concat(),
        });
    }
    let n = batch.shape()[0];
    let handles: Vec<Tensor> = params.tensors.iter().map(|p| tape.param(&p.value)).collect();
    let pad = cfg.kernel_size / 2;
    let blocks = cfg.channels.len();
    let mut x = batch.clone();
    let mut outputs = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let (w, bias) = (&handles[2 * b], &handles[2 * b + 1]);
        let conv = tape.conv2d(&x, w, 1, pad)?;
        let shape = conv.shape().to_vec();
        let conv = tape.add(&conv, &tape.broadcast(bias, &shape, &[1])?)?;
        let act = tape.relu(&conv)?;
        x = tape.maxpool2d(&act, 2, 2)?;
        outputs.push(x.clone());
    }
    let pooled = tape.global_avg_pool(&x)?;
    let (hw, hb) = (&handles[2 * blocks], &handles[2 * blocks + 1]);
    let scores = tape.matmul(&pooled, hw)?;
    let logits = tape.add(&scores, &tape.broadcast(hb, &[n, cfg.classes], &[1])?)?;
    let probabilities = if cfg.multi_label {
        logits.data().iter().map(|&z| crate::autodiff::sigmoid_value(z)).collect()
    } else {
        softmax_rows(logits.data(), n, cfg.classes)
    };
    Ok(ForwardRecord {
        logits,
        probabilities,
        inner: outputs[blocks - 2].clone(),
        last: outputs[blocks - 1].clone(),
        params: handles,
        batch: n,
        classes: cfg.classes,
    })
}
