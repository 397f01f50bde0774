//! Shared fixtures for the criterion benches.

use sharpen_core::data::{batch_iter, generate_synth, Batch, SynthSpec};
use sharpen_core::nn::{build_model, ModelConfig, Params};
use sharpen_core::{Result, Tensor};

/// Deterministic tensor with values in [-1, 1].
pub fn filled(shape: &[usize], phase: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|i| (i as f64 * 0.618 + phase).sin()).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data length")
}

/// A model and one synthetic batch sized like the trend experiment.
pub fn model_and_batch(batch_size: usize) -> Result<(Params, Batch)> {
    let spec = SynthSpec {
        classes: 4,
        height: 16,
        width: 16,
        motif_size: 5,
        noise_std: 0.3,
        seed: 1,
    };
    let ds = generate_synth(&spec, batch_size.div_ceil(4))?;
    let config = ModelConfig {
        channels: vec![8, 16],
        input_size: (16, 16),
        input_channels: ds.channels,
        classes: 4,
        ..ModelConfig::default()
    };
    let params = build_model(&config, 1)?;
    let batch = batch_iter(&ds, batch_size, None, 0, false)?.remove(0);
    Ok((params, batch))
}
