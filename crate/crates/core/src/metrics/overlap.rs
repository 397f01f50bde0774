use rayon::prelude::*;

use crate::attention::attention_maps;
use crate::autodiff::Tape;
use crate::data::{batch_iter, Dataset};
use crate::error::Result;
use crate::icasc::{attention_consistency, attention_separation, confusing_class, region_mask, IcascConfig};
use crate::nn::{forward, Layer, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOverlap {
    pub id: String,
    pub target: usize,
    pub confusing: usize,
    pub separation_last: f64,
    pub consistency: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub samples: Vec<SampleOverlap>,
    /// Means over the samples that were not skipped (0 when all were).
    pub mean_separation_last: f64,
    pub mean_consistency: f64,
    pub skip_rate: f64,
}

/// Last-layer separation and consistency of every sample under frozen
/// parameters. Multi-label samples are measured for their first
/// ground-truth class.
pub fn attention_overlap_report(params: &Params, dataset: &Dataset, config: &IcascConfig, batch_size: usize) -> Result<OverlapReport> {
    let batches = batch_iter(dataset, batch_size, None, 0, false)?;
    let per_batch: Vec<Vec<SampleOverlap>> = batches
        .par_iter()
        .map(|batch| -> Result<Vec<SampleOverlap>> {
            let tape = Tape::new();
            let rec = forward(&tape, params, &batch.images)?;
            let conf = confusing_class(&rec.probabilities, rec.classes, &batch.labels)?;
            let targets: Vec<usize> = batch.labels.iter().map(|l| l.classes()[0]).collect();
            let layers = [Layer::Inner, Layer::Last];
            let t = attention_maps(&tape, &rec, &targets, &layers, config.mechanism, false)?;
            let c = attention_maps(&tape, &rec, &conf, &layers, config.mechanism, false)?;
            let last_hw = t[1].spatial();
            let ml = region_mask(&t[1].values, last_hw, Layer::Last, config)?;
            let mi = region_mask(&t[1].values, t[0].spatial(), Layer::Inner, config)?;
            let las = attention_separation(&tape, &t[1].values, &c[1].values, &ml.values, config.epsilon)?;
            let lac = attention_consistency(&tape, &t[0].values, &mi.values, config.theta, config.epsilon)?;
            Ok((0..batch.ids.len())
                .map(|n| {
                    let mass: f64 = t[1].sample(n).iter().sum();
                    SampleOverlap {
                        id: batch.ids[n].clone(),
                        target: targets[n],
                        confusing: conf[n],
                        separation_last: las.data()[n],
                        consistency: lac.data()[n],
                        skipped: ml.degenerate[n] || mass < config.skip_threshold,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let samples: Vec<SampleOverlap> = per_batch.into_iter().flatten().collect();
    let kept: Vec<&SampleOverlap> = samples.iter().filter(|s| !s.skipped).collect();
    let mean = |f: fn(&SampleOverlap) -> f64| {
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().map(|s| f(s)).sum::<f64>() / kept.len() as f64
        }
    };
    let skip_rate = if samples.is_empty() {
        0.0
    } else {
        (samples.len() - kept.len()) as f64 / samples.len() as f64
    };
    Ok(OverlapReport {
        mean_separation_last: mean(|s| s.separation_last),
        mean_consistency: mean(|s| s.consistency),
        skip_rate,
        samples,
    })
}
