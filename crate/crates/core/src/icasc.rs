//! The attention-separation and attention-consistency objective.
//!
//! For each sample with ground-truth class `T` and confusing class `Conf`:
//! - `Mask = sigmoid(omega (A^T_last - sigma))`, `sigma = sigma_factor * max A^T_last`,
//!   held constant (no gradient flows through it). The inner-resolution mask
//!   applies the same formula to `A^T_last` upsampled to the inner layer.
//! - `L_AS = 2 sum min(A^T, A^Conf) Mask / (sum (A^T + A^Conf) + eps)`, at both layers.
//! - `L_AC = theta - sum A^T_in Mask_in / (sum A^T_in + eps)`.
//! - `L = L_C + L_AS^in + L_AS^last + L_AC`.

use crate::attention::{attention_maps, Mechanism};
use crate::autodiff::{sigmoid_value, Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{classification_loss, ForwardRecord, Label, Layer};

/// Multipliers on the four objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub classification: f64,
    pub separation_inner: f64,
    pub separation_last: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            classification: 1.0,
            separation_inner: 1.0,
            separation_last: 1.0,
            consistency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcascConfig {
    pub mechanism: Mechanism,
    pub omega: f64,
    pub sigma_factor: f64,
    pub theta: f64,
    pub epsilon: f64,
    /// Samples whose last-layer target attention mass is below this skip the attention terms.
    pub skip_threshold: f64,
    /// Clamp `L_AC` at zero from below.
    pub clamp_lac: bool,
    pub weights: LossWeights,
}

impl Default for IcascConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::ACh,
            omega: 100.0,
            sigma_factor: 0.55,
            theta: 0.8,
            epsilon: 1e-8,
            skip_threshold: 1e-6,
            clamp_lac: false,
            weights: LossWeights::default(),
        }
    }
}

impl IcascConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, value: f64, rule: &str| Err(Error::Config(format!("{field} = {value}: {rule}")));
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad("omega", self.omega, "must be positive");
        }
        if !(self.sigma_factor > 0.0 && self.sigma_factor < 1.0) {
            return bad("sigma_factor", self.sigma_factor, "must lie in (0, 1)");
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta", self.theta, "must lie in (0, 1]");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", self.epsilon, "must be non-negative");
        }
        if !(self.skip_threshold >= 0.0 && self.skip_threshold.is_finite()) {
            return bad("skip_threshold", self.skip_threshold, "must be non-negative");
        }
        let w = self.weights;
        for (name, v) in [
            ("weight_classification", w.classification),
            ("weight_separation_inner", w.separation_inner),
            ("weight_separation_last", w.separation_last),
            ("weight_consistency", w.consistency),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, v, "must be non-negative");
            }
        }
        Ok(())
    }
}

/// Highest-probability class outside each sample's ground truth; ties go to the lowest id.
pub fn confusing_class(probabilities: &[f64], classes: usize, labels: &[Label]) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Domain {
            op: "confusing_class",
            detail: format!("need at least 2 classes, got {classes}"),
        });
    }
    if probabilities.len() != labels.len() * classes {
        return Err(Error::shape(
            "confusing_class",
            format!("{} probabilities for {} samples x {classes} classes", probabilities.len(), labels.len()),
        ));
    }
    labels
        .iter()
        .enumerate()
        .map(|(n, label)| {
            label.validate(classes)?;
            let row = &probabilities[n * classes..(n + 1) * classes];
            let mut best: Option<usize> = None;
            for (k, &p) in row.iter().enumerate() {
                if label.contains(k) {
                    continue;
                }
                if best.is_none_or(|b| p > row[b]) {
                    best = Some(k);
                }
            }
            best.ok_or_else(|| Error::Domain {
                op: "confusing_class",
                detail: format!("sample {n} is labelled with every class"),
            })
        })
        .collect()
}

/// Constant soft region mask, `[N, H, W]`.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub values: Tensor,
    /// Resolution the mask was built for.
    pub layer: Layer,
    /// Samples whose source attention was all zero.
    pub degenerate: Vec<bool>,
}

/// Thresholds the last-layer target attention into a soft mask at the
/// resolution `(h, w)` (the attention's own or a larger one).
pub fn region_mask(attention: &Tensor, target: (usize, usize), layer: Layer, config: &IcascConfig) -> Result<RegionMask> {
    let &[n, ah, aw] = attention.shape() else {
        return Err(Error::shape("region_mask", format!("expected [N, H, W], got {:?}", attention.shape())));
    };
    if attention.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain {
            op: "region_mask",
            detail: "attention must be finite and non-negative".into(),
        });
    }
    let a = attention.detach();
    let a = if target == (ah, aw) {
        a
    } else {
        // constants are evaluated without recording, so a scratch tape suffices
        Tape::new().bilinear_upsample(&a, target.0, target.1)?
    };
    let plane = target.0 * target.1;
    let mut out = Vec::with_capacity(n * plane);
    let mut degenerate = Vec::with_capacity(n);
    for s in a.data().chunks(plane) {
        let max = s.iter().copied().fold(0.0, f64::max);
        let sigma = config.sigma_factor * max;
        degenerate.push(max <= 0.0);
        out.extend(s.iter().map(|&v| sigmoid_value(config.omega * (v - sigma))));
    }
    Ok(RegionMask {
        values: Tensor::new(vec![n, target.0, target.1], out)?,
        layer,
        degenerate,
    })
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-sample `L_AS`, shape `[N]`.
pub fn attention_separation(tape: &Tape, target: &Tensor, confusing: &Tensor, mask: &Tensor, epsilon: f64) -> Result<Tensor> {
    check_same("attention_separation", target, confusing)?;
    check_same("attention_separation", target, mask)?;
    let overlap = tape.mul(&tape.minimum(target, confusing)?, &mask.detach())?;
    let num = tape.scale(&tape.sum(&overlap, &[1, 2])?, 2.0)?;
    let den = tape.sum(&tape.add(target, confusing)?, &[1, 2])?;
    tape.div_with_epsilon(&num, &den, epsilon)
}

/// Per-sample `L_AC` (unclamped), shape `[N]`.
pub fn attention_consistency(tape: &Tape, inner_target: &Tensor, mask: &Tensor, theta: f64, epsilon: f64) -> Result<Tensor> {
    check_same("attention_consistency", inner_target, mask)?;
    let inside = tape.sum(&tape.mul(inner_target, &mask.detach())?, &[1, 2])?;
    let total = tape.sum(inner_target, &[1, 2])?;
    let ratio = tape.div_with_epsilon(&inside, &total, epsilon)?;
    tape.sub(&Tensor::scalar(theta), &ratio)
}

/// Per-sample decisions that depend on the forward values but receive no
/// gradient. Freezing them makes the objective smooth in the parameters,
/// which finite-difference checks rely on.
#[derive(Debug, Clone)]
pub struct Selection {
    pub confusing: Vec<usize>,
    /// Ground-truth class used in each slot, `slots[j][n]`, plus whether the
    /// sample takes part in that slot.
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub classes: Vec<usize>,
    pub active: Vec<bool>,
    pub mask_last: Option<RegionMask>,
    pub mask_inner: Option<RegionMask>,
    pub skipped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub classification: f64,
    pub separation_inner: f64,
    pub separation_last: f64,
    pub consistency: f64,
    pub total: f64,
    /// Samples for which every attention term was skipped.
    pub skipped: Vec<bool>,
    pub confusing: Vec<usize>,
}

impl LossBreakdown {
    pub fn skip_rate(&self) -> f64 {
        if self.skipped.is_empty() {
            return 0.0;
        }
        self.skipped.iter().filter(|&&s| s).count() as f64 / self.skipped.len() as f64
    }
}

/// The objective as a tape scalar plus its decomposition.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    pub selection: Selection,
}

/// Ground-truth slots: slot `j` uses each sample's `j`-th positive class.
fn slot_layout(labels: &[Label]) -> Vec<(Vec<usize>, Vec<bool>)> {
    let depth = labels.iter().map(|l| l.classes().len()).max().unwrap_or(0);
    (0..depth)
        .map(|j| {
            let classes = labels.iter().map(|l| l.classes().get(j).copied().unwrap_or(l.classes()[0])).collect();
            let active = labels.iter().map(|l| j < l.classes().len()).collect();
            (classes, active)
        })
        .collect()
}

/// Evaluates `L_C` plus the attention terms on a forward record.
///
/// `frozen` reuses the confusing classes, masks and skip flags of an earlier
/// evaluation instead of recomputing them from the current forward values.
/// With `attention = false` only the classification term is built.
pub fn icasc_objective(
    tape: &Tape,
    record: &ForwardRecord,
    labels: &[Label],
    config: &IcascConfig,
    attention: bool,
    frozen: Option<&Selection>,
) -> Result<Objective> {
    config.validate()?;
    let n = record.batch;
    if labels.len() != n {
        return Err(Error::shape("icasc_objective", format!("{} labels for {n} samples", labels.len())));
    }
    let w = config.weights;
    // with a zero weight L_C is only reported, so it stays off the tape and the
    // objective remains twice differentiable
    let lc = if w.classification == 0.0 {
        classification_loss(tape, &record.logits.detach(), labels)?
    } else {
        classification_loss(tape, &record.logits, labels)?
    };
    let confusing = match frozen {
        Some(sel) => sel.confusing.clone(),
        None => confusing_class(&record.probabilities, record.classes, labels)?,
    };
    if !attention {
        let total = tape.scale(&lc, w.classification)?;
        let breakdown = finish(&total, lc.item(), 0.0, 0.0, 0.0, vec![false; n], confusing.clone())?;
        return Ok(Objective {
            total,
            breakdown,
            selection: Selection { confusing, slots: vec![] },
        });
    }

    let layers = [Layer::Inner, Layer::Last];
    let hw = |t: &Tensor| (t.shape()[2], t.shape()[3]);
    let (inner_hw, last_hw) = (hw(&record.inner), hw(&record.last));
    let conf_maps = attention_maps(tape, record, &confusing, &layers, config.mechanism, true)?;
    let per_sample_gt: Vec<f64> = labels.iter().map(|l| 1.0 / l.classes().len() as f64).collect();

    let layout = match frozen {
        Some(sel) => sel.slots.iter().map(|s| (s.classes.clone(), s.active.clone())).collect(),
        None => slot_layout(labels),
    };
    let mut terms: [Option<Tensor>; 3] = [None, None, None];
    let mut slots = Vec::with_capacity(layout.len());
    let mut any_used = vec![false; n];
    for (j, (classes, active)) in layout.into_iter().enumerate() {
        let maps = attention_maps(tape, record, &classes, &layers, config.mechanism, true)?;
        let (t_in, t_last) = (&maps[0].values, &maps[1].values);
        let (mask_last, mask_inner, skipped) = match frozen.map(|s| &s.slots[j]) {
            Some(s) => (
                s.mask_last.clone().expect("frozen slot carries masks"),
                s.mask_inner.clone().expect("frozen slot carries masks"),
                s.skipped.clone(),
            ),
            None => {
                let ml = region_mask(t_last, last_hw, Layer::Last, config)?;
                let mi = region_mask(t_last, inner_hw, Layer::Inner, config)?;
                let plane = last_hw.0 * last_hw.1;
                let skipped = t_last
                    .data()
                    .chunks(plane)
                    .zip(&ml.degenerate)
                    .map(|(s, &deg)| deg || s.iter().sum::<f64>() < config.skip_threshold)
                    .collect();
                (ml, mi, skipped)
            }
        };
        let weight: Vec<f64> = (0..n)
            .map(|i| {
                if active[i] && !skipped[i] {
                    any_used[i] = true;
                    per_sample_gt[i] / n as f64
                } else {
                    0.0
                }
            })
            .collect();
        let weight = Tensor::new(vec![n], weight)?;
        let las_in = attention_separation(tape, t_in, &conf_maps[0].values, &mask_inner.values, config.epsilon)?;
        let las_last = attention_separation(tape, t_last, &conf_maps[1].values, &mask_last.values, config.epsilon)?;
        let mut lac = attention_consistency(tape, t_in, &mask_inner.values, config.theta, config.epsilon)?;
        if config.clamp_lac {
            lac = tape.relu(&lac)?;
        }
        for (slot, per_sample) in terms.iter_mut().zip([las_in, las_last, lac]) {
            let contrib = tape.sum_all(&tape.mul(&per_sample, &weight)?)?;
            *slot = Some(match slot.take() {
                Some(acc) => tape.add(&acc, &contrib)?,
                None => contrib,
            });
        }
        slots.push(Slot {
            classes,
            active,
            mask_last: Some(mask_last),
            mask_inner: Some(mask_inner),
            skipped,
        });
    }
    let [as_in, as_last, ac] = terms.map(|t| t.unwrap_or_else(|| Tensor::scalar(0.0)));
    let total = tape.scale(&lc, w.classification)?;
    let total = tape.add(&total, &tape.scale(&as_in, w.separation_inner)?)?;
    let total = tape.add(&total, &tape.scale(&as_last, w.separation_last)?)?;
    let total = tape.add(&total, &tape.scale(&ac, w.consistency)?)?;
    let skipped = any_used.iter().map(|&u| !u).collect();
    let breakdown = finish(&total, lc.item(), as_in.item(), as_last.item(), ac.item(), skipped, confusing.clone())?;
    Ok(Objective {
        total,
        breakdown,
        selection: Selection { confusing, slots },
    })
}

fn finish(
    total: &Tensor,
    classification: f64,
    separation_inner: f64,
    separation_last: f64,
    consistency: f64,
    skipped: Vec<bool>,
    confusing: Vec<usize>,
) -> Result<LossBreakdown> {
    let b = LossBreakdown {
        classification,
        separation_inner,
        separation_last,
        consistency,
        total: total.item(),
        skipped,
        confusing,
    };
    for (name, v) in [
        ("L_C", b.classification),
        ("L_AS_inner", b.separation_inner),
        ("L_AS_last", b.separation_last),
        ("L_AC", b.consistency),
        ("total", b.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(b)
}
