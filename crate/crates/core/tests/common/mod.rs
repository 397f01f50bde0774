//! Shared helpers for integration and acceptance tests: reference formulas
//! written directly over flat arrays, and a tiny-model gradient harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpen_core::attention::Mechanism;
use sharpen_core::icasc::{icasc_objective, IcascConfig, LossWeights, Selection};
use sharpen_core::nn::{build_model, forward, Label, ModelConfig, Params};
use sharpen_core::{Result, Tape, Tensor};

// ---- reference formulas ----------------------------------------------------

/// Grad-CAM over one sample: `f`, `g` are `[k][h*w]` row-major.
pub fn grad_cam_ref(f: &[f64], g: &[f64], k: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; hw];
    for c in 0..k {
        let alpha: f64 = g[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64;
        for p in 0..hw {
            out[p] += alpha * f[c * hw + p];
        }
    }
    out.iter().map(|&v| v.max(0.0)).collect()
}

pub fn a_ch_ref(f: &[f64], g: &[f64], k: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; hw];
    for c in 0..k {
        let w: f64 = g[c * hw..(c + 1) * hw].iter().filter(|&&v| v > 0.0).sum();
        for p in 0..hw {
            out[p] += w * f[c * hw + p];
        }
    }
    out.iter().map(|&v| v.max(0.0) / hw as f64).collect()
}

pub fn attention_ref(mech: Mechanism, f: &[f64], g: &[f64], k: usize, hw: usize) -> Vec<f64> {
    match mech {
        Mechanism::GradCam => grad_cam_ref(f, g, k, hw),
        Mechanism::ACh => a_ch_ref(f, g, k, hw),
    }
}

/// Align-corners bilinear interpolation of an `h x w` map to `oh x ow`.
pub fn upsample_ref(a: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_out: usize, n_in: usize| -> f64 {
        if n_out == 1 {
            0.0
        } else {
            o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let y = coord(i, oh, h);
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for j in 0..ow {
            let x = coord(j, ow, w);
            let x0 = (x.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let top = a[y0 * w + x0] * (1.0 - fx) + a[y0 * w + x1] * fx;
            let bottom = a[y1 * w + x0] * (1.0 - fx) + a[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub fn mask_ref(a: &[f64], omega: f64, sigma_factor: f64) -> Vec<f64> {
    let max = a.iter().copied().fold(0.0, f64::max);
    let sigma = sigma_factor * max;
    a.iter().map(|&v| 1.0 / (1.0 + (-omega * (v - sigma)).exp())).collect()
}

pub fn separation_ref(t: &[f64], c: &[f64], m: &[f64], eps: f64) -> f64 {
    let num: f64 = t.iter().zip(c).zip(m).map(|((a, b), w)| a.min(*b) * w).sum();
    let den: f64 = t.iter().zip(c).map(|(a, b)| a + b).sum();
    2.0 * num / (den + eps)
}

pub fn consistency_ref(a: &[f64], m: &[f64], theta: f64, eps: f64) -> f64 {
    let inside: f64 = a.iter().zip(m).map(|(x, w)| x * w).sum();
    let total: f64 = a.iter().sum();
    theta - inside / (total + eps)
}

pub fn cross_entropy_ref(z: &[f64], label: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    m + s.ln() - z[label]
}

// ---- linear probe: features are leaves, logits linear in them --------------

/// One sample whose logits are `Y = vec(F_in) M_in + vec(F_last) M_last`, so
/// `dY^c/dF` is a column of `M` and every formula can be evaluated by hand.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub k: usize,
    pub last: (usize, usize),
    pub classes: usize,
    pub f_in: Vec<f64>,
    pub f_last: Vec<f64>,
    pub m_in: Vec<f64>,
    pub m_last: Vec<f64>,
    pub label: usize,
}

impl LinearProbe {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.gen_range(1..4);
        let last = (rng.gen_range(2..4), rng.gen_range(2..4));
        let classes = rng.gen_range(2..5);
        let n_in = k * 4 * last.0 * last.1;
        let n_last = k * last.0 * last.1;
        Self {
            k,
            last,
            classes,
            f_in: (0..n_in).map(|_| rng.gen_range(0.0..1.0)).collect(),
            f_last: (0..n_last).map(|_| rng.gen_range(0.0..1.0)).collect(),
            // biased upward so that attention is rarely all zero
            m_in: (0..n_in * classes).map(|_| rng.gen_range(-0.5..1.0)).collect(),
            m_last: (0..n_last * classes).map(|_| rng.gen_range(-0.5..1.0)).collect(),
            label: rng.gen_range(0..classes),
        }
    }

    pub fn inner(&self) -> (usize, usize) {
        (2 * self.last.0, 2 * self.last.1)
    }

    pub fn logits(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let a: f64 = self.f_in.iter().enumerate().map(|(i, f)| f * self.m_in[i * self.classes + c]).sum();
                let b: f64 = self.f_last.iter().enumerate().map(|(i, f)| f * self.m_last[i * self.classes + c]).sum();
                a + b
            })
            .collect()
    }

    /// Column `c` of `M`, i.e. the gradient map of `Y^c`.
    pub fn gradient(&self, inner: bool, c: usize) -> Vec<f64> {
        let m = if inner { &self.m_in } else { &self.m_last };
        (0..m.len() / self.classes).map(|i| m[i * self.classes + c]).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let z = self.logits();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    pub fn confusing(&self) -> usize {
        let p = self.probabilities();
        let mut best = None;
        for c in 0..self.classes {
            if c != self.label && best.is_none_or(|b: usize| p[c] > p[b]) {
                best = Some(c);
            }
        }
        best.unwrap()
    }

    /// Builds the engine-side forward record on `tape`.
    pub fn record(&self, tape: &Tape) -> sharpen_core::nn::ForwardRecord {
        let (h, w) = self.last;
        let (ih, iw) = self.inner();
        let f_in = tape.leaf(&Tensor::new(vec![1, self.k, ih, iw], self.f_in.clone()).unwrap());
        let f_last = tape.leaf(&Tensor::new(vec![1, self.k, h, w], self.f_last.clone()).unwrap());
        let m_in = Tensor::new(vec![self.f_in.len(), self.classes], self.m_in.clone()).unwrap();
        let m_last = Tensor::new(vec![self.f_last.len(), self.classes], self.m_last.clone()).unwrap();
        let a = tape.matmul(&tape.reshape(&f_in, &[1, self.f_in.len()]).unwrap(), &m_in).unwrap();
        let b = tape.matmul(&tape.reshape(&f_last, &[1, self.f_last.len()]).unwrap(), &m_last).unwrap();
        let logits = tape.add(&a, &b).unwrap();
        let probabilities = sharpen_core::autodiff::softmax_rows(logits.data(), 1, self.classes);
        sharpen_core::nn::ForwardRecord {
            logits,
            probabilities,
            inner: f_in,
            last: f_last,
            params: vec![],
            batch: 1,
            classes: self.classes,
        }
    }
}

/// Everything the reference formulas predict for a probe.
#[derive(Debug, Clone)]
pub struct ProbeReference {
    pub maps: [Vec<f64>; 4], // target inner, target last, confusing inner, confusing last
    pub mask_last: Vec<f64>,
    pub mask_inner: Vec<f64>,
    pub las_inner: f64,
    pub las_last: f64,
    pub lac: f64,
    pub lc: f64,
    pub skipped: bool,
}

pub fn probe_reference(p: &LinearProbe, cfg: &IcascConfig) -> ProbeReference {
    let (h, w) = p.last;
    let (ih, iw) = p.inner();
    let conf = p.confusing();
    let map = |inner: bool, c: usize| {
        let (f, hw) = if inner { (&p.f_in, ih * iw) } else { (&p.f_last, h * w) };
        attention_ref(cfg.mechanism, f, &p.gradient(inner, c), p.k, hw)
    };
    let (t_in, t_last, c_in, c_last) = (map(true, p.label), map(false, p.label), map(true, conf), map(false, conf));
    let mask_last = mask_ref(&t_last, cfg.omega, cfg.sigma_factor);
    let mask_inner = mask_ref(&upsample_ref(&t_last, h, w, ih, iw), cfg.omega, cfg.sigma_factor);
    let las_inner = separation_ref(&t_in, &c_in, &mask_inner, cfg.epsilon);
    let las_last = separation_ref(&t_last, &c_last, &mask_last, cfg.epsilon);
    let mut lac = consistency_ref(&t_in, &mask_inner, cfg.theta, cfg.epsilon);
    if cfg.clamp_lac {
        lac = lac.max(0.0);
    }
    let skipped = t_last.iter().sum::<f64>() < cfg.skip_threshold || t_last.iter().all(|&v| v == 0.0);
    ProbeReference {
        maps: [t_in, t_last, c_in, c_last],
        mask_last,
        mask_inner,
        las_inner,
        las_last,
        lac,
        lc: cross_entropy_ref(&p.logits(), p.label),
        skipped,
    }
}

// ---- tiny trainable model --------------------------------------------------

/// The reference problem for gradient checks: channels [4, 8], 8x8 grayscale
/// input, 3 classes, batch 2.
pub struct TinyProblem {
    pub params: Params,
    pub images: Tensor,
    pub labels: Vec<Label>,
    pub config: IcascConfig,
}

impl TinyProblem {
    pub fn new(seed: u64, mechanism: Mechanism) -> Self {
        let model = ModelConfig {
            channels: vec![4, 8],
            input_size: (8, 8),
            input_channels: 1,
            classes: 3,
            kernel_size: 3,
            multi_label: false,
        };
        let params = build_model(&model, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let images = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let labels = vec![Label::Single(rng.gen_range(0..3)), Label::Single(rng.gen_range(0..3))];
        Self {
            params,
            images,
            labels,
            config: IcascConfig {
                mechanism,
                ..IcascConfig::default()
            },
        }
    }

    pub fn separation_only(mut self) -> Self {
        self.config.weights = LossWeights {
            classification: 0.0,
            separation_inner: 1.0,
            separation_last: 1.0,
            consistency: 0.0,
        };
        self
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.flatten()
    }

    /// Builds the objective at `flat` on a fresh tape.
    pub fn build(&self, flat: &[f64], frozen: Option<&Selection>) -> Result<(Tape, Vec<Tensor>, sharpen_core::icasc::Objective)> {
        let params = self.params.with_flat(flat)?;
        let tape = Tape::new();
        let rec = forward(&tape, &params, &self.images)?;
        let obj = icasc_objective(&tape, &rec, &self.labels, &self.config, true, frozen)?;
        Ok((tape, rec.params, obj))
    }

    /// Objective value and the tape's piecewise-decision signature.
    pub fn value(&self, flat: &[f64], frozen: &Selection) -> Result<(f64, u64)> {
        let (tape, _, obj) = self.build(flat, Some(frozen))?;
        Ok((obj.breakdown.total, tape.decision_signature()))
    }

    pub fn gradient(&self, flat: &[f64], frozen: Option<&Selection>) -> Result<(Vec<f64>, Selection, u64)> {
        let (tape, handles, obj) = self.build(flat, frozen)?;
        let sig = tape.decision_signature();
        let grads = tape.backward(&obj.total, &handles.iter().collect::<Vec<_>>(), false)?;
        Ok((grads.iter().flat_map(|g| g.data().iter().copied()).collect(), obj.selection, sig))
    }

    /// Hessian-vector product `H v` by double backpropagation.
    pub fn hvp(&self, flat: &[f64], v: &[f64], frozen: &Selection) -> Result<Vec<f64>> {
        let (tape, handles, obj) = self.build(flat, Some(frozen))?;
        let wrt: Vec<&Tensor> = handles.iter().collect();
        let grads = tape.backward(&obj.total, &wrt, true)?;
        let mut offset = 0;
        let mut dot: Option<Tensor> = None;
        for g in &grads {
            let n = g.numel();
            let vt = Tensor::new(g.shape().to_vec(), v[offset..offset + n].to_vec())?;
            offset += n;
            let term = tape.sum_all(&tape.mul(g, &vt)?)?;
            dot = Some(match dot {
                Some(d) => tape.add(&d, &term)?,
                None => term,
            });
        }
        let hv = tape.backward(&dot.expect("parameters"), &wrt, false)?;
        Ok(hv.iter().flat_map(|g| g.data().iter().copied()).collect())
    }
}

/// Outcome of a coordinate-wise finite-difference sweep.
#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub excluded: Vec<usize>,
    pub max_rel_error: f64,
    pub worst: Option<(usize, f64, f64)>,
}

/// Compares analytic and central-difference gradients on `coords`, skipping
/// coordinates whose probes change any ReLU, min or max decision.
pub fn fd_sweep(problem: &TinyProblem, coords: &[usize], h: f64) -> Result<FdReport> {
    let flat = problem.flat();
    let (analytic, selection, base_sig) = problem.gradient(&flat, None)?;
    let mut report = FdReport::default();
    for &i in coords {
        let mut probe = flat.clone();
        probe[i] = flat[i] + h;
        let (plus, sp) = problem.value(&probe, &selection)?;
        probe[i] = flat[i] - h;
        let (minus, sm) = problem.value(&probe, &selection)?;
        if sp != base_sig || sm != base_sig {
            report.excluded.push(i);
            continue;
        }
        let fd = (plus - minus) / (2.0 * h);
        let err = sharpen_core::gradcheck::relative_error(analytic[i], fd);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((i, analytic[i], fd));
        }
    }
    Ok(report)
}

/// The same quantities as [`probe_reference`], computed by the engine.
pub fn probe_engine(p: &LinearProbe, cfg: &IcascConfig) -> Result<ProbeReference> {
    use sharpen_core::attention::attention_maps;
    use sharpen_core::icasc::{attention_consistency, attention_separation, region_mask};
    use sharpen_core::nn::Layer;

    let tape = Tape::new();
    let rec = p.record(&tape);
    let layers = [Layer::Inner, Layer::Last];
    let conf = sharpen_core::icasc::confusing_class(&rec.probabilities, p.classes, &[Label::Single(p.label)])?[0];
    let t = attention_maps(&tape, &rec, &[p.label], &layers, cfg.mechanism, true)?;
    let c = attention_maps(&tape, &rec, &[conf], &layers, cfg.mechanism, true)?;
    let (ih, iw) = p.inner();
    let ml = region_mask(&t[1].values, p.last, Layer::Last, cfg)?;
    let mi = region_mask(&t[1].values, (ih, iw), Layer::Inner, cfg)?;
    let las_inner = attention_separation(&tape, &t[0].values, &c[0].values, &mi.values, cfg.epsilon)?.item();
    let las_last = attention_separation(&tape, &t[1].values, &c[1].values, &ml.values, cfg.epsilon)?.item();
    let lac = attention_consistency(&tape, &t[0].values, &mi.values, cfg.theta, cfg.epsilon)?.item();
    let obj = icasc_objective(&tape, &rec, &[Label::Single(p.label)], cfg, true, None)?;
    Ok(ProbeReference {
        maps: [t[0].values.to_vec(), t[1].values.to_vec(), c[0].values.to_vec(), c[1].values.to_vec()],
        mask_last: ml.values.to_vec(),
        mask_inner: mi.values.to_vec(),
        las_inner,
        las_last,
        lac: if cfg.clamp_lac { lac.max(0.0) } else { lac },
        lc: obj.breakdown.classification,
        skipped: obj.breakdown.skipped[0],
    })
}

/// Largest absolute difference between two sequences of equal length.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst discrepancy per compared quantity: Grad-CAM maps, A_ch maps, masks,
/// L_AS, L_AC, and the assembled objective.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleGap {
    pub grad_cam: f64,
    pub a_ch: f64,
    pub mask: f64,
    pub separation: f64,
    pub consistency: f64,
    pub total: f64,
}

pub fn oracle_gap(p: &LinearProbe) -> Result<OracleGap> {
    let mut gap = OracleGap::default();
    for mech in [Mechanism::GradCam, Mechanism::ACh] {
        let cfg = IcascConfig {
            mechanism: mech,
            ..IcascConfig::default()
        };
        let want = probe_reference(p, &cfg);
        let got = probe_engine(p, &cfg)?;
        let maps = (0..4).map(|i| max_abs_diff(&want.maps[i], &got.maps[i])).fold(0.0, f64::max);
        match mech {
            Mechanism::GradCam => gap.grad_cam = maps,
            Mechanism::ACh => gap.a_ch = maps,
        }
        gap.mask = gap
            .mask
            .max(max_abs_diff(&want.mask_last, &got.mask_last))
            .max(max_abs_diff(&want.mask_inner, &got.mask_inner));
        gap.separation = gap
            .separation
            .max((want.las_inner - got.las_inner).abs())
            .max((want.las_last - got.las_last).abs());
        gap.consistency = gap.consistency.max((want.lac - got.lac).abs());

        // assembled objective: L_C plus the attention terms unless skipped
        let tape = Tape::new();
        let rec = p.record(&tape);
        let obj = icasc_objective(&tape, &rec, &[Label::Single(p.label)], &cfg, true, None)?;
        let expect = if want.skipped {
            want.lc
        } else {
            want.lc + want.las_inner + want.las_last + want.lac
        };
        gap.total = gap.total.max((obj.breakdown.total - expect).abs());
    }
    Ok(gap)
}

// ---- invariant trials -----------------------------------------------------

/// Results of one randomized invariant trial.
#[derive(Debug, Default, Clone)]
pub struct InvariantTrial {
    pub las: f64,
    pub lac: f64,
    pub a_ch_min: f64,
    /// Max change of the A_ch map after zeroing some negative gradient entries.
    pub a_ch_negative_drift: f64,
    pub las_scale_drift: f64,
    pub lac_scale_drift: f64,
    /// Increases of L_AS while a bump moves away from an identical one.
    pub monotone_violations: usize,
}

fn map3(v: Vec<f64>, h: usize, w: usize) -> Tensor {
    Tensor::new(vec![1, h, w], v).unwrap()
}

/// Random non-negative map with some exact zeros and at least one entry >= 0.1.
fn attention_like(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    let i = rng.gen_range(0..len);
    v[i] = rng.gen_range(0.1..1.0);
    v
}

pub fn invariant_trial(rng: &mut ChaCha8Rng, theta: f64) -> Result<InvariantTrial> {
    use sharpen_core::attention::a_ch;
    use sharpen_core::icasc::{attention_consistency, attention_separation, region_mask};
    use sharpen_core::nn::Layer;

    let cfg = IcascConfig {
        theta,
        ..IcascConfig::default()
    };
    let tape = Tape::new();
    let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
    let at = attention_like(rng, h * w);
    let ac = attention_like(rng, h * w);
    let a_in = attention_like(rng, h * w);
    let mask = region_mask(&map3(at.clone(), h, w), (h, w), Layer::Last, &cfg)?.values;
    let las = |s: f64| -> Result<f64> {
        let t = map3(at.iter().map(|v| v * s).collect(), h, w);
        let c = map3(ac.iter().map(|v| v * s).collect(), h, w);
        Ok(attention_separation(&tape, &t, &c, &mask, cfg.epsilon)?.item())
    };
    let lac = |s: f64| -> Result<f64> {
        let a = map3(a_in.iter().map(|v| v * s).collect(), h, w);
        Ok(attention_consistency(&tape, &a, &mask, cfg.theta, cfg.epsilon)?.item())
    };
    let scale = rng.gen_range(0.1..10.0);
    let mut out = InvariantTrial {
        las: las(1.0)?,
        lac: lac(1.0)?,
        ..InvariantTrial::default()
    };
    out.las_scale_drift = (las(scale)? - out.las).abs();
    out.lac_scale_drift = (lac(scale)? - out.lac).abs();

    // A_ch on random features and mixed-sign gradients
    let k = rng.gen_range(1..4);
    let f: Vec<f64> = (0..k * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let g: Vec<f64> = (0..k * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pruned: Vec<f64> = g.iter().map(|&v| if v < 0.0 && rng.gen_bool(0.5) { 0.0 } else { v }).collect();
    let ft = Tensor::new(vec![1, k, h, w], f)?;
    let base = a_ch(&tape, &ft, &Tensor::new(vec![1, k, h, w], g)?)?;
    let alt = a_ch(&tape, &ft, &Tensor::new(vec![1, k, h, w], pruned)?)?;
    out.a_ch_min = base.data().iter().copied().fold(f64::INFINITY, f64::min);
    out.a_ch_negative_drift = max_abs_diff(base.data(), alt.data());

    out.monotone_violations = bump_violations(rng, &tape, cfg.epsilon)?;
    Ok(out)
}

/// Moves a Gaussian bump away from an identical fixed bump and counts steps
/// where L_AS (all-ones mask) increases.
fn bump_violations(rng: &mut ChaCha8Rng, tape: &Tape, eps: f64) -> Result<usize> {
    let (h, w) = (16, 40);
    let sigma = rng.gen_range(1.0..3.0);
    let (cy, cx) = (rng.gen_range(6.0..10.0), rng.gen_range(9.0..11.0));
    let bump = |y0: f64, x0: f64| -> Vec<f64> {
        (0..h * w)
            .map(|p| {
                let (y, x) = ((p / w) as f64, (p % w) as f64);
                (-((y - y0).powi(2) + (x - x0).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    };
    let target = map3(bump(cy, cx), h, w);
    let ones = Tensor::full(&[1, h, w], 1.0);
    let mut prev = f64::INFINITY;
    let mut violations = 0;
    let mut shift = 0.0;
    while shift <= 16.0 {
        let conf = map3(bump(cy, cx + shift), h, w);
        let v = sharpen_core::icasc::attention_separation(tape, &target, &conf, &ones, eps)?.item();
        if v > prev {
            violations += 1;
        }
        prev = v;
        shift += rng.gen_range(0.25..1.5);
    }
    Ok(violations)
}

// ---- metric oracles ----------------------------------------------------------

/// KS statistic by evaluating both empirical CDFs directly at every sample point.
pub fn ks_brute_force(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&t| (cdf(a, t) - cdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// AP by computing each positive's rank from pairwise comparisons.
pub fn ap_brute_force(scores: &[f64], positives: &[bool]) -> f64 {
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..scores.len() {
        if !positives[i] {
            continue;
        }
        count += 1;
        let rank = 1 + (0..scores.len()).filter(|&j| ahead(i, j)).count();
        let hits = 1 + (0..scores.len()).filter(|&j| positives[j] && ahead(i, j)).count();
        sum += hits as f64 / rank as f64;
    }
    sum / count as f64
}
