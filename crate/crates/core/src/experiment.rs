//! Seeded baseline-versus-attention training comparison on synthetic data.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::attention::Mechanism;
use crate::data::{generate_synth, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::icasc::{IcascConfig, LossWeights};
use crate::metrics::{attention_overlap_report, ks_exact, predict, topk_accuracy};
use crate::nn::{ModelConfig, Params};
use crate::train::{TrainConfig, Trainer};

/// Keeps test images apart from training images of the same seed.
const TEST_SEED_SALT: u64 = 0x7e57_0000_0000_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendConfig {
    pub synth: SynthSpec,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seeds: Vec<u64>,
    /// Template for every run; seed, mechanism and baseline flag are overridden.
    pub train: TrainConfig,
    /// Each mechanism gets its own attention run against the shared baseline.
    pub mechanisms: Vec<Mechanism>,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec {
                classes: 4,
                height: 16,
                width: 16,
                motif_size: 5,
                noise_std: 0.3,
                seed: 0,
            },
            train_per_class: 200,
            test_per_class: 100,
            seeds: (1..=5).collect(),
            train: TrainConfig {
                model: ModelConfig {
                    channels: vec![8, 16],
                    ..ModelConfig::default()
                },
                epochs: 12,
                batch_size: 32,
                // unit attention weights from the first epoch drive the
                // target attention to zero mass on this small model
                icasc: IcascConfig {
                    weights: LossWeights {
                        classification: 1.0,
                        separation_inner: 0.1,
                        separation_last: 0.1,
                        consistency: 0.1,
                    },
                    ..IcascConfig::default()
                },
                attention_warmup: 4,
                ..TrainConfig::default()
            },
            mechanisms: vec![Mechanism::ACh],
        }
    }
}

/// Held-out measurements of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub test_accuracy: f64,
    /// Mean last-layer separation loss over non-skipped test samples.
    pub separation_last: f64,
    pub ks: f64,
    pub skip_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub baseline: RunOutcome,
    pub attention: RunOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub mechanism: Mechanism,
    pub seeds: Vec<SeedComparison>,
}

impl TrendReport {
    /// Seeds where the attention run has the lower test separation loss.
    pub fn separation_wins(&self) -> usize {
        self.seeds.iter().filter(|s| s.attention.separation_last < s.baseline.separation_last).count()
    }

    /// Seeds where the attention run has the higher KS statistic.
    pub fn ks_wins(&self) -> usize {
        self.seeds.iter().filter(|s| s.attention.ks > s.baseline.ks).count()
    }

    /// Mean test accuracy of the attention runs minus that of the baselines.
    pub fn accuracy_delta(&self) -> f64 {
        let n = self.seeds.len().max(1) as f64;
        self.seeds.iter().map(|s| s.attention.test_accuracy - s.baseline.test_accuracy).sum::<f64>() / n
    }

    /// Accuracy within `tolerance` of the baseline on average.
    pub fn accuracy_stable(&self, tolerance: f64) -> bool {
        self.accuracy_delta() >= -tolerance
    }

    /// Whole-report criterion: separation and KS improve in at least
    /// `min_wins` seeds each and accuracy stays within `tolerance`.
    pub fn passes(&self, min_wins: usize, tolerance: f64) -> bool {
        self.separation_wins() >= min_wins && self.ks_wins() >= min_wins && self.accuracy_stable(tolerance)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "mechanism {}\nseed  acc_base  acc_attn  las_base  las_attn  ks_base  ks_attn  skip_attn\n",
            self.mechanism
        );
        for c in &self.seeds {
            let _ = writeln!(
                s,
                "{:<4}  {:>8.4}  {:>8.4}  {:>8.5}  {:>8.5}  {:>7.4}  {:>7.4}  {:>9.4}",
                c.seed,
                c.baseline.test_accuracy,
                c.attention.test_accuracy,
                c.baseline.separation_last,
                c.attention.separation_last,
                c.baseline.ks,
                c.attention.ks,
                c.attention.skip_rate
            );
        }
        let _ = write!(
            s,
            "separation wins {}/{n}, ks wins {}/{n}, accuracy delta {:+.4}",
            self.separation_wins(),
            self.ks_wins(),
            self.accuracy_delta(),
            n = self.seeds.len()
        );
        s
    }
}

/// Test accuracy, KS statistic and mean separation loss under `mechanism`.
pub fn evaluate_run(params: &Params, test: &Dataset, train: &TrainConfig, mechanism: Mechanism) -> Result<RunOutcome> {
    let pred = predict(params, test, train.batch_size)?;
    let (target, confusing) = pred.target_and_confusing()?;
    let icasc = crate::icasc::IcascConfig {
        mechanism,
        ..train.icasc.clone()
    };
    let overlap = attention_overlap_report(params, test, &icasc, train.batch_size)?;
    Ok(RunOutcome {
        test_accuracy: topk_accuracy(&pred.probabilities, pred.classes, &pred.labels, 1)?,
        separation_last: overlap.mean_separation_last,
        ks: ks_exact(&target, &confusing)?.0,
        skip_rate: overlap.skip_rate,
    })
}

fn train_run(config: &TrainConfig, train: &Dataset) -> Result<Params> {
    let mut trainer = Trainer::new(config.clone())?;
    while !trainer.is_finished() {
        trainer.run_epoch(train, None)?;
    }
    Ok(trainer.params().clone())
}

/// Trains one baseline per seed plus one attention model per mechanism, all
/// from the same initial weights, and compares them on a held-out set.
/// Separation is measured with the mechanism of the run it is compared to.
pub fn run_trend(config: &TrendConfig) -> Result<Vec<TrendReport>> {
    if config.seeds.is_empty() || config.mechanisms.is_empty() {
        return Err(Error::Config("trend experiment needs at least one seed and one mechanism".into()));
    }
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SeedComparison>> {
            let train = generate_synth(&SynthSpec { seed, ..config.synth.clone() }, config.train_per_class)?;
            let test = generate_synth(
                &SynthSpec {
                    seed: seed ^ TEST_SEED_SALT,
                    ..config.synth.clone()
                },
                config.test_per_class,
            )?;
            let mut base = config.train.clone();
            base.fit_to(&train);
            base.seed = seed;
            base.baseline = true;
            let baseline = train_run(&base, &train)?;
            config
                .mechanisms
                .iter()
                .map(|&mechanism| {
                    let mut attn = base.clone();
                    attn.baseline = false;
                    attn.icasc.mechanism = mechanism;
                    let trained = train_run(&attn, &train)?;
                    Ok(SeedComparison {
                        seed,
                        baseline: evaluate_run(&baseline, &test, &base, mechanism)?,
                        attention: evaluate_run(&trained, &test, &attn, mechanism)?,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(config
        .mechanisms
        .iter()
        .enumerate()
        .map(|(m, &mechanism)| TrendReport {
            mechanism,
            seeds: per_seed.iter().map(|s| s[m].clone()).collect(),
        })
        .collect())
}

/// Both reports next to each other, one row per seed.
pub fn side_by_side(a: &TrendReport, b: &TrendReport) -> String {
    let mut s = format!(
        "seed  acc_base  acc_{m1:<8} acc_{m2:<8} las_{m1:<8} las_{m2:<8} ks_base  ks_{m1:<8} ks_{m2:<8}\n",
        m1 = a.mechanism.as_str(),
        m2 = b.mechanism.as_str()
    );
    for (x, y) in a.seeds.iter().zip(&b.seeds) {
        let _ = writeln!(
            s,
            "{:<4}  {:>8.4}  {:>12.4} {:>12.4} {:>12.5} {:>12.5} {:>7.4}  {:>11.4} {:>11.4}",
            x.seed,
            x.baseline.test_accuracy,
            x.attention.test_accuracy,
            y.attention.test_accuracy,
            x.attention.separation_last,
            y.attention.separation_last,
            x.baseline.ks,
            x.attention.ks,
            y.attention.ks
        );
    }
    let _ = write!(
        s,
        "accuracy delta vs baseline: {} {:+.4}, {} {:+.4}",
        a.mechanism,
        a.accuracy_delta(),
        b.mechanism,
        b.accuracy_delta()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(acc: f64, las: f64, ks: f64) -> RunOutcome {
        RunOutcome {
            test_accuracy: acc,
            separation_last: las,
            ks,
            skip_rate: 0.0,
        }
    }

    #[test]
    fn report_counts_wins_and_accuracy_delta() {
        let r = TrendReport {
            mechanism: Mechanism::ACh,
            seeds: vec![
                SeedComparison {
                    seed: 1,
                    baseline: outcome(0.80, 0.3, 0.5),
                    attention: outcome(0.79, 0.2, 0.6),
                },
                SeedComparison {
                    seed: 2,
                    baseline: outcome(0.90, 0.3, 0.5),
                    attention: outcome(0.88, 0.4, 0.5),
                },
            ],
        };
        assert_eq!(r.separation_wins(), 1);
        assert_eq!(r.ks_wins(), 1);
        assert!((r.accuracy_delta() + 0.015).abs() < 1e-12);
        assert!(r.accuracy_stable(0.02) && !r.accuracy_stable(0.01));
        assert!(r.passes(1, 0.02) && !r.passes(2, 0.02));
        assert!(r.to_table().contains("separation wins 1/2, ks wins 1/2"));
    }

    #[test]
    fn tiny_trend_runs_end_to_end() {
        let mut cfg = TrendConfig {
            train_per_class: 3,
            test_per_class: 2,
            seeds: vec![3],
            ..TrendConfig::default()
        };
        cfg.synth.height = 12;
        cfg.synth.width = 12;
        cfg.train.model.channels = vec![2, 3];
        cfg.train.epochs = 1;
        cfg.train.attention_warmup = 0;
        cfg.mechanisms = vec![Mechanism::ACh, Mechanism::GradCam];
        let r = run_trend(&cfg).unwrap();
        assert_eq!(r.len(), 2);
        // one shared baseline; only its separation depends on the mechanism
        let (b0, b1) = (&r[0].seeds[0].baseline, &r[1].seeds[0].baseline);
        assert_eq!((b0.test_accuracy, b0.ks), (b1.test_accuracy, b1.ks));
        assert!((0.0..=1.0).contains(&r[0].seeds[0].attention.ks));
        assert!(side_by_side(&r[0], &r[1]).lines().count() == 3);
        assert!(run_trend(&TrendConfig { seeds: vec![], ..cfg }).is_err());
    }
}
