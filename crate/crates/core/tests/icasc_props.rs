mod common;

use common::{invariant_trial, max_abs_diff};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sharpen_core::attention::{a_ch, grad_cam};
use sharpen_core::icasc::{region_mask, IcascConfig};
use sharpen_core::nn::Layer;
use sharpen_core::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn losses_stay_in_bounds_and_are_scale_invariant(seed in any::<u64>(), theta in 0.05f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = invariant_trial(&mut rng, theta).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.las), "L_AS {}", t.las);
        prop_assert!(t.lac >= theta - 1.0 && t.lac <= theta, "L_AC {}", t.lac);
        prop_assert!(t.a_ch_min >= 0.0);
        prop_assert_eq!(t.a_ch_negative_drift, 0.0);
        prop_assert!(t.las_scale_drift < 1e-6 && t.lac_scale_drift < 1e-6);
        prop_assert_eq!(t.monotone_violations, 0);
    }

    #[test]
    fn mask_saturates_at_the_argmax(values in prop::collection::vec(0.0f64..5.0, 4..30), omega in 1.0f64..200.0, sf in 0.05f64..0.95) {
        let n = values.len();
        let max = values.iter().copied().fold(0.0, f64::max);
        let cfg = IcascConfig { omega, sigma_factor: sf, ..IcascConfig::default() };
        let m = region_mask(&Tensor::new(vec![1, 1, n], values.clone()).unwrap(), (1, n), Layer::Last, &cfg).unwrap();
        prop_assert!(m.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let arg = values.iter().position(|&v| v == max).unwrap();
        if max * omega * (1.0 - sf) > 6.0 {
            prop_assert!(m.values.data()[arg] > 0.99);
        }
        // scaling the attention scales sigma with it; the mask is only
        // unchanged when omega is rescaled inversely
        let c = 3.0;
        let cfg2 = IcascConfig { omega: omega / c, ..cfg.clone() };
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let m2 = region_mask(&Tensor::new(vec![1, 1, n], scaled).unwrap(), (1, n), Layer::Last, &cfg2).unwrap();
        prop_assert!(max_abs_diff(m.values.data(), m2.values.data()) < 1e-12);
    }

    #[test]
    fn a_ch_is_positively_homogeneous_in_the_gradient(
        f in prop::collection::vec(0.0f64..1.0, 12),
        g in prop::collection::vec(-1.0f64..1.0, 12),
        c in 0.1f64..10.0,
    ) {
        let tape = Tape::new();
        let ft = Tensor::new(vec![1, 3, 2, 2], f).unwrap();
        let base = a_ch(&tape, &ft, &Tensor::new(vec![1, 3, 2, 2], g.clone()).unwrap()).unwrap();
        let gs: Vec<f64> = g.iter().map(|v| v * c).collect();
        let scaled = a_ch(&tape, &ft, &Tensor::new(vec![1, 3, 2, 2], gs).unwrap()).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            prop_assert!((a * c - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mechanisms_agree_for_single_channel_non_negative_gradients(
        f in prop::collection::vec(0.0f64..1.0, 9),
        g in prop::collection::vec(0.0f64..1.0, 9),
    ) {
        let tape = Tape::new();
        let ft = Tensor::new(vec![1, 1, 3, 3], f).unwrap();
        let gt = Tensor::new(vec![1, 1, 3, 3], g).unwrap();
        let a = a_ch(&tape, &ft, &gt).unwrap();
        let b = grad_cam(&tape, &ft, &gt).unwrap();
        prop_assert!(max_abs_diff(a.data(), b.data()) < 1e-15);
    }
}
