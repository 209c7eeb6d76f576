use proptest::prelude::*;

use ternary_har::bitpack::{QuantBNThresholds, conv1d_packed, pack_ternary, quantize_bn_apply};
use ternary_har::data::{ChannelSpan, LabeledStream, majority_label, segment_windows};
use ternary_har::fusion::{Branch, FusionSpec};
use ternary_har::metrics::weighted_f1;
use ternary_har::model::{Network, NetworkConfig, PackedModel};
use ternary_har::quantize::{Rounding, quantize_scalar};
use ternary_har::tensor::{DenseTensor, conv1d_forward};

fn ternary(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(prop::sample::select(vec![-0.5f32, 0.0, 0.5]), len)
}

type ConvCase = ((usize, usize, usize, usize, usize, usize), Vec<f32>, Vec<f32>);

/// `(batch, channels, filters, kernel, stride, length)` plus input and kernel values.
fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..3, 1usize..9, 1usize..6, 1usize..7, 1usize..4, 0usize..30).prop_flat_map(|(b, c, f, k, s, extra)| {
        let t = k + extra;
        (Just((b, c, f, k, s, t)), ternary(b * c * t), ternary(f * c * k))
    })
}

fn small_model() -> PackedModel {
    let spec = FusionSpec::new(ternary_har::fusion::FusionMode::Late, vec![Branch::new("a", 0..1), Branch::new("b", 1..2)]);
    let cfg = NetworkConfig { hidden: 16, ..NetworkConfig::new(64, 3, spec) };
    PackedModel::from_network(&Network::new(cfg, 1).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn packed_conv_is_bit_exact(((b, c, f, k, stride, t), x, w) in conv_case(), alpha in 0.01f64..4.0) {
        let x = DenseTensor::new(vec![b, c, t], x).unwrap();
        let w = DenseTensor::new(vec![f, c, k], w).unwrap();
        let dense = conv1d_forward(&x, &w, stride).unwrap().scale((1.0 * alpha) as f32);
        let packed = conv1d_packed(&pack_ternary(&x, 1.0).unwrap(), &pack_ternary(&w, alpha).unwrap(), stride).unwrap();
        prop_assert_eq!(dense.shape(), packed.shape());
        for (a, p) in dense.data().iter().zip(packed.data()) {
            prop_assert_eq!(a.to_bits(), p.to_bits());
        }
    }

    #[test]
    fn thresholds_match_direct_quantization(
        gamma in prop::collection::vec(prop_oneof![-4.0f64..-0.01, 0.01f64..4.0], 1..5),
        eps in 0.05f64..1.0,
        even in any::<bool>(),
        xs in prop::collection::vec(-5.0f32..5.0, 1..40),
    ) {
        let c = gamma.len();
        let beta: Vec<f64> = gamma.iter().map(|g| g * 0.3 - 0.1).collect();
        let rounding = if even { Rounding::HalfToEven } else { Rounding::HalfAwayFromZero };
        let th = QuantBNThresholds::new(&gamma, &beta, eps, rounding).unwrap();
        let n = xs.len();
        let data: Vec<f32> = (0..c).flat_map(|_| xs.iter().copied()).collect();
        let x = DenseTensor::new(vec![1, c, n], data).unwrap();
        let q = quantize_bn_apply(&x, &th).unwrap();
        for ch in 0..c {
            for (i, &v) in xs.iter().enumerate() {
                let direct = quantize_scalar(gamma[ch] * v as f64 + beta[ch], eps, 2, rounding).unwrap();
                prop_assert_eq!(q.data()[ch * n + i] as f64, direct);
            }
        }
    }

    #[test]
    fn window_count_and_majority(len in 1usize..300, t in 1usize..40, stride in 1usize..10, seed in any::<u8>()) {
        let labels: Vec<usize> = (0..len).map(|i| ((i * 7 + seed as usize) / 13) % 3).collect();
        let stream = LabeledStream { channels: 1, data: (0..len).map(|i| i as f32).collect(), labels: labels.clone(), sample_rate: 30.0 };
        let spans = vec![ChannelSpan::new("all", 0..1)];
        let ds = segment_windows(&stream, &spans, t, stride).unwrap();
        let expected = if len < t { 0 } else { (len - t) / stride + 1 };
        prop_assert_eq!(ds.len(), expected);
        for w in 0..ds.len() {
            let start = w * stride;
            prop_assert_eq!(ds.window(w)[0], start as f32);
            prop_assert_eq!(ds.labels[w], majority_label(&labels[start..start + t]));
        }
    }

    #[test]
    fn weighted_f1_is_bounded(labels in prop::collection::vec(0usize..4, 1..60), shift in 0usize..4) {
        let pred: Vec<usize> = labels.iter().map(|&y| (y + shift) % 4).collect();
        let f = weighted_f1(&pred, &labels, 4).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
        if shift == 0 {
            prop_assert!((f - 1.0).abs() < 1e-12, "{}", f);
        }
    }

    #[test]
    fn corrupt_model_bytes_never_panic(cut in 0usize..4000, flip in 0usize..4000, bit in 0u8..8) {
        let bytes = small_model().to_bytes();
        let mut damaged = bytes.clone();
        let i = flip % damaged.len();
        damaged[i] ^= 1 << bit;
        let _ = PackedModel::from_bytes(&damaged);
        let truncated = &bytes[..cut.min(bytes.len() - 1)];
        prop_assert!(PackedModel::from_bytes(truncated).is_err());
    }
}
