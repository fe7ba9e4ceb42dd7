use histopattern::inference::{aggregate, count_retained, filter_predictions};
use histopattern::tiler::{expected_patch_count, tile_region};
use histopattern::{
    AggregationConfig, ClassCounts, HistologicPattern, PatchGeometry, PatchPrediction, ProbabilityVector,
    ThresholdVector, TilerConfig,
};
use num_rational::Ratio;
use proptest::prelude::*;

fn prediction(x: u32, raw: [u16; 6]) -> PatchPrediction {
    let total: f64 = raw.iter().map(|&v| f64::from(v) + 1.0).sum();
    let values = raw.map(|v| (f64::from(v) + 1.0) / total);
    PatchPrediction::new(
        PatchGeometry::new(x, 0, 8).unwrap(),
        ProbabilityVector::renormalized(values).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn aggregation_is_scale_invariant(counts in prop::array::uniform6(0u64..200), k in 1u64..7) {
        let config = AggregationConfig::default();
        let scaled = ClassCounts(counts.map(|c| c * k));
        prop_assert_eq!(aggregate(&ClassCounts(counts), &config), aggregate(&scaled, &config));
    }

    #[test]
    fn aggregation_label_is_consistent(counts in prop::array::uniform6(0u64..200)) {
        let counts = ClassCounts(counts);
        let label = aggregate(&counts, &AggregationConfig::default());
        prop_assert!(!label.contains(HistologicPattern::Benign));
        if let Some(p) = label.predominant() {
            for m in label.minors() {
                prop_assert!(counts.get(p) >= counts.get(*m));
                prop_assert!(20 * counts.get(*m) >= counts.retained_total());
            }
        }
        for c in HistologicPattern::CANCEROUS {
            if !label.contains(c) && counts.get(c) > 0 && 20 * counts.get(c) >= counts.retained_total() {
                prop_assert!(false, "{c} survives the floor but is missing from {label}");
            }
        }
    }

    #[test]
    fn raising_a_threshold_never_retains_more(
        raw in prop::collection::vec(prop::array::uniform6(0u16..100), 1..80),
        tau in prop::array::uniform6(0u32..=20),
        class in 0usize..6,
    ) {
        let preds: Vec<PatchPrediction> = raw.iter().enumerate().map(|(i, r)| prediction(i as u32, *r)).collect();
        let tau_values = tau.map(|t| f64::from(t) / 20.0);
        let low = ThresholdVector::new(tau_values).unwrap();
        let mut raised = tau_values;
        raised[class] = (raised[class] + 0.25).min(1.0);
        let high = ThresholdVector::new(raised).unwrap();
        let (kept, counts) = filter_predictions(&preds, &low);
        prop_assert_eq!(counts, count_retained(&preds, &low));
        prop_assert_eq!(counts.retained_total() as usize, kept.len());
        let high_counts = count_retained(&preds, &high);
        for c in HistologicPattern::ALL {
            prop_assert!(high_counts.get(c) <= counts.get(c));
        }
    }

    #[test]
    fn tiling_count_and_coverage(w in 1u32..600, h in 1u32..600, window in 1u32..120) {
        let config = TilerConfig::new(window, Ratio::new(1, 5)).unwrap();
        if w < window || h < window {
            prop_assert!(tile_region(w, h, &config).is_err());
            prop_assert!(expected_patch_count(w, h, &config).is_err());
        } else {
            let tiles = tile_region(w, h, &config).unwrap();
            prop_assert_eq!(tiles.len() as u64, expected_patch_count(w, h, &config).unwrap());
            for t in &tiles {
                prop_assert!(t.fits_within(w, h));
            }
            // the far corner is covered
            prop_assert!(tiles.iter().any(|t| t.x + window == w && t.y + window == h));
        }
    }
}
