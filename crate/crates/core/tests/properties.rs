use ndarray::Array2;
use proptest::prelude::*;
use seqdiff::dataset::{read_sequences_csv, window_count, write_sequences_csv, ScalerState};
use seqdiff::metrics::{coverage, histogram, js_divergence};
use seqdiff::schedule::ScheduleSpec;
use seqdiff::SequenceBatch;

fn finite() -> impl Strategy<Value = f64> {
    -1e6f64..1e6
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaler_round_trip(rows in prop::collection::vec(prop::collection::vec(finite(), 3), 2..20)) {
        let n = rows.len();
        let arr = Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
        let scaler = ScalerState::fit_rows(&arr, -1.0, 1.0).unwrap();
        scaler.validate().unwrap();
        for r in 0..n {
            for j in 0..3 {
                let x = arr[[r, j]];
                let y = scaler.forward_value(j, x);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&y));
                if scaler.max[j] > scaler.min[j] {
                    let back = scaler.inverse_value(j, y);
                    let tol = 1e-9 * (scaler.max[j] - scaler.min[j]).max(1.0);
                    prop_assert!((back - x).abs() <= tol, "{x} -> {y} -> {back}");
                }
            }
        }
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(
        a in prop::collection::vec(-3.0f64..3.0, 1..200),
        b in prop::collection::vec(-3.0f64..3.0, 1..200),
        bins in 1usize..60,
    ) {
        let p = histogram(&a, bins, -3.0, 3.0);
        let q = histogram(&b, bins, -3.0, 3.0);
        let pq = js_divergence(&p, &q);
        prop_assert_eq!(pq, js_divergence(&q, &p));
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(js_divergence(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn coverage_grows_with_k(
        real in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 4..25),
        syn in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..25),
    ) {
        let mut last = 0.0;
        for k in 1..real.len() {
            let c = coverage(&real, &syn, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= last, "k={k}: {c} < {last}");
            last = c;
        }
        prop_assert!(coverage(&real, &syn, real.len()).is_err());
    }

    #[test]
    fn window_count_matches_enumeration(total in 0usize..300, len in 1usize..50, stride in 1usize..20) {
        let manual = (0..total).step_by(stride).filter(|s| s + len <= total).count();
        prop_assert_eq!(window_count(total, len, stride), manual);
    }

    #[test]
    fn sequence_csv_round_trip(b in 1usize..5, n in 1usize..6, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = seqdiff::rng::seeded(seed);
        let data: Vec<f64> = seqdiff::rng::standard_normal(&mut rng, b * n * d).iter().map(|v| v * 1e3).collect();
        let batch = SequenceBatch::from_flat(b, n, d, data).unwrap();
        let mut bytes = Vec::new();
        write_sequences_csv(&mut bytes, &batch).unwrap();
        let back = read_sequences_csv(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.values(), batch.values());
    }

    #[test]
    fn cosine_schedule_invariants(steps in 2usize..400) {
        let s = ScheduleSpec { num_steps: steps, ..ScheduleSpec::default() }.build().unwrap();
        let mut prev = 1.0;
        for t in 1..=steps {
            let ab = s.alpha_bar(t).unwrap();
            let beta = s.beta(t).unwrap();
            prop_assert!(ab > 0.0 && ab < prev);
            prop_assert!(beta > 0.0 && beta <= 0.999);
            prev = ab;
        }
    }
}
