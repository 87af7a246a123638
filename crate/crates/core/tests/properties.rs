use proptest::prelude::*;

use signbridge::autodiff::bce_loss;
use signbridge::evaluation::{
    average_precision, interval_tiou, map_at_tiou, topk_accuracy, AccuracyMode, Span, StreamSpan, TIOU_THRESHOLDS,
};
use signbridge::extraction::{filter_by_threshold, Candidate};
use signbridge::optim::{Adam, AdamConfig};
use signbridge::tensor::Matrix;
use signbridge::verify::ap_oracle;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-20.0f64..20.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn interval() -> impl Strategy<Value = (usize, usize)> {
    (0usize..60, 1usize..20).prop_map(|(s, l)| (s, s + l))
}

fn stream_spans(max: usize, distinct_scores: bool) -> impl Strategy<Value = Vec<StreamSpan>> {
    prop::collection::vec((0usize..2, 0usize..3, interval(), 0.0f64..1.0), 0..=max).prop_map(move |v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (stream, class, (s, e), score))| StreamSpan {
                stream,
                span: Span::new(
                    class,
                    s,
                    e,
                    if distinct_scores { score * 0.5 + i as f64 * 1e-3 } else { score },
                ),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_rows_sum_to_one(z in matrix(6, 8)) {
        let s = z.row_softmax();
        for r in 0..s.rows() {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(s.row(r).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(z in matrix(6, 8), c in -50.0f64..50.0) {
        let shifted = z.map(|v| v + c);
        prop_assert!(z.row_softmax().max_abs_diff(&shifted.row_softmax()) <= 1e-12);
    }

    #[test]
    fn maxpool_ignores_row_order(z in matrix(8, 5), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut order: Vec<usize> = (0..z.rows()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(z.max_rows().unwrap().0, z.select_rows(&order).max_rows().unwrap().0);
    }

    #[test]
    fn bce_is_nonnegative(p in prop::collection::vec(0.0f64..=1.0, 1..12), bits in prop::collection::vec(any::<bool>(), 12)) {
        let y: Vec<f64> = bits[..p.len()].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let loss = bce_loss(&Matrix::row_vector(&p), &Matrix::row_vector(&y)).unwrap();
        prop_assert!(loss >= 0.0);
        let exact = bce_loss(&Matrix::row_vector(&y), &Matrix::row_vector(&y)).unwrap();
        prop_assert!(exact <= 1e-6);
    }

    #[test]
    fn tiou_is_symmetric_and_bounded(a in interval(), b in interval()) {
        let ab = interval_tiou(a, b);
        prop_assert_eq!(ab, interval_tiou(b, a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(interval_tiou(a, a), 1.0);
    }

    #[test]
    fn map_never_rises_with_threshold(dets in stream_spans(12, false), truth in stream_spans(6, false)) {
        let m = map_at_tiou(&dets, &truth, &TIOU_THRESHOLDS);
        for w in m.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", m);
        }
    }

    #[test]
    fn ap_matches_threshold_enumeration(dets in stream_spans(10, true), truth in stream_spans(5, false), thr in 0.05f64..0.95) {
        let dets: Vec<StreamSpan> = dets.into_iter().map(|mut d| { d.span.class = 0; d }).collect();
        let truth: Vec<StreamSpan> = truth.into_iter().map(|mut t| { t.span.class = 0; t }).collect();
        let fast = average_precision(&dets, &truth, thr);
        let slow = ap_oracle(&dets, &truth, thr);
        prop_assert!((fast - slow).abs() <= 1e-12, "{} vs {}", fast, slow);
    }

    #[test]
    fn micro_equals_macro_when_balanced(
        k in 2usize..6,
        per_class in 1usize..5,
        data in prop::collection::vec(-3.0f64..3.0, 6 * 5 * 6),
        kk in 1usize..6,
    ) {
        let n = k * per_class;
        let scores = Matrix::from_vec(n, k, data[..n * k].to_vec()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let kk = kk.min(k);
        let micro = topk_accuracy(&scores, &labels, kk, AccuracyMode::Micro).unwrap();
        let macro_ = topk_accuracy(&scores, &labels, kk, AccuracyMode::Macro).unwrap();
        prop_assert!((micro - macro_).abs() <= 1e-9);
    }

    #[test]
    fn raising_epsilon_only_removes(scores in prop::collection::vec(0.0f64..1.0, 0..20), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let cands: Vec<Candidate> = scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Candidate {
                class: i % 3,
                stream_id: format!("s{i:03}"),
                start: 0,
                end: 9,
                score,
                frames: Matrix::zeros(1, 1),
            })
            .collect();
        let loose = filter_by_threshold(cands.clone(), 3, lo);
        let strict = filter_by_threshold(cands, 3, hi);
        for c in strict.iter() {
            prop_assert!(c.score > hi);
            prop_assert!(loose.iter().any(|l| l == c));
        }
        prop_assert!(strict.len() <= loose.len());
    }

    #[test]
    fn adam_is_deterministic(pg in (1usize..4, 1usize..4).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, 2 * r * c).prop_map(move |d| {
            (Matrix::from_vec(r, c, d[..r * c].to_vec()).unwrap(), Matrix::from_vec(r, c, d[r * c..].to_vec()).unwrap())
        })
    })) {
        let (p, g) = pg;
        let run = || {
            let mut a = Adam::new(AdamConfig::default());
            let mut q = p.clone();
            for _ in 0..3 {
                a.step(&mut [&mut q], std::slice::from_ref(&g)).unwrap();
            }
            q
        };
        prop_assert_eq!(run(), run());
    }
}
