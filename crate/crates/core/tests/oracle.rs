use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use signbridge::tensor::Matrix;
use signbridge::verify::{naive_forward, RandomInstance};

#[test]
fn engine_matches_literal_evaluator_on_1000_instances() {
    let mut worst = 0.0f64;
    for seed in 0..1000 {
        let inst = RandomInstance::sample(10_000 + seed);
        let fast = inst.model.forward_full(&inst.frames, &inst.memory).unwrap();
        let slow = naive_forward(&inst.model, &inst.frames, &inst.memory);
        for (name, a, b) in [
            ("x", &fast.x, &slow.x),
            ("r", &fast.r, &slow.r),
            ("u", &fast.u, &slow.u),
            ("z", &fast.z, &slow.z),
            ("p", &fast.p, &slow.p),
            ("a", &fast.a, &slow.a),
            ("v", &fast.v, &slow.v),
            ("logits", &fast.logits, &slow.logits),
        ] {
            assert_eq!(a.shape(), b.shape(), "seed {seed} {name}");
            let diff = a.max_abs_diff(b);
            assert!(diff <= 1e-10, "seed {seed}: {name} differs by {diff:e}");
            worst = worst.max(diff);
        }
    }
    println!("worst deviation {worst:e}");
}

#[test]
fn attention_rows_are_normalized() {
    for seed in 0..200 {
        let inst = RandomInstance::sample(seed);
        let tr = inst.model.forward_full(&inst.frames, &inst.memory).unwrap();
        for r in 0..tr.r.rows() {
            let s: f64 = tr.r.row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
            assert!(tr.r.row(r).iter().all(|&v| v > 0.0 && v < 1.0 || tr.r.cols() == 1));
        }
        assert!((tr.a.sum() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn logits_ignore_temporal_order_of_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..200 {
        let inst = RandomInstance::sample(seed);
        let x = inst.model.encoder.encode(&inst.frames).unwrap();
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut rng);
        let a = inst.model.forward_from_features(&x, &inst.memory).unwrap();
        let b = inst
            .model
            .forward_from_features(&x.select_rows(&order), &inst.memory)
            .unwrap();
        assert!(a.logits.max_abs_diff(&b.logits) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn logits_ignore_memory_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..200 {
        let inst = RandomInstance::sample(seed);
        let mut order: Vec<usize> = (0..inst.memory.rows()).collect();
        order.shuffle(&mut rng);
        let a = inst.model.logits(&inst.frames, &inst.memory).unwrap();
        let b = inst
            .model
            .logits(&inst.frames, &inst.memory.select_rows(&order))
            .unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn zero_residual_paths_reduce_to_pooled_baseline() {
    for seed in 0..200 {
        let mut inst = RandomInstance::sample(seed);
        let att = &mut inst.model.attention;
        att.w_u = Matrix::zeros(att.w_u.rows(), att.w_u.cols());
        att.w_o = Matrix::zeros(att.w_o.rows(), att.w_o.cols());
        let full = inst.model.logits(&inst.frames, &inst.memory).unwrap();
        let x = inst.model.encoder.encode(&inst.frames).unwrap();
        let pooled = x.max_rows().unwrap().0;
        let base = inst.model.head.logits(&pooled).unwrap();
        assert_eq!(full, base, "seed {seed}");
    }
}
