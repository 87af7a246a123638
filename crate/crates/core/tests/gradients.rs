use std::time::Instant;

use signbridge::verify::{gradient_check, RandomInstance};

#[test]
fn full_model_gradients_match_central_differences() {
    let started = Instant::now();
    let mut entries = 0;
    let mut kinks = 0;
    let mut worst = 0.0f64;
    for seed in 0..120 {
        let inst = RandomInstance::sample(seed);
        let out = gradient_check(&inst, 1e-5).unwrap();
        assert!(
            out.max_rel_err <= 1e-4,
            "seed {seed}: rel err {:.3e} at {:?}",
            out.max_rel_err,
            out.worst
        );
        entries += out.entries;
        kinks += out.kinks;
        worst = worst.max(out.max_rel_err);
    }
    let secs = started.elapsed().as_secs_f64();
    println!("120 configs, {entries} entries, {kinks} kink-skipped, worst rel err {worst:.3e}, {secs:.1}s");
    assert!(kinks * 100 < entries, "too many max-pool kinks: {kinks}");
    assert!(secs < 60.0);
}
