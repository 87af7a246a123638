//! Runs the reference synthetic experiment over seeds 0..5 and prints one
//! line per seed plus the averages.

use std::time::Instant;

use signbridge::experiment::{run_seeds, ExperimentConfig};

fn main() -> signbridge::Result<()> {
    let mut cfg = ExperimentConfig::default();
    let mut seeds: Vec<u64> = Vec::new();
    for arg in std::env::args().skip(1) {
        if let Some((k, v)) = arg.split_once('=') {
            let f: f64 = v.parse().expect("numeric override");
            match k {
                "iso_noise" => cfg.synth.iso_noise = f,
                "news_noise" => cfg.synth.news_noise = f,
                "signer_jitter" => cfg.synth.signer_jitter = f,
                "template_scale" => cfg.synth.template_scale = f,
                "shift_strength" => cfg.synth.shift_strength = f,
                "shift_offset" => cfg.synth.shift_offset = f,
                "background_scale" => cfg.synth.background_scale = f,
                "epochs" => {
                    cfg.base.epochs = f as usize;
                    cfg.joint.epochs = f as usize;
                    cfg.full.epochs = f as usize;
                }
                "test_streams" => cfg.synth.test_streams = f as usize,
                "train_streams" => cfg.synth.train_streams = f as usize,
                "nms" => cfg.localize.nms_tiou = f,
                "base_epochs" => cfg.base.epochs = f as usize,
                "full_epochs" => cfg.full.epochs = f as usize,
                "head_from_base" => cfg.full.init_head_from_base = f != 0.0,
                "epsilon" => cfg.extraction.epsilon = f,
                "d" => cfg.model = signbridge::training::ModelConfig::with_feature_dim(f as usize),
                _ => panic!("unknown override {k}"),
            }
        } else {
            seeds.push(arg.parse().expect("seed must be an integer"));
        }
    }
    let seeds = if seeds.is_empty() { (0..5).collect() } else { seeds };
    let started = Instant::now();
    let outcomes = run_seeds(&cfg, &seeds)?;
    println!("seed  base   n.w.   full   | mAP@.1/.3/.5/.7 base | full | gap F  gap F^ | cands prec  secs");
    for o in &outcomes {
        let fmt = |m: &[f64]| m.iter().map(|v| format!("{:.3}", v)).collect::<Vec<_>>().join("/");
        println!(
            "{:4}  {:5.1}  {:5.1}  {:5.1}  | {} | {} | {:.3} {:.3} | {:4} {:.2} {:5.1}",
            o.seed,
            o.base_top1,
            o.news_added_top1,
            o.full_top1,
            fmt(&o.base_map),
            fmt(&o.full_map),
            o.gap_base,
            o.gap_aligned,
            o.candidates,
            o.candidate_precision,
            o.seconds
        );
    }
    let n = outcomes.len() as f64;
    let mean = |f: fn(&signbridge::experiment::SeedOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    println!(
        "mean  {:5.1}  {:5.1}  {:5.1}   total {:.1}s",
        mean(|o| o.base_top1),
        mean(|o| o.news_added_top1),
        mean(|o| o.full_top1),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
