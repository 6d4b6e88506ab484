//! Wall-clock sanity for one training iteration at the default experiment
//! scale. Run with --nocapture to see the numbers.

use std::time::Instant;

use mtseg_core::momentum::SmoothingConfig;
use mtseg_core::trainer::{
    init_state, prepare_data, sample_batch, step, DiscriminatorMode, ExperimentConfig, Phase,
    Recorder,
};

#[test]
fn default_scale_step_times() {
    let mut cfg = ExperimentConfig {
        discriminator: DiscriminatorMode::Binary,
        dynamic_weights: true,
        smoothing: SmoothingConfig {
            mo_pl: true,
            mo_fa: true,
            m: 0.999,
        },
        batch_size: 2,
        ..ExperimentConfig::default()
    };
    cfg.data.train_size = 16;
    cfg.data.eval_size = 8;
    let data = prepare_data(&cfg).unwrap();
    let mut state = init_state(&cfg).unwrap();
    let mut rec = Recorder::new(&cfg);

    // warm the caches
    let batch = sample_batch(&cfg, &data, 0);
    step(&cfg, &mut state, &batch, Phase::Train).unwrap();

    let n = 5;
    let t0 = Instant::now();
    for i in 1..=n {
        let batch = sample_batch(&cfg, &data, i);
        step(&cfg, &mut state, &batch, Phase::Train).unwrap();
    }
    let per_step = t0.elapsed().as_secs_f64() / n as f64;

    let t1 = Instant::now();
    rec.observe(&cfg, &state, &data.probe, 0).unwrap();
    let per_obs = t1.elapsed().as_secs_f64();

    println!("step: {per_step:.3}s  observe: {per_obs:.3}s  (batch 2, 64x64, vit)");
    assert!(per_step < 5.0, "step too slow: {per_step}");
}
