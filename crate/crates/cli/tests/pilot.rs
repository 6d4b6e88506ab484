//! Throwaway pilot probes for sizing experiments; run explicitly with
//! `cargo test -p mtseg-cli --test pilot -- --ignored --nocapture`.

use mtseg_core::momentum::SmoothingConfig;
use mtseg_core::trainer::{
    self, init_state, prepare_data, DiscriminatorMode, ExperimentConfig, ScheduleConfig,
};

fn base_cfg() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        discriminator: DiscriminatorMode::Binary,
        batch_size: 2,
        ..ExperimentConfig::default()
    };
    cfg.data.train_size = 64;
    cfg.data.eval_size = 24;
    cfg.diagnostics.enabled = false;
    cfg.optim.lr_warmup_steps = 60;
    cfg
}

#[test]
#[ignore]
fn pilot_learning_speed() {
    let mut cfg = base_cfg();
    cfg.schedule = ScheduleConfig {
        warmup_iters: 150,
        iters_per_round: 150,
        rounds: 1,
    };
    let data = prepare_data(&cfg).unwrap();
    let mut state = init_state(&cfg).unwrap();
    let t0 = std::time::Instant::now();
    for chunk in 0..4 {
        let mut sub = cfg.clone();
        sub.schedule.warmup_iters = 150;
        trainer::warmup_phase(&sub, &mut state, &data, None).unwrap();
        let src = trainer::eval_source_miou(&cfg, &state, &data).unwrap();
        let tgt = trainer::eval_target_miou(&cfg, &state, &data).unwrap();
        println!(
            "warmup iter {}: source mIoU {src:.3}, target mIoU {tgt:.3} ({:.0}s)",
            (chunk + 1) * 150,
            t0.elapsed().as_secs_f64()
        );
    }
    // one self-training round after reset
    trainer::train_phase(&cfg, &mut state, &data, None).unwrap();
    let src = trainer::eval_source_miou(&cfg, &state, &data).unwrap();
    let tgt = trainer::eval_target_miou(&cfg, &state, &data).unwrap();
    println!(
        "after round (150 it): source mIoU {src:.3}, target mIoU {tgt:.3} ({:.0}s)",
        t0.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore]
fn pilot_direction() {
    // Smoothed+weighted vs plain binary, 2 seeds each, compact schedule.
    let variants: Vec<(&str, bool, SmoothingConfig)> = vec![
        (
            "smooth",
            true,
            SmoothingConfig { mo_pl: true, mo_fa: true, m: 0.999 },
        ),
        (
            "plain",
            false,
            SmoothingConfig { mo_pl: false, mo_fa: false, m: 0.999 },
        ),
    ];
    let handles: Vec<_> = variants
        .into_iter()
        .map(|(name, dyn_w, smoothing)| {
            std::thread::spawn(move || {
                let mut results = Vec::new();
                for seed in 0..2u64 {
                    let mut cfg = base_cfg();
                    cfg.seed = seed;
                    cfg.dynamic_weights = dyn_w;
                    cfg.smoothing = smoothing;
                    cfg.schedule = ScheduleConfig {
                        warmup_iters: 250,
                        iters_per_round: 350,
                        rounds: 1,
                    };
                    let data = prepare_data(&cfg).unwrap();
                    let mut state = init_state(&cfg).unwrap();
                    let mut rec = trainer::Recorder::new(&cfg);
                    trainer::warmup_phase(&cfg, &mut state, &data, Some(&mut rec)).unwrap();
                    trainer::train_phase(&cfg, &mut state, &data, Some(&mut rec)).unwrap();
                    let tgt = trainer::eval_target_miou(&cfg, &state, &data).unwrap();
                    let src = trainer::eval_source_miou(&cfg, &state, &data).unwrap();
                    let changes = rec.classifier.change_series().unwrap();
                    let tail = &changes[changes.len().saturating_sub(300)..];
                    let mean_change = tail.iter().map(|&c| c as f64).sum::<f64>() / tail.len() as f64;
                    results.push((seed, src, tgt, mean_change));
                }
                (name, results)
            })
        })
        .collect();
    for h in handles {
        let (name, results) = h.join().unwrap();
        for (seed, src, tgt, chg) in results {
            println!("{name} seed {seed}: source {src:.3} target {tgt:.3} tail-change {chg:.3}");
        }
    }
}
