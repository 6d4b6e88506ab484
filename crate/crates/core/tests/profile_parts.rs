//! Micro-timing of step components; diagnostic only. Run with --nocapture.

use std::time::Instant;

use mtseg_core::autodiff::ops;
use mtseg_core::autodiff::tape::Tape;
use mtseg_core::diagnostics::random_tensor;
use mtseg_core::nets::{extractor_forward, init_extractor, ExtractorConfig};
use mtseg_core::rng;

fn time<R>(label: &str, mut f: impl FnMut() -> R) -> R {
    let n = 5;
    let mut out = None;
    let t0 = Instant::now();
    for _ in 0..n {
        out = Some(f());
    }
    println!("{label}: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    out.unwrap()
}

#[test]
fn profile_extractor() {
    let cfg = ExtractorConfig::local_vit_default();
    let mut r = rng::stream(0, &[rng::purpose::INIT_EXTRACTOR]);
    let store = init_extractor::<f32>(&cfg, &mut r).unwrap();
    let img = random_tensor::<f32>(&[2, 3, 64, 64], 1, &[1]);

    time("fwd eval (batch2)", || {
        let tape = Tape::eval();
        let l = store.lease(&tape, false);
        let x = tape.leaf(&img);
        extractor_forward(&cfg, &l, x).unwrap().data().len()
    });

    time("fwd grad-tape (batch2)", || {
        let tape = Tape::new();
        let l = store.lease(&tape, true);
        let x = tape.leaf(&img);
        extractor_forward(&cfg, &l, x).unwrap().data().len()
    });

    time("fwd+bwd (batch2)", || {
        let tape = Tape::new();
        let l = store.lease(&tape, true);
        let x = tape.leaf(&img);
        let f = extractor_forward(&cfg, &l, x).unwrap();
        let loss = ops::mean_all(f).unwrap();
        tape.backward(loss).unwrap();
        tape.grad(x.clone()).is_some() as usize
    });

    // raw matmul throughput probe
    let a = random_tensor::<f32>(&[512, 256], 2, &[2]);
    let b = random_tensor::<f32>(&[256, 256], 3, &[3]);
    time("matmul 512x256x256 (33M FLOP)", || {
        let tape = Tape::eval();
        let av = tape.leaf(&a);
        let bv = tape.leaf(&b);
        ops::matmul(av, bv).unwrap().data().len()
    });
}
