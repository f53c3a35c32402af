//! Adversarial engine checked on scalar ground truth and on the
//! indistinguishable-corpora control.

use blindfx::adversarial::{collapse_diagnostics, run_adversarial, AdvConfig, Discriminator};
use blindfx::autodiff::{AdamConfig, Tensor};
use blindfx::Signal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn ar1_signal(len: usize, rng: &mut ChaCha8Rng) -> Signal {
    let a = 0.85f64;
    let innovation = (0.09 * (1.0 - a * a)).sqrt();
    let mut x = vec![0.0; len];
    x[0] = 0.3 * rng.sample::<f64, _>(StandardNormal);
    for t in 1..len {
        x[t] = a * x[t - 1] + innovation * rng.sample::<f64, _>(StandardNormal);
    }
    Signal::new(x, 8000.0).unwrap()
}

fn corpus(n: usize, len: usize, seed: u64) -> Vec<Signal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| ar1_signal(len, &mut rng)).collect()
}

/// Small ensemble that keeps the desk run in seconds: full window ensemble,
/// reduced mel resolution and channel widths.
fn desk_cfg(iterations: usize) -> AdvConfig {
    AdvConfig {
        iterations,
        batch: 4,
        segment_len: 2048,
        windows: vec![512, 1024, 2048],
        n_mels: 16,
        channels: vec![4, 8, 8, 8],
        leaky_slope: 0.2,
        disc_adam: AdamConfig { lr: 1e-3, beta1: 0.5, beta2: 0.9, eps: 1e-8, weight_decay: 0.0 },
        op_adam: AdamConfig { lr: 4e-3, beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 0.0 },
        disc_per_op: 1,
    }
}

#[test]
fn recovers_a_scalar_gain_from_unpaired_corpora() {
    // True effect: attenuation by half. The effected corpus comes from
    // held-out clean draws, so nothing is paired.
    let x = corpus(4, 16384, 100);
    let mut hits = 0;
    let mut gains = Vec::new();
    for seed in 0..5u64 {
        let y: Vec<Signal> = corpus(4, 16384, 200 + seed)
            .into_iter()
            .map(|s| {
                let scaled: Vec<f64> = s.samples().iter().map(|&v| 0.5 * v).collect();
                s.with_samples(scaled).unwrap()
            })
            .collect();
        let run = run_adversarial(&x, &y, &blindfx::operators::GainOperator, &desk_cfg(500), seed)
            .unwrap();
        let gain = run.psi[0];
        gains.push(gain);
        if (0.4..=0.6).contains(&gain) {
            hits += 1;
        }
    }
    assert!(hits >= 4, "gains {gains:?}");
}

#[test]
fn matched_corpora_leave_the_discriminators_near_chance() {
    // X and Y are draws from the same distribution and the operator is held
    // at identity (zero learning rate): there is nothing to separate, so
    // trained scores should stay inside the hinge margins.
    let x = corpus(4, 16384, 300);
    let y = corpus(4, 16384, 400);
    let mut cfg = desk_cfg(300);
    cfg.op_adam.lr = 0.0;
    let run = run_adversarial(&x, &y, &blindfx::operators::GainOperator, &cfg, 9).unwrap();
    assert_eq!(run.psi[0], 1.0, "identity operator moved");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut scores = Vec::new();
    for (d, &w) in cfg.windows.iter().enumerate() {
        let disc = Discriminator::new(cfg.disc_config(w), 8000.0, cfg.segment_len).unwrap();
        let params = Tensor::from_vec(run.phi[d].clone());
        for source in [&x, &y] {
            for _ in 0..8 {
                let s = &source[rng.random_range(0..source.len())];
                let off = rng.random_range(0..=s.len() - cfg.segment_len);
                let seg = &s.samples()[off..off + cfg.segment_len];
                scores.push(disc.score(&params, seg).unwrap());
            }
        }
    }
    let mean_abs = scores.iter().map(|s| s.abs()).sum::<f64>() / scores.len() as f64;
    assert!(mean_abs < 1.0, "mean |score| {mean_abs}");
    // Late-training hinge losses should stay near the uninformative level.
    let late: f64 = run.telemetry[250..]
        .iter()
        .map(|r| r.disc_loss.iter().sum::<f64>() / r.disc_loss.len() as f64)
        .sum::<f64>()
        / 50.0;
    assert!(late > 1.0, "late disc loss {late}");
}

#[test]
fn passing_run_telemetry_raises_no_collapse_flags() {
    let x = corpus(4, 16384, 100);
    let y: Vec<Signal> = corpus(4, 16384, 500)
        .into_iter()
        .map(|s| {
            let scaled: Vec<f64> = s.samples().iter().map(|&v| 0.5 * v).collect();
            s.with_samples(scaled).unwrap()
        })
        .collect();
    let run =
        run_adversarial(&x, &y, &blindfx::operators::GainOperator, &desk_cfg(300), 1).unwrap();
    let report = collapse_diagnostics(&run.telemetry).unwrap();
    assert!(!report.too_strong, "collapse report {report:?}");
    assert!(!report.too_weak, "collapse report {report:?}");
}
