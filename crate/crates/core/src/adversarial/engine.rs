//! The alternating discriminator/operator training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AdvConfig, AdvRecord, Discriminator};
use crate::autodiff::{AdamState, Tape, Tensor, Var};
use crate::operators::OperatorModel;
use crate::{Error, Result, Signal};

/// Stream offsets keeping the three sampling streams independent of each
/// other and of parameter initialization.
const REAL_STREAM: u64 = 0x5851_F42D_4C95_7F2D;
const FAKE_DISC_STREAM: u64 = 0x1405_7B7E_F767_814F;
const FAKE_GEN_STREAM: u64 = 0x2545_F491_4F6C_DD1D;
const DISC_INIT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Uniform random fixed-length windows from one corpus. Each estimation side
/// gets its own sampler over its own corpus, so no code path can pair a
/// clean segment with an effected one.
struct SegmentSampler<'a> {
    corpus: &'a [Signal],
    segment_len: usize,
}

impl<'a> SegmentSampler<'a> {
    fn new(corpus: &'a [Signal], segment_len: usize, side: &str) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid(format!("{side} corpus is empty")));
        }
        for (i, s) in corpus.iter().enumerate() {
            if s.len() < segment_len {
                return Err(Error::invalid(format!(
                    "{side} corpus signal {i} has {} samples, segment needs {}",
                    s.len(),
                    segment_len
                )));
            }
        }
        Ok(SegmentSampler { corpus, segment_len })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.corpus[rng.random_range(0..self.corpus.len())].samples();
        let offset = rng.random_range(0..=s.len() - self.segment_len);
        s[offset..offset + self.segment_len].to_vec()
    }
}

/// Result of an adversarial run: operator parameters, discriminator
/// parameters per window, and per-iteration telemetry.
pub struct AdvRun {
    pub psi: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub telemetry: Vec<AdvRecord>,
}

fn bits_hash(params: &[f64]) -> u64 {
    params.iter().fold(0u64, |acc, v| acc.rotate_left(7) ^ v.to_bits())
}

/// Mean of per-sample hinge terms on the tape: relu(1 - d) over reals plus
/// relu(1 + d) over fakes.
fn hinge_var<'t>(real: &[Var<'t>], fake: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc: Option<Var<'t>> = None;
    for (vars, sign) in [(real, -1.0), (fake, 1.0)] {
        let mut side: Option<Var<'t>> = None;
        for &d in vars {
            let term = d.scale(sign)?.add_const(1.0)?.relu()?;
            side = Some(match side {
                Some(s) => s.add(term)?,
                None => term,
            });
        }
        let side = side.ok_or_else(|| Error::invalid("hinge loss needs nonempty batches"))?;
        let side = side.scale(1.0 / vars.len() as f64)?;
        acc = Some(match acc {
            Some(a) => a.add(side)?,
            None => side,
        });
    }
    Ok(acc.unwrap())
}

/// Trains the operator against the discriminator ensemble on unpaired clean
/// and effected corpora. Telemetry records the hinge losses of the last
/// discriminator round and the operator objective of each iteration.
pub fn run_adversarial(
    x: &[Signal],
    y: &[Signal],
    operator: &dyn OperatorModel,
    cfg: &AdvConfig,
    seed: u64,
) -> Result<AdvRun> {
    cfg.validate()?;
    let xs = SegmentSampler::new(x, cfg.segment_len, "clean")?;
    let ys = SegmentSampler::new(y, cfg.segment_len, "effected")?;
    let sr = x[0].sample_rate();
    if x.iter().chain(y.iter()).any(|s| s.sample_rate() != sr) {
        return Err(Error::invalid("mixed sample rates across the corpora"));
    }

    let discs: Vec<Discriminator> = cfg
        .windows
        .iter()
        .map(|&w| Discriminator::new(cfg.disc_config(w), sr, cfg.segment_len))
        .collect::<Result<_>>()?;
    let mut phi: Vec<Vec<f64>> = discs
        .iter()
        .enumerate()
        .map(|(d, disc)| {
            disc.init_params((seed ^ DISC_INIT_STREAM).wrapping_add(d as u64)).into_data()
        })
        .collect();
    let mut adam_phi: Vec<AdamState> =
        discs.iter().map(|d| AdamState::new(cfg.disc_adam, d.param_count())).collect();
    let mut psi = operator.init_params(seed).into_data();
    let mut adam_psi = AdamState::new(cfg.op_adam, psi.len());

    let mut rng_real = ChaCha8Rng::seed_from_u64(seed ^ REAL_STREAM);
    let mut rng_fake_d = ChaCha8Rng::seed_from_u64(seed ^ FAKE_DISC_STREAM);
    let mut rng_fake_g = ChaCha8Rng::seed_from_u64(seed ^ FAKE_GEN_STREAM);

    let mut telemetry = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        // Phase 1: discriminator rounds on detached operator outputs.
        let psi_hash = bits_hash(&psi);
        let mut disc_losses = vec![0.0; discs.len()];
        for _ in 0..cfg.disc_per_op {
            let reals: Vec<Vec<f64>> = (0..cfg.batch).map(|_| ys.draw(&mut rng_real)).collect();
            let psi_tensor = Tensor::from_vec(psi.clone());
            let fakes: Vec<Vec<f64>> = (0..cfg.batch)
                .map(|_| {
                    let seg = Signal::new(xs.draw(&mut rng_fake_d), sr)?;
                    Ok(operator.apply(&psi_tensor, &seg)?.into_samples())
                })
                .collect::<Result<_>>()?;
            for (d, disc) in discs.iter().enumerate() {
                let tape = Tape::new();
                let p = tape.leaf(Tensor::from_vec(phi[d].clone()))?;
                let score = |seg: &Vec<f64>| -> Result<Var<'_>> {
                    disc.score_var(&tape, p, tape.leaf(Tensor::from_vec(seg.clone()))?)
                };
                let dr: Vec<Var> = reals.iter().map(score).collect::<Result<_>>()?;
                let df: Vec<Var> = fakes.iter().map(score).collect::<Result<_>>()?;
                let loss = hinge_var(&dr, &df)?;
                let value = loss.item()?;
                if !value.is_finite() {
                    return Err(Error::non_finite(format!(
                        "discriminator {d} loss at iteration {it}"
                    )));
                }
                let grad = tape.backward(loss)?.get(p);
                adam_phi[d].step(&mut phi[d], grad.data())?;
                disc_losses[d] = value;
            }
        }
        if bits_hash(&psi) != psi_hash {
            return Err(Error::invalid("discriminator phase modified operator parameters"));
        }

        // Phase 2: operator update on a fresh clean batch, discriminators
        // held fixed.
        let phi_hashes: Vec<u64> = phi.iter().map(|p| bits_hash(p)).collect();
        let tape = Tape::new();
        let pv = tape.leaf(Tensor::from_vec(psi.clone()))?;
        let phis: Vec<Var> =
            phi.iter().map(|p| tape.leaf(Tensor::from_vec(p.clone()))).collect::<Result<_>>()?;
        let mut score_sum: Option<Var> = None;
        for _ in 0..cfg.batch {
            let xv = tape.leaf(Tensor::from_vec(xs.draw(&mut rng_fake_g)))?;
            let yh = operator.apply_var(&tape, pv, xv)?;
            for (d, disc) in discs.iter().enumerate() {
                let s = disc.score_var(&tape, phis[d], yh)?;
                score_sum = Some(match score_sum {
                    Some(acc) => acc.add(s)?,
                    None => s,
                });
            }
        }
        let gen = score_sum.unwrap().scale(-1.0 / cfg.batch as f64)?;
        let gen_value = gen.item()?;
        if !gen_value.is_finite() {
            return Err(Error::non_finite(format!("operator loss at iteration {it}")));
        }
        let grad = tape.backward(gen)?.get(pv);
        adam_psi.step(&mut psi, grad.data())?;
        for (d, h) in phi_hashes.iter().enumerate() {
            if bits_hash(&phi[d]) != *h {
                return Err(Error::invalid("operator phase modified discriminator parameters"));
            }
        }

        telemetry.push(AdvRecord { iteration: it, disc_loss: disc_losses, gen_loss: gen_value });
    }
    Ok(AdvRun { psi, phi, telemetry })
}
