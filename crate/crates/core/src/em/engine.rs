//! The three EM phases and the outer loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{EmConfig, EmState, EmTelemetry};
use crate::autodiff::{AdamState, Tape, Tensor, Var};
use crate::dsp::CompressedTarget;
use crate::operators::OperatorModel;
use crate::prior::{euler_prior_step, ScoreModel};
use crate::{Error, Result, Signal};

/// Stream offset separating M-step batch sampling from latent init streams.
const M_STEP_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Live per-observation graph from the E step: the latent leaf, its score,
/// and the posterior-mean estimate, all on one tape so the latent update can
/// extend the graph instead of re-evaluating the score model.
pub struct LatentGraph<'t> {
    pub z: Var<'t>,
    pub score: Var<'t>,
    pub denoised: Var<'t>,
}

/// Draws the initial latent ensemble and identity-initializes the operator.
///
/// Latent n is drawn from its own stream seeded with `seed + n`, so with a
/// null zeta policy and a frozen operator its trajectory is bit-identical to
/// unconditional sampling run with that seed.
pub fn em_init(
    y: &[Signal],
    operator: &dyn OperatorModel,
    cfg: &EmConfig,
    seed: u64,
) -> Result<EmState> {
    cfg.validate()?;
    if y.is_empty() {
        return Err(Error::invalid("em_init: no observations"));
    }
    let tau1 = cfg.schedule.taus()[0];
    let latents = y
        .iter()
        .enumerate()
        .map(|(n, obs)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(n as u64));
            (0..obs.len()).map(|_| tau1 * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let psi = operator.init_params(seed).into_data();
    let adam = AdamState::new(cfg.adam, psi.len());
    Ok(EmState { k: 0, latents, psi, adam, seed, rng_word_pos: 0 })
}

/// E step for one observation: score the latent and form the posterior-mean
/// estimate z + tau^2 * score on the shared tape.
pub fn e_step<'t>(
    tape: &'t Tape,
    model: &dyn ScoreModel,
    latent: &[f64],
    tau: f64,
) -> Result<LatentGraph<'t>> {
    let z = tape.leaf(Tensor::from_vec(latent.to_vec()))?;
    let score = model.score_var(tape, z, tau)?;
    let denoised = z.add(score.scale(tau * tau)?)?;
    Ok(LatentGraph { z, score, denoised })
}

/// M step: `cfg.m_its` Adam steps on the operator parameters against the
/// current denoised estimates, mini-batched in the state's sampling stream.
/// Returns the per-step batch objectives.
pub fn m_step(
    operator: &dyn OperatorModel,
    state: &mut EmState,
    denoised: &[Vec<f64>],
    targets: &[CompressedTarget],
    cfg: &EmConfig,
) -> Result<Vec<f64>> {
    if denoised.len() != targets.len() {
        return Err(Error::shape(
            "m_step",
            format!("{} estimates vs {} targets", denoised.len(), targets.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ M_STEP_STREAM);
    rng.set_word_pos(state.rng_word_pos);
    let mut losses = Vec::with_capacity(cfg.m_its);
    for _ in 0..cfg.m_its {
        let tape = Tape::new();
        let psi = tape.leaf(Tensor::from_vec(state.psi.clone()))?;
        let mut total: Option<Var> = None;
        for _ in 0..cfg.batch {
            let idx = rng.random_range(0..denoised.len());
            let x = tape.leaf(Tensor::from_vec(denoised[idx].clone()))?;
            let prediction = operator.apply_var(&tape, psi, x)?;
            let cost = targets[idx].cost_var(&tape, prediction)?;
            total = Some(match total {
                Some(acc) => acc.add(cost)?,
                None => cost,
            });
        }
        let loss = total.expect("batch >= 1").scale(1.0 / cfg.batch as f64)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::non_finite(format!(
                "M-step objective (k={}, latent rms {:.3e})",
                state.k,
                state.latent_rms()
            )));
        }
        losses.push(value);
        let grad = tape.backward(loss)?.get(psi).into_data();
        state.adam.step(&mut state.psi, &grad)?;
    }
    state.rng_word_pos = rng.get_word_pos();
    Ok(losses)
}

/// Latent update for one observation: an Euler step of the probability-flow
/// ODE with the score tilted by the likelihood gradient of the observation
/// under the current operator. Returns the advanced latent and the guidance
/// strength used.
pub fn latent_update<'t>(
    tape: &'t Tape,
    graph: &LatentGraph<'t>,
    operator: &dyn OperatorModel,
    psi: &[f64],
    target: &CompressedTarget,
    tau: f64,
    tau_next: f64,
    cfg: &EmConfig,
) -> Result<(Vec<f64>, f64)> {
    let z = graph.z.value().into_data();
    let score = graph.score.value().into_data();
    if cfg.zeta.is_null() {
        return Ok((euler_prior_step(&z, tau, tau_next, &score), 0.0));
    }

    let likelihood_grad = if cfg.frozen_denoiser {
        // Gradient stops at the denoised estimate: differentiate the cost
        // with respect to it on a fresh graph and treat d(denoised)/dz as
        // identity.
        let frozen = Tape::new();
        let x = frozen.leaf(graph.denoised.value())?;
        let p = frozen.leaf(Tensor::from_vec(psi.to_vec()))?;
        let cost = target.cost_var(&frozen, operator.apply_var(&frozen, p, x)?)?;
        let raw = cost.item()?;
        (frozen.backward(cost)?.get(x).into_data(), raw)
    } else {
        // Full path: extend the E-step tape so the gradient flows through
        // the score model into the latent.
        let p = tape.leaf(Tensor::from_vec(psi.to_vec()))?;
        let cost = target.cost_var(tape, operator.apply_var(tape, p, graph.denoised)?)?;
        let raw = cost.item()?;
        (tape.backward(cost)?.get(graph.z).into_data(), raw)
    };
    let (grad, raw_cost) = likelihood_grad;
    if !raw_cost.is_finite() {
        return Err(Error::non_finite("latent update cost"));
    }
    // Normalize by the coefficient count so the guidance strength that a
    // given zeta produces does not depend on signal length or window layout:
    // the policy sees the mean squared mismatch per spectral coefficient.
    let zeta = cfg.zeta.value(raw_cost / target.coeff_count() as f64);
    // Higher cost means lower likelihood: the tilt is score - zeta * grad.
    let tilted: Vec<f64> = score.iter().zip(&grad).map(|(&s, &g)| s - zeta * g).collect();
    Ok((euler_prior_step(&z, tau, tau_next, &tilted), zeta))
}

fn ensemble_objective(
    operator: &dyn OperatorModel,
    psi: &[f64],
    denoised: &[Vec<f64>],
    targets: &[CompressedTarget],
) -> Result<f64> {
    let mut total = 0.0;
    for (x, target) in denoised.iter().zip(targets) {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(psi.to_vec()))?;
        let xv = tape.leaf(Tensor::from_vec(x.clone()))?;
        total += target.cost_var(&tape, operator.apply_var(&tape, p, xv)?)?.item()?;
    }
    Ok(total)
}

/// Output of one EM iteration: telemetry plus the denoised ensemble that the
/// M step fit against.
pub struct EmIterationOutput {
    pub record: EmTelemetry,
    pub denoised: Vec<Vec<f64>>,
}

/// Advances the state through one schedule index: E step, M step, and (on
/// all but the final index) the latent update.
pub fn em_iterate(
    state: &mut EmState,
    model: &dyn ScoreModel,
    operator: &dyn OperatorModel,
    targets: &[CompressedTarget],
    cfg: &EmConfig,
) -> Result<EmIterationOutput> {
    let start = Instant::now();
    let taus = cfg.schedule.taus();
    let k = state.k;
    if k >= taus.len() {
        return Err(Error::invalid(format!("EM already finished all {} steps", taus.len())));
    }
    if state.latents.len() != targets.len() {
        return Err(Error::shape(
            "em_iterate",
            format!("{} latents vs {} targets", state.latents.len(), targets.len()),
        ));
    }
    let tau = taus[k];

    let tapes: Vec<Tape> = state.latents.iter().map(|_| Tape::new()).collect();
    let mut graphs = Vec::with_capacity(tapes.len());
    for (tape, latent) in tapes.iter().zip(&state.latents) {
        graphs.push(e_step(tape, model, latent, tau)?);
    }
    let denoised: Vec<Vec<f64>> =
        graphs.iter().map(|g| g.denoised.value().into_data()).collect();

    let objective_start = ensemble_objective(operator, &state.psi, &denoised, targets)?;
    m_step(operator, state, &denoised, targets, cfg)?;
    let objective_end = ensemble_objective(operator, &state.psi, &denoised, targets)?;
    if !objective_end.is_finite() {
        return Err(Error::non_finite(format!(
            "EM objective at k={k} (tau {tau:.3e}, latent rms {:.3e}, psi rms {:.3e})",
            state.latent_rms(),
            (state.psi.iter().map(|p| p * p).sum::<f64>() / state.psi.len().max(1) as f64).sqrt()
        )));
    }

    let mut zeta_sum = 0.0;
    if k + 1 < taus.len() {
        let tau_next = taus[k + 1];
        for (i, (tape, graph)) in tapes.iter().zip(&graphs).enumerate() {
            let (next, zeta) =
                latent_update(tape, graph, operator, &state.psi, &targets[i], tau, tau_next, cfg)?;
            state.latents[i] = next;
            zeta_sum += zeta;
        }
    }
    state.k += 1;

    let record = EmTelemetry {
        k,
        tau,
        objective_start,
        objective_end,
        zeta_mean: zeta_sum / targets.len() as f64,
        latent_rms: state.latent_rms(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(EmIterationOutput { record, denoised })
}

/// Result of a full EM run: operator parameters, the final clean-signal
/// estimates, and per-iteration telemetry.
pub struct EmRun {
    pub psi: Vec<f64>,
    pub denoised: Vec<Signal>,
    pub telemetry: Vec<EmTelemetry>,
}

/// Runs the full schedule and returns the estimated operator parameters
/// together with the final denoised ensemble.
pub fn run_em(
    y: &[Signal],
    model: &dyn ScoreModel,
    operator: &dyn OperatorModel,
    cfg: &EmConfig,
    seed: u64,
) -> Result<EmRun> {
    let mut state = em_init(y, operator, cfg, seed)?;
    let targets: Vec<CompressedTarget> =
        y.iter().map(|obs| CompressedTarget::new(obs.samples(), &cfg.cost)).collect::<Result<_>>()?;
    let mut telemetry = Vec::with_capacity(cfg.schedule.steps());
    let mut last_denoised = Vec::new();
    for _ in 0..cfg.schedule.steps() {
        let out = em_iterate(&mut state, model, operator, &targets, cfg)?;
        telemetry.push(out.record);
        last_denoised = out.denoised;
    }
    let denoised = last_denoised
        .into_iter()
        .zip(y)
        .map(|(x, obs)| Signal::new(x, obs.sample_rate()))
        .collect::<Result<_>>()?;
    Ok(EmRun { psi: state.psi, denoised, telemetry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{SpectralCostConfig, StftConfig};
    use crate::operators::GainOperator;
    use crate::prior::{GaussianAnalyticPrior, NoiseSchedule};

    fn small_cfg() -> EmConfig {
        EmConfig {
            schedule: NoiseSchedule::new(10.0, 1e-4, 11, 7.0).unwrap(),
            cost: SpectralCostConfig {
                compression: 0.5,
                stft: StftConfig::new(64, 16, 128).unwrap(),
            },
            ..EmConfig::default()
        }
    }

    fn observations(n: usize, len: usize) -> Vec<Signal> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..n)
            .map(|_| {
                let data =
                    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
                Signal::new(data, 8000.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn init_draws_one_latent_per_observation_at_the_top_noise_level() {
        let y = observations(3, 2048);
        let state = em_init(&y, &GainOperator, &small_cfg(), 7).unwrap();
        assert_eq!(state.latents.len(), 3);
        assert!(state.latents.iter().all(|z| z.len() == 2048));
        assert_eq!(state.psi, vec![1.0]);
        // Gaussian RMS concentrates around tau_1 = 10 for this many samples.
        let rms = state.latent_rms();
        assert!((rms - 10.0).abs() / 10.0 < 0.05, "latent rms {rms}");
    }

    #[test]
    fn init_is_deterministic_and_rejects_empty_input() {
        let y = observations(2, 256);
        let a = em_init(&y, &GainOperator, &small_cfg(), 3).unwrap();
        let b = em_init(&y, &GainOperator, &small_cfg(), 3).unwrap();
        assert_eq!(a.latents, b.latents);
        assert!(em_init(&[], &GainOperator, &small_cfg(), 3).is_err());
    }

    #[test]
    fn e_step_at_the_noise_floor_is_nearly_a_copy() {
        let prior = GaussianAnalyticPrior::ar1(0.9, 1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let tau = 1e-4;
        let tape = Tape::new();
        let graph = e_step(&tape, &prior, &z, tau).unwrap();
        let denoised = graph.denoised.value().into_data();
        let score_norm: f64 =
            graph.score.value().data().iter().map(|s| s * s).sum::<f64>().sqrt();
        let drift: f64 =
            denoised.iter().zip(&z).map(|(d, zi)| (d - zi) * (d - zi)).sum::<f64>().sqrt();
        assert!(drift <= tau * tau * score_norm * (1.0 + 1e-12), "drift {drift}");
    }

    #[test]
    fn m_step_with_exact_fit_does_not_move_parameters() {
        let y = observations(4, 256);
        let cfg = EmConfig {
            adam: crate::autodiff::AdamConfig {
                weight_decay: 0.0,
                ..EmConfig::default().adam
            },
            ..small_cfg()
        };
        let mut state = em_init(&y, &GainOperator, &cfg, 1).unwrap();
        state.psi = vec![2.0];
        let denoised: Vec<Vec<f64>> =
            y.iter().map(|s| s.samples().iter().map(|v| v / 2.0).collect()).collect();
        let targets: Vec<CompressedTarget> = y
            .iter()
            .map(|s| CompressedTarget::new(s.samples(), &cfg.cost).unwrap())
            .collect();
        let losses = m_step(&GainOperator, &mut state, &denoised, &targets, &cfg).unwrap();
        // The forward map reproduces the targets up to rounding, so the
        // objective sits at the optimum and parameters stay put.
        assert!(losses.iter().all(|&l| l < 1e-18), "losses {losses:?}");
        assert!((state.psi[0] - 2.0).abs() < 1e-6, "psi {}", state.psi[0]);
    }

    #[test]
    fn m_step_regresses_a_scalar_gain() {
        let y = observations(4, 256);
        let mut cfg = small_cfg();
        cfg.adam.lr = 1e-2;
        cfg.adam.weight_decay = 0.0;
        cfg.m_its = 60;
        let mut state = em_init(&y, &GainOperator, &cfg, 1).unwrap();
        let denoised: Vec<Vec<f64>> =
            y.iter().map(|s| s.samples().iter().map(|v| v / 2.0).collect()).collect();
        let targets: Vec<CompressedTarget> = y
            .iter()
            .map(|s| CompressedTarget::new(s.samples(), &cfg.cost).unwrap())
            .collect();
        let mut all = Vec::new();
        for _ in 0..6 {
            all.extend(m_step(&GainOperator, &mut state, &denoised, &targets, &cfg).unwrap());
        }
        assert!((state.psi[0] - 2.0).abs() < 0.02, "gain {}", state.psi[0]);
        // 5-step moving average decreases while far from the optimum.
        let ma: Vec<f64> = all.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for pair in ma[..60].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "moving average rose: {pair:?}");
        }
    }

    #[test]
    fn finished_state_refuses_further_iterations() {
        let y = observations(1, 256);
        let cfg = small_cfg();
        let mut state = em_init(&y, &GainOperator, &cfg, 1).unwrap();
        state.k = cfg.schedule.steps();
        let prior = GaussianAnalyticPrior::white(1.0, 256).unwrap();
        let targets =
            vec![CompressedTarget::new(y[0].samples(), &cfg.cost).unwrap()];
        assert!(em_iterate(&mut state, &prior, &GainOperator, &targets, &cfg).is_err());
    }
}
