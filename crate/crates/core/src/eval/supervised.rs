//! Paired supervised fitting: the privileged baseline that sees aligned
//! clean/effected pairs and regresses the operator directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::dsp::{CompressedTarget, SpectralCostConfig};
use crate::operators::OperatorModel;
use crate::{Error, Result, Signal};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub iterations: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub cost: SpectralCostConfig,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            iterations: 2000,
            batch: 4,
            adam: AdamConfig { lr: 1e-4, ..AdamConfig::default() },
            cost: SpectralCostConfig::default(),
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 {
            return Err(Error::config("supervised training needs iterations and batch >= 1"));
        }
        self.cost.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupervisedRun {
    pub psi: Vec<f64>,
    /// Batch-mean spectral cost per iteration.
    pub losses: Vec<f64>,
}

/// Minimize the compressed-spectrum cost between `operator(x_i)` and `y_i`
/// over aligned pairs by minibatch Adam.
pub fn supervised_train(
    x: &[Signal],
    y: &[Signal],
    operator: &dyn OperatorModel,
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<SupervisedRun> {
    cfg.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::config(format!(
            "supervised training needs matching pair lists, got {} vs {}",
            x.len(),
            y.len()
        )));
    }
    for (xi, yi) in x.iter().zip(y) {
        if xi.samples().len() != yi.samples().len() || xi.sample_rate() != yi.sample_rate() {
            return Err(Error::config(
                "each supervised pair must share length and sample rate".to_string(),
            ));
        }
    }

    let targets: Vec<CompressedTarget> = y
        .iter()
        .map(|s| CompressedTarget::new(s.samples(), &cfg.cost))
        .collect::<Result<Vec<_>>>()?;

    let mut psi = operator.init_params(seed).data().to_vec();
    let mut adam = AdamState::new(cfg.adam, psi.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    let mut losses = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::from_vec(psi.clone()))?;
        let mut total: Option<crate::autodiff::Var<'_>> = None;
        for _ in 0..cfg.batch {
            let i = rng.random_range(0..x.len());
            let xin = tape.leaf(Tensor::from_vec(x[i].samples().to_vec()))?;
            let y_hat = operator.apply_var(&tape, p, xin)?;
            let c = targets[i].cost_var(&tape, y_hat)?;
            total = Some(match total {
                None => c,
                Some(t) => t.add(c)?,
            });
        }
        let loss = total
            .expect("batch >= 1")
            .scale(1.0 / cfg.batch as f64)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::non_finite(format!("supervised loss at iteration {it}")));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let g = grads.get(p).data().to_vec();
        adam.step(&mut psi, &g)?;
    }

    Ok(SupervisedRun { psi, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use crate::eval::corpus::{synth_corpus, CorpusKind};
    use crate::operators::GainOperator;

    fn small_cfg(iterations: usize) -> SupervisedConfig {
        SupervisedConfig {
            iterations,
            batch: 2,
            adam: AdamConfig { lr: 1e-2, weight_decay: 0.0, ..AdamConfig::default() },
            cost: SpectralCostConfig {
                compression: 0.5,
                stft: StftConfig::new(64, 16, 128).unwrap(),
            },
        }
    }

    #[test]
    fn recovers_a_gain_from_pairs() {
        let x = synth_corpus(CorpusKind::Ar1, 4, 256, 8000.0, 1).unwrap();
        let y: Vec<Signal> = x
            .iter()
            .map(|s| s.with_samples(s.samples().iter().map(|&v| 2.0 * v).collect()).unwrap())
            .collect();
        let op = GainOperator;
        let run = supervised_train(&x, &y, &op, &small_cfg(400), 7).unwrap();
        assert!((run.psi[0] - 2.0).abs() < 0.02, "psi {}", run.psi[0]);
        assert!(run.losses.last().unwrap() < &(run.losses[0] / 100.0));
    }

    #[test]
    fn identity_pairs_keep_the_identity_start_near_zero_loss() {
        let x = synth_corpus(CorpusKind::Ar1, 3, 256, 8000.0, 2).unwrap();
        let op = GainOperator;
        let run = supervised_train(&x, &x, &op, &small_cfg(50), 3).unwrap();
        assert!(run.losses[0] < 1e-20);
        assert!((run.psi[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mismatched_pairs_are_rejected() {
        let x = synth_corpus(CorpusKind::Ar1, 3, 256, 8000.0, 2).unwrap();
        let y = synth_corpus(CorpusKind::Ar1, 2, 256, 8000.0, 3).unwrap();
        assert!(supervised_train(&x, &y, &GainOperator, &small_cfg(10), 1).is_err());
    }
}
