//! Closed-form reference effects standing in for the unknown system under
//! estimation, so recovery can be checked against an exact target.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dsp::StftConfig;
use crate::operators::{OperatorModel, WhOperator};
use crate::{Error, Result, Signal};

/// One closed-form signal map. Chains of these build the reference effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EffectKind {
    Identity,
    Gain(f64),
    /// tanh(g x) / tanh(g): odd saturation hitting +-1 at x = +-1.
    TanhDrive(f64),
    /// Clamp to +-t, then rescale by 1/t so the knee lands at +-1.
    HardClip(f64),
    /// First-order high-frequency boost y[t] = x[t] - c x[t-1].
    PreEmphasis(f64),
    /// A frozen filter/waveshaper/filter operator with the given flat
    /// parameters and analysis config, at the signal's sample rate.
    WhReference { params: Vec<f64>, stft: StftConfig },
}

impl EffectKind {
    fn apply(&self, x: &Signal) -> Result<Signal> {
        match self {
            EffectKind::Identity => Ok(x.clone()),
            EffectKind::Gain(g) => {
                x.with_samples(x.samples().iter().map(|&v| g * v).collect())
            }
            EffectKind::TanhDrive(g) => {
                if *g <= 0.0 {
                    return Err(Error::config(format!("tanh drive {g} must be positive")));
                }
                let norm = g.tanh();
                x.with_samples(x.samples().iter().map(|&v| (g * v).tanh() / norm).collect())
            }
            EffectKind::HardClip(t) => {
                if *t <= 0.0 {
                    return Err(Error::config(format!("clip threshold {t} must be positive")));
                }
                x.with_samples(x.samples().iter().map(|&v| v.clamp(-t, *t) / t).collect())
            }
            EffectKind::PreEmphasis(c) => {
                let s = x.samples();
                let mut out = Vec::with_capacity(s.len());
                let mut prev = 0.0;
                for &v in s {
                    out.push(v - c * prev);
                    prev = v;
                }
                x.with_samples(out)
            }
            EffectKind::WhReference { params, stft } => {
                let op = WhOperator::with_stft(x.sample_rate(), *stft)?;
                op.apply(&Tensor::from_vec(params.clone()), x)
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            EffectKind::Identity => "identity",
            EffectKind::Gain(_) => "gain",
            EffectKind::TanhDrive(_) => "tanh_drive",
            EffectKind::HardClip(_) => "hard_clip",
            EffectKind::PreEmphasis(_) => "pre_emphasis",
            EffectKind::WhReference { .. } => "wh_reference",
        }
    }
}

/// A deterministic, time-invariant effect chain with a severity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEffect {
    pub chain: Vec<EffectKind>,
    pub label: String,
}

impl GroundTruthEffect {
    pub fn new(kind: EffectKind) -> Self {
        let label = kind.name().to_string();
        GroundTruthEffect { chain: vec![kind], label }
    }

    /// Barely-there saturation.
    pub fn clean() -> Self {
        GroundTruthEffect { chain: vec![EffectKind::TanhDrive(1.5)], label: "clean".into() }
    }

    /// Audible soft saturation.
    pub fn light() -> Self {
        GroundTruthEffect { chain: vec![EffectKind::TanhDrive(4.0)], label: "light".into() }
    }

    /// Gentle treble boost into a hard clipper.
    pub fn heavy() -> Self {
        GroundTruthEffect {
            chain: vec![EffectKind::PreEmphasis(0.5), EffectKind::HardClip(0.3)],
            label: "heavy".into(),
        }
    }

    pub fn apply(&self, x: &Signal) -> Result<Signal> {
        let mut out = x.clone();
        for kind in &self.chain {
            out = kind.apply(&out)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: Vec<f64>) -> Signal {
        Signal::new(v, 8000.0).unwrap()
    }

    #[test]
    fn identity_is_bitwise() {
        let x = sig(vec![0.1, -0.9, 0.5]);
        let y = GroundTruthEffect::new(EffectKind::Identity).apply(&x).unwrap();
        assert_eq!(y.samples(), x.samples());
    }

    #[test]
    fn tanh_drive_pins_its_endpoints() {
        let x = sig(vec![0.0, 1.0, -1.0]);
        let y = GroundTruthEffect::new(EffectKind::TanhDrive(3.0)).apply(&x).unwrap();
        assert_eq!(y.samples()[0], 0.0);
        assert!((y.samples()[1] - 1.0).abs() < 1e-15);
        assert!((y.samples()[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hard_clip_clamps_then_rescales() {
        let x = sig(vec![0.25, 0.75]);
        let y = GroundTruthEffect::new(EffectKind::HardClip(0.5)).apply(&x).unwrap();
        assert_eq!(y.samples(), &[0.5, 1.0]);
    }

    #[test]
    fn pre_emphasis_is_the_first_difference_form() {
        let x = sig(vec![1.0, 1.0, 0.0]);
        let y = GroundTruthEffect::new(EffectKind::PreEmphasis(0.5)).apply(&x).unwrap();
        assert_eq!(y.samples(), &[1.0, 0.5, -0.5]);
    }

    #[test]
    fn presets_carry_their_labels() {
        assert_eq!(GroundTruthEffect::clean().label, "clean");
        assert_eq!(GroundTruthEffect::light().label, "light");
        assert_eq!(GroundTruthEffect::heavy().label, "heavy");
        assert_eq!(GroundTruthEffect::heavy().chain.len(), 2);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let x = sig(vec![0.1]);
        assert!(GroundTruthEffect::new(EffectKind::TanhDrive(0.0)).apply(&x).is_err());
        assert!(GroundTruthEffect::new(EffectKind::HardClip(-1.0)).apply(&x).is_err());
    }
}
