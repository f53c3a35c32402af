//! Corpus splitting that enforces the unpaired protocol: the clean segments
//! rendered through the reference effect are dropped from every clean split,
//! so no training-time pairing can exist even by accident.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::effects::GroundTruthEffect;
use crate::{Error, Result, Signal};

/// Split sizes in seconds of audio. Segment duration defaults to six
/// seconds; sizes must be whole multiples of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub x_seconds: f64,
    pub y_seconds: f64,
    pub test_seconds: f64,
    pub segment_seconds: f64,
}

impl SplitPlan {
    pub fn new(x_seconds: f64, y_seconds: f64, test_seconds: f64) -> Self {
        SplitPlan { x_seconds, y_seconds, test_seconds, segment_seconds: 6.0 }
    }

    /// Number of whole segments a duration covers.
    pub fn segments(&self, seconds: f64) -> Result<usize> {
        if !(self.segment_seconds > 0.0) || !seconds.is_finite() || seconds <= 0.0 {
            return Err(Error::config(format!(
                "durations must be positive, got {seconds} s in {} s segments",
                self.segment_seconds
            )));
        }
        let ratio = seconds / self.segment_seconds;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 {
            return Err(Error::config(format!(
                "{seconds} s is not a whole number of {} s segments",
                self.segment_seconds
            )));
        }
        Ok(n as usize)
    }

    fn counts(&self) -> Result<(usize, usize, usize)> {
        Ok((
            self.segments(self.x_seconds)?,
            self.segments(self.y_seconds)?,
            self.segments(self.test_seconds)?,
        ))
    }
}

/// The four materialized splits. `x` and `y` are unpaired; `x_test[i]` and
/// `y_test[i]` are an aligned clean/effected pair held out for metrics.
#[derive(Debug, Clone)]
pub struct Splits {
    pub x: Vec<Signal>,
    pub y: Vec<Signal>,
    pub x_test: Vec<Signal>,
    pub y_test: Vec<Signal>,
}

/// Which corpus segment each split element came from, for auditing that the
/// splits are disjoint at the source level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceAudit {
    pub x_ids: Vec<usize>,
    pub y_source_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl SourceAudit {
    /// True when no corpus segment appears in more than one split.
    pub fn disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.x_ids
            .iter()
            .chain(&self.y_source_ids)
            .chain(&self.test_ids)
            .all(|id| seen.insert(*id))
    }
}

/// Shuffle the corpus and carve out clean, effected, and paired-test splits.
///
/// The segments rendered into `y` are consumed: their clean versions appear
/// in no returned split. Test segments keep both versions because metrics
/// need aligned pairs.
pub fn make_splits(
    corpus: &[Signal],
    plan: &SplitPlan,
    effect: &GroundTruthEffect,
    seed: u64,
) -> Result<(Splits, SourceAudit)> {
    let (n_x, n_y, n_test) = plan.counts()?;
    let needed = n_x + n_y + n_test;
    if corpus.len() < needed {
        return Err(Error::config(format!(
            "plan needs {needed} segments but the corpus has {}",
            corpus.len()
        )));
    }
    let sr = corpus[0].sample_rate();
    let seg_len = corpus[0].samples().len();
    for s in corpus {
        if s.sample_rate() != sr || s.samples().len() != seg_len {
            return Err(Error::config(
                "corpus segments must share one sample rate and length".to_string(),
            ));
        }
    }
    let seg_seconds = seg_len as f64 / sr;
    if (seg_seconds - plan.segment_seconds).abs() > 1e-6 * plan.segment_seconds.max(1.0) {
        return Err(Error::config(format!(
            "corpus segments last {seg_seconds} s but the plan expects {} s",
            plan.segment_seconds
        )));
    }

    let mut ids: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let x_ids: Vec<usize> = ids[..n_x].to_vec();
    let y_source_ids: Vec<usize> = ids[n_x..n_x + n_y].to_vec();
    let test_ids: Vec<usize> = ids[n_x + n_y..needed].to_vec();

    let x = x_ids.iter().map(|&i| corpus[i].clone()).collect();
    let y = y_source_ids
        .iter()
        .map(|&i| effect.apply(&corpus[i]))
        .collect::<Result<Vec<_>>>()?;
    let x_test: Vec<Signal> = test_ids.iter().map(|&i| corpus[i].clone()).collect();
    let y_test = x_test.iter().map(|s| effect.apply(s)).collect::<Result<Vec<_>>>()?;

    Ok((
        Splits { x, y, x_test, y_test },
        SourceAudit { x_ids, y_source_ids, test_ids },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::corpus::{synth_corpus, CorpusKind};
    use crate::eval::effects::{EffectKind, GroundTruthEffect};

    #[test]
    fn whole_durations_map_to_exact_segment_counts() {
        let plan = SplitPlan::new(60.0, 18.0, 12.0);
        assert_eq!(plan.segments(18.0).unwrap(), 3);
        assert_eq!(plan.segments(60.0).unwrap(), 10);
        assert!(plan.segments(7.0).is_err());
    }

    fn desk_plan() -> SplitPlan {
        // 512-sample segments at 8 kHz.
        SplitPlan { x_seconds: 0.32, y_seconds: 0.192, test_seconds: 0.128, segment_seconds: 0.064 }
    }

    #[test]
    fn splits_are_disjoint_and_sized_by_the_plan() {
        let corpus = synth_corpus(CorpusKind::Ar1, 12, 512, 8000.0, 1).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::Gain(0.5));
        let (splits, audit) = make_splits(&corpus, &desk_plan(), &effect, 42).unwrap();
        assert_eq!(splits.x.len(), 5);
        assert_eq!(splits.y.len(), 3);
        assert_eq!(splits.x_test.len(), 2);
        assert_eq!(splits.y_test.len(), 2);
        assert!(audit.disjoint());
    }

    #[test]
    fn effected_sources_never_appear_clean() {
        let corpus = synth_corpus(CorpusKind::Ar1, 12, 512, 8000.0, 2).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::Gain(0.5));
        let (splits, audit) = make_splits(&corpus, &desk_plan(), &effect, 9).unwrap();
        for &src in &audit.y_source_ids {
            let clean = corpus[src].samples();
            for s in splits.x.iter().chain(&splits.x_test) {
                assert_ne!(s.samples(), clean);
            }
        }
        // And y really is the effect applied to those sources.
        for (sig, &src) in splits.y.iter().zip(&audit.y_source_ids) {
            let expect = effect.apply(&corpus[src]).unwrap();
            assert_eq!(sig.samples(), expect.samples());
        }
    }

    #[test]
    fn test_pairs_are_aligned() {
        let corpus = synth_corpus(CorpusKind::Ar1, 12, 512, 8000.0, 3).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::TanhDrive(3.0));
        let (splits, _) = make_splits(&corpus, &desk_plan(), &effect, 5).unwrap();
        for (x, y) in splits.x_test.iter().zip(&splits.y_test) {
            let expect = effect.apply(x).unwrap();
            assert_eq!(y.samples(), expect.samples());
        }
    }

    #[test]
    fn undersized_corpora_are_rejected() {
        let corpus = synth_corpus(CorpusKind::Ar1, 5, 512, 8000.0, 1).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::Identity);
        assert!(make_splits(&corpus, &desk_plan(), &effect, 1).is_err());
    }

    #[test]
    fn mismatched_segment_duration_is_rejected() {
        let corpus = synth_corpus(CorpusKind::Ar1, 12, 256, 8000.0, 1).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::Identity);
        assert!(make_splits(&corpus, &desk_plan(), &effect, 1).is_err());
    }
}
