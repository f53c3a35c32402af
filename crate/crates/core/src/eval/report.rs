//! Held-out metric reports: run an estimated operator over paired test
//! segments and tabulate spectral and embedding distances.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dsp::{embedding_cosine_distance, EmbeddingConfig};
use crate::dsp::{l1_log_mss, l1_mss, MssConfig};
use crate::operators::OperatorModel;
use crate::{Error, Result, Signal};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricsCfg {
    pub mss: MssConfig,
    pub embedding: EmbeddingConfig,
}

/// Identifies where a report came from. Filled in by the caller; the
/// evaluator itself only looks at signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub method: String,
    pub operator: String,
    pub budget_s: f64,
    pub effect: String,
    pub seed: u64,
}

impl Default for ReportMeta {
    fn default() -> Self {
        ReportMeta {
            method: "unspecified".into(),
            operator: "unspecified".into(),
            budget_s: 0.0,
            effect: "unspecified".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub segment: usize,
    pub l1_mss: f64,
    pub l1_log_mss: f64,
    pub emb_dist: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    pub rows: Vec<MetricRow>,
    pub mean_l1_mss: f64,
    pub mean_l1_log_mss: f64,
    pub mean_emb_dist: f64,
}

/// Apply `operator(psi)` to each test input and score it against the paired
/// reference output.
pub fn evaluate(
    psi: &[f64],
    operator: &dyn OperatorModel,
    x_test: &[Signal],
    y_test: &[Signal],
    cfg: &MetricsCfg,
    meta: ReportMeta,
) -> Result<MetricReport> {
    if x_test.is_empty() || x_test.len() != y_test.len() {
        return Err(Error::config(format!(
            "evaluation needs matching test pair lists, got {} vs {}",
            x_test.len(),
            y_test.len()
        )));
    }
    if psi.len() != operator.param_count() {
        return Err(Error::shape(
            "evaluate",
            format!("{} params for a {}-param operator", psi.len(), operator.param_count()),
        ));
    }
    let params = Tensor::from_vec(psi.to_vec());
    let mut rows = Vec::with_capacity(x_test.len());
    let mut sums = [0.0f64; 3];
    for (i, (x, y)) in x_test.iter().zip(y_test).enumerate() {
        let y_hat = operator.apply(&params, x)?;
        let a = l1_mss(&y_hat, y, &cfg.mss)?;
        let b = l1_log_mss(&y_hat, y, &cfg.mss)?;
        let c = embedding_cosine_distance(&y_hat, y, &cfg.embedding)?;
        sums[0] += a;
        sums[1] += b;
        sums[2] += c;
        rows.push(MetricRow { segment: i, l1_mss: a, l1_log_mss: b, emb_dist: c });
    }
    let n = rows.len() as f64;
    Ok(MetricReport {
        meta,
        rows,
        mean_l1_mss: sums[0] / n,
        mean_l1_log_mss: sums[1] / n,
        mean_emb_dist: sums[2] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::corpus::{synth_corpus, CorpusKind};
    use crate::eval::effects::{EffectKind, GroundTruthEffect};
    use crate::operators::GainOperator;

    fn small_metrics() -> MetricsCfg {
        MetricsCfg {
            mss: MssConfig { windows: vec![256, 128, 64] },
            embedding: EmbeddingConfig { n_mels: 16, window_len: 256, eps: 1e-8 },
        }
    }

    #[test]
    fn exact_parameters_score_zero() {
        let x = synth_corpus(CorpusKind::Ar1, 3, 512, 8000.0, 1).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::Gain(0.5));
        let y: Vec<Signal> = x.iter().map(|s| effect.apply(s).unwrap()).collect();
        let report =
            evaluate(&[0.5], &GainOperator, &x, &y, &small_metrics(), ReportMeta::default())
                .unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.mean_l1_mss.abs() < 1e-9);
        assert!(report.mean_l1_log_mss.abs() < 1e-9);
        assert!(report.mean_emb_dist.abs() < 1e-9);
    }

    #[test]
    fn wrong_parameters_score_positive_and_rows_match_inputs() {
        let x = synth_corpus(CorpusKind::Ar1, 4, 512, 8000.0, 2).unwrap();
        let effect = GroundTruthEffect::new(EffectKind::Gain(0.5));
        let y: Vec<Signal> = x.iter().map(|s| effect.apply(s).unwrap()).collect();
        let report =
            evaluate(&[1.0], &GainOperator, &x, &y, &small_metrics(), ReportMeta::default())
                .unwrap();
        assert_eq!(report.rows.len(), x.len());
        assert!(report.mean_l1_mss > 0.0);
        assert!(report.mean_l1_log_mss > 0.0);
        for row in &report.rows {
            assert!(row.l1_mss.is_finite() && row.l1_mss > 0.0);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let x = synth_corpus(CorpusKind::Ar1, 2, 512, 8000.0, 3).unwrap();
        let r =
            evaluate(&[1.0, 2.0], &GainOperator, &x, &x, &small_metrics(), ReportMeta::default());
        assert!(r.is_err());
    }
}
