//! Budget sweeps: run every estimation method across data budgets, effects,
//! and seeds, and tabulate held-out metrics in long format. A failing cell
//! is recorded and skipped so one divergent run cannot sink a sweep.

use serde::{Deserialize, Serialize};

use crate::adversarial::{run_adversarial, AdvConfig};
use crate::em::{run_em, EmConfig};
use crate::eval::corpus::{synth_corpus, CorpusKind};
use crate::eval::effects::GroundTruthEffect;
use crate::eval::report::{evaluate, MetricReport, MetricsCfg, ReportMeta};
use crate::eval::splits::{make_splits, SplitPlan};
use crate::eval::supervised::{supervised_train, SupervisedConfig};
use crate::operators::OperatorModel;
use crate::prior::GaussianAnalyticPrior;
use crate::{Error, Result, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    DiffusionEm,
    Adversarial,
    Supervised,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::DiffusionEm => "diffusion-em",
            Method::Adversarial => "adversarial",
            Method::Supervised => "supervised",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub corpus: CorpusKind,
    pub sample_rate: f64,
    pub seg_len: usize,
    /// Template plan; `y_seconds` is replaced by each budget in turn.
    pub plan: SplitPlan,
    pub budgets_s: Vec<f64>,
    pub effects: Vec<GroundTruthEffect>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub em: EmConfig,
    pub adv: AdvConfig,
    pub supervised: SupervisedConfig,
    pub metrics: MetricsCfg,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets_s.is_empty()
            || self.effects.is_empty()
            || self.methods.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::config(
                "sweep needs at least one budget, effect, method, and seed".to_string(),
            ));
        }
        let seg_seconds = self.seg_len as f64 / self.sample_rate;
        if (seg_seconds - self.plan.segment_seconds).abs() > 1e-9 {
            return Err(Error::config(format!(
                "seg_len {} at {} Hz lasts {seg_seconds} s, plan expects {} s",
                self.seg_len, self.sample_rate, self.plan.segment_seconds
            )));
        }
        Ok(())
    }
}

/// One long-format measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub operator: String,
    pub budget_s: f64,
    pub effect: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

impl SweepTable {
    /// Mean metric value over seeds for one (method, budget, effect) cell,
    /// or None when every seed of that cell failed.
    pub fn cell_mean(
        &self,
        method: &str,
        budget_s: f64,
        effect: &str,
        metric: &str,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.method == method
                    && r.effect == effect
                    && r.metric == metric
                    && (r.budget_s - budget_s).abs() < 1e-9
            })
            .map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Lag-1 regression coefficient and marginal variance of pooled clean
/// segments; the statistics the analytic prior needs, estimated from the
/// clean split alone.
pub fn clean_ar1_stats(x: &[Signal]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::config("cannot fit a prior to an empty clean split"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for s in x {
        let v = s.samples();
        for t in 0..v.len() {
            sum += v[t];
            sq += v[t] * v[t];
            n += 1;
            if t + 1 < v.len() {
                num += v[t] * v[t + 1];
                den += v[t] * v[t];
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::invalid("clean split has no energy to fit a prior"));
    }
    let mean = sum / n as f64;
    let variance = (sq / n as f64 - mean * mean).max(1e-9);
    let coeff = (num / den).clamp(-0.999, 0.999);
    Ok((coeff, variance))
}

fn method_meta(method: Method, operator: &dyn OperatorModel, budget_s: f64, effect: &str, seed: u64) -> ReportMeta {
    ReportMeta {
        method: method.name().into(),
        operator: operator.kind().into(),
        budget_s,
        effect: effect.into(),
        seed,
    }
}

/// Estimate with one method on prepared splits and score on the held-out
/// pairs. Supervised cells receive the true source/render pairs underlying
/// the effected split; unsupervised cells never see them.
pub fn run_cell(
    method: Method,
    operator: &dyn OperatorModel,
    splits_x: &[Signal],
    splits_y: &[Signal],
    pairs_x: &[Signal],
    x_test: &[Signal],
    y_test: &[Signal],
    cfg: &SweepConfig,
    budget_s: f64,
    effect: &str,
    seed: u64,
) -> Result<MetricReport> {
    let psi = match method {
        Method::Supervised => {
            supervised_train(pairs_x, splits_y, operator, &cfg.supervised, seed)?.psi
        }
        Method::DiffusionEm => {
            let (coeff, variance) = clean_ar1_stats(splits_x)?;
            let prior = GaussianAnalyticPrior::ar1(coeff, variance, cfg.seg_len)?;
            run_em(splits_y, &prior, operator, &cfg.em, seed)?.psi
        }
        Method::Adversarial => run_adversarial(splits_x, splits_y, operator, &cfg.adv, seed)?.psi,
    };
    evaluate(
        &psi,
        operator,
        x_test,
        y_test,
        &cfg.metrics,
        method_meta(method, operator, budget_s, effect, seed),
    )
}

fn push_report(rows: &mut Vec<SweepRow>, report: &MetricReport) {
    for (metric, value) in [
        ("l1_mss", report.mean_l1_mss),
        ("l1_log_mss", report.mean_l1_log_mss),
        ("emb_dist", report.mean_emb_dist),
    ] {
        rows.push(SweepRow {
            method: report.meta.method.clone(),
            operator: report.meta.operator.clone(),
            budget_s: report.meta.budget_s,
            effect: report.meta.effect.clone(),
            seed: report.meta.seed,
            metric: metric.into(),
            value,
        });
    }
}

/// Full grid: effects x budgets x seeds x methods. Corpora and splits are
/// regenerated per (effect, budget, seed) so cells are independent.
pub fn budget_sweep(operator: &dyn OperatorModel, cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let mut table = SweepTable::default();
    for effect in &cfg.effects {
        for &budget in &cfg.budgets_s {
            let plan = SplitPlan { y_seconds: budget, ..cfg.plan };
            let needed = plan.segments(plan.x_seconds)?
                + plan.segments(plan.y_seconds)?
                + plan.segments(plan.test_seconds)?;
            for &seed in &cfg.seeds {
                let cell_prefix = format!("{}/{budget}s/seed{seed}", effect.label);
                let prepared = synth_corpus(
                    cfg.corpus,
                    needed,
                    cfg.seg_len,
                    cfg.sample_rate,
                    seed,
                )
                .and_then(|corpus| {
                    let (splits, audit) =
                        make_splits(&corpus, &plan, effect, seed ^ 0x9E37_79B9_7F4A_7C15)?;
                    let pairs_x: Vec<Signal> =
                        audit.y_source_ids.iter().map(|&i| corpus[i].clone()).collect();
                    Ok((splits, pairs_x))
                });
                let (splits, pairs_x) = match prepared {
                    Ok(v) => v,
                    Err(e) => {
                        table
                            .failures
                            .push(SweepFailure { cell: cell_prefix, error: e.to_string() });
                        continue;
                    }
                };
                for &method in &cfg.methods {
                    let cell = format!("{}/{}", method.name(), cell_prefix);
                    match run_cell(
                        method,
                        operator,
                        &splits.x,
                        &splits.y,
                        &pairs_x,
                        &splits.x_test,
                        &splits.y_test,
                        cfg,
                        budget,
                        &effect.label,
                        seed,
                    ) {
                        Ok(report) => push_report(&mut table.rows, &report),
                        Err(e) => {
                            table.failures.push(SweepFailure { cell, error: e.to_string() })
                        }
                    }
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_stats_recover_the_generator_coefficient() {
        let x = synth_corpus(CorpusKind::Ar1, 2, 16384, 8000.0, 5).unwrap();
        let (coeff, variance) = clean_ar1_stats(&x).unwrap();
        assert!((coeff - 0.9).abs() < 0.05, "coeff {coeff}");
        assert!(variance > 0.0);
    }

    #[test]
    fn cell_mean_averages_over_seeds_only() {
        let mut table = SweepTable::default();
        for (seed, value) in [(1u64, 0.2), (2, 0.4)] {
            table.rows.push(SweepRow {
                method: "supervised".into(),
                operator: "gain".into(),
                budget_s: 6.0,
                effect: "light".into(),
                seed,
                metric: "l1_mss".into(),
                value,
            });
        }
        table.rows.push(SweepRow {
            method: "supervised".into(),
            operator: "gain".into(),
            budget_s: 12.0,
            effect: "light".into(),
            seed: 1,
            metric: "l1_mss".into(),
            value: 9.0,
        });
        let m = table.cell_mean("supervised", 6.0, "light", "l1_mss").unwrap();
        assert!((m - 0.3).abs() < 1e-12);
        assert!(table.cell_mean("adversarial", 6.0, "light", "l1_mss").is_none());
    }

    #[test]
    fn mismatched_plan_and_segment_length_is_rejected() {
        let cfg = SweepConfig {
            corpus: CorpusKind::Ar1,
            sample_rate: 8000.0,
            seg_len: 512,
            plan: SplitPlan {
                x_seconds: 0.32,
                y_seconds: 0.192,
                test_seconds: 0.128,
                segment_seconds: 0.128,
            },
            budgets_s: vec![0.192],
            effects: vec![GroundTruthEffect::clean()],
            methods: vec![Method::Supervised],
            seeds: vec![1],
            em: EmConfig::default(),
            adv: AdvConfig::default(),
            supervised: SupervisedConfig::default(),
            metrics: MetricsCfg::default(),
        };
        assert!(cfg.validate().is_err());
    }
}
