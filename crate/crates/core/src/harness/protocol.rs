use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::data::Dataset;
use super::episode::sample_episode;
use super::metrics::{spearman, MetricReport, SeedResult};
use super::train::{encode_examples, evaluate, text_budget, train_episode};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::model::MlmModel;
use crate::strategy::{Strategy, StrategyKind};
use crate::template::Task;
use crate::vocab::Vocab;

/// Everything a protocol run reads; shared read-only across seeds.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    pub model: &'a MlmModel,
    pub task: &'a Task,
    pub vocab: &'a Vocab,
    pub dataset: &'a Dataset,
    /// Explicit test split; otherwise each episode tests on its remainder.
    pub test_set: Option<&'a Dataset>,
}

fn run_seed(exp: &Experiment, strategy: &Strategy, k: usize, cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    let episode = sample_episode(exp.dataset, exp.task, k, seed)?;
    let outcome = train_episode(exp.model, exp.task, exp.vocab, exp.dataset, &episode, strategy, cfg)?;
    let budget = text_budget(&outcome.model, strategy)?;
    let test = match exp.test_set {
        Some(ts) => {
            let all: Vec<usize> = (0..ts.len()).collect();
            encode_examples(ts, &all, exp.task, exp.vocab, budget)?
        }
        None => encode_examples(exp.dataset, &episode.test, exp.task, exp.vocab, budget)?,
    };
    let metric = evaluate(&outcome.model, &outcome.plan, &test, exp.task.metric)?;
    Ok(SeedResult {
        seed,
        metric: Some(metric),
        dev_metric: outcome.best_dev,
        best_step: Some(outcome.best_step),
        error: None,
    })
}

/// Samples, trains and tests one episode per seed, then aggregates. Seeds
/// run on up to `cfg.jobs` threads; results are ordered as `cfg.seeds`
/// regardless of completion order. A failed seed is reported and left out
/// of the aggregate; if every seed fails the first error is returned.
pub fn run_protocol(exp: &Experiment, strategy: &Strategy, k: usize, cfg: &RunConfig) -> Result<MetricReport> {
    cfg.validate()?;
    strategy.validate()?;
    if let Some(ts) = exp.test_set {
        ts.validate(exp.task)?;
    }
    let n = cfg.seeds.len();
    let slots: Vec<Mutex<Option<Result<SeedResult>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        let r = run_seed(exp, strategy, k, cfg, cfg.seeds[i]);
        *slots[i].lock().expect("slot lock") = Some(r);
    };
    let workers = cfg.jobs.min(n);
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut seeds = Vec::with_capacity(n);
    let mut first_error = None;
    for (slot, &seed) in slots.into_iter().zip(&cfg.seeds) {
        match slot.into_inner().expect("slot lock").expect("every seed ran") {
            Ok(r) => seeds.push(r),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                seeds.push(SeedResult {
                    seed,
                    metric: None,
                    dev_metric: None,
                    best_step: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if seeds.iter().all(|s| s.metric.is_none()) {
        return Err(first_error.expect("at least one seed"));
    }
    if let Some(e) = first_error {
        log::warn!("aggregating over the remaining seeds after a failure: {e}");
    }
    let m = if strategy.kind == StrategyKind::FineTune {
        0
    } else {
        strategy.prompt_length
    };
    Ok(MetricReport::new(
        &exp.task.name,
        strategy.kind.as_str(),
        exp.task.metric,
        k,
        m,
        seeds,
    ))
}

/// One protocol run of a sweep. `x` is the swept value (M or K).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: String,
    pub x: usize,
    pub report: MetricReport,
}

/// Runs the protocol once per prompt length.
pub fn sweep_prompt_length(
    exp: &Experiment,
    strategy: &Strategy,
    k: usize,
    lengths: &[usize],
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() {
        return Err(Error::Config("prompt-length grid is empty".into()));
    }
    if strategy.kind == StrategyKind::FineTune {
        return Err(Error::Config("finetune has no prompt length to sweep".into()));
    }
    lengths
        .iter()
        .map(|&m| {
            let s = Strategy {
                prompt_length: m,
                ..*strategy
            };
            Ok(SweepRow {
                strategy: s.kind.as_str().to_string(),
                x: m,
                report: run_protocol(exp, &s, k, cfg)?,
            })
        })
        .collect()
}

/// Runs the protocol for every strategy and K, strategy-major. Warns when
/// a strategy's mean at the largest K falls below its mean at the smallest.
pub fn sweep_k(exp: &Experiment, strategies: &[Strategy], ks: &[usize], cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    if ks.is_empty() || strategies.is_empty() {
        return Err(Error::Config("K grid and strategy list must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(strategies.len() * ks.len());
    for s in strategies {
        let start = rows.len();
        for &k in ks {
            rows.push(SweepRow {
                strategy: s.kind.as_str().to_string(),
                x: k,
                report: run_protocol(exp, s, k, cfg)?,
            });
        }
        let mine = &rows[start..];
        let lo = mine.iter().min_by_key(|r| r.x).expect("nonempty");
        let hi = mine.iter().max_by_key(|r| r.x).expect("nonempty");
        if hi.report.mean < lo.report.mean {
            log::warn!(
                "{}: mean at K={} ({:.3}) is below mean at K={} ({:.3})",
                s.kind,
                hi.x,
                hi.report.mean,
                lo.x,
                lo.report.mean
            );
        }
    }
    Ok(rows)
}

/// Spearman correlation between K and mean metric for one strategy's rows.
pub fn k_trend(rows: &[SweepRow], strategy: &str) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.strategy == strategy)
        .map(|r| (r.x as f64, r.report.mean))
        .unzip();
    spearman(&xs, &ys)
}

/// Long-format rows `strategy,K_or_M,seed,metric`; failed seeds are skipped.
pub fn sweep_records(rows: &[SweepRow]) -> Vec<(String, usize, u64, f64)> {
    rows.iter()
        .flat_map(|r| {
            r.report
                .seeds
                .iter()
                .filter_map(move |s| s.metric.map(|m| (r.strategy.clone(), r.x, s.seed, m)))
        })
        .collect()
}
