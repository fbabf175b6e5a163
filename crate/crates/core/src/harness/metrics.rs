use serde::Serialize;

use super::Metric;
use crate::error::{Error, Result};

/// Fraction of predictions equal to the gold class.
pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    check_lengths(predicted, gold)?;
    let correct = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// F1 of `positive` against the rest. Precision, recall and F1 with a zero
/// denominator are taken as 0.
pub fn f1(predicted: &[usize], gold: &[usize], positive: usize) -> Result<f64> {
    check_lengths(predicted, gold)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn check_lengths(predicted: &[usize], gold: &[usize]) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Metric("empty split".into()));
    }
    if predicted.len() != gold.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// Scores predictions under `metric`; F1 treats class 0 as positive.
pub fn score(metric: Metric, predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(predicted, gold),
        Metric::F1 if n_classes != 2 => Err(Error::Metric(format!("f1 needs 2 classes, task has {n_classes}"))),
        Metric::F1 => f1(predicted, gold, 0),
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `mean±std` of fractional values on the percentage scale, one decimal.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", mean * 100.0, std * 100.0)
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let (mx, sx) = mean_std(&rx);
    let (my, sy) = mean_std(&ry);
    if sx == 0.0 || sy == 0.0 {
        return None;
    }
    let cov = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    Some(cov / (sx * sy))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Outcome of one seed of the protocol.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test metric, absent when the seed failed.
    pub metric: Option<f64>,
    pub dev_metric: Option<f64>,
    pub best_step: Option<usize>,
    pub error: Option<String>,
}

/// Per-seed results and their aggregate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: String,
    pub strategy: String,
    pub metric: Metric,
    pub k: usize,
    pub prompt_length: usize,
    pub seeds: Vec<SeedResult>,
    pub mean: f64,
    pub std: f64,
    /// `mean±std` on the percentage scale.
    pub display: String,
}

impl MetricReport {
    pub fn new(
        task: &str,
        strategy: &str,
        metric: Metric,
        k: usize,
        prompt_length: usize,
        seeds: Vec<SeedResult>,
    ) -> Self {
        let values: Vec<f64> = seeds.iter().filter_map(|s| s.metric).collect();
        let (mean, std) = mean_std(&values);
        MetricReport {
            task: task.to_string(),
            strategy: strategy.to_string(),
            metric,
            k,
            prompt_length,
            seeds,
            mean,
            std,
            display: format_mean_std(mean, std),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| s.metric).collect()
    }

    pub fn failed_seeds(&self) -> Vec<u64> {
        self.seeds
            .iter()
            .filter(|s| s.metric.is_none())
            .map(|s| s.seed)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let g = [0, 1, 1, 0];
        assert_eq!(accuracy(&g, &g).unwrap(), 1.0);
        assert_eq!(f1(&g, &g, 0).unwrap(), 1.0);
    }

    #[test]
    fn all_negative_predictions_score_zero() {
        assert_eq!(f1(&[1, 1, 1], &[0, 1, 0], 0).unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_f1() {
        // TP=2, FP=1, FN=1
        let pred = [0, 0, 0, 1, 1];
        let gold = [0, 0, 1, 0, 1];
        assert!((f1(&pred, &gold, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_needs_binary_task() {
        assert!(matches!(score(Metric::F1, &[0], &[0], 3), Err(Error::Metric(_))));
        assert!(score(Metric::Accuracy, &[], &[], 2).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let (m, s) = mean_std(&[0.6; 5]);
        assert_eq!(format_mean_std(m, s), "60.0±0.0");
        let (m, s) = mean_std(&[0.5, 0.6]);
        assert!((m - 0.55).abs() < 1e-15 && (s - 0.05).abs() < 1e-15);
        assert_eq!(format_mean_std(m, s), "55.0±5.0");
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.9, 0.5, 0.1]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]), None);
        let rho = spearman(&[1.0, 2.0, 5.0, 16.0, 64.0], &[0.6, 0.7, 0.7, 0.9, 0.9]).unwrap();
        assert!(rho > 0.9 && rho < 1.0, "{rho}");
    }

    #[test]
    fn report_skips_failed_seeds() {
        let ok = |seed, v| SeedResult {
            seed,
            metric: Some(v),
            dev_metric: None,
            best_step: None,
            error: None,
        };
        let failed = SeedResult {
            seed: 3,
            metric: None,
            dev_metric: None,
            best_step: None,
            error: Some("nan".into()),
        };
        let r = MetricReport::new(
            "t",
            "stt",
            Metric::Accuracy,
            1,
            25,
            vec![ok(1, 0.5), failed, ok(2, 0.6)],
        );
        assert_eq!(r.display, "55.0±5.0");
        assert_eq!(r.failed_seeds(), vec![3]);
    }

    proptest! {
        #[test]
        fn metrics_bounded(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..50)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = accuracy(&p, &g).unwrap();
            let f = f1(&p, &g, 0).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&f));
            if f == 1.0 {
                // perfect F1 means no false positives or negatives on class 0
                prop_assert!(p.iter().zip(&g).all(|(a, b)| (*a == 0) == (*b == 0)));
            }
        }
    }
}
