//! Text, JSON and CSV renderings of protocol results.

use std::fmt::Write as _;

use serde::Serialize;
use stt_core::harness::{sweep_records, MetricReport, RunConfig, SweepRow};
use stt_core::strategy::{millions, Breakdown, Strategy};

/// Everything written to `report.json`.
#[derive(Debug, Serialize)]
pub struct AdaptReport<'a> {
    pub strategy: &'a Strategy,
    pub config: &'a RunConfig,
    pub seed_offset: i64,
    pub report: &'a MetricReport,
}

fn metric_label(r: &MetricReport) -> &'static str {
    match r.metric {
        stt_core::harness::Metric::Accuracy => "acc",
        stt_core::harness::Metric::F1 => "F1",
    }
}

/// Aligned per-seed table followed by the `mean±std` summary row.
pub fn adapt_text(r: &MetricReport) -> String {
    let mut out = String::new();
    let header = format!("{} ({})", r.task, metric_label(r));
    let width = header.len().max(10);
    writeln!(out, "{:<10}  {:>4}  {:>4}  {:>w$}", "seed", "K", "M", header, w = width).unwrap();
    for s in &r.seeds {
        let value = match (s.metric, &s.error) {
            (Some(v), _) => format!("{:.1}", v * 100.0),
            (None, Some(e)) => format!("failed: {e}"),
            (None, None) => "failed".to_string(),
        };
        writeln!(
            out,
            "{:<10}  {:>4}  {:>4}  {:>w$}",
            s.seed,
            r.k,
            r.prompt_length,
            value,
            w = width
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{:<10}  {:>w$}", "Method", header, w = width).unwrap();
    writeln!(out, "{:<10}  {:>w$}", r.strategy, r.display, w = width).unwrap();
    out
}

/// Long-format CSV: `strategy,K_or_M,seed,metric`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "K_or_M", "seed", "metric"])?;
    for (strategy, x, seed, metric) in sweep_records(rows) {
        w.write_record([strategy, x.to_string(), seed.to_string(), format!("{metric:.6}")])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One aligned row per sweep point: strategy, swept value, mean, std.
pub fn sweep_summary(rows: &[SweepRow], x_name: &str) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<10}  {:>6}  {:>8}  {:>8}  {:>12}",
        "strategy", x_name, "mean", "std", "mean±std"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<10}  {:>6}  {:>8.4}  {:>8.4}  {:>12}",
            r.strategy, r.x, r.report.mean, r.report.std, r.report.display
        )
        .unwrap();
    }
    out
}

/// Published trainable-parameter figures at d=1024, L=24, M=25: embedding,
/// transformer, head and total, as printed.
pub fn published_counts(strategy: &str) -> Option<[&'static str; 4]> {
    match strategy {
        "prompt" => Some(["0.026M", "0M", "1.052M", "1.08M"]),
        "prefix" => Some(["0.026M", "20.752M", "1.052M", "21.83M"]),
        "stt" => Some(["0.026M", "0M", "1.054M", "1.08M"]),
        _ => None,
    }
}

pub fn count_text(strategy: &str, b: &Breakdown, compare: bool) -> String {
    let mut out = String::new();
    let rows = [
        ("embedding layers", b.embedding_layers),
        ("transformer layers", b.transformer_layers),
        ("head layers", b.head_layers),
        ("total", b.total),
    ];
    let published = if compare { published_counts(strategy) } else { None };
    match published {
        Some(_) => writeln!(
            out,
            "{:<20}  {:>12}  {:>10}  {:>10}",
            "bucket", "trainable", "millions", "published"
        )
        .unwrap(),
        None => writeln!(out, "{:<20}  {:>12}  {:>10}", "bucket", "trainable", "millions").unwrap(),
    }
    for (i, (name, n)) in rows.iter().enumerate() {
        match published {
            Some(p) => {
                let reference = p.get(i).copied().unwrap_or("");
                writeln!(out, "{:<20}  {:>12}  {:>10}  {:>10}", name, n, millions(*n), reference).unwrap()
            }
            None => writeln!(out, "{:<20}  {:>12}  {:>10}", name, n, millions(*n)).unwrap(),
        }
    }
    if compare && strategy == "prefix" {
        writeln!(
            out,
            "DISCREPANCY: prefixes are counted directly as 2*L*M*d = {} ({}) with no embedding term; the \
             published 0.026M embedding and 20.752M transformer figures come from an unstated \
             parameterization and are not reproduced",
            b.transformer_layers,
            millions(b.transformer_layers)
        )
        .unwrap();
    }
    out
}
