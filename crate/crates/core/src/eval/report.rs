use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::aggregate_seeds;
use super::metrics::{FoldMetrics, METRIC_NAMES};
use crate::error::{Error, Result};

/// Test cohorts below this many samples fall in the `small` bucket.
pub const SMALL_COHORT: usize = 50;

const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// Baseline method or ablation configuration; `None` for a single model.
    pub method: Option<String>,
    pub fold_id: usize,
    pub group_value: String,
    pub seed: u64,
    pub n_test: usize,
    pub metrics: FoldMetrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub results: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Option<String>,
    pub bucket: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Number of seeds that contributed a value.
    pub n: usize,
}

fn metric_value(m: &FoldMetrics, k: usize) -> Option<f64> {
    m.values()[k]
}

impl MetricsReport {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn has_methods(&self) -> bool {
        self.results.iter().any(|r| r.method.is_some())
    }

    /// Distinct methods in order of first appearance.
    pub fn methods(&self) -> Vec<Option<String>> {
        let mut out: Vec<Option<String>> = Vec::new();
        for r in &self.results {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Results for one method.
    pub fn for_method(&self, method: Option<&str>) -> Vec<&FoldResult> {
        self.results.iter().filter(|r| r.method.as_deref() == method).collect()
    }

    /// Mean over seeds of the per-seed fold-averaged metric for the `all`
    /// bucket; `None` when no fold produced a value.
    pub fn mean_metric(&self, method: Option<&str>, metric: &str) -> Option<f64> {
        self.aggregate(false)
            .into_iter()
            .find(|r| r.method.as_deref() == method && r.bucket == "all" && r.metric == metric)
            .and_then(|r| r.mean)
    }

    /// Per-seed values of one metric for one bucket: each seed's folds are
    /// averaged (by test size when `weighted`), skipping NA folds.
    pub fn seed_values(rows: &[&FoldResult], metric: usize, weighted: bool) -> Vec<f64> {
        let mut by_seed: BTreeMap<u64, Vec<&FoldResult>> = BTreeMap::new();
        for r in rows {
            by_seed.entry(r.seed).or_default().push(r);
        }
        let mut out = Vec::new();
        for (seed, mut folds) in by_seed {
            folds.sort_by_key(|r| r.fold_id);
            let (mut num, mut den, mut na) = (0.0, 0.0, 0usize);
            for r in &folds {
                match metric_value(&r.metrics, metric) {
                    Some(v) => {
                        let w = if weighted { r.n_test as f64 } else { 1.0 };
                        num += w * v;
                        den += w;
                    }
                    None => na += 1,
                }
            }
            if na > 0 {
                log::warn!(
                    "{} fold(s) with undefined {} excluded for seed {seed}",
                    na,
                    METRIC_NAMES[metric]
                );
            }
            if den > 0.0 {
                out.push(num / den);
            }
        }
        out
    }

    /// Buckets `all`, `small`, `large` and `group=<value>` per method, each
    /// with every metric.
    pub fn aggregate(&self, weighted: bool) -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        for method in self.methods() {
            let results = self.for_method(method.as_deref());
            let mut buckets: Vec<(String, Vec<&FoldResult>)> = vec![
                ("all".into(), results.clone()),
                (
                    "small".into(),
                    results.iter().copied().filter(|r| r.n_test < SMALL_COHORT).collect(),
                ),
                (
                    "large".into(),
                    results.iter().copied().filter(|r| r.n_test >= SMALL_COHORT).collect(),
                ),
            ];
            let mut groups: Vec<(usize, &str)> = results.iter().map(|r| (r.fold_id, r.group_value.as_str())).collect();
            groups.sort_unstable();
            groups.dedup();
            for (fold_id, g) in groups {
                buckets.push((
                    format!("group={g}"),
                    results.iter().copied().filter(|r| r.fold_id == fold_id).collect(),
                ));
            }
            for (bucket, members) in buckets {
                if members.is_empty() {
                    continue;
                }
                for (k, metric) in METRIC_NAMES.iter().enumerate() {
                    let values = Self::seed_values(&members, k, weighted);
                    let agg = aggregate_seeds(&values);
                    rows.push(AggregateRow {
                        method: method.clone(),
                        bucket: bucket.clone(),
                        metric: metric.to_string(),
                        mean: agg.map(|a| a.mean),
                        ci_low: agg.map(|a| a.ci_low),
                        ci_high: agg.map(|a| a.ci_high),
                        n: values.len(),
                    });
                }
            }
        }
        rows
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Validation(format!("cannot parse {what} value `{s}`")))
}

pub fn write_perfold(report: &MetricsReport, w: impl std::io::Write) -> Result<()> {
    let with_method = report.has_methods();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["fold_id", "group_value", "seed", "metric", "value"];
    if with_method {
        header.insert(0, "method");
    }
    out.write_record(&header)?;
    for r in &report.results {
        let mut emit = |metric: &str, value: String| -> Result<()> {
            let mut row = vec![r.fold_id.to_string(), r.group_value.clone(), r.seed.to_string(), metric.to_string(), value];
            if with_method {
                row.insert(0, r.method.clone().unwrap_or_default());
            }
            out.write_record(&row)?;
            Ok(())
        };
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            emit(name, opt(metric_value(&r.metrics, k)))?;
        }
        emit("n_test", r.n_test.to_string())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregate(rows: &[AggregateRow], w: impl std::io::Write) -> Result<()> {
    let with_method = rows.iter().any(|r| r.method.is_some());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["bucket", "metric", "mean", "ci_low", "ci_high", "n"];
    if with_method {
        header.insert(0, "method");
    }
    out.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.bucket.clone(),
            r.metric.clone(),
            opt(r.mean),
            opt(r.ci_low),
            opt(r.ci_high),
            r.n.to_string(),
        ];
        if with_method {
            row.insert(0, r.method.clone().unwrap_or_default());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

type FoldKey = (Option<String>, usize, u64);

/// Rebuilds a report from an emitted per-fold CSV.
pub fn read_perfold(r: impl Read) -> Result<MetricsReport> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Validation(format!("per-fold CSV lacks column `{name}`")));
    let method_col = col("method");
    let (fc, gc, sc, mc, vc) = (need("fold_id")?, need("group_value")?, need("seed")?, need("metric")?, need("value")?);

    let mut order: Vec<FoldKey> = Vec::new();
    let mut cells: BTreeMap<FoldKey, (String, BTreeMap<String, Option<f64>>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let method = method_col.map(|c| rec[c].to_string());
        let fold_id: usize = rec[fc]
            .parse()
            .map_err(|_| Error::Validation(format!("bad fold_id `{}`", &rec[fc])))?;
        let seed: u64 = rec[sc]
            .parse()
            .map_err(|_| Error::Validation(format!("bad seed `{}`", &rec[sc])))?;
        let key = (method, fold_id, seed);
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        let entry = cells.entry(key).or_insert_with(|| (rec[gc].to_string(), BTreeMap::new()));
        entry.1.insert(rec[mc].to_string(), parse_opt(&rec[vc], &rec[mc])?);
    }

    let mut results = Vec::with_capacity(order.len());
    for key in order {
        let (group_value, values) = &cells[&key];
        let get = |name: &str| -> Result<Option<f64>> {
            values
                .get(name)
                .copied()
                .ok_or_else(|| Error::Validation(format!("fold {} seed {} lacks metric `{name}`", key.1, key.2)))
        };
        let req = |name: &str| -> Result<f64> {
            get(name)?.ok_or_else(|| Error::Validation(format!("metric `{name}` may not be NA")))
        };
        results.push(FoldResult {
            method: key.0.clone(),
            fold_id: key.1,
            group_value: group_value.clone(),
            seed: key.2,
            n_test: req("n_test")? as usize,
            metrics: FoldMetrics {
                accuracy: req("accuracy")?,
                roc_auc: get("roc_auc")?,
                f1: req("f1")?,
                precision: req("precision")?,
                recall: req("recall")?,
            },
        });
    }
    Ok(MetricsReport { results })
}

pub fn read_aggregate(r: impl Read) -> Result<Vec<AggregateRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let method_col = col("method");
    let cols: Vec<usize> = ["bucket", "metric", "mean", "ci_low", "ci_high", "n"]
        .iter()
        .map(|n| col(n).ok_or_else(|| Error::Validation(format!("aggregate CSV lacks column `{n}`"))))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(AggregateRow {
            method: method_col.map(|c| rec[c].to_string()),
            bucket: rec[cols[0]].to_string(),
            metric: rec[cols[1]].to_string(),
            mean: parse_opt(&rec[cols[2]], "mean")?,
            ci_low: parse_opt(&rec[cols[3]], "ci_low")?,
            ci_high: parse_opt(&rec[cols[4]], "ci_high")?,
            n: rec[cols[5]]
                .parse()
                .map_err(|_| Error::Validation(format!("bad n `{}`", &rec[cols[5]])))?,
        });
    }
    Ok(rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Dot-with-error-bar chart of one metric across every aggregate row.
pub fn render_svg(rows: &[AggregateRow], metric: &str) -> String {
    let items: Vec<&AggregateRow> = rows.iter().filter(|r| r.metric == metric).collect();
    let (left, top, plot_h, step) = (60.0, 30.0, 240.0, 48.0);
    let width = left + 20.0 + step * items.len().max(1) as f64;
    let height = top + plot_h + 120.0;
    let y = |v: f64| top + plot_h * (1.0 - v);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-size="13">{}</text>"#, xml_escape(metric));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            width - 10.0,
            left - 6.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    for (i, r) in items.iter().enumerate() {
        let x = left + step * (i as f64 + 0.5);
        let label = match &r.method {
            Some(m) => format!("{m} {}", r.bucket),
            None => r.bucket.clone(),
        };
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(45)">{}</text>"#,
            top + plot_h + 12.0,
            xml_escape(&label)
        );
        if let (Some(m), Some(lo), Some(hi)) = (r.mean, r.ci_low, r.ci_high) {
            let _ = writeln!(
                s,
                r##"<line x1="{x}" x2="{x}" y1="{}" y2="{}" stroke="#333"/><circle cx="{x}" cy="{}" r="4" fill="#1f77b4"/>"##,
                y(lo),
                y(hi),
                y(m)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `perfold.csv`, `aggregate.csv` and one `<metric>.svg` per metric
/// into `dir`, returning the paths written.
pub fn emit_report(report: &MetricsReport, dir: &Path, weighted: bool) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::Validation("refusing to emit an empty report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let perfold = dir.join("perfold.csv");
    write_perfold(report, std::fs::File::create(&perfold)?)?;
    written.push(perfold);
    let rows = report.aggregate(weighted);
    let aggregate = dir.join("aggregate.csv");
    write_aggregate(&rows, std::fs::File::create(&aggregate)?)?;
    written.push(aggregate);
    for metric in METRIC_NAMES {
        let p = dir.join(format!("{metric}.svg"));
        std::fs::write(&p, render_svg(&rows, metric))?;
        written.push(p);
    }
    Ok(written)
}
