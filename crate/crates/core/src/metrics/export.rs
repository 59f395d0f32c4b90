//! Fixed-layout metrics CSV, JSON-lines run export and SVG charts.
//!
//! CSV columns: `iter, method, seed, loss_seg, loss_weight, loss_advG,
//! loss_advD, miou, iou_class_0..C-1, ccd_class_0..C-1, dstat_src,
//! dstat_tgt`. One row per iteration that has losses or an evaluation;
//! empty cells mean "not measured". Floats use the shortest representation
//! that parses back to the same value.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::svg::{BarPlot, LinePlot, Series};
use crate::error::{Error, Result};
use crate::trainer::{Method, RunRecord, SweepAxis, SweepRow};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub method: Method,
    pub seed: u64,
    pub loss_seg: Option<f64>,
    pub loss_weight: Option<f64>,
    pub loss_adv_g: Option<f64>,
    pub loss_adv_d: Option<f64>,
    pub miou: Option<f64>,
    pub iou: Vec<Option<f64>>,
    pub ccd: Vec<Option<f64>>,
    pub dstat_src: Option<f64>,
    pub dstat_tgt: Option<f64>,
}

impl MetricsRow {
    fn empty(iter: usize, method: Method, seed: u64, c: usize) -> Self {
        Self {
            iter,
            method,
            seed,
            loss_seg: None,
            loss_weight: None,
            loss_adv_g: None,
            loss_adv_d: None,
            miou: None,
            iou: vec![None; c],
            ccd: vec![None; c],
            dstat_src: None,
            dstat_tgt: None,
        }
    }
}

pub fn csv_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iter", "method", "seed", "loss_seg", "loss_weight", "loss_advG", "loss_advD", "miou"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..num_classes).map(|k| format!("iou_class_{k}")));
    h.extend((0..num_classes).map(|k| format!("ccd_class_{k}")));
    h.push("dstat_src".into());
    h.push("dstat_tgt".into());
    h
}

/// Rows of a run, ordered by iteration.
pub fn metrics_rows(run: &RunRecord) -> Vec<MetricsRow> {
    let c = run.config.model.num_classes;
    let (method, seed) = (run.config.method, run.config.seed);
    let mut rows: BTreeMap<usize, MetricsRow> = BTreeMap::new();
    for it in run.iterations() {
        let r = rows
            .entry(it.iteration)
            .or_insert_with(|| MetricsRow::empty(it.iteration, method, seed, c));
        r.loss_seg = Some(it.losses.seg);
        r.loss_weight = Some(it.losses.weight_disc);
        r.loss_adv_g = Some(it.losses.adv_g);
        r.loss_adv_d = Some(it.losses.adv_d);
        r.dstat_src = it.d_source.map(|d| d.abs_dev);
        r.dstat_tgt = it.d_target.map(|d| d.abs_dev);
    }
    for ev in run.evals() {
        let r = rows
            .entry(ev.iteration)
            .or_insert_with(|| MetricsRow::empty(ev.iteration, method, seed, c));
        r.miou = ev.miou;
        r.iou = pad(&ev.iou, c);
        r.ccd = pad(&ev.ccd, c);
    }
    rows.into_values().collect()
}

fn pad(v: &[Option<f64>], c: usize) -> Vec<Option<f64>> {
    (0..c).map(|k| v.get(k).copied().flatten()).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows_csv(rows: &[MetricsRow], num_classes: usize, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(num_classes))?;
    for r in rows {
        let mut rec = vec![
            r.iter.to_string(),
            r.method.name().to_string(),
            r.seed.to_string(),
            cell(r.loss_seg),
            cell(r.loss_weight),
            cell(r.loss_adv_g),
            cell(r.loss_adv_d),
            cell(r.miou),
        ];
        rec.extend(pad(&r.iou, num_classes).into_iter().map(cell));
        rec.extend(pad(&r.ccd, num_classes).into_iter().map(cell));
        rec.push(cell(r.dstat_src));
        rec.push(cell(r.dstat_tgt));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(run: &RunRecord, out: impl Write) -> Result<()> {
    write_rows_csv(&metrics_rows(run), run.config.model.num_classes, out)
}

pub fn metrics_csv_string(run: &RunRecord) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(run, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

/// Parses a metrics CSV produced by [`write_metrics_csv`]. Returns the
/// number of classes and the rows.
pub fn read_metrics_csv(input: impl Read) -> Result<(usize, Vec<MetricsRow>)> {
    let bad = |msg: String| Error::format("metrics csv", msg);
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let c = header.iter().filter(|h| h.starts_with("iou_class_")).count();
    if header != csv_header(c) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let num = |s: &str, col: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        let v: f64 = s.parse().map_err(|_| bad(format!("column {col}: `{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(bad(format!("column {col}: non-finite value")));
        }
        Ok(Some(v))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(bad(format!("row has {} fields, header has {}", rec.len(), header.len())));
        }
        let f = |i: usize| -> Result<Option<f64>> { num(&rec[i], &header[i]) };
        rows.push(MetricsRow {
            iter: rec[0].parse().map_err(|_| bad(format!("bad iter `{}`", &rec[0])))?,
            method: rec[1].parse().map_err(|e: Error| bad(e.to_string()))?,
            seed: rec[2].parse().map_err(|_| bad(format!("bad seed `{}`", &rec[2])))?,
            loss_seg: f(3)?,
            loss_weight: f(4)?,
            loss_adv_g: f(5)?,
            loss_adv_d: f(6)?,
            miou: f(7)?,
            iou: (0..c).map(|k| f(8 + k)).collect::<Result<_>>()?,
            ccd: (0..c).map(|k| f(8 + c + k)).collect::<Result<_>>()?,
            dstat_src: f(8 + 2 * c)?,
            dstat_tgt: f(9 + 2 * c)?,
        });
    }
    Ok((c, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportKind::Csv),
            "json" => Ok(ExportKind::Json),
            "svg" | "svg-plot" => Ok(ExportKind::Svg),
            _ => Err(Error::invalid("export", format!("unknown kind `{s}`"))),
        }
    }
}

/// Writes the run to `path` as metrics CSV, JSON lines, or a loss-curve SVG.
pub fn export(run: &RunRecord, kind: ExportKind, path: &Path) -> Result<()> {
    let bytes = match kind {
        ExportKind::Csv => metrics_csv_string(run),
        ExportKind::Json => run.to_jsonl(),
        ExportKind::Svg => loss_plot(run).to_svg(),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn loss_plot(run: &RunRecord) -> LinePlot {
    let series = |name: &str, f: fn(&crate::losses::LossBundle) -> f64| Series {
        name: name.to_string(),
        points: run.iterations().map(|it| (it.iteration as f64, f(&it.losses))).collect(),
    };
    LinePlot {
        title: format!("Losses ({}, seed {})", run.config.method, run.config.seed),
        x_label: "iteration".into(),
        y_label: "loss".into(),
        series: vec![
            series("seg", |l| l.seg),
            series("weight", |l| l.weight_disc),
            series("adv G", |l| l.adv_g),
            series("adv D", |l| l.adv_d),
        ],
    }
}

fn methods_in(runs: &[RunRecord]) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| runs.iter().any(|r| r.config.method == *m))
        .collect()
}

/// Mean of the present values, or None.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Normalized CCD over training: one series per method per requested class,
/// averaged over the runs of that method.
pub fn ccd_curve_plot(runs: &[RunRecord], classes: &[usize]) -> LinePlot {
    let mut series = Vec::new();
    for m in methods_in(runs) {
        let of_method: Vec<&RunRecord> = runs.iter().filter(|r| r.config.method == m).collect();
        for &k in classes {
            let mut by_iter: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
            for r in &of_method {
                for e in r.evals() {
                    by_iter.entry(e.iteration).or_default().push(e.ccd.get(k).copied().flatten());
                }
            }
            let points = by_iter
                .into_iter()
                .filter_map(|(it, v)| Some((it as f64, mean(v.into_iter())?)))
                .collect();
            series.push(Series {
                name: format!("{m} class {k}"),
                points,
            });
        }
    }
    LinePlot {
        title: "Normalized cluster center distance".into(),
        x_label: "iteration".into(),
        y_label: "CCD / CCD at iteration 0".into(),
        series,
    }
}

/// Final normalized CCD per class, one bar per method.
pub fn ccd_bar_plot(runs: &[RunRecord], classes: &[usize]) -> BarPlot {
    let series = methods_in(runs)
        .into_iter()
        .map(|m| {
            let finals: Vec<_> = runs
                .iter()
                .filter(|r| r.config.method == m)
                .filter_map(|r| r.final_eval())
                .collect();
            let values = classes
                .iter()
                .map(|&k| mean(finals.iter().map(|e| e.ccd.get(k).copied().flatten())))
                .collect();
            (m.to_string(), values)
        })
        .collect();
    BarPlot {
        title: "Final normalized CCD per class".into(),
        x_label: "class".into(),
        y_label: "CCD / CCD at iteration 0".into(),
        categories: classes.iter().map(|k| format!("class {k}")).collect(),
        series,
    }
}

/// Final mIoU per sweep point, grouped by swept parameter value.
pub fn sweep_bar_plot(rows: &[SweepRow]) -> BarPlot {
    let categories: Vec<String> = rows
        .iter()
        .map(|r| match r.point.axis {
            SweepAxis::Epsilon => format!("eps={}", r.point.epsilon),
            SweepAxis::LambdaLocal => format!("lambda={}", r.point.lambda_local),
        })
        .collect();
    BarPlot {
        title: "Parameter sweep".into(),
        x_label: "grid point".into(),
        y_label: "final target mIoU".into(),
        categories,
        series: vec![("mIoU".into(), rows.iter().map(|r| r.final_miou).collect())],
    }
}
