use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::record::RunRecord;
use super::run::train;
use super::{Method, TrainConfig};
use crate::data::DatasetBundle;
use crate::error::Result;
use crate::metrics::d_convergence_stat;

/// Trailing share of iterations the discriminator statistic averages over.
pub const DSTAT_WINDOW: f64 = 0.1;
/// Rows whose statistic reaches this value on either domain are flagged.
pub const DSTAT_BAND: f64 = 0.2;

pub const PAPER_EPSILONS: [f64; 4] = [0.1, 0.2, 0.4, 0.8];
pub const PAPER_LAMBDA_LOCALS: [f64; 4] = [10.0, 20.0, 40.0, 80.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Epsilon,
    LambdaLocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub lambda_local: f64,
    pub epsilon: f64,
}

/// Epsilon varied at lambda_local = 40, then lambda_local varied at
/// epsilon = 0.4: eight rows, one of them repeated across the two sweeps.
pub fn paper_grid() -> Vec<SweepPoint> {
    let eps = PAPER_EPSILONS.iter().map(|&epsilon| SweepPoint {
        axis: SweepAxis::Epsilon,
        lambda_local: 40.0,
        epsilon,
    });
    let lam = PAPER_LAMBDA_LOCALS.iter().map(|&lambda_local| SweepPoint {
        axis: SweepAxis::LambdaLocal,
        lambda_local,
        epsilon: 0.4,
    });
    eps.chain(lam).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub final_miou: Option<f64>,
    pub dstat_source: Option<f64>,
    pub dstat_target: Option<f64>,
    /// The discriminator statistic left the convergence band.
    pub flagged: bool,
    pub error: Option<String>,
}

impl SweepPoint {
    /// The standalone config that reproduces this row.
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            method: Method::Clan,
            lambda_local: self.lambda_local,
            epsilon: self.epsilon,
            ..base.clone()
        }
    }

    fn same_params(&self, other: &SweepPoint) -> bool {
        self.lambda_local == other.lambda_local && self.epsilon == other.epsilon
    }
}

fn summarize(point: SweepPoint, run: Result<RunRecord>) -> SweepRow {
    let mut row = SweepRow {
        point,
        final_miou: None,
        dstat_source: None,
        dstat_target: None,
        flagged: false,
        error: None,
    };
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            row.error = Some(e.to_string());
            row.flagged = true;
            return row;
        }
    };
    row.final_miou = run.final_eval().and_then(|s| s.miou);
    match d_convergence_stat(&run, DSTAT_WINDOW) {
        Ok(d) => {
            row.dstat_source = Some(d.source);
            row.dstat_target = Some(d.target);
            row.flagged = d.source >= DSTAT_BAND || d.target >= DSTAT_BAND;
        }
        Err(e) => {
            row.error = Some(e.to_string());
            row.flagged = true;
        }
    }
    row
}

/// Trains one run per distinct grid point (up to `threads` at a time, each
/// single-threaded) and returns one row per grid entry, in grid order.
/// Failed runs become rows carrying the error.
pub fn run_sweep(base: &TrainConfig, data: &DatasetBundle, grid: &[SweepPoint], threads: usize) -> Vec<SweepRow> {
    run_sweep_with(base, data, grid, threads, |_, _| {})
}

/// [`run_sweep`] that also hands each finished record to `on_run`.
pub fn run_sweep_with(
    base: &TrainConfig,
    data: &DatasetBundle,
    grid: &[SweepPoint],
    threads: usize,
    on_run: impl Fn(&SweepPoint, &RunRecord) + Sync,
) -> Vec<SweepRow> {
    let mut unique: Vec<SweepPoint> = Vec::new();
    for p in grid {
        if !unique.iter().any(|u| u.same_params(p)) {
            unique.push(*p);
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; unique.len()]);
    let workers = threads.clamp(1, unique.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = unique.get(i) else { break };
                let run = train(&point.config(base), data).map(|o| o.record);
                if let Ok(r) = &run {
                    on_run(point, r);
                }
                let row = summarize(*point, run);
                results.lock().expect("sweep results lock")[i] = Some(row);
            });
        }
    });
    let results = results.into_inner().expect("sweep results lock");
    grid.iter()
        .map(|p| {
            let i = unique.iter().position(|u| u.same_params(p)).expect("grid point computed");
            let row = results[i].clone().expect("every cell finished");
            SweepRow { point: *p, ..row }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sweep",
        "lambda_local",
        "epsilon",
        "final_miou",
        "dstat_src",
        "dstat_tgt",
        "flagged",
        "error",
    ])?;
    for r in rows {
        let axis = match r.point.axis {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::LambdaLocal => "lambda_local",
        };
        w.write_record([
            axis.to_string(),
            r.point.lambda_local.to_string(),
            r.point.epsilon.to_string(),
            cell(r.final_miou),
            cell(r.dstat_source),
            cell(r.dstat_target),
            r.flagged.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
