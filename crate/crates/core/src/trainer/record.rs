use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::LossBundle;

/// Summary of discriminator outputs on one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DStat {
    pub mean: f64,
    /// Mean of `|D - 0.5|`.
    pub abs_dev: f64,
}

impl DStat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            abs_dev: values.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRecord {
    /// Number of completed updates, starting at 1.
    pub iteration: usize,
    pub losses: LossBundle,
    pub lr: f64,
    pub d_source: Option<DStat>,
    pub d_target: Option<DStat>,
    pub weight_min: Option<f64>,
    pub weight_max: Option<f64>,
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSnapshot {
    pub iteration: usize,
    pub miou: Option<f64>,
    pub iou: Vec<Option<f64>>,
    pub ccd_raw: Vec<Option<f64>>,
    /// Raw distance over the distance at iteration 0.
    pub ccd: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    Iteration(IterationRecord),
    Eval(EvalSnapshot),
}

/// Append-only log of a run. The first JSONL line is the header.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub dataset_hash: String,
    pub events: Vec<Event>,
    /// Filled in by callers that time the run; `train` leaves it empty so
    /// the record stays deterministic.
    pub wall_clock_secs: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Line {
    Header { config: Box<TrainConfig>, dataset_hash: String },
    Iteration(IterationRecord),
    Eval(EvalSnapshot),
    WallClock { secs: f64 },
}

impl RunRecord {
    pub fn new(config: TrainConfig, dataset_hash: String) -> Self {
        Self {
            config,
            dataset_hash,
            events: Vec::new(),
            wall_clock_secs: None,
        }
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn iterations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.events.iter().filter_map(|e| match e {
            Event::Iteration(it) => Some(it),
            Event::Eval(_) => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalSnapshot> {
        self.events.iter().filter_map(|e| match e {
            Event::Eval(s) => Some(s),
            Event::Iteration(_) => None,
        })
    }

    pub fn final_eval(&self) -> Option<&EvalSnapshot> {
        self.evals().last()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let header = Line::Header {
            config: Box::new(self.config.clone()),
            dataset_hash: self.dataset_hash.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        if let Some(secs) = self.wall_clock_secs {
            serde_json::to_writer(&mut out, &Line::WallClock { secs })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut record: Option<RunRecord> = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::format("run record", format!("line {}: {e}", n + 1)))?;
            match (parsed, record.as_mut()) {
                (Line::Header { config, dataset_hash }, None) => record = Some(RunRecord::new(*config, dataset_hash)),
                (Line::Header { .. }, Some(_)) => {
                    return Err(Error::format("run record", format!("line {}: second header", n + 1)))
                }
                (_, None) => return Err(Error::format("run record", "first line must be the header")),
                (Line::Iteration(it), Some(r)) => r.push(Event::Iteration(it)),
                (Line::Eval(s), Some(r)) => r.push(Event::Eval(s)),
                (Line::WallClock { secs }, Some(r)) => r.wall_clock_secs = Some(secs),
            }
        }
        record.ok_or_else(|| Error::format("run record", "empty input"))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }
}
