//! Trace CSV and JSON reports.
//!
//! A trace file starts with two comment lines carrying the config hash and
//! the seed, followed by a header and one row per tick.  Floats are written
//! in shortest round-trip form so a trace read back is bit-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use super::sim::{RunOutput, StepRecord};
use crate::error::{Error, Result};
use crate::plant::Source;
use crate::stability::LyapunovSample;

pub const TRACE_COLUMNS: [&str; 19] = [
    "tick",
    "px",
    "py",
    "heading",
    "speed",
    "slip",
    "accel",
    "source",
    "origin",
    "gamma_c",
    "gamma_e",
    "cost_cloud",
    "cost_edge",
    "cost_buffer",
    "cost_onboard",
    "v_n",
    "stage_cost",
    "residual",
    "obstacle_free",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn row(r: &StepRecord) -> [String; 19] {
    let s = &r.state;
    [
        r.tick.to_string(),
        s[0].to_string(),
        s[1].to_string(),
        s[2].to_string(),
        s[3].to_string(),
        r.input[0].to_string(),
        r.input[1].to_string(),
        r.source.as_str().to_owned(),
        r.origin.as_str().to_owned(),
        u8::from(r.gamma_cloud).to_string(),
        u8::from(r.gamma_edge).to_string(),
        opt(r.costs.cloud),
        opt(r.costs.edge),
        opt(r.costs.carryover),
        opt(r.costs.onboard),
        r.value.to_string(),
        r.stage_cost.to_string(),
        opt(r.residual),
        u8::from(r.obstacle_free).to_string(),
    ]
}

/// Writes `run` as CSV to any writer.
pub fn write_trace<W: Write>(mut w: W, run: &RunOutput) -> Result<()> {
    writeln!(w, "# config_hash={}", run.config_hash)?;
    writeln!(w, "# seed={}", run.seed)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for r in &run.trace {
        csv.write_record(row(r)).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, run: &RunOutput) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_trace(std::io::BufWriter::new(f), run)
}

/// The parts of a saved trace needed to re-run the stability check.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedTrace {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub sources: Vec<Source>,
    pub samples: Vec<LyapunovSample>,
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, line: usize) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| Error::Io(format!("line {line}: missing column {}", TRACE_COLUMNS[idx])))
}

fn num(s: &str, line: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Io(format!("line {line}: bad number {s:?}")))
}

pub fn read_trace<R: BufRead>(mut r: R) -> Result<SavedTrace> {
    let mut config_hash = None;
    let mut seed = None;
    let header = loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Io("trace has no header".into()));
        }
        match line.trim_end().strip_prefix("# ") {
            Some(meta) => {
                if let Some(h) = meta.strip_prefix("config_hash=") {
                    config_hash = Some(h.to_owned());
                } else if let Some(s) = meta.strip_prefix("seed=") {
                    seed = s.parse().ok();
                }
            }
            None => break line,
        }
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols != TRACE_COLUMNS {
        return Err(Error::Io(format!("unexpected trace header: {}", header.trim_end())));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut sources = Vec::new();
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let src = field(&rec, 7, line)?;
        sources.push(Source::parse(src).ok_or_else(|| Error::Io(format!("line {line}: bad source {src:?}")))?);
        samples.push(LyapunovSample {
            value: num(field(&rec, 15, line)?, line)?,
            stage_cost: num(field(&rec, 16, line)?, line)?,
            obstacle_free: field(&rec, 18, line)? == "1",
        });
    }
    Ok(SavedTrace {
        config_hash,
        seed,
        sources,
        samples,
    })
}

pub fn read_trace_file(path: &Path) -> Result<SavedTrace> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trace(BufReader::new(f))
}

/// Pretty JSON, terminated by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
