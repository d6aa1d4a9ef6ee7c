//! Metrics CSV: a `schema=asclmetrics.v1` line, a header row, then one row
//! per record. Missing values are empty fields.

use std::io::{BufRead, Write};

use crate::error::{Result, TrainError};

pub const SCHEMA_LINE: &str = "schema=asclmetrics.v1";

pub const COLUMNS: [&str; 14] = [
    "epoch",
    "split",
    "nat_acc",
    "rob_acc",
    "loss_at",
    "loss_scl",
    "loss_vat",
    "loss_total",
    "d_a_plus",
    "d_a_minus",
    "r_div",
    "mean_pos",
    "mean_neg",
    "wall_time_s",
];

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricsRow {
    pub epoch: usize,
    /// `train`, `test`, `abort`, or `test:<attack>:eps=<ε>` for final evaluation rows.
    pub split: String,
    pub nat_acc: Option<f64>,
    pub rob_acc: Option<f64>,
    pub loss_at: Option<f64>,
    pub loss_scl: Option<f64>,
    pub loss_vat: Option<f64>,
    pub loss_total: Option<f64>,
    pub d_a_plus: Option<f64>,
    pub d_a_minus: Option<f64>,
    pub r_div: Option<f64>,
    pub mean_pos: Option<f64>,
    pub mean_neg: Option<f64>,
    pub wall_time_s: f64,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.split.clone(),
            field(self.nat_acc),
            field(self.rob_acc),
            field(self.loss_at),
            field(self.loss_scl),
            field(self.loss_vat),
            field(self.loss_total),
            field(self.d_a_plus),
            field(self.d_a_minus),
            field(self.r_div),
            field(self.mean_pos),
            field(self.mean_neg),
            format!("{:.3}", self.wall_time_s),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != COLUMNS.len() {
            return Err(TrainError::Config(format!("metrics row has {} fields", rec.len())));
        }
        let opt = |k: usize| -> Result<Option<f64>> {
            let s = rec[k].trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|e| TrainError::Config(format!("column {}: {e}", COLUMNS[k])))
        };
        Ok(Self {
            epoch: rec[0]
                .parse()
                .map_err(|e| TrainError::Config(format!("column epoch: {e}")))?,
            split: rec[1].to_string(),
            nat_acc: opt(2)?,
            rob_acc: opt(3)?,
            loss_at: opt(4)?,
            loss_scl: opt(5)?,
            loss_vat: opt(6)?,
            loss_total: opt(7)?,
            d_a_plus: opt(8)?,
            d_a_minus: opt(9)?,
            r_div: opt(10)?,
            mean_pos: opt(11)?,
            mean_neg: opt(12)?,
            wall_time_s: opt(13)?.unwrap_or(0.0),
        })
    }
}

/// Streams rows to a writer, flushing after each one.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut w: W) -> Result<Self> {
        writeln!(w, "{SCHEMA_LINE}")?;
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(COLUMNS)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.to_record())?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut out = MetricsWriter::new(w)?;
    for r in rows {
        out.write(r)?;
    }
    Ok(())
}

pub fn read_metrics<R: BufRead>(mut r: R) -> Result<Vec<MetricsRow>> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(TrainError::Config(format!("expected `{SCHEMA_LINE}`, found `{}`", first.trim_end())));
    }
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(COLUMNS) {
        return Err(TrainError::Config("metrics header does not match the schema".into()));
    }
    rdr.records().map(|rec| MetricsRow::from_record(&rec?)).collect()
}

/// The CSV text with the timing column removed, for replay comparisons.
pub fn without_timing(text: &str) -> String {
    text.lines()
        .map(|l| match l.rfind(',') {
            Some(k) if l != SCHEMA_LINE => &l[..k],
            _ => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}
