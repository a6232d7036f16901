//! Comma-separated well files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use vfm_core::pipeline::{RawRecord, SplitLabel, SteadySample, WellDataset};

use crate::error::{AppError, Result};

pub const RAW_HEADER: [&str; 9] = [
    "timestamp", "p1_bar", "p2_bar", "T1_K", "T2_K", "choke_frac", "qg_sm3h", "qo_sm3h", "qw_sm3h",
];

pub const SAMPLE_HEADER: [&str; 16] = [
    "start", "end", "records", "p1_bar", "p2_bar", "T1_K", "T2_K", "choke_frac", "qg_sm3h", "qo_sm3h", "qw_sm3h",
    "w_g", "w_o", "w_g_sched", "w_o_sched", "split",
];

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::format(path, e)
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let found = rdr.headers().map_err(csv_err(path))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(AppError::format(
            path,
            format!("header must be exactly `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| AppError::format(path, format!("row {row}: bad `{name}` value {:?}", rec.get(i).unwrap_or(""))))
}

pub fn write_raw(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(RAW_HEADER).map_err(&err)?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.p1.to_string(),
            r.p2.to_string(),
            r.t1.to_string(),
            r.t2.to_string(),
            r.z.to_string(),
            r.q_g.to_string(),
            r.q_o.to_string(),
            r.q_w.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = reader(path, &RAW_HEADER)?;
    let mut out: Vec<RawRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = i + 2;
        let f = |j: usize| field::<f64>(path, row, &rec, j, RAW_HEADER[j]);
        let r = RawRecord {
            timestamp: field(path, row, &rec, 0, "timestamp")?,
            p1: f(1)?,
            p2: f(2)?,
            t1: f(3)?,
            t2: f(4)?,
            z: f(5)?,
            q_g: f(6)?,
            q_o: f(7)?,
            q_w: f(8)?,
        };
        if out.last().is_some_and(|prev| prev.timestamp >= r.timestamp) {
            return Err(AppError::format(path, format!("row {row}: timestamps must strictly increase")));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_samples(path: &Path, data: &WellDataset) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(SAMPLE_HEADER).map_err(&err)?;
    for (s, label) in data.samples.iter().zip(data.labels()) {
        let mut row: Vec<String> = vec![s.start.to_string(), s.end.to_string(), s.records.to_string()];
        row.extend(
            [s.p1, s.p2, s.t1, s.t2, s.z, s.q_g, s.q_o, s.q_w, s.w_g, s.w_o, s.w_g_sched, s.w_o_sched]
                .iter()
                .map(|v| v.to_string()),
        );
        row.push(label.tag().to_string());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_samples(path: &Path, well_id: &str) -> Result<WellDataset> {
    let mut rdr = reader(path, &SAMPLE_HEADER)?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = i + 2;
        let f = |j: usize| field::<f64>(path, row, &rec, j, SAMPLE_HEADER[j]);
        samples.push(SteadySample {
            start: field(path, row, &rec, 0, "start")?,
            end: field(path, row, &rec, 1, "end")?,
            records: field(path, row, &rec, 2, "records")?,
            p1: f(3)?,
            p2: f(4)?,
            t1: f(5)?,
            t2: f(6)?,
            z: f(7)?,
            q_g: f(8)?,
            q_o: f(9)?,
            q_w: f(10)?,
            w_g: f(11)?,
            w_o: f(12)?,
            w_g_sched: f(13)?,
            w_o_sched: f(14)?,
        });
        labels.push(match rec.get(15) {
            Some("fit") => SplitLabel::Fit,
            Some("validation") => SplitLabel::Validation,
            Some("test") => SplitLabel::Test,
            other => return Err(AppError::format(path, format!("row {row}: unknown split {other:?}"))),
        });
    }
    WellDataset::from_labels(well_id.to_string(), samples, &labels).map_err(|e| AppError::format(path, e))
}

/// Write `rows` under `header` with a plain `\n` terminator.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(header).map_err(&err)?;
    for r in rows {
        w.write_record(r).map_err(&err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| AppError::io(path, e))
}
