//! CSV forms of matrices, encounter score sets and the daily score log.
//!
//! A matrix is two files. The triple file has header `row_key,column_id,value`
//! with one line per active cell, `value` always `1` and `column_id` the
//! global column id. The row file has header
//! `row_key,encounter_id,date,day_of_stay,admit_month_year,label`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{ColumnInfo, FeatureMatrix, RowMeta};
use crate::ids::{EncounterId, MonthYear};
use crate::metrics::{EncounterScore, ScoreSet};

#[derive(Debug, Serialize, Deserialize)]
struct RowRecord {
    row_key: usize,
    encounter_id: u64,
    date: NaiveDate,
    day_of_stay: u32,
    admit_month_year: MonthYear,
    label: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct Triple {
    row_key: usize,
    column_id: u32,
    value: String,
}

/// Counts echoed after loading a matrix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub n_rows: usize,
    pub n_cols: usize,
    pub nnz: usize,
    /// Rows listed in the row file with no active cells.
    pub empty_rows: usize,
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::read(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn at(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::DataAt {
        file: path.to_path_buf(),
        line: line as usize,
        message: message.into(),
    }
}

/// Reads every record of a CSV file, attaching line numbers to errors.
fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| at(path, 1, e.to_string()))?.clone();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            at(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let item = record.deserialize(Some(&headers)).map_err(|e| at(path, line, e.to_string()))?;
        out.push((line, item));
    }
    Ok(out)
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_matrix(matrix: &FeatureMatrix, triples_path: &Path, rows_path: &Path) -> Result<()> {
    let mut rows = create(rows_path)?;
    let mut triples = create(triples_path)?;
    for (i, meta) in matrix.rows.iter().enumerate() {
        rows.serialize(RowRecord {
            row_key: i,
            encounter_id: meta.encounter_id.0,
            date: meta.date,
            day_of_stay: meta.day_of_stay,
            admit_month_year: meta.admit_month,
            label: u8::from(matrix.labels[&meta.encounter_id]),
        })?;
        for &c in matrix.row(i) {
            triples.serialize(Triple {
                row_key: i,
                column_id: matrix.columns[c as usize].id,
                value: "1".into(),
            })?;
        }
    }
    finish(rows, rows_path)?;
    finish(triples, triples_path)
}

/// Loads a matrix whose columns are `columns`, in that order.
pub fn load_matrix(triples_path: &Path, rows_path: &Path, columns: Vec<ColumnInfo>) -> Result<(FeatureMatrix, LoadReport)> {
    let position: HashMap<u32, u32> = columns.iter().enumerate().map(|(k, c)| (c.id, k as u32)).collect();
    let mut metas = Vec::new();
    let mut labels: BTreeMap<EncounterId, bool> = BTreeMap::new();
    for (line, r) in read_records::<RowRecord>(rows_path)? {
        if r.row_key != metas.len() {
            return Err(at(rows_path, line, format!("expected row_key {}, found {}", metas.len(), r.row_key)));
        }
        let label = match r.label {
            0 => false,
            1 => true,
            v => return Err(at(rows_path, line, format!("label must be 0 or 1, found {v}"))),
        };
        let e = EncounterId(r.encounter_id);
        if *labels.entry(e).or_insert(label) != label {
            return Err(at(rows_path, line, format!("encounter {e} has conflicting labels")));
        }
        metas.push(RowMeta {
            encounter_id: e,
            date: r.date,
            day_of_stay: r.day_of_stay,
            admit_month: r.admit_month_year,
        });
    }
    let mut active: Vec<Vec<u32>> = vec![Vec::new(); metas.len()];
    let mut nnz = 0;
    for (line, t) in read_records::<Triple>(triples_path)? {
        if t.value.trim() != "1" {
            return Err(at(triples_path, line, format!("value must be 1, found `{}`", t.value)));
        }
        let row = active
            .get_mut(t.row_key)
            .ok_or_else(|| at(triples_path, line, format!("row_key {} not in the row file", t.row_key)))?;
        let &c = position
            .get(&t.column_id)
            .ok_or_else(|| at(triples_path, line, format!("unknown column id {}", t.column_id)))?;
        row.push(c);
        nnz += 1;
    }
    let mut empty_rows = 0;
    for row in &mut active {
        if row.is_empty() {
            empty_rows += 1;
        }
        row.sort_unstable();
        let before = row.len();
        row.dedup();
        if row.len() != before {
            return Err(Error::Data(format!("{}: duplicate cell", triples_path.display())));
        }
    }
    if empty_rows > 0 {
        log::warn!("{}: {empty_rows} rows have no active cells", rows_path.display());
    }
    let n_cols = columns.len();
    let matrix = FeatureMatrix::from_rows(columns, metas.into_iter().zip(active).collect(), labels)?;
    let report = LoadReport {
        n_rows: matrix.n_rows(),
        n_cols,
        nnz,
        empty_rows,
    };
    log::info!(
        "loaded {}: {} rows, {} columns, {} active cells",
        triples_path.display(),
        report.n_rows,
        report.n_cols,
        report.nnz
    );
    Ok((matrix, report))
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRecord {
    encounter_id: u64,
    admit_month_year: MonthYear,
    score: f64,
    label: u8,
}

pub fn save_score_set(set: &ScoreSet, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for e in &set.entries {
        w.serialize(ScoreRecord {
            encounter_id: e.encounter_id.0,
            admit_month_year: e.admit_month,
            score: e.score,
            label: u8::from(e.label),
        })?;
    }
    finish(w, path)
}

pub fn load_score_set(path: &Path) -> Result<ScoreSet> {
    let mut entries = Vec::new();
    for (line, r) in read_records::<ScoreRecord>(path)? {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(at(path, line, format!("score {} outside [0, 1]", r.score)));
        }
        if r.label > 1 {
            return Err(at(path, line, format!("label must be 0 or 1, found {}", r.label)));
        }
        entries.push(EncounterScore {
            encounter_id: EncounterId(r.encounter_id),
            admit_month: r.admit_month_year,
            score: r.score,
            label: r.label == 1,
        });
    }
    Ok(ScoreSet { entries })
}

/// One line of the daily score log. `run_date` is the calendar day the
/// score covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyScore {
    pub run_date: NaiveDate,
    pub encounter_id: EncounterId,
    pub day_of_stay: u32,
    pub score: f64,
}

/// Appends one line per matrix row to the log at `path`, writing the header
/// only when the file is new. Returns the number of lines appended.
pub fn persist_daily_scores(matrix: &FeatureMatrix, daily: &[f64], path: &Path) -> Result<usize> {
    if daily.len() != matrix.n_rows() {
        return Err(Error::Data(format!("{} scores for {} rows", daily.len(), matrix.n_rows())));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let is_new = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(is_new).from_writer(BufWriter::new(file));
    for (meta, &score) in matrix.rows.iter().zip(daily) {
        w.serialize(DailyScore {
            run_date: meta.date,
            encounter_id: meta.encounter_id,
            day_of_stay: meta.day_of_stay,
            score,
        })?;
    }
    finish(w, path)?;
    Ok(daily.len())
}

pub fn read_daily_scores(path: &Path) -> Result<Vec<DailyScore>> {
    Ok(read_records(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Writes any serializable rows as a CSV table.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::DataAt {
        file: PathBuf::from(path),
        line: e.line(),
        message: e.to_string(),
    })
}
