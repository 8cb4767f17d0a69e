use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Label;
use crate::train::EpochReport;

/// One line of prediction output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub variant_id: String,
    pub score: f64,
    /// Input label echoed back; `None` for unlabeled variants.
    pub label: Option<u8>,
}

impl Prediction {
    pub fn new(variant_id: impl Into<String>, score: f64, label: Label) -> Self {
        Self {
            variant_id: variant_id.into(),
            score,
            label: label.value().map(|v| v as u8),
        }
    }
}

pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead, origin: &str) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Row {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(items)
}

pub fn write_predictions(out: impl Write, predictions: &[Prediction]) -> Result<()> {
    write_jsonl(out, predictions)
}

pub fn read_predictions(reader: impl BufRead, origin: &str) -> Result<Vec<Prediction>> {
    let items: Vec<Prediction> = read_jsonl(reader, origin)?;
    for (i, p) in items.iter().enumerate() {
        if matches!(p.label, Some(l) if l > 1) {
            return Err(Error::Row {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("label {:?} is not 0 or 1", p.label),
            });
        }
    }
    Ok(items)
}

pub fn write_reports(out: impl Write, reports: &[EpochReport]) -> Result<()> {
    write_jsonl(out, reports)
}
