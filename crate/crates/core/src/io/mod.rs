//! File formats: variant and edge tables, configuration, checkpoints,
//! predictions, epoch reports and attention exports.

mod attention;
mod checkpoint;
mod records;
mod tsv;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

pub use attention::{export_attention, AttentionRecord, Neighbor, EXACT_RECOMPUTE_LIMIT};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use records::{read_jsonl, read_predictions, write_jsonl, write_predictions, write_reports, Prediction};
pub use tsv::{
    parse_gene_edges, parse_gene_list, parse_variant_tsv, write_gene_edges, write_gene_list, write_variant_tsv,
    GeneEdgeList, VariantTable,
};

use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn read_variant_tsv(path: &Path) -> Result<VariantTable> {
    parse_variant_tsv(open(path)?, &path.display().to_string())
}

pub fn read_gene_edges(path: &Path) -> Result<GeneEdgeList> {
    parse_gene_edges(open(path)?, &path.display().to_string())
}

pub fn read_gene_list(path: &Path) -> Result<Vec<String>> {
    parse_gene_list(open(path)?, &path.display().to_string())
}

/// Reads a JSON document such as a training or synthesis configuration.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Creates `path` and hands a buffered writer to `body`, flushing afterwards.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}
