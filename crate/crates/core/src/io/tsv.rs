use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::graph::{Label, VariantRecord};

const REQUIRED: [&str; 7] = ["variant_id", "chrom", "pos", "ref", "alt", "gene_id", "label"];

/// Parsed variant table: records in file order plus the `feat_*` column names
/// in header order.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantTable {
    pub feature_names: Vec<String>,
    pub records: Vec<VariantRecord>,
}

fn lines<'a, R: BufRead + 'a>(reader: R, origin: &'a str) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader.lines().enumerate().map(move |(i, line)| {
        line.map(|l| (i + 1, l.trim_end_matches('\r').to_string()))
            .map_err(|e| Error::io(origin, e))
    })
}

fn row_error(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Row {
        path: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_variant_tsv(reader: impl BufRead, origin: &str) -> Result<VariantTable> {
    let schema = |msg: String| Error::Schema {
        path: origin.to_string(),
        msg,
    };
    let mut rows = lines(reader, origin);
    let header = match rows.next() {
        Some(h) => h?.1,
        None => return Err(schema("missing header row".into())),
    };
    let columns: Vec<&str> = header.split('\t').collect();
    let position = |name: &str| columns.iter().position(|c| *c == name);
    let mut required = [0usize; 7];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = position(name).ok_or_else(|| schema(format!("missing required column {name:?}")))?;
    }
    let [id_col, chrom_col, pos_col, ref_col, alt_col, gene_col, label_col] = required;
    let feature_cols: Vec<usize> = (0..columns.len()).filter(|&i| columns[i].starts_with("feat_")).collect();
    if feature_cols.is_empty() {
        return Err(schema("no feature columns (prefix \"feat_\")".into()));
    }
    let feature_names = feature_cols.iter().map(|&i| columns[i].to_string()).collect();

    let mut records = Vec::new();
    for row in rows {
        let (line, text) = row?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(schema(format!(
                "line {line} has {} fields, header has {}",
                fields.len(),
                columns.len()
            )));
        }
        let pos: u64 = fields[pos_col]
            .parse()
            .map_err(|_| row_error(origin, line, format!("pos {:?} is not a positive integer", fields[pos_col])))?;
        if pos == 0 {
            return Err(row_error(origin, line, "pos is 1-based and cannot be 0"));
        }
        let features = feature_cols
            .iter()
            .map(|&c| match fields[c].parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(row_error(origin, line, format!("{} = {:?} is not a finite number", columns[c], fields[c]))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = match fields[label_col] {
            "1" => Label::Pathogenic,
            "0" => Label::Benign,
            "NA" => Label::Unlabeled,
            other => return Err(row_error(origin, line, format!("label {other:?} is not 0, 1 or NA"))),
        };
        let text_field = |c: usize, name: &str| {
            if fields[c].is_empty() {
                Err(row_error(origin, line, format!("empty {name}")))
            } else {
                Ok(fields[c].to_string())
            }
        };
        records.push(VariantRecord {
            variant_id: text_field(id_col, "variant_id")?,
            chrom: text_field(chrom_col, "chrom")?,
            pos,
            ref_allele: text_field(ref_col, "ref")?,
            alt_allele: text_field(alt_col, "alt")?,
            gene_id: text_field(gene_col, "gene_id")?,
            features,
            label,
        });
    }
    Ok(VariantTable { feature_names, records })
}

pub fn write_variant_tsv(mut out: impl Write, table: &VariantTable) -> std::io::Result<()> {
    write!(out, "variant_id\tchrom\tpos\tref\talt\tgene_id")?;
    for name in &table.feature_names {
        write!(out, "\t{name}")?;
    }
    writeln!(out, "\tlabel")?;
    for r in &table.records {
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.variant_id, r.chrom, r.pos, r.ref_allele, r.alt_allele, r.gene_id
        )?;
        for f in &r.features {
            write!(out, "\t{f}")?;
        }
        let label = match r.label {
            Label::Pathogenic => "1",
            Label::Benign => "0",
            Label::Unlabeled => "NA",
        };
        writeln!(out, "\t{label}")?;
    }
    Ok(())
}

/// Gene-gene edges in file order, with self-loops removed and counted.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneEdgeList {
    pub edges: Vec<(String, String, f64)>,
    pub self_loops_dropped: usize,
}

/// Two or three tab-separated columns: `gene_a`, `gene_b`, optional weight
/// (default 1.0). A leading header row starting with `gene_a` is skipped.
pub fn parse_gene_edges(reader: impl BufRead, origin: &str) -> Result<GeneEdgeList> {
    let mut list = GeneEdgeList {
        edges: Vec::new(),
        self_loops_dropped: 0,
    };
    for row in lines(reader, origin) {
        let (line, text) = row?;
        if text.trim().is_empty() || text.starts_with('#') || (line == 1 && text.starts_with("gene_a")) {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        let (a, b, weight) = match fields.as_slice() {
            [a, b] => (*a, *b, 1.0),
            [a, b, w] => {
                let w: f64 = w
                    .parse()
                    .map_err(|_| row_error(origin, line, format!("weight {w:?} is not a number")))?;
                (*a, *b, w)
            }
            _ => return Err(row_error(origin, line, format!("expected 2 or 3 fields, found {}", fields.len()))),
        };
        if a.is_empty() || b.is_empty() {
            return Err(row_error(origin, line, "empty gene id"));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(row_error(origin, line, format!("weight {weight} must be finite and non-negative")));
        }
        if a == b {
            list.self_loops_dropped += 1;
            continue;
        }
        list.edges.push((a.to_string(), b.to_string(), weight));
    }
    Ok(list)
}

pub fn write_gene_edges(mut out: impl Write, edges: &[(String, String, f64)]) -> std::io::Result<()> {
    writeln!(out, "gene_a\tgene_b\tweight")?;
    for (a, b, w) in edges {
        writeln!(out, "{a}\t{b}\t{w}")?;
    }
    Ok(())
}

/// One gene id per line; blank lines and `#` comments are skipped.
pub fn parse_gene_list(reader: impl BufRead, origin: &str) -> Result<Vec<String>> {
    let mut genes = Vec::new();
    for row in lines(reader, origin) {
        let (line, text) = row?;
        let id = text.trim();
        if id.is_empty() || id.starts_with('#') {
            continue;
        }
        if id.contains('\t') {
            return Err(row_error(origin, line, "gene list rows hold a single id"));
        }
        genes.push(id.to_string());
    }
    Ok(genes)
}

pub fn write_gene_list(mut out: impl Write, genes: &[String]) -> std::io::Result<()> {
    for g in genes {
        writeln!(out, "{g}")?;
    }
    Ok(())
}
