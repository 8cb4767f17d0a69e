//! Command-line driver.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench_attention, write_csv, BenchConfig};
use crate::diagnostics::{grad_check_suite, GRAD_TOLERANCE};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Label, VariantRecord};
use crate::io::{self, Checkpoint, Prediction, VariantTable};
use crate::layers::Mode;
use crate::metrics::{auroc, ScoredLabel};
use crate::synth::{generate, SynthConfig};
use crate::train::{train_with, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "vargraph", version, about = "Variant pathogenicity scoring on gene/variant graphs")]
pub struct Cli {
    /// Seed for every random choice; a fresh one is generated and printed when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Given,
    Learnt,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Given => Mode::Given,
            ModeArg::Learnt => Mode::Learnt,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score variants with a trained model.
    Predict(PredictArgs),
    /// Compute auROC of a predictions file.
    Eval(EvalArgs),
    /// Export top-k attention weights.
    Attention(AttentionArgs),
    /// Generate a synthetic dataset with planted gene modules.
    Synth(SynthArgs),
    /// Time random-feature attention against exact attention.
    BenchAttention(BenchArgs),
    /// Finite-difference gradient checks on the toy graph.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub variants: PathBuf,
    #[arg(long)]
    pub gene_edges: PathBuf,
    /// Gene vocabulary, one id per line. Defaults to the sorted genes seen in
    /// the variant and edge files.
    #[arg(long)]
    pub genes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// JSON training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch reports as line-delimited JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub variants: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Variant table whose labels replace those echoed in the predictions.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Extra variants to attach to the checkpoint's graph before export.
    #[arg(long)]
    pub variants: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = io::EXACT_RECOMPUTE_LIMIT)]
    pub exact_limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub genes: usize,
    #[arg(long, default_value_t = 4)]
    pub modules: usize,
    #[arg(long, default_value_t = 10.0)]
    pub variants_per_gene: f64,
    #[arg(long, default_value_t = 0.2)]
    pub edge_probability: f64,
    #[arg(long, default_value_t = 0.001)]
    pub cross_edge_probability: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.1)]
    pub flip_probability: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Gene counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 2000, 4000])]
    pub genes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 256)]
    pub features: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Largest gene count for which exact attention is also timed.
    #[arg(long, default_value_t = 4000)]
    pub exact_limit: usize,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value = "given")]
    pub mode: ModeArg,
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print one line `error[<class>]: <message>` to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            1
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Attention(a) => cmd_attention(a),
        Command::Synth(a) => cmd_synth(a, resolve_seed(cli.seed)),
        Command::BenchAttention(a) => cmd_bench(a, resolve_seed(cli.seed)),
        Command::GradCheck(a) => cmd_grad_check(a, resolve_seed(cli.seed)),
    }
}

fn load_graph(variants: &[VariantRecord], edges_path: &Path, genes_path: Option<&Path>) -> Result<HeteroGraph> {
    let edges = io::read_gene_edges(edges_path)?;
    if edges.self_loops_dropped > 0 {
        eprintln!(
            "warning: {}: dropped {} self-loop(s)",
            edges_path.display(),
            edges.self_loops_dropped
        );
    }
    let genes = match genes_path {
        Some(p) => io::read_gene_list(p)?,
        None => {
            let mut all: Vec<String> = variants
                .iter()
                .map(|v| v.gene_id.clone())
                .chain(edges.edges.iter().flat_map(|(a, b, _)| [a.clone(), b.clone()]))
                .collect();
            all.sort();
            all.dedup();
            all
        }
    };
    HeteroGraph::build(variants, &edges.edges, &genes)
}

fn cmd_train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let (mut config, config_has_seed) = match &a.config {
        Some(path) => {
            let raw: serde_json::Value = io::read_json(path)?;
            let has_seed = raw.get("seed").is_some();
            let config: TrainConfig = serde_json::from_value(raw).map_err(|e| Error::Schema {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            (config, has_seed)
        }
        None => (TrainConfig::default(), false),
    };
    if let Some(mode) = a.mode {
        config.mode = mode.into();
    }
    config.seed = match seed {
        Some(s) => s,
        None if config_has_seed => config.seed,
        None => resolve_seed(None),
    };
    config.validate()?;

    let table = io::read_variant_tsv(&a.variants)?;
    let graph = load_graph(&table.records, &a.gene_edges, a.genes.as_deref())?;
    let mut reports = Vec::new();
    let outcome = train_with(&graph, &config, |r| {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        eprintln!(
            "epoch {:>3}  train {:.6}  eval {}  auroc {}  lr {:.1e}",
            r.epoch,
            r.train_loss,
            fmt(r.eval_loss),
            fmt(r.eval_auroc),
            r.lr
        );
        reports.push(r.clone());
    })?;
    if let Some(path) = &a.report {
        io::write_file(path, |out| io::write_reports(out, &reports))?;
    }
    let checkpoint = Checkpoint {
        model: outcome.model,
        graph,
        feature_names: table.feature_names,
        train_config: Some(config),
    };
    checkpoint.save(&a.out)?;
    if let Some(last) = reports.last() {
        match last.eval_auroc {
            Some(auc) => println!("final eval auROC {auc:.6}"),
            None => println!("final train loss {:.6}", last.train_loss),
        }
    }
    Ok(())
}

/// Places `records` into the checkpoint graph: variants it already holds are
/// scored in place, the rest are attached. Returns the graph and, for each
/// record, its node position.
fn place_variants(checkpoint: &Checkpoint, table: &VariantTable) -> Result<(HeteroGraph, Vec<usize>)> {
    let base = &checkpoint.graph;
    if table.feature_names.len() != base.feature_dim() {
        return Err(Error::Schema {
            path: "variants".into(),
            msg: format!(
                "{} feature columns, model expects {}",
                table.feature_names.len(),
                base.feature_dim()
            ),
        });
    }
    let mut fresh = Vec::new();
    for r in &table.records {
        match base.variant_position(&r.variant_id) {
            Some(p) => {
                let known = &base.variants()[p];
                if known.gene_id != r.gene_id || known.features != r.features {
                    return Err(Error::Contract(format!(
                        "variant {} differs from the record stored with the model",
                        r.variant_id
                    )));
                }
            }
            None => fresh.push(r.clone()),
        }
    }
    let graph = base.attach_variants(&fresh)?;
    let positions = table
        .records
        .iter()
        .map(|r| graph.variant_position(&r.variant_id).expect("placed above"))
        .collect();
    Ok((graph, positions))
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.model)?;
    let table = io::read_variant_tsv(&a.variants)?;
    let (graph, positions) = place_variants(&checkpoint, &table)?;
    let scores = checkpoint.model.predict(&graph)?;
    let predictions: Vec<Prediction> = table
        .records
        .iter()
        .zip(&positions)
        .map(|(r, &p)| Prediction::new(r.variant_id.clone(), scores[p], r.label))
        .collect();
    io::write_file(&a.out, |out| io::write_predictions(out, &predictions))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let origin = a.predictions.display().to_string();
    let file = fs::File::open(&a.predictions).map_err(|e| Error::io(&a.predictions, e))?;
    let predictions = io::read_predictions(std::io::BufReader::new(file), &origin)?;
    let labels: Option<HashMap<String, Label>> = match &a.labels {
        Some(path) => Some(
            io::read_variant_tsv(path)?
                .records
                .into_iter()
                .map(|r| (r.variant_id, r.label))
                .collect(),
        ),
        None => None,
    };
    let mut items = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let label = match &labels {
            Some(map) => match map.get(&p.variant_id) {
                Some(l) => l.value(),
                None => {
                    return Err(Error::Contract(format!(
                        "variant {} has no entry in the label file",
                        p.variant_id
                    )))
                }
            },
            None => p.label.map(f64::from),
        };
        if let Some(l) = label {
            items.push(ScoredLabel::from_label(p.score, l)?);
        }
    }
    println!("{:.6}", auroc(&items)?);
    Ok(())
}

fn cmd_attention(a: AttentionArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.model)?;
    let graph = match &a.variants {
        Some(path) => place_variants(&checkpoint, &io::read_variant_tsv(path)?)?.0,
        None => checkpoint.graph.clone(),
    };
    let records = io::export_attention(&checkpoint.model, &graph, a.top_k, a.exact_limit)?;
    io::write_file(&a.out, |out| io::write_jsonl(out, &records))
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<()> {
    let config = SynthConfig {
        gene_count: a.genes,
        variants_per_gene: a.variants_per_gene,
        module_count: a.modules,
        gene_edge_probability: a.edge_probability,
        cross_edge_probability: a.cross_edge_probability,
        feature_noise_sd: a.noise_sd,
        label_flip_probability: a.flip_probability,
        seed,
    };
    let data = generate(&config)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let dir = &a.out_dir;
    let table = VariantTable {
        feature_names: vec!["feat_score".into()],
        records: data.variants.clone(),
    };
    let ioerr = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p, e)
    };
    let path = dir.join("variants.tsv");
    io::write_file(&path, |out| io::write_variant_tsv(out, &table).map_err(ioerr(&path)))?;
    let path = dir.join("gene_edges.tsv");
    io::write_file(&path, |out| io::write_gene_edges(out, &data.gene_edges).map_err(ioerr(&path)))?;
    let path = dir.join("genes.txt");
    io::write_file(&path, |out| io::write_gene_list(out, &data.genes).map_err(ioerr(&path)))?;
    let path = dir.join("gene_status.tsv");
    io::write_file(&path, |out| {
        writeln!(out, "gene_id\tmodule\tpathogenic").map_err(ioerr(&path))?;
        for ((g, m), s) in data.genes.iter().zip(&data.gene_module).zip(&data.gene_pathogenic) {
            writeln!(out, "{g}\t{m}\t{}", u8::from(*s)).map_err(ioerr(&path))?;
        }
        Ok(())
    })?;
    let path = dir.join("synth_config.json");
    io::write_file(&path, |out| {
        serde_json::to_writer_pretty(&mut *out, &config)?;
        writeln!(out).map_err(ioerr(&path))
    })?;
    println!(
        "{} genes, {} variants, {} gene edges written to {}",
        data.genes.len(),
        data.variants.len(),
        data.gene_edges.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_bench(a: BenchArgs, seed: u64) -> Result<()> {
    let config = BenchConfig {
        genes: a.genes,
        dim: a.dim,
        features: a.features,
        repeats: a.repeats,
        seed,
        exact_limit: a.exact_limit,
    };
    let rows = bench_attention(&config)?;
    match &a.out {
        Some(path) => io::write_file(path, |out| write_csv(out, &rows).map_err(|e| Error::io(path, e))),
        None => write_csv(std::io::stdout().lock(), &rows).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_grad_check(a: GradCheckArgs, seed: u64) -> Result<()> {
    let entries = grad_check_suite(a.mode.into(), seed)?;
    let mut worst: f64 = 0.0;
    for e in &entries {
        let err = e.report.max_rel_err();
        worst = worst.max(err);
        println!("{:<24} {:.3e} {}", e.name, err, if e.passed() { "ok" } else { "FAIL" });
    }
    println!("max relative error {worst:.3e}");
    if entries.iter().all(|e| e.passed()) {
        Ok(())
    } else {
        Err(Error::GradCheck(format!(
            "max relative error {worst:.3e} exceeds {GRAD_TOLERANCE:e}"
        )))
    }
}
