//! Gene/variant graph with three typed edge sets.
//!
//! Genes and variants are separate node classes, each indexed from zero.
//! `Has` edges run gene → variant, `In` edges mirror them variant → gene, and
//! `Interact` edges connect genes undirectedly. Adjacency is stored as sorted,
//! duplicate-free compressed lists.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeType {
    /// gene → variant
    Has,
    /// variant → gene
    In,
    /// gene ↔ gene
    Interact,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Has, EdgeType::In, EdgeType::Interact];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Has => "has",
            EdgeType::In => "in",
            EdgeType::Interact => "interact",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Pathogenic,
    Unlabeled,
}

impl Label {
    /// 0/1 value, `None` for unlabeled variants.
    pub fn value(self) -> Option<f64> {
        match self {
            Label::Benign => Some(0.0),
            Label::Pathogenic => Some(1.0),
            Label::Unlabeled => None,
        }
    }

    /// Training target: unlabeled variants stand in for pathogenic ones.
    pub fn training_target(self) -> f64 {
        self.value().unwrap_or(1.0)
    }
}

/// One row of a variant table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub variant_id: String,
    pub chrom: String,
    /// 1-based.
    pub pos: u64,
    pub ref_allele: String,
    pub alt_allele: String,
    pub gene_id: String,
    pub features: Vec<f64>,
    pub label: Label,
}

/// An undirected, weighted gene-gene edge stored with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Compressed adjacency: the neighbors of node `i` are
/// `targets[offsets[i]..offsets[i + 1]]`, sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn from_lists(lists: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_by_key(|&(t, _)| t);
            list.dedup_by_key(|&mut (t, _)| t);
            for (t, w) in list {
                targets.push(t);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Self {
            offsets,
            targets,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }
}

/// Edge list of one type arranged for message passing into destination nodes.
///
/// Edges are grouped by destination: edges of destination `i` occupy
/// `offsets[i]..offsets[i + 1]`, so `src[e]` ranges over `A(i)`.
#[derive(Clone, Debug)]
pub struct MessageIndex {
    pub edge_type: EdgeType,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub offsets: Arc<Vec<usize>>,
    pub weight: Vec<f64>,
    pub src_count: usize,
    pub dst_count: usize,
}

impl MessageIndex {
    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    genes: Vec<String>,
    gene_index: HashMap<String, usize>,
    variants: Vec<VariantRecord>,
    variant_index: HashMap<String, usize>,
    variant_gene: Vec<usize>,
    feature_dim: usize,
    gene_edges: Vec<GeneEdge>,
    has: Adjacency,
    of_variant: Adjacency,
    interact: Adjacency,
}

impl HeteroGraph {
    /// Builds the graph from a variant table, a gene-gene edge list and the
    /// ordered gene vocabulary (row `i` of the gene embedding table belongs to
    /// `gene_vocabulary[i]`).
    ///
    /// Gene edges are treated as undirected: `(A, B)` and `(B, A)` collapse to
    /// one edge, keeping the first weight seen. Self-loops are dropped.
    pub fn build(
        variants: &[VariantRecord],
        gene_edges: &[(String, String, f64)],
        gene_vocabulary: &[String],
    ) -> Result<Self> {
        let mut gene_index = HashMap::with_capacity(gene_vocabulary.len());
        for (i, g) in gene_vocabulary.iter().enumerate() {
            if gene_index.insert(g.clone(), i).is_some() {
                return Err(Error::Contract(format!("gene {g:?} appears twice in the vocabulary")));
            }
        }

        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        for (row, (a, b, w)) in gene_edges.iter().enumerate() {
            let lookup = |id: &String| {
                gene_index.get(id).copied().ok_or_else(|| Error::UnknownGene {
                    id: id.clone(),
                    row: row + 1,
                })
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::Contract(format!(
                    "gene edge {a}-{b} (row {}) has invalid weight {w}",
                    row + 1
                )));
            }
            if ia == ib {
                continue;
            }
            let key = (ia.min(ib), ia.max(ib));
            if seen.insert(key) {
                edges.push(GeneEdge {
                    a: key.0,
                    b: key.1,
                    weight: *w,
                });
            }
        }

        let mut graph = Self {
            genes: gene_vocabulary.to_vec(),
            gene_index,
            variants: Vec::new(),
            variant_index: HashMap::new(),
            variant_gene: Vec::new(),
            feature_dim: variants.first().map_or(0, |v| v.features.len()),
            gene_edges: edges,
            has: Adjacency::from_lists(Vec::new()),
            of_variant: Adjacency::from_lists(Vec::new()),
            interact: Adjacency::from_lists(Vec::new()),
        };
        graph.push_variants(variants)?;
        graph.rebuild_adjacency();
        Ok(graph)
    }

    fn push_variants(&mut self, records: &[VariantRecord]) -> Result<()> {
        let base = self.variants.len();
        for (row, rec) in records.iter().enumerate() {
            let gene = self.gene_index.get(&rec.gene_id).copied().ok_or_else(|| Error::UnknownGene {
                id: rec.gene_id.clone(),
                row: row + 1,
            })?;
            if self.variants.is_empty() && self.feature_dim == 0 {
                self.feature_dim = rec.features.len();
            }
            if rec.features.len() != self.feature_dim {
                return Err(Error::Contract(format!(
                    "variant {:?} has {} features, expected {}",
                    rec.variant_id,
                    rec.features.len(),
                    self.feature_dim
                )));
            }
            if self.variant_index.insert(rec.variant_id.clone(), base + row).is_some() {
                return Err(Error::DuplicateVariant(rec.variant_id.clone()));
            }
            self.variants.push(rec.clone());
            self.variant_gene.push(gene);
        }
        Ok(())
    }

    fn rebuild_adjacency(&mut self) {
        let mut has = vec![Vec::new(); self.genes.len()];
        let mut of_variant = Vec::with_capacity(self.variants.len());
        for (v, &g) in self.variant_gene.iter().enumerate() {
            has[g].push((v, 1.0));
            of_variant.push(vec![(g, 1.0)]);
        }
        let mut interact = vec![Vec::new(); self.genes.len()];
        for e in &self.gene_edges {
            interact[e.a].push((e.b, e.weight));
            interact[e.b].push((e.a, e.weight));
        }
        self.has = Adjacency::from_lists(has);
        self.of_variant = Adjacency::from_lists(of_variant);
        self.interact = Adjacency::from_lists(interact);
    }

    /// Returns a new graph with `records` appended as variant nodes. Genes and
    /// gene-gene edges are unchanged; `self` is left untouched.
    pub fn attach_variants(&self, records: &[VariantRecord]) -> Result<Self> {
        let mut next = self.clone();
        if records.is_empty() {
            return Ok(next);
        }
        next.push_variants(records)?;
        next.rebuild_adjacency();
        Ok(next)
    }

    /// `A(i)` for `node` under `edge_type`: the targets of its outgoing edges.
    ///
    /// `node` indexes genes for `Has` and `Interact` and variants for `In`.
    pub fn neighbors(&self, node: usize, edge_type: EdgeType) -> Result<&[usize]> {
        let adj = self.adjacency(edge_type);
        if node >= adj.node_count() {
            return Err(Error::Bounds {
                what: match edge_type {
                    EdgeType::In => "variants",
                    _ => "genes",
                },
                index: node,
                len: adj.node_count(),
            });
        }
        Ok(adj.neighbors(node))
    }

    pub fn adjacency(&self, edge_type: EdgeType) -> &Adjacency {
        match edge_type {
            EdgeType::Has => &self.has,
            EdgeType::In => &self.of_variant,
            EdgeType::Interact => &self.interact,
        }
    }

    pub fn edge_count(&self, edge_type: EdgeType) -> usize {
        self.adjacency(edge_type).edge_count()
    }

    /// Message-passing layout for `edge_type`, grouped by destination node.
    pub fn message_index(&self, edge_type: EdgeType) -> MessageIndex {
        // Messages travel along the edge; the destination's incoming edges
        // are the reverse adjacency.
        let (incoming, src_count, dst_count) = match edge_type {
            EdgeType::Has => (&self.of_variant, self.gene_count(), self.variant_count()),
            EdgeType::In => (&self.has, self.variant_count(), self.gene_count()),
            EdgeType::Interact => (&self.interact, self.gene_count(), self.gene_count()),
        };
        let mut src = Vec::with_capacity(incoming.edge_count());
        let mut dst = Vec::with_capacity(incoming.edge_count());
        let mut weight = Vec::with_capacity(incoming.edge_count());
        for i in 0..dst_count {
            for (&s, &w) in incoming.neighbors(i).iter().zip(incoming.weights(i)) {
                src.push(s);
                dst.push(i);
                weight.push(w);
            }
        }
        MessageIndex {
            edge_type,
            src: Arc::new(src),
            dst: Arc::new(dst),
            offsets: Arc::new(incoming.offsets.clone()),
            weight,
            src_count,
            dst_count,
        }
    }

    pub fn gene_count(&self) -> usize {
        self.genes.len()
    }

    pub fn variant_count(&self) -> usize {
        self.variants.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn genes(&self) -> &[String] {
        &self.genes
    }

    pub fn gene_position(&self, id: &str) -> Option<usize> {
        self.gene_index.get(id).copied()
    }

    pub fn variants(&self) -> &[VariantRecord] {
        &self.variants
    }

    pub fn variant_position(&self, id: &str) -> Option<usize> {
        self.variant_index.get(id).copied()
    }

    pub fn variant_gene(&self, v: usize) -> usize {
        self.variant_gene[v]
    }

    pub fn gene_edges(&self) -> &[GeneEdge] {
        &self.gene_edges
    }

    /// Gene edges as id triples, the input form accepted by [`HeteroGraph::build`].
    pub fn gene_edge_triples(&self) -> Vec<(String, String, f64)> {
        self.gene_edges
            .iter()
            .map(|e| (self.genes[e.a].clone(), self.genes[e.b].clone(), e.weight))
            .collect()
    }

    /// Variant input features as a `variants × feature_dim` matrix.
    pub fn feature_matrix(&self) -> Tensor {
        let data = self.variants.iter().flat_map(|v| v.features.iter().copied()).collect();
        Tensor::new(vec![self.variants.len(), self.feature_dim], data).expect("uniform feature width")
    }
}
