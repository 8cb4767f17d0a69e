//! Synthetic datasets with planted gene modules.
//!
//! Genes are split into contiguous modules and each module is marked
//! pathogenic or benign (half of each, randomly assigned). Gene-gene edges are
//! dense inside a module and sparse across modules. Each variant inherits its
//! gene's status as label, flipped with some probability, and carries one
//! feature equal to the status plus gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Label, VariantRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub gene_count: usize,
    /// Poisson mean of the per-gene variant count.
    pub variants_per_gene: f64,
    pub module_count: usize,
    /// Edge probability for a pair of genes in the same module.
    pub gene_edge_probability: f64,
    /// Edge probability for a pair of genes in different modules.
    pub cross_edge_probability: f64,
    pub feature_noise_sd: f64,
    pub label_flip_probability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gene_count: 100,
            variants_per_gene: 10.0,
            module_count: 4,
            gene_edge_probability: 0.2,
            cross_edge_probability: 0.001,
            feature_noise_sd: 1.0,
            label_flip_probability: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gene_count == 0 || self.module_count == 0 {
            return Err(Error::Config("gene_count and module_count must be at least 1".into()));
        }
        if self.module_count > self.gene_count {
            return Err(Error::Config(format!(
                "{} modules cannot be filled by {} genes",
                self.module_count, self.gene_count
            )));
        }
        for (name, p) in [
            ("gene_edge_probability", self.gene_edge_probability),
            ("cross_edge_probability", self.cross_edge_probability),
            ("label_flip_probability", self.label_flip_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.variants_per_gene > 0.0 && self.variants_per_gene.is_finite()) {
            return Err(Error::Config("variants_per_gene must be positive".into()));
        }
        if !(self.feature_noise_sd >= 0.0 && self.feature_noise_sd.is_finite()) {
            return Err(Error::Config("feature_noise_sd must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub variants: Vec<VariantRecord>,
    pub gene_edges: Vec<(String, String, f64)>,
    pub genes: Vec<String>,
    /// Planted status per gene, aligned with `genes`.
    pub gene_pathogenic: Vec<bool>,
    pub gene_module: Vec<usize>,
}

impl SynthData {
    pub fn graph(&self) -> Result<HeteroGraph> {
        HeteroGraph::build(&self.variants, &self.gene_edges, &self.genes)
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, k) = (config.gene_count, config.module_count);
    let width = n.to_string().len().max(4);
    let genes: Vec<String> = (0..n).map(|i| format!("G{:0width$}", i + 1)).collect();
    let gene_module: Vec<usize> = (0..n).map(|i| i * k / n).collect();

    let mut module_status: Vec<bool> = (0..k).map(|m| m < k / 2).collect();
    if k == 1 {
        module_status[0] = rng.random();
    }
    module_status.shuffle(&mut rng);
    let gene_pathogenic: Vec<bool> = gene_module.iter().map(|&m| module_status[m]).collect();

    let mut gene_edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if gene_module[a] == gene_module[b] {
                config.gene_edge_probability
            } else {
                config.cross_edge_probability
            };
            if rng.random::<f64>() < p {
                gene_edges.push((genes[a].clone(), genes[b].clone(), 1.0));
            }
        }
    }

    let counts = Poisson::new(config.variants_per_gene).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, config.feature_noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let bases = ['A', 'C', 'G', 'T'];
    let total_estimate = (n as f64 * config.variants_per_gene) as usize;
    let id_width = (total_estimate * 2).to_string().len().max(6);
    let mut variants = Vec::with_capacity(total_estimate);
    for (g, gene) in genes.iter().enumerate() {
        let count = counts.sample(&mut rng) as usize;
        let status = gene_pathogenic[g];
        for j in 0..count {
            let flipped = rng.random::<f64>() < config.label_flip_probability;
            let positive = status != flipped;
            let feature = if status { 1.0 } else { 0.0 } + noise.sample(&mut rng);
            let r = rng.random_range(0..4);
            let a = (r + rng.random_range(1..4)) % 4;
            variants.push(VariantRecord {
                variant_id: format!("V{:0id_width$}", variants.len() + 1),
                chrom: format!("chr{}", 1 + gene_module[g] % 22),
                pos: 1_000 * (g as u64 + 1) + j as u64 + 1,
                ref_allele: bases[r].to_string(),
                alt_allele: bases[a].to_string(),
                gene_id: gene.clone(),
                features: vec![feature],
                label: if positive { Label::Pathogenic } else { Label::Benign },
            });
        }
    }

    Ok(SynthData {
        variants,
        gene_edges,
        genes,
        gene_pathogenic,
        gene_module,
    })
}

/// Five genes and eight variants with two features each: small enough for
/// finite-difference checks, varied enough to exercise every edge type
/// (one gene has no variants, one variant is unlabeled).
pub fn toy_dataset() -> SynthData {
    let genes: Vec<String> = (1..=5).map(|i| format!("G{i}")).collect();
    let assignment = [0usize, 0, 1, 1, 2, 3, 3, 3];
    let features = [
        [0.3, -0.8],
        [1.1, 0.4],
        [-0.5, 0.9],
        [0.7, 0.2],
        [-1.2, -0.3],
        [0.1, 1.4],
        [0.9, -0.6],
        [-0.4, -1.0],
    ];
    let labels = [
        Label::Pathogenic,
        Label::Benign,
        Label::Pathogenic,
        Label::Unlabeled,
        Label::Benign,
        Label::Pathogenic,
        Label::Benign,
        Label::Benign,
    ];
    let variants = (0..8)
        .map(|i| VariantRecord {
            variant_id: format!("V{}", i + 1),
            chrom: "chr1".into(),
            pos: 100 * (i as u64 + 1),
            ref_allele: "A".into(),
            alt_allele: "G".into(),
            gene_id: genes[assignment[i]].clone(),
            features: features[i].to_vec(),
            label: labels[i],
        })
        .collect();
    let gene_edges = [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 2.0), (3, 4, 1.0), (0, 3, 0.8)]
        .iter()
        .map(|&(a, b, w)| (genes[a].clone(), genes[b].clone(), w))
        .collect();
    SynthData {
        variants,
        gene_edges,
        genes,
        gene_pathogenic: vec![true, true, false, false, false],
        gene_module: vec![0, 0, 0, 1, 1],
    }
}
