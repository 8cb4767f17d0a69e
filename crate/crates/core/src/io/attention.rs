use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph};
use crate::layers::{ForwardOptions, Model};
use crate::tensor::Tensor;

/// Largest gene count for which learnt-mode attention rows are recomputed
/// exactly during export.
pub const EXACT_RECOMPUTE_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub weight: f64,
}

/// Top-weighted neighbors of one node under one layer and head, ranked
/// descending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub layer: String,
    pub head: usize,
    pub edge_type: EdgeType,
    pub node: String,
    pub neighbors: Vec<Neighbor>,
}

fn top_k(weights: &[(usize, f64)], k: usize) -> Vec<(usize, f64)> {
    let mut w = weights.to_vec();
    let by_weight = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < w.len() {
        if k == 0 {
            return Vec::new();
        }
        w.select_nth_unstable_by(k - 1, by_weight);
        w.truncate(k);
    }
    w.sort_by(by_weight);
    w
}

fn names(graph: &HeteroGraph, edge_type: EdgeType) -> (Vec<&str>, Vec<&str>) {
    let genes: Vec<&str> = graph.genes().iter().map(String::as_str).collect();
    let variants: Vec<&str> = graph.variants().iter().map(|v| v.variant_id.as_str()).collect();
    match edge_type {
        EdgeType::Has => (genes, variants),
        EdgeType::In => (variants, genes),
        EdgeType::Interact => (genes.clone(), genes),
    }
}

/// Attention weights of every layer and head, truncated to `top_k` neighbors
/// per destination node. Learnt-mode gene-gene attention is recomputed
/// exactly from the stored layer inputs, which requires
/// `graph.gene_count() <= exact_limit`.
pub fn export_attention(
    model: &Model,
    graph: &HeteroGraph,
    top_k_count: usize,
    exact_limit: usize,
) -> Result<Vec<AttentionRecord>> {
    let has_performer = model.rounds.iter().any(|r| r.performer.is_some());
    if has_performer && graph.gene_count() > exact_limit {
        return Err(Error::Capability(format!(
            "learnt gene-gene attention is only exported by exact recomputation, limited to {exact_limit} genes \
             (graph has {}); raise the limit or export a given-mode model",
            graph.gene_count()
        )));
    }
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, graph, ForwardOptions::eval())?;
    let mut records = Vec::new();

    for trace in &out.gat {
        let index = &trace.index;
        let (src_names, dst_names) = names(graph, index.edge_type);
        let alpha = tape.value(trace.alpha).data();
        for (dst, name) in dst_names.iter().enumerate().take(index.dst_count) {
            let span = index.offsets[dst]..index.offsets[dst + 1];
            let weights: Vec<(usize, f64)> = span.map(|e| (index.src[e], alpha[e])).collect();
            records.push(AttentionRecord {
                layer: trace.layer.clone(),
                head: trace.head,
                edge_type: index.edge_type,
                node: name.to_string(),
                neighbors: top_k(&weights, top_k_count)
                    .into_iter()
                    .map(|(s, w)| Neighbor {
                        id: src_names[s].to_string(),
                        weight: w,
                    })
                    .collect(),
            });
        }
    }

    for trace in &out.performer {
        let stack = model.rounds[trace.round]
            .performer
            .as_ref()
            .expect("performer trace comes from a performer round");
        let x = tape.value(trace.input);
        let scale = (stack.head_dim() as f64).powf(-0.25);
        for (h, head) in stack.layers[trace.layer].heads.iter().enumerate() {
            let q = x.matmul(model.store.get(head.query).value())?.scale(scale);
            let k = x.matmul(model.store.get(head.key).value())?.scale(scale);
            for (i, gene) in graph.genes().iter().enumerate() {
                let weights = softmax_row(&q, &k, i);
                records.push(AttentionRecord {
                    layer: format!("round{}.performer.layer{}", trace.round, trace.layer),
                    head: h,
                    edge_type: EdgeType::Interact,
                    node: gene.clone(),
                    neighbors: top_k(&weights, top_k_count)
                        .into_iter()
                        .map(|(j, w)| Neighbor {
                            id: graph.genes()[j].clone(),
                            weight: w,
                        })
                        .collect(),
                });
            }
        }
    }
    Ok(records)
}

fn softmax_row(q: &Tensor, k: &Tensor, i: usize) -> Vec<(usize, f64)> {
    let qi = q.row(i);
    let logits: Vec<f64> = (0..k.rows())
        .map(|j| qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().enumerate().map(|(j, e)| (j, e / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Mode, ModelConfig};
    use crate::synth::toy_dataset;

    #[test]
    fn ranking_and_truncation() {
        let w = [(0, 0.2), (1, 0.5), (2, 0.3)];
        assert_eq!(top_k(&w, 2), vec![(1, 0.5), (2, 0.3)]);
        assert!(top_k(&w, 0).is_empty());
        assert_eq!(top_k(&w, 9).len(), 3);
        assert_eq!(top_k(&[(4, 0.5), (2, 0.5)], 1), vec![(2, 0.5)]);
    }

    #[test]
    fn single_variant_gene_attends_fully() {
        let graph = toy_dataset().graph().unwrap();
        let model = Model::new(Mode::Given, ModelConfig::for_mode(Mode::Given), 5, 2, 1).unwrap();
        let records = export_attention(&model, &graph, 3, EXACT_RECOMPUTE_LIMIT).unwrap();
        // G3 has exactly one variant, V5
        let r = records
            .iter()
            .find(|r| r.layer == "round0.in" && r.node == "G3" && r.head == 0)
            .unwrap();
        assert_eq!(r.neighbors, vec![Neighbor { id: "V5".into(), weight: 1.0 }]);
        for r in &records {
            let total: f64 = r.neighbors.iter().map(|n| n.weight).sum();
            assert!(total <= 1.0 + 1e-12);
            assert!(r.neighbors.windows(2).all(|w| w[0].weight >= w[1].weight));
        }
    }

    #[test]
    fn learnt_mode_respects_limit() {
        let graph = toy_dataset().graph().unwrap();
        let mut config = ModelConfig::for_mode(Mode::Learnt);
        config.random_features = 16;
        let model = Model::new(Mode::Learnt, config, 5, 2, 1).unwrap();
        let records = export_attention(&model, &graph, 5, 5).unwrap();
        let perf: Vec<_> = records.iter().filter(|r| r.layer.contains("performer")).collect();
        assert_eq!(perf.len(), 3 * 2 * 5);
        for r in perf {
            let total: f64 = r.neighbors.iter().map(|n| n.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(export_attention(&model, &graph, 5, 4).unwrap_err().class(), "capability");
    }
}
