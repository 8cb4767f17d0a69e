//! Finite-difference gradient checks of every layer and of the full model on
//! the five-gene toy graph.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, GradCheckReport, ParamStore, Tape, Var};
use crate::error::Result;
use crate::graph::{EdgeType, HeteroGraph};
use crate::layers::favor::PerformerStack;
use crate::layers::gat::GatLayer;
use crate::layers::init::{scaled_normal, Linear};
use crate::layers::{hetero_aggregate, ForwardOptions, Mode, Model, ModelConfig};
use crate::synth::toy_dataset;
use crate::tensor::Tensor;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Reduces `x` to a scalar through a fixed random projection so that every
/// output entry influences the loss differently.
fn probe(tape: &mut Tape, x: Var, weights: &Arc<Tensor>) -> Result<Var> {
    let s = tape.sigmoid(x)?;
    let w = tape.constant(weights.as_ref().clone());
    let p = tape.mul(s, w)?;
    tape.sum(p)
}

fn probe_weights(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Arc<Tensor> {
    Arc::new(scaled_normal(rng, rows, cols, 1.0))
}

fn check(
    name: &str,
    store: &mut ParamStore,
    forward: impl FnMut(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<SuiteEntry> {
    Ok(SuiteEntry {
        name: name.to_string(),
        report: grad_check(forward, store, GRAD_STEP, GRAD_TOLERANCE)?,
    })
}

fn gat_entry(graph: &HeteroGraph, edge_type: EdgeType, rng: &mut ChaCha8Rng, weighted: bool) -> Result<SuiteEntry> {
    let index = graph.message_index(edge_type);
    let (src_dim, dst_dim) = match edge_type {
        EdgeType::Has => (6, 8),
        EdgeType::In => (8, 6),
        EdgeType::Interact => (6, 6),
    };
    let mut store = ParamStore::new();
    let mut layer = GatLayer::new(&mut store, rng, "gat", src_dim, dst_dim, 2)?;
    layer.use_edge_weights = weighted;
    let x_src = scaled_normal(rng, index.src_count, src_dim, 1.0);
    let x_dst = scaled_normal(rng, index.dst_count, dst_dim, 1.0);
    let w = probe_weights(rng, index.dst_count, dst_dim);
    let name = format!("gat.{}{}", edge_type, if weighted { ".weighted" } else { "" });
    check(&name, &mut store, |tape, store| {
        let s = tape.constant(x_src.clone());
        let d = if edge_type == EdgeType::Interact {
            s
        } else {
            tape.constant(x_dst.clone())
        };
        let out = layer.forward(tape, store, s, d, &index)?;
        probe(tape, out.features, &w)
    })
}

/// Every layer in isolation, then the full model of `mode` under BCE.
pub fn grad_check_suite(mode: Mode, seed: u64) -> Result<Vec<SuiteEntry>> {
    let toy = toy_dataset();
    let graph = toy.graph()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    {
        let mut store = ParamStore::new();
        let linear = Linear::new(&mut store, &mut rng, "linear", graph.feature_dim(), 4);
        let w = probe_weights(&mut rng, graph.variant_count(), 4);
        let x = graph.feature_matrix();
        entries.push(check("linear", &mut store, |tape, store| {
            let x = tape.constant(x.clone());
            let y = linear.forward(tape, store, x)?;
            probe(tape, y, &w)
        })?);
    }

    for edge_type in EdgeType::ALL {
        entries.push(gat_entry(&graph, edge_type, &mut rng, false)?);
    }
    entries.push(gat_entry(&graph, EdgeType::Interact, &mut rng, true)?);

    {
        let mut store = ParamStore::new();
        let a = store.add("a", scaled_normal(&mut rng, 5, 4, 1.0));
        let b = store.add("b", scaled_normal(&mut rng, 5, 4, 1.0));
        let w = probe_weights(&mut rng, 5, 4);
        entries.push(check("hetero_aggregate", &mut store, |tape, store| {
            let (a, b) = (tape.param(store, a), tape.param(store, b));
            let s = hetero_aggregate(tape, &[a, b])?;
            probe(tape, s, &w)
        })?);
    }

    if mode == Mode::Learnt {
        let mut store = ParamStore::new();
        let mut omega_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let stack = PerformerStack::new(&mut store, &mut rng, &mut omega_rng, "performer", 8, 3, 2, 64, 0.2)?;
        let x = scaled_normal(&mut rng, graph.gene_count(), 8, 1.0);
        let w = probe_weights(&mut rng, graph.gene_count(), 8);
        entries.push(check("performer", &mut store, |tape, store| {
            let x = tape.constant(x.clone());
            let y = stack.forward(tape, store, x, None)?;
            probe(tape, y, &w)
        })?);
    }

    {
        let mut config = ModelConfig::for_mode(mode);
        config.random_features = 64;
        let model = Model::new(mode, config, graph.gene_count(), graph.feature_dim(), seed)?;
        let mut store = model.store.clone();
        let labels: Vec<f64> = graph.variants().iter().map(|v| v.label.training_target()).collect();
        entries.push(check(&format!("model.{mode}"), &mut store, |tape, store| {
            let out = model.forward_with(store, tape, &graph, ForwardOptions::eval())?;
            tape.bce(out.probabilities, &labels)
        })?);
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn given_suite_passes() {
        let entries = grad_check_suite(Mode::Given, 0).unwrap();
        assert!(entries.iter().any(|e| e.name == "model.given"));
        for e in &entries {
            assert!(e.passed(), "{} max rel err {}", e.name, e.report.max_rel_err());
        }
    }
}
