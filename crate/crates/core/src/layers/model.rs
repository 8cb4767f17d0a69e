//! The variant classifier: embeddings, heterogeneous message-passing rounds,
//! a final gene → variant layer and a sigmoid head.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph, MessageIndex};
use crate::layers::favor::PerformerStack;
use crate::layers::gat::GatLayer;
use crate::layers::init::{scaled_normal, Linear};
use crate::tensor::Tensor;

/// How gene-gene messages are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Graph attention restricted to the supplied interaction edges.
    Given,
    /// Random-feature self-attention over every pair of genes.
    Learnt,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Given => "given",
            Mode::Learnt => "learnt",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "given" => Ok(Mode::Given),
            "learnt" | "learned" => Ok(Mode::Learnt),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected given or learnt)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gene_dim: usize,
    pub variant_dim: usize,
    pub heads: usize,
    pub performer_layers: usize,
    pub random_features: usize,
    /// Heterogeneous rounds before the final gene → variant layer.
    pub rounds: usize,
    /// Dropout on random-feature attention outputs, training only.
    pub dropout: f64,
    /// In learnt mode, also run graph attention over the given gene edges and
    /// sum it with the learnt interaction.
    pub learnt_uses_given_edges: bool,
    /// Add `ln(weight)` of interaction edges to their attention logits.
    pub use_edge_weights: bool,
}

impl ModelConfig {
    pub fn for_mode(mode: Mode) -> Self {
        let (gene_dim, variant_dim) = match mode {
            Mode::Given => (32, 64),
            Mode::Learnt => (32, 32),
        };
        Self {
            gene_dim,
            variant_dim,
            heads: 2,
            performer_layers: 3,
            random_features: 256,
            rounds: 1,
            dropout: 0.2,
            learnt_uses_given_edges: false,
            use_edge_weights: false,
        }
    }
}

/// One heterogeneous message-passing round.
#[derive(Clone, Debug)]
pub struct HeteroRound {
    /// `In` edges: variants → genes.
    pub gene_from_variants: GatLayer,
    /// `Interact` edges over the given gene graph.
    pub gene_interact: Option<GatLayer>,
    /// Learnt interaction over all genes.
    pub performer: Option<PerformerStack>,
    /// `Has` edges: genes → variants.
    pub variant_from_genes: GatLayer,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub training: bool,
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self::default()
    }

    pub fn train(dropout_seed: u64) -> Self {
        Self {
            training: true,
            dropout_seed,
        }
    }
}

/// Attention coefficients of one GAT head, aligned with `index`.
pub struct GatTrace {
    pub layer: String,
    pub head: usize,
    pub alpha: Var,
    pub index: MessageIndex,
}

/// Input to one random-feature attention layer, kept for exact recomputation.
pub struct PerformerTrace {
    pub round: usize,
    pub layer: usize,
    pub input: Var,
}

pub struct ForwardOutput {
    pub logits: Var,
    pub probabilities: Var,
    pub gat: Vec<GatTrace>,
    pub performer: Vec<PerformerTrace>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub mode: Mode,
    pub config: ModelConfig,
    pub gene_count: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub store: ParamStore,
    pub input: Linear,
    pub gene_embedding: ParamId,
    pub rounds: Vec<HeteroRound>,
    pub finalize: GatLayer,
    pub head: Linear,
}

/// Offset separating the random-feature stream from the parameter stream.
const OMEGA_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

impl Model {
    pub fn new(mode: Mode, config: ModelConfig, gene_count: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if config.rounds == 0 {
            return Err(Error::Config("at least one heterogeneous round is required".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut omega_rng = ChaCha8Rng::seed_from_u64(seed ^ OMEGA_STREAM);
        let mut store = ParamStore::new();
        let (dg, dv, heads) = (config.gene_dim, config.variant_dim, config.heads);

        let input = Linear::new(&mut store, &mut rng, "input", feature_dim, dv);
        let gene_embedding = store.add("gene_embedding", scaled_normal(&mut rng, gene_count, dg, 0.1));

        let mut rounds = Vec::with_capacity(config.rounds);
        for r in 0..config.rounds {
            let name = format!("round{r}");
            let gene_from_variants = GatLayer::new(&mut store, &mut rng, &format!("{name}.in"), dv, dg, heads)?;
            let wants_gat = mode == Mode::Given || config.learnt_uses_given_edges;
            let gene_interact = if wants_gat {
                let mut layer = GatLayer::new(&mut store, &mut rng, &format!("{name}.interact"), dg, dg, heads)?;
                layer.use_edge_weights = config.use_edge_weights;
                Some(layer)
            } else {
                None
            };
            let performer = if mode == Mode::Learnt {
                Some(PerformerStack::new(
                    &mut store,
                    &mut rng,
                    &mut omega_rng,
                    &format!("{name}.performer"),
                    dg,
                    config.performer_layers,
                    heads,
                    config.random_features,
                    config.dropout,
                )?)
            } else {
                None
            };
            let variant_from_genes = GatLayer::new(&mut store, &mut rng, &format!("{name}.has"), dg, dv, heads)?;
            rounds.push(HeteroRound {
                gene_from_variants,
                gene_interact,
                performer,
                variant_from_genes,
            });
        }
        let finalize = GatLayer::new(&mut store, &mut rng, "final.has", dg, dv, heads)?;
        let head = Linear::new(&mut store, &mut rng, "head", dv, 1);

        Ok(Self {
            mode,
            config,
            gene_count,
            feature_dim,
            seed,
            store,
            input,
            gene_embedding,
            rounds,
            finalize,
            head,
        })
    }

    /// Frozen random-feature projections, one per round (learnt mode only).
    pub fn omegas(&self) -> Vec<Arc<Tensor>> {
        self.rounds
            .iter()
            .filter_map(|r| r.performer.as_ref().map(|p| p.omega.clone()))
            .collect()
    }

    pub fn set_omegas(&mut self, omegas: Vec<Tensor>) -> Result<()> {
        let slots: Vec<&mut PerformerStack> = self.rounds.iter_mut().filter_map(|r| r.performer.as_mut()).collect();
        if slots.len() != omegas.len() {
            return Err(Error::Contract(format!(
                "model has {} random-feature projections, got {}",
                slots.len(),
                omegas.len()
            )));
        }
        for (slot, omega) in slots.into_iter().zip(omegas) {
            if omega.shape() != slot.omega.shape() {
                return Err(Error::dim("set_omegas", slot.omega.shape(), omega.shape()));
            }
            slot.omega = Arc::new(omega);
        }
        Ok(())
    }

    /// Redraws every random-feature projection from `seed`.
    pub fn reseed_omegas(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ OMEGA_STREAM);
        for p in self.rounds.iter_mut().filter_map(|r| r.performer.as_mut()) {
            let (m, d) = (p.omega.rows(), p.omega.cols());
            p.omega = Arc::new(crate::layers::favor::draw_omega(&mut rng, m, d));
        }
    }

    fn check_graph(&self, graph: &HeteroGraph) -> Result<()> {
        if graph.gene_count() != self.gene_count || graph.feature_dim() != self.feature_dim {
            return Err(Error::dim(
                "model_forward graph",
                &[graph.gene_count(), graph.feature_dim()],
                &[self.gene_count, self.feature_dim],
            ));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns per-variant logits and
    /// probabilities along with attention traces.
    pub fn forward(&self, tape: &mut Tape, graph: &HeteroGraph, opts: ForwardOptions) -> Result<ForwardOutput> {
        self.forward_with(&self.store, tape, graph, opts)
    }

    /// As [`Model::forward`], reading parameter values from `store`, which
    /// must have the layout of `self.store`.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        graph: &HeteroGraph,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.check_graph(graph)?;
        if store.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "parameter store holds {} tensors, model expects {}",
                store.len(),
                self.store.len()
            )));
        }
        let mut dropout_rng = opts.training.then(|| ChaCha8Rng::seed_from_u64(opts.dropout_seed));
        let into_genes = graph.message_index(EdgeType::In);
        let into_variants = graph.message_index(EdgeType::Has);
        let among_genes = self
            .rounds
            .iter()
            .any(|r| r.gene_interact.is_some())
            .then(|| graph.message_index(EdgeType::Interact));

        let features = tape.constant(graph.feature_matrix());
        let mut variants = self.input.forward(tape, store, features)?;
        let mut genes = tape.param(store, self.gene_embedding);
        let mut gat = Vec::new();
        let mut performer = Vec::new();

        for (r, round) in self.rounds.iter().enumerate() {
            let mut gene_parts = Vec::with_capacity(3);

            let out = round.gene_from_variants.forward(tape, store, variants, genes, &into_genes)?;
            record(&mut gat, format!("round{r}.in"), out.attention, &into_genes);
            gene_parts.push(out.features);

            if let (Some(layer), Some(index)) = (&round.gene_interact, &among_genes) {
                let out = layer.forward(tape, store, genes, genes, index)?;
                record(&mut gat, format!("round{r}.interact"), out.attention, index);
                gene_parts.push(out.features);
            }
            if let Some(stack) = &round.performer {
                let mut x = genes;
                for (l, layer) in stack.layers.iter().enumerate() {
                    performer.push(PerformerTrace {
                        round: r,
                        layer: l,
                        input: x,
                    });
                    x = stack.layer_forward(tape, store, layer, x, dropout_rng.as_mut())?;
                }
                gene_parts.push(x);
            }

            let out = round.variant_from_genes.forward(tape, store, genes, variants, &into_variants)?;
            record(&mut gat, format!("round{r}.has"), out.attention, &into_variants);

            genes = hetero_aggregate(tape, &gene_parts)?;
            variants = hetero_aggregate(tape, &[out.features])?;
        }

        let out = self.finalize.forward(tape, store, genes, variants, &into_variants)?;
        record(&mut gat, "final.has".to_string(), out.attention, &into_variants);
        let logits = self.head.forward(tape, store, out.features)?;
        let probabilities = tape.sigmoid(logits)?;
        Ok(ForwardOutput {
            logits,
            probabilities,
            gat,
            performer,
        })
    }

    /// Pathogenicity probability for every variant node of `graph`.
    pub fn predict(&self, graph: &HeteroGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, graph, ForwardOptions::eval())?;
        Ok(tape.value(out.probabilities).data().to_vec())
    }

    pub fn parameter_count(&self) -> usize {
        self.store.num_elements()
    }
}

fn record(traces: &mut Vec<GatTrace>, layer: String, alphas: Vec<Var>, index: &MessageIndex) {
    for (head, alpha) in alphas.into_iter().enumerate() {
        traces.push(GatTrace {
            layer: layer.clone(),
            head,
            alpha,
            index: index.clone(),
        });
    }
}

/// Element-wise sum of per-edge-type representations of one node class.
pub fn hetero_aggregate(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let (&first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::Contract("aggregation over zero edge types".into()))?;
    let shape = tape.shape(first).to_vec();
    let mut total = first;
    for &p in rest {
        if tape.shape(p) != shape.as_slice() {
            return Err(Error::dim("hetero_aggregate", &shape, tape.shape(p)));
        }
        total = tape.add(total, p)?;
    }
    Ok(total)
}
