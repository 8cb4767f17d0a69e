//! Multi-head graph attention over one edge type.
//!
//! For destination node `i` with neighborhood `A(i)` and head `h`:
//!
//! ```text
//! e_ij  = leaky_relu(a_dstᵀ W_dst x_i + a_srcᵀ W_src x_j)
//! α_ij  = softmax_{j ∈ A(i)} e_ij
//! m_i,h = Σ_j α_ij W_src x_j
//! out_i = leaky_relu(W_self x_i + [m_i,1 ‖ … ‖ m_i,H])
//! ```
//!
//! Source and destination features may have different widths; each head
//! projects both into `d_dst / H` columns. A node with an empty neighborhood
//! receives only the self path.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph::MessageIndex;
use crate::layers::init::fan_in_uniform;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GatHead {
    pub w_src: ParamId,
    pub w_dst: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
}

#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub w_self: ParamId,
    pub src_dim: usize,
    pub dst_dim: usize,
    /// Add `ln(weight)` of each edge to its attention logit.
    pub use_edge_weights: bool,
}

/// Output of one GAT layer plus the per-head attention coefficients, each an
/// `edges × 1` column aligned with the [`MessageIndex`] edge order.
pub struct GatOutput {
    pub features: Var,
    pub attention: Vec<Var>,
}

impl GatLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        src_dim: usize,
        dst_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dst_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{name}: width {dst_dim} is not divisible into {heads} heads"
            )));
        }
        let head_dim = dst_dim / heads;
        let heads = (0..heads)
            .map(|h| GatHead {
                w_src: store.add(format!("{name}.head{h}.w_src"), fan_in_uniform(rng, src_dim, head_dim, src_dim)),
                w_dst: store.add(format!("{name}.head{h}.w_dst"), fan_in_uniform(rng, dst_dim, head_dim, dst_dim)),
                att_src: store.add(format!("{name}.head{h}.att_src"), fan_in_uniform(rng, head_dim, 1, 2 * head_dim)),
                att_dst: store.add(format!("{name}.head{h}.att_dst"), fan_in_uniform(rng, head_dim, 1, 2 * head_dim)),
            })
            .collect();
        let w_self = store.add(format!("{name}.w_self"), fan_in_uniform(rng, dst_dim, dst_dim, dst_dim));
        Ok(Self {
            heads,
            w_self,
            src_dim,
            dst_dim,
            use_edge_weights: false,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dst_dim / self.heads.len()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_src: Var,
        x_dst: Var,
        index: &MessageIndex,
    ) -> Result<GatOutput> {
        let (src_shape, dst_shape) = (tape.shape(x_src).to_vec(), tape.shape(x_dst).to_vec());
        if src_shape.get(1) != Some(&self.src_dim) || src_shape[0] != index.src_count {
            return Err(Error::dim("gat_layer source", &src_shape, &[index.src_count, self.src_dim]));
        }
        if dst_shape.get(1) != Some(&self.dst_dim) || dst_shape[0] != index.dst_count {
            return Err(Error::dim("gat_layer destination", &dst_shape, &[index.dst_count, self.dst_dim]));
        }

        let log_weights = self.use_edge_weights.then(|| {
            let w: Vec<f64> = index.weight.iter().map(|w| w.max(1e-12).ln()).collect();
            tape.constant(Tensor::column(&w))
        });

        let mut messages = Vec::with_capacity(self.heads.len());
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w_src = tape.param(store, head.w_src);
            let w_dst = tape.param(store, head.w_dst);
            let att_src = tape.param(store, head.att_src);
            let att_dst = tape.param(store, head.att_dst);

            let projected = tape.matmul(x_src, w_src)?;
            let score_src = tape.matmul(projected, att_src)?;
            // a_dstᵀ W_dst x_i without forming W_dst x_i for every destination
            let dst_dir = tape.matmul(w_dst, att_dst)?;
            let score_dst = tape.matmul(x_dst, dst_dir)?;

            let e_dst = tape.gather_rows(score_dst, index.dst.clone())?;
            let e_src = tape.gather_rows(score_src, index.src.clone())?;
            let mut logits = tape.add(e_dst, e_src)?;
            if let Some(lw) = log_weights {
                logits = tape.add(logits, lw)?;
            }
            let logits = tape.leaky_relu(logits, LEAKY_SLOPE)?;
            let alpha = tape.segment_softmax(logits, index.offsets.clone())?;

            let per_edge = tape.gather_rows(projected, index.src.clone())?;
            let weighted = tape.row_scale(per_edge, alpha)?;
            let message = tape.scatter_add_rows(weighted, index.dst.clone(), index.dst_count)?;
            messages.push(message);
            attention.push(alpha);
        }
        let message = tape.concat_cols(&messages)?;
        let w_self = tape.param(store, self.w_self);
        let self_path = tape.matmul(x_dst, w_self)?;
        let combined = tape.add(self_path, message)?;
        let features = tape.leaky_relu(combined, LEAKY_SLOPE)?;
        Ok(GatOutput { features, attention })
    }
}
