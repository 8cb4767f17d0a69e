//! Linear-time softmax attention through positive random features.
//!
//! The softmax kernel `exp(qᵀk)` equals `E_ω[exp(ωᵀq − ‖q‖²/2) exp(ωᵀk − ‖k‖²/2)]`
//! for `ω ~ N(0, I)`. Stacking `m` draws of `ω` into `Ω` gives feature maps
//! `φ(q), φ(k) ∈ R^m` with `φ(q)ᵀφ(k) ≈ exp(qᵀk)`, so attention can be
//! computed as `D⁻¹ φ(Q) (φ(K)ᵀ V)` with `D = diag(φ(Q) φ(K)ᵀ 1)` without ever
//! forming the `n × n` attention matrix.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ParamId, ParamStore, Stabilizer, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::init::fan_in_uniform;
use crate::tensor::Tensor;

/// Smallest admissible entry of the attention normalizer `D`.
pub const MIN_NORMALIZER: f64 = 1e-30;

/// Draws an `m × d` projection whose rows are marginally `N(0, I_d)`.
///
/// Rows come in blocks of `d` that are mutually orthogonal, each rescaled to
/// the norm of an independent Gaussian vector.
pub fn draw_omega(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    while rows.len() < m {
        let mut block: Vec<Vec<f64>> = Vec::with_capacity(d);
        while block.len() < d {
            let mut v = gaussian(rng);
            for b in &block {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            block.push(v);
        }
        for mut v in block {
            if rows.len() == m {
                break;
            }
            let radius = gaussian(rng).iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x *= radius);
            rows.push(v);
        }
    }
    Tensor::new(vec![m, d], rows.into_iter().flatten().collect()).expect("m × d")
}

/// Plain i.i.d. Gaussian projection, without the orthogonal coupling.
pub fn draw_omega_iid(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor {
    let data = (0..m * d).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![m, d], data).expect("m × d")
}

/// `φ(x)` for each row of `x`, evaluated off-tape.
pub fn favor_feature_map(x: &Tensor, omega: &Tensor, stabilizer: Stabilizer) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let phi = tape.favor_features(xv, Arc::new(omega.clone()), stabilizer)?;
    Ok(tape.value(phi).clone())
}

/// Random-feature attention on the tape: queries use a per-row stabilizer,
/// keys a global one, and both cancel in the normalization.
pub fn favor_attention(tape: &mut Tape, q: Var, k: Var, v: Var, omega: &Arc<Tensor>) -> Result<Var> {
    let phi_q = tape.favor_features(q, omega.clone(), Stabilizer::PerRow)?;
    let phi_k = tape.favor_features(k, omega.clone(), Stabilizer::Global)?;
    let phi_k_t = tape.transpose(phi_k)?;
    let kv = tape.matmul(phi_k_t, v)?;
    let numerator = tape.matmul(phi_q, kv)?;
    let key_mass = tape.col_sum(phi_k)?;
    let key_mass = tape.transpose(key_mass)?;
    let normalizer = tape.matmul(phi_q, key_mass)?;
    if let Some((row, &value)) = tape
        .value(normalizer)
        .data()
        .iter()
        .enumerate()
        .find(|(_, &d)| d.is_nan() || d < MIN_NORMALIZER)
    {
        return Err(Error::NumericalDegeneracy { row, value });
    }
    let inv = tape.reciprocal(normalizer)?;
    tape.row_scale(numerator, inv)
}

/// Off-tape convenience wrapper around [`favor_attention`].
pub fn favor_attention_values(q: &Tensor, k: &Tensor, v: &Tensor, omega: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = favor_attention(&mut tape, qv, kv, vv, &Arc::new(omega.clone()))?;
    Ok(tape.value(out).clone())
}

/// Exact `softmax(Q Kᵀ) V`, quadratic in the number of rows.
pub fn exact_softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let weights = exact_attention_weights(q, k)?;
    weights.matmul(v)
}

/// The full `n × n` matrix `softmax(Q Kᵀ)`.
pub fn exact_attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    if q.cols() != k.cols() {
        return Err(Error::dim("exact_attention", q.shape(), k.shape()));
    }
    let mut logits = q.matmul(&k.transpose())?;
    for r in 0..logits.rows() {
        let row = logits.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(logits)
}

#[derive(Clone, Debug)]
pub struct PerformerHead {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug)]
pub struct PerformerLayer {
    pub heads: Vec<PerformerHead>,
}

/// Stack of residual random-feature self-attention layers over all genes,
/// sharing one frozen projection `Ω`.
#[derive(Clone, Debug)]
pub struct PerformerStack {
    pub layers: Vec<PerformerLayer>,
    pub omega: Arc<Tensor>,
    pub dim: usize,
    pub dropout: f64,
}

impl PerformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        omega_rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        layers: usize,
        heads: usize,
        features: usize,
        dropout: f64,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("{name}: width {dim} is not divisible into {heads} heads")));
        }
        let head_dim = dim / heads;
        let layers = (0..layers)
            .map(|l| PerformerLayer {
                heads: (0..heads)
                    .map(|h| {
                        let mut proj = |kind: &str| {
                            store.add(
                                format!("{name}.layer{l}.head{h}.{kind}"),
                                fan_in_uniform(rng, dim, head_dim, dim),
                            )
                        };
                        PerformerHead {
                            query: proj("query"),
                            key: proj("key"),
                            value: proj("value"),
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            layers,
            omega: Arc::new(draw_omega(omega_rng, features, head_dim)),
            dim,
            dropout,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.omega.cols()
    }

    /// Runs every layer: `x ← x + dropout(concat_h attention_h(x))`.
    ///
    /// `dropout_rng` is only consulted when `Some`, i.e. during training.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers {
            x = self.layer_forward(tape, store, layer, x, dropout_rng.as_deref_mut())?;
        }
        Ok(x)
    }

    /// One residual layer.
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: &PerformerLayer,
        x: Var,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let attended = self.attention(tape, store, layer, x)?;
        let attended = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => {
                let shape = tape.shape(attended).to_vec();
                let keep = 1.0 - self.dropout;
                let mask: Vec<f64> = (0..shape.iter().product::<usize>())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::new(shape, mask)?);
                tape.mul(attended, mask)?
            }
            _ => attended,
        };
        tape.add(x, attended)
    }

    /// Concatenated multi-head attention of one layer, without residual.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, layer: &PerformerLayer, x: Var) -> Result<Var> {
        let scale = (self.head_dim() as f64).powf(-0.25);
        let mut outs = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let (q, k, v) = self.project(tape, store, head, x, scale)?;
            outs.push(favor_attention(tape, q, k, v, &self.omega)?);
        }
        tape.concat_cols(&outs)
    }

    /// Scaled queries and keys plus values for one head, so that `q_iᵀ k_j`
    /// equals the usual `q_iᵀ k_j / √d_head` logit.
    pub fn project(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        head: &PerformerHead,
        x: Var,
        scale: f64,
    ) -> Result<(Var, Var, Var)> {
        let wq = tape.param(store, head.query);
        let wk = tape.param(store, head.key);
        let wv = tape.param(store, head.value);
        let q = tape.matmul(x, wq)?;
        let q = tape.scale(q, scale)?;
        let k = tape.matmul(x, wk)?;
        let k = tape.scale(k, scale)?;
        let v = tape.matmul(x, wv)?;
        Ok((q, k, v))
    }
}
