//! Wall-clock and accuracy comparison of random-feature attention against
//! exact softmax attention.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::favor::{draw_omega, exact_softmax_attention, favor_attention_values};
use crate::layers::init::scaled_normal;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub genes: Vec<usize>,
    pub dim: usize,
    pub features: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Exact attention is computed only up to this many genes.
    pub exact_limit: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            genes: vec![1000, 2000, 4000],
            dim: 16,
            features: 256,
            repeats: 5,
            seed: 0,
            exact_limit: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub genes: usize,
    pub dim: usize,
    pub features: usize,
    /// Fastest of the repeats.
    pub favor_seconds: f64,
    pub exact_seconds: Option<f64>,
    /// Relative Frobenius error of the approximation.
    pub rel_error: Option<f64>,
}

fn fastest<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((best, last.expect("at least one repeat")))
}

pub fn bench_attention(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.dim == 0 || config.features == 0 || config.genes.contains(&0) {
        return Err(Error::Config("gene counts, dim and features must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let omega = draw_omega(&mut rng, config.features, config.dim);
    // rows of unit expected squared norm
    let scale = (config.dim as f64).powf(-0.5);
    let mut rows = Vec::with_capacity(config.genes.len());
    for &n in &config.genes {
        let q = scaled_normal(&mut rng, n, config.dim, scale);
        let k = scaled_normal(&mut rng, n, config.dim, scale);
        let v = scaled_normal(&mut rng, n, config.dim, 1.0);
        let (favor_seconds, approx) = fastest(config.repeats, || favor_attention_values(&q, &k, &v, &omega))?;
        let (exact_seconds, rel_error) = if n <= config.exact_limit {
            let (t, exact) = fastest(config.repeats, || exact_softmax_attention(&q, &k, &v))?;
            (Some(t), Some(relative_frobenius(&approx, &exact)))
        } else {
            (None, None)
        };
        rows.push(BenchRow {
            genes: n,
            dim: config.dim,
            features: config.features,
            favor_seconds,
            exact_seconds,
            rel_error,
        });
    }
    Ok(rows)
}

pub fn relative_frobenius(approx: &Tensor, exact: &Tensor) -> f64 {
    let diff: f64 = approx.data().iter().zip(exact.data()).map(|(a, b)| (a - b).powi(2)).sum();
    diff.sqrt() / exact.frobenius_norm()
}

pub fn write_csv(mut out: impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "genes,dim,features,favor_seconds,exact_seconds,rel_error")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6e},{},{}",
            r.genes,
            r.dim,
            r.features,
            r.favor_seconds,
            opt(r.exact_seconds),
            opt(r.rel_error)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_benchmark_reports_errors() {
        let config = BenchConfig {
            genes: vec![32, 64],
            dim: 4,
            features: 512,
            repeats: 1,
            seed: 1,
            exact_limit: 32,
        };
        let rows = bench_attention(&config).unwrap();
        assert!(rows[0].rel_error.unwrap() < 0.2);
        assert!(rows[1].rel_error.is_none());
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().ends_with(",,"));
    }
}
