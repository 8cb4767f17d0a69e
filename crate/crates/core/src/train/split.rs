use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffles `0..n` and cuts it into a training part of `⌈(1 − f)·n⌉` indices
/// and an evaluation part holding the rest. Both parts come back sorted.
pub fn split_train_eval(n: usize, eval_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!("splitting needs at least 2 variants, got {n}")));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Config(format!("eval_fraction {eval_fraction} outside (0, 1)")));
    }
    let train_len = (((1.0 - eval_fraction) * n as f64) - 1e-9).ceil() as usize;
    let train_len = train_len.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..train_len].to_vec();
    let mut eval = order[train_len..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn sizes_follow_ceiling_rule() {
        let (t, e) = split_train_eval(10, 0.2, 1).unwrap();
        assert_eq!((t.len(), e.len()), (8, 2));
        let (t, e) = split_train_eval(7, 0.2, 1).unwrap();
        assert_eq!((t.len(), e.len()), (6, 1));
        let (t, e) = split_train_eval(1000, 0.2, 1).unwrap();
        assert_eq!((t.len(), e.len()), (800, 200));
    }

    #[test]
    fn deterministic_partition() {
        assert_eq!(split_train_eval(50, 0.2, 9).unwrap(), split_train_eval(50, 0.2, 9).unwrap());
        assert_ne!(split_train_eval(50, 0.2, 9).unwrap(), split_train_eval(50, 0.2, 10).unwrap());
        let (t, e) = split_train_eval(50, 0.2, 9).unwrap();
        let ts: BTreeSet<_> = t.iter().collect();
        let es: BTreeSet<_> = e.iter().collect();
        assert!(ts.is_disjoint(&es));
        assert_eq!(ts.union(&es).count(), 50);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert_eq!(split_train_eval(0, 0.2, 0).unwrap_err().class(), "contract");
        assert_eq!(split_train_eval(1, 0.2, 0).unwrap_err().class(), "contract");
        assert_eq!(split_train_eval(5, 1.0, 0).unwrap_err().class(), "config");
    }
}
