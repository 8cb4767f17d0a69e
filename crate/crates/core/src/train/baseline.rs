use crate::autodiff::{sigmoid, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::AdamState;

/// Feature-only logistic regression, fit by full-batch Adam on standardized
/// features. Serves as the graph-free reference classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticBaseline {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LogisticBaseline {
    pub fn fit(features: &Tensor, labels: &[f64], epochs: usize, lr: f64) -> Result<Self> {
        let (n, d) = (features.rows(), features.cols());
        if n != labels.len() {
            return Err(Error::dim("logistic_fit", &[n], &[labels.len()]));
        }
        if n == 0 {
            return Err(Error::Contract("logistic fit on zero rows".into()));
        }
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(features.row(r)) {
                *m += x / n as f64;
            }
        }
        for r in 0..n {
            for ((s, m), x) in scale.iter_mut().zip(&mean).zip(features.row(r)) {
                *s += (x - m).powi(2) / n as f64;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });

        let x = standardize(features, &mean, &scale);
        let mut store = ParamStore::new();
        let w = store.add("weights", Tensor::zeros(&[d, 1]));
        let b = store.add("bias", Tensor::zeros(&[1, 1]));
        let mut adam = AdamState::new(&store, lr);
        let mut tape = Tape::new();
        for _ in 0..epochs {
            tape.reset();
            let xv = tape.constant(x.clone());
            let wv = tape.param(&store, w);
            let bv = tape.param(&store, b);
            let z = tape.matmul(xv, wv)?;
            let z = tape.add(z, bv)?;
            let y = tape.sigmoid(z)?;
            let loss = tape.bce(y, labels)?;
            store.zero_grad();
            tape.backward(loss, &mut store)?;
            adam.step(&mut store)?;
        }
        Ok(Self {
            weights: store.get(w).value().data().to_vec(),
            bias: store.get(b).value().data()[0],
            mean,
            scale,
        })
    }

    pub fn predict(&self, features: &Tensor) -> Vec<f64> {
        let x = standardize(features, &self.mean, &self.scale);
        (0..x.rows())
            .map(|r| {
                let z: f64 = x.row(r).iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias;
                sigmoid(z)
            })
            .collect()
    }
}

fn standardize(features: &Tensor, mean: &[f64], scale: &[f64]) -> Tensor {
    let mut x = features.clone();
    for r in 0..x.rows() {
        for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    x
}
