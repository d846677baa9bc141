//! First-order optimizers with L2 weight decay folded into the gradient.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    AdaptiveMoment,
    PlainSgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Updates `params` in place. The parameter list must keep the same order
    /// and shapes across calls.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len());
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Array2::zeros(p.dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::PlainSgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.zip_mut_with(g, |w, &g| *w -= lr * (g + wd * *w));
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    ndarray::Zip::from(&mut **p)
                        .and(g)
                        .and(m)
                        .and(v)
                        .for_each(|w, &g, m, v| {
                            let g = g + wd * *w;
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sgd_step() {
        let mut w = array![[1.0, -2.0]];
        let mut opt = Optimizer::new(OptimizerKind::PlainSgd, 0.1, 0.5);
        opt.step(&mut [&mut w], &[array![[1.0, 1.0]]]);
        // w - 0.1 (g + 0.5 w)
        assert_eq!(w, array![[1.0 - 0.1 * 1.5, -2.0 - 0.1 * 0.0]]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut w = array![[0.0, 0.0]];
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, 0.01, 0.0);
        opt.step(&mut [&mut w], &[array![[3.0, -0.2]]]);
        assert!((w[[0, 0]] + 0.01).abs() < 1e-8);
        assert!((w[[0, 1]] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut w = array![[5.0]];
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, 0.1, 0.0);
        for _ in 0..500 {
            let g = &w * 2.0;
            opt.step(&mut [&mut w], &[g]);
        }
        assert!(w[[0, 0]].abs() < 1e-2);
    }
}
