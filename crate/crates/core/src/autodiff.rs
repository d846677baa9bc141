//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar (1×1) output with
//! respect to every recorded value. Parameters are registered as leaves, so a
//! leaf used twice (shared weights) accumulates both contributions.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::linalg::{inverse, symmetrize, SymEigen};
use crate::par::Exec;
use crate::sparse::Csr;

/// Eigenvalue floor used in the square-root derivative.
const SQRT_GRAD_FLOOR: f64 = 1e-12;

/// Sparse operator with its transpose, for products inside a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    forward: Csr,
    backward: Csr,
    /// Dense copy kept when the operator is dense enough for BLAS-style products to win.
    dense: Option<Array2<f64>>,
}

/// Fill fraction above which propagation switches to dense products.
pub const DENSE_PROPAGATION_FILL: f64 = 0.05;

impl Propagator {
    pub fn new(op: Csr) -> Arc<Self> {
        let backward = op.transpose();
        let cells = (op.n_rows() * op.n_cols()).max(1) as f64;
        let dense = (op.nnz() as f64 / cells >= DENSE_PROPAGATION_FILL).then(|| op.to_dense());
        Arc::new(Propagator {
            forward: op,
            backward,
            dense,
        })
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Array2<f64> {
        match &self.dense {
            Some(d) => d.dot(&x),
            None => self
                .forward
                .matmul(x, exec)
                .expect("propagator shape checked by caller"),
        }
    }

    pub fn apply_transpose(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Array2<f64> {
        match &self.dense {
            Some(d) => d.t().dot(&x),
            None => self
                .backward
                .matmul(x, exec)
                .expect("propagator shape checked by caller"),
        }
    }

    pub fn matrix(&self) -> &Csr {
        &self.forward
    }

    pub fn num_nodes(&self) -> usize {
        self.forward.n_rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Propagate(Arc<Propagator>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Relu(Var),
    Mask(Var, Array2<f64>),
    Transpose(Var),
    ColMean(Var),
    SumSquares(Var),
    Norm(Var),
    Trace(Var),
    Sigmoid(Var),
    Symmetrize(Var),
    SqrtPsd(Var, SymEigen),
    CrossEntropy(Var, Vec<usize>),
    Entropy(Var),
    BceWithLogits(Var, Vec<f64>),
    Cayley {
        skew_source: Var,
        inv_plus: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn propagate(&mut self, op: &Arc<Propagator>, x: Var) -> Var {
        let v = op.apply(self.value(x).view(), self.exec);
        self.push(v, Op::Propagate(Arc::clone(op), x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// `x + 1·row`, broadcasting a 1×d row over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let v = self.value(x) + self.value(row);
        self.push(v, Op::AddRow(x, row))
    }

    pub fn sub_row(&mut self, x: Var, row: Var) -> Var {
        let v = self.value(x) - self.value(row);
        self.push(v, Op::SubRow(x, row))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|v| v.max(0.0));
        self.push(v, Op::Relu(x))
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let v = self.value(x) * &mask;
        self.push(v, Op::Mask(x, mask))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).t().to_owned();
        self.push(v, Op::Transpose(x))
    }

    pub fn col_mean(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("at least one row")
            .insert_axis(Axis(0));
        self.push(v, Op::ColMean(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|v| v * v).sum();
        self.push(scalar(v), Op::SumSquares(x))
    }

    /// Euclidean norm of all entries.
    pub fn norm(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(scalar(v), Op::Norm(x))
    }

    pub fn trace(&mut self, x: Var) -> Var {
        let v = self.value(x).diag().sum();
        self.push(scalar(v), Op::Trace(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn symmetrize(&mut self, x: Var) -> Var {
        let v = symmetrize(self.value(x).view());
        self.push(v, Op::Symmetrize(x))
    }

    /// Principal square root of a symmetric matrix with negative eigenvalues
    /// clamped to zero.
    pub fn sqrt_psd(&mut self, x: Var) -> Var {
        let eig = SymEigen::new(symmetrize(self.value(x).view()).view());
        let v = eig.reassemble(|l| l.max(0.0).sqrt());
        self.push(v, Op::SqrtPsd(x, eig))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let logp = log_softmax_rows(self.value(logits));
        let n = labels.len().max(1) as f64;
        let v = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| logp[[i, y]])
            .sum::<f64>()
            / n;
        self.push(scalar(v), Op::CrossEntropy(logits, labels))
    }

    /// Mean Shannon entropy of the row-wise softmax.
    pub fn entropy(&mut self, logits: Var) -> Var {
        let logp = log_softmax_rows(self.value(logits));
        let n = logp.nrows().max(1) as f64;
        let v = -logp.iter().map(|&lp| lp.exp() * lp).sum::<f64>() / n;
        self.push(scalar(v), Op::Entropy(logits))
    }

    /// Mean binary cross-entropy of a column of logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let z = self.value(logits);
        let m = targets.len().max(1) as f64;
        let v = z
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - t * z + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / m;
        self.push(scalar(v), Op::BceWithLogits(logits, targets))
    }

    /// Orthogonal matrix `(I − K)(I + K)⁻¹` with skew `K = S − Sᵀ`.
    pub fn cayley(&mut self, s: Var) -> Var {
        let sv = self.value(s);
        let n = sv.nrows();
        let k = sv - &sv.t();
        let eye = Array2::<f64>::eye(n);
        let inv_plus = inverse((&eye + &k).view()).expect("I + K is invertible for skew K");
        let v = (&eye - &k).dot(&inv_plus);
        self.push(
            v,
            Op::Cayley {
                skew_source: s,
                inv_plus,
            },
        )
    }

    /// Gradients of the 1×1 node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).dim(),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, contribution: Array2<f64>| match &mut grads[v.0] {
                Some(existing) => *existing += &contribution,
                slot @ None => *slot = Some(contribution),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::Propagate(p, x) => {
                    acc(*x, p.apply_transpose(g.view(), self.exec));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g.clone());
                }
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::AddRow(x, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*x, g.clone());
                }
                Op::SubRow(x, r) => {
                    acc(*r, -g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*x, g.clone());
                }
                Op::Relu(x) => {
                    let mut out = g.clone();
                    out.zip_mut_with(self.value(*x), |o, &v| {
                        if v <= 0.0 {
                            *o = 0.0
                        }
                    });
                    acc(*x, out);
                }
                Op::Mask(x, m) => acc(*x, &g * m),
                Op::Transpose(x) => acc(*x, g.t().to_owned()),
                Op::ColMean(x) => {
                    let xv = self.value(*x);
                    let n = xv.nrows() as f64;
                    let row = &g / n;
                    acc(
                        *x,
                        row.broadcast(xv.dim()).expect("row broadcast").to_owned(),
                    );
                }
                Op::SumSquares(x) => acc(*x, self.value(*x) * (2.0 * g[[0, 0]])),
                Op::Norm(x) => {
                    let norm = node.value[[0, 0]];
                    let out = if norm > 0.0 {
                        self.value(*x) * (g[[0, 0]] / norm)
                    } else {
                        Array2::zeros(self.value(*x).dim())
                    };
                    acc(*x, out);
                }
                Op::Trace(x) => acc(*x, Array2::eye(self.value(*x).nrows()) * g[[0, 0]]),
                Op::Sigmoid(x) => {
                    let mut out = g.clone();
                    out.zip_mut_with(&node.value, |o, &s| *o *= s * (1.0 - s));
                    acc(*x, out);
                }
                Op::Symmetrize(x) => acc(*x, symmetrize(g.view())),
                Op::SqrtPsd(x, eig) => {
                    let v = &eig.vectors;
                    let roots: Vec<f64> = eig.values.iter().map(|l| l.max(0.0).sqrt()).collect();
                    let mut inner = v.t().dot(&symmetrize(g.view())).dot(v);
                    for ((i, j), e) in inner.indexed_iter_mut() {
                        *e /= (roots[i] + roots[j]).max(SQRT_GRAD_FLOOR);
                    }
                    acc(*x, v.dot(&inner).dot(&v.t()));
                }
                Op::CrossEntropy(z, labels) => {
                    let mut p = softmax_rows(self.value(*z));
                    let n = labels.len().max(1) as f64;
                    for (i, &y) in labels.iter().enumerate() {
                        p[[i, y]] -= 1.0;
                    }
                    acc(*z, p * (g[[0, 0]] / n));
                }
                Op::Entropy(z) => {
                    let logp = log_softmax_rows(self.value(*z));
                    let n = logp.nrows().max(1) as f64;
                    let mut out = logp.clone();
                    for (mut row, lrow) in out.rows_mut().into_iter().zip(logp.rows()) {
                        let h = -lrow.iter().map(|&lp| lp.exp() * lp).sum::<f64>();
                        row.zip_mut_with(&lrow, |o, &lp| *o = -lp.exp() * (lp + h));
                    }
                    acc(*z, out * (g[[0, 0]] / n));
                }
                Op::BceWithLogits(z, targets) => {
                    let zv = self.value(*z);
                    let m = targets.len().max(1) as f64;
                    let mut out = zv.mapv(sigmoid);
                    for (o, &t) in out.iter_mut().zip(targets) {
                        *o = (*o - t) * g[[0, 0]] / m;
                    }
                    acc(*z, out);
                }
                Op::Cayley {
                    skew_source,
                    inv_plus,
                } => {
                    let n = inv_plus.nrows();
                    let plus_pi = Array2::<f64>::eye(n) + &node.value;
                    let gk = -plus_pi.t().dot(&g).dot(&inv_plus.t());
                    acc(*skew_source, &gk - &gk.t());
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not reach the output.
    pub fn get_or_zeros(&self, v: Var, like: &Array2<f64>) -> Array2<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(like.dim()))
    }
}


#[cfg(test)]
mod tests {
    use super::check::max_relative_error;
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn all_probes(a: &Array2<f64>) -> Vec<(usize, usize)> {
        a.indexed_iter().map(|(ij, _)| ij).collect()
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = [
            random(&mut rng, 4, 3),
            random(&mut rng, 3, 2),
            random(&mut rng, 1, 2),
        ];
        for which in 0..3 {
            let err = max_relative_error(&inputs, which, &all_probes(&inputs[which]), |t, v| {
                let h = t.matmul(v[0], v[1]);
                let h = t.add_row(h, v[2]);
                let h = t.relu(h);
                let m = t.col_mean(h);
                let c = t.sub_row(h, m);
                let s = t.sigmoid(c);
                t.sum_squares(s)
            });
            assert!(err < 1e-5, "input {which}: {err}");
        }
    }

    #[test]
    fn softmax_losses_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = [random(&mut rng, 5, 3)];
        let probes = all_probes(&z[0]);
        let ce = max_relative_error(&z, 0, &probes, |t, v| {
            t.cross_entropy(v[0], vec![0, 2, 1, 1, 0])
        });
        let ent = max_relative_error(&z, 0, &probes, |t, v| t.entropy(v[0]));
        assert!(ce < 1e-6 && ent < 1e-6, "{ce} {ent}");

        let col = [random(&mut rng, 6, 1)];
        let bce = max_relative_error(&col, 0, &all_probes(&col[0]), |t, v| {
            t.bce_with_logits(v[0], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        });
        assert!(bce < 1e-6, "{bce}");
    }

    #[test]
    fn sqrt_and_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random(&mut rng, 5, 3);
        let inputs = [b, random(&mut rng, 1, 3)];
        let err = max_relative_error(&inputs, 0, &all_probes(&inputs[0]), |t, v| {
            let bt = t.transpose(v[0]);
            let s = t.matmul(bt, v[0]);
            let r = t.sqrt_psd(s);
            let tr = t.trace(r);
            let n = t.norm(v[1]);
            t.add(tr, n)
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn cayley_is_orthogonal_with_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = [random(&mut rng, 4, 4), random(&mut rng, 4, 2)];
        let mut tape = Tape::new();
        let s = tape.leaf(inputs[0].clone());
        let pi = tape.cayley(s);
        let q = tape.value(pi);
        let gram = q.t().dot(q);
        for ((i, j), v) in gram.indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-12);
        }
        let err = max_relative_error(&inputs, 0, &all_probes(&inputs[0]), |t, v| {
            let p = t.cayley(v[0]);
            let y = t.matmul(p, v[1]);
            let c = t.col_mean(y);
            t.sum_squares(c)
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(array![[2.0]]);
        let a = tape.leaf(array![[3.0]]);
        let b = tape.leaf(array![[5.0]]);
        let x = tape.matmul(a, w);
        let y = tape.matmul(b, w);
        let s = tape.add(x, y);
        let g = tape.backward(s);
        assert_eq!(g.get(w).unwrap()[[0, 0]], 8.0);
    }

    #[test]
    fn propagate_gradient() {
        let op = Propagator::new(Csr::from_triplets(
            3,
            3,
            &[(0, 1, 0.5), (1, 2, 2.0), (2, 0, -1.0)],
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = [random(&mut rng, 3, 2)];
        let err = max_relative_error(&inputs, 0, &all_probes(&inputs[0]), |t, v| {
            let y = t.propagate(&op, v[0]);
            let y = t.sigmoid(y);
            t.sum_squares(y)
        });
        assert!(err < 1e-6, "{err}");
    }
}
