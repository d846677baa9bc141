//! Attribute transformations: the shared-weight consistency encoder run on
//! diffused structure, and the per-domain private encoders trained with a
//! mutual-information (infomax) objective on raw structure.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Propagator, Tape, Var};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingOrigin {
    GceSource,
    GceTarget,
    GieSource,
    GieTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Array2<f64>,
    pub origin: EmbeddingOrigin,
}

impl EmbeddingMatrix {
    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Layer widths and regularization shared by every graph-convolution stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    /// Common input width (the larger raw attribute count when domains differ).
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub use_bias: bool,
}

impl EncoderShape {
    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(std::iter::repeat_n(
            self.hidden_dim,
            self.num_layers.saturating_sub(1),
        ));
        widths.push(self.out_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// A stack of graph-convolution weights (optionally with biases).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub weights: Vec<Array2<f64>>,
    pub biases: Option<Vec<Array2<f64>>>,
}

impl ConvStack {
    fn glorot(shape: &EncoderShape, rng: &mut ChaCha8Rng) -> Self {
        let dims = shape.layer_dims();
        let weights = dims.iter().map(|&(i, o)| glorot(i, o, rng)).collect();
        let biases = shape
            .use_bias
            .then(|| dims.iter().map(|&(_, o)| Array2::zeros((1, o))).collect());
        ConvStack { weights, biases }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }
}

/// Private encoder parameters: convolution stack plus bilinear discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct GieParams {
    pub stack: ConvStack,
    pub discriminator: Array2<f64>,
}

impl GieParams {
    pub fn init(shape: &EncoderShape, rng: &mut ChaCha8Rng) -> Self {
        let stack = ConvStack::glorot(shape, rng);
        let d = stack.out_dim();
        GieParams {
            discriminator: glorot(d, d, rng),
            stack,
        }
    }
}

/// All encoder-side parameters of one run.
///
/// Both domains read the single `gce` stack; there is no per-domain copy.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub gce: ConvStack,
    pub gie_source: GieParams,
    pub gie_target: GieParams,
    /// Free parameter `S` of the orthogonal map `Π = cayley(S − Sᵀ)`; `None` is `Π = I`.
    pub oi_transform_source: Option<Array2<f64>>,
    pub oi_transform_target: Option<Array2<f64>>,
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array2<f64>,
}

impl EncoderParams {
    pub fn init(
        shape: &EncoderShape,
        learnable_pi: Option<(usize, usize)>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gce = ConvStack::glorot(shape, rng);
        let gie_source = GieParams::init(shape, rng);
        let gie_target = GieParams::init(shape, rng);
        // S = 0 starts Π at the identity.
        let (pi_s, pi_t) = match learnable_pi {
            Some((ns, nt)) => (Some(Array2::zeros((ns, ns))), Some(Array2::zeros((nt, nt)))),
            None => (None, None),
        };
        EncoderParams {
            classifier_weight: glorot(shape.out_dim, shape.num_classes, rng),
            classifier_bias: Array2::zeros((1, shape.num_classes)),
            gce,
            gie_source,
            gie_target,
            oi_transform_source: pi_s,
            oi_transform_target: pi_t,
        }
    }

    /// Every tensor under a stable name, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        push_stack(&mut out, "gce", &self.gce);
        for (name, gie) in [
            ("gie_source", &self.gie_source),
            ("gie_target", &self.gie_target),
        ] {
            push_stack(&mut out, name, &gie.stack);
            out.push((format!("{name}.discriminator"), &gie.discriminator));
        }
        if let Some(p) = &self.oi_transform_source {
            out.push(("oi_transform_source".into(), p));
        }
        if let Some(p) = &self.oi_transform_target {
            out.push(("oi_transform_target".into(), p));
        }
        out.push(("classifier.weight".into(), &self.classifier_weight));
        out.push(("classifier.bias".into(), &self.classifier_bias));
        out
    }

    pub fn from_named_tensors(mut tensors: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut take = |name: &str| -> Option<Array2<f64>> {
            let pos = tensors.iter().position(|(n, _)| n == name)?;
            Some(tensors.swap_remove(pos).1)
        };
        let missing = |name: &str| Error::Format(format!("checkpoint lacks tensor {name}"));
        let stack = |prefix: &str,
                     take: &mut dyn FnMut(&str) -> Option<Array2<f64>>|
         -> Result<ConvStack> {
            let mut weights = Vec::new();
            while let Some(w) = take(&format!("{prefix}.weight{}", weights.len())) {
                weights.push(w);
            }
            if weights.is_empty() {
                return Err(missing(&format!("{prefix}.weight0")));
            }
            let mut biases = Vec::new();
            while let Some(b) = take(&format!("{prefix}.bias{}", biases.len())) {
                biases.push(b);
            }
            let biases = (!biases.is_empty()).then_some(biases);
            Ok(ConvStack { weights, biases })
        };
        let gce = stack("gce", &mut take)?;
        let gs = stack("gie_source", &mut take)?;
        let gt = stack("gie_target", &mut take)?;
        let ds =
            take("gie_source.discriminator").ok_or_else(|| missing("gie_source.discriminator"))?;
        let dt =
            take("gie_target.discriminator").ok_or_else(|| missing("gie_target.discriminator"))?;
        Ok(EncoderParams {
            gce,
            gie_source: GieParams {
                stack: gs,
                discriminator: ds,
            },
            gie_target: GieParams {
                stack: gt,
                discriminator: dt,
            },
            oi_transform_source: take("oi_transform_source"),
            oi_transform_target: take("oi_transform_target"),
            classifier_weight: take("classifier.weight")
                .ok_or_else(|| missing("classifier.weight"))?,
            classifier_bias: take("classifier.bias").ok_or_else(|| missing("classifier.bias"))?,
        })
    }
}

fn push_stack<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, prefix: &str, stack: &'a ConvStack) {
    for (i, w) in stack.weights.iter().enumerate() {
        out.push((format!("{prefix}.weight{i}"), w));
    }
    for (i, b) in stack.biases.iter().flatten().enumerate() {
        out.push((format!("{prefix}.bias{i}"), b));
    }
}

/// Uniform Glorot initialization.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit))
}

/// Zero-pads attribute columns up to `width`.
pub fn pad_features(x: ArrayView2<'_, f64>, width: usize) -> Result<Array2<f64>> {
    if x.ncols() > width {
        return Err(Error::Shape(format!(
            "{} attributes exceed width {width}",
            x.ncols()
        )));
    }
    let mut out = Array2::zeros((x.nrows(), width));
    out.slice_mut(s![.., ..x.ncols()]).assign(&x);
    Ok(out)
}

/// Training-mode dropout state.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, dim: (usize, usize)) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        Array2::from_shape_fn(dim, |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
    }
}

/// `act(operator · X · W)` evaluated directly.
pub fn graph_conv(
    operator: &Csr,
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    relu: bool,
) -> Result<Array2<f64>> {
    if operator.n_rows() != operator.n_cols()
        || operator.n_cols() != x.nrows()
        || x.ncols() != w.nrows()
    {
        return Err(Error::Shape(format!(
            "operator {}x{}, features {}x{}, weights {}x{}",
            operator.n_rows(),
            operator.n_cols(),
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let mut out = operator.matmul(x.dot(&w).view(), Exec::default())?;
    if relu {
        out.mapv_inplace(|v| v.max(0.0));
    }
    Ok(out)
}

/// Leaves for one convolution stack on a tape.
pub struct StackVars {
    pub weights: Vec<Var>,
    pub biases: Option<Vec<Var>>,
}

impl StackVars {
    pub fn register(tape: &mut Tape, stack: &ConvStack) -> Self {
        StackVars {
            weights: stack.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: stack
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| tape.leaf(b.clone())).collect()),
        }
    }
}

/// Runs a convolution stack on a tape: rectified hidden layers, linear output,
/// dropout on every layer input when `dropout` is given.
pub fn tape_stack_forward(
    tape: &mut Tape,
    op: &Arc<Propagator>,
    x: Var,
    stack: &StackVars,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Var {
    let mut h = x;
    let last = stack.weights.len() - 1;
    for (layer, &w) in stack.weights.iter().enumerate() {
        if let Some(d) = dropout.as_deref_mut() {
            if d.rate > 0.0 {
                let m = d.mask(tape.value(h).dim());
                h = tape.mask(h, m);
            }
        }
        // multiply by the narrower side first
        let (fan_in, fan_out) = tape.value(w).dim();
        h = if fan_out <= fan_in {
            let hw = tape.matmul(h, w);
            tape.propagate(op, hw)
        } else {
            let ah = tape.propagate(op, h);
            tape.matmul(ah, w)
        };
        if let Some(bs) = &stack.biases {
            h = tape.add_row(h, bs[layer]);
        }
        if layer != last {
            h = tape.relu(h);
        }
    }
    h
}

fn check_stack_input(op: &Propagator, x: ArrayView2<'_, f64>, stack: &ConvStack) -> Result<()> {
    let w0 = stack
        .weights
        .first()
        .ok_or_else(|| Error::Shape("empty convolution stack".into()))?;
    if op.num_nodes() != x.nrows() || w0.nrows() != x.ncols() {
        return Err(Error::Shape(format!(
            "operator over {} nodes, features {}x{}, first layer expects {} inputs",
            op.num_nodes(),
            x.nrows(),
            x.ncols(),
            w0.nrows()
        )));
    }
    Ok(())
}

/// Shared-weight encoding of both domains.
pub fn gce_forward(
    operators: (&Arc<Propagator>, &Arc<Propagator>),
    features: (ArrayView2<'_, f64>, ArrayView2<'_, f64>),
    params: &EncoderParams,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    check_stack_input(operators.0, features.0, &params.gce)?;
    check_stack_input(operators.1, features.1, &params.gce)?;
    let mut tape = Tape::new();
    let vars = StackVars::register(&mut tape, &params.gce);
    let xs = tape.leaf(features.0.to_owned());
    let xt = tape.leaf(features.1.to_owned());
    let hs = tape_stack_forward(&mut tape, operators.0, xs, &vars, dropout.as_deref_mut());
    let ht = tape_stack_forward(&mut tape, operators.1, xt, &vars, dropout);
    Ok((
        EmbeddingMatrix {
            values: tape.value(hs).clone(),
            origin: EmbeddingOrigin::GceSource,
        },
        EmbeddingMatrix {
            values: tape.value(ht).clone(),
            origin: EmbeddingOrigin::GceTarget,
        },
    ))
}

/// Row-permuted copy of `x`.
pub fn dgi_corrupt(x: ArrayView2<'_, f64>, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dgi_corrupt_with(x, &mut rng)
}

pub fn dgi_corrupt_with(x: ArrayView2<'_, f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(rng);
    x.select(ndarray::Axis(0), &order)
}

/// Private embedding of one graph on its raw normalized adjacency.
pub fn gie_embed(
    operator: &Arc<Propagator>,
    x: ArrayView2<'_, f64>,
    params: &GieParams,
    origin: EmbeddingOrigin,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<EmbeddingMatrix> {
    check_stack_input(operator, x, &params.stack)?;
    let mut tape = Tape::new();
    let vars = StackVars::register(&mut tape, &params.stack);
    let xv = tape.leaf(x.to_owned());
    let h = tape_stack_forward(&mut tape, operator, xv, &vars, dropout);
    Ok(EmbeddingMatrix {
        values: tape.value(h).clone(),
        origin,
    })
}

/// Infomax objective on a tape: bilinear scores of node embeddings against
/// the logistic readout of their mean, positives from `x`, negatives from
/// `corrupted`, binary cross-entropy averaged over all `2n` samples.
pub fn tape_dgi_loss(
    tape: &mut Tape,
    op: &Arc<Propagator>,
    x: Var,
    corrupted: Var,
    stack: &StackVars,
    discriminator: Var,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Var {
    let h = tape_stack_forward(tape, op, x, stack, dropout.as_deref_mut());
    let hc = tape_stack_forward(tape, op, corrupted, stack, dropout);
    let mean = tape.col_mean(h);
    let summary = tape.sigmoid(mean);
    let summary = tape.transpose(summary);
    let projected = tape.matmul(discriminator, summary);
    let pos = tape.matmul(h, projected);
    let neg = tape.matmul(hc, projected);
    let n = tape.value(pos).nrows();
    let pos_loss = tape.bce_with_logits(pos, vec![1.0; n]);
    let neg_loss = tape.bce_with_logits(neg, vec![0.0; n]);
    let both = tape.add(pos_loss, neg_loss);
    tape.scale(both, 0.5)
}

/// Inference-mode infomax loss with negatives from `dgi_corrupt(x, seed)`.
pub fn dgi_loss(
    op: &Arc<Propagator>,
    x: ArrayView2<'_, f64>,
    params: &GieParams,
    seed: u64,
) -> Result<f64> {
    check_stack_input(op, x, &params.stack)?;
    let mut tape = Tape::new();
    let vars = StackVars::register(&mut tape, &params.stack);
    let disc = tape.leaf(params.discriminator.clone());
    let xv = tape.leaf(x.to_owned());
    let xc = tape.leaf(dgi_corrupt(x, seed));
    let loss = tape_dgi_loss(&mut tape, op, xv, xc, &vars, disc, None);
    Ok(tape.scalar(loss))
}

/// Binary cross-entropy of discriminator probabilities: positives should
/// score 1, negatives 0.
pub fn discriminator_bce(positive: &[f64], negative: &[f64]) -> f64 {
    let m = (positive.len() + negative.len()).max(1) as f64;
    let pos: f64 = positive.iter().map(|p| -p.ln()).sum();
    let neg: f64 = negative.iter().map(|p| -(1.0 - p).ln()).sum();
    (pos + neg) / m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::gcn_operator;
    use crate::graph::AttributedGraph;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn shape(input: usize, hidden: usize, out: usize) -> EncoderShape {
        EncoderShape {
            input_dim: input,
            hidden_dim: hidden,
            out_dim: out,
            num_layers: 2,
            num_classes: 3,
            use_bias: false,
        }
    }

    fn params(input: usize, seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::init(&shape(input, 6, 4), None, &mut rng)
    }

    fn path_graph(n: usize, f: usize, seed: u64) -> AttributedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        let x = Array2::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0));
        AttributedGraph::from_edges(n, &edges, x, vec![None; n], 1).unwrap()
    }

    #[test]
    fn conv_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let eye = Csr::identity(2);
        assert_eq!(
            graph_conv(&eye, x.view(), Array2::eye(2).view(), false).unwrap(),
            x
        );
        let zero = Array2::<f64>::zeros((2, 2));
        let dense = Csr::from_triplets(2, 2, &[(0, 1, 3.0), (1, 0, -2.0)]);
        assert_eq!(
            graph_conv(&dense, zero.view(), x.view(), true).unwrap(),
            zero
        );
        let avg = Csr::from_triplets(2, 2, &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)]);
        let out = graph_conv(
            &avg,
            array![[2.0], [0.0]].view(),
            array![[1.0]].view(),
            false,
        )
        .unwrap();
        assert_eq!(out, array![[1.0], [1.0]]);
        assert!(matches!(
            graph_conv(&avg, x.view(), array![[1.0]].view(), false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn relu_applies_on_request() {
        let eye = Csr::identity(1);
        let out = graph_conv(
            &eye,
            array![[-1.0, 2.0]].view(),
            Array2::eye(2).view(),
            true,
        )
        .unwrap();
        assert_eq!(out, array![[0.0, 2.0]]);
    }

    #[test]
    fn layer_dims_follow_config() {
        let s = EncoderShape {
            num_layers: 2,
            ..shape(10, 128, 16)
        };
        assert_eq!(s.layer_dims(), vec![(10, 128), (128, 16)]);
        let one = EncoderShape { num_layers: 1, ..s };
        assert_eq!(one.layer_dims(), vec![(10, 16)]);
    }

    #[test]
    fn gce_identical_inputs_identical_outputs() {
        let g = path_graph(5, 3, 1);
        let op = Propagator::new(gcn_operator(&g));
        let p = params(3, 2);
        let (hs, ht) = gce_forward(
            (&op, &op),
            (g.features().view(), g.features().view()),
            &p,
            None,
        )
        .unwrap();
        assert_eq!(hs.values, ht.values);
        assert_eq!(hs.dim(), 4);
        assert_eq!(hs.origin, EmbeddingOrigin::GceSource);
    }

    #[test]
    fn gce_zero_features_zero_embeddings() {
        let g = path_graph(4, 3, 1);
        let op = Propagator::new(gcn_operator(&g));
        let zero = Array2::<f64>::zeros((4, 3));
        let (hs, ht) =
            gce_forward((&op, &op), (zero.view(), zero.view()), &params(3, 5), None).unwrap();
        assert!(hs.values.iter().chain(ht.values.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn gce_domains_do_not_mix() {
        let gs = path_graph(5, 3, 1);
        let gt = path_graph(7, 3, 2);
        let (os, ot) = (
            Propagator::new(gcn_operator(&gs)),
            Propagator::new(gcn_operator(&gt)),
        );
        let p = params(3, 3);
        let (a, _) = gce_forward(
            (&os, &ot),
            (gs.features().view(), gt.features().view()),
            &p,
            None,
        )
        .unwrap();
        let perturbed = gt.features() + 1.0;
        let (b, bt) = gce_forward(
            (&os, &ot),
            (gs.features().view(), perturbed.view()),
            &p,
            None,
        )
        .unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(bt.num_nodes(), 7);
    }

    #[test]
    fn shared_weights_single_storage() {
        let gs = path_graph(5, 3, 1);
        let gt = path_graph(6, 3, 2);
        let (os, ot) = (
            Propagator::new(gcn_operator(&gs)),
            Propagator::new(gcn_operator(&gt)),
        );
        let mut p = params(3, 4);
        let feats = (gs.features().view(), gt.features().view());
        let (_, before) = gce_forward((&os, &ot), feats, &p, None).unwrap();
        p.gce.weights[1] *= 2.0;
        let (src, after) = gce_forward((&os, &ot), feats, &p, None).unwrap();
        // the output layer is linear, so doubling its weights doubles both domains
        assert_abs_diff_eq!(after.values, &before.values * 2.0, epsilon = 1e-12);
        let direct = gcn_operator(&gs)
            .matmul(
                graph_conv(
                    &gcn_operator(&gs),
                    gs.features().view(),
                    p.gce.weights[0].view(),
                    true,
                )
                .unwrap()
                .dot(&p.gce.weights[1])
                .view(),
                Exec::Sequential,
            )
            .unwrap();
        assert_abs_diff_eq!(src.values, direct, epsilon = 1e-12);
    }

    #[test]
    fn gcn_stack_is_permutation_equivariant() {
        let g = path_graph(6, 3, 7);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut inv = [0usize; 6];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let edges: Vec<_> = g.edges().iter().map(|&(i, j)| (inv[i], inv[j])).collect();
        let x = g.features().select(ndarray::Axis(0), &perm);
        let h = AttributedGraph::from_edges(6, &edges, x, vec![None; 6], 1).unwrap();
        let p = params(3, 8);
        let (og, oh) = (
            Propagator::new(gcn_operator(&g)),
            Propagator::new(gcn_operator(&h)),
        );
        let (a, _) = gce_forward(
            (&og, &og),
            (g.features().view(), g.features().view()),
            &p,
            None,
        )
        .unwrap();
        let (b, _) = gce_forward(
            (&oh, &oh),
            (h.features().view(), h.features().view()),
            &p,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(
            a.values.select(ndarray::Axis(0), &perm),
            b.values,
            epsilon = 1e-12
        );

        let ga = gie_embed(
            &og,
            g.features().view(),
            &p.gie_source,
            EmbeddingOrigin::GieSource,
            None,
        )
        .unwrap();
        let gb = gie_embed(
            &oh,
            h.features().view(),
            &p.gie_source,
            EmbeddingOrigin::GieSource,
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(
            ga.values.select(ndarray::Axis(0), &perm),
            gb.values,
            epsilon = 1e-12
        );
    }

    #[test]
    fn corrupt_permutes_rows() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let a = dgi_corrupt(x.view(), 9);
        assert_eq!(a, dgi_corrupt(x.view(), 9));
        let mut rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|p, q| p[0].total_cmp(&q[0]));
        let orig: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        assert_eq!(rows, orig);
        let one = array![[3.0, 1.0]];
        assert_eq!(dgi_corrupt(one.view(), 0), one);
    }

    #[test]
    fn gie_on_edgeless_graph_is_feature_map() {
        let x = array![[1.0, 2.0], [3.0, -4.0]];
        let g = AttributedGraph::from_edges(2, &[], x.clone(), vec![None; 2], 1).unwrap();
        let op = Propagator::new(gcn_operator(&g));
        let gie = GieParams {
            stack: ConvStack {
                weights: vec![Array2::eye(2)],
                biases: None,
            },
            discriminator: Array2::eye(2),
        };
        let out = gie_embed(&op, x.view(), &gie, EmbeddingOrigin::GieTarget, None).unwrap();
        assert_eq!(out.values, x);
        let again = gie_embed(&op, x.view(), &gie, EmbeddingOrigin::GieTarget, None).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn gie_two_cycle_matches_conv_oracle() {
        let x = array![[2.0], [0.0]];
        let g = AttributedGraph::from_edges(2, &[(0, 1)], x.clone(), vec![None; 2], 1).unwrap();
        // self-loops make every entry 1/2: the averaging example
        let op = Propagator::new(gcn_operator(&g));
        let gie = GieParams {
            stack: ConvStack {
                weights: vec![array![[1.0]]],
                biases: None,
            },
            discriminator: array![[1.0]],
        };
        let out = gie_embed(&op, x.view(), &gie, EmbeddingOrigin::GieSource, None).unwrap();
        assert_abs_diff_eq!(out.values, array![[1.0], [1.0]], epsilon = 1e-15);
    }

    #[test]
    fn discriminator_bce_examples() {
        assert_abs_diff_eq!(
            discriminator_bce(&[0.5; 3], &[0.5; 3]),
            2f64.ln(),
            epsilon = 1e-15
        );
        assert!(discriminator_bce(&[1.0 - 1e-12], &[1e-12]) < 1e-11);
        let v = discriminator_bce(&[0.8], &[0.2]);
        assert_abs_diff_eq!(v, -(0.8f64.ln() + 0.8f64.ln()) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.22314, epsilon = 1e-5);
    }

    #[test]
    fn dgi_loss_uninformative_discriminator() {
        let g = path_graph(6, 3, 3);
        let op = Propagator::new(gcn_operator(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gie = GieParams::init(&shape(3, 5, 4), &mut rng);
        gie.discriminator.fill(0.0);
        let l = dgi_loss(&op, g.features().view(), &gie, 4).unwrap();
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn dgi_loss_gradient() {
        use crate::autodiff::check::max_relative_error;
        let g = path_graph(8, 3, 11);
        let op = Propagator::new(gcn_operator(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gie = GieParams::init(&shape(3, 4, 4), &mut rng);
        let xc = dgi_corrupt(g.features().view(), 13);
        let inputs = [
            g.features().clone(),
            xc,
            gie.stack.weights[0].clone(),
            gie.stack.weights[1].clone(),
            gie.discriminator.clone(),
        ];
        for which in 2..5 {
            let probes: Vec<_> = inputs[which].indexed_iter().map(|(ij, _)| ij).collect();
            let err = max_relative_error(&inputs, which, &probes, |t, v| {
                let stack = StackVars {
                    weights: vec![v[2], v[3]],
                    biases: None,
                };
                tape_dgi_loss(t, &op, v[0], v[1], &stack, v[4], None)
            });
            assert!(err < 1e-4, "input {which}: {err}");
        }
    }

    #[test]
    fn padding_widens() {
        let x = array![[1.0], [2.0]];
        assert_eq!(
            pad_features(x.view(), 3).unwrap(),
            array![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]
        );
        assert!(pad_features(x.view(), 0).is_err());
    }
}
