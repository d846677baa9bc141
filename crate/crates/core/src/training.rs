//! Training orchestration: private-encoder pretraining followed by joint
//! optimization of the shared encoder and classifier.

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Propagator, Tape, Var};
use crate::diffusion::{diffuse_graph, gcn_operator, DiffusedGraph};
use crate::encoders::{
    dgi_corrupt_with, gce_forward, gie_embed, pad_features, tape_dgi_loss, tape_stack_forward,
    Dropout, EmbeddingMatrix, EmbeddingOrigin, EncoderParams, EncoderShape, GieParams, StackVars,
};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, mmd_rbf, Bandwidth, MmdEstimator};
use crate::graph::{AttributedGraph, DomainPair};
use crate::objectives::{
    empirical_wasserstein, entropy_weight, gaussian_summary, tape_embedding_wasserstein,
    tape_oi_term, LossReport,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::par::Exec;

/// Switches that remove one component of the method each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Shared encoder consumes the raw normalized adjacency.
    pub disable_diffusion: bool,
    /// Forces `λ = 0`.
    pub disable_wass: bool,
    /// Drops the isolation term (and the private-encoder pretraining it needs).
    pub disable_oi: bool,
    /// Forces `η = 0`.
    pub disable_entropy: bool,
}

impl Ablation {
    /// Column label used in result tables.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.disable_diffusion, "diffusion"),
            (self.disable_wass, "L_wass"),
            (self.disable_oi, "L_oi"),
            (self.disable_entropy, "entropy"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        match parts.len() {
            0 => "full".into(),
            4 => "w/o NGDC".into(),
            _ => format!("w/o {}", parts.join("+")),
        }
    }

    pub fn all() -> Self {
        Ablation {
            disable_diffusion: true,
            disable_wass: true,
            disable_oi: true,
            disable_entropy: true,
        }
    }
}

/// Hyperparameters of one run. The seed and the ablation switches are set by
/// the experiment layer and stay out of the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub xi: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub gie_epochs: usize,
    pub learning_rate: f64,
    pub gie_learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    #[serde(skip)]
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub use_bias: bool,
    /// Multiplier on the isolation term as it enters the objective.
    pub oi_scale: f64,
    /// Learn orthogonal `Π` (Cayley-parameterized) instead of `Π = I`.
    pub learnable_pi: bool,
    #[serde(skip)]
    pub ablation: Ablation,
    /// Record the per-epoch embedding MMD in the history.
    pub telemetry_mmd: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.05,
            xi: 1e-3,
            lambda: 0.1,
            epochs: 100,
            gie_epochs: 300,
            learning_rate: 0.02,
            gie_learning_rate: 0.001,
            weight_decay: 5e-4,
            hidden_dim: 128,
            out_dim: 16,
            num_layers: 2,
            dropout: 0.5,
            seed: 0,
            optimizer: OptimizerKind::AdaptiveMoment,
            use_bias: false,
            oi_scale: 1.0,
            learnable_pi: false,
            ablation: Ablation::default(),
            telemetry_mmd: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if !(self.xi >= 0.0) {
            return fail(format!("xi = {} is negative", self.xi));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda = {} is negative", self.lambda));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.hidden_dim == 0 || self.out_dim == 0 || self.num_layers == 0 {
            return fail("dimensions and layer count must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.gie_learning_rate > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.oi_scale >= 0.0) {
            return fail("weight decay and isolation scale must be non-negative".into());
        }
        Ok(())
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.disable_wass {
            0.0
        } else {
            self.lambda
        }
    }

    fn shape(&self, input_dim: usize, num_classes: usize) -> EncoderShape {
        EncoderShape {
            input_dim,
            hidden_dim: self.hidden_dim,
            out_dim: self.out_dim,
            num_layers: self.num_layers,
            num_classes,
            use_bias: self.use_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch index `v`.
    pub epoch: usize,
    pub loss: LossReport,
    /// Accuracy of the pre-update parameters on held-out target truth.
    pub target_accuracy: Option<f64>,
    /// MMD between the pre-update source and target embeddings.
    pub mmd: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Stream ids for the independent random sequences of one run.
mod stream {
    pub const INIT: u64 = 10;
    pub const GIE_SOURCE: u64 = 11;
    pub const GIE_TARGET: u64 = 12;
    pub const GCE_DROPOUT: u64 = 13;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: GieParams,
    /// Inference-mode embedding after training.
    pub embedding: EmbeddingMatrix,
    /// Infomax loss per epoch.
    pub losses: Vec<f64>,
}

/// Trains one private encoder from `init` by minimizing the infomax loss.
pub fn pretrain_gie_from(
    operator: &Arc<Propagator>,
    features: ArrayView2<'_, f64>,
    init: GieParams,
    config: &TrainConfig,
    origin: EmbeddingOrigin,
    rng: &mut ChaCha8Rng,
) -> Result<Pretrained> {
    let mut params = init;
    let mut opt = Optimizer::new(config.optimizer, config.gie_learning_rate, 0.0);
    let mut losses = Vec::with_capacity(config.gie_epochs);
    for epoch in 0..config.gie_epochs {
        let corrupted = dgi_corrupt_with(features, rng);
        let mut tape = Tape::new();
        let stack = StackVars::register(&mut tape, &params.stack);
        let disc = tape.leaf(params.discriminator.clone());
        let x = tape.leaf(features.to_owned());
        let xc = tape.leaf(corrupted);
        let mut dropout = Dropout {
            rate: config.dropout,
            rng: &mut *rng,
        };
        let loss = tape_dgi_loss(&mut tape, operator, x, xc, &stack, disc, Some(&mut dropout));
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence {
                what: "infomax loss",
                epoch,
            });
        }
        losses.push(value);
        let grads = tape.backward(loss);
        let mut vars: Vec<Var> = stack.weights.clone();
        vars.extend(stack.biases.iter().flatten().copied());
        vars.push(disc);
        let g: Vec<Array2<f64>> = {
            let mut refs: Vec<&Array2<f64>> = params.stack.weights.iter().collect();
            refs.extend(params.stack.biases.iter().flatten());
            refs.push(&params.discriminator);
            vars.iter()
                .zip(refs)
                .map(|(&v, like)| grads.get_or_zeros(v, like))
                .collect()
        };
        let mut targets: Vec<&mut Array2<f64>> = params.stack.weights.iter_mut().collect();
        targets.extend(params.stack.biases.iter_mut().flatten());
        targets.push(&mut params.discriminator);
        opt.step(&mut targets, &g);
    }
    let embedding = gie_embed(operator, features, &params, origin, None)?;
    Ok(Pretrained {
        params,
        embedding,
        losses,
    })
}

/// Pretrains a private encoder on one graph with parameters seeded from `config.seed`.
pub fn pretrain_gie(graph: &AttributedGraph, config: &TrainConfig) -> Result<Pretrained> {
    config.validate()?;
    let mut init_rng = rng_for(config.seed, stream::INIT);
    let shape = config.shape(graph.num_features(), graph.num_classes().max(1));
    let init = GieParams::init(&shape, &mut init_rng);
    let op = Propagator::new(gcn_operator(graph));
    let mut rng = rng_for(config.seed, stream::GIE_SOURCE);
    pretrain_gie_from(
        &op,
        graph.features().view(),
        init,
        config,
        EmbeddingOrigin::GieSource,
        &mut rng,
    )
}

/// Operators and inputs shared by every epoch of a run.
pub struct PreparedPair {
    pub shared_source: Arc<Propagator>,
    pub shared_target: Arc<Propagator>,
    pub private_source: Arc<Propagator>,
    pub private_target: Arc<Propagator>,
    pub source_features: Array2<f64>,
    pub target_features: Array2<f64>,
    pub source_labels: Vec<usize>,
    pub num_classes: usize,
    /// The structure transformation of both graphs, absent when disabled.
    pub diffusion: Option<(DiffusedGraph, DiffusedGraph)>,
}

/// Runs the structure transformation once and pads attributes to a common width.
pub fn prepare(pair: &DomainPair, config: &TrainConfig) -> Result<PreparedPair> {
    if !pair.target().is_unlabeled() {
        return Err(Error::Firewall(
            "target labels are visible to training".into(),
        ));
    }
    let (src, tgt) = (pair.source(), pair.target());
    let width = src.num_features().max(tgt.num_features());
    let private_source = Propagator::new(gcn_operator(src));
    let private_target = Propagator::new(gcn_operator(tgt));
    let (shared_source, shared_target, diffusion) = if config.ablation.disable_diffusion {
        (
            Arc::clone(&private_source),
            Arc::clone(&private_target),
            None,
        )
    } else {
        let ds = diffuse_graph(src, config.alpha, config.xi)?;
        let dt = diffuse_graph(tgt, config.alpha, config.xi)?;
        (
            Propagator::new(ds.matrix.clone()),
            Propagator::new(dt.matrix.clone()),
            Some((ds, dt)),
        )
    };
    Ok(PreparedPair {
        shared_source,
        shared_target,
        private_source,
        private_target,
        source_features: pad_features(src.features().view(), width)?,
        target_features: pad_features(tgt.features().view(), width)?,
        source_labels: pair.source_labels(),
        num_classes: pair.num_classes(),
        diffusion,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub history: TrainHistory,
    pub source_embedding: EmbeddingMatrix,
    pub target_embedding: EmbeddingMatrix,
    /// Frozen private anchors, absent when the isolation term is disabled.
    pub anchors: Option<(EmbeddingMatrix, EmbeddingMatrix)>,
    pub gie_losses: Option<(Vec<f64>, Vec<f64>)>,
    pub diffusion: Option<(DiffusedGraph, DiffusedGraph)>,
}

/// Argmax of classifier logits; ties go to the lowest class index.
pub fn predict_target(params: &EncoderParams, embedding: ArrayView2<'_, f64>) -> Vec<usize> {
    let logits = embedding.dot(&params.classifier_weight) + &params.classifier_bias;
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Trains the shared encoder on `pair`. `target_truth`, when given, is used
/// only for per-epoch diagnostic accuracy and never enters the objective.
pub fn train_satmc(
    pair: &DomainPair,
    config: &TrainConfig,
    target_truth: Option<&[Option<usize>]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let prepared = prepare(pair, config)?;
    train_prepared(prepared, config, target_truth)
}

/// Seeded initial parameters of a run on `prepared`.
pub fn initial_params(prepared: &PreparedPair, config: &TrainConfig) -> EncoderParams {
    let shape = config.shape(prepared.source_features.ncols(), prepared.num_classes);
    let learnable = (!config.ablation.disable_oi && config.learnable_pi).then(|| {
        (
            prepared.source_features.nrows(),
            prepared.target_features.nrows(),
        )
    });
    let mut init_rng = rng_for(config.seed, stream::INIT);
    EncoderParams::init(&shape, learnable, &mut init_rng)
}

/// Pretrains both private encoders starting from `params`.
pub fn pretrain_private(
    prepared: &PreparedPair,
    config: &TrainConfig,
    params: &EncoderParams,
) -> Result<(Pretrained, Pretrained)> {
    let s = pretrain_gie_from(
        &prepared.private_source,
        prepared.source_features.view(),
        params.gie_source.clone(),
        config,
        EmbeddingOrigin::GieSource,
        &mut rng_for(config.seed, stream::GIE_SOURCE),
    )?;
    let t = pretrain_gie_from(
        &prepared.private_target,
        prepared.target_features.view(),
        params.gie_target.clone(),
        config,
        EmbeddingOrigin::GieTarget,
        &mut rng_for(config.seed, stream::GIE_TARGET),
    )?;
    Ok((s, t))
}

pub fn train_prepared(
    prepared: PreparedPair,
    config: &TrainConfig,
    target_truth: Option<&[Option<usize>]>,
) -> Result<TrainOutcome> {
    let exec = Exec::default();
    let p = &prepared;
    let mut params = initial_params(p, config);
    let (anchors, gie_losses) = if config.ablation.disable_oi {
        (None, None)
    } else {
        let (s, t) = pretrain_private(p, config, &params)?;
        params.gie_source = s.params;
        params.gie_target = t.params;
        (Some((s.embedding, t.embedding)), Some((s.losses, t.losses)))
    };

    let lambda = config.effective_lambda();
    let w = config.epochs;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.weight_decay);
    let mut dropout_rng = rng_for(config.seed, stream::GCE_DROPOUT);
    let mut history = TrainHistory::default();
    let ops = (&p.shared_source, &p.shared_target);
    let feats = (p.source_features.view(), p.target_features.view());

    for v in 1..=w {
        let started = Instant::now();
        let (mmd, target_accuracy) = if config.telemetry_mmd || target_truth.is_some() {
            let (hs, ht) = gce_forward(ops, feats, &params, None)?;
            let mmd = if config.telemetry_mmd {
                Some(mmd_rbf(
                    hs.values.view(),
                    ht.values.view(),
                    Bandwidth::Median,
                    MmdEstimator::Biased,
                    exec,
                )?)
            } else {
                None
            };
            let acc = target_truth
                .map(|truth| accuracy(&predict_target(&params, ht.values.view()), truth))
                .transpose()?;
            (mmd, acc)
        } else {
            (None, None)
        };

        let mut tape = Tape::with_exec(exec);
        let gce = StackVars::register(&mut tape, &params.gce);
        let cw = tape.leaf(params.classifier_weight.clone());
        let cb = tape.leaf(params.classifier_bias.clone());
        let pi_s = params
            .oi_transform_source
            .as_ref()
            .map(|s| tape.leaf(s.clone()));
        let pi_t = params
            .oi_transform_target
            .as_ref()
            .map(|s| tape.leaf(s.clone()));
        let xs = tape.leaf(p.source_features.clone());
        let xt = tape.leaf(p.target_features.clone());
        let mut dropout = Dropout {
            rate: config.dropout,
            rng: &mut dropout_rng,
        };
        let hs = tape_stack_forward(&mut tape, ops.0, xs, &gce, Some(&mut dropout));
        let ht = tape_stack_forward(&mut tape, ops.1, xt, &gce, Some(&mut dropout));

        let zs = tape.matmul(hs, cw);
        let zs = tape.add_row(zs, cb);
        let zt = tape.matmul(ht, cw);
        let zt = tape.add_row(zt, cb);
        let l_cls = tape.cross_entropy(zs, p.source_labels.clone());
        let l_ent = tape.entropy(zt);
        let eta = if config.ablation.disable_entropy {
            0.0
        } else {
            entropy_weight(v, w)?
        };
        let weighted_ent = tape.scale(l_ent, eta);
        let mut total = tape.add(l_cls, weighted_ent);

        let l_wass_value = if lambda > 0.0 {
            let l_wass = tape_embedding_wasserstein(&mut tape, hs, ht);
            let term = tape.scale(l_wass, lambda);
            total = tape.add(total, term);
            tape.scalar(l_wass)
        } else {
            let ss = gaussian_summary(tape.value(hs).view())?;
            let st = gaussian_summary(tape.value(ht).view())?;
            empirical_wasserstein(&ss, &st)?
        };

        let l_oi_value = if let Some((anchor_s, anchor_t)) = &anchors {
            let a_s = tape.leaf(anchor_s.values.clone());
            let a_t = tape.leaf(anchor_t.values.clone());
            let pis = pi_s.map(|s| tape.cayley(s));
            let pit = pi_t.map(|s| tape.cayley(s));
            let term_s = tape_oi_term(&mut tape, hs, a_s, pis);
            let term_t = tape_oi_term(&mut tape, ht, a_t, pit);
            let both = tape.add(term_s, term_t);
            let scaled = tape.scale(both, config.oi_scale);
            total = tape.add(total, scaled);
            tape.scalar(scaled)
        } else {
            0.0
        };

        let report = LossReport::new(
            l_wass_value,
            l_oi_value,
            tape.scalar(l_cls),
            tape.scalar(l_ent),
            eta,
            lambda,
        );
        if !tape.scalar(total).is_finite() {
            return Err(Error::Divergence {
                what: "total loss",
                epoch: v,
            });
        }

        let grads = tape.backward(total);
        let mut vars: Vec<Var> = gce.weights.clone();
        vars.extend(gce.biases.iter().flatten().copied());
        vars.extend([cw, cb]);
        vars.extend(pi_s);
        vars.extend(pi_t);
        let g: Vec<Array2<f64>> = {
            let mut refs: Vec<&Array2<f64>> = params.gce.weights.iter().collect();
            refs.extend(params.gce.biases.iter().flatten());
            refs.extend([&params.classifier_weight, &params.classifier_bias]);
            refs.extend(params.oi_transform_source.as_ref());
            refs.extend(params.oi_transform_target.as_ref());
            vars.iter()
                .zip(refs)
                .map(|(&var, like)| grads.get_or_zeros(var, like))
                .collect()
        };
        let mut targets: Vec<&mut Array2<f64>> = params.gce.weights.iter_mut().collect();
        targets.extend(params.gce.biases.iter_mut().flatten());
        targets.extend([&mut params.classifier_weight, &mut params.classifier_bias]);
        targets.extend(params.oi_transform_source.as_mut());
        targets.extend(params.oi_transform_target.as_mut());
        optimizer.step(&mut targets, &g);

        history.epochs.push(EpochRecord {
            epoch: v,
            loss: report,
            target_accuracy,
            mmd,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let (source_embedding, target_embedding) = gce_forward(ops, feats, &params, None)?;
    Ok(TrainOutcome {
        params,
        history,
        source_embedding,
        target_embedding,
        anchors,
        gie_losses,
        diffusion: prepared.diffusion,
    })
}
