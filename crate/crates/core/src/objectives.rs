//! Loss terms: Gaussian Wasserstein alignment, orthogonal isolation against
//! private anchors, source classification, target entropy, and their joint
//! combination.
//!
//! Each differentiable term has a tape form (used during training and for
//! gradient checks) and a plain form evaluated on a private tape.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, symmetrize, SymEigen};

/// Mean and population covariance of an embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and `÷n` covariance of the rows of `x`.
pub fn gaussian_summary(x: ArrayView2<'_, f64>) -> Result<GaussianSummary> {
    if x.nrows() == 0 {
        return Err(Error::Sample("gaussian summary of an empty matrix".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.to_owned());
    let (mean, cov) = tape_gaussian_summary(&mut tape, xv);
    Ok(GaussianSummary {
        mean: tape.value(mean).row(0).to_owned(),
        covariance: tape.value(cov).clone(),
    })
}

/// Returns `(mean 1×d, covariance d×d)` nodes.
pub fn tape_gaussian_summary(tape: &mut Tape, x: Var) -> (Var, Var) {
    let n = tape.value(x).nrows() as f64;
    let mean = tape.col_mean(x);
    let centered = tape.sub_row(x, mean);
    let ct = tape.transpose(centered);
    let scatter = tape.matmul(ct, centered);
    let cov = tape.scale(scatter, 1.0 / n);
    let cov = tape.symmetrize(cov);
    (mean, cov)
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(s: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if s.nrows() != s.ncols() || asymmetry(s) > 1e-10 {
        return Err(Error::Shape("psd_sqrt needs a symmetric matrix".into()));
    }
    Ok(SymEigen::new(symmetrize(s).view()).reassemble(|l| l.max(0.0).sqrt()))
}

/// `‖μs−μt‖ + Tr Σs + Tr Σt − 2 Tr[(√Σs Σt √Σs)^{1/2}]`, mean term unsquared.
pub fn tape_wasserstein(tape: &mut Tape, mean_s: Var, cov_s: Var, mean_t: Var, cov_t: Var) -> Var {
    let dmu = tape.sub(mean_s, mean_t);
    let mean_term = tape.norm(dmu);
    let tr_s = tape.trace(cov_s);
    let tr_t = tape.trace(cov_t);
    let root_s = tape.sqrt_psd(cov_s);
    let left = tape.matmul(root_s, cov_t);
    let inner = tape.matmul(left, root_s);
    let inner = tape.symmetrize(inner);
    let cross = tape.sqrt_psd(inner);
    let tr_cross = tape.trace(cross);
    let two_cross = tape.scale(tr_cross, 2.0);
    let traces = tape.add(tr_s, tr_t);
    let bures = tape.sub(traces, two_cross);
    tape.add(mean_term, bures)
}

/// Wasserstein term between two embedding matrices on a tape.
pub fn tape_embedding_wasserstein(tape: &mut Tape, xs: Var, xt: Var) -> Var {
    let (ms, cs) = tape_gaussian_summary(tape, xs);
    let (mt, ct) = tape_gaussian_summary(tape, xt);
    tape_wasserstein(tape, ms, cs, mt, ct)
}

pub fn empirical_wasserstein(s: &GaussianSummary, t: &GaussianSummary) -> Result<f64> {
    if s.dim() != t.dim()
        || s.covariance.dim() != (s.dim(), s.dim())
        || t.covariance.dim() != (t.dim(), t.dim())
    {
        return Err(Error::Shape(format!(
            "summaries of dimension {} and {}",
            s.dim(),
            t.dim()
        )));
    }
    let mut tape = Tape::new();
    let ms = tape.leaf(s.mean.clone().insert_axis(Axis(0)));
    let cs = tape.leaf(s.covariance.clone());
    let mt = tape.leaf(t.mean.clone().insert_axis(Axis(0)));
    let ct = tape.leaf(t.covariance.clone());
    let out = tape_wasserstein(&mut tape, ms, cs, mt, ct);
    Ok(tape.scalar(out))
}

/// One domain's orthogonal-isolation term `‖X̂ᵀ Π X̃‖²_F`; `pi = None` means `Π = I`.
pub fn tape_oi_term(tape: &mut Tape, xhat: Var, xtilde: Var, pi: Option<Var>) -> Var {
    let anchor = match pi {
        Some(p) => tape.matmul(p, xtilde),
        None => xtilde,
    };
    let xt = tape.transpose(xhat);
    let gram = tape.matmul(xt, anchor);
    tape.sum_squares(gram)
}

/// Both domains' isolation terms summed. `None` transforms are identities.
pub fn oi_loss(
    xhat_s: ArrayView2<'_, f64>,
    xtilde_s: ArrayView2<'_, f64>,
    pi_s: Option<ArrayView2<'_, f64>>,
    xhat_t: ArrayView2<'_, f64>,
    xtilde_t: ArrayView2<'_, f64>,
    pi_t: Option<ArrayView2<'_, f64>>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut total = 0.0;
    for (xhat, xtilde, pi) in [(xhat_s, xtilde_s, pi_s), (xhat_t, xtilde_t, pi_t)] {
        let n = xhat.nrows();
        if xtilde.nrows() != n || pi.is_some_and(|p| p.dim() != (n, n)) {
            return Err(Error::Shape(format!(
                "isolation term with {} shared rows, {} private rows",
                n,
                xtilde.nrows()
            )));
        }
        let h = tape.leaf(xhat.to_owned());
        let p = pi.map(|p| tape.leaf(p.to_owned()));
        let a = tape.leaf(xtilde.to_owned());
        let term = tape_oi_term(&mut tape, h, a, p);
        total += tape.scalar(term);
    }
    Ok(total)
}

pub fn cross_entropy_loss(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.nrows() {
        return Err(Error::Shape(format!(
            "{} logit rows, {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::Label(format!(
            "label {bad} outside 0..{}",
            logits.ncols()
        )));
    }
    let mut tape = Tape::new();
    let z = tape.leaf(logits.to_owned());
    let out = tape.cross_entropy(z, labels.to_vec());
    Ok(tape.scalar(out))
}

pub fn entropy_loss(logits: ArrayView2<'_, f64>) -> f64 {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.to_owned());
    let out = tape.entropy(z);
    tape.scalar(out)
}

/// Entropy weight `η = v / w` for epoch `v` of `w`.
pub fn entropy_weight(v: usize, w: usize) -> Result<f64> {
    if w == 0 {
        return Err(Error::Parameter("total epochs must be at least 1".into()));
    }
    if v > w {
        return Err(Error::Schedule { v, w });
    }
    Ok(v as f64 / w as f64)
}

/// `(l_cls + η·l_entropy, η)` with `η = v / w`.
pub fn label_loss(l_cls: f64, l_entropy: f64, v: usize, w: usize) -> Result<(f64, f64)> {
    let eta = entropy_weight(v, w)?;
    Ok((l_cls + eta * l_entropy, eta))
}

/// Per-epoch record of every loss component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_wass: f64,
    /// Isolation term as it enters the objective (after any configured scale).
    pub l_oi: f64,
    pub l_cls: f64,
    pub l_entropy: f64,
    pub eta: f64,
    pub l_label: f64,
    pub total: f64,
}

/// `total = l_oi + l_label + λ·l_wass`.
pub fn joint_objective(l_oi: f64, l_label: f64, l_wass: f64, lambda: f64) -> f64 {
    l_oi + l_label + lambda * l_wass
}

impl LossReport {
    pub fn new(l_wass: f64, l_oi: f64, l_cls: f64, l_entropy: f64, eta: f64, lambda: f64) -> Self {
        let l_label = l_cls + eta * l_entropy;
        LossReport {
            l_wass,
            l_oi,
            l_cls,
            l_entropy,
            eta,
            l_label,
            total: joint_objective(l_oi, l_label, l_wass, lambda),
        }
    }
}
