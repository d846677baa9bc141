//! Structure transformation: symmetric transition matrix, personalized
//! PageRank diffusion, threshold sparsification and renormalization.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{write_file, AttributedGraph};
use crate::linalg::{inverse, symmetrize};
use crate::par::Exec;
use crate::sparse::Csr;

/// Above this node count the closed-form inverse gives way to the series.
pub const CLOSED_FORM_MAX_NODES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PprMode {
    /// `α (I − (1−α) T)⁻¹`
    Closed,
    /// `Σ_{k=0}^{order} α (1−α)^k T^k`
    Series { order: usize },
}

impl PprMode {
    /// Closed form for desk-scale graphs, otherwise a series truncated where
    /// the tail weight `(1−α)^{K+1}` drops below `1e-6`.
    pub fn auto(num_nodes: usize, alpha: f64) -> Self {
        if num_nodes <= CLOSED_FORM_MAX_NODES {
            PprMode::Closed
        } else {
            let order = (1e-6f64.ln() / (1.0 - alpha).ln()).ceil() as usize;
            PprMode::Series {
                order: order.max(1),
            }
        }
    }
}

/// Sparsified, renormalized diffusion operator consumed by the shared encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusedGraph {
    pub matrix: Csr,
    pub alpha: f64,
    pub xi: f64,
    pub normalized: bool,
}

impl DiffusedGraph {
    pub fn num_nodes(&self) -> usize {
        self.matrix.n_rows()
    }

    /// Writes `row\tcol\tvalue` triples.
    pub fn dump_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), |w| {
            use std::io::Write;
            for (i, j, v) in self.matrix.triplets() {
                writeln!(w, "{i}\t{j}\t{v}")?;
            }
            Ok(())
        })
    }
}

/// `T = D^{-1/2} A D^{-1/2}`, zero rows and columns for isolated nodes.
pub fn transition_matrix(graph: &AttributedGraph) -> Array2<f64> {
    graph.adjacency().sym_normalized().to_dense()
}

/// `L = I − T`.
pub fn normalized_laplacian(graph: &AttributedGraph) -> Array2<f64> {
    let n = graph.num_nodes();
    Array2::eye(n) - transition_matrix(graph)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "teleport probability {alpha} outside (0, 1)"
        )))
    }
}

pub fn ppr_diffusion(t: ArrayView2<'_, f64>, alpha: f64, mode: PprMode) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    let n = t.nrows();
    if t.ncols() != n {
        return Err(Error::Shape(format!(
            "transition matrix is {}x{}",
            n,
            t.ncols()
        )));
    }
    let out = match mode {
        PprMode::Closed => {
            let system = Array2::<f64>::eye(n) - &(&t * (1.0 - alpha));
            let inv = inverse(system.view())
                .map_err(|_| Error::Numerical("I - (1-alpha) T is singular".into()))?;
            if inv.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite diffusion inverse".into()));
            }
            inv * alpha
        }
        PprMode::Series { order } => {
            if order == 0 {
                return Err(Error::Parameter("series order must be at least 1".into()));
            }
            let sparse_t = Csr::from_dense(t, 0.0);
            let mut power = Array2::<f64>::eye(n);
            let mut acc = Array2::<f64>::eye(n) * alpha;
            let mut weight = alpha;
            for _ in 0..order {
                power = sparse_t.matmul(power.view(), Exec::default())?;
                weight *= 1.0 - alpha;
                acc.scaled_add(weight, &power);
            }
            acc
        }
    };
    Ok(symmetrize(out.view()))
}

/// Zeroes entries below `xi`, symmetrizes, adds self-loops and applies
/// symmetric degree normalization.
pub fn sparsify_and_renormalize(
    s: ArrayView2<'_, f64>,
    alpha: f64,
    xi: f64,
) -> Result<DiffusedGraph> {
    if !(xi >= 0.0) {
        return Err(Error::Parameter(format!(
            "threshold {xi} must be non-negative"
        )));
    }
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Shape(format!(
            "diffusion matrix is {}x{}",
            n,
            s.ncols()
        )));
    }
    let mut kept = s.to_owned();
    kept.mapv_inplace(|v| if v.abs() < xi { 0.0 } else { v });
    let kept = symmetrize(kept.view());
    let matrix = Csr::from_dense(kept.view(), 0.0)
        .with_self_loops(1.0)
        .sym_normalized();
    Ok(DiffusedGraph {
        matrix,
        alpha,
        xi,
        normalized: true,
    })
}

/// Full structure transformation of one graph.
pub fn diffuse_graph(graph: &AttributedGraph, alpha: f64, xi: f64) -> Result<DiffusedGraph> {
    let t = transition_matrix(graph);
    let s = ppr_diffusion(t.view(), alpha, PprMode::auto(graph.num_nodes(), alpha))?;
    sparsify_and_renormalize(s.view(), alpha, xi)
}

/// Self-loop augmented, symmetrically normalized raw adjacency. Used by the
/// private encoders and when the structure transformation is disabled.
pub fn gcn_operator(graph: &AttributedGraph) -> Csr {
    graph.adjacency().with_self_loops(1.0).sym_normalized()
}
