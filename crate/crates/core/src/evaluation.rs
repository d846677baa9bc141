//! Accuracy, kernel two-sample discrepancy, per-class cluster statistics and
//! a deterministic two-dimensional projection of embeddings.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymEigen;
use crate::par::Exec;

pub fn accuracy(predicted: &[usize], truth: &[Option<usize>]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Sample("accuracy of an empty sample".into()));
    }
    let mut correct = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        let t = t.ok_or_else(|| Error::Label("evaluation truth has unlabeled nodes".into()))?;
        correct += usize::from(*p == t);
    }
    Ok(correct as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled sample, 1 when that median is 0.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// V-statistic over all pairs, diagonal included.
    #[default]
    Biased,
    /// U-statistic; within-sample diagonals excluded.
    Unbiased,
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise Euclidean distances in the pooled sample.
pub fn median_pairwise_distance(x: ArrayView2<'_, f64>, exec: Exec) -> f64 {
    let n = x.nrows();
    let mut dists: Vec<f64> = exec
        .map_range(n, |i| {
            ((i + 1)..n)
                .map(|j| sq_dist(x.row(i), x.row(j)).sqrt())
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    if dists.is_empty() {
        return 0.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Mean of `k(a_i, b_j)` over pairs, optionally skipping `i == j`.
fn mean_kernel(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    gamma: f64,
    skip_diag: bool,
    exec: Exec,
) -> f64 {
    let rows = exec.map_range(a.nrows(), |i| {
        let ai = a.row(i);
        b.rows()
            .into_iter()
            .enumerate()
            .filter(|&(j, _)| !(skip_diag && i == j))
            .map(|(_, bj)| (-gamma * sq_dist(ai, bj)).exp())
            .sum::<f64>()
    });
    let count = if skip_diag {
        a.nrows() * (b.nrows() - 1)
    } else {
        a.nrows() * b.nrows()
    };
    rows.iter().sum::<f64>() / count as f64
}

/// Squared maximum mean discrepancy with Gaussian kernel
/// `exp(−‖x−y‖² / (2σ²))`, clipped at zero.
pub fn mmd_rbf(
    xs: ArrayView2<'_, f64>,
    xt: ArrayView2<'_, f64>,
    bandwidth: Bandwidth,
    estimator: MmdEstimator,
    exec: Exec,
) -> Result<f64> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::Shape(format!(
            "embedding dims {} and {}",
            xs.ncols(),
            xt.ncols()
        )));
    }
    if xs.nrows() < 2 || xt.nrows() < 2 {
        return Err(Error::Sample("mmd needs at least 2 rows per sample".into()));
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) if s > 0.0 => s,
        Bandwidth::Fixed(s) => {
            return Err(Error::Parameter(format!("bandwidth {s} must be positive")))
        }
        Bandwidth::Median => {
            let pooled = ndarray::concatenate(Axis(0), &[xs, xt]).expect("equal widths checked");
            let m = median_pairwise_distance(pooled.view(), exec);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let unbiased = estimator == MmdEstimator::Unbiased;
    let kss = mean_kernel(xs, xs, gamma, unbiased, exec);
    let ktt = mean_kernel(xt, xt, gamma, unbiased, exec);
    let kst = mean_kernel(xs, xt, gamma, false, exec);
    Ok((kss + ktt - 2.0 * kst).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub size: usize,
    pub centroid: Vec<f64>,
    pub mean_distance: f64,
    pub clusters: usize,
}

/// Centroid, mean distance to centroid and single-linkage cluster count per
/// class. `cut = None` uses five times the median within-class
/// nearest-neighbor distance.
pub fn class_scatter(
    x: ArrayView2<'_, f64>,
    labels: &[Option<usize>],
    num_classes: usize,
    cut: Option<f64>,
) -> Result<Vec<ClassStats>> {
    if labels.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            x.nrows()
        )));
    }
    let members: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| {
            (0..labels.len())
                .filter(|&i| labels[i] == Some(c))
                .collect()
        })
        .collect();
    let cut = match cut {
        Some(c) => c,
        None => {
            let mut nn: Vec<f64> = members
                .iter()
                .flat_map(|idx| {
                    idx.iter().filter_map(move |&i| {
                        idx.iter()
                            .filter(|&&j| j != i)
                            .map(|&j| sq_dist(x.row(i), x.row(j)).sqrt())
                            .min_by(f64::total_cmp)
                    })
                })
                .collect();
            if nn.is_empty() {
                0.0
            } else {
                let mid = nn.len() / 2;
                *nn.select_nth_unstable_by(mid, f64::total_cmp).1 * 5.0
            }
        }
    };
    let mut out = Vec::new();
    for (class, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let sub = x.select(Axis(0), idx);
        let centroid = sub.mean_axis(Axis(0)).expect("non-empty class");
        let mean_distance = sub
            .rows()
            .into_iter()
            .map(|r| sq_dist(r, centroid.view()).sqrt())
            .sum::<f64>()
            / idx.len() as f64;
        out.push(ClassStats {
            class,
            size: idx.len(),
            centroid: centroid.to_vec(),
            mean_distance,
            clusters: single_linkage_components(sub.view(), cut),
        });
    }
    Ok(out)
}

/// Connected components when points closer than or equal to `cut` are joined.
pub fn single_linkage_components(x: ArrayView2<'_, f64>, cut: f64) -> usize {
    let n = x.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let cut_sq = cut * cut;
    for i in 0..n {
        for j in (i + 1)..n {
            if sq_dist(x.row(i), x.row(j)) <= cut_sq {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Projection of centered rows onto the two leading principal directions.
/// Each direction's largest-magnitude loading is made positive.
pub fn project_2d(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() < 2 {
        return Err(Error::Shape(
            "projection needs at least 2 dimensions".into(),
        ));
    }
    if x.nrows() == 0 {
        return Ok(Array2::zeros((0, 2)));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / x.nrows() as f64;
    let eig = SymEigen::new(cov.view());
    let d = x.ncols();
    let mut basis = Array2::zeros((d, 2));
    for k in 0..2 {
        let mut v: Array1<f64> = eig.vectors.column(d - 1 - k).to_owned();
        let lead = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if lead < 0.0 {
            v *= -1.0;
        }
        basis.column_mut(k).assign(&v);
    }
    Ok(centered.dot(&basis))
}

/// Summary of one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target_accuracy: f64,
    pub mmd: f64,
    pub per_class: Vec<ClassStats>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn accuracy_examples() {
        let t = [Some(0), Some(1), Some(2), Some(1)];
        assert_eq!(accuracy(&[0, 1, 2, 1], &t).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 0, 0], &t).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &t).unwrap(), 0.75);
        assert!(accuracy(&[0], &t).is_err());
        assert!(accuracy(&[0], &[None]).is_err());
    }

    #[test]
    fn accuracy_is_order_invariant() {
        let p = [0, 2, 1, 1, 0];
        let t = [Some(0), Some(1), Some(1), Some(2), Some(0)];
        let order = [4, 2, 0, 3, 1];
        let p2: Vec<_> = order.iter().map(|&i| p[i]).collect();
        let t2: Vec<_> = order.iter().map(|&i| t[i]).collect();
        assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&p2, &t2).unwrap());
    }

    #[test]
    fn mmd_identical_samples() {
        let x = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        for est in [MmdEstimator::Biased, MmdEstimator::Unbiased] {
            let v = mmd_rbf(x.view(), x.view(), Bandwidth::Median, est, Exec::Sequential).unwrap();
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn mmd_separated_singletons() {
        let a = array![[0.0], [0.0]];
        let b = array![[100.0], [100.0]];
        let v = mmd_rbf(
            a.view(),
            b.view(),
            Bandwidth::Fixed(1.0),
            MmdEstimator::Biased,
            Exec::Sequential,
        )
        .unwrap();
        // k(x,x) = 1 within, ≈ 0 across
        assert!(v > 0.0);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mmd_matches_brute_force() {
        let a = array![[0.0], [0.0]];
        let b = array![[1.0], [1.0]];
        let k = |x: f64, y: f64| (-(x - y) * (x - y) / 2.0).exp();
        let (xs, xt) = ([0.0, 0.0], [1.0, 1.0]);
        let mut sum = 0.0;
        for &p in &xs {
            for &q in &xs {
                sum += k(p, q) / 4.0;
            }
        }
        for &p in &xt {
            for &q in &xt {
                sum += k(p, q) / 4.0;
            }
        }
        for &p in &xs {
            for &q in &xt {
                sum -= 2.0 * k(p, q) / 4.0;
            }
        }
        let v = mmd_rbf(
            a.view(),
            b.view(),
            Bandwidth::Fixed(1.0),
            MmdEstimator::Biased,
            Exec::Sequential,
        )
        .unwrap();
        assert_abs_diff_eq!(v, sum, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 2.0 - 2.0 * (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn mmd_errors() {
        let one = array![[0.0]];
        let two = array![[0.0], [1.0]];
        assert!(matches!(
            mmd_rbf(
                one.view(),
                two.view(),
                Bandwidth::Median,
                MmdEstimator::Biased,
                Exec::Sequential
            ),
            Err(Error::Sample(_))
        ));
        let wide = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(mmd_rbf(
            two.view(),
            wide.view(),
            Bandwidth::Median,
            MmdEstimator::Biased,
            Exec::Sequential
        )
        .is_err());
    }

    #[test]
    fn median_distance_fallback() {
        let same = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(median_pairwise_distance(same.view(), Exec::Sequential), 0.0);
        let v = mmd_rbf(
            same.view(),
            same.view(),
            Bandwidth::Median,
            MmdEstimator::Biased,
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(v, 0.0);
        let line = array![[0.0], [1.0], [3.0]];
        // distances 1, 2, 3
        assert_eq!(median_pairwise_distance(line.view(), Exec::Sequential), 2.0);
        let four = array![[0.0], [1.0], [3.0], [7.0]];
        // 1 2 3 4 6 7
        assert_eq!(median_pairwise_distance(four.view(), Exec::Parallel), 3.5);
    }

    fn blobs(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], per: usize, radius: f64) -> Array2<f64> {
        let d = centers[0].len();
        let mut out = Array2::zeros((centers.len() * per, d));
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                for k in 0..d {
                    out[[c * per + i, k]] = center[k] + rng.random_range(-radius..radius);
                }
            }
        }
        out
    }

    #[test]
    fn scatter_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = blobs(&mut rng, &[vec![0.0, 0.0], vec![10.0, 0.0]], 10, 0.1);
        let split = vec![Some(0); 20];
        let stats = class_scatter(x.view(), &split, 1, Some(1.0)).unwrap();
        assert_eq!(stats[0].clusters, 2);

        let tight = vec![Some(0); 10];
        let stats = class_scatter(x.slice(ndarray::s![..10, ..]), &tight, 2, None).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].clusters, 1);
        assert!(stats[0].mean_distance < 0.15);

        let single = class_scatter(array![[4.0, 2.0]].view(), &[Some(1)], 2, None).unwrap();
        assert_eq!(single[0].class, 1);
        assert_eq!(single[0].mean_distance, 0.0);
    }

    #[test]
    fn default_cut_separates_far_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = blobs(&mut rng, &[vec![0.0, 0.0], vec![10.0, 0.0]], 15, 0.1);
        let stats = class_scatter(x.view(), &vec![Some(0); 30], 1, None).unwrap();
        assert_eq!(stats[0].clusters, 2);
    }

    #[test]
    fn projection_examples() {
        let x = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
        let p = project_2d(x.view()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d0 = sq_dist(x.row(i), x.row(j)).sqrt();
                let d1 = sq_dist(p.row(i), p.row(j)).sqrt();
                assert_abs_diff_eq!(d0, d1, epsilon = 1e-8);
            }
        }
        let rank1 = array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]];
        let p = project_2d(rank1.view()).unwrap();
        assert!(p.column(1).iter().all(|v| v.abs() < 1e-8));
        assert!(project_2d(array![[1.0], [2.0]].view()).is_err());
    }

    #[test]
    fn projection_keeps_blobs_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        a[3] = 5.0;
        b[3] = -5.0;
        b[9] = 4.0;
        let x = blobs(&mut rng, &[a, b], 40, 0.5);
        let p = project_2d(x.view()).unwrap();
        let ca = p.slice(ndarray::s![..40, ..]).mean_axis(Axis(0)).unwrap();
        let cb = p.slice(ndarray::s![40.., ..]).mean_axis(Axis(0)).unwrap();
        let xa = x.slice(ndarray::s![..40, ..]).mean_axis(Axis(0)).unwrap();
        let xb = x.slice(ndarray::s![40.., ..]).mean_axis(Axis(0)).unwrap();
        let d2 = sq_dist(ca.view(), cb.view()).sqrt();
        let d16 = sq_dist(xa.view(), xb.view()).sqrt();
        assert!(d2 >= 0.5 * d16, "{d2} vs {d16}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_columns_uncorrelated(seed in any::<u64>(), n in 3usize..30, d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
            let p = project_2d(x.view()).unwrap();
            let c = p.t().dot(&p) / n as f64;
            prop_assert!(c[[0, 1]].abs() <= 1e-8);
            prop_assert!(c[[0, 0]] + 1e-12 >= c[[1, 1]]);
        }

        #[test]
        fn mmd_symmetric_and_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
            let b = Array2::from_shape_fn((5, 3), |_| rng.random_range(0.0..2.0));
            let f = |x: &Array2<f64>, y: &Array2<f64>| {
                mmd_rbf(x.view(), y.view(), Bandwidth::Median, MmdEstimator::Biased, Exec::Sequential).unwrap()
            };
            let ab = f(&a, &b);
            prop_assert!((ab - f(&b, &a)).abs() <= 1e-12);
            let a_perm = a.select(Axis(0), &[5, 3, 1, 0, 2, 4]);
            prop_assert!((ab - f(&a_perm, &b)).abs() <= 1e-12);
            let par = mmd_rbf(a.view(), b.view(), Bandwidth::Median, MmdEstimator::Biased, Exec::Parallel).unwrap();
            prop_assert_eq!(ab, par);
        }
    }
}
