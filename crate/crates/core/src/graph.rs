//! Attributed graphs, dataset directories, synthetic domain pairs and the
//! attribute-flip corruption protocol.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Csr;

/// Label file value for nodes without a label.
pub const UNLABELED: i64 = -1;

const SYMMETRY_TOL: f64 = 1e-12;

/// Undirected, unweighted graph with dense node attributes and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    adjacency: Csr,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl AttributedGraph {
    pub fn new(
        adjacency: Csr,
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = adjacency.n_rows();
        if adjacency.n_cols() != n {
            return Err(Error::Shape(format!(
                "adjacency is {}x{}",
                n,
                adjacency.n_cols()
            )));
        }
        if features.nrows() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "{} nodes but {} feature rows and {} labels",
                n,
                features.nrows(),
                labels.len()
            )));
        }
        if adjacency.asymmetry() > SYMMETRY_TOL {
            return Err(Error::Format("adjacency is not symmetric".into()));
        }
        if let Some((i, _, _)) = adjacency.triplets().find(|&(i, j, _)| i == j) {
            return Err(Error::Format(format!("self-loop at node {i}")));
        }
        if adjacency.triplets().any(|(_, _, v)| v < 0.0) {
            return Err(Error::Format("negative edge weight".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite feature value".into()));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= num_classes) {
            return Err(Error::Label(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(AttributedGraph {
            adjacency,
            features,
            labels,
            num_classes,
        })
    }

    /// Builds an unweighted graph from an undirected edge list. Duplicates and
    /// reversed duplicates collapse to a single edge of weight 1.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let adjacency = adjacency_from_edges(num_nodes, edges)?;
        Self::new(adjacency, features, labels, num_classes)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.n_rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .triplets()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    pub fn is_unlabeled(&self) -> bool {
        self.labels.iter().all(Option::is_none)
    }

    /// Copy with every label replaced by the unlabeled sentinel.
    pub fn without_labels(&self) -> Self {
        AttributedGraph {
            labels: vec![None; self.num_nodes()],
            ..self.clone()
        }
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(
            self.adjacency.clone(),
            features,
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Fraction of edges whose endpoints share a label (labeled endpoints only).
    pub fn edge_homophily(&self) -> f64 {
        let (mut same, mut total) = (0usize, 0usize);
        for (i, j) in self.edges() {
            if let (Some(a), Some(b)) = (self.labels[i], self.labels[j]) {
                total += 1;
                same += usize::from(a == b);
            }
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }
}

fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Csr> {
    let mut t = Vec::with_capacity(edges.len() * 2);
    for &(i, j) in edges {
        for k in [i, j] {
            if k >= n {
                return Err(Error::Index {
                    index: k,
                    num_nodes: n,
                });
            }
        }
        if i == j {
            return Err(Error::Format(format!("self-loop at node {i}")));
        }
        t.push((i, j, 1.0));
        t.push((j, i, 1.0));
    }
    t.sort_by_key(|e| (e.0, e.1));
    t.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    Ok(Csr::from_triplets(n, n, &t))
}

/// A labeled source graph and an unlabeled target graph over a shared label space.
///
/// The target graph never carries labels; ground truth for evaluation is kept
/// by the caller.
#[derive(Debug, Clone)]
pub struct DomainPair {
    source: AttributedGraph,
    target: AttributedGraph,
}

impl DomainPair {
    pub fn new(source: AttributedGraph, target: AttributedGraph) -> Result<Self> {
        if source.num_classes() != target.num_classes() {
            return Err(Error::Parameter(format!(
                "source has {} classes, target {}",
                source.num_classes(),
                target.num_classes()
            )));
        }
        if !source.is_fully_labeled() {
            return Err(Error::Label("source graph must be fully labeled".into()));
        }
        if !target.is_unlabeled() {
            return Err(Error::Firewall(
                "target graph carries labels; strip them before building a domain pair".into(),
            ));
        }
        Ok(DomainPair { source, target })
    }

    /// Splits a labeled target into the label-free pair and its held-out truth.
    pub fn with_held_out_target(
        source: AttributedGraph,
        target: AttributedGraph,
    ) -> Result<(Self, Vec<Option<usize>>)> {
        let truth = target.labels().to_vec();
        let pair = Self::new(source, target.without_labels())?;
        Ok((pair, truth))
    }

    pub fn source(&self) -> &AttributedGraph {
        &self.source
    }

    pub fn target(&self) -> &AttributedGraph {
        &self.target
    }

    pub fn num_classes(&self) -> usize {
        self.source.num_classes()
    }

    pub fn source_labels(&self) -> Vec<usize> {
        self.source
            .labels()
            .iter()
            .map(|l| l.expect("source is fully labeled"))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    #[serde(default)]
    sparse: bool,
}

/// Reads `manifest.json`, `edges.tsv`, `features.tsv` and `labels.tsv` from `dir`.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<AttributedGraph> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<String> {
        let path = dir.join(name);
        fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))
    };
    let manifest: Manifest = serde_json::from_str(&read("manifest.json")?)
        .map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    let n = manifest.num_nodes;

    let mut edges = Vec::new();
    for (lineno, line) in read("edges.tsv")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let mut next = || -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("edges.tsv line {}: {line:?}", lineno + 1)))
        };
        let (i, j) = (next()?, next()?);
        edges.push((i, j));
    }

    let f = manifest.num_features;
    let mut features = Array2::zeros((n, f));
    let feature_text = read("features.tsv")?;
    let rows: Vec<&str> = feature_text.lines().collect();
    if rows.len() != n {
        return Err(Error::Format(format!(
            "features.tsv has {} rows, expected {n}",
            rows.len()
        )));
    }
    let bad_value = |r: usize| Error::Format(format!("features.tsv row {}", r + 1));
    for (r, line) in rows.iter().enumerate() {
        let cells = line.split('\t').filter(|s| !s.is_empty());
        if manifest.sparse {
            for cell in cells {
                let (k, v) = cell.split_once(':').ok_or_else(|| bad_value(r))?;
                let k: usize = k.parse().map_err(|_| bad_value(r))?;
                let v: f64 = v.parse().map_err(|_| bad_value(r))?;
                if k >= f {
                    return Err(Error::Format(format!(
                        "features.tsv row {}: attribute {k} >= {f}",
                        r + 1
                    )));
                }
                features[[r, k]] = v;
            }
        } else {
            let values: Vec<f64> = cells
                .map(|c| c.parse().map_err(|_| bad_value(r)))
                .collect::<Result<_>>()?;
            if values.len() != f {
                return Err(Error::Format(format!(
                    "features.tsv row {} has {} values, expected {f}",
                    r + 1,
                    values.len()
                )));
            }
            features.row_mut(r).assign(&ndarray::Array1::from(values));
        }
    }

    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in read("labels.tsv")?.lines().enumerate() {
        let v: i64 = line
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("labels.tsv line {}: {line:?}", lineno + 1)))?;
        labels.push(match v {
            UNLABELED => None,
            v if v >= 0 => Some(v as usize),
            _ => {
                return Err(Error::Format(format!(
                    "labels.tsv line {}: {v}",
                    lineno + 1
                )))
            }
        });
    }
    if labels.len() != n {
        return Err(Error::Format(format!(
            "labels.tsv has {} rows, expected {n}",
            labels.len()
        )));
    }
    AttributedGraph::from_edges(n, &edges, features, labels, manifest.num_classes)
}

/// Writes `graph` to `dir` in the layout read by [`load_graph`]. Feature rows
/// are written sparsely when fewer than a quarter of the entries are nonzero.
pub fn save_graph(graph: &AttributedGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let nonzeros = graph.features.iter().filter(|v| **v != 0.0).count();
    let sparse = 4 * nonzeros < graph.features.len();
    let manifest = Manifest {
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes,
        sparse,
    };
    write_file(&dir.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    write_file(&dir.join("edges.tsv"), |w| {
        for (i, j) in graph.edges() {
            writeln!(w, "{i}\t{j}")?;
        }
        Ok(())
    })?;
    write_file(&dir.join("features.tsv"), |w| {
        for row in graph.features.rows() {
            let cells: Vec<String> = if sparse {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect()
            } else {
                row.iter().map(|v| v.to_string()).collect()
            };
            writeln!(w, "{}", cells.join("\t"))?;
        }
        Ok(())
    })?;
    write_file(&dir.join("labels.tsv"), |w| {
        for l in &graph.labels {
            writeln!(w, "{}", l.map_or(UNLABELED, |l| l as i64))?;
        }
        Ok(())
    })
}

pub(crate) fn write_file(
    path: &Path,
    body: impl FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parameters of the two-block-model domain pair generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftPairConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub num_classes: usize,
    pub homophily_source: f64,
    pub homophily_target: f64,
    pub feature_dim: usize,
    /// Expected mean degree of both graphs.
    pub avg_degree: f64,
    /// Probability that an attribute in a node's class band is active.
    pub band_prob: f64,
    /// Probability that any other attribute is active.
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for ShiftPairConfig {
    fn default() -> Self {
        ShiftPairConfig {
            n_source: 600,
            n_target: 600,
            num_classes: 4,
            homophily_source: 0.9,
            homophily_target: 0.2,
            feature_dim: 64,
            avg_degree: 8.0,
            band_prob: 0.3,
            noise_prob: 0.05,
            seed: 0,
        }
    }
}

/// A generated pair plus the target's held-out labels.
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub pair: DomainPair,
    pub target_truth: Vec<Option<usize>>,
}

/// Stream ids keep source and target draws independent under one seed.
const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

pub fn generate_shift_pair(config: &ShiftPairConfig) -> Result<GeneratedPair> {
    let c = config.num_classes;
    if c == 0 {
        return Err(Error::Parameter("num_classes must be at least 1".into()));
    }
    for (name, p) in [
        ("band_prob", config.band_prob),
        ("noise_prob", config.noise_prob),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let source = block_model_graph(
        config,
        config.n_source,
        config.homophily_source,
        SOURCE_STREAM,
    )?;
    let target = block_model_graph(
        config,
        config.n_target,
        config.homophily_target,
        TARGET_STREAM,
    )?;
    let (pair, target_truth) = DomainPair::with_held_out_target(source, target)?;
    Ok(GeneratedPair { pair, target_truth })
}

/// Class of node `i` when `n` nodes are split into `c` near-equal contiguous blocks.
fn block_of(i: usize, n: usize, c: usize) -> usize {
    (i * c) / n
}

/// Within- and cross-block edge probabilities realizing `homophily` at the
/// configured mean degree.
pub fn block_probabilities(
    n: usize,
    num_classes: usize,
    homophily: f64,
    avg_degree: f64,
) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&homophily) {
        return Err(Error::Parameter(format!(
            "homophily {homophily} outside [0, 1]"
        )));
    }
    let mut sizes = vec![0usize; num_classes];
    for i in 0..n {
        sizes[block_of(i, n, num_classes)] += 1;
    }
    if sizes.iter().any(|&s| s < 2) {
        return Err(Error::Parameter(format!(
            "{n} nodes over {num_classes} classes leaves a block with fewer than 2 nodes"
        )));
    }
    let pairs = |m: usize| (m * (m - 1) / 2) as f64;
    let within: f64 = sizes.iter().map(|&m| pairs(m)).sum();
    let cross = pairs(n) - within;
    let expected_edges = n as f64 * avg_degree / 2.0;
    let p_in = homophily * expected_edges / within;
    let p_out = if cross > 0.0 {
        (1.0 - homophily) * expected_edges / cross
    } else if homophily < 1.0 {
        f64::INFINITY
    } else {
        0.0
    };
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "homophily {homophily} at mean degree {avg_degree} needs {name} = {p}"
            )));
        }
    }
    Ok((p_in, p_out))
}

fn block_model_graph(
    config: &ShiftPairConfig,
    n: usize,
    homophily: f64,
    stream: u64,
) -> Result<AttributedGraph> {
    let c = config.num_classes;
    let (p_in, p_out) = block_probabilities(n, c, homophily, config.avg_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let labels: Vec<usize> = (0..n).map(|i| block_of(i, n, c)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let f = config.feature_dim;
    let mut features = Array2::zeros((n, f));
    for i in 0..n {
        let band = band_range(labels[i], c, f);
        for k in 0..f {
            let p = if band.contains(&k) {
                config.band_prob
            } else {
                config.noise_prob
            };
            if rng.random::<f64>() < p {
                features[[i, k]] = 1.0;
            }
        }
    }
    AttributedGraph::from_edges(
        n,
        &edges,
        features,
        labels.into_iter().map(Some).collect(),
        c,
    )
}

/// Attribute indices reserved for class `k`.
fn band_range(k: usize, c: usize, f: usize) -> std::ops::Range<usize> {
    (k * f) / c..((k + 1) * f) / c
}

/// Flips `⌊flip_ones·#ones⌋` ones to zero and `⌊flip_zeros·#zeros⌋` zeros to
/// one, positions drawn without replacement over the whole feature matrix.
pub fn corrupt_attributes(
    graph: &AttributedGraph,
    flip_ones: f64,
    flip_zeros: f64,
    seed: u64,
) -> Result<AttributedGraph> {
    for (name, r) in [("flip_ones", flip_ones), ("flip_zeros", flip_zeros)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Parameter(format!("{name} = {r} outside [0, 1]")));
        }
    }
    let x = graph.features();
    let flat = x
        .as_slice()
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| x.iter().copied().collect());
    let mut ones = Vec::new();
    let mut zeros = Vec::new();
    for (pos, &v) in flat.iter().enumerate() {
        if v == 1.0 {
            ones.push(pos);
        } else if v == 0.0 {
            zeros.push(pos);
        } else {
            return Err(Error::Type(format!(
                "attribute value {v} at flat position {pos} is not binary"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take_ones = (flip_ones * ones.len() as f64).floor() as usize;
    let take_zeros = (flip_zeros * zeros.len() as f64).floor() as usize;
    let mut out = flat;
    for k in index::sample(&mut rng, ones.len(), take_ones) {
        out[ones[k]] = 0.0;
    }
    for k in index::sample(&mut rng, zeros.len(), take_zeros) {
        out[zeros[k]] = 1.0;
    }
    let features = Array2::from_shape_vec(x.dim(), out).expect("shape preserved");
    graph.with_features(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_node() -> AttributedGraph {
        AttributedGraph::from_edges(
            2,
            &[(0, 1)],
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![Some(0), Some(1)],
            2,
        )
        .unwrap()
    }

    fn write_dataset(dir: &Path, edges: &str, features: &str, labels: &str, manifest: &str) {
        fs::write(dir.join("manifest.json"), manifest).unwrap();
        fs::write(dir.join("edges.tsv"), edges).unwrap();
        fs::write(dir.join("features.tsv"), features).unwrap();
        fs::write(dir.join("labels.tsv"), labels).unwrap();
    }

    const MANIFEST2: &str = r#"{"num_nodes": 2, "num_features": 2, "num_classes": 2}"#;

    #[test]
    fn load_minimal_graph() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "0\t1\n", "1\t0\n0\t1\n", "0\n1\n", MANIFEST2);
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.adjacency().to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(g, two_node());
    }

    #[test]
    fn load_rejects_self_loop() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "0\t0\n", "1\t0\n0\t1\n", "0\n1\n", MANIFEST2);
        let err = load_graph(dir.path()).unwrap_err();
        assert!(
            err.to_string().starts_with("format error: self-loop"),
            "{err}"
        );
    }

    #[test]
    fn load_rejects_out_of_range_index() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), "0\t2\n", "1\t0\n0\t1\n", "0\n1\n", MANIFEST2);
        assert!(matches!(
            load_graph(dir.path()),
            Err(Error::Index {
                index: 2,
                num_nodes: 2
            })
        ));
    }

    #[test]
    fn load_missing_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.json"), MANIFEST2).unwrap();
        assert!(matches!(load_graph(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn duplicate_edges_collapse() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(
            dir.path(),
            "0\t1\n1\t0\n0\t1\n",
            "1\t0\n0\t1\n",
            "0\n1\n",
            MANIFEST2,
        );
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.adjacency().get(0, 1), 1.0);
    }

    #[test]
    fn sparse_feature_rows() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = r#"{"num_nodes": 2, "num_features": 3, "num_classes": 2, "sparse": true}"#;
        write_dataset(dir.path(), "", "2:1.5\n\n", "-1\n1\n", manifest);
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.features(), &array![[0.0, 0.0, 1.5], [0.0, 0.0, 0.0]]);
        assert_eq!(g.labels(), &[None, Some(1)]);
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let g = AttributedGraph::from_edges(
            4,
            &[(0, 1), (2, 3), (1, 2)],
            array![[0.1, 1.0 / 3.0], [-2.5e-17, 7.0], [1e300, 0.0], [0.0, 0.0]],
            vec![Some(0), None, Some(1), Some(0)],
            2,
        )
        .unwrap();
        save_graph(&g, dir.path()).unwrap();
        assert_eq!(load_graph(dir.path()).unwrap(), g);
    }

    #[test]
    fn edgeless_graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = AttributedGraph::from_edges(3, &[], Array2::eye(3), vec![Some(0); 3], 1).unwrap();
        save_graph(&g, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("edges.tsv")).unwrap(),
            ""
        );
        assert_eq!(load_graph(dir.path()).unwrap(), g);
    }

    #[test]
    fn unlabeled_nodes_write_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let g = two_node().without_labels();
        save_graph(&g, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("labels.tsv")).unwrap(),
            "-1\n-1\n"
        );
    }

    #[test]
    fn corruption_identity_and_total_flip() {
        let g = two_node();
        assert_eq!(corrupt_attributes(&g, 0.0, 0.0, 3).unwrap(), g);

        let row =
            AttributedGraph::from_edges(1, &[], array![[1.0, 1.0, 1.0, 1.0]], vec![Some(0)], 1)
                .unwrap();
        let flipped = corrupt_attributes(&row, 1.0, 0.0, 9).unwrap();
        assert_eq!(flipped.features(), &array![[0.0, 0.0, 0.0, 0.0]]);
    }

    #[test]
    fn corruption_rejects_non_binary() {
        let g = AttributedGraph::from_edges(1, &[], array![[0.5]], vec![Some(0)], 1).unwrap();
        assert!(matches!(
            corrupt_attributes(&g, 0.3, 0.3, 0),
            Err(Error::Type(_))
        ));
    }

    #[test]
    fn corruption_flips_exact_counts() {
        let gen = generate_shift_pair(&ShiftPairConfig {
            n_source: 40,
            n_target: 40,
            feature_dim: 17,
            ..Default::default()
        })
        .unwrap();
        let g = gen.pair.source();
        let ones = g.features().iter().filter(|v| **v == 1.0).count();
        let zeros = g.features().len() - ones;
        let expected = (0.3 * ones as f64).floor() as usize + (0.3 * zeros as f64).floor() as usize;
        let a = corrupt_attributes(g, 0.3, 0.3, 42).unwrap();
        let b = corrupt_attributes(g, 0.3, 0.3, 42).unwrap();
        let hamming = a
            .features()
            .iter()
            .zip(g.features().iter())
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(hamming, expected);
        assert_eq!(a, b);
        assert_eq!(a.adjacency(), g.adjacency());
        assert_eq!(a.labels(), g.labels());
    }

    #[test]
    fn generator_hits_requested_homophily() {
        let cfg = ShiftPairConfig {
            homophily_source: 0.9,
            homophily_target: 0.1,
            seed: 5,
            ..Default::default()
        };
        let gen = generate_shift_pair(&cfg).unwrap();
        let hs = gen.pair.source().edge_homophily();
        let target_labeled = gen.pair.target().clone();
        let relabeled = AttributedGraph::new(
            target_labeled.adjacency().clone(),
            target_labeled.features().clone(),
            gen.target_truth.clone(),
            cfg.num_classes,
        )
        .unwrap();
        let ht = relabeled.edge_homophily();
        assert!((0.85..=0.95).contains(&hs), "source homophily {hs}");
        assert!((0.05..=0.15).contains(&ht), "target homophily {ht}");
        assert!(gen.pair.target().is_unlabeled());
    }

    #[test]
    fn generator_is_deterministic_and_symmetric() {
        let cfg = ShiftPairConfig {
            n_source: 50,
            n_target: 30,
            seed: 11,
            ..Default::default()
        };
        let a = generate_shift_pair(&cfg).unwrap();
        let b = generate_shift_pair(&cfg).unwrap();
        assert_eq!(a.pair.source(), b.pair.source());
        assert_eq!(a.pair.target(), b.pair.target());
        assert_eq!(a.pair.source().adjacency().asymmetry(), 0.0);
    }

    #[test]
    fn generator_rejects_infeasible_homophily() {
        let cfg = ShiftPairConfig {
            n_source: 8,
            n_target: 8,
            num_classes: 4,
            avg_degree: 6.0,
            homophily_source: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_shift_pair(&cfg),
            Err(Error::Parameter(_))
        ));
        let tiny = ShiftPairConfig {
            n_source: 6,
            ..Default::default()
        };
        assert!(matches!(
            generate_shift_pair(&tiny),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn pair_rejects_labeled_target() {
        let g = two_node();
        assert!(matches!(
            DomainPair::new(g.clone(), g),
            Err(Error::Firewall(_))
        ));
    }
}
