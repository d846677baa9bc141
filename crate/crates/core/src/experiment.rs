//! Config-driven experiments: multi-seed runs, on-disk artifacts, evaluation
//! of finished runs and result tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::evaluation::{class_scatter, mmd_rbf, project_2d, Bandwidth, EvalReport, MmdEstimator};
use crate::graph::{
    corrupt_attributes, generate_shift_pair, load_graph, save_graph, write_file, AttributedGraph,
    DomainPair, ShiftPairConfig,
};
use crate::objectives::LossReport;
use crate::par::{map_with_jobs, Exec};
use crate::training::{
    initial_params, predict_target, prepare, pretrain_private, train_prepared, Ablation,
    TrainConfig, TrainHistory,
};

pub const RESULTS_FILE: &str = "results.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EVAL_FILE: &str = "eval.json";
pub const PROJECTION_FILE: &str = "projection.tsv";
pub const SOURCE_EMBEDDINGS_FILE: &str = "embeddings_source.tsv";
pub const TARGET_EMBEDDINGS_FILE: &str = "embeddings_target.tsv";
pub const DIFFUSION_FILE: &str = "diffusion.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub flip_ones: f64,
    pub flip_zeros: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub generator: ShiftPairConfig,
    pub source_corruption: Option<Corruption>,
    pub target_corruption: Option<Corruption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: PathBuf,
    pub target: PathBuf,
}

/// One experiment: a domain pair, training hyperparameters, ablation
/// switches and the number of seeds. Run `k` trains with seed `seed + k`;
/// synthetic pairs are regenerated with generator and corruption seeds
/// offset by `k` as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub dataset: Option<DatasetSpec>,
    pub synthetic: Option<SyntheticSpec>,
    pub train: TrainConfig,
    pub ablation: Ablation,
    pub num_seeds: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub dump_diffusion: bool,
    pub export_embeddings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            dataset: None,
            synthetic: None,
            train: TrainConfig::default(),
            ablation: Ablation::default(),
            num_seeds: 1,
            seed: 0,
            output_dir: None,
            dump_diffusion: false,
            export_embeddings: true,
        }
    }
}

/// A domain pair together with the target's held-out truth.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub pair: DomainPair,
    pub target_truth: Vec<Option<usize>>,
    pub name: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.ablation.label())
    }

    /// Checks every invariant that can fail before any computation starts.
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "both a dataset and a synthetic block are present".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of a dataset or a synthetic block is required".into(),
                ))
            }
            (Some(d), None) => {
                for dir in [&d.source, &d.target] {
                    if !dir.join("manifest.json").is_file() {
                        return Err(Error::Config(format!(
                            "dataset directory {} has no manifest.json",
                            dir.display()
                        )));
                    }
                }
            }
            (None, Some(s)) => {
                for c in [&s.source_corruption, &s.target_corruption]
                    .into_iter()
                    .flatten()
                {
                    if !(0.0..=1.0).contains(&c.flip_ones) || !(0.0..=1.0).contains(&c.flip_zeros) {
                        return Err(Error::Config(format!(
                            "corruption rates {} / {} outside [0, 1]",
                            c.flip_ones, c.flip_zeros
                        )));
                    }
                }
            }
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Training config of run `k`.
    pub fn train_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            seed: self.seed + k as u64,
            ablation: self.ablation,
            ..self.train.clone()
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|k| self.seed + k).collect()
    }

    /// The domain pair of run `k`, target labels moved into `target_truth`.
    pub fn load_pair(&self, k: usize) -> Result<LoadedPair> {
        if let Some(d) = &self.dataset {
            let source = load_graph(&d.source)?;
            let target = load_graph(&d.target)?;
            let (pair, target_truth) = DomainPair::with_held_out_target(source, target)?;
            let name = format!("{}->{}", dir_label(&d.source), dir_label(&d.target));
            return Ok(LoadedPair {
                pair,
                target_truth,
                name,
            });
        }
        let spec = self
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::Config("no pair configured".into()))?;
        let (source, target) = synthetic_graphs(spec, k as u64)?;
        let (pair, target_truth) = DomainPair::with_held_out_target(source, target)?;
        let g = &spec.generator;
        Ok(LoadedPair {
            pair,
            target_truth,
            name: format!("synthetic h{}->h{}", g.homophily_source, g.homophily_target),
        })
    }
}

fn dir_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Both synthetic graphs with labels still attached, seeds offset by `k`.
pub fn synthetic_graphs(
    spec: &SyntheticSpec,
    k: u64,
) -> Result<(AttributedGraph, AttributedGraph)> {
    let generator = ShiftPairConfig {
        seed: spec.generator.seed + k,
        ..spec.generator.clone()
    };
    let generated = generate_shift_pair(&generator)?;
    let target = AttributedGraph::new(
        generated.pair.target().adjacency().clone(),
        generated.pair.target().features().clone(),
        generated.target_truth,
        generated.pair.num_classes(),
    )?;
    let corrupt = |g: &AttributedGraph, c: &Option<Corruption>| match c {
        Some(c) => corrupt_attributes(g, c.flip_ones, c.flip_zeros, c.seed + k),
        None => Ok(g.clone()),
    };
    Ok((
        corrupt(generated.pair.source(), &spec.source_corruption)?,
        corrupt(&target, &spec.target_corruption)?,
    ))
}

/// Writes the synthetic pair of run 0 as `dir/source` and `dir/target`.
pub fn write_synthetic_pair(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<()> {
    let (source, target) = synthetic_graphs(spec, 0)?;
    save_graph(&source, dir.as_ref().join("source"))?;
    save_graph(&target, dir.as_ref().join("target"))
}

/// Summary of one seed, stored as the run directory's `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub pair: String,
    pub run_index: usize,
    pub seed: u64,
    pub target_accuracy: Option<f64>,
    pub final_mmd: f64,
    pub final_loss: Option<LossReport>,
    pub epochs: usize,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_dir: String,
    pub seed: u64,
    pub target_accuracy: Option<f64>,
    pub wall_clock_seconds: f64,
}

/// Aggregate over seeds, stored as the experiment directory's `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub name: String,
    pub pair: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunEntry>,
    pub mean_target_accuracy: Option<f64>,
    /// Sample standard deviation; 0 for a single run.
    pub std_target_accuracy: Option<f64>,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

/// Everything one seed produced, kept in memory for callers.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub history: TrainHistory,
    pub eval: Option<EvalReport>,
}

pub fn run_dir_name(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Accuracy over the labeled part of `truth`; `None` when nothing is labeled.
pub fn labeled_accuracy(predicted: &[usize], truth: &[Option<usize>]) -> Option<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        if let Some(t) = t {
            total += 1;
            correct += usize::from(p == t);
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every seed, writing per-seed directories under `out` plus the aggregate.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> Result<(ExperimentResults, Vec<RunOutput>)> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outputs: Vec<Result<RunOutput>> =
        map_with_jobs((0..config.num_seeds).collect(), jobs, |k| {
            run_seed(config, k, &out.join(run_dir_name(config.seed + k as u64)))
        });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    let accs: Option<Vec<f64>> = outputs.iter().map(|o| o.result.target_accuracy).collect();
    let stats = accs.map(|a| mean_std(&a));
    let results = ExperimentResults {
        name: config.name(),
        pair: outputs[0].result.pair.clone(),
        seeds: config.seeds(),
        runs: outputs
            .iter()
            .map(|o| RunEntry {
                run_dir: run_dir_name(o.result.seed),
                seed: o.result.seed,
                target_accuracy: o.result.target_accuracy,
                wall_clock_seconds: o.result.wall_clock_seconds,
            })
            .collect(),
        mean_target_accuracy: stats.map(|s| s.0),
        std_target_accuracy: stats.map(|s| s.1),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    write_json(&out.join(RESULTS_FILE), &results)?;
    Ok((results, outputs))
}

/// Trains run `k` and writes its artifacts into `dir`.
pub fn run_seed(config: &ExperimentConfig, k: usize, dir: &Path) -> Result<RunOutput> {
    let started = Instant::now();
    let loaded = config.load_pair(k)?;
    let train = config.train_config(k);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prepared = prepare(&loaded.pair, &train)?;
    if config.dump_diffusion {
        if let Some((ds, dt)) = &prepared.diffusion {
            for (side, d) in [("source", ds), ("target", dt)] {
                let sub = dir.join(side);
                fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
                d.dump_tsv(sub.join(DIFFUSION_FILE))?;
            }
        }
    }
    let fully_labeled = loaded.target_truth.iter().all(Option::is_some);
    let diagnostics = fully_labeled.then_some(loaded.target_truth.as_slice());
    let outcome = train_prepared(prepared, &train, diagnostics)?;

    let predicted = predict_target(&outcome.params, outcome.target_embedding.values.view());
    let target_accuracy = labeled_accuracy(&predicted, &loaded.target_truth);
    let final_mmd = mmd_rbf(
        outcome.source_embedding.values.view(),
        outcome.target_embedding.values.view(),
        Bandwidth::Median,
        MmdEstimator::Biased,
        Exec::default(),
    )?;

    write_metrics(&dir.join(METRICS_FILE), &outcome.history)?;
    checkpoint::save(dir.join(CHECKPOINT_FILE), &outcome.params.named_tensors())?;
    if config.export_embeddings {
        write_embeddings(
            &dir.join(SOURCE_EMBEDDINGS_FILE),
            outcome.source_embedding.values.view(),
        )?;
        write_embeddings(
            &dir.join(TARGET_EMBEDDINGS_FILE),
            outcome.target_embedding.values.view(),
        )?;
    }
    let eval = if target_accuracy.is_some() {
        let (report, projection) = evaluate_embeddings(
            &outcome.params,
            outcome.source_embedding.values.view(),
            outcome.target_embedding.values.view(),
            &loaded.target_truth,
            loaded.pair.num_classes(),
        )?;
        write_json(&dir.join(EVAL_FILE), &report)?;
        write_projection(
            &dir.join(PROJECTION_FILE),
            projection.view(),
            &loaded.target_truth,
        )?;
        Some(report)
    } else {
        None
    };

    let result = RunResult {
        name: config.name(),
        pair: loaded.name,
        run_index: k,
        seed: train.seed,
        target_accuracy,
        final_mmd,
        final_loss: outcome.history.epochs.last().map(|r| r.loss),
        epochs: outcome.history.len(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    write_json(&dir.join(RESULTS_FILE), &result)?;
    Ok(RunOutput {
        result,
        history: outcome.history,
        eval,
    })
}

/// Accuracy, final MMD, per-class scatter and the 2-d projection of the target embedding.
pub fn evaluate_embeddings(
    params: &EncoderParams,
    source: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    truth: &[Option<usize>],
    num_classes: usize,
) -> Result<(EvalReport, Array2<f64>)> {
    if truth.len() != target.nrows() {
        return Err(Error::Shape(format!(
            "{} truth labels for {} target embeddings",
            truth.len(),
            target.nrows()
        )));
    }
    let predicted = predict_target(params, target);
    let target_accuracy = labeled_accuracy(&predicted, truth)
        .ok_or_else(|| Error::Label("evaluation needs labeled target nodes".into()))?;
    let mmd = mmd_rbf(
        source,
        target,
        Bandwidth::Median,
        MmdEstimator::Biased,
        Exec::default(),
    )?;
    let per_class = class_scatter(target, truth, num_classes, None)?;
    let mut metadata = serde_json::Map::new();
    metadata.insert("num_source".into(), source.nrows().into());
    metadata.insert("num_target".into(), target.nrows().into());
    metadata.insert("embedding_dim".into(), target.ncols().into());
    metadata.insert(
        "num_labeled_target".into(),
        truth.iter().filter(|t| t.is_some()).count().into(),
    );
    let projection = project_2d(target)?;
    Ok((
        EvalReport {
            target_accuracy,
            mmd,
            per_class,
            metadata,
        },
        projection,
    ))
}

/// Re-evaluates a finished run directory from its checkpoint and embedding files.
pub fn evaluate_run_dir(dir: &Path) -> Result<EvalReport> {
    let result: RunResult = read_json(&dir.join(RESULTS_FILE))?;
    let loaded = result.config.load_pair(result.run_index)?;
    let params = EncoderParams::from_named_tensors(checkpoint::load(dir.join(CHECKPOINT_FILE))?)?;
    let source = read_embeddings(&dir.join(SOURCE_EMBEDDINGS_FILE))?;
    let target = read_embeddings(&dir.join(TARGET_EMBEDDINGS_FILE))?;
    let (mut report, projection) = evaluate_embeddings(
        &params,
        source.view(),
        target.view(),
        &loaded.target_truth,
        loaded.pair.num_classes(),
    )?;
    report.metadata.insert("seed".into(), result.seed.into());
    report.metadata.insert("pair".into(), loaded.name.into());
    write_json(&dir.join(EVAL_FILE), &report)?;
    write_projection(
        &dir.join(PROJECTION_FILE),
        projection.view(),
        &loaded.target_truth,
    )?;
    Ok(report)
}

/// Pretrains the private encoders of run 0 and writes their losses, embeddings and parameters.
pub fn run_pretrain(config: &ExperimentConfig, out: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let loaded = config.load_pair(0)?;
    let mut train = config.train_config(0);
    train.ablation.disable_diffusion = true;
    let prepared = prepare(&loaded.pair, &train)?;
    let init = initial_params(&prepared, &train);
    let (s, t) = pretrain_private(&prepared, &train, &init)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("gie_losses.csv"), |w| {
        writeln!(w, "epoch,source,target")?;
        for (i, (a, b)) in s.losses.iter().zip(&t.losses).enumerate() {
            writeln!(w, "{},{a},{b}", i + 1)?;
        }
        Ok(())
    })?;
    write_embeddings(
        &out.join("gie_embeddings_source.tsv"),
        s.embedding.values.view(),
    )?;
    write_embeddings(
        &out.join("gie_embeddings_target.tsv"),
        t.embedding.values.view(),
    )?;
    let mut tensors = Vec::new();
    for (prefix, p) in [("gie_source", &s.params), ("gie_target", &t.params)] {
        for (i, w) in p.stack.weights.iter().enumerate() {
            tensors.push((format!("{prefix}.weight{i}"), w));
        }
        for (i, b) in p.stack.biases.iter().flatten().enumerate() {
            tensors.push((format!("{prefix}.bias{i}"), b));
        }
        tensors.push((format!("{prefix}.discriminator"), &p.discriminator));
    }
    checkpoint::save(out.join(CHECKPOINT_FILE), &tensors)?;
    Ok((s.losses, t.losses))
}

/// Diffuses both graphs of run 0 into `out/source` and `out/target`.
pub fn run_diffuse(config: &ExperimentConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let loaded = config.load_pair(0)?;
    let mut train = config.train_config(0);
    train.ablation.disable_diffusion = false;
    let prepared = prepare(&loaded.pair, &train)?;
    let (ds, dt) = prepared.diffusion.expect("diffusion enabled above");
    for (side, d) in [("source", ds), ("target", dt)] {
        let sub = out.join(side);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        d.dump_tsv(sub.join(DIFFUSION_FILE))?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics(path: &Path, history: &TrainHistory) -> Result<()> {
    write_file(path, |w| {
        writeln!(
            w,
            "epoch,l_wass,l_oi,l_cls,l_entropy,eta,total,target_acc,mmd"
        )?;
        for r in &history.epochs {
            let l = &r.loss;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                l.l_wass,
                l.l_oi,
                l.l_cls,
                l.l_entropy,
                l.eta,
                l.total,
                fmt_opt(r.target_accuracy),
                fmt_opt(r.mmd)
            )?;
        }
        Ok(())
    })
}

/// `(epoch, target_acc, mmd)`.
pub type MetricRow = (usize, Option<f64>, Option<f64>);

/// Plot-series rows of a `metrics.csv`.
pub fn read_metric_series(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::IncompleteResults(format!("missing {}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Format(format!("{}: no {name} column", path.display())))
    };
    let (ce, ca, cm) = (col("epoch")?, col("target_acc")?, col("mmd")?);
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("{}: bad value {s:?}", path.display())))
        }
    };
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Format(format!(
                "{}: ragged row {line:?}",
                path.display()
            )));
        }
        let epoch = cells[ce]
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad epoch {:?}", path.display(), cells[ce])))?;
        rows.push((epoch, parse_opt(cells[ca])?, parse_opt(cells[cm])?));
    }
    Ok(rows)
}

pub fn write_embeddings(path: &Path, x: ArrayView2<'_, f64>) -> Result<()> {
    write_file(path, |w| {
        for (i, row) in x.rows().into_iter().enumerate() {
            write!(w, "{i}")?;
            for v in row {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn read_embeddings(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = || Error::Format(format!("{} line {}", path.display(), lineno + 1));
        let mut cells = line.split('\t');
        let id: usize = cells.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let values = cells
            .map(|s| s.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, values));
    }
    rows.sort_by_key(|r| r.0);
    let d = rows.first().map_or(0, |r| r.1.len());
    for (expected, (id, values)) in rows.iter().enumerate() {
        if *id != expected || values.len() != d {
            return Err(Error::Format(format!(
                "{}: node ids must be 0..n with {d} values each",
                path.display()
            )));
        }
    }
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.1).collect();
    Array2::from_shape_vec((flat.len() / d.max(1), d), flat)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_projection(path: &Path, p: ArrayView2<'_, f64>, labels: &[Option<usize>]) -> Result<()> {
    write_file(path, |w| {
        for (i, row) in p.rows().into_iter().enumerate() {
            let label = labels[i].map_or(-1, |l| l as i64);
            writeln!(w, "{i}\t{}\t{}\t{label}", row[0], row[1])?;
        }
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::IncompleteResults(format!("missing {}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Experiment directories under `root`: `root` itself when it holds an
/// aggregate, otherwise its immediate subdirectories that do.
pub fn find_experiments(root: &Path) -> Result<Vec<(PathBuf, ExperimentResults)>> {
    let own = root.join(RESULTS_FILE);
    if own.is_file() {
        if let Ok(r) = read_json::<ExperimentResults>(&own) {
            return Ok(vec![(root.to_path_buf(), r)]);
        }
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RESULTS_FILE).is_file())
        .collect();
    dirs.sort();
    let mut found = Vec::new();
    for d in dirs {
        if let Ok(r) = read_json::<ExperimentResults>(&d.join(RESULTS_FILE)) {
            found.push((d, r));
        }
    }
    if found.is_empty() {
        return Err(Error::IncompleteResults(format!(
            "no experiment results under {}",
            root.display()
        )));
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",") + "\n";
        for r in &self.rows {
            s += &(r.join(",") + "\n");
        }
        s
    }

    pub fn to_aligned(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut s = line(&self.header);
        s += &(widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .join("  ")
            + "\n");
        for r in &self.rows {
            s += &line(r);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TableSet {
    pub accuracy: Table,
    pub ablation: Table,
    pub series: Vec<(String, Vec<MetricRow>)>,
}

fn fmt_acc(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Builds the accuracy table, the ablation grid and the per-run series from
/// the experiments under `root`.
pub fn collect_tables(root: &Path) -> Result<TableSet> {
    let experiments = find_experiments(root)?;
    let mut accuracy = Table {
        header: [
            "experiment",
            "pair",
            "seeds",
            "mean_accuracy",
            "std_accuracy",
        ]
        .map(String::from)
        .to_vec(),
        rows: Vec::new(),
    };
    let mut names: Vec<String> = Vec::new();
    let mut grid: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    let mut pair_order: Vec<String> = Vec::new();
    let mut series = Vec::new();
    for (dir, r) in &experiments {
        for run in &r.runs {
            let run_dir = dir.join(&run.run_dir);
            if !run_dir.join(RESULTS_FILE).is_file() {
                return Err(Error::IncompleteResults(format!(
                    "missing {}",
                    run_dir.join(RESULTS_FILE).display()
                )));
            }
            let rows = read_metric_series(&run_dir.join(METRICS_FILE))?;
            let label = format!("{}_seed{}", slug(&dir_label(dir)), run.seed);
            series.push((label, rows));
        }
        accuracy.rows.push(vec![
            r.name.clone(),
            r.pair.clone(),
            r.runs.len().to_string(),
            fmt_acc(r.mean_target_accuracy),
            fmt_acc(r.std_target_accuracy),
        ]);
        if !names.contains(&r.name) {
            names.push(r.name.clone());
        }
        if !pair_order.contains(&r.pair) {
            pair_order.push(r.pair.clone());
        }
        grid.entry(r.pair.clone())
            .or_default()
            .insert(r.name.clone(), r.mean_target_accuracy);
    }
    let mut header = vec!["pair".to_string()];
    header.extend(names.iter().cloned());
    let rows = pair_order
        .iter()
        .map(|p| {
            let mut row = vec![p.clone()];
            row.extend(
                names
                    .iter()
                    .map(|n| fmt_acc(grid[p].get(n).copied().flatten())),
            );
            row
        })
        .collect();
    Ok(TableSet {
        accuracy,
        ablation: Table { header, rows },
        series,
    })
}

/// Writes `tables/*.csv`, aligned `tables/*.txt` and `series/*.csv` under `root`.
pub fn emit_tables(root: &Path) -> Result<TableSet> {
    let set = collect_tables(root)?;
    let tables = root.join("tables");
    let series = root.join("series");
    for d in [&tables, &series] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (name, t) in [("accuracy", &set.accuracy), ("ablation", &set.ablation)] {
        let csv = tables.join(format!("{name}.csv"));
        fs::write(&csv, t.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = tables.join(format!("{name}.txt"));
        fs::write(&txt, t.to_aligned()).map_err(|e| Error::io(&txt, e))?;
    }
    for (label, rows) in &set.series {
        write_file(&series.join(format!("{label}.csv")), |w| {
            writeln!(w, "epoch,target_acc,mmd")?;
            for (e, a, m) in rows {
                writeln!(w, "{e},{},{}", fmt_opt(*a), fmt_opt(*m))?;
            }
            Ok(())
        })?;
    }
    Ok(set)
}
