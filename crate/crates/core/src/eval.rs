//! Experiment protocols and metrics: label-fraction accuracy runs, the
//! grid-searched RBF kernel baseline, degree distributions, and
//! precision-recall curves.

use crate::dataset::{Dataset, ModeKind, PointSplit, split_points};
use crate::error::{Error, Result};
use crate::graph::{BuildConfig, Edge, Graph, build_graph, build_graph_all_pairs};
use crate::kv::KvFile;
use crate::lsh::SketchConfig;
use crate::model::{
    ModelArch, PairExample, TrainConfig, TwoTowerParams, eval_pair_loss, harvest_all_pairs,
    harvest_training_pairs, train,
};
use crate::propagate::{LabelScores, classify_one_shot};
use crate::seed::{component_rng, derive_seed};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Degree statistics for one status group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatusDegrees {
    pub node_count: usize,
    /// total degree -> node count
    pub degree_hist: BTreeMap<usize, usize>,
    /// same-status-neighbor degree -> node count
    pub same_status_degree_hist: BTreeMap<usize, usize>,
    pub frac_degree_zero: f64,
    pub frac_degree_positive: f64,
    /// degree > 0 counting only edges above the high-precision threshold
    pub frac_high_precision_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegreeReport {
    pub per_status: BTreeMap<usize, StatusDegrees>,
    pub high_precision_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Headline accuracy over hidden-label nodes; abstainers count as errors.
    pub accuracy: f64,
    /// Fraction of hidden-label nodes that received a prediction.
    pub coverage: f64,
    /// Accuracy restricted to the covered nodes.
    pub accuracy_covered: f64,
    pub pr_points: Vec<PrPoint>,
    pub degree: DegreeReport,
    pub runtime_ms: u64,
    /// Protocol-specific key/value annotations.
    pub details: Vec<(String, String)>,
}

impl ExperimentReport {
    /// Key-value rendering. Wall-clock runtime is deliberately omitted so
    /// report files stay byte-identical across reruns.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("accuracy", &format!("{:.6}", self.accuracy));
        kv.set("coverage", &format!("{:.6}", self.coverage));
        kv.set("accuracy_covered", &format!("{:.6}", self.accuracy_covered));
        for (k, v) in &self.details {
            kv.set(k, v);
        }
        kv
    }

    pub fn write_pr_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "threshold,precision,recall").map_err(|e| Error::io(path, e))?;
        for p in &self.pr_points {
            writeln!(w, "{:.9},{:.9},{:.9}", p.threshold, p.precision, p.recall)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn write_degree_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "status,kind,degree,count").map_err(|e| Error::io(path, e))?;
        for (status, stats) in &self.degree.per_status {
            for (deg, count) in &stats.degree_hist {
                writeln!(w, "{status},total,{deg},{count}").map_err(|e| Error::io(path, e))?;
            }
            for (deg, count) in &stats.same_status_degree_hist {
                writeln!(w, "{status},same_status,{deg},{count}")
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }
}

/// Everything the label-fraction protocol needs to run end to end.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub arch: ModelArch,
    pub train: TrainConfig,
    /// Used when the dataset is too large for all-pairs scoring.
    pub sketch: SketchConfig,
    pub build: BuildConfig,
    /// All-pairs scoring is used when V(V-1)/2 fits this budget.
    pub pair_budget: u64,
    /// Point-level holdout fraction inside the visible set.
    pub point_holdout_fraction: f64,
    /// Cap on harvested training pairs, subsampled label-proportionally.
    pub max_train_pairs: Option<usize>,
    /// Edge weight counted as high-precision in the degree report.
    pub high_precision_threshold: f64,
}

/// Outputs of one protocol run, including the artifacts needed by
/// leak-freedom audits.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub report: ExperimentReport,
    pub model: TwoTowerParams,
    pub graph: Graph,
}

/// Stratified visible-label sample shared by the protocol and the baseline,
/// so both see the same seed set for a given (dataset, fraction, seed).
pub fn sample_visible(dataset: &Dataset, label_fraction: f64, seed: u64) -> BTreeSet<String> {
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); dataset.class_count()];
    for p in dataset.points() {
        if let Some(label) = p.label {
            by_class[label].push(&p.id);
        }
    }
    let mut visible = BTreeSet::new();
    for (class, mut ids) in by_class.into_iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        let mut rng = component_rng(seed, &format!("protocol/visible/class/{class}"));
        ids.shuffle(&mut rng);
        let want = ((ids.len() as f64 * label_fraction).round() as usize)
            .max(1)
            .min(ids.len());
        for id in ids.into_iter().take(want) {
            visible.insert(id.to_string());
        }
    }
    visible
}

fn cap_pairs(
    mut pairs: Vec<PairExample>,
    cap: usize,
    seed: u64,
) -> Vec<PairExample> {
    if pairs.len() <= cap {
        return pairs;
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for ex in pairs.drain(..) {
        if ex.label {
            positives.push(ex);
        } else {
            negatives.push(ex);
        }
    }
    let total = positives.len() + negatives.len();
    let keep_pos = ((positives.len() * cap) as f64 / total as f64).round() as usize;
    let keep_pos = keep_pos.clamp(1.min(positives.len()), positives.len());
    let keep_neg = (cap - keep_pos).min(negatives.len());
    let mut rng = component_rng(seed, "protocol/pair-cap/pos");
    positives.shuffle(&mut rng);
    positives.truncate(keep_pos);
    let mut rng = component_rng(seed, "protocol/pair-cap/neg");
    negatives.shuffle(&mut rng);
    negatives.truncate(keep_neg);
    let mut out: Vec<PairExample> = positives.into_iter().chain(negatives).collect();
    out.sort_unstable_by_key(|e| (e.a, e.b));
    out
}

/// Label-fraction evaluation protocol.
///
/// Samples a stratified visible seed set, trains the pair model on
/// leak-free pairs among visible points, builds the graph over everything
/// (all-pairs when it fits the budget, hashing otherwise), classifies by the
/// one-shot product rule, and scores accuracy on the hidden labels only.
pub fn run_table1_protocol(
    dataset: &Dataset,
    label_fraction: f64,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    run_table1_protocol_detailed(dataset, label_fraction, seed, cfg).map(|run| run.report)
}

pub fn run_table1_protocol_detailed(
    dataset: &Dataset,
    label_fraction: f64,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<ProtocolRun> {
    let started = Instant::now();
    let labeled_classes = (0..dataset.class_count())
        .filter(|&c| dataset.points().iter().any(|p| p.label == Some(c)))
        .count();
    if labeled_classes < 2 {
        return Err(Error::DegenerateProtocol(
            "need at least 2 labeled classes".into(),
        ));
    }
    if !(label_fraction > 0.0) {
        return Err(Error::DegenerateProtocol("label_fraction must be > 0".into()));
    }
    let visible = sample_visible(dataset, label_fraction, seed);
    let hidden: Vec<&str> = dataset
        .points()
        .iter()
        .filter(|p| p.label.is_some() && !visible.contains(&p.id))
        .map(|p| p.id.as_str())
        .collect();
    if hidden.is_empty() {
        return Err(Error::DegenerateProtocol(
            "no hidden-label points left to evaluate".into(),
        ));
    }
    let masked = dataset.mask_labels_except(&visible);

    let split = split_points(&masked, cfg.point_holdout_fraction, derive_seed(seed, "protocol/split"))?;
    let v = dataset.len() as u64;
    let total_pairs = v * v.saturating_sub(1) / 2;
    let all_pairs_mode = total_pairs <= cfg.pair_budget;

    let mut sketch = cfg.sketch.clone();
    sketch.seed = derive_seed(seed, "protocol/sketch");
    let (train_pairs, holdout_pairs) = if all_pairs_mode {
        harvest_all_pairs(&masked, &split)?
    } else {
        let buckets = crate::lsh::nn_sketching(&masked, &sketch)?;
        harvest_training_pairs(&masked, &split, &buckets)?
    };
    let train_pairs = match cfg.max_train_pairs {
        Some(cap) => cap_pairs(train_pairs, cap, derive_seed(seed, "protocol/pair-cap")),
        None => train_pairs,
    };

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(seed, "protocol/train");
    let outcome = train(&train_pairs, &masked, &train_cfg, &cfg.arch)?;
    let holdout_loss = eval_pair_loss(&outcome.model, &holdout_pairs, &masked);

    let mut build_cfg = cfg.build.clone();
    build_cfg.seed = derive_seed(seed, "protocol/build");
    let (graph, stats) = if all_pairs_mode {
        build_graph_all_pairs(&masked, &outcome.model, &build_cfg, cfg.pair_budget)?
    } else {
        build_graph(&masked, &outcome.model, &sketch, &build_cfg)?
    };

    let seed_map: HashMap<String, usize> = visible
        .iter()
        .map(|id| {
            let idx = dataset.index_of(id).expect("visible id exists");
            (id.clone(), dataset.point(idx).label.expect("visible is labeled"))
        })
        .collect();
    let scores = classify_one_shot(&graph, &seed_map, dataset.class_count());

    let mut correct = 0usize;
    let mut covered = 0usize;
    let mut covered_correct = 0usize;
    for id in &hidden {
        let truth = dataset
            .point(dataset.index_of(id).unwrap())
            .label
            .expect("hidden points are labeled");
        let node = graph.node_index(id).expect("graph covers the dataset") as usize;
        match scores[node].predicted {
            Some(pred) => {
                covered += 1;
                if pred == truth {
                    correct += 1;
                    covered_correct += 1;
                }
            }
            None => {}
        }
    }
    let hidden_n = hidden.len();
    let status: HashMap<String, usize> = dataset
        .points()
        .iter()
        .filter_map(|p| p.label.map(|l| (p.id.clone(), l)))
        .collect();
    let degree = degree_report(&graph, &status, cfg.high_precision_threshold);

    let report = ExperimentReport {
        accuracy: correct as f64 / hidden_n as f64,
        coverage: covered as f64 / hidden_n as f64,
        accuracy_covered: if covered > 0 {
            covered_correct as f64 / covered as f64
        } else {
            0.0
        },
        pr_points: Vec::new(),
        degree,
        runtime_ms: started.elapsed().as_millis() as u64,
        details: vec![
            ("protocol".into(), "table1".into()),
            ("mode".into(), if all_pairs_mode { "all_pairs" } else { "lsh" }.into()),
            ("visible".into(), visible.len().to_string()),
            ("hidden".into(), hidden_n.to_string()),
            ("train_pairs".into(), train_pairs.len().to_string()),
            ("holdout_pairs".into(), holdout_pairs.len().to_string()),
            ("train_loss".into(), format!("{:.6}", outcome.final_loss)),
            ("holdout_loss".into(), format!("{holdout_loss:.6}")),
            ("scored_pairs".into(), stats.scored_pairs.to_string()),
            ("edges".into(), stats.kept_edges.to_string()),
        ],
    };
    Ok(ProtocolRun {
        report,
        model: outcome.model,
        graph,
    })
}

/// Grid search over (k, sigma) for a k-NN graph weighted by the RBF kernel
/// exp(-||a-b||^2 / sigma), selected on a held-out slice of the visible
/// labels and scored on the hidden labels.
#[derive(Debug, Clone)]
pub struct RbfBaselineConfig {
    pub k_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    /// Visible-label fraction held out for grid selection.
    pub holdout_fraction: f64,
}

impl Default for RbfBaselineConfig {
    fn default() -> Self {
        RbfBaselineConfig {
            k_grid: vec![3, 5, 10, 20],
            sigma_grid: vec![0.5, 2.0, 8.0, 32.0],
            holdout_fraction: 0.25,
        }
    }
}

struct KnnIndex {
    /// Per node: up to k_max nearest (neighbor, squared distance), ascending.
    neighbors: Vec<Vec<(u32, f64)>>,
}

fn build_knn_index(dataset: &Dataset, k_max: usize) -> KnnIndex {
    let n = dataset.len();
    let vectors: Vec<&[f64]> = dataset
        .points()
        .iter()
        .map(|p| p.payloads[0].dense())
        .collect();
    let sq_norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum())
        .collect();
    let neighbors: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best: Vec<(f64, u32)> = Vec::with_capacity(k_max + 1);
            let vi = vectors[i];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dot: f64 = vi.iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
                let sq = (sq_norms[i] + sq_norms[j] - 2.0 * dot).max(0.0);
                if best.len() < k_max {
                    best.push((sq, j as u32));
                    if best.len() == k_max {
                        best.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
                    }
                } else if sq < best[k_max - 1].0
                    || (sq == best[k_max - 1].0 && (j as u32) < best[k_max - 1].1)
                {
                    best[k_max - 1] = (sq, j as u32);
                    let mut pos = k_max - 1;
                    while pos > 0 && best[pos] < best[pos - 1] {
                        best.swap(pos, pos - 1);
                        pos -= 1;
                    }
                }
            }
            if best.len() < k_max {
                best.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            }
            best.into_iter().map(|(sq, j)| (j, sq)).collect()
        })
        .collect();
    KnnIndex { neighbors }
}

fn rbf_graph(dataset: &Dataset, index: &KnnIndex, k: usize, sigma: f64) -> Result<Graph> {
    let mut edges = Vec::new();
    for (i, neigh) in index.neighbors.iter().enumerate() {
        for &(j, sq) in neigh.iter().take(k) {
            let weight = (-sq / sigma).exp();
            if weight > 0.0 {
                let (src, dst) = if dataset.point(i as u32).id <= dataset.point(j).id {
                    (dataset.point(i as u32).id.clone(), dataset.point(j).id.clone())
                } else {
                    (dataset.point(j).id.clone(), dataset.point(i as u32).id.clone())
                };
                edges.push(Edge { src, dst, weight });
            }
        }
    }
    let nodes = dataset.points().iter().map(|p| p.id.clone()).collect();
    Graph::from_edges(nodes, edges)
}

fn one_shot_accuracy(
    graph: &Graph,
    seeds: &HashMap<String, usize>,
    class_count: usize,
    eval_ids: &[&str],
    truth: &HashMap<String, usize>,
) -> (f64, f64) {
    let scores = classify_one_shot(graph, seeds, class_count);
    let mut correct = 0usize;
    let mut covered = 0usize;
    for id in eval_ids {
        let node = graph.node_index(id).expect("node present") as usize;
        if let Some(pred) = scores[node].predicted {
            covered += 1;
            if pred == truth[*id] {
                correct += 1;
            }
        }
    }
    (
        correct as f64 / eval_ids.len() as f64,
        covered as f64 / eval_ids.len() as f64,
    )
}

pub fn rbf_grid_baseline(
    dataset: &Dataset,
    label_fraction: f64,
    config: &RbfBaselineConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    if config.k_grid.is_empty() || config.sigma_grid.is_empty() {
        return Err(Error::GridExhausted);
    }
    let schema = dataset.schema();
    if schema.mode_count() != 1 || !matches!(schema.modes()[0].kind, ModeKind::Dense { .. }) {
        return Err(Error::InvalidConfig(
            "rbf baseline needs a dense single-mode dataset".into(),
        ));
    }
    let visible = sample_visible(dataset, label_fraction, seed);
    let hidden: Vec<&str> = dataset
        .points()
        .iter()
        .filter(|p| p.label.is_some() && !visible.contains(&p.id))
        .map(|p| p.id.as_str())
        .collect();
    if hidden.is_empty() {
        return Err(Error::DegenerateProtocol(
            "no hidden-label points left to evaluate".into(),
        ));
    }
    let masked = dataset.mask_labels_except(&visible);
    let split = split_points(&masked, config.holdout_fraction, derive_seed(seed, "protocol/split"))?;
    let truth: HashMap<String, usize> = dataset
        .points()
        .iter()
        .filter_map(|p| p.label.map(|l| (p.id.clone(), l)))
        .collect();
    let selection_seeds: HashMap<String, usize> = split
        .train_ids
        .iter()
        .map(|id| (id.clone(), truth[id]))
        .collect();
    let selection_eval: Vec<&str> = split.holdout_ids.iter().map(|s| s.as_str()).collect();

    let k_max = *config.k_grid.iter().max().unwrap();
    let index = build_knn_index(dataset, k_max);

    let mut best: Option<(f64, usize, f64)> = None;
    for &k in &config.k_grid {
        for &sigma in &config.sigma_grid {
            if !(sigma > 0.0) {
                continue;
            }
            let graph = rbf_graph(dataset, &index, k, sigma)?;
            let (acc, _) = one_shot_accuracy(
                &graph,
                &selection_seeds,
                dataset.class_count(),
                &selection_eval,
                &truth,
            );
            if best.map_or(true, |(b, _, _)| acc > b) {
                best = Some((acc, k, sigma));
            }
        }
    }
    let Some((selection_accuracy, k, sigma)) = best else {
        return Err(Error::GridExhausted);
    };

    let graph = rbf_graph(dataset, &index, k, sigma)?;
    let all_seed_map: HashMap<String, usize> = visible
        .iter()
        .map(|id| (id.clone(), truth[id]))
        .collect();
    let (accuracy, coverage) = one_shot_accuracy(
        &graph,
        &all_seed_map,
        dataset.class_count(),
        &hidden,
        &truth,
    );
    let scores = classify_one_shot(&graph, &all_seed_map, dataset.class_count());
    let mut covered_correct = 0usize;
    let mut covered = 0usize;
    for id in &hidden {
        let node = graph.node_index(id).unwrap() as usize;
        if let Some(pred) = scores[node].predicted {
            covered += 1;
            if pred == truth[*id] {
                covered_correct += 1;
            }
        }
    }
    let degree = degree_report(&graph, &truth.iter().map(|(k, v)| (k.clone(), *v)).collect(), 0.9);
    Ok(ExperimentReport {
        accuracy,
        coverage,
        accuracy_covered: if covered > 0 {
            covered_correct as f64 / covered as f64
        } else {
            0.0
        },
        pr_points: Vec::new(),
        degree,
        runtime_ms: started.elapsed().as_millis() as u64,
        details: vec![
            ("protocol".into(), "rbf_grid".into()),
            ("visible".into(), visible.len().to_string()),
            ("hidden".into(), hidden.len().to_string()),
            ("winner_k".into(), k.to_string()),
            ("winner_sigma".into(), format!("{sigma}")),
            ("selection_accuracy".into(), format!("{selection_accuracy:.6}")),
        ],
    })
}

/// Per-status histograms of total degree and same-status degree, plus the
/// degree-zero / degree-positive / high-precision-positive fractions.
pub fn degree_report(
    graph: &Graph,
    status: &HashMap<String, usize>,
    high_precision_threshold: f64,
) -> DegreeReport {
    let node_status: Vec<Option<usize>> = graph
        .node_ids()
        .iter()
        .map(|id| status.get(id).copied())
        .collect();
    let n = graph.node_count();
    let mut degree = vec![0usize; n];
    let mut same_status = vec![0usize; n];
    let mut high_degree = vec![0usize; n];
    for (i, j, w) in graph.edge_tuples() {
        let (i, j) = (i as usize, j as usize);
        degree[i] += 1;
        degree[j] += 1;
        if w >= high_precision_threshold {
            high_degree[i] += 1;
            high_degree[j] += 1;
        }
        if node_status[i].is_some() && node_status[i] == node_status[j] {
            same_status[i] += 1;
            same_status[j] += 1;
        }
    }
    let mut per_status: BTreeMap<usize, StatusDegrees> = BTreeMap::new();
    for node in 0..n {
        let Some(s) = node_status[node] else { continue };
        let entry = per_status.entry(s).or_default();
        entry.node_count += 1;
        *entry.degree_hist.entry(degree[node]).or_insert(0) += 1;
        *entry
            .same_status_degree_hist
            .entry(same_status[node])
            .or_insert(0) += 1;
        if degree[node] == 0 {
            entry.frac_degree_zero += 1.0;
        } else {
            entry.frac_degree_positive += 1.0;
        }
        if high_degree[node] > 0 {
            entry.frac_high_precision_positive += 1.0;
        }
    }
    for stats in per_status.values_mut() {
        let n = stats.node_count as f64;
        stats.frac_degree_zero /= n;
        stats.frac_degree_positive /= n;
        stats.frac_high_precision_positive /= n;
    }
    DegreeReport {
        per_status,
        high_precision_threshold,
    }
}

/// Precision-recall sweep over all distinct score values, descending.
/// Recall is non-decreasing along the returned points.
pub fn pr_curve(scores: &[f64], truth: &[bool]) -> Result<Vec<PrPoint>> {
    assert_eq!(scores.len(), truth.len());
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Area under the precision-recall sweep by the step rule.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for p in points {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ModeMetric;
    use crate::graph::Edge;
    use crate::synth;
    use rand::Rng;

    #[test]
    fn pr_perfect_separation() {
        let scores = vec![0.9, 0.8, 0.2, 0.1];
        let truth = vec![true, true, false, false];
        let points = pr_curve(&scores, &truth).unwrap();
        for p in &points[..2] {
            assert_eq!(p.precision, 1.0);
        }
        assert_eq!(points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn pr_constant_scores_single_point() {
        let scores = vec![0.5; 10];
        let truth: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let points = pr_curve(&scores, &truth).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].precision, 0.3);
        assert_eq!(points[0].recall, 1.0);
    }

    #[test]
    fn pr_requires_positives() {
        assert!(matches!(
            pr_curve(&[0.1, 0.2], &[false, false]),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn pr_recall_monotone_random_scores_ap_half() {
        let mut rng = component_rng(5, "test/pr");
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let truth: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let points = pr_curve(&scores, &truth).unwrap();
        let mut prev = 0.0;
        for p in &points {
            assert!(p.recall >= prev);
            prev = p.recall;
        }
        let ap = average_precision(&points);
        assert!((ap - 0.5).abs() < 0.03, "ap {ap}");
    }

    #[test]
    fn degree_report_empty_graph() {
        let g = Graph::from_edges(vec!["a".into(), "b".into()], Vec::new()).unwrap();
        let status: HashMap<String, usize> =
            [("a".to_string(), 0), ("b".to_string(), 1)].into_iter().collect();
        let report = degree_report(&g, &status, 0.9);
        for stats in report.per_status.values() {
            assert_eq!(stats.frac_degree_zero, 1.0);
            assert_eq!(stats.degree_hist.get(&0), Some(&1));
        }
    }

    #[test]
    fn degree_report_triangle() {
        let edges = vec![
            Edge { src: "a".into(), dst: "b".into(), weight: 0.95 },
            Edge { src: "a".into(), dst: "c".into(), weight: 0.5 },
            Edge { src: "b".into(), dst: "c".into(), weight: 0.95 },
        ];
        let g = Graph::from_edges(Vec::new(), edges).unwrap();
        let status: HashMap<String, usize> = ["a", "b", "c"]
            .iter()
            .map(|s| (s.to_string(), 7))
            .collect();
        let report = degree_report(&g, &status, 0.9);
        let stats = &report.per_status[&7];
        assert_eq!(stats.node_count, 3);
        assert_eq!(stats.degree_hist.get(&2), Some(&3));
        assert_eq!(stats.same_status_degree_hist.get(&2), Some(&3));
        assert_eq!(stats.frac_degree_positive, 1.0);
        // c's only high-precision edge is b-c
        assert_eq!(stats.frac_high_precision_positive, 1.0);
    }

    fn blob_pipeline_config() -> PipelineConfig {
        PipelineConfig {
            arch: ModelArch {
                tower: vec![6],
                head_hidden: vec![6],
            },
            train: TrainConfig {
                learning_rate: 0.3,
                epochs: 20,
                batch_size: 32,
                seed: 0,
                negative_subsample_ratio: 4.0,
                l2: 0.0,
                momentum: 0.9,
            },
            sketch: SketchConfig {
                families: vec![crate::lsh::HashFamilySpec {
                    mode_name: "v".into(),
                    family: crate::lsh::HashFamily::PStable { width: 2.0 },
                    bits_per_function: 1,
                }],
                composition: crate::lsh::Composition::And,
                num_functions: 8,
                bucket_cap: 50,
                drop_threshold: None,
                seed: 0,
            },
            build: BuildConfig {
                epsilon: 0.5,
                top_k: Some(10),
                seed: 0,
            },
            pair_budget: 10_000_000,
            point_holdout_fraction: 0.25,
            max_train_pairs: None,
            high_precision_threshold: 0.9,
        }
    }

    fn blob_dataset(n: usize, seed: u64) -> Dataset {
        synth::gaussian_blobs(&synth::BlobSpec {
            points: n,
            dim: 4,
            classes: 2,
            center_spread: 3.0,
            noise: 0.5,
            mode_name: "v".into(),
            metric: ModeMetric::Euclidean,
            seed,
        })
    }

    #[test]
    fn protocol_runs_and_is_deterministic() {
        let ds = blob_dataset(120, 3);
        let cfg = blob_pipeline_config();
        let r1 = run_table1_protocol(&ds, 0.2, 11, &cfg).unwrap();
        let r2 = run_table1_protocol(&ds, 0.2, 11, &cfg).unwrap();
        assert_eq!(r1.accuracy, r2.accuracy);
        assert_eq!(r1.coverage, r2.coverage);
        assert_eq!(r1.degree, r2.degree);
        assert_eq!(r1.details, r2.details);
        assert!(r1.accuracy > 0.8, "accuracy {}", r1.accuracy);
    }

    #[test]
    fn protocol_rejects_full_label_fraction() {
        let ds = blob_dataset(40, 3);
        let cfg = blob_pipeline_config();
        assert!(matches!(
            run_table1_protocol(&ds, 1.0, 1, &cfg),
            Err(Error::DegenerateProtocol(_))
        ));
    }

    #[test]
    fn protocol_ignores_hidden_labels() {
        // flipping hidden labels must not change the trained model
        let ds = blob_dataset(80, 9);
        let cfg = blob_pipeline_config();
        let visible = sample_visible(&ds, 0.3, 17);
        let run1 = run_table1_protocol_detailed(&ds, 0.3, 17, &cfg).unwrap();
        // rebuild the dataset with hidden labels permuted
        let mut points = ds.points().to_vec();
        for p in points.iter_mut() {
            if !visible.contains(&p.id) {
                p.label = p.label.map(|l| 1 - l);
            }
        }
        let flipped = Dataset::new(ds.schema().clone(), points, 2).unwrap();
        let run2 = run_table1_protocol_detailed(&flipped, 0.3, 17, &cfg).unwrap();
        assert_eq!(run1.model, run2.model);
        assert_eq!(
            run1.graph.edge_count(),
            run2.graph.edge_count()
        );
    }

    #[test]
    fn rbf_baseline_runs_on_blobs() {
        let ds = blob_dataset(120, 5);
        let cfg = RbfBaselineConfig {
            k_grid: vec![3, 5],
            sigma_grid: vec![1.0, 8.0],
            holdout_fraction: 0.3,
        };
        let report = rbf_grid_baseline(&ds, 0.3, &cfg, 7).unwrap();
        assert!(report.accuracy > 0.8, "accuracy {}", report.accuracy);
        let report2 = rbf_grid_baseline(&ds, 0.3, &cfg, 7).unwrap();
        assert_eq!(report.accuracy, report2.accuracy);
        assert_eq!(report.details, report2.details);
    }

    #[test]
    fn rbf_duplicate_points_weight_exactly_one() {
        use crate::dataset::{ModalSchema, ModeKind, ModeSpec, Payload, Point};
        let schema = ModalSchema::new(vec![ModeSpec {
            name: "v".into(),
            kind: ModeKind::Dense { dim: 2 },
            metric: ModeMetric::Euclidean,
        }])
        .unwrap();
        let points = vec![
            Point { id: "a".into(), payloads: vec![Payload::Dense(vec![1.0, 2.0])], label: Some(0) },
            Point { id: "b".into(), payloads: vec![Payload::Dense(vec![1.0, 2.0])], label: Some(0) },
            Point { id: "c".into(), payloads: vec![Payload::Dense(vec![5.0, 5.0])], label: Some(1) },
        ];
        let ds = Dataset::new(schema, points, 2).unwrap();
        let index = build_knn_index(&ds, 1);
        let graph = rbf_graph(&ds, &index, 1, 4.0).unwrap();
        let e = graph
            .edges()
            .find(|e| e.src == "a" && e.dst == "b")
            .expect("duplicates are mutual nearest neighbors");
        assert_eq!(e.weight, 1.0);
    }

    #[test]
    fn rbf_huge_sigma_degenerates_to_unit_weights() {
        let ds = blob_dataset(30, 13);
        let index = build_knn_index(&ds, 3);
        let graph = rbf_graph(&ds, &index, 3, 1e300).unwrap();
        for e in graph.edges() {
            assert_eq!(e.weight, 1.0);
        }
        // under the product rule every class with any neighbor then scores
        // exactly 1: the weighted vote degenerates to a tie at 1.0
        let seeds: HashMap<String, usize> = ds
            .points()
            .iter()
            .take(10)
            .map(|p| (p.id.clone(), p.label.unwrap()))
            .collect();
        let scores = classify_one_shot(&graph, &seeds, 2);
        for ls in scores.iter().filter(|l| !l.abstained) {
            let max = ls.scores.iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, 1.0);
        }
    }

    #[test]
    fn constant_predictor_accuracy_near_chance() {
        // a graph with uniform weights to a single seed per class makes the
        // one-shot rule pick by tie-break; emulate a constant predictor by
        // checking accuracy of always predicting class 0 on balanced truth
        let ds = blob_dataset(200, 21);
        let truth: Vec<usize> = ds.points().iter().map(|p| p.label.unwrap()).collect();
        let hits = truth.iter().filter(|&&t| t == 0).count();
        let acc = hits as f64 / truth.len() as f64;
        assert!((acc - 0.5).abs() <= 0.05);
    }
}
