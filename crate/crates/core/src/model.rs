//! The symmetric pair scorer G in (0,1): shared-weight embedding towers
//! combined by Hadamard product, concatenated with the raw distance vector,
//! and fed through a scoring head. Includes training against harvested
//! oracle pairs and finite-difference gradient verification.

use crate::dataset::{Dataset, ModalSchema, ModeMetric, Payload, Point, PointSplit, oracle_same_class};
use crate::error::{Error, Result};
use crate::lsh::{Bucket, candidate_pairs, canonical_pair};
use crate::metrics::{DistanceVector, distance_vector, jaccard_distance};
use crate::seed::component_rng;
use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::borrow::Cow;
use std::io::{BufRead, Write};
use std::path::Path;

/// Scores kept strictly inside (0,1) so log-weights stay negative.
const SCORE_FLOOR: f64 = 1e-300;
const SCORE_CEIL: f64 = 1.0 - 1e-16;

/// Fixed work unit for parallel gradient accumulation; reductions happen in
/// chunk order so results do not depend on the worker count.
const GRAD_CHUNK: usize = 64;

/// One harvested oracle pair. `a` and `b` index the dataset with
/// `id(a) < id(b)` lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub a: u32,
    pub b: u32,
    pub distances: DistanceVector,
    /// Reserved for extra pairwise features beyond the distance vector.
    pub pairwise_extras: Option<Vec<f64>>,
    pub label: bool,
}

/// Dense layer, row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(z + self.b[r]);
        }
    }
}

/// Layer widths: tower sizes end in the embedding dim (empty for a
/// distance-only model); head hidden sizes precede the final 1-unit output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArch {
    pub tower: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl ModelArch {
    pub fn distance_only(head_hidden: Vec<usize>) -> Self {
        ModelArch {
            tower: Vec::new(),
            head_hidden,
        }
    }
}

/// Trainable parameters. Tower weights are shared between the two sides of
/// a pair; the head input is the Hadamard product of the embeddings
/// concatenated with the d mode distances.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerParams {
    pub schema_hash: u64,
    pub init_seed: u64,
    pub tower_input_dim: usize,
    pub distance_dim: usize,
    pub tower: Vec<Layer>,
    pub head: Vec<Layer>,
}

impl TwoTowerParams {
    pub fn embedding_dim(&self) -> usize {
        self.tower.last().map_or(0, |l| l.rows)
    }

    pub fn head_input_dim(&self) -> usize {
        self.embedding_dim() + self.distance_dim
    }

    pub fn param_count(&self) -> usize {
        self.tower
            .iter()
            .chain(&self.head)
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }
}

/// Seeded fan-in-scaled uniform initialization; biases start at zero.
pub fn init_model(schema: &ModalSchema, arch: &ModelArch, seed: u64) -> Result<TwoTowerParams> {
    let tower_input_dim = schema.dense_dim();
    if !arch.tower.is_empty() && tower_input_dim == 0 {
        return Err(Error::InvalidConfig(
            "embedding towers need at least one dense mode".into(),
        ));
    }
    if arch.tower.iter().chain(&arch.head_hidden).any(|&s| s == 0) {
        return Err(Error::InvalidConfig("layer sizes must be >= 1".into()));
    }
    let embedding_dim = arch.tower.last().copied().unwrap_or(0);
    let distance_dim = schema.mode_count();
    let mut rng = component_rng(seed, "model/init");
    let mut sample_layer = |rows: usize, cols: usize| {
        let scale = 1.0 / (cols as f64).sqrt();
        let w = (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Layer {
            rows,
            cols,
            w,
            b: vec![0.0; rows],
        }
    };
    let mut tower = Vec::new();
    let mut prev = tower_input_dim;
    for &size in &arch.tower {
        tower.push(sample_layer(size, prev));
        prev = size;
    }
    let mut head = Vec::new();
    let mut prev = embedding_dim + distance_dim;
    for &size in &arch.head_hidden {
        head.push(sample_layer(size, prev));
        prev = size;
    }
    head.push(sample_layer(1, prev));
    Ok(TwoTowerParams {
        schema_hash: schema.stable_hash(),
        init_seed: seed,
        tower_input_dim,
        distance_dim,
        tower,
        head,
    })
}

/// Concatenated dense payloads, the tower input.
fn tower_input<'a>(point: &'a Point) -> Cow<'a, [f64]> {
    let dense: Vec<&[f64]> = point
        .payloads
        .iter()
        .filter_map(|p| match p {
            Payload::Dense(v) => Some(v.as_slice()),
            Payload::Tokens(_) => None,
        })
        .collect();
    match dense.len() {
        1 => Cow::Borrowed(dense[0]),
        _ => Cow::Owned(dense.concat()),
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 { z } else { 0.0 }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Embedding of one point under the current tower weights.
fn embed(params: &TwoTowerParams, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    let mut next = Vec::new();
    for layer in &params.tower {
        layer.forward(&cur, &mut next);
        for v in next.iter_mut() {
            *v = relu(*v);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Head forward on [e_a ⊙ e_b ; distances]; returns the raw logit.
fn head_logit(params: &TwoTowerParams, emb_a: &[f64], emb_b: &[f64], distances: &[f64]) -> f64 {
    let mut cur: Vec<f64> = emb_a
        .iter()
        .zip(emb_b)
        .map(|(x, y)| x * y)
        .chain(distances.iter().copied())
        .collect();
    let mut next = Vec::new();
    let last = params.head.len() - 1;
    for (i, layer) in params.head.iter().enumerate() {
        layer.forward(&cur, &mut next);
        if i < last {
            for v in next.iter_mut() {
                *v = relu(*v);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur[0]
}

fn clamped_score(z: f64) -> f64 {
    sigmoid(z).clamp(SCORE_FLOOR, SCORE_CEIL)
}

/// Symmetric similarity score in (0,1) for a pair of points.
///
/// The Hadamard product and the distance features are both order-invariant,
/// so `predict(a, b)` equals `predict(b, a)` bit for bit.
pub fn predict(
    params: &TwoTowerParams,
    a: &Point,
    b: &Point,
    schema: &ModalSchema,
) -> Result<f64> {
    let distances = distance_vector(a, b, schema)?;
    let (emb_a, emb_b) = if params.tower.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        (
            embed(params, &tower_input(a)),
            embed(params, &tower_input(b)),
        )
    };
    Ok(clamped_score(head_logit(
        params,
        &emb_a,
        &emb_b,
        &distances.values,
    )))
}

/// Anything that can score a pair of dataset points by index.
pub trait PairScorer: Sync {
    fn score(&self, a: u32, b: u32) -> f64;
}

/// Batch scorer over a fixed dataset: embeds every point once and caches
/// per-mode norms, so each pair costs one dot product per dense mode plus
/// the head forward pass.
pub struct Scorer<'a> {
    params: &'a TwoTowerParams,
    dataset: &'a Dataset,
    embeddings: Vec<Vec<f64>>,
    sq_norms: Vec<Vec<f64>>, // [dense mode][point]
    dense_modes: Vec<(usize, ModeMetric)>,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a TwoTowerParams, dataset: &'a Dataset) -> Result<Self> {
        let schema = dataset.schema();
        if params.schema_hash != schema.stable_hash() {
            return Err(Error::SchemaModelMismatch {
                model: params.schema_hash,
                dataset: schema.stable_hash(),
            });
        }
        let embeddings = if params.tower.is_empty() {
            Vec::new()
        } else {
            (0..dataset.len() as u32)
                .into_par_iter()
                .map(|i| embed(params, &tower_input(dataset.point(i))))
                .collect()
        };
        let dense_modes: Vec<(usize, ModeMetric)> = schema
            .modes()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.metric != ModeMetric::Jaccard)
            .map(|(i, m)| (i, m.metric))
            .collect();
        let sq_norms = dense_modes
            .iter()
            .map(|&(mode, _)| {
                (0..dataset.len() as u32)
                    .into_par_iter()
                    .map(|i| {
                        let x = dataset.point(i).payloads[mode].dense();
                        x.iter().map(|v| v * v).sum()
                    })
                    .collect()
            })
            .collect();
        Ok(Scorer {
            params,
            dataset,
            embeddings,
            sq_norms,
            dense_modes,
        })
    }

    /// Distance vector via cached norms; agrees with `metrics` up to
    /// floating-point rearrangement and stays exactly symmetric.
    fn distances(&self, a: u32, b: u32) -> Vec<f64> {
        let schema = self.dataset.schema();
        let pa = self.dataset.point(a);
        let pb = self.dataset.point(b);
        let mut out = Vec::with_capacity(schema.mode_count());
        let mut dense_slot = 0;
        for (i, mode) in schema.modes().iter().enumerate() {
            match mode.metric {
                ModeMetric::Jaccard => {
                    out.push(jaccard_distance(pa.payloads[i].tokens(), pb.payloads[i].tokens()));
                }
                ModeMetric::Euclidean => {
                    let xa = pa.payloads[i].dense();
                    let xb = pb.payloads[i].dense();
                    let dot: f64 = xa.iter().zip(xb).map(|(x, y)| x * y).sum();
                    let sq = self.sq_norms[dense_slot][a as usize]
                        + self.sq_norms[dense_slot][b as usize]
                        - 2.0 * dot;
                    out.push(sq.max(0.0).sqrt());
                    dense_slot += 1;
                }
                ModeMetric::Cosine => {
                    let xa = pa.payloads[i].dense();
                    let xb = pb.payloads[i].dense();
                    let dot: f64 = xa.iter().zip(xb).map(|(x, y)| x * y).sum();
                    let na = self.sq_norms[dense_slot][a as usize].sqrt();
                    let nb = self.sq_norms[dense_slot][b as usize].sqrt();
                    if na == 0.0 || nb == 0.0 {
                        out.push(1.0);
                    } else {
                        out.push((1.0 - dot / (na * nb)).clamp(0.0, 2.0));
                    }
                    dense_slot += 1;
                }
            }
        }
        out
    }
}

impl PairScorer for Scorer<'_> {
    fn score(&self, a: u32, b: u32) -> f64 {
        let distances = self.distances(a, b);
        let (ea, eb): (&[f64], &[f64]) = if self.embeddings.is_empty() {
            (&[], &[])
        } else {
            (&self.embeddings[a as usize], &self.embeddings[b as usize])
        };
        clamped_score(head_logit(self.params, ea, eb, &distances))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep at most this many negatives per positive.
    pub negative_subsample_ratio: f64,
    pub l2: f64,
    /// 0.0 gives plain mini-batch gradient descent.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            negative_subsample_ratio: 4.0,
            l2: 0.0,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TwoTowerParams,
    /// Mean log-loss over the (subsampled) training pairs at initialization.
    pub initial_loss: f64,
    /// Running mean log-loss of the final epoch.
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn example_loss(score: f64, label: bool) -> f64 {
    let y = score.clamp(1e-12, 1.0 - 1e-12);
    if label { -y.ln() } else { -(1.0 - y).ln() }
}

struct Trace {
    /// Post-activation outputs per layer (inputs to the next layer).
    acts: Vec<Vec<f64>>,
    /// Pre-activation values per layer, for the relu mask.
    pres: Vec<Vec<f64>>,
}

fn forward_trace(layers: &[Layer], input: &[f64], relu_last: bool) -> Trace {
    let mut acts = Vec::with_capacity(layers.len());
    let mut pres = Vec::with_capacity(layers.len());
    let mut cur = input.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let mut z = Vec::new();
        layer.forward(&cur, &mut z);
        pres.push(z.clone());
        if relu_last || i + 1 < layers.len() {
            for v in z.iter_mut() {
                *v = relu(*v);
            }
        }
        acts.push(z.clone());
        cur = z;
    }
    Trace { acts, pres }
}

/// Backprop through a stack of layers; `delta` arrives at the output of the
/// final layer (after its activation when `relu_last`). Returns the gradient
/// with respect to the stack input.
fn backward_stack(
    layers: &[Layer],
    input: &[f64],
    trace: &Trace,
    mut delta: Vec<f64>,
    relu_last: bool,
    grads: &mut [Layer],
) -> Vec<f64> {
    for l in (0..layers.len()).rev() {
        if relu_last || l + 1 < layers.len() {
            for (d, &z) in delta.iter_mut().zip(&trace.pres[l]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let layer_input: &[f64] = if l == 0 { input } else { &trace.acts[l - 1] };
        let g = &mut grads[l];
        for r in 0..layers[l].rows {
            let dr = delta[r];
            g.b[r] += dr;
            let grow = &mut g.w[r * layers[l].cols..(r + 1) * layers[l].cols];
            for (gw, &x) in grow.iter_mut().zip(layer_input) {
                *gw += dr * x;
            }
        }
        if l > 0 || !input.is_empty() {
            let mut prev = vec![0.0; layers[l].cols];
            for r in 0..layers[l].rows {
                let dr = delta[r];
                let row = &layers[l].w[r * layers[l].cols..(r + 1) * layers[l].cols];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += dr * w;
                }
            }
            delta = prev;
        }
        if l == 0 {
            return delta;
        }
    }
    delta
}

struct GradAccum {
    tower: Vec<Layer>,
    head: Vec<Layer>,
    loss: f64,
    count: usize,
}

impl GradAccum {
    fn zeros(params: &TwoTowerParams) -> Self {
        GradAccum {
            tower: params.tower.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(),
            head: params.head.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(),
            loss: 0.0,
            count: 0,
        }
    }

    fn merge(&mut self, other: &GradAccum) {
        for (a, b) in self.tower.iter_mut().zip(&other.tower) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
        self.loss += other.loss;
        self.count += other.count;
    }
}

/// Forward + backward for one example, accumulating into `acc`.
fn accumulate_example(
    params: &TwoTowerParams,
    example: &PairExample,
    dataset: &Dataset,
    acc: &mut GradAccum,
) {
    let has_tower = !params.tower.is_empty();
    let xa = tower_input(dataset.point(example.a));
    let xb = tower_input(dataset.point(example.b));
    let (trace_a, trace_b) = if has_tower {
        (
            Some(forward_trace(&params.tower, &xa, true)),
            Some(forward_trace(&params.tower, &xb, true)),
        )
    } else {
        (None, None)
    };
    let empty: Vec<f64> = Vec::new();
    let emb_a = trace_a.as_ref().map_or(&empty, |t| t.acts.last().unwrap());
    let emb_b = trace_b.as_ref().map_or(&empty, |t| t.acts.last().unwrap());

    let feats: Vec<f64> = emb_a
        .iter()
        .zip(emb_b)
        .map(|(x, y)| x * y)
        .chain(example.distances.values.iter().copied())
        .collect();
    let head_trace = forward_trace(&params.head, &feats, false);
    let z = head_trace.acts.last().unwrap()[0];
    let score = sigmoid(z);
    acc.loss += example_loss(score, example.label);
    acc.count += 1;

    let dz = score - if example.label { 1.0 } else { 0.0 };
    let d_feats = backward_stack(
        &params.head,
        &feats,
        &head_trace,
        vec![dz],
        false,
        &mut acc.head,
    );
    if has_tower {
        let e = emb_a.len();
        let de_a: Vec<f64> = d_feats[..e].iter().zip(emb_b).map(|(d, &y)| d * y).collect();
        let de_b: Vec<f64> = d_feats[..e].iter().zip(emb_a).map(|(d, &x)| d * x).collect();
        backward_stack(
            &params.tower,
            &xa,
            trace_a.as_ref().unwrap(),
            de_a,
            true,
            &mut acc.tower,
        );
        backward_stack(
            &params.tower,
            &xb,
            trace_b.as_ref().unwrap(),
            de_b,
            true,
            &mut acc.tower,
        );
    }
}

/// Mean gradient and loss over `examples`, parallel over fixed-size chunks
/// with a sequential merge so the result is identical for any thread count.
fn batch_gradient(
    params: &TwoTowerParams,
    examples: &[&PairExample],
    dataset: &Dataset,
) -> GradAccum {
    let partials: Vec<GradAccum> = examples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = GradAccum::zeros(params);
            for ex in chunk {
                accumulate_example(params, ex, dataset, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = GradAccum::zeros(params);
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Mean log-loss of a model over a pair set, using cached distances.
pub fn eval_pair_loss(
    params: &TwoTowerParams,
    examples: &[PairExample],
    dataset: &Dataset,
) -> f64 {
    if examples.is_empty() {
        return f64::NAN;
    }
    let losses: Vec<f64> = examples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|ex| {
                    let has_tower = !params.tower.is_empty();
                    let (ea, eb) = if has_tower {
                        (
                            embed(params, &tower_input(dataset.point(ex.a))),
                            embed(params, &tower_input(dataset.point(ex.b))),
                        )
                    } else {
                        (Vec::new(), Vec::new())
                    };
                    let z = head_logit(params, &ea, &eb, &ex.distances.values);
                    example_loss(sigmoid(z), ex.label)
                })
                .sum::<f64>()
        })
        .collect();
    losses.iter().sum::<f64>() / examples.len() as f64
}

/// Mini-batch gradient descent on the mean binary log-loss.
///
/// Deterministic for a fixed seed: initialization, negative subsampling and
/// epoch shuffles all derive from `config.seed`, and gradient reductions run
/// in a fixed order.
pub fn train(
    examples: &[PairExample],
    dataset: &Dataset,
    config: &TrainConfig,
    arch: &ModelArch,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::EmptyHarvest);
    }
    if config.learning_rate <= 0.0 || config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "learning_rate, epochs and batch_size must be positive".into(),
        ));
    }
    if config.negative_subsample_ratio <= 0.0 {
        return Err(Error::InvalidConfig(
            "negative_subsample_ratio must be positive".into(),
        ));
    }
    let positives: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label).collect();
    let negatives: Vec<usize> = (0..examples.len()).filter(|&i| !examples[i].label).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::SingleLabelSet);
    }
    let keep_negatives =
        ((positives.len() as f64 * config.negative_subsample_ratio).ceil() as usize).max(1);
    let mut selected: Vec<usize> = if negatives.len() > keep_negatives {
        let mut rng = component_rng(config.seed, "train/negative-subsample");
        let mut shuffled = negatives.clone();
        shuffled.shuffle(&mut rng);
        shuffled.truncate(keep_negatives);
        positives.iter().copied().chain(shuffled).collect()
    } else {
        (0..examples.len()).collect()
    };
    selected.sort_unstable();

    let mut model = init_model(dataset.schema(), arch, config.seed)?;
    let selected_examples: Vec<PairExample> =
        selected.iter().map(|&i| examples[i].clone()).collect();
    let initial_loss = eval_pair_loss(&model, &selected_examples, dataset);

    let mut velocity_tower: Vec<Layer> =
        model.tower.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect();
    let mut velocity_head: Vec<Layer> =
        model.head.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..selected_examples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = component_rng(config.seed, &format!("train/epoch/{epoch}"));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&PairExample> = batch.iter().map(|&i| &selected_examples[i]).collect();
            let acc = batch_gradient(&model, &refs, dataset);
            loss_sum += acc.loss;
            loss_count += acc.count;
            let scale = 1.0 / acc.count as f64;
            for ((layer, vel), grad) in model
                .tower
                .iter_mut()
                .zip(&mut velocity_tower)
                .chain(model.head.iter_mut().zip(&mut velocity_head))
                .zip(acc.tower.iter().chain(&acc.head))
            {
                for i in 0..layer.w.len() {
                    let g = grad.w[i] * scale + config.l2 * layer.w[i];
                    vel.w[i] = config.momentum * vel.w[i] - config.learning_rate * g;
                    layer.w[i] += vel.w[i];
                }
                for i in 0..layer.b.len() {
                    let g = grad.b[i] * scale;
                    vel.b[i] = config.momentum * vel.b[i] - config.learning_rate * g;
                    layer.b[i] += vel.b[i];
                }
            }
        }
        let epoch_loss = loss_sum / loss_count as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        epoch_losses.push(epoch_loss);
    }
    let final_loss = *epoch_losses.last().unwrap();
    Ok(TrainOutcome {
        model,
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

/// Flattened analytic gradient of the mean log-loss over `batch`.
fn analytic_gradient(params: &TwoTowerParams, batch: &[PairExample], dataset: &Dataset) -> Vec<f64> {
    let refs: Vec<&PairExample> = batch.iter().collect();
    let acc = batch_gradient(params, &refs, dataset);
    let scale = 1.0 / acc.count as f64;
    let mut flat = Vec::with_capacity(params.param_count());
    for layer in acc.tower.iter().chain(&acc.head) {
        flat.extend(layer.w.iter().map(|g| g * scale));
        flat.extend(layer.b.iter().map(|g| g * scale));
    }
    flat
}

fn perturb(params: &mut TwoTowerParams, flat_index: usize, delta: f64) {
    let mut offset = 0;
    for layer in params.tower.iter_mut().chain(params.head.iter_mut()) {
        if flat_index < offset + layer.w.len() {
            layer.w[flat_index - offset] += delta;
            return;
        }
        offset += layer.w.len();
        if flat_index < offset + layer.b.len() {
            layer.b[flat_index - offset] += delta;
            return;
        }
        offset += layer.b.len();
    }
    panic!("flat index {flat_index} out of range");
}

/// Central finite differences of the mean log-loss, step 1e-5.
fn numeric_gradient(params: &TwoTowerParams, batch: &[PairExample], dataset: &Dataset) -> Vec<f64> {
    const STEP: f64 = 1e-5;
    let n = params.param_count();
    let mut out = Vec::with_capacity(n);
    let mut work = params.clone();
    for i in 0..n {
        perturb(&mut work, i, STEP);
        let up = eval_pair_loss(&work, batch, dataset);
        perturb(&mut work, i, -2.0 * STEP);
        let down = eval_pair_loss(&work, batch, dataset);
        perturb(&mut work, i, STEP);
        out.push((up - down) / (2.0 * STEP));
    }
    out
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

/// Compares the analytic log-loss gradient against central finite
/// differences on every parameter; returns the max relative error.
pub fn gradient_check(
    params: &TwoTowerParams,
    batch: &[PairExample],
    dataset: &Dataset,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("gradient check needs a non-empty batch".into()));
    }
    let analytic = analytic_gradient(params, batch, dataset);
    let numeric = numeric_gradient(params, batch, dataset);
    Ok(max_relative_error(&analytic, &numeric))
}

/// Routes each in-bucket pair to train or holdout by the point split.
///
/// A pair survives only when the oracle can decide it and both endpoints sit
/// on the same side of the split; cross-side pairs are discarded so no point
/// contributes to both sets. Cross-bucket duplicates are emitted once.
pub fn harvest_training_pairs(
    dataset: &Dataset,
    split: &PointSplit,
    buckets: &[Bucket],
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    let pairs = candidate_pairs(buckets, dataset);
    build_examples(dataset, split, &pairs)
}

/// Same routing over every labeled-labeled pair, for protocols that skip
/// hashing entirely.
pub fn harvest_all_pairs(
    dataset: &Dataset,
    split: &PointSplit,
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    let labeled = dataset.labeled_indices();
    let mut pairs = Vec::with_capacity(labeled.len() * (labeled.len().saturating_sub(1)) / 2);
    for (i, &a) in labeled.iter().enumerate() {
        for &b in &labeled[i + 1..] {
            pairs.push(canonical_pair(a, b, dataset));
        }
    }
    pairs.sort_unstable();
    build_examples(dataset, split, &pairs)
}

fn build_examples(
    dataset: &Dataset,
    split: &PointSplit,
    pairs: &[(u32, u32)],
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Train,
        Holdout,
    }
    let routed: Vec<(Side, PairExample)> = pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let pa = dataset.point(a);
            let pb = dataset.point(b);
            let same = oracle_same_class(pa, pb)?;
            let side = if split.is_train(&pa.id) && split.is_train(&pb.id) {
                Side::Train
            } else if split.is_holdout(&pa.id) && split.is_holdout(&pb.id) {
                Side::Holdout
            } else {
                return None;
            };
            let distances = distance_vector(pa, pb, dataset.schema()).ok()?;
            Some((
                side,
                PairExample {
                    a,
                    b,
                    distances,
                    pairwise_extras: None,
                    label: same,
                },
            ))
        })
        .collect();
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (side, ex) in routed {
        match side {
            Side::Train => train.push(ex),
            Side::Holdout => holdout.push(ex),
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyHarvest);
    }
    Ok((train, holdout))
}

/// Versioned text model format: a key-value header followed by row-major
/// weights at 17 significant digits, which round-trips f64 exactly.
pub fn write_model(params: &TwoTowerParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let fmt = |v: &f64| format!("{v:.16e}");
    (|| -> std::io::Result<()> {
        writeln!(w, "graphforge-model v1")?;
        writeln!(w, "schema_hash={}", params.schema_hash)?;
        writeln!(w, "init_seed={}", params.init_seed)?;
        writeln!(w, "tower_input_dim={}", params.tower_input_dim)?;
        writeln!(w, "distance_dim={}", params.distance_dim)?;
        let sizes = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| l.rows.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(w, "tower_layers={}", sizes(&params.tower))?;
        writeln!(w, "head_layers={}", sizes(&params.head))?;
        for (section, layers) in [("tower", &params.tower), ("head", &params.head)] {
            for (i, layer) in layers.iter().enumerate() {
                writeln!(w, "layer {section} {i}")?;
                for r in 0..layer.rows {
                    let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    writeln!(w, "{}", row.iter().map(fmt).collect::<Vec<_>>().join(" "))?;
                }
                writeln!(w, "{}", layer.b.iter().map(fmt).collect::<Vec<_>>().join(" "))?;
            }
        }
        Ok(())
    })()
    .map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<TwoTowerParams> {
    let bad = |message: &str| Error::BadModelFile {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| bad("unexpected end of file"))
    };
    if next_line()? != "graphforge-model v1" {
        return Err(bad("bad magic line"));
    }
    let mut header = std::collections::HashMap::new();
    for _ in 0..6 {
        let line = next_line()?;
        let (k, v) = line.split_once('=').ok_or_else(|| bad("bad header line"))?;
        header.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<String> {
        header.get(k).cloned().ok_or_else(|| bad(&format!("missing header key {k}")))
    };
    let parse_u64 = |k: &str| -> Result<u64> {
        get(k)?.parse().map_err(|_| bad(&format!("bad {k}")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| bad(&format!("bad {k}")))
    };
    let parse_sizes = |k: &str| -> Result<Vec<usize>> {
        let raw = get(k)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.parse().map_err(|_| bad(&format!("bad {k}"))))
            .collect()
    };
    let schema_hash = parse_u64("schema_hash")?;
    let init_seed = parse_u64("init_seed")?;
    let tower_input_dim = parse_usize("tower_input_dim")?;
    let distance_dim = parse_usize("distance_dim")?;
    let tower_sizes = parse_sizes("tower_layers")?;
    let head_sizes = parse_sizes("head_layers")?;
    if head_sizes.last() != Some(&1) {
        return Err(bad("head must end in a single output unit"));
    }
    let embedding_dim = tower_sizes.last().copied().unwrap_or(0);

    let mut read_stack = |sizes: &[usize], input_dim: usize, section: &str| -> Result<Vec<Layer>> {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut prev = input_dim;
        for (i, &rows) in sizes.iter().enumerate() {
            let marker = next_line()?;
            if marker != format!("layer {section} {i}") {
                return Err(bad(&format!("expected 'layer {section} {i}', got '{marker}'")));
            }
            let mut w = Vec::with_capacity(rows * prev);
            for _ in 0..rows {
                let line = next_line()?;
                let row: Vec<f64> = line
                    .split(' ')
                    .map(|s| s.parse().map_err(|_| bad("bad weight value")))
                    .collect::<Result<_>>()?;
                if row.len() != prev {
                    return Err(bad(&format!(
                        "layer {section} {i}: row width {} != {prev}",
                        row.len()
                    )));
                }
                w.extend(row);
            }
            let bias_line = next_line()?;
            let b: Vec<f64> = bias_line
                .split(' ')
                .map(|s| s.parse().map_err(|_| bad("bad bias value")))
                .collect::<Result<_>>()?;
            if b.len() != rows {
                return Err(bad(&format!("layer {section} {i}: bias width {} != {rows}", b.len())));
            }
            layers.push(Layer { rows, cols: prev, w, b });
            prev = rows;
        }
        Ok(layers)
    };
    let tower = read_stack(&tower_sizes, tower_input_dim, "tower")?;
    let head = read_stack(&head_sizes, embedding_dim + distance_dim, "head")?;
    Ok(TwoTowerParams {
        schema_hash,
        init_seed,
        tower_input_dim,
        distance_dim,
        tower,
        head,
    })
}
