//! Dataset schema, ingestion, the pair oracle, and leak-free point splitting.

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::seed::component_rng;
use rand::seq::SliceRandom;
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

/// What a mode's payload looks like.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Dense { dim: usize },
    TokenSet,
}

/// The natural distance attached to a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeMetric {
    Euclidean,
    Cosine,
    Jaccard,
}

impl ModeMetric {
    pub fn name(self) -> &'static str {
        match self {
            ModeMetric::Euclidean => "euclidean",
            ModeMetric::Cosine => "cosine",
            ModeMetric::Jaccard => "jaccard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSpec {
    pub name: String,
    pub kind: ModeKind,
    pub metric: ModeMetric,
}

/// Ordered list of modes; one payload per mode on every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalSchema {
    modes: Vec<ModeSpec>,
}

impl ModalSchema {
    pub fn new(modes: Vec<ModeSpec>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidSchema("schema needs at least one mode".into()));
        }
        let mut names = BTreeSet::new();
        for mode in &modes {
            if !names.insert(mode.name.clone()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate mode name '{}'",
                    mode.name
                )));
            }
            match (mode.kind, mode.metric) {
                (ModeKind::Dense { dim: 0 }, _) => {
                    return Err(Error::InvalidSchema(format!(
                        "mode '{}': dense dim must be >= 1",
                        mode.name
                    )));
                }
                (ModeKind::Dense { .. }, ModeMetric::Jaccard) => {
                    return Err(Error::InvalidSchema(format!(
                        "mode '{}': jaccard applies to token sets",
                        mode.name
                    )));
                }
                (ModeKind::TokenSet, ModeMetric::Euclidean | ModeMetric::Cosine) => {
                    return Err(Error::InvalidSchema(format!(
                        "mode '{}': {} applies to dense vectors",
                        mode.name,
                        mode.metric.name()
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { modes })
    }

    /// Number of modes, the `d` of every distance vector.
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn mode_index(&self, name: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.name == name)
    }

    /// Total dimensionality of all dense modes; the input width of an
    /// embedding tower.
    pub fn dense_dim(&self) -> usize {
        self.modes
            .iter()
            .map(|m| match m.kind {
                ModeKind::Dense { dim } => dim,
                ModeKind::TokenSet => 0,
            })
            .sum()
    }

    /// Stable hash of the schema layout, recorded in model files so a model
    /// cannot silently be applied to a differently-shaped dataset.
    pub fn stable_hash(&self) -> u64 {
        let mut text = String::new();
        for m in &self.modes {
            let kind = match m.kind {
                ModeKind::Dense { dim } => format!("dense:{dim}"),
                ModeKind::TokenSet => "tokens".to_string(),
            };
            text.push_str(&format!("{}|{}|{};", m.name, kind, m.metric.name()));
        }
        crate::seed::derive_seed(0x5eed, &text)
    }

    /// Parse the key-value schema file format:
    /// `mode.1.name=pixels`, `mode.1.kind=dense:256`, `mode.1.metric=euclidean`,
    /// optional `classes=10`.
    pub fn load(path: &Path) -> Result<(Self, Option<usize>)> {
        let kv = KvFile::load(path)?;
        let mut by_index: HashMap<usize, (Option<String>, Option<String>, Option<String>)> =
            HashMap::new();
        for (key, value) in kv.with_prefix("mode.") {
            let mut parts = key.splitn(3, '.');
            let _ = parts.next();
            let idx: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidSchema(format!("bad mode key '{key}'")))?;
            let field = parts
                .next()
                .ok_or_else(|| Error::InvalidSchema(format!("bad mode key '{key}'")))?;
            let slot = by_index.entry(idx).or_default();
            match field {
                "name" => slot.0 = Some(value.to_string()),
                "kind" => slot.1 = Some(value.to_string()),
                "metric" => slot.2 = Some(value.to_string()),
                other => {
                    return Err(Error::InvalidSchema(format!("unknown mode field '{other}'")))
                }
            }
        }
        if by_index.is_empty() {
            return Err(Error::InvalidSchema(format!(
                "{}: no mode.* keys found",
                path.display()
            )));
        }
        let mut indices: Vec<usize> = by_index.keys().copied().collect();
        indices.sort_unstable();
        let mut modes = Vec::with_capacity(indices.len());
        for idx in indices {
            let (name, kind, metric) = by_index.remove(&idx).unwrap();
            let name = name
                .ok_or_else(|| Error::InvalidSchema(format!("mode {idx}: missing name")))?;
            let kind_str =
                kind.ok_or_else(|| Error::InvalidSchema(format!("mode {idx}: missing kind")))?;
            let metric_str = metric
                .ok_or_else(|| Error::InvalidSchema(format!("mode {idx}: missing metric")))?;
            let kind = parse_kind(&kind_str)?;
            let metric = parse_metric(&metric_str)?;
            modes.push(ModeSpec { name, kind, metric });
        }
        let classes = kv.parse::<usize>("classes")?;
        Ok((Self::new(modes)?, classes))
    }

    pub fn save(&self, path: &Path, classes: Option<usize>) -> Result<()> {
        let mut kv = KvFile::new();
        for (i, m) in self.modes.iter().enumerate() {
            let n = i + 1;
            kv.set(&format!("mode.{n}.name"), &m.name);
            let kind = match m.kind {
                ModeKind::Dense { dim } => format!("dense:{dim}"),
                ModeKind::TokenSet => "tokens".to_string(),
            };
            kv.set(&format!("mode.{n}.kind"), &kind);
            kv.set(&format!("mode.{n}.metric"), m.metric.name());
        }
        if let Some(c) = classes {
            kv.set("classes", &c.to_string());
        }
        kv.save(path)
    }
}

fn parse_kind(raw: &str) -> Result<ModeKind> {
    if raw == "tokens" {
        return Ok(ModeKind::TokenSet);
    }
    if let Some(dim) = raw.strip_prefix("dense:") {
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::InvalidSchema(format!("bad dense dim '{raw}'")))?;
        return Ok(ModeKind::Dense { dim });
    }
    Err(Error::InvalidSchema(format!("unknown mode kind '{raw}'")))
}

fn parse_metric(raw: &str) -> Result<ModeMetric> {
    match raw {
        "euclidean" => Ok(ModeMetric::Euclidean),
        "cosine" => Ok(ModeMetric::Cosine),
        "jaccard" => Ok(ModeMetric::Jaccard),
        other => Err(Error::InvalidSchema(format!("unknown metric '{other}'"))),
    }
}

/// One mode's payload on one point.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    Tokens(BTreeSet<String>),
}

impl Payload {
    pub fn dense(&self) -> &[f64] {
        match self {
            Payload::Dense(v) => v,
            Payload::Tokens(_) => panic!("payload is a token set, not a dense vector"),
        }
    }

    pub fn tokens(&self) -> &BTreeSet<String> {
        match self {
            Payload::Tokens(t) => t,
            Payload::Dense(_) => panic!("payload is a dense vector, not a token set"),
        }
    }
}

/// One data item: opaque id, one payload per schema mode, optional class.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub id: String,
    pub payloads: Vec<Payload>,
    pub label: Option<usize>,
}

/// Immutable after construction; safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: ModalSchema,
    points: Vec<Point>,
    class_count: usize,
    index: HashMap<String, u32>,
}

impl Dataset {
    /// Validates all invariants: unique ids, payload shapes against the
    /// schema, labels inside `[0, class_count)`, finite dense values.
    pub fn new(schema: ModalSchema, points: Vec<Point>, class_count: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if index.insert(p.id.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
            if p.payloads.len() != schema.mode_count() {
                return Err(Error::InvalidSchema(format!(
                    "point '{}': {} payloads for {} modes",
                    p.id,
                    p.payloads.len(),
                    schema.mode_count()
                )));
            }
            for (payload, mode) in p.payloads.iter().zip(schema.modes()) {
                match (payload, mode.kind) {
                    (Payload::Dense(v), ModeKind::Dense { dim }) => {
                        if v.len() != dim {
                            return Err(Error::InvalidSchema(format!(
                                "point '{}', mode '{}': dim {} != {}",
                                p.id,
                                mode.name,
                                v.len(),
                                dim
                            )));
                        }
                        if v.iter().any(|x| !x.is_finite()) {
                            return Err(Error::InvalidSchema(format!(
                                "point '{}', mode '{}': non-finite value",
                                p.id, mode.name
                            )));
                        }
                    }
                    (Payload::Tokens(_), ModeKind::TokenSet) => {}
                    _ => {
                        return Err(Error::InvalidSchema(format!(
                            "point '{}', mode '{}': payload kind mismatch",
                            p.id, mode.name
                        )));
                    }
                }
            }
            if let Some(label) = p.label {
                if label >= class_count {
                    return Err(Error::LabelOutOfRange {
                        id: p.id.clone(),
                        label,
                        class_count,
                    });
                }
            }
        }
        Ok(Self {
            schema,
            points,
            class_count,
            index,
        })
    }

    pub fn schema(&self) -> &ModalSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn point(&self, idx: u32) -> &Point {
        &self.points[idx as usize]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    /// Indices of labeled points, in dataset order.
    pub fn labeled_indices(&self) -> Vec<u32> {
        (0..self.points.len() as u32)
            .filter(|&i| self.points[i as usize].label.is_some())
            .collect()
    }

    /// A copy in which only the listed points keep their labels. Everything
    /// downstream of a label-fraction protocol works on such a masked copy,
    /// so hidden labels cannot influence training or graph thresholds.
    pub fn mask_labels_except(&self, visible: &BTreeSet<String>) -> Dataset {
        let points = self
            .points
            .iter()
            .map(|p| Point {
                id: p.id.clone(),
                payloads: p.payloads.clone(),
                label: if visible.contains(&p.id) { p.label } else { None },
            })
            .collect();
        Dataset {
            schema: self.schema.clone(),
            points,
            class_count: self.class_count,
            index: self.index.clone(),
        }
    }

    /// Parse the line-oriented dataset format:
    /// `id<TAB>label_or_dash<TAB>mode1<TAB>...<TAB>modeN`, dense modes as
    /// comma-separated decimals, token modes as comma-separated tokens.
    ///
    /// `declared_classes` comes from the schema file when present; otherwise
    /// the class count is inferred as max label + 1.
    pub fn load(path: &Path, schema: &ModalSchema, declared_classes: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let path_str = path.display().to_string();
        let mut points = Vec::new();
        let mut max_label: Option<usize> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 + schema.mode_count() {
                return Err(Error::MalformedRow {
                    path: path_str.clone(),
                    line: lineno,
                    message: format!(
                        "expected {} tab-separated fields, got {}",
                        2 + schema.mode_count(),
                        fields.len()
                    ),
                });
            }
            let id = fields[0].to_string();
            if id.is_empty() {
                return Err(Error::MalformedRow {
                    path: path_str.clone(),
                    line: lineno,
                    message: "empty id".into(),
                });
            }
            let label = if fields[1] == "-" {
                None
            } else {
                let label: usize = fields[1].parse().map_err(|_| Error::MalformedRow {
                    path: path_str.clone(),
                    line: lineno,
                    message: format!("bad label '{}'", fields[1]),
                })?;
                if let Some(c) = declared_classes {
                    if label >= c {
                        return Err(Error::LabelOutOfRange {
                            id: id.clone(),
                            label,
                            class_count: c,
                        });
                    }
                }
                max_label = Some(max_label.map_or(label, |m: usize| m.max(label)));
                Some(label)
            };
            let mut payloads = Vec::with_capacity(schema.mode_count());
            for (mode, raw) in schema.modes().iter().zip(&fields[2..]) {
                match mode.kind {
                    ModeKind::Dense { dim } => {
                        let values: Vec<f64> = raw
                            .split(',')
                            .map(|s| s.trim().parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| Error::MalformedRow {
                                path: path_str.clone(),
                                line: lineno,
                                message: format!("mode '{}': bad decimal", mode.name),
                            })?;
                        if values.len() != dim {
                            return Err(Error::DimMismatch {
                                path: path_str.clone(),
                                line: lineno,
                                mode: mode.name.clone(),
                                expected: dim,
                                actual: values.len(),
                            });
                        }
                        if values.iter().any(|x| !x.is_finite()) {
                            return Err(Error::MalformedRow {
                                path: path_str.clone(),
                                line: lineno,
                                message: format!("mode '{}': non-finite value", mode.name),
                            });
                        }
                        payloads.push(Payload::Dense(values));
                    }
                    ModeKind::TokenSet => {
                        let tokens: BTreeSet<String> = raw
                            .split(',')
                            .map(|t| t.trim())
                            .filter(|t| !t.is_empty())
                            .map(|t| t.to_string())
                            .collect();
                        payloads.push(Payload::Tokens(tokens));
                    }
                }
            }
            points.push(Point { id, payloads, label });
        }
        let class_count = declared_classes.unwrap_or_else(|| max_label.map_or(0, |m| m + 1));
        Self::new(schema.clone(), points, class_count)
    }

    /// Write the same line format back out. Floats use Rust's shortest
    /// round-trip representation, so load(save(d)) == d exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for p in &self.points {
            let label = match p.label {
                Some(l) => l.to_string(),
                None => "-".to_string(),
            };
            write!(w, "{}\t{}", p.id, label).map_err(|e| Error::io(path, e))?;
            for payload in &p.payloads {
                let cell = match payload {
                    Payload::Dense(v) => v
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                    Payload::Tokens(t) => t.iter().cloned().collect::<Vec<_>>().join(","),
                };
                write!(w, "\t{cell}").map_err(|e| Error::io(path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Same-class oracle over a pair of points.
///
/// `Some(true)` when both are labeled with equal classes, `Some(false)` when
/// both are labeled with different classes, `None` when either is unlabeled —
/// pairs the oracle cannot decide are never treated as negatives.
pub fn oracle_same_class(a: &Point, b: &Point) -> Option<bool> {
    match (a.label, b.label) {
        (Some(x), Some(y)) => Some(x == y),
        _ => None,
    }
}

/// Point-level split used to harvest leak-free pair sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSplit {
    pub train_ids: BTreeSet<String>,
    pub holdout_ids: BTreeSet<String>,
}

impl PointSplit {
    pub fn is_train(&self, id: &str) -> bool {
        self.train_ids.contains(id)
    }

    pub fn is_holdout(&self, id: &str) -> bool {
        self.holdout_ids.contains(id)
    }
}

/// Deterministic stratified split of the labeled points.
///
/// Each class with at least two labeled points contributes to both sides;
/// a class with fewer goes wholly to train with a warning.
pub fn split_points(dataset: &Dataset, holdout_fraction: f64, seed: u64) -> Result<PointSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout_fraction must be in (0,1), got {holdout_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); dataset.class_count()];
    for p in dataset.points() {
        if let Some(label) = p.label {
            by_class[label].push(&p.id);
        }
    }
    let mut train_ids = BTreeSet::new();
    let mut holdout_ids = BTreeSet::new();
    for (class, mut ids) in by_class.into_iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        if ids.len() < 2 {
            log::warn!("class {class} has {} labeled point(s); assigning wholly to train", ids.len());
            for id in ids {
                train_ids.insert(id.to_string());
            }
            continue;
        }
        let mut rng = component_rng(seed, &format!("split/class/{class}"));
        ids.shuffle(&mut rng);
        let n = ids.len();
        let want = (n as f64 * holdout_fraction).round() as usize;
        let take = want.clamp(1, n - 1);
        for (i, id) in ids.into_iter().enumerate() {
            if i < take {
                holdout_ids.insert(id.to_string());
            } else {
                train_ids.insert(id.to_string());
            }
        }
    }
    Ok(PointSplit {
        train_ids,
        holdout_ids,
    })
}
