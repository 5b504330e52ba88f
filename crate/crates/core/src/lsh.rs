//! Per-metric hash families, AND/OR amplification, and the bucketing
//! pipeline that turns a dataset into candidate pairs.

use crate::dataset::{Dataset, ModalSchema, ModeKind, Point};
use crate::error::{Error, Result};
use crate::model::PairScorer;
use crate::seed::{component_rng, derive_seed};
use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

/// Hash family for one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HashFamily {
    /// Token sets; collision probability equals Jaccard similarity.
    MinHash,
    /// Dense vectors; sign of a Gaussian projection, collision 1 - theta/pi.
    RandomHyperplane,
    /// Dense vectors; quantized Gaussian projection for euclidean distance.
    PStable { width: f64 },
}

impl HashFamily {
    fn name(self) -> &'static str {
        match self {
            HashFamily::MinHash => "minhash",
            HashFamily::RandomHyperplane => "random_hyperplane",
            HashFamily::PStable { .. } => "p_stable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashFamilySpec {
    pub mode_name: String,
    pub family: HashFamily,
    pub bits_per_function: usize,
}

/// How per-mode hashes combine into one function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composition {
    /// Concatenate one sub-hash per listed mode; collision requires
    /// agreement in every mode.
    And,
    /// Pool functions across modes round-robin; a collision in any one
    /// mode's function produces a candidate pair.
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchConfig {
    pub families: Vec<HashFamilySpec>,
    pub composition: Composition,
    /// S, the number of sampled hash functions.
    pub num_functions: usize,
    /// K, the bucket cap; oversized buckets are randomly subdivided.
    pub bucket_cap: usize,
    /// Buckets larger than this are dropped outright before subdivision.
    pub drop_threshold: Option<usize>,
    pub seed: u64,
}

impl SketchConfig {
    pub fn validate(&self, schema: &ModalSchema) -> Result<()> {
        if self.num_functions < 1 {
            return Err(Error::InvalidConfig("num_functions must be >= 1".into()));
        }
        if self.bucket_cap < 2 {
            return Err(Error::InvalidConfig("bucket_cap must be >= 2".into()));
        }
        if let Some(t) = self.drop_threshold {
            if t < self.bucket_cap {
                return Err(Error::InvalidConfig(
                    "drop_threshold must be >= bucket_cap".into(),
                ));
            }
        }
        if self.families.is_empty() {
            return Err(Error::InvalidConfig("at least one hash family".into()));
        }
        for spec in &self.families {
            if spec.bits_per_function < 1 {
                return Err(Error::InvalidConfig("bits_per_function must be >= 1".into()));
            }
            let Some(idx) = schema.mode_index(&spec.mode_name) else {
                return Err(Error::InvalidConfig(format!(
                    "unknown mode '{}'",
                    spec.mode_name
                )));
            };
            let kind = schema.modes()[idx].kind;
            let compatible = match spec.family {
                HashFamily::MinHash => kind == ModeKind::TokenSet,
                HashFamily::RandomHyperplane | HashFamily::PStable { .. } => {
                    matches!(kind, ModeKind::Dense { .. })
                }
            };
            if !compatible {
                return Err(Error::FamilyModeMismatch {
                    family: spec.family.name().to_string(),
                    mode: spec.mode_name.clone(),
                });
            }
            if let HashFamily::PStable { width } = spec.family {
                if !(width > 0.0) {
                    return Err(Error::InvalidConfig("p_stable width must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// One sampled sub-hash bound to a single mode.
#[derive(Debug, Clone)]
enum ModeHashKind {
    MinHash { seeds: Vec<u64> },
    Hyperplane { planes: Vec<Vec<f64>> },
    PStable { width: f64, dirs: Vec<Vec<f64>>, offsets: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct ModeHash {
    mode_index: usize,
    kind: ModeHashKind,
}

impl ModeHash {
    pub fn mode_index(&self) -> usize {
        self.mode_index
    }
}

/// One of the S sampled functions: all listed modes under AND, one mode
/// under OR.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    parts: Vec<ModeHash>,
}

impl SampledFunction {
    pub fn parts(&self) -> &[ModeHash] {
        &self.parts
    }
}

#[derive(Debug, Clone)]
pub struct SampledFunctions {
    funcs: Vec<SampledFunction>,
}

impl SampledFunctions {
    pub fn functions(&self) -> &[SampledFunction] {
        &self.funcs
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut state: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        state ^= b as u64;
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

fn token_hash(seed: u64, token: &str) -> u64 {
    let mut state = seed ^ 0x9e3779b97f4a7c15;
    for &b in token.as_bytes() {
        state ^= b as u64;
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
        state ^= state >> 29;
    }
    // final avalanche
    state ^= state >> 33;
    state = state.wrapping_mul(0xff51afd7ed558ccd);
    state ^= state >> 33;
    state
}

fn sample_mode_hash(
    spec: &HashFamilySpec,
    schema: &ModalSchema,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> ModeHash {
    let mode_index = schema.mode_index(&spec.mode_name).expect("validated");
    let bits = spec.bits_per_function;
    let kind = match spec.family {
        HashFamily::MinHash => ModeHashKind::MinHash {
            seeds: (0..bits).map(|_| rng.random()).collect(),
        },
        HashFamily::RandomHyperplane => {
            let dim = match schema.modes()[mode_index].kind {
                ModeKind::Dense { dim } => dim,
                ModeKind::TokenSet => unreachable!("validated"),
            };
            let planes = (0..bits)
                .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            ModeHashKind::Hyperplane { planes }
        }
        HashFamily::PStable { width } => {
            let dim = match schema.modes()[mode_index].kind {
                ModeKind::Dense { dim } => dim,
                ModeKind::TokenSet => unreachable!("validated"),
            };
            let dirs = (0..bits)
                .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            let offsets = (0..bits).map(|_| rng.random_range(0.0..width)).collect();
            ModeHashKind::PStable { width, dirs, offsets }
        }
    };
    ModeHash { mode_index, kind }
}

/// Sample the S hash functions declared by `config`.
///
/// AND composition concatenates one sub-hash per listed mode into every
/// function; OR composition assigns function i to mode family i mod M.
/// Deterministic for a fixed config seed.
pub fn sample_hash_functions(
    config: &SketchConfig,
    schema: &ModalSchema,
) -> Result<SampledFunctions> {
    config.validate(schema)?;
    let mut funcs = Vec::with_capacity(config.num_functions);
    for s in 0..config.num_functions {
        let parts = match config.composition {
            Composition::And => config
                .families
                .iter()
                .enumerate()
                .map(|(fi, spec)| {
                    let mut rng = component_rng(config.seed, &format!("lsh/fn{s}/mode{fi}"));
                    sample_mode_hash(spec, schema, &mut rng)
                })
                .collect(),
            Composition::Or => {
                let spec = &config.families[s % config.families.len()];
                let mut rng = component_rng(config.seed, &format!("lsh/fn{s}"));
                vec![sample_mode_hash(spec, schema, &mut rng)]
            }
        };
        funcs.push(SampledFunction { parts });
    }
    Ok(SampledFunctions { funcs })
}

fn append_mode_hash(point: &Point, hash: &ModeHash, key: &mut Vec<u8>) {
    match &hash.kind {
        ModeHashKind::MinHash { seeds } => {
            let tokens = point.payloads[hash.mode_index].tokens();
            for &seed in seeds {
                let min = tokens
                    .iter()
                    .map(|t| token_hash(seed, t))
                    .min()
                    .unwrap_or(u64::MAX);
                key.extend_from_slice(&min.to_le_bytes());
            }
        }
        ModeHashKind::Hyperplane { planes } => {
            let x = point.payloads[hash.mode_index].dense();
            let mut byte = 0u8;
            let mut filled = 0;
            for plane in planes {
                let dot: f64 = plane.iter().zip(x).map(|(p, v)| p * v).sum();
                byte = (byte << 1) | u8::from(dot >= 0.0);
                filled += 1;
                if filled == 8 {
                    key.push(byte);
                    byte = 0;
                    filled = 0;
                }
            }
            if filled > 0 {
                key.push(byte << (8 - filled));
            }
        }
        ModeHashKind::PStable { width, dirs, offsets } => {
            let x = point.payloads[hash.mode_index].dense();
            for (dir, offset) in dirs.iter().zip(offsets) {
                let dot: f64 = dir.iter().zip(x).map(|(p, v)| p * v).sum();
                let cell = ((dot + offset) / width).floor() as i64;
                key.extend_from_slice(&cell.to_le_bytes());
            }
        }
    }
}

/// All S (function index, key) pairs for one point.
pub fn hash_point(point: &Point, functions: &SampledFunctions) -> Vec<(u32, Vec<u8>)> {
    functions
        .funcs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut key = Vec::new();
            for part in &f.parts {
                append_mode_hash(point, part, &mut key);
            }
            (i as u32, key)
        })
        .collect()
}

/// Set of points sharing one composite hash key, capped at the bucket cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    /// Function index, key bytes, and (for subdivided buckets) part ordinal.
    pub hash_key: Vec<u8>,
    /// Dataset point indices, unique within the bucket.
    pub members: Vec<u32>,
}

impl Bucket {
    pub fn member_ids<'a>(&'a self, dataset: &'a Dataset) -> impl Iterator<Item = &'a str> {
        self.members.iter().map(|&i| dataset.point(i).id.as_str())
    }

    /// Unordered pairs this bucket contributes.
    pub fn pair_count(&self) -> u64 {
        let n = self.members.len() as u64;
        n * (n - 1) / 2
    }
}

/// Hash every point with every sampled function, group sketches by
/// (function, key), then enforce the cap and drop rules.
///
/// Buckets above `drop_threshold` are discarded entirely; buckets above the
/// cap K are randomly subdivided (seeded) into parts of size at most K;
/// singleton buckets are discarded since they generate no pairs.
pub fn nn_sketching(dataset: &Dataset, config: &SketchConfig) -> Result<Vec<Bucket>> {
    let functions = sample_hash_functions(config, dataset.schema())?;
    let mut sketches: Vec<(u32, Vec<u8>, u32)> = (0..dataset.len() as u32)
        .into_par_iter()
        .flat_map_iter(|p| {
            hash_point(dataset.point(p), &functions)
                .into_iter()
                .map(move |(f, key)| (f, key, p))
        })
        .collect();
    sketches.par_sort_unstable();

    let mut buckets = Vec::new();
    let mut start = 0;
    while start < sketches.len() {
        let (func, key, _) = &sketches[start];
        let mut end = start + 1;
        while end < sketches.len() && sketches[end].0 == *func && &sketches[end].1 == key {
            end += 1;
        }
        let run = &sketches[start..end];
        let size = run.len();
        let too_large = config.drop_threshold.is_some_and(|t| size > t);
        if size >= 2 && !too_large {
            let mut base_key = Vec::with_capacity(4 + key.len());
            base_key.extend_from_slice(&func.to_le_bytes());
            base_key.extend_from_slice(key);
            let mut members: Vec<u32> = run.iter().map(|(_, _, p)| *p).collect();
            if size <= config.bucket_cap {
                buckets.push(Bucket {
                    hash_key: base_key,
                    members,
                });
            } else {
                let split_seed =
                    derive_seed(config.seed, &format!("lsh/split/{func}/{:x}", fnv1a64(key)));
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(split_seed);
                use rand_chacha::rand_core::SeedableRng as _;
                members.shuffle(&mut rng);
                for (part, chunk) in members.chunks(config.bucket_cap).enumerate() {
                    if chunk.len() < 2 {
                        continue;
                    }
                    let mut part_key = base_key.clone();
                    part_key.extend_from_slice(&(part as u16).to_le_bytes());
                    let mut part_members = chunk.to_vec();
                    part_members.sort_unstable();
                    buckets.push(Bucket {
                        hash_key: part_key,
                        members: part_members,
                    });
                }
            }
        }
        start = end;
    }
    Ok(buckets)
}

/// Unique unordered candidate pairs over all buckets, canonicalized by
/// point id order and sorted.
pub fn candidate_pairs(buckets: &[Bucket], dataset: &Dataset) -> Vec<(u32, u32)> {
    let mut pairs: Vec<(u32, u32)> = buckets
        .par_iter()
        .flat_map_iter(|bucket| {
            let members = &bucket.members;
            let dataset = &*dataset;
            (0..members.len()).flat_map(move |i| {
                (i + 1..members.len()).map(move |j| {
                    canonical_pair(members[i], members[j], dataset)
                })
            })
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    pairs
}

/// Orders a pair so the lexicographically smaller id comes first.
pub fn canonical_pair(a: u32, b: u32, dataset: &Dataset) -> (u32, u32) {
    if dataset.point(a).id <= dataset.point(b).id {
        (a, b)
    } else {
        (b, a)
    }
}

/// Measured (r, cr, p, q) sensitivity of a sketch configuration against a
/// trained scorer, with a random-pair baseline for comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Fraction of bucketed candidate pairs scoring at or above `r`.
    pub p_hat: f64,
    /// Fraction of bucketed candidate pairs scoring below `cr`.
    pub q_hat: f64,
    /// Same fractions over uniformly random pairs.
    pub random_p_hat: f64,
    pub random_q_hat: f64,
    /// Strong-tie score threshold (high precision).
    pub r: f64,
    /// Weak-tie score threshold (moderate precision).
    pub cr: f64,
    /// Number of random baseline pairs drawn.
    pub sample_count: usize,
    /// Number of distinct candidate pairs the sketch produced.
    pub candidate_pairs: u64,
}

/// Score every deduplicated candidate pair and `sample` random pairs,
/// reporting the strong-tie and weak-tie fractions of each.
pub fn measure_sensitivity(
    dataset: &Dataset,
    config: &SketchConfig,
    scorer: &dyn PairScorer,
    r: f64,
    cr: f64,
    sample: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if r < cr {
        return Err(Error::InvalidConfig(format!(
            "strong threshold r={r} must be >= weak threshold cr={cr} on the similarity scale"
        )));
    }
    let buckets = nn_sketching(dataset, config)?;
    let pairs = candidate_pairs(&buckets, dataset);
    if pairs.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let (strong, weak) = pairs
        .par_iter()
        .map(|&(a, b)| {
            let g = scorer.score(a, b);
            (u64::from(g >= r), u64::from(g < cr))
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    let n = pairs.len() as f64;

    let mut rng = component_rng(seed, "lsh/audit/baseline");
    let v = dataset.len() as u32;
    let mut rand_strong = 0u64;
    let mut rand_weak = 0u64;
    for _ in 0..sample {
        let a = rng.random_range(0..v);
        let mut b = rng.random_range(0..v);
        while b == a {
            b = rng.random_range(0..v);
        }
        let g = scorer.score(a.min(b), a.max(b));
        rand_strong += u64::from(g >= r);
        rand_weak += u64::from(g < cr);
    }
    Ok(SensitivityReport {
        p_hat: strong as f64 / n,
        q_hat: weak as f64 / n,
        random_p_hat: rand_strong as f64 / sample as f64,
        random_q_hat: rand_weak as f64 / sample as f64,
        r,
        cr,
        sample_count: sample,
        candidate_pairs: pairs.len() as u64,
    })
}

/// Debug dump: `hash_key_hex<TAB>id1,id2,...` per bucket.
pub fn write_bucket_dump(buckets: &[Bucket], dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for bucket in buckets {
        let hex: String = bucket.hash_key.iter().map(|b| format!("{b:02x}")).collect();
        let ids: Vec<&str> = bucket.member_ids(dataset).collect();
        writeln!(w, "{hex}\t{}", ids.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Collision probability of two points under freshly sampled configs,
/// estimated over `trials` seeds. A trial collides when any sampled
/// function maps both points to the same key.
pub fn any_collision_rate(
    a: &Point,
    b: &Point,
    schema: &ModalSchema,
    config: &SketchConfig,
    trials: u64,
) -> f64 {
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut cfg = config.clone();
            cfg.seed = derive_seed(config.seed, &format!("collision-trial/{t}"));
            let funcs = sample_hash_functions(&cfg, schema).expect("valid config");
            let ka = hash_point(a, &funcs);
            let kb = hash_point(b, &funcs);
            u64::from(ka.iter().zip(&kb).any(|(x, y)| x == y))
        })
        .sum();
    hits as f64 / trials as f64
}
