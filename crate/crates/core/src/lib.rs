//! Learns a task-specific pairwise similarity function from a partially
//! labeled multi-modal dataset, builds an approximate nearest-neighbor graph
//! via locality-sensitive hashing, and classifies unlabeled points by label
//! propagation over that graph.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kv;
pub mod lsh;
pub mod metrics;
pub mod model;
pub mod propagate;
pub mod seed;
pub mod synth;

pub use dataset::{
    Dataset, ModalSchema, ModeKind, ModeMetric, ModeSpec, Payload, Point, PointSplit,
    oracle_same_class, split_points,
};
pub use error::{Error, Result};
pub use eval::{DegreeReport, ExperimentReport, PipelineConfig, PrPoint, RbfBaselineConfig};
pub use graph::{BuildConfig, BuildStats, Edge, Graph};
pub use lsh::{
    Bucket, Composition, HashFamily, HashFamilySpec, SampledFunctions, SensitivityReport,
    SketchConfig,
};
pub use metrics::DistanceVector;
pub use model::{
    ModelArch, PairExample, PairScorer, Scorer, TrainConfig, TrainOutcome, TwoTowerParams,
};
pub use propagate::{LabelScores, PropagationConfig, PropagationRule};
pub use seed::derive_seed;
