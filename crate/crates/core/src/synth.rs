//! Seeded synthetic dataset generators used by tests, benchmarks, and the
//! evaluation protocols.

use crate::dataset::{Dataset, ModalSchema, ModeKind, ModeMetric, ModeSpec, Payload, Point};
use crate::seed::component_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Gaussian class blobs in a single dense mode; every point is labeled.
#[derive(Debug, Clone)]
pub struct BlobSpec {
    pub points: usize,
    pub dim: usize,
    pub classes: usize,
    /// Class centers are drawn from N(0, center_spread^2) per coordinate.
    pub center_spread: f64,
    /// Per-coordinate noise around the class center.
    pub noise: f64,
    pub mode_name: String,
    pub metric: ModeMetric,
    pub seed: u64,
}

pub fn gaussian_blobs(spec: &BlobSpec) -> Dataset {
    let schema = ModalSchema::new(vec![ModeSpec {
        name: spec.mode_name.clone(),
        kind: ModeKind::Dense { dim: spec.dim },
        metric: spec.metric,
    }])
    .expect("valid blob schema");
    let mut rng = component_rng(spec.seed, "synth/blobs/centers");
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| spec.center_spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut points_rng = component_rng(spec.seed, "synth/blobs/points");
    let points: Vec<Point> = (0..spec.points)
        .map(|i| {
            let class = i % spec.classes;
            let values = centers[class]
                .iter()
                .map(|c| c + spec.noise * points_rng.sample::<f64, _>(StandardNormal))
                .collect();
            Point {
                id: format!("p{i:05}"),
                payloads: vec![Payload::Dense(values)],
                label: Some(class),
            }
        })
        .collect();
    Dataset::new(schema, points, spec.classes).expect("valid blob dataset")
}

/// Clustered data with a dense embedding mode and a token-set mode whose
/// vocabulary is cluster-specific plus shared noise tokens.
#[derive(Debug, Clone)]
pub struct MultiModeSpec {
    pub points: usize,
    pub clusters: usize,
    pub dense_dim: usize,
    pub dense_spread: f64,
    pub dense_noise: f64,
    /// Size of each cluster's private token vocabulary.
    pub cluster_vocab: usize,
    /// Tokens drawn from the cluster vocabulary per point.
    pub tokens_per_point: usize,
    /// Size of the shared noise vocabulary.
    pub noise_vocab: usize,
    /// Noise tokens drawn per point.
    pub noise_tokens_per_point: usize,
    pub seed: u64,
}

pub fn clustered_two_mode(spec: &MultiModeSpec) -> Dataset {
    let schema = ModalSchema::new(vec![
        ModeSpec {
            name: "embed".into(),
            kind: ModeKind::Dense { dim: spec.dense_dim },
            metric: ModeMetric::Euclidean,
        },
        ModeSpec {
            name: "tags".into(),
            kind: ModeKind::TokenSet,
            metric: ModeMetric::Jaccard,
        },
    ])
    .expect("valid two-mode schema");
    let mut rng = component_rng(spec.seed, "synth/multimode/centers");
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            (0..spec.dense_dim)
                .map(|_| spec.dense_spread * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut rng = component_rng(spec.seed, "synth/multimode/points");
    let points: Vec<Point> = (0..spec.points)
        .map(|i| {
            let cluster = i % spec.clusters;
            let values: Vec<f64> = centers[cluster]
                .iter()
                .map(|c| c + spec.dense_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut tokens = BTreeSet::new();
            for _ in 0..spec.tokens_per_point {
                let t = rng.random_range(0..spec.cluster_vocab);
                tokens.insert(format!("c{cluster}t{t}"));
            }
            for _ in 0..spec.noise_tokens_per_point {
                let t = rng.random_range(0..spec.noise_vocab);
                tokens.insert(format!("n{t}"));
            }
            Point {
                id: format!("p{i:05}"),
                payloads: vec![Payload::Dense(values), Payload::Tokens(tokens)],
                label: Some(cluster),
            }
        })
        .collect();
    Dataset::new(schema, points, spec.clusters).expect("valid two-mode dataset")
}

/// Segment endpoints of a seven-segment digit glyph in the unit square,
/// y pointing down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.25, 0.10), (0.75, 0.10)), // A top
    ((0.75, 0.10), (0.75, 0.50)), // B top right
    ((0.75, 0.50), (0.75, 0.90)), // C bottom right
    ((0.25, 0.90), (0.75, 0.90)), // D bottom
    ((0.25, 0.50), (0.25, 0.90)), // E bottom left
    ((0.25, 0.10), (0.25, 0.50)), // F top left
    ((0.25, 0.50), (0.75, 0.50)), // G middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 4, 3, 2],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

/// Rendered glyph digits with per-point affine jitter, stroke-width jitter,
/// pixel noise, and brightness scaling; a desk-scale stand-in with the same
/// shape as scanned handwritten digit data.
#[derive(Debug, Clone)]
pub struct DigitSpec {
    pub points: usize,
    /// Image side; the dense mode carries side*side pixels.
    pub side: usize,
    /// Max absolute translation in pixels.
    pub shift: f64,
    /// Max absolute rotation in radians.
    pub rotate: f64,
    /// Max absolute shear.
    pub shear: f64,
    /// Base stroke half-width, in units of the glyph box.
    pub thickness: f64,
    /// Relative stroke-width jitter.
    pub thickness_jitter: f64,
    /// Std of additive per-pixel Gaussian noise.
    pub pixel_noise: f64,
    /// Intensity scale drawn from U[1-j, 1+j].
    pub brightness_jitter: f64,
    pub metric: ModeMetric,
    pub seed: u64,
}

fn segment_distance(px: f64, py: f64, seg: ((f64, f64), (f64, f64))) -> f64 {
    let ((x1, y1), (x2, y2)) = seg;
    let (dx, dy) = (x2 - x1, y2 - y1);
    let len_sq = dx * dx + dy * dy;
    let t = (((px - x1) * dx + (py - y1) * dy) / len_sq).clamp(0.0, 1.0);
    let (cx, cy) = (x1 + t * dx, y1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

pub fn digits(spec: &DigitSpec) -> Dataset {
    let dim = spec.side * spec.side;
    let schema = ModalSchema::new(vec![ModeSpec {
        name: "pixels".into(),
        kind: ModeKind::Dense { dim },
        metric: spec.metric,
    }])
    .expect("valid digit schema");
    let points: Vec<Point> = (0..spec.points)
        .into_par_iter()
        .map(|i| {
            let digit = i % 10;
            let mut rng = component_rng(spec.seed, &format!("synth/digits/{i}"));
            let tx = rng.random_range(-spec.shift..=spec.shift) / spec.side as f64;
            let ty = rng.random_range(-spec.shift..=spec.shift) / spec.side as f64;
            let angle = rng.random_range(-spec.rotate..=spec.rotate);
            let shear = rng.random_range(-spec.shear..=spec.shear);
            let sigma = spec.thickness
                * (1.0 + rng.random_range(-spec.thickness_jitter..=spec.thickness_jitter));
            let brightness =
                1.0 + rng.random_range(-spec.brightness_jitter..=spec.brightness_jitter);
            let (sin, cos) = angle.sin_cos();
            let mut values = Vec::with_capacity(dim);
            for row in 0..spec.side {
                for col in 0..spec.side {
                    // invert the affine map to glyph coordinates
                    let px = (col as f64 + 0.5) / spec.side as f64 - 0.5 - tx;
                    let py = (row as f64 + 0.5) / spec.side as f64 - 0.5 - ty;
                    let rx = cos * px + sin * py;
                    let ry = -sin * px + cos * py;
                    let gx = rx - shear * ry + 0.5;
                    let gy = ry + 0.5;
                    let mut intensity: f64 = 0.0;
                    for &s in DIGIT_SEGMENTS[digit] {
                        let d = segment_distance(gx, gy, SEGMENTS[s]);
                        intensity = intensity.max((-d * d / (2.0 * sigma * sigma)).exp());
                    }
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let v = brightness * intensity + spec.pixel_noise * noise;
                    values.push(v.clamp(0.0, 1.0));
                }
            }
            Point {
                id: format!("d{i:05}"),
                payloads: vec![Payload::Dense(values)],
                label: Some(digit),
            }
        })
        .collect();
    Dataset::new(schema, points, 10).expect("valid digit dataset")
}

/// 16x16 digit sample shaped like the scanned-envelope digit set: mild
/// jitter, a euclidean pixel metric.
pub fn usps_like(points: usize, seed: u64) -> Dataset {
    digits(&DigitSpec {
        points,
        side: 16,
        shift: 1.6,
        rotate: 0.22,
        shear: 0.18,
        thickness: 0.055,
        thickness_jitter: 0.35,
        pixel_noise: 0.18,
        brightness_jitter: 0.0,
        metric: ModeMetric::Euclidean,
        seed,
    })
}

/// 28x28 digit sample with strong brightness variation, which a shared-sigma
/// RBF kernel on raw pixels cannot normalize away; a cosine pixel metric.
pub fn mnist_like(points: usize, seed: u64) -> Dataset {
    digits(&DigitSpec {
        points,
        side: 28,
        shift: 2.8,
        rotate: 0.25,
        shear: 0.22,
        thickness: 0.045,
        thickness_jitter: 0.4,
        pixel_noise: 0.12,
        brightness_jitter: 0.65,
        metric: ModeMetric::Cosine,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_stratified() {
        let spec = BlobSpec {
            points: 30,
            dim: 4,
            classes: 3,
            center_spread: 2.0,
            noise: 0.3,
            mode_name: "v".into(),
            metric: ModeMetric::Euclidean,
            seed: 5,
        };
        let a = gaussian_blobs(&spec);
        let b = gaussian_blobs(&spec);
        assert_eq!(a.points(), b.points());
        for class in 0..3 {
            let n = a.points().iter().filter(|p| p.label == Some(class)).count();
            assert_eq!(n, 10);
        }
    }

    #[test]
    fn digits_have_class_structure() {
        let ds = usps_like(100, 3);
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.schema().dense_dim(), 256);
        // same-digit images should be closer on average than cross-digit
        let dist = |a: u32, b: u32| {
            crate::metrics::euclidean(
                ds.point(a).payloads[0].dense(),
                ds.point(b).payloads[0].dense(),
            )
            .unwrap()
        };
        // points 0,10,20 are digit 0; 1,11 are digit 1
        let same = dist(0, 10) + dist(0, 20) + dist(10, 20);
        let cross = dist(0, 1) + dist(0, 11) + dist(10, 1);
        assert!(same < cross, "same {same} cross {cross}");
    }

    #[test]
    fn two_mode_tokens_share_cluster_vocab() {
        let ds = clustered_two_mode(&MultiModeSpec {
            points: 20,
            clusters: 2,
            dense_dim: 4,
            dense_spread: 3.0,
            dense_noise: 0.3,
            cluster_vocab: 30,
            tokens_per_point: 8,
            noise_vocab: 50,
            noise_tokens_per_point: 2,
            seed: 9,
        });
        let same = crate::metrics::jaccard_distance(
            ds.point(0).payloads[1].tokens(),
            ds.point(2).payloads[1].tokens(),
        );
        let cross = crate::metrics::jaccard_distance(
            ds.point(0).payloads[1].tokens(),
            ds.point(1).payloads[1].tokens(),
        );
        assert!(same < cross, "same {same} cross {cross}");
    }
}
