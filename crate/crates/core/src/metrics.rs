//! Per-mode natural distances and the pair distance vector.
//!
//! All arithmetic is double precision; every function here is pure and
//! symmetric in its two arguments, bit for bit.

use crate::dataset::{ModalSchema, ModeMetric, Point};
use crate::error::{Error, Result};
use std::collections::BTreeSet;

/// The d per-mode distances for one unordered pair, ordered by schema mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector {
    pub values: Vec<f64>,
}

/// L2 norm of the difference.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::VectorDimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

/// `1 - cos(a, b)`, in [0, 2]. A zero vector paired with anything is defined
/// as distance 1 (maximal uncertainty) rather than a fault.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::VectorDimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// `1 - |a ∩ b| / |a ∪ b|`; two empty sets have distance 0.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    1.0 - intersection as f64 / union as f64
}

/// The schema metric applied per mode; entry i is mode i's distance.
pub fn distance_vector(a: &Point, b: &Point, schema: &ModalSchema) -> Result<DistanceVector> {
    let mut values = Vec::with_capacity(schema.mode_count());
    for (i, mode) in schema.modes().iter().enumerate() {
        let v = match mode.metric {
            ModeMetric::Euclidean => euclidean(a.payloads[i].dense(), b.payloads[i].dense())?,
            ModeMetric::Cosine => cosine_distance(a.payloads[i].dense(), b.payloads[i].dense())?,
            ModeMetric::Jaccard => {
                jaccard_distance(a.payloads[i].tokens(), b.payloads[i].tokens())
            }
        };
        values.push(v);
    }
    Ok(DistanceVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ModeKind, ModeSpec, Payload};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn euclidean_cases() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let d = euclidean(&[1.0, 1.0], &[-1.0, -1.0]).unwrap();
        assert!((d - 2.0 * 2.0_f64.sqrt()).abs() < 1e-12);
        assert!(euclidean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[2.0, 0.0], &[5.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        // zero-vector rule
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn toks(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_distance(&toks(&["x", "y"]), &toks(&["x", "y"])), 0.0);
        assert_eq!(
            jaccard_distance(&toks(&["a", "b", "c"]), &toks(&["b", "c", "d"])),
            0.5
        );
        assert_eq!(jaccard_distance(&toks(&[]), &toks(&["a"])), 1.0);
        assert_eq!(jaccard_distance(&toks(&[]), &toks(&[])), 0.0);
    }

    fn pair_points() -> (Point, Point, ModalSchema) {
        let schema = ModalSchema::new(vec![
            ModeSpec {
                name: "v".into(),
                kind: ModeKind::Dense { dim: 2 },
                metric: ModeMetric::Euclidean,
            },
            ModeSpec {
                name: "t".into(),
                kind: ModeKind::TokenSet,
                metric: ModeMetric::Jaccard,
            },
        ])
        .unwrap();
        let a = Point {
            id: "a".into(),
            payloads: vec![Payload::Dense(vec![0.0, 0.0]), Payload::Tokens(toks(&["a", "b", "c"]))],
            label: None,
        };
        let b = Point {
            id: "b".into(),
            payloads: vec![Payload::Dense(vec![3.0, 4.0]), Payload::Tokens(toks(&["b", "c", "d"]))],
            label: None,
        };
        (a, b, schema)
    }

    #[test]
    fn distance_vector_concatenates_modes() {
        let (a, b, schema) = pair_points();
        let dv = distance_vector(&a, &b, &schema).unwrap();
        assert_eq!(dv.values, vec![5.0, 0.5]);
        // identity
        let self_dv = distance_vector(&a, &a, &schema).unwrap();
        assert_eq!(self_dv.values, vec![0.0, 0.0]);
        // per-mode independence: differ only in mode 2
        let mut c = a.clone();
        c.payloads[1] = Payload::Tokens(toks(&["z"]));
        let dv2 = distance_vector(&a, &c, &schema).unwrap();
        assert_eq!(dv2.values[0], 0.0);
        assert!(dv2.values[1] > 0.0);
    }

    #[test]
    fn metric_axioms_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            // symmetry, bit-exact
            assert_eq!(euclidean(&a, &b).unwrap(), euclidean(&b, &a).unwrap());
            assert_eq!(
                cosine_distance(&a, &b).unwrap(),
                cosine_distance(&b, &a).unwrap()
            );
            // identity
            assert_eq!(euclidean(&a, &a).unwrap(), 0.0);
            // triangle inequality for euclidean
            let ab = euclidean(&a, &b).unwrap();
            let bc = euclidean(&b, &c).unwrap();
            let ac = euclidean(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
        // jaccard triangle inequality on random small sets
        let universe = ["a", "b", "c", "d", "e", "f"];
        for _ in 0..200 {
            let draw = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
                universe
                    .iter()
                    .filter(|_| rng.random_range(0.0..1.0) < 0.5)
                    .map(|s| s.to_string())
                    .collect()
            };
            let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            assert_eq!(jaccard_distance(&x, &y), jaccard_distance(&y, &x));
            assert_eq!(jaccard_distance(&x, &x), 0.0);
            assert!(
                jaccard_distance(&x, &z)
                    <= jaccard_distance(&x, &y) + jaccard_distance(&y, &z) + 1e-12
            );
        }
    }

    #[test]
    fn distance_vector_symmetric_elementwise() {
        let (a, b, schema) = pair_points();
        assert_eq!(
            distance_vector(&a, &b, &schema).unwrap(),
            distance_vector(&b, &a, &schema).unwrap()
        );
    }
}
