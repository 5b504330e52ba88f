//! Label inference over a built graph: one-shot product scoring, iterative
//! propagation, max-edge seed scoring, and the Potts-loss diagnostic.

use crate::error::{Error, Result};
use crate::graph::Graph;
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationRule {
    ProductOneShot,
    Iterative,
    MaxEdge,
}

impl std::str::FromStr for PropagationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product_one_shot" => Ok(PropagationRule::ProductOneShot),
            "iterative" => Ok(PropagationRule::Iterative),
            "max_edge" => Ok(PropagationRule::MaxEdge),
            other => Err(Error::UnknownRule(other.to_string())),
        }
    }
}

impl PropagationRule {
    pub fn name(self) -> &'static str {
        match self {
            PropagationRule::ProductOneShot => "product_one_shot",
            PropagationRule::Iterative => "iterative",
            PropagationRule::MaxEdge => "max_edge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub rule: PropagationRule,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            alpha: 0.5,
            beta: 0.5,
            iterations: 10,
            rule: PropagationRule::ProductOneShot,
        }
    }
}

/// Per-node class scores plus the argmax decision. A node abstains when the
/// selected rule has no information for it (no labeled neighbor).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScores {
    pub scores: Vec<f64>,
    pub predicted: Option<usize>,
    pub abstained: bool,
}

impl LabelScores {
    fn from_scores(scores: Vec<f64>, abstained: bool) -> Self {
        let predicted = if abstained {
            None
        } else {
            // deterministic argmax: first index of the maximum
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            Some(best)
        };
        LabelScores {
            scores,
            predicted,
            abstained,
        }
    }
}

/// Weighted nearest-neighbor product rule: score(i,c) is the product of edge
/// weights to labeled neighbors of class c (exp of summed log weights).
/// Classes with no labeled neighbor score 0; a node with none at all
/// abstains.
pub fn classify_one_shot(
    graph: &Graph,
    seeds: &HashMap<String, usize>,
    class_count: usize,
) -> Vec<LabelScores> {
    let seed_classes: Vec<Option<usize>> = graph
        .node_ids()
        .iter()
        .map(|id| seeds.get(id).copied())
        .collect();
    let adjacency = graph.adjacency();
    (0..graph.node_count())
        .into_par_iter()
        .map(|node| {
            let mut log_sums = vec![0.0f64; class_count];
            let mut seen = vec![false; class_count];
            for &(neighbor, weight) in &adjacency[node] {
                if let Some(class) = seed_classes[neighbor as usize] {
                    log_sums[class] += weight.ln();
                    seen[class] = true;
                }
            }
            let scores: Vec<f64> = log_sums
                .iter()
                .zip(&seen)
                .map(|(&ls, &s)| if s { ls.exp() } else { 0.0 })
                .collect();
            let abstained = !seen.iter().any(|&s| s);
            LabelScores::from_scores(scores, abstained)
        })
        .collect()
}

/// Single-nearest-neighbor seed affinity: the maximum weight of any edge
/// from a node to a seed, zero when it has none. A seed never counts itself.
pub fn classify_max_edge(graph: &Graph, seeds: &std::collections::BTreeSet<String>) -> Vec<f64> {
    let is_seed: Vec<bool> = graph
        .node_ids()
        .iter()
        .map(|id| seeds.contains(id))
        .collect();
    let adjacency = graph.adjacency();
    (0..graph.node_count())
        .into_par_iter()
        .map(|node| {
            adjacency[node]
                .iter()
                .filter(|(n, _)| is_seed[*n as usize])
                .map(|&(_, w)| w)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Jacobi-style label update: y_hat(n+1) = alpha*y + beta * weighted mean of
/// neighbor scores, run for a fixed number of rounds from one-hot seeds and
/// a uniform prior elsewhere. A node with zero incident weight keeps its
/// previous score.
pub fn propagate_iterative(
    graph: &Graph,
    seeds: &HashMap<String, usize>,
    config: &PropagationConfig,
    class_count: usize,
) -> Result<Vec<LabelScores>> {
    if config.alpha + config.beta <= 0.0 {
        return Err(Error::InvalidConfig(
            "iterative rule needs alpha + beta > 0".into(),
        ));
    }
    if config.alpha < 0.0 || config.beta < 0.0 {
        return Err(Error::InvalidConfig("alpha and beta must be >= 0".into()));
    }
    let n = graph.node_count();
    let seed_classes: Vec<Option<usize>> = graph
        .node_ids()
        .iter()
        .map(|id| seeds.get(id).copied())
        .collect();
    let adjacency = graph.adjacency();
    let uniform = 1.0 / class_count.max(1) as f64;
    let mut current: Vec<Vec<f64>> = seed_classes
        .iter()
        .map(|seed| match seed {
            Some(class) => one_hot(*class, class_count),
            None => vec![uniform; class_count],
        })
        .collect();
    for _ in 0..config.iterations {
        let next: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|node| {
                let total_weight: f64 = adjacency[node].iter().map(|&(_, w)| w).sum();
                if total_weight == 0.0 {
                    return current[node].clone();
                }
                let prior = seed_classes[node];
                (0..class_count)
                    .map(|c| {
                        let neighbor_sum: f64 = adjacency[node]
                            .iter()
                            .map(|&(j, w)| w * current[j as usize][c])
                            .sum();
                        let fit = match prior {
                            Some(class) if class == c => 1.0,
                            _ => 0.0,
                        };
                        config.alpha * fit + config.beta * neighbor_sum / total_weight
                    })
                    .collect()
            })
            .collect();
        current = next;
    }
    Ok(current
        .into_iter()
        .map(|scores| LabelScores::from_scores(scores, false))
        .collect())
}

fn one_hot(class: usize, class_count: usize) -> Vec<f64> {
    let mut v = vec![0.0; class_count];
    v[class] = 1.0;
    v
}

/// Smoothness-plus-fit diagnostic over the graph:
/// sum over edges of w_ij * sum_c |y_i,c - y_j,c|, plus the seed fit term.
/// Abstaining nodes contribute a uniform 1/C score vector.
pub fn potts_loss(
    graph: &Graph,
    scores: &[LabelScores],
    seeds: &HashMap<String, usize>,
    class_count: usize,
) -> f64 {
    let uniform = vec![1.0 / class_count.max(1) as f64; class_count];
    let vec_of = |node: usize| -> &[f64] {
        if scores[node].abstained {
            &uniform
        } else {
            &scores[node].scores
        }
    };
    let smoothness: f64 = graph
        .edge_tuples()
        .map(|(i, j, w)| {
            let (si, sj) = (vec_of(i as usize), vec_of(j as usize));
            let l1: f64 = si.iter().zip(sj).map(|(a, b)| (a - b).abs()).sum();
            w * l1
        })
        .sum();
    let fit: f64 = graph
        .node_ids()
        .iter()
        .enumerate()
        .filter_map(|(node, id)| {
            let class = *seeds.get(id)?;
            let truth = one_hot(class, class_count);
            let s = vec_of(node);
            Some(s.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>())
        })
        .sum();
    smoothness + fit
}

/// Predictions file: `node_id<TAB>class_or_ABSTAIN<TAB>score_c0,score_c1,...`
pub fn write_predictions(graph: &Graph, scores: &[LabelScores], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (node, ls) in scores.iter().enumerate() {
        let decision = match ls.predicted {
            Some(class) => class.to_string(),
            None => "ABSTAIN".to_string(),
        };
        let scores_text = ls
            .scores
            .iter()
            .map(|s| format!("{s:.8e}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{}\t{}\t{}", graph.node_id(node as u32), decision, scores_text)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Max-edge scores use the same three-column shape with a `-` decision.
pub fn write_max_edge_scores(graph: &Graph, scores: &[f64], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (node, s) in scores.iter().enumerate() {
        writeln!(w, "{}\t-\t{s:.8e}", graph.node_id(node as u32))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads the predictions format back; used by tests and downstream tools.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Option<usize>, Vec<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedRow {
            path: path.display().to_string(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        }
        let decision = match fields[1] {
            "ABSTAIN" | "-" => None,
            raw => Some(raw.parse().map_err(|_| bad(format!("bad class '{raw}'")))?),
        };
        let scores: Vec<f64> = fields[2]
            .split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("bad score '{s}'"))))
            .collect::<Result<_>>()?;
        out.push((fields[0].to_string(), decision, scores));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use std::collections::BTreeSet;

    fn graph(edges: &[(&str, &str, f64)], extra_nodes: &[&str]) -> Graph {
        let edges = edges
            .iter()
            .map(|&(s, d, w)| Edge {
                src: s.to_string(),
                dst: d.to_string(),
                weight: w,
            })
            .collect();
        Graph::from_edges(extra_nodes.iter().map(|s| s.to_string()).collect(), edges).unwrap()
    }

    fn seeds(pairs: &[(&str, usize)]) -> HashMap<String, usize> {
        pairs.iter().map(|&(id, c)| (id.to_string(), c)).collect()
    }

    #[test]
    fn one_shot_single_neighbor() {
        let g = graph(&[("seed", "u", 0.8)], &[]);
        let s = seeds(&[("seed", 2)]);
        let scores = classify_one_shot(&g, &s, 3);
        let u = g.node_index("u").unwrap() as usize;
        assert_eq!(scores[u].predicted, Some(2));
        assert!((scores[u].scores[2] - 0.8).abs() < 1e-12);
        assert_eq!(scores[u].scores[0], 0.0);
    }

    #[test]
    fn one_shot_product_beats_two_strong_neighbors() {
        // class A: weights {0.9, 0.9} -> 0.81; class B: {0.95} -> 0.95
        let g = graph(
            &[("a1", "u", 0.9), ("a2", "u", 0.9), ("b1", "u", 0.95)],
            &[],
        );
        let s = seeds(&[("a1", 0), ("a2", 0), ("b1", 1)]);
        let scores = classify_one_shot(&g, &s, 2);
        let u = g.node_index("u").unwrap() as usize;
        assert!((scores[u].scores[0] - 0.81).abs() < 1e-12);
        assert!((scores[u].scores[1] - 0.95).abs() < 1e-12);
        assert_eq!(scores[u].predicted, Some(1));
    }

    #[test]
    fn one_shot_isolated_abstains() {
        let g = graph(&[("seed", "u", 0.5)], &["island"]);
        let s = seeds(&[("seed", 0)]);
        let scores = classify_one_shot(&g, &s, 2);
        let island = g.node_index("island").unwrap() as usize;
        assert!(scores[island].abstained);
        assert_eq!(scores[island].predicted, None);
    }

    #[test]
    fn one_shot_scale_consistency() {
        // adding a class-c neighbor of weight g multiplies score(c) by g
        let g1 = graph(&[("s1", "u", 0.7)], &[]);
        let g2 = graph(&[("s1", "u", 0.7), ("s2", "u", 0.4)], &[]);
        let s = seeds(&[("s1", 0), ("s2", 0)]);
        let u1 = classify_one_shot(&g1, &seeds(&[("s1", 0)]), 1);
        let u2 = classify_one_shot(&g2, &s, 1);
        let a = u1[g1.node_index("u").unwrap() as usize].scores[0];
        let b = u2[g2.node_index("u").unwrap() as usize].scores[0];
        assert!((b - a * 0.4).abs() < 1e-12);
    }

    #[test]
    fn one_shot_argmax_invariant_under_class_permutation() {
        let g = graph(
            &[("a", "u", 0.9), ("b", "u", 0.8), ("a", "v", 0.3), ("b", "v", 0.6)],
            &[],
        );
        let original = classify_one_shot(&g, &seeds(&[("a", 0), ("b", 1)]), 2);
        let permuted = classify_one_shot(&g, &seeds(&[("a", 1), ("b", 0)]), 2);
        for (o, p) in original.iter().zip(&permuted) {
            match (o.predicted, p.predicted) {
                (Some(x), Some(y)) => assert_eq!(x, 1 - y),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn max_edge_cases() {
        let g = graph(
            &[("s1", "u", 0.3), ("s2", "u", 0.8), ("u", "v", 0.9)],
            &["lonely"],
        );
        let mut seed_set = BTreeSet::new();
        seed_set.insert("s1".to_string());
        seed_set.insert("s2".to_string());
        let scores = classify_max_edge(&g, &seed_set);
        assert_eq!(scores[g.node_index("u").unwrap() as usize], 0.8);
        // v touches no seed
        assert_eq!(scores[g.node_index("v").unwrap() as usize], 0.0);
        assert_eq!(scores[g.node_index("lonely").unwrap() as usize], 0.0);
        // a seed scores only against other seeds; s1-s2 share no edge
        assert_eq!(scores[g.node_index("s1").unwrap() as usize], 0.0);
    }

    #[test]
    fn max_edge_empty_seed_set_all_zero() {
        let g = graph(&[("a", "b", 0.9)], &[]);
        let scores = classify_max_edge(&g, &BTreeSet::new());
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn iterative_alpha_one_beta_zero_freezes_seeds() {
        let g = graph(&[("seed", "u", 0.9)], &[]);
        let s = seeds(&[("seed", 1)]);
        let cfg = PropagationConfig {
            alpha: 1.0,
            beta: 0.0,
            iterations: 5,
            rule: PropagationRule::Iterative,
        };
        let scores = propagate_iterative(&g, &s, &cfg, 2).unwrap();
        let seed_idx = g.node_index("seed").unwrap() as usize;
        let u_idx = g.node_index("u").unwrap() as usize;
        assert_eq!(scores[seed_idx].scores, vec![0.0, 1.0]);
        // unlabeled: alpha*0 + 0 -> stays at its previous value only when
        // degree is zero; here it collapses to zero fit with beta = 0
        assert_eq!(scores[u_idx].scores, vec![0.0, 0.0]);
    }

    #[test]
    fn iterative_single_edge_copies_seed() {
        let g = graph(&[("seed", "u", 0.42)], &[]);
        let s = seeds(&[("seed", 0)]);
        let cfg = PropagationConfig {
            alpha: 0.0,
            beta: 1.0,
            iterations: 1,
            rule: PropagationRule::Iterative,
        };
        let scores = propagate_iterative(&g, &s, &cfg, 2).unwrap();
        let u_idx = g.node_index("u").unwrap() as usize;
        assert_eq!(scores[u_idx].scores, vec![1.0, 0.0]);
    }

    #[test]
    fn iterative_zero_degree_keeps_previous_scores() {
        let g = graph(&[("a", "b", 0.5)], &["island"]);
        let s = seeds(&[("a", 0)]);
        let cfg = PropagationConfig {
            alpha: 0.5,
            beta: 0.5,
            iterations: 3,
            rule: PropagationRule::Iterative,
        };
        let scores = propagate_iterative(&g, &s, &cfg, 2).unwrap();
        let island = g.node_index("island").unwrap() as usize;
        assert_eq!(scores[island].scores, vec![0.5, 0.5]);
    }

    #[test]
    fn iterative_scores_stay_in_unit_interval() {
        let g = graph(
            &[("a", "b", 0.9), ("b", "c", 0.8), ("c", "d", 0.7), ("a", "d", 0.6)],
            &[],
        );
        let s = seeds(&[("a", 0), ("c", 1)]);
        let cfg = PropagationConfig {
            alpha: 0.5,
            beta: 0.5,
            iterations: 10,
            rule: PropagationRule::Iterative,
        };
        let scores = propagate_iterative(&g, &s, &cfg, 2).unwrap();
        for ls in &scores {
            for &v in &ls.scores {
                assert!((0.0..=1.0).contains(&v), "score {v} out of range");
            }
        }
    }

    #[test]
    fn iterative_rejects_zero_alpha_beta() {
        let g = graph(&[("a", "b", 0.5)], &[]);
        let cfg = PropagationConfig {
            alpha: 0.0,
            beta: 0.0,
            iterations: 1,
            rule: PropagationRule::Iterative,
        };
        assert!(propagate_iterative(&g, &seeds(&[("a", 0)]), &cfg, 2).is_err());
    }

    #[test]
    fn potts_zero_on_uniform_scores_without_seeds() {
        let g = graph(&[("a", "b", 0.5), ("b", "c", 0.9)], &[]);
        let scores: Vec<LabelScores> = (0..3)
            .map(|_| LabelScores::from_scores(vec![0.3, 0.7], false))
            .collect();
        let loss = potts_loss(&g, &scores, &HashMap::new(), 2);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn potts_zero_on_exactly_fit_seed_without_edges() {
        let g = graph(&[], &["only"]);
        let scores = vec![LabelScores::from_scores(vec![0.0, 1.0], false)];
        let loss = potts_loss(&g, &scores, &seeds(&[("only", 1)]), 2);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn potts_perturbation_increases_loss() {
        use rand::Rng;
        // random connected 20-node line + chords
        let mut rng = crate::seed::component_rng(3, "test/potts");
        let mut edges = Vec::new();
        for i in 0..19 {
            edges.push((format!("n{i:02}"), format!("n{:02}", i + 1), rng.random_range(0.2..0.9)));
        }
        for _ in 0..10 {
            let a: usize = rng.random_range(0..20);
            let b: usize = rng.random_range(0..20);
            if a != b {
                let (a, b) = (a.min(b), a.max(b));
                edges.push((format!("n{a:02}"), format!("n{b:02}"), rng.random_range(0.2..0.9)));
            }
        }
        let edges: Vec<Edge> = edges
            .into_iter()
            .map(|(src, dst, weight)| Edge { src, dst, weight })
            .collect();
        let g = Graph::from_edges(Vec::new(), edges).unwrap();
        let base: Vec<LabelScores> = (0..g.node_count())
            .map(|_| LabelScores::from_scores(vec![0.5, 0.5], false))
            .collect();
        let seed_map = seeds(&[]);
        let base_loss = potts_loss(&g, &base, &seed_map, 2);
        assert_eq!(base_loss, 0.0);
        let mut perturbed = base.clone();
        perturbed[7] = LabelScores::from_scores(vec![0.9, 0.1], false);
        let new_loss = potts_loss(&g, &perturbed, &seed_map, 2);
        assert!(new_loss > base_loss);
    }

    #[test]
    fn predictions_file_round_trip() {
        let g = graph(&[("a", "b", 0.5)], &["c"]);
        let s = seeds(&[("a", 0)]);
        let scores = classify_one_shot(&g, &s, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.tsv");
        write_predictions(&g, &scores, &path).unwrap();
        let rows = read_predictions(&path).unwrap();
        assert_eq!(rows.len(), 3);
        let b_row = rows.iter().find(|(id, _, _)| id == "b").unwrap();
        assert_eq!(b_row.1, Some(0));
        let c_row = rows.iter().find(|(id, _, _)| id == "c").unwrap();
        assert_eq!(c_row.1, None);
    }

    #[test]
    fn rule_parsing() {
        assert_eq!(
            "product_one_shot".parse::<PropagationRule>().unwrap(),
            PropagationRule::ProductOneShot
        );
        assert!("nope".parse::<PropagationRule>().is_err());
    }
}
