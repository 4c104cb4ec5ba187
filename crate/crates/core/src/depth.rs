//! In-class data depth from localized PageRank on a k-NN graph.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, DirectedGeometricGraph, VectorSet};
use crate::pagerank::localized_pagerank;

/// Number of deepest points reported per class unless configured otherwise.
pub const DEFAULT_TOP: usize = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDepth {
    pub label: i64,
    pub members: usize,
    /// All node indices by descending score, ties by ascending index.
    pub ordering: Vec<usize>,
    /// The first `top` members of the class in `ordering`.
    pub top: Vec<usize>,
    /// PageRank with teleportation uniform on the class.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthResult {
    pub classes: Vec<ClassDepth>,
    /// One line per requested class that had no members and was skipped.
    pub warnings: Vec<String>,
    pub k: usize,
    pub alpha: f64,
}

/// Node indices sorted by descending score, ties broken by index.
pub fn depth_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Builds the k-NN graph once and ranks every node for each label present.
pub fn depth_ranking(
    vectors: &VectorSet,
    labels: &[i64],
    k: usize,
    alpha: f64,
    top: usize,
) -> Result<DepthResult> {
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    depth_ranking_for(vectors, labels, &classes, k, alpha, top)
}

/// As [`depth_ranking`] for an explicit list of classes; classes without
/// members are skipped with a warning.
pub fn depth_ranking_for(
    vectors: &VectorSet,
    labels: &[i64],
    classes: &[i64],
    k: usize,
    alpha: f64,
    top: usize,
) -> Result<DepthResult> {
    if labels.len() != vectors.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} vectors",
            labels.len(),
            vectors.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::invalid("no classes to rank"));
    }
    let graph = build_knn_graph(vectors, k)?;
    depth_on_graph(&graph, labels, classes, k, alpha, top)
}

fn depth_on_graph(
    graph: &DirectedGeometricGraph,
    labels: &[i64],
    classes: &[i64],
    k: usize,
    alpha: f64,
    top: usize,
) -> Result<DepthResult> {
    let mut members: BTreeMap<i64, Vec<usize>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    for (i, l) in labels.iter().enumerate() {
        if let Some(m) = members.get_mut(l) {
            m.push(i);
        }
    }
    let mut warnings = Vec::new();
    let mut work = Vec::new();
    for &c in classes {
        let m = &members[&c];
        if m.is_empty() {
            warnings.push(format!("class {c} has no members; skipped"));
        } else {
            work.push((c, m));
        }
    }
    let classes = work
        .par_iter()
        .map(|&(label, seeds)| {
            let res = localized_pagerank(graph, alpha, seeds).map_err(|e| e.context(format!("class {label}")))?;
            let ordering = depth_order(&res.r);
            let top = ordering
                .iter()
                .copied()
                .filter(|&i| labels[i] == label)
                .take(top)
                .collect();
            Ok(ClassDepth {
                label,
                members: seeds.len(),
                ordering,
                top,
                scores: res.r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DepthResult {
        classes,
        warnings,
        k,
        alpha,
    })
}
