//! PageRank on weighted directed graphs: the operator `L_n`, the stationary
//! power iteration, localized teleportation, and the random-surfer evolution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::DirectedGeometricGraph;

/// Relative tolerance used when none is given: the iteration stops once the
/// l1 change drops below `DEFAULT_REL_TOL * sum(v)`.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PageRankConfig {
    pub alpha: f64,
    pub v: Vec<f64>,
    /// Absolute l1 tolerance; `None` means `DEFAULT_REL_TOL * sum(v)`.
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Accept teleportation values of either sign. The iteration and the
    /// conservation identity are linear in `v`, so nothing else changes.
    pub allow_signed: bool,
}

impl PageRankConfig {
    pub fn new(alpha: f64, v: Vec<f64>) -> Self {
        Self {
            alpha,
            v,
            tol: None,
            max_iter: None,
            allow_signed: false,
        }
    }

    /// Configuration for a signed source term, as used when comparing with a
    /// continuum solution whose right-hand side changes sign.
    pub fn signed(alpha: f64, v: Vec<f64>) -> Self {
        Self {
            allow_signed: true,
            ..Self::new(alpha, v)
        }
    }

    /// Uniform teleportation `v = 1/n`.
    pub fn uniform(alpha: f64, n: usize) -> Self {
        Self::new(alpha, vec![1.0 / n as f64; n])
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::invalid(format!("tol must be positive, got {tol}")));
            }
        }
        if self.allow_signed {
            if let Some(i) = self.v.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("teleportation value v[{i}] is not finite")));
            }
            if !self.v.iter().any(|&x| x != 0.0) {
                return Err(Error::invalid("teleportation vector is identically zero"));
            }
            return Ok(());
        }
        if let Some(i) = self.v.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!(
                "teleportation value v[{i}] = {} is not a nonnegative number",
                self.v[i]
            )));
        }
        if !self.v.iter().any(|&x| x > 0.0) {
            return Err(Error::invalid("teleportation vector has no positive entry"));
        }
        Ok(())
    }

    /// `sum |v|`, the scale of the l1 tolerance.
    pub fn mass(&self) -> f64 {
        self.v.iter().map(|x| x.abs()).sum()
    }

    pub fn effective_tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_REL_TOL * self.mass())
    }

    /// Enough iterations to shrink the error by `tol / sum(v)`, plus slack.
    pub fn effective_max_iter(&self) -> usize {
        if let Some(m) = self.max_iter {
            return m;
        }
        let rel = (self.effective_tol() / self.mass()).min(0.5);
        let rate = (1.0 - self.alpha).ln();
        let base = if rate.is_finite() { (rel.ln() / rate).ceil() as usize } else { 0 };
        base + 64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankResult {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub alpha: f64,
    pub tol: f64,
    /// l1 change `|r^{k+1} - r^k|` of every iteration.
    pub changes: Vec<f64>,
}

impl RankResult {
    /// `r` rescaled to a probability vector.
    pub fn probabilities(&self) -> Vec<f64> {
        let s: f64 = self.r.iter().sum();
        self.r.iter().map(|x| x / s).collect()
    }

    /// Geometric mean of successive change ratios over the iterations
    /// `from..to` of the history.
    pub fn contraction_factor(&self, from: usize, to: usize) -> Option<f64> {
        if to <= from || to >= self.changes.len() {
            return None;
        }
        let (a, b) = (self.changes[from], self.changes[to]);
        (a > 0.0 && b > 0.0).then(|| (b / a).powf(1.0 / (to - from) as f64))
    }
}

fn check_len(graph: &DirectedGeometricGraph, len: usize, what: &str) -> Result<()> {
    if len != graph.len() {
        return Err(Error::invalid(format!(
            "{what} has {len} entries but the graph has {} nodes",
            graph.len()
        )));
    }
    Ok(())
}

/// `L_n u(x) = (1/d(x)) sum_y w(y, x) u(y) - u(x)`.
pub fn apply_l(graph: &DirectedGeometricGraph, u: &[f64]) -> Result<Vec<f64>> {
    check_len(graph, u.len(), "u")?;
    let sums = graph.in_weighted_sum(u);
    Ok(sums
        .into_iter()
        .zip(graph.degrees())
        .zip(u)
        .map(|((s, d), ux)| s / d - ux)
        .collect())
}

/// One step `(1 - alpha) P^T r + alpha v` into `out`.
fn step(graph: &DirectedGeometricGraph, alpha: f64, v: &[f64], r: &[f64], q: &mut [f64], out: &mut [f64]) {
    q.par_iter_mut()
        .zip(r.par_iter().zip(graph.degrees().par_iter()))
        .for_each(|(qy, (ry, dy))| *qy = ry / dy);
    let q: &[f64] = q;
    out.par_iter_mut().enumerate().for_each(|(x, o)| {
        let s: f64 = graph.in_edges(x).map(|(y, w)| w * q[y]).sum();
        *o = (1.0 - alpha) * s + alpha * v[x];
    });
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `u = c r / d` with the graph's normalization `c`.
pub fn normalize_rank(graph: &DirectedGeometricGraph, r: &[f64]) -> Vec<f64> {
    let c = graph.normalization();
    r.iter().zip(graph.degrees()).map(|(r, d)| c * r / d).collect()
}

/// Stationary PageRank by power iteration from `r = v`.
pub fn solve_pagerank(graph: &DirectedGeometricGraph, cfg: &PageRankConfig) -> Result<RankResult> {
    cfg.validate()?;
    check_len(graph, cfg.v.len(), "v")?;
    let n = graph.len();
    let tol = cfg.effective_tol();
    let max_iter = cfg.effective_max_iter();
    let alpha = cfg.alpha;
    let mut r = cfg.v.clone();
    let mut next = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut changes = Vec::new();
    let mut last = f64::INFINITY;
    for it in 1..=max_iter {
        step(graph, alpha, &cfg.v, &r, &mut q, &mut next);
        last = l1_diff(&next, &r);
        changes.push(last);
        std::mem::swap(&mut r, &mut next);
        if last < tol {
            // residual of the linear system at the returned iterate
            step(graph, alpha, &cfg.v, &r, &mut q, &mut next);
            let residual = l1_diff(&next, &r);
            if residual > 10.0 * tol {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual,
                });
            }
            let u = normalize_rank(graph, &r);
            return Ok(RankResult {
                r,
                u,
                iterations: it,
                residual,
                alpha,
                tol,
                changes,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: last,
    })
}

/// PageRank with teleportation uniform on `seeds`.
pub fn localized_pagerank(graph: &DirectedGeometricGraph, alpha: f64, seeds: &[usize]) -> Result<RankResult> {
    if seeds.is_empty() {
        return Err(Error::invalid("seed set is empty"));
    }
    let n = graph.len();
    let mut mark = vec![false; n];
    for &s in seeds {
        if s >= n {
            return Err(Error::invalid(format!("seed {s} out of range for {n} nodes")));
        }
        mark[s] = true;
    }
    let count = mark.iter().filter(|&&m| m).count() as f64;
    let v = mark.iter().map(|&m| if m { 1.0 / count } else { 0.0 }).collect();
    solve_pagerank(graph, &PageRankConfig::new(alpha, v))
}

/// Random-surfer evolution in normalized form, `u(0) = g`:
/// `u(k+1) = (1 - alpha)(u + L_n u) + alpha c v / d`. Returns `u(0..=steps)`.
pub fn evolve_surfer(
    graph: &DirectedGeometricGraph,
    cfg: &PageRankConfig,
    g: &[f64],
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_len(graph, cfg.v.len(), "v")?;
    check_len(graph, g.len(), "g")?;
    let alpha = cfg.alpha;
    let c = graph.normalization();
    let source: Vec<f64> = cfg
        .v
        .iter()
        .zip(graph.degrees())
        .map(|(v, d)| alpha * c * v / d)
        .collect();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(g.to_vec());
    for _ in 0..steps {
        let u = out.last().expect("nonempty");
        let sums = graph.in_weighted_sum(u);
        let next = sums
            .iter()
            .zip(graph.degrees())
            .zip(&source)
            .map(|((s, d), src)| (1.0 - alpha) * s / d + src)
            .collect();
        out.push(next);
    }
    Ok(out)
}
