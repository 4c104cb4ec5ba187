//! Sparse directed graphs: random directed geometric graphs on the torus
//! (cell-list neighbour search) and k-nearest-neighbour graphs on raw vectors.

use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{displacement_into, PointCloud};
use crate::kernel::{DriftSpec, KernelSpec, SourceFrame};

/// Row-major real vectors of uniform dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSet {
    dim: usize,
    values: Vec<f64>,
}

impl VectorSet {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form vectors of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows of mixed length"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }
}

/// How a graph was built; determines the normalization of `u = c r / d`.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphParams {
    Geometric {
        h: f64,
        eps: f64,
        kernel: String,
        drift: String,
    },
    Knn {
        k: usize,
    },
    /// Hand-assembled edge list with an explicit normalization constant.
    Explicit,
}

/// Compressed sparse rows.
#[derive(Clone, Debug, Default, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let total: usize = rows.iter().map(Vec::len).sum();
        let mut index = Vec::with_capacity(total);
        let mut weight = Vec::with_capacity(total);
        for row in rows {
            for (j, w) in row {
                index.push(j);
                weight.push(w);
            }
            offsets.push(index.len());
        }
        Self {
            offsets,
            index,
            weight,
        }
    }

    fn transpose(&self, n: usize) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &j in &self.index {
            counts[j as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut index = vec![0u32; self.index.len()];
        let mut weight = vec![0.0; self.index.len()];
        // sources visited in increasing order, so every column comes out sorted
        for i in 0..n {
            for e in self.offsets[i]..self.offsets[i + 1] {
                let j = self.index[e] as usize;
                index[cursor[j]] = i as u32;
                weight[cursor[j]] = self.weight[e];
                cursor[j] += 1;
            }
        }
        Self {
            offsets,
            index,
            weight,
        }
    }

    #[inline]
    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.index[a..b], &self.weight[a..b])
    }
}

/// Weighted directed graph with cached out-degrees and a materialized transpose.
#[derive(Clone, Debug)]
pub struct DirectedGeometricGraph {
    n: usize,
    out: Csr,
    inc: Csr,
    degrees: Vec<f64>,
    normalization: f64,
    params: GraphParams,
    points: Option<PointCloud>,
}

impl DirectedGeometricGraph {
    fn assemble(
        rows: Vec<Vec<(u32, f64)>>,
        normalization: Option<f64>,
        params: GraphParams,
        points: Option<PointCloud>,
    ) -> Result<Self> {
        let n = rows.len();
        let degrees: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().map(|&(_, w)| w).sum())
            .collect();
        if let Some(node) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateGraph {
                node,
                reason: "has zero out-degree".into(),
            });
        }
        let normalization =
            normalization.unwrap_or_else(|| degrees.iter().sum::<f64>() / n as f64);
        let out = Csr::from_rows(rows);
        let inc = out.transpose(n);
        Ok(Self {
            n,
            out,
            inc,
            degrees,
            normalization,
            params,
            points,
        })
    }

    /// Graph from explicit `(source, target, weight)` triples; repeated pairs
    /// are summed. `normalization` defaults to the mean degree.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
        normalization: Option<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("edge ({i}, {j}) has invalid weight {w}")));
            }
            rows[i].push((j as u32, w));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
            row.retain(|&(_, w)| w > 0.0);
        }
        Self::assemble(rows, normalization, GraphParams::Explicit, None)
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn edge_count(&self) -> usize {
        self.out.index.len()
    }

    /// Out-degrees `d(x) = sum_y w(x, y)`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// In-weight sums `sum_y w(y, x)`.
    pub fn in_degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.inc.row(i).1.iter().sum()).collect()
    }

    /// Factor `c` in `u = c r / d`: `n h^d` for geometric graphs, the mean
    /// degree otherwise.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn params(&self) -> &GraphParams {
        &self.params
    }

    /// Sample positions, for graphs built on the torus.
    pub fn points(&self) -> Option<&PointCloud> {
        self.points.as_ref()
    }

    /// `(target, weight)` pairs leaving `i`, sorted by target.
    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (idx, w) = self.out.row(i);
        idx.iter().map(|&j| j as usize).zip(w.iter().copied())
    }

    /// `(source, weight)` pairs entering `i`, sorted by source.
    pub fn in_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (idx, w) = self.inc.row(i);
        idx.iter().map(|&j| j as usize).zip(w.iter().copied())
    }

    /// `sum_y w(y, x) f(y)` for every `x`.
    pub fn in_weighted_sum(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.n);
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (idx, w) = self.inc.row(i);
                idx.iter().zip(w).map(|(&j, &wij)| wij * f[j as usize]).sum()
            })
            .collect()
    }

    /// All edges as `(source, target, weight)`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.out_edges(i).map(move |(j, w)| (i, j, w)))
    }
}

/// Returns the cached degree vector.
pub fn degrees(graph: &DirectedGeometricGraph) -> &[f64] {
    graph.degrees()
}

/// Uniform cell list on the torus with cell side at least `reach`.
pub(crate) struct CellGrid {
    dim: usize,
    per_axis: usize,
    start: Vec<usize>,
    items: Vec<u32>,
    offsets: Vec<Vec<i64>>,
}

impl CellGrid {
    pub fn new(points: &PointCloud, reach: f64) -> Self {
        let d = points.dim();
        let n = points.len();
        let mut m = if reach > 0.0 { (1.0 / reach).floor() as usize } else { 1 };
        let cap = (4 * n).max(64);
        while m > 1 && (m as f64).powi(d as i32) > cap as f64 {
            m -= 1;
        }
        // with fewer than 3 cells per axis the 3^d stencil would revisit cells
        if m < 3 {
            m = 1;
        }
        let ncells = m.pow(d as u32);
        let cell_of: Vec<usize> = points.iter().map(|p| Self::locate(p, m)).collect();
        let mut start = vec![0usize; ncells + 1];
        for &c in &cell_of {
            start[c + 1] += 1;
        }
        for c in 0..ncells {
            start[c + 1] += start[c];
        }
        let mut cursor = start.clone();
        let mut items = vec![0u32; n];
        for (i, &c) in cell_of.iter().enumerate() {
            items[cursor[c]] = i as u32;
            cursor[c] += 1;
        }
        let offsets = if m == 1 {
            vec![vec![0; d]]
        } else {
            (0..3usize.pow(d as u32))
                .map(|mut k| {
                    (0..d)
                        .map(|_| {
                            let o = (k % 3) as i64 - 1;
                            k /= 3;
                            o
                        })
                        .collect()
                })
                .collect()
        };
        Self {
            dim: d,
            per_axis: m,
            start,
            items,
            offsets,
        }
    }

    /// Point indices grouped cell by cell.
    pub fn order(&self) -> &[u32] {
        &self.items
    }

    fn locate(p: &[f64], m: usize) -> usize {
        let mut idx = 0;
        for &c in p.iter().rev() {
            let k = ((c * m as f64) as usize).min(m - 1);
            idx = idx * m + k;
        }
        idx
    }

    /// Calls `f(j)` for every point in the cells adjacent to `p`'s cell.
    #[inline]
    pub fn for_each_candidate(&self, p: &[f64], mut f: impl FnMut(usize)) {
        let m = self.per_axis as i64;
        let base: Vec<i64> = p
            .iter()
            .map(|&c| ((c * m as f64) as i64).min(m - 1))
            .collect();
        for off in &self.offsets {
            let mut idx = 0usize;
            for a in (0..self.dim).rev() {
                let k = (base[a] + off[a]).rem_euclid(m) as usize;
                idx = idx * self.per_axis + k;
            }
            for &j in &self.items[self.start[idx]..self.start[idx + 1]] {
                f(j as usize);
            }
        }
    }
}

/// `points` reordered cell by cell, so that neighbours sit close in memory.
pub(crate) fn cell_sorted(points: &PointCloud, reach: f64) -> Result<PointCloud> {
    let grid = CellGrid::new(points, reach);
    let coords = grid.order().iter().flat_map(|&i| points.point(i as usize).iter().copied()).collect();
    PointCloud::from_flat(points.dim(), coords)
}

/// Matrix-free access to the weights of a random directed geometric graph,
/// for configurations too dense to store.
pub struct WeightEvaluator<'a> {
    points: &'a PointCloud,
    kernel: &'a KernelSpec,
    h: f64,
    frames: Vec<SourceFrame>,
    grid: CellGrid,
}

impl<'a> WeightEvaluator<'a> {
    pub fn new(
        points: &'a PointCloud,
        kernel: &'a KernelSpec,
        drift: &DriftSpec,
        h: f64,
        eps: f64,
    ) -> Result<Self> {
        drift.check_radius(h, eps)?;
        let d = points.dim();
        if kernel.dim() != d || drift.dim() != d {
            return Err(Error::invalid(format!(
                "dimension mismatch: points {d}, kernel {}, drift {}",
                kernel.dim(),
                drift.dim()
            )));
        }
        let frames = (0..points.len())
            .into_par_iter()
            .map(|i| SourceFrame::new(drift, points.point(i), eps))
            .collect();
        let grid = CellGrid::new(points, drift.reach(kernel.support(), h, eps));
        Ok(Self {
            points,
            kernel,
            h,
            frames,
            grid,
        })
    }

    /// Positive-weight out-edges of node `i`, sorted by target.
    pub fn out_row(&self, i: usize) -> Vec<(u32, f64)> {
        let x = self.points.point(i);
        let mut buf = vec![0.0; x.len()];
        let mut row = Vec::new();
        self.grid.for_each_candidate(x, |j| {
            let w = self.frames[i].weight(self.kernel, x, self.points.point(j), self.h, &mut buf);
            if w > 0.0 {
                row.push((j as u32, w));
            }
        });
        row.sort_unstable_by_key(|&(j, _)| j);
        row
    }

    /// Out-degree and `sum_y w(y, x) f(y)` for every node, in one pass.
    pub fn degree_and_in_sum(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (0..self.points.len())
            .into_par_iter()
            .map(|i| {
                let x = self.points.point(i);
                let mut disp = vec![0.0; x.len()];
                let mut buf = vec![0.0; x.len()];
                let (mut deg, mut acc) = (0.0, 0.0);
                let frame = &self.frames[i];
                self.grid.for_each_candidate(x, |j| {
                    displacement_into(x, self.points.point(j), &mut disp);
                    deg += frame.weight_of(self.kernel, &disp, 1.0, self.h, &mut buf);
                    acc += self.frames[j].weight_of(self.kernel, &disp, -1.0, self.h, &mut buf) * f[j];
                });
                (deg, acc)
            })
            .unzip()
    }

    /// Out-degrees without storing edges.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.points.len())
            .into_par_iter()
            .map(|i| self.out_row(i).iter().map(|&(_, w)| w).sum())
            .collect()
    }
}

/// Builds the random directed geometric graph on `points`.
pub fn build_rdgg(
    points: &PointCloud,
    kernel: &KernelSpec,
    drift: &DriftSpec,
    h: f64,
    eps: f64,
) -> Result<DirectedGeometricGraph> {
    let eval = WeightEvaluator::new(points, kernel, drift, h, eps)?;
    let rows: Vec<Vec<(u32, f64)>> = (0..points.len())
        .into_par_iter()
        .map(|i| eval.out_row(i))
        .collect();
    let n = points.len();
    let normalization = n as f64 * h.powi(points.dim() as i32);
    DirectedGeometricGraph::assemble(
        rows,
        Some(normalization),
        GraphParams::Geometric {
            h,
            eps,
            kernel: kernel.name().to_string(),
            drift: drift.name().to_string(),
        },
        Some(points.clone()),
    )
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

/// Keeps the `k` smallest candidates (max-heap on `(dist2, index)`).
struct Best {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if c < *self.heap.peek().expect("k >= 1") {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn worst(&self) -> Option<f64> {
        (self.heap.len() == self.k).then(|| self.heap.peek().expect("full").dist2)
    }

    fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn knn_brute(data: &VectorSet, k: usize) -> Vec<Vec<Candidate>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            let mut best = Best::new(k);
            for j in 0..data.len() {
                if j != i {
                    best.offer(Candidate {
                        dist2: dist2(xi, data.row(j)),
                        index: j,
                    });
                }
            }
            best.into_sorted()
        })
        .collect()
}

/// Exact k-NN for low-dimensional data by expanding shells of a bounding-box grid.
fn knn_grid(data: &VectorSet, k: usize) -> Vec<Vec<Candidate>> {
    let d = data.dim();
    let n = data.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (a, &c) in data.row(i).iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    let extent: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
    let positive: Vec<f64> = extent.iter().copied().filter(|&e| e > 0.0).collect();
    if positive.is_empty() {
        return knn_brute(data, k);
    }
    // target about k points per cell along the non-degenerate axes
    let volume: f64 = positive.iter().product();
    let side = (volume * k.max(1) as f64 / n as f64).powf(1.0 / positive.len() as f64);
    let per_axis: Vec<usize> = extent
        .iter()
        .map(|&e| if e > 0.0 { ((e / side).ceil() as usize).clamp(1, 1 << 16) } else { 1 })
        .collect();
    let cell_side: Vec<f64> = extent
        .iter()
        .zip(&per_axis)
        .map(|(&e, &m)| if e > 0.0 { e / m as f64 } else { f64::INFINITY })
        .collect();
    let min_side = cell_side.iter().copied().fold(f64::INFINITY, f64::min);
    let coord = |p: &[f64]| -> Vec<usize> {
        (0..d)
            .map(|a| {
                if per_axis[a] == 1 {
                    0
                } else {
                    (((p[a] - lo[a]) / cell_side[a]) as usize).min(per_axis[a] - 1)
                }
            })
            .collect()
    };
    let flat = |c: &[usize]| -> usize {
        let mut idx = 0;
        for a in (0..d).rev() {
            idx = idx * per_axis[a] + c[a];
        }
        idx
    };
    let ncells: usize = per_axis.iter().product();
    let mut start = vec![0usize; ncells + 1];
    let cells: Vec<usize> = (0..n).map(|i| flat(&coord(data.row(i)))).collect();
    for &c in &cells {
        start[c + 1] += 1;
    }
    for c in 0..ncells {
        start[c + 1] += start[c];
    }
    let mut cursor = start.clone();
    let mut items = vec![0u32; n];
    for (i, &c) in cells.iter().enumerate() {
        items[cursor[c]] = i as u32;
        cursor[c] += 1;
    }
    let max_shell = per_axis.iter().copied().max().unwrap_or(1);

    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            let home = coord(xi);
            let mut best = Best::new(k);
            let mut shell = 0usize;
            let mut off = vec![0i64; d];
            loop {
                // enumerate offsets with Chebyshev norm exactly `shell`
                let s = shell as i64;
                let span = 2 * shell + 1;
                for code in 0..span.pow(d as u32) {
                    let mut rem = code;
                    let mut on_shell = false;
                    let mut inside = true;
                    for a in 0..d {
                        off[a] = (rem % span) as i64 - s;
                        rem /= span;
                        if off[a].abs() == s {
                            on_shell = true;
                        }
                        let c = home[a] as i64 + off[a];
                        if c < 0 || c >= per_axis[a] as i64 {
                            inside = false;
                        }
                    }
                    if !on_shell || !inside {
                        continue;
                    }
                    let mut idx = 0usize;
                    for a in (0..d).rev() {
                        idx = idx * per_axis[a] + (home[a] as i64 + off[a]) as usize;
                    }
                    for &j in &items[start[idx]..start[idx + 1]] {
                        let j = j as usize;
                        if j != i {
                            best.offer(Candidate {
                                dist2: dist2(xi, data.row(j)),
                                index: j,
                            });
                        }
                    }
                }
                if shell >= max_shell {
                    break;
                }
                if let Some(w) = best.worst() {
                    let reach = shell as f64 * min_side;
                    if w.sqrt() < reach {
                        break;
                    }
                }
                shell += 1;
            }
            best.into_sorted()
        })
        .collect()
}

/// Directed k-NN graph with weights `exp(-4 |x_i - x_j|^2 / d_k(x_i)^2)`,
/// where `d_k` is the distance to the k-th nearest neighbour other than `x_i`.
pub fn build_knn_graph(data: &VectorSet, k: usize) -> Result<DirectedGeometricGraph> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if data.len() < k + 1 {
        return Err(Error::invalid(format!(
            "need at least k + 1 = {} vectors, got {}",
            k + 1,
            data.len()
        )));
    }
    let neighbours = if data.dim() <= 3 {
        knn_grid(data, k)
    } else {
        knn_brute(data, k)
    };
    knn_rows(neighbours, k)
}

fn knn_rows(neighbours: Vec<Vec<Candidate>>, k: usize) -> Result<DirectedGeometricGraph> {
    let mut rows = Vec::with_capacity(neighbours.len());
    for (i, nb) in neighbours.into_iter().enumerate() {
        let dk2 = nb.last().expect("k >= 1").dist2;
        if !(dk2 > 0.0) {
            return Err(Error::DegenerateGraph {
                node: i,
                reason: format!("has {k} duplicate neighbours (d_k = 0)"),
            });
        }
        let mut row: Vec<(u32, f64)> = nb
            .iter()
            .map(|c| (c.index as u32, (-4.0 * c.dist2 / dk2).exp()))
            .collect();
        row.sort_unstable_by_key(|&(j, _)| j);
        rows.push(row);
    }
    DirectedGeometricGraph::assemble(rows, None, GraphParams::Knn { k }, None)
}

/// Brute-force k-NN graph regardless of dimension (reference path).
pub fn build_knn_graph_brute(data: &VectorSet, k: usize) -> Result<DirectedGeometricGraph> {
    if k == 0 || data.len() < k + 1 {
        return Err(Error::invalid("need k >= 1 and at least k + 1 vectors"));
    }
    knn_rows(knn_brute(data, k), k)
}
