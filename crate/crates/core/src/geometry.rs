//! Torus arithmetic and i.i.d. sampling of point clouds on `T^d = R^d / Z^d`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, TrigPoly};
use crate::rng::stream_rng;

/// A point of the torus, every coordinate in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusPoint(Vec<f64>);

impl TorusPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for TorusPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub(crate) fn wrap_coord(c: f64) -> f64 {
    let w = c - c.floor();
    // c slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub(crate) fn wrap_in_place(v: &mut [f64]) {
    for c in v {
        *c = wrap_coord(*c);
    }
}

/// Reduce each component modulo 1 into `[0, 1)`.
pub fn wrap(v: &[f64]) -> Result<TorusPoint> {
    if let Some(i) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::invalid(format!("component {i} is not finite")));
    }
    Ok(TorusPoint(v.iter().map(|&c| wrap_coord(c)).collect()))
}

/// Minimal-image component of `y - x`, in `[-1/2, 1/2)`.
#[inline]
pub(crate) fn min_image(delta: f64) -> f64 {
    if (-0.5..0.5).contains(&delta) {
        delta
    } else if (0.5..1.5).contains(&delta) {
        delta - 1.0
    } else if (-1.5..-0.5).contains(&delta) {
        delta + 1.0
    } else {
        delta - (delta + 0.5).floor()
    }
}

/// Writes the minimal-image representative of `y - x` into `out`.
#[inline]
pub(crate) fn displacement_into(x: &[f64], y: &[f64], out: &mut [f64]) {
    for ((o, &a), &b) in out.iter_mut().zip(x).zip(y) {
        *o = min_image(b - a);
    }
}

/// Minimal-image displacement from `x` to `y`; each component in `[-1/2, 1/2)`.
pub fn torus_displacement(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    displacement_into(x, y, &mut out);
    Ok(out)
}

/// Torus distance between two points.
pub fn torus_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| min_image(b - a).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `n` points on `T^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates, wrapping each into `[0, 1)`.
    pub fn from_flat(dim: usize, mut coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        wrap_in_place(&mut coords);
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[TorusPoint]) -> Result<Self> {
        let dim = points
            .first()
            .map(TorusPoint::dim)
            .ok_or_else(|| Error::invalid("empty point list"))?;
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::invalid("points of mixed dimension"));
        }
        Ok(Self {
            dim,
            coords: points.iter().flat_map(|p| p.0.iter().copied()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }
}

/// Density `rho` on `T^d` with known bounds `rho_min <= rho <= rho_max`.
#[derive(Clone)]
pub struct DensitySpec {
    field: Arc<dyn ScalarField>,
    rho_min: f64,
    rho_max: f64,
    name: String,
}

impl fmt::Debug for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensitySpec")
            .field("name", &self.name)
            .field("rho_min", &self.rho_min)
            .field("rho_max", &self.rho_max)
            .finish()
    }
}

impl DensitySpec {
    /// Wraps `field`, spot-checking the claimed bounds on a regular grid.
    pub fn new(
        name: impl Into<String>,
        field: Arc<dyn ScalarField>,
        rho_min: f64,
        rho_max: f64,
    ) -> Result<Self> {
        if !(rho_min > 0.0) || !rho_max.is_finite() || rho_max < rho_min {
            return Err(Error::invalid(format!(
                "density bounds must satisfy 0 < rho_min <= rho_max < inf, got [{rho_min}, {rho_max}]"
            )));
        }
        let d = field.dim();
        let per_axis = spot_grid_size(d);
        let mut x = vec![0.0; d];
        let total = per_axis.pow(d as u32);
        for idx in 0..total {
            let mut rem = idx;
            for c in x.iter_mut() {
                *c = (rem % per_axis) as f64 / per_axis as f64;
                rem /= per_axis;
            }
            let r = field.value(&x);
            if !(r >= rho_min * (1.0 - 1e-12) && r <= rho_max * (1.0 + 1e-12)) {
                return Err(Error::ContractViolation(format!(
                    "density {r} at {x:?} outside [{rho_min}, {rho_max}]"
                )));
            }
        }
        Ok(Self {
            field,
            rho_min,
            rho_max,
            name: name.into(),
        })
    }

    pub fn uniform(dim: usize) -> Self {
        Self::new("uniform", Arc::new(TrigPoly::constant(dim, 1.0)), 1.0, 1.0)
            .expect("constant density is valid")
    }

    /// `1 + amplitude cos(2 pi x_1)`, `|amplitude| < 1`.
    pub fn cosine_bump(dim: usize, amplitude: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0) {
            return Err(Error::invalid("cosine bump amplitude must lie in (-1, 1)"));
        }
        let a = amplitude.abs();
        Self::new(
            "cosine-bump",
            Arc::new(TrigPoly::cosine(dim, 0, 1, amplitude, 1.0)),
            1.0 - a,
            1.0 + a,
        )
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }
    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }
    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn field(&self) -> &Arc<dyn ScalarField> {
        &self.field
    }
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.field.value(x)
    }
}

fn spot_grid_size(d: usize) -> usize {
    let mut m = 64usize;
    while m > 2 && m.pow(d as u32) > 65_536 {
        m /= 2;
    }
    m
}

/// Points per independent random stream; fixed so output never depends on
/// thread count.
const SAMPLE_CHUNK: usize = 4096;

/// Draws `n` i.i.d. points from `spec` by rejection against `rho_max`.
pub fn sample_density(spec: &DensitySpec, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let d = spec.dim();
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            let mut out = Vec::with_capacity(count * d);
            let mut x = vec![0.0; d];
            while out.len() < count * d {
                for xi in x.iter_mut() {
                    *xi = rng.gen::<f64>();
                }
                let r = spec.eval(&x);
                if !(r <= spec.rho_max) {
                    return Err(Error::ContractViolation(format!(
                        "density {r} at {x:?} exceeds rho_max = {}",
                        spec.rho_max
                    )));
                }
                if rng.gen::<f64>() * spec.rho_max < r {
                    out.extend_from_slice(&x);
                }
            }
            Ok(out)
        })
        .collect();
    let mut coords = Vec::with_capacity(n * d);
    for p in parts {
        coords.extend(p?);
    }
    Ok(PointCloud { dim: d, coords })
}
