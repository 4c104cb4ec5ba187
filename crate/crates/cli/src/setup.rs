//! Densities, drifts, kernels and graphs described by settings.

use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use prpde_core::continuum::PdeCoeffs;
use prpde_core::experiments::explicit_source;
use prpde_core::fields::{FnScalar, RotationalField, SharedScalar, TrigPoly, TrigVectorField, VectorField};
use prpde_core::geometry::{sample_density, DensitySpec, PointCloud};
use prpde_core::graph::{build_knn_graph, build_rdgg, DirectedGeometricGraph, VectorSet};
use prpde_core::io::{read_idx, read_vectors_csv};
use prpde_core::kernel::{DriftSpec, KernelSpec};
use prpde_core::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::settings::Settings;

pub const GEOMETRY_KEYS: &[&str] = &["dim", "density", "density_amplitude", "drift", "drift_amplitude", "drift_vector", "kernel"];
pub const GRAPH_KEYS: &[&str] = &["n", "h", "eps", "seed"];

pub struct Geometry {
    pub dim: usize,
    pub density: DensitySpec,
    pub drift: DriftSpec,
    pub kernel: KernelSpec,
}

pub fn geometry(s: &Settings) -> Result<Geometry> {
    let dim: usize = s.get("dim", 2)?;
    ensure!((1..=3).contains(&dim), "dim must be 1, 2 or 3, got {dim}");
    let density = match s.get("density", "uniform".to_string())?.as_str() {
        "uniform" => DensitySpec::uniform(dim),
        "cosine" => DensitySpec::cosine_bump(dim, s.get("density_amplitude", 0.5)?)?,
        other => bail!("unknown density '{other}' (expected uniform or cosine)"),
    };
    let drift = match s.get("drift", "zero".to_string())?.as_str() {
        "zero" => DriftSpec::zero(dim),
        "constant" => {
            let b: Vec<f64> = s.list("drift_vector")?.context("constant drift needs drift_vector")?;
            ensure!(b.len() == dim, "drift_vector has {} entries, expected {dim}", b.len());
            DriftSpec::constant(b)
        }
        "shear" => {
            let a: f64 = s.get("drift_amplitude", 1.0)?;
            let axis = if dim == 1 { 0 } else { 1 };
            let mut comps = vec![TrigPoly::constant(dim, 0.0); dim];
            comps[0] = TrigPoly::sine(dim, axis, 1, a, 0.0);
            DriftSpec::trig(TrigVectorField::new(comps))
        }
        "rotation" => {
            ensure!(dim == 2, "rotation drift is two-dimensional");
            let a: f64 = s.get("drift_amplitude", 1.0)?;
            let field = RotationalField::new([0.5, 0.5], 0.2, 0.4, a);
            DriftSpec::new("rotation", Arc::new(field), 0.4 * a.abs())?
        }
        other => bail!("unknown drift '{other}' (expected zero, constant, shear or rotation)"),
    };
    let kernel = KernelSpec::by_name(&s.get("kernel", "indicator".to_string())?, dim)?;
    Ok(Geometry {
        dim,
        density,
        drift,
        kernel,
    })
}

/// `sup |rho^-2 div(rho^2 b)|` sampled on a regular grid.
pub fn eta(geo: &Geometry) -> f64 {
    let per_axis: usize = match geo.dim {
        1 => 4096,
        2 => 256,
        _ => 48,
    };
    let total = per_axis.pow(geo.dim as u32);
    let rho = geo.density.field();
    let b = geo.drift.field();
    let mut x = vec![0.0; geo.dim];
    let mut eta = 0.0f64;
    for idx in 0..total {
        let mut rem = idx;
        for c in x.iter_mut() {
            *c = (rem % per_axis) as f64 / per_axis as f64;
            rem /= per_axis;
        }
        let r = rho.value(&x);
        let gr = rho.gradient(&x);
        let bx = b.value(&x);
        let val = b.divergence(&x) + 2.0 * gr.iter().zip(&bx).map(|(g, b)| g * b).sum::<f64>() / r;
        eta = eta.max(val.abs());
    }
    eta
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    ensure!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1], got {alpha}");
    Ok(())
}

/// Rejects `eta * gamma_eps >= 1` for the continuum limit of this setting.
pub fn check_regime(geo: &Geometry, ge: f64) -> Result<()> {
    let eta = eta(geo);
    ensure!(
        eta * ge < 1.0,
        "eta * gamma_eps = {:.4} must be < 1 (eta = {eta:.4}, gamma_eps = {ge:.4})",
        eta * ge
    );
    Ok(())
}

pub struct GraphSetup {
    pub geo: Geometry,
    pub n: usize,
    pub h: f64,
    pub eps: f64,
    pub seed: u64,
}

/// Reads and validates the geometric-graph settings without sampling.
pub fn graph_setup(s: &Settings) -> Result<GraphSetup> {
    let geo = geometry(s)?;
    let n: usize = s.req("n")?;
    ensure!(n >= 1, "n must be positive");
    let h: f64 = s.req("h")?;
    let eps: f64 = s.get("eps", 0.0)?;
    ensure!(h > 0.0 && eps >= 0.0, "need h > 0 and eps >= 0");
    geo.drift.check_radius(h, eps)?;
    let seed = s.get("seed", 0u64)?;
    Ok(GraphSetup { geo, n, h, eps, seed })
}

impl GraphSetup {
    pub fn sample(&self) -> Result<PointCloud> {
        Ok(sample_density(&self.geo.density, self.n, self.seed)?)
    }

    pub fn build(&self, points: &PointCloud) -> Result<DirectedGeometricGraph> {
        Ok(build_rdgg(points, &self.geo.kernel, &self.geo.drift, self.h, self.eps)?)
    }
}

/// Named scalar fields used as teleportation distributions and sources.
pub fn named_field(name: &str, geo: &Geometry, gamma_h: f64) -> Result<SharedScalar> {
    let d = geo.dim;
    Ok(match name {
        "uniform" => Arc::new(TrigPoly::constant(d, 1.0)),
        "density" => geo.density.field().clone(),
        "cosine" => Arc::new(TrigPoly::cosine(d, 0, 1, 0.5, 1.0)),
        "explicit" => {
            ensure!(d == 2, "the explicit source is two-dimensional");
            let sigma = geo.kernel.sigma_phi();
            Arc::new(FnScalar::new(2, move |x: &[f64]| explicit_source(x, gamma_h, sigma)))
        }
        other => bail!("unknown field '{other}' (expected uniform, density, cosine or explicit)"),
    })
}

/// Grid coefficients for the continuum equation of a geometric setting.
pub fn pde_coeffs(geo: &Geometry, grid: usize, ge: f64, gh: f64, source: &str) -> Result<PdeCoeffs> {
    ensure!(grid >= 3, "grid must have at least 3 nodes per axis, got {grid}");
    let v = named_field(source, geo, gh)?;
    let b: Arc<dyn VectorField> = geo.drift.field().clone();
    Ok(PdeCoeffs::from_fields(
        grid,
        geo.density.field().clone(),
        b,
        v.as_ref(),
        ge,
        gh,
        geo.kernel.sigma_phi(),
    )?)
}

pub const DATA_KEYS: &[&str] = &["data", "labels", "idx_images", "idx_labels", "limit", "synthetic_n", "synthetic_dim", "seed"];

pub struct Dataset {
    pub vectors: VectorSet,
    pub labels: Option<Vec<i64>>,
}

/// Vectors from a CSV file, IDX files, or a synthetic Gaussian cloud.
pub fn dataset(s: &Settings) -> Result<Dataset> {
    let mut out = if let Some(path) = s.opt::<String>("data")? {
        let (vectors, labels) = read_vectors_csv(&path, s.flag("labels")?)?;
        Dataset { vectors, labels }
    } else if let Some(path) = s.opt::<String>("idx_images")? {
        let vectors = read_idx(&path)?.to_vectors()?;
        let labels = match s.opt::<String>("idx_labels")? {
            Some(p) => Some(read_idx(&p)?.to_labels()?),
            None => None,
        };
        Dataset { vectors, labels }
    } else if let Some(n) = s.opt::<usize>("synthetic_n")? {
        let dim: usize = s.get("synthetic_dim", 2)?;
        ensure!(n > 0 && dim > 0, "synthetic_n and synthetic_dim must be positive");
        let mut rng = stream_rng(s.get("seed", 0u64)?, 0);
        let vals = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        Dataset {
            vectors: VectorSet::new(dim, vals)?,
            labels: None,
        }
    } else {
        bail!("no input data: set data, idx_images or synthetic_n");
    };
    if let Some(m) = s.opt::<usize>("limit")? {
        let m = m.min(out.vectors.len());
        let d = out.vectors.dim();
        out.vectors = VectorSet::new(d, out.vectors.as_flat()[..m * d].to_vec())?;
        if let Some(l) = out.labels.as_mut() {
            l.truncate(m);
        }
    }
    if let Some(l) = &out.labels {
        ensure!(
            l.len() == out.vectors.len(),
            "{} labels for {} vectors",
            l.len(),
            out.vectors.len()
        );
    }
    Ok(out)
}

pub fn knn_graph(data: &Dataset, k: usize) -> Result<DirectedGeometricGraph> {
    ensure!(k >= 1 && k < data.vectors.len(), "k must lie in [1, n - 1], got {k}");
    Ok(build_knn_graph(&data.vectors, k)?)
}

/// Initial data for evolution runs: `cosine` is `1.5 + cos(4 pi x_1)`.
pub fn initial_field(name: &str, dim: usize) -> Result<SharedScalar> {
    Ok(match name {
        "cosine" => Arc::new(TrigPoly::cosine(dim, 0, 2, 1.0, 1.5)),
        other => match other.strip_prefix("constant:").map(str::parse::<f64>) {
            Some(Ok(c)) => Arc::new(TrigPoly::constant(dim, c)),
            _ => bail!("unknown initial condition '{other}' (expected stationary, cosine or constant:<c>)"),
        },
    })
}
