//! Periodic finite-difference solvers for the continuum limit: the stationary
//! second-order equation, its time-dependent form, the viscosity-regularized
//! first-order equation, and the characteristic ODEs.
//!
//! All divergence terms are written as differences of face fluxes, so summing
//! `rho^2 (A u)` over the grid telescopes and `sum rho^2 u = sum rho v` holds
//! for every stationary solution.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, SharedScalar, SharedVector, VectorField};
use crate::geometry::wrap_in_place;

/// Values on the periodic grid `{j / N}^d`, axis 0 varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    dim: usize,
    n: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(dim: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Unsupported(format!("grid dimension {dim} (supported: 1 to 3)")));
        }
        if n < 3 {
            return Err(Error::invalid(format!("grid resolution must be at least 3, got {n}")));
        }
        if values.len() != n.pow(dim as u32) {
            return Err(Error::invalid(format!(
                "{} values for a {n}^{dim} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("grid value {i} is not finite")));
        }
        Ok(Self { dim, n, values })
    }

    pub fn constant(dim: usize, n: usize, c: f64) -> Result<Self> {
        Self::new(dim, n, vec![c; n.pow(dim as u32)])
    }

    /// Samples `f` at every node.
    pub fn from_fn(dim: usize, n: usize, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let len = n.pow(dim as u32);
        let values = (0..len)
            .into_par_iter()
            .map(|j| f(&node_coords(dim, n, j)))
            .collect();
        Self::new(dim, n, values)
    }

    pub fn sample(field: &dyn ScalarField, n: usize) -> Result<Self> {
        Self::from_fn(field.dim(), n, |x| field.value(x))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn resolution(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multi-index of flat node `j`.
    pub fn multi_index(&self, j: usize) -> Vec<usize> {
        let mut rem = j;
        (0..self.dim)
            .map(|_| {
                let c = rem % self.n;
                rem /= self.n;
                c
            })
            .collect()
    }

    /// Coordinates `j / N` of flat node `j`.
    pub fn node(&self, j: usize) -> Vec<f64> {
        node_coords(self.dim, self.n, j)
    }

    /// Periodic multilinear interpolation.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.dim {
            let s = x[a] * n as f64;
            let fl = s.floor();
            base[a] = (fl as i64).rem_euclid(n as i64) as usize;
            frac[a] = s - fl;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for a in 0..self.dim {
                let up = (corner >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                let c = if up { (base[a] + 1) % n } else { base[a] };
                idx += c * stride;
                stride *= n;
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn same_grid(&self, other: &GridField) -> Result<()> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::invalid(format!(
                "grid mismatch: {}^{} vs {}^{}",
                self.n, self.dim, other.n, other.dim
            )));
        }
        Ok(())
    }
}

fn node_coords(dim: usize, n: usize, j: usize) -> Vec<f64> {
    let mut rem = j;
    (0..dim)
        .map(|_| {
            let c = rem % n;
            rem /= n;
            c as f64 / n as f64
        })
        .collect()
}

/// `(minus, plus)` periodic neighbours of flat node `j` along `axis`.
#[inline]
/// `max` that propagates NaN, so a diverged iterate is never reported as small.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn neighbours(n: usize, j: usize, axis: usize) -> (usize, usize) {
    let stride = n.pow(axis as u32);
    let c = (j / stride) % n;
    let minus = if c == 0 { j + (n - 1) * stride } else { j - stride };
    let plus = if c == n - 1 { j - (n - 1) * stride } else { j + stride };
    (minus, plus)
}

impl ScalarField for GridField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.interpolate(x)
    }
    fn fd_step(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Componentwise grid vector field, interpolated between nodes.
#[derive(Clone, Debug)]
pub struct GridVector(pub Vec<GridField>);

impl VectorField for GridVector {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|f| f.interpolate(x)).collect()
    }
    fn fd_step(&self) -> f64 {
        1.0 / self.0[0].n as f64
    }
}

/// `gamma_eps = (1 - alpha) eps / alpha`, `gamma_h = (1 - alpha) h^2 / alpha`.
pub fn gammas(alpha: f64, eps: f64, h: f64) -> (f64, f64) {
    let g = (1.0 - alpha) / alpha;
    (g * eps, g * h * h)
}

/// Coefficients of the continuum equations sampled on one grid.
#[derive(Clone)]
pub struct PdeCoeffs {
    rho: GridField,
    b: Vec<GridField>,
    v: GridField,
    gamma_eps: f64,
    gamma_h: f64,
    sigma_phi: f64,
    eta: f64,
    rho_field: Option<SharedScalar>,
    b_field: Option<SharedVector>,
}

impl std::fmt::Debug for PdeCoeffs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeCoeffs")
            .field("dim", &self.rho.dim)
            .field("n", &self.rho.n)
            .field("gamma_eps", &self.gamma_eps)
            .field("gamma_h", &self.gamma_h)
            .field("sigma_phi", &self.sigma_phi)
            .field("eta", &self.eta)
            .finish()
    }
}

impl PdeCoeffs {
    pub fn new(
        rho: GridField,
        b: Vec<GridField>,
        v: GridField,
        gamma_eps: f64,
        gamma_h: f64,
        sigma_phi: f64,
    ) -> Result<Self> {
        if b.len() != rho.dim {
            return Err(Error::invalid(format!(
                "drift has {} components in dimension {}",
                b.len(),
                rho.dim
            )));
        }
        for f in b.iter().chain(std::iter::once(&v)) {
            rho.same_grid(f)?;
        }
        if let Some(j) = rho.values.iter().position(|&r| !(r > 0.0)) {
            return Err(Error::invalid(format!("density is not positive at grid node {j}")));
        }
        for (name, g) in [("gamma_eps", gamma_eps), ("gamma_h", gamma_h), ("sigma_phi", sigma_phi)] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number, got {g}")));
            }
        }
        let mut c = Self {
            rho,
            b,
            v,
            gamma_eps,
            gamma_h,
            sigma_phi,
            eta: 0.0,
            rho_field: None,
            b_field: None,
        };
        c.eta = c.drift_divergence().max_abs();
        Ok(c)
    }

    /// Samples analytic fields on an `n^d` grid and keeps them for the
    /// characteristics, which then use exact derivatives.
    pub fn from_fields(
        n: usize,
        rho: SharedScalar,
        b: SharedVector,
        v: &dyn ScalarField,
        gamma_eps: f64,
        gamma_h: f64,
        sigma_phi: f64,
    ) -> Result<Self> {
        let d = rho.dim();
        if b.dim() != d || v.dim() != d {
            return Err(Error::invalid("fields of different dimensions"));
        }
        let rho_g = GridField::sample(rho.as_ref(), n)?;
        let b_vals: Vec<Vec<f64>> = (0..n.pow(d as u32))
            .into_par_iter()
            .map(|j| b.value(&node_coords(d, n, j)))
            .collect();
        let b_g = (0..d)
            .map(|k| GridField::new(d, n, b_vals.iter().map(|bj| bj[k]).collect()))
            .collect::<Result<Vec<_>>>()?;
        let v_g = GridField::sample(v, n)?;
        let mut c = Self::new(rho_g, b_g, v_g, gamma_eps, gamma_h, sigma_phi)?;
        c.rho_field = Some(rho);
        c.b_field = Some(b);
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.rho.dim
    }
    pub fn resolution(&self) -> usize {
        self.rho.n
    }
    pub fn rho(&self) -> &GridField {
        &self.rho
    }
    pub fn b(&self) -> &[GridField] {
        &self.b
    }
    pub fn v(&self) -> &GridField {
        &self.v
    }
    pub fn gamma_eps(&self) -> f64 {
        self.gamma_eps
    }
    pub fn gamma_h(&self) -> f64 {
        self.gamma_h
    }
    pub fn sigma_phi(&self) -> f64 {
        self.sigma_phi
    }

    /// Grid value of `sup |rho^{-2} div(rho^2 b)|`, from the same face fluxes
    /// the solvers use.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `rho^{-2} div(rho^2 b)` at every node.
    pub fn drift_divergence(&self) -> GridField {
        let n = self.rho.n;
        let a: Vec<f64> = self.rho.values.iter().map(|r| r * r).collect();
        let vals = (0..self.rho.len())
            .map(|j| {
                let mut s = 0.0;
                for k in 0..self.rho.dim {
                    let (m, p) = neighbours(n, j, k);
                    let bk = &self.b[k].values;
                    let fp = 0.5 * (a[j] * bk[j] + a[p] * bk[p]);
                    let fm = 0.5 * (a[m] * bk[m] + a[j] * bk[j]);
                    s += (fp - fm) * n as f64;
                }
                s / a[j]
            })
            .collect();
        GridField {
            dim: self.rho.dim,
            n,
            values: vals,
        }
    }

    /// Reaction coefficient `c = 1 + gamma_eps rho^{-2} div(rho^2 b)`.
    pub fn reaction(&self) -> GridField {
        let mut d = self.drift_divergence();
        for x in &mut d.values {
            *x = 1.0 + self.gamma_eps * *x;
        }
        d
    }

    /// `rho^{-1} v` at every node.
    pub fn source(&self) -> GridField {
        GridField {
            dim: self.rho.dim,
            n: self.rho.n,
            values: self.v.values.iter().zip(&self.rho.values).map(|(v, r)| v / r).collect(),
        }
    }

    pub fn check_regime(&self) -> Result<()> {
        let p = self.eta * self.gamma_eps;
        if !(p < 1.0) {
            return Err(Error::Regime(format!(
                "eta * gamma_eps = {p} must be below 1 (eta = {}, gamma_eps = {})",
                self.eta, self.gamma_eps
            )));
        }
        Ok(())
    }

    /// Density and drift for the characteristics: the analytic fields when
    /// available, grid interpolants otherwise.
    pub fn characteristic_fields(&self) -> (SharedScalar, SharedVector) {
        let rho = self
            .rho_field
            .clone()
            .unwrap_or_else(|| Arc::new(self.rho.clone()));
        let b = self
            .b_field
            .clone()
            .unwrap_or_else(|| Arc::new(GridVector(self.b.clone())));
        (rho, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Advection {
    Centered,
    Upwind,
}

/// Assembled rows in flux form:
/// `(A u)_j = react_j u_j + sum_s off_{j,s} (u_{nb(j,s)} - u_j)` with neighbours
/// ordered `(axis 0 minus, axis 0 plus, axis 1 minus, ...)`. Constants are
/// therefore mapped to `react * c` without cancellation error.
struct Stencil {
    dim: usize,
    n: usize,
    react: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Stencil {
    fn assemble(c: &PdeCoeffs, kappa: f64, adv: Advection) -> Self {
        let (d, n) = (c.rho.dim, c.rho.n);
        let len = c.rho.len();
        let hinv = n as f64;
        let a: Vec<f64> = c.rho.values.iter().map(|r| r * r).collect();
        let g = c.gamma_eps;
        let rows: Vec<(f64, f64, Vec<f64>)> = (0..len)
            .into_par_iter()
            .map(|j| {
                let inv = 1.0 / a[j];
                let mut diag = 1.0;
                let mut div = 0.0;
                let mut off = vec![0.0; 2 * d];
                for k in 0..d {
                    let (m, p) = neighbours(n, j, k);
                    let bk = &c.b[k].values;
                    let fp = 0.5 * (a[j] * bk[j] + a[p] * bk[p]);
                    let fm = 0.5 * (a[m] * bk[m] + a[j] * bk[j]);
                    let ap = 0.5 * (a[j] + a[p]);
                    let am = 0.5 * (a[m] + a[j]);
                    let dif = kappa * inv * hinv * hinv;
                    diag += dif * (ap + am);
                    off[2 * k] -= dif * am;
                    off[2 * k + 1] -= dif * ap;
                    let adv_scale = g * inv * hinv;
                    div += fp - fm;
                    match adv {
                        Advection::Centered => {
                            diag += 0.5 * adv_scale * (fp - fm);
                            off[2 * k] -= 0.5 * adv_scale * fm;
                            off[2 * k + 1] += 0.5 * adv_scale * fp;
                        }
                        Advection::Upwind => {
                            diag += adv_scale * (fp.max(0.0) - fm.min(0.0));
                            off[2 * k] -= adv_scale * fm.max(0.0);
                            off[2 * k + 1] += adv_scale * fp.min(0.0);
                        }
                    }
                }
                (1.0 + g * inv * hinv * div, diag, off)
            })
            .collect();
        let mut react = Vec::with_capacity(len);
        let mut diag = Vec::with_capacity(len);
        let mut off = Vec::with_capacity(len * 2 * d);
        for (r, dg, o) in rows {
            react.push(r);
            diag.push(dg);
            off.extend(o);
        }
        Self {
            dim: d,
            n,
            react,
            diag,
            off,
        }
    }

    #[inline]
    fn row(&self, u: &[f64], j: usize) -> f64 {
        let uj = u[j];
        let mut s = 0.0;
        let o = &self.off[2 * self.dim * j..2 * self.dim * (j + 1)];
        for k in 0..self.dim {
            let (m, p) = neighbours(self.n, j, k);
            s += o[2 * k] * (u[m] - uj) + o[2 * k + 1] * (u[p] - uj);
        }
        self.react[j] * uj + s
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len()).into_par_iter().map(|j| self.row(u, j)).collect()
    }

    fn residual(&self, u: &[f64], f: &[f64]) -> f64 {
        (0..u.len())
            .into_par_iter()
            .map(|j| (self.row(u, j) - f[j]).abs())
            .reduce(|| 0.0, nan_max)
    }

    /// Residual level that rounding alone produces at `u`; tolerances
    /// below it are unattainable.
    fn roundoff_floor(&self, u: &[f64], f: &[f64]) -> f64 {
        let w = 2 * self.dim;
        let scale = (0..u.len())
            .into_par_iter()
            .map(|j| {
                let mut s = (self.diag[j] * u[j]).abs() + f[j].abs();
                for k in 0..self.dim {
                    let (m, p) = neighbours(self.n, j, k);
                    s += (self.off[w * j + 2 * k] * u[m]).abs() + (self.off[w * j + 2 * k + 1] * u[p]).abs();
                }
                s
            })
            .reduce(|| 0.0, f64::max);
        4.0 * f64::EPSILON * scale
    }

    /// Gershgorin bound on the Jacobi iteration matrix.
    fn jacobi_bound(&self) -> f64 {
        let w = 2 * self.dim;
        self.diag
            .iter()
            .enumerate()
            .map(|(j, dg)| self.off[w * j..w * (j + 1)].iter().map(|x| x.abs()).sum::<f64>() / dg)
            .fold(0.0, f64::max)
    }

    /// Largest forward-Euler step keeping the explicit scheme stable: the
    /// diagonal bound `1 / max diag` and, when diffusion is present, the
    /// centered-advection bound `2 kappa / |effective speed|^2`.
    fn stable_dt(&self, kappa: f64) -> f64 {
        let dt_diag = 1.0 / self.diag.iter().copied().fold(0.0, f64::max);
        if kappa <= 0.0 {
            return dt_diag;
        }
        let h = 1.0 / self.n as f64;
        let w = 2 * self.dim;
        let speed2: f64 = (0..self.dim)
            .map(|k| {
                let s = (0..self.diag.len())
                    .map(|j| ((self.off[w * j + 2 * k + 1] - self.off[w * j + 2 * k]) * h).abs())
                    .fold(0.0, f64::max);
                s * s
            })
            .sum();
        if speed2 > 0.0 {
            dt_diag.min(2.0 * kappa / speed2)
        } else {
            dt_diag
        }
    }

    fn sor_sweep(&self, u: &mut [f64], f: &[f64], omega: f64) {
        let w = 2 * self.dim;
        for j in 0..u.len() {
            let o = &self.off[w * j..w * (j + 1)];
            let mut s = f[j];
            for k in 0..self.dim {
                let (m, p) = neighbours(self.n, j, k);
                s -= o[2 * k] * u[m] + o[2 * k + 1] * u[p];
            }
            let gs = s / self.diag[j];
            u[j] += omega * (gs - u[j]);
        }
    }

    /// Successive over-relaxation with the relaxation factor taken from the
    /// Jacobi bound; falls back to Gauss-Seidel if the over-relaxed sweep
    /// stops reducing the residual.
    fn solve(&self, f: &[f64], tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, f64, usize)> {
        let rho_j = self.jacobi_bound();
        let omega0 = if rho_j < 1.0 {
            2.0 / (1.0 + (1.0 - rho_j * rho_j).sqrt())
        } else {
            1.0
        };
        let check = 10;
        // over-relaxed sweeps can raise the residual for O(n) sweeps before it falls
        let patience = 50.max(4 * self.n / check);
        let mut last = f64::NAN;
        let mut total = 0;
        for omega in [omega0, 1.0] {
            let mut u: Vec<f64> = f.iter().zip(&self.diag).map(|(f, d)| f / d).collect();
            let r0 = self.residual(&u, f);
            if r0 <= tol {
                return Ok((u, r0, total));
            }
            let mut best = r0;
            let mut stalled = 0;
            let mut sweeps = 0;
            while sweeps < max_sweeps {
                for _ in 0..check {
                    self.sor_sweep(&mut u, f, omega);
                }
                sweeps += check;
                total += check;
                let r = self.residual(&u, f);
                last = r;
                if r <= tol || r <= self.roundoff_floor(&u, f) {
                    return Ok((u, r, total));
                }
                if !r.is_finite() || r > 1e6 * r0 {
                    break;
                }
                if r < 0.999 * best {
                    best = r;
                    stalled = 0;
                } else {
                    stalled += 1;
                    if stalled >= patience {
                        break;
                    }
                }
            }
            if omega == 1.0 {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: total,
            residual: last,
        })
    }
}

/// Default iteration budget for the grid solvers (in sweeps).
pub const DEFAULT_MAX_SWEEPS: usize = 200_000;

/// Stationary solution with its final residual.
#[derive(Clone, Debug)]
pub struct PdeSolution {
    pub u: GridField,
    /// `max |A u - rho^{-1} v|`.
    pub residual: f64,
    pub sweeps: usize,
}

fn second_order_kappa(c: &PdeCoeffs) -> f64 {
    0.5 * c.sigma_phi * c.gamma_h
}

/// `u + gamma_eps rho^{-2} div(rho^2 b u) - (sigma/2) gamma_h rho^{-2} div(rho^2 grad u)`.
pub fn continuum_operator_2nd(c: &PdeCoeffs, u: &GridField) -> Result<GridField> {
    c.rho.same_grid(u)?;
    let s = Stencil::assemble(c, second_order_kappa(c), Advection::Centered);
    Ok(GridField {
        dim: u.dim,
        n: u.n,
        values: s.apply(&u.values),
    })
}

/// The upwinded, viscosity-regularized first-order operator
/// `u + gamma_eps rho^{-2} div(rho^2 b u) - delta rho^{-2} div(rho^2 grad u)`.
pub fn continuum_operator_1st(c: &PdeCoeffs, delta: f64, u: &GridField) -> Result<GridField> {
    c.rho.same_grid(u)?;
    let s = Stencil::assemble(c, delta, Advection::Upwind);
    Ok(GridField {
        dim: u.dim,
        n: u.n,
        values: s.apply(&u.values),
    })
}

/// Solves the second-order equation `A u = rho^{-1} v` to `max |residual| <= tol`.
pub fn solve_pde_2nd(c: &PdeCoeffs, tol: f64) -> Result<PdeSolution> {
    solve_pde_2nd_with(c, tol, DEFAULT_MAX_SWEEPS)
}

pub fn solve_pde_2nd_with(c: &PdeCoeffs, tol: f64, max_sweeps: usize) -> Result<PdeSolution> {
    if !(c.gamma_h > 0.0) {
        return Err(Error::config("the second-order equation needs gamma_h > 0"));
    }
    check_tol(tol)?;
    c.check_regime()?;
    let s = Stencil::assemble(c, second_order_kappa(c), Advection::Centered);
    finish(c, s.solve(&c.source().values, tol, max_sweeps)?)
}

/// Default viscosity for the first-order solver: one grid spacing.
pub fn default_delta(n: usize) -> f64 {
    1.0 / n as f64
}

/// Solves the viscosity-regularized first-order equation with upwinded advection.
pub fn solve_pde_1st(c: &PdeCoeffs, delta: Option<f64>, tol: f64) -> Result<PdeSolution> {
    let delta = delta.unwrap_or_else(|| default_delta(c.resolution()));
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("viscosity must be positive, got {delta}")));
    }
    check_tol(tol)?;
    c.check_regime()?;
    let s = Stencil::assemble(c, delta, Advection::Upwind);
    finish(c, s.solve(&c.source().values, tol, DEFAULT_MAX_SWEEPS)?)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn finish(c: &PdeCoeffs, (u, residual, sweeps): (Vec<f64>, f64, usize)) -> Result<PdeSolution> {
    Ok(PdeSolution {
        u: GridField::new(c.dim(), c.resolution(), u)?,
        residual,
        sweeps,
    })
}

/// Largest stable forward-Euler step for the time-dependent equation.
pub fn max_stable_dt(c: &PdeCoeffs) -> f64 {
    let kappa = second_order_kappa(c);
    Stencil::assemble(c, kappa, Advection::Centered).stable_dt(kappa)
}

/// Forward-Euler integration of `u_t + A u = rho^{-1} v`, `u(0) = g`.
/// Returns snapshots at `t = k dt` for `k = 0..=round(T / dt)`.
pub fn solve_pde_time(c: &PdeCoeffs, g: &GridField, t_final: f64, dt: f64) -> Result<Vec<GridField>> {
    if !(t_final >= 0.0) {
        return Err(Error::invalid(format!("final time must be nonnegative, got {t_final}")));
    }
    let steps = steps_for(t_final, dt)?;
    solve_pde_time_at(c, g, dt, &(0..=steps).collect::<Vec<_>>())
}

fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let k = t / dt;
    let r = k.round();
    Ok(if (k - r).abs() < 1e-9 * r.max(1.0) { r as usize } else { k.ceil() as usize })
}

/// As [`solve_pde_time`], keeping only the snapshots after the given step
/// counts (sorted ascending).
pub fn solve_pde_time_at(c: &PdeCoeffs, g: &GridField, dt: f64, steps: &[usize]) -> Result<Vec<GridField>> {
    c.rho.same_grid(g)?;
    if !(c.gamma_h > 0.0) {
        return Err(Error::config("the time-dependent equation needs gamma_h > 0"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("snapshot steps must be sorted"));
    }
    let kappa = second_order_kappa(c);
    let s = Stencil::assemble(c, kappa, Advection::Centered);
    let bound = s.stable_dt(kappa);
    if dt > bound {
        return Err(Error::config(format!(
            "time step dt = {dt} exceeds the explicit stability bound {bound}"
        )));
    }
    let f = c.source().values;
    let mut u = g.values.clone();
    let mut out = Vec::with_capacity(steps.len());
    let mut k = 0usize;
    for &target in steps {
        while k < target {
            let au = s.apply(&u);
            u.par_iter_mut()
                .zip(au.par_iter().zip(f.par_iter()))
                .for_each(|(uj, (a, fj))| *uj -= dt * (a - fj));
            k += 1;
        }
        out.push(GridField {
            dim: g.dim,
            n: g.n,
            values: u.clone(),
        });
    }
    Ok(out)
}

/// One point of a characteristic: position, value `z = u(x)` and `p = grad u(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CharState {
    pub s: f64,
    pub x: Vec<f64>,
    pub z: f64,
    pub p: Vec<f64>,
}

/// Integrates the characteristic ODEs of the first-order equation with the
/// classical fourth-order Runge-Kutta method.
pub fn integrate_characteristics(
    c: &PdeCoeffs,
    x0: &[f64],
    z0: f64,
    p0: &[f64],
    t_final: f64,
    dt: f64,
) -> Result<Vec<CharState>> {
    let (rho, b) = c.characteristic_fields();
    integrate_characteristics_fields(rho.as_ref(), b.as_ref(), x0, z0, p0, t_final, dt)
}

/// Characteristics for explicit density and drift fields.
pub fn integrate_characteristics_fields(
    rho: &dyn ScalarField,
    b: &dyn VectorField,
    x0: &[f64],
    z0: f64,
    p0: &[f64],
    t_final: f64,
    dt: f64,
) -> Result<Vec<CharState>> {
    let d = rho.dim();
    if b.dim() != d || x0.len() != d || p0.len() != d {
        return Err(Error::invalid("dimension mismatch in characteristic data"));
    }
    if !(t_final >= 0.0) {
        return Err(Error::invalid(format!("final time must be nonnegative, got {t_final}")));
    }
    let steps = steps_for(t_final, dt)?;
    // state layout: x (d), z (1), p (d)
    let rhs = |y: &[f64]| -> Vec<f64> {
        let x = &y[..d];
        let z = y[d];
        let p = &y[d + 1..];
        let bx = b.value(x);
        let jac = b.jacobian(x);
        let gd = b.grad_divergence(x);
        let r = rho.value(x);
        let gr = rho.gradient(x);
        let hr = rho.hessian(x);
        let mut out = vec![0.0; 2 * d + 1];
        out[..d].copy_from_slice(&bx);
        out[d] = bx.iter().zip(p).map(|(a, b)| a * b).sum();
        for i in 0..d {
            // d_i (grad log rho . b)
            let mut t = 0.0;
            for j in 0..d {
                let hlog = hr[i * d + j] / r - gr[i] * gr[j] / (r * r);
                t += hlog * bx[j] + gr[j] / r * jac[j * d + i];
            }
            let dbp: f64 = (0..d).map(|j| jac[i * d + j] * p[j]).sum();
            out[d + 1 + i] = z * (gd[i] + 2.0 * t) + dbp;
        }
        out
    };
    let mut y: Vec<f64> = x0.iter().copied().chain([z0]).chain(p0.iter().copied()).collect();
    let mut out = Vec::with_capacity(steps + 1);
    let snapshot = |s: f64, y: &[f64]| {
        let mut x = y[..d].to_vec();
        wrap_in_place(&mut x);
        CharState {
            s,
            x,
            z: y[d],
            p: y[d + 1..].to_vec(),
        }
    };
    out.push(snapshot(0.0, &y));
    let axpy = |y: &[f64], k: &[f64], h: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for step in 1..=steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, &k1, 0.5 * dt));
        let k3 = rhs(&axpy(&y, &k2, 0.5 * dt));
        let k4 = rhs(&axpy(&y, &k3, dt));
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(snapshot(step as f64 * dt, &y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ConstantField, RotationalField, TrigPoly, TrigVectorField, ZeroField};
    use crate::rng::stream_rng;
    use std::f64::consts::PI;

    const SIGMA: f64 = 0.25;

    fn explicit_u(x: &[f64]) -> f64 {
        2.0 - ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())
    }

    fn explicit_v(gamma_h: f64) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| 2.0 - (1.0 + 0.5 * gamma_h * PI * PI) * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())
    }

    fn explicit_coeffs(n: usize, gamma_h: f64) -> PdeCoeffs {
        let rho = GridField::constant(2, n, 1.0).unwrap();
        let b = vec![GridField::constant(2, n, 0.0).unwrap(); 2];
        let v = GridField::from_fn(2, n, explicit_v(gamma_h)).unwrap();
        PdeCoeffs::new(rho, b, v, 0.0, gamma_h, SIGMA).unwrap()
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_linear_between() {
        let g = GridField::from_fn(2, 8, |x| x[0] + 3.0 * x[1]).unwrap();
        assert_eq!(g.interpolate(&[0.25, 0.5]), 0.25 + 1.5);
        assert!((g.interpolate(&[0.3, 0.1]) - 0.6).abs() < 1e-14);
        // wraps periodically
        assert!((g.interpolate(&[1.25, -0.5]) - g.interpolate(&[0.25, 0.5])).abs() < 1e-14);
    }

    #[test]
    fn grid_validation() {
        assert!(GridField::new(4, 4, vec![0.0; 256]).is_err());
        assert!(GridField::new(1, 4, vec![0.0; 3]).is_err());
        assert!(GridField::new(1, 4, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        let rho = GridField::new(1, 4, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let z = GridField::constant(1, 4, 0.0).unwrap();
        assert!(PdeCoeffs::new(rho, vec![z.clone()], z, 0.1, 0.1, SIGMA).is_err());
    }

    #[test]
    fn constants_pass_through_without_drift() {
        let rho = GridField::from_fn(2, 16, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).sin()).unwrap();
        let b = vec![GridField::constant(2, 16, 0.0).unwrap(); 2];
        let c = PdeCoeffs::new(rho, b, GridField::constant(2, 16, 1.0).unwrap(), 0.4, 0.7, SIGMA).unwrap();
        let u = GridField::constant(2, 16, 3.25).unwrap();
        let out = continuum_operator_2nd(&c, &u).unwrap();
        assert!(out.values().iter().all(|&x| x == 3.25));
    }

    #[test]
    fn explicit_pair_operator_error() {
        let gamma_h = 0.25;
        for n in [16, 32, 64] {
            let c = explicit_coeffs(n, gamma_h);
            let u = GridField::from_fn(2, n, explicit_u).unwrap();
            let err = continuum_operator_2nd(&c, &u).unwrap().max_abs_diff(c.v());
            assert!(err <= 10.0 / (n * n) as f64, "n={n} err={err}");
        }
    }

    struct Analytic {
        rho: TrigPoly,
        b: TrigVectorField,
        u: TrigPoly,
    }

    impl Analytic {
        fn draw(seed: u64) -> Self {
            let mut rng = stream_rng(seed, 0);
            Self {
                rho: TrigPoly::random(2, 3, 2, 0.1, 1.0, &mut rng),
                b: TrigVectorField::new(vec![
                    TrigPoly::random(2, 3, 1, 0.05, 0.2, &mut rng),
                    TrigPoly::random(2, 3, 1, 0.05, -0.1, &mut rng),
                ]),
                u: TrigPoly::random(2, 4, 2, 0.5, 1.0, &mut rng),
            }
        }

        /// Symbolic evaluation of the second-order operator.
        fn operator(&self, x: &[f64], ge: f64, gh: f64) -> f64 {
            let r = self.rho.value(x);
            let gr = self.rho.gradient(x);
            let b = self.b.value(x);
            let u = self.u.value(x);
            let gu = self.u.gradient(x);
            let adv = self.b.divergence(x) * u
                + (0..2).map(|i| b[i] * gu[i] + 2.0 * u * b[i] * gr[i] / r).sum::<f64>();
            let dif = self.u.laplacian(x) + (0..2).map(|i| 2.0 * gr[i] * gu[i] / r).sum::<f64>();
            u + ge * adv - 0.5 * SIGMA * gh * dif
        }

        fn coeffs(&self, n: usize, ge: f64, gh: f64) -> PdeCoeffs {
            PdeCoeffs::from_fields(
                n,
                Arc::new(self.rho.clone()),
                Arc::new(self.b.clone()),
                &TrigPoly::constant(2, 1.0),
                ge,
                gh,
                SIGMA,
            )
            .unwrap()
        }
    }

    #[test]
    fn operator_matches_symbolic_evaluation_at_second_order() {
        for seed in 0..3 {
            let f = Analytic::draw(seed);
            let (ge, gh) = (0.3, 0.6);
            let errs: Vec<f64> = [32, 64]
                .iter()
                .map(|&n| {
                    let c = f.coeffs(n, ge, gh);
                    let u = GridField::sample(&f.u, n).unwrap();
                    let out = continuum_operator_2nd(&c, &u).unwrap();
                    (0..out.len())
                        .map(|j| (out.values()[j] - f.operator(&out.node(j), ge, gh)).abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            let ratio = errs[0] / errs[1];
            assert!((3.0..5.0).contains(&ratio), "seed {seed}: {errs:?}");
        }
    }

    #[test]
    fn explicit_pair_solution() {
        let gamma_h = 0.5;
        let n = 64;
        let c = explicit_coeffs(n, gamma_h);
        let sol = solve_pde_2nd(&c, 1e-11).unwrap();
        let exact = GridField::from_fn(2, n, explicit_u).unwrap();
        let err = sol.u.max_abs_diff(&exact);
        assert!(err <= 50.0 / (n * n) as f64, "{err}");
        assert!(sol.residual <= 1e-11);
    }

    #[test]
    fn richardson_ratio() {
        let f = Analytic::draw(42);
        let (ge, gh) = (0.2, 0.8);
        let sols: Vec<GridField> = [16, 32, 64]
            .iter()
            .map(|&n| solve_pde_2nd(&f.coeffs(n, ge, gh), 1e-12).unwrap().u)
            .collect();
        // compare on the coarse nodes
        let at = |g: &GridField, x: &[f64]| g.interpolate(x);
        let coarse = &sols[0];
        let (mut e1, mut e2) = (0.0f64, 0.0f64);
        for j in 0..coarse.len() {
            let x = coarse.node(j);
            let (a, b, c) = (at(&sols[0], &x), at(&sols[1], &x), at(&sols[2], &x));
            let extrap = c + (c - b) / 3.0;
            e1 = e1.max((a - extrap).abs());
            e2 = e2.max((b - extrap).abs());
        }
        let ratio = e1 / e2;
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn constant_source_gives_unit_solution() {
        let rho = TrigPoly::cosine(2, 1, 1, 0.3, 1.0);
        let n = 24;
        let rho_g = GridField::sample(&rho, n).unwrap();
        let b = vec![GridField::constant(2, n, 0.0).unwrap(); 2];
        let c = PdeCoeffs::new(rho_g.clone(), b, rho_g, 0.5, 0.5, SIGMA).unwrap();
        for sol in [solve_pde_2nd(&c, 1e-12).unwrap(), solve_pde_1st(&c, None, 1e-12).unwrap()] {
            assert!(sol.u.values().iter().all(|u| (u - 1.0).abs() < 1e-11));
        }
    }

    #[test]
    fn discrete_conservation() {
        for seed in 0..4 {
            let f = Analytic::draw(seed + 10);
            let mut rng = stream_rng(seed, 3);
            let v = TrigPoly::random(2, 3, 2, 0.4, 1.0, &mut rng);
            let n = 32;
            let c = PdeCoeffs::from_fields(n, Arc::new(f.rho.clone()), Arc::new(f.b.clone()), &v, 0.3, 0.4, SIGMA).unwrap();
            let sol2 = solve_pde_2nd(&c, 1e-12).unwrap();
            let sol1 = solve_pde_1st(&c, Some(0.02), 1e-12).unwrap();
            let rhs: f64 = c.rho().values().iter().zip(c.v().values()).map(|(r, v)| r * v).sum();
            for sol in [sol2, sol1] {
                let lhs: f64 = c.rho().values().iter().zip(sol.u.values()).map(|(r, u)| r * r * u).sum();
                assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs());
            }
        }
    }

    #[test]
    fn regime_and_viscosity_errors() {
        let n = 16;
        let rho = GridField::constant(1, n, 1.0).unwrap();
        let b = GridField::from_fn(1, n, |x| (2.0 * PI * x[0]).sin()).unwrap();
        let c = PdeCoeffs::new(rho, vec![b], GridField::constant(1, n, 1.0).unwrap(), 1.0, 0.1, SIGMA).unwrap();
        assert!(c.eta() > 1.0);
        assert!(matches!(solve_pde_2nd(&c, 1e-8), Err(Error::Regime(_))));
        assert!(matches!(solve_pde_1st(&c, None, 1e-8), Err(Error::Regime(_))));
        let ok = explicit_coeffs(8, 0.1);
        assert!(solve_pde_1st(&ok, Some(0.0), 1e-8).is_err());
        assert!(solve_pde_2nd(&explicit_coeffs(8, 0.0), 1e-8).is_err());
    }

    #[test]
    fn first_order_fourier_mode() {
        let (n, beta, ge) = (512, 1.0, 0.05);
        let rho = GridField::constant(1, n, 1.0).unwrap();
        let b = GridField::constant(1, n, beta).unwrap();
        let v = GridField::from_fn(1, n, |x| (2.0 * PI * x[0]).cos()).unwrap();
        let c = PdeCoeffs::new(rho, vec![b], v, ge, 0.0, SIGMA).unwrap();
        let sol = solve_pde_1st(&c, Some(1e-4), 1e-12).unwrap();
        let k = 2.0 * PI * ge * beta;
        let exact = GridField::from_fn(1, n, |x| {
            ((2.0 * PI * x[0]).cos() + k * (2.0 * PI * x[0]).sin()) / (1.0 + k * k)
        })
        .unwrap();
        assert!(sol.u.max_abs_diff(&exact) < 1e-2);
    }

    #[test]
    fn first_order_maximum_principle() {
        for seed in 0..5 {
            let f = Analytic::draw(seed + 20);
            let mut rng = stream_rng(seed, 4);
            let v = TrigPoly::random(2, 3, 2, 0.5, 1.0, &mut rng);
            let c = PdeCoeffs::from_fields(32, Arc::new(f.rho.clone()), Arc::new(f.b.clone()), &v, 0.4, 0.0, SIGMA).unwrap();
            let sol = solve_pde_1st(&c, None, 1e-12).unwrap();
            let bound = c.source().values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
                / (1.0 - c.eta() * c.gamma_eps());
            let max = sol.u.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(max <= bound * (1.0 + 1e-6), "{max} > {bound}");
        }
    }

    #[test]
    fn relaxation_to_unit_state() {
        let n = 8;
        let rho = GridField::constant(2, n, 1.0).unwrap();
        let b = vec![GridField::constant(2, n, 0.0).unwrap(); 2];
        let c = PdeCoeffs::new(rho.clone(), b, rho, 0.0, 0.5, SIGMA).unwrap();
        let g = GridField::constant(2, n, 2.0).unwrap();
        let dt = 1e-3;
        let snaps = solve_pde_time(&c, &g, 1.0, dt).unwrap();
        assert_eq!(snaps.len(), 1001);
        for (k, s) in snaps.iter().enumerate() {
            let exact = 1.0 + (-(k as f64) * dt).exp();
            assert!(s.values().iter().all(|u| (u - exact).abs() < dt));
        }
    }

    #[test]
    fn stationary_start_stays_put() {
        let c = explicit_coeffs(16, 0.5);
        let tol = 1e-12;
        let stat = solve_pde_2nd(&c, tol).unwrap().u;
        let dt = 0.5 * max_stable_dt(&c);
        for s in solve_pde_time(&c, &stat, 0.2, dt).unwrap() {
            assert!(s.max_abs_diff(&stat) <= 10.0 * tol);
        }
    }

    #[test]
    fn long_time_decay() {
        let c = explicit_coeffs(16, 0.5);
        let stat = solve_pde_2nd(&c, 1e-13).unwrap().u;
        let g = GridField::from_fn(2, 16, |x| (2.0 * PI * (x[0] + 2.0 * x[1])).sin()).unwrap();
        let dt = 0.5 * max_stable_dt(&c);
        let t = 2.0;
        let last = solve_pde_time(&c, &g, t, dt).unwrap().pop().unwrap();
        let steps = steps_for(t, dt).unwrap();
        let bound = (-(steps as f64) * dt).exp() * g.max_abs_diff(&stat) * 1.1;
        assert!(last.max_abs_diff(&stat) <= bound);
    }

    #[test]
    fn unstable_step_is_rejected() {
        let c = explicit_coeffs(16, 0.5);
        let g = GridField::constant(2, 16, 1.0).unwrap();
        let err = solve_pde_time(&c, &g, 0.1, 2.0 * max_stable_dt(&c)).unwrap_err();
        assert!(matches!(err, Error::Configuration(ref m) if m.contains("stability bound")));
    }

    #[test]
    fn characteristics_trivial_fields() {
        let one = TrigPoly::constant(2, 1.0);
        let traj = integrate_characteristics_fields(&one, &ZeroField { dim: 2 }, &[0.2, 0.3], 1.5, &[0.1, -0.2], 1.0, 0.01).unwrap();
        for s in &traj {
            assert_eq!((s.x.as_slice(), s.z, s.p.as_slice()), (&[0.2, 0.3][..], 1.5, &[0.1, -0.2][..]));
        }
        let b = [0.3, -0.7];
        let traj = integrate_characteristics_fields(&one, &ConstantField(b.to_vec()), &[0.9, 0.1], 0.5, &[1.0, 2.0], 1.0, 0.01).unwrap();
        let last = traj.last().unwrap();
        assert!((last.s - 1.0).abs() < 1e-12);
        let expect_x = [(0.9f64 + 0.3).rem_euclid(1.0), (0.1f64 - 0.7).rem_euclid(1.0)];
        for i in 0..2 {
            assert!((last.x[i] - expect_x[i]).abs() < 1e-12);
        }
        assert!((last.z - (0.5 + 0.3 - 1.4)).abs() < 1e-12);
        assert_eq!(last.p, vec![1.0, 2.0]);
        assert!(integrate_characteristics_fields(&one, &ZeroField { dim: 2 }, &[0.0, 0.0], 0.0, &[0.0, 0.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn characteristics_circular_orbit() {
        let one = TrigPoly::constant(2, 1.0);
        let field = RotationalField::new([0.5, 0.5], 0.2, 0.4, 1.0);
        let r0 = 0.1;
        let traj = integrate_characteristics_fields(&one, &field, &[0.5 + r0, 0.5], 0.0, &[0.0, 0.0], 2.0 * PI, 1e-3).unwrap();
        for s in &traj {
            let r = ((s.x[0] - 0.5).powi(2) + (s.x[1] - 0.5).powi(2)).sqrt();
            assert!((r - r0).abs() < 1e-6);
        }
    }

    #[test]
    fn characteristics_from_grid_coefficients() {
        let n = 32;
        let rho = GridField::constant(2, n, 1.0).unwrap();
        let b = vec![GridField::constant(2, n, 0.25).unwrap(), GridField::constant(2, n, 0.0).unwrap()];
        let c = PdeCoeffs::new(rho, b, GridField::constant(2, n, 1.0).unwrap(), 0.1, 0.1, SIGMA).unwrap();
        let traj = integrate_characteristics(&c, &[0.1, 0.1], 1.0, &[1.0, 0.0], 2.0, 0.01).unwrap();
        let last = traj.last().unwrap();
        assert!((last.x[0] - 0.6).abs() < 1e-9 && (last.z - 1.5).abs() < 1e-9);
    }
}
