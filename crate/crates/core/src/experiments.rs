//! Numerical studies comparing graph PageRank with its continuum limit:
//! pointwise consistency of `L_n`, convergence of `u_n` to an explicit
//! solution, random-surfer evolution against the parabolic equation, and the
//! teleportation sweep.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::continuum::{max_stable_dt, solve_pde_2nd, solve_pde_time_at, GridField, PdeCoeffs};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, SharedScalar};
use crate::geometry::{sample_density, torus_distance, DensitySpec, PointCloud};
use crate::graph::{build_rdgg, cell_sorted, DirectedGeometricGraph, GraphParams, WeightEvaluator};
use crate::kernel::{DriftSpec, KernelSpec};
use crate::pagerank::{apply_l, evolve_surfer, solve_pagerank, PageRankConfig};
use crate::rng::stream_id;

/// Least-squares fit of `log y = log a + p log x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("xs and ys differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("a power-law fit needs at least two points"));
    }
    if let Some(i) = xs.iter().zip(ys).position(|(&x, &y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::invalid(format!(
            "power-law data must be positive, got ({}, {}) at index {i}",
            xs[i], ys[i]
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, intercept) = linear_fit(&lx, &ly)?;
    let m = lx.len() as f64;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(PowerFit {
        exponent: slope,
        prefactor: intercept.exp(),
        residual: (rss / m).sqrt(),
    })
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("abscissae are all equal"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

// ---------------------------------------------------------------------------
// consistency

/// Continuum data against which `L_n` is compared.
#[derive(Clone, Debug)]
pub struct ConsistencySetup<'a> {
    pub density: &'a DensitySpec,
    pub drift: &'a DriftSpec,
    pub kernel: &'a KernelSpec,
    pub h: f64,
    pub eps: f64,
}

/// Discrepancy between `d_x L_n phi / (rho n h^d)` and its continuum
/// expansion, for one test function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyStats {
    /// Mean and max of `|lhs - rhs|` with the full second-order right side.
    pub mean_abs: f64,
    pub max_abs: f64,
    /// `mean_abs / (eps + h^2)`.
    pub normalized: f64,
    /// Mean of `|lhs - rhs_1| / eps` against the first-order right side
    /// (drift term only); `NaN` when `eps = 0`.
    pub normalized_first_order: f64,
}

impl<'a> ConsistencySetup<'a> {
    fn validate(&self, d: usize) -> Result<()> {
        if !self.drift.is_identity() {
            return Err(Error::Unsupported(
                "consistency check requires an identity anisotropy".into(),
            ));
        }
        if self.density.dim() != d || self.drift.dim() != d || self.kernel.dim() != d {
            return Err(Error::invalid("dimension mismatch in consistency setup"));
        }
        Ok(())
    }

    /// `(drift part, diffusion part)` of the continuum right side at `x`:
    /// `-eps rho^{-2} div(rho^2 b phi)` and `(sigma/2) h^2 rho^{-2} div(rho^2 grad phi)`.
    fn rhs(&self, phi: &dyn ScalarField, x: &[f64]) -> (f64, f64) {
        let rho = self.density.field();
        let r = rho.value(x);
        let gr = rho.gradient(x);
        let b = self.drift.field().value(x);
        let div_b = self.drift.field().divergence(x);
        let p = phi.value(x);
        let gp = phi.gradient(x);
        let mut adv = p * div_b;
        let mut dif = phi.laplacian(x);
        for i in 0..x.len() {
            adv += b[i] * gp[i] + 2.0 * p * gr[i] * b[i] / r;
            dif += 2.0 * gr[i] * gp[i] / r;
        }
        (
            -self.eps * adv,
            0.5 * self.kernel.sigma_phi() * self.h * self.h * dif,
        )
    }

    fn stats(&self, phi: &dyn ScalarField, points: &PointCloud, lhs: &[f64]) -> ConsistencyStats {
        let n = points.len();
        let parts: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (first, second) = self.rhs(phi, points.point(i));
                ((lhs[i] - first - second).abs(), (lhs[i] - first).abs())
            })
            .collect();
        let mean_abs = parts.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let max_abs = parts.iter().map(|p| p.0).fold(0.0, f64::max);
        let first = parts.iter().map(|p| p.1).sum::<f64>() / n as f64;
        ConsistencyStats {
            mean_abs,
            max_abs,
            normalized: mean_abs / (self.eps + self.h * self.h),
            normalized_first_order: if self.eps > 0.0 { first / self.eps } else { f64::NAN },
        }
    }
}

/// Consistency statistics computed without storing the graph; suitable for
/// samples too dense to materialize.
pub fn consistency_check(
    points: &PointCloud,
    setup: &ConsistencySetup<'_>,
    test_functions: &[&dyn ScalarField],
) -> Result<Vec<ConsistencyStats>> {
    setup.validate(points.dim())?;
    setup.drift.check_radius(setup.h, setup.eps)?;
    // the statistics are symmetric in the points; cell order keeps neighbours in cache
    let reach = setup.drift.reach(setup.kernel.support(), setup.h, setup.eps);
    let sorted = cell_sorted(points, reach)?;
    let points = &sorted;
    let eval = WeightEvaluator::new(points, setup.kernel, setup.drift, setup.h, setup.eps)?;
    let n = points.len();
    let scale = n as f64 * setup.h.powi(points.dim() as i32);
    test_functions
        .iter()
        .map(|&phi| {
            let values: Vec<f64> = points.iter().map(|x| phi.value(x)).collect();
            let (deg, ins) = eval.degree_and_in_sum(&values);
            let lhs: Vec<f64> = (0..n)
                .map(|i| (ins[i] - deg[i] * values[i]) / (setup.density.eval(points.point(i)) * scale))
                .collect();
            Ok(setup.stats(phi, points, &lhs))
        })
        .collect()
}

/// As [`consistency_check`], on an already built geometric graph.
pub fn consistency_check_graph(
    graph: &DirectedGeometricGraph,
    setup: &ConsistencySetup<'_>,
    test_functions: &[&dyn ScalarField],
) -> Result<Vec<ConsistencyStats>> {
    let points = graph
        .points()
        .ok_or_else(|| Error::invalid("graph carries no sample positions"))?;
    setup.validate(points.dim())?;
    let n = points.len();
    let scale = n as f64 * setup.h.powi(points.dim() as i32);
    test_functions
        .iter()
        .map(|&phi| {
            let values: Vec<f64> = points.iter().map(|x| phi.value(x)).collect();
            let lphi = apply_l(graph, &values)?;
            let lhs: Vec<f64> = (0..n)
                .map(|i| graph.degrees()[i] * lphi[i] / (setup.density.eval(points.point(i)) * scale))
                .collect();
            Ok(setup.stats(phi, points, &lhs))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// convergence against the explicit solution

/// Length-scale schedules `h(n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HRule {
    /// `log(n) n^{-1/2}`
    LogSqrt,
    /// `2 n^{-1/3}`
    TwoCubeRoot,
    /// `n^{-1/4}`
    QuarterRoot,
    Fixed(f64),
}

impl HRule {
    pub fn h(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            HRule::LogSqrt => n.ln() / n.sqrt(),
            HRule::TwoCubeRoot => 2.0 * n.powf(-1.0 / 3.0),
            HRule::QuarterRoot => n.powf(-0.25),
            HRule::Fixed(h) => h,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            HRule::LogSqrt => "log-sqrt".into(),
            HRule::TwoCubeRoot => "two-cube-root".into(),
            HRule::QuarterRoot => "quarter-root".into(),
            HRule::Fixed(h) => format!("fixed:{h}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log-sqrt" => Ok(HRule::LogSqrt),
            "two-cube-root" => Ok(HRule::TwoCubeRoot),
            "quarter-root" => Ok(HRule::QuarterRoot),
            other => other
                .strip_prefix("fixed:")
                .and_then(|v| v.parse().ok())
                .map(HRule::Fixed)
                .ok_or_else(|| Error::invalid(format!("unknown h rule '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleRow {
    pub n: usize,
    pub h: f64,
    pub alpha: f64,
}

/// Rows `(n, h(n), alpha = c h^2)`.
pub fn schedule(rule: HRule, c: f64, ns: &[usize]) -> Vec<ScheduleRow> {
    ns.iter()
        .map(|&n| {
            let h = rule.h(n);
            ScheduleRow {
                n,
                h,
                alpha: (c * h * h).min(1.0),
            }
        })
        .collect()
}

/// The three `(h rule, C)` pairs of the reference convergence figure.
pub fn reference_schedules() -> [(HRule, f64); 3] {
    [
        (HRule::LogSqrt, 30.0),
        (HRule::TwoCubeRoot, 20.0),
        (HRule::QuarterRoot, 10.0),
    ]
}

/// `u(x) = 2 - (cos 2 pi x_1 + cos 2 pi x_2)`.
pub fn explicit_solution(x: &[f64]) -> f64 {
    2.0 - ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())
}

/// Source making [`explicit_solution`] solve the second-order equation with
/// `rho = 1`, `b = 0`: `v = 2 - (1 + 2 sigma gamma_h pi^2)(cos 2 pi x_1 + cos 2 pi x_2)`.
pub fn explicit_source(x: &[f64], gamma_h: f64, sigma_phi: f64) -> f64 {
    2.0 - (1.0 + 2.0 * sigma_phi * gamma_h * PI * PI)
        * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub alpha: f64,
    pub eps: f64,
    pub trials: usize,
    /// Mean over trials of `max_i |u_n(x_i) - u(x_i)|`.
    pub mean_linf_error: f64,
    /// Mean over trials of the 99th percentile of
    /// `|u_n(x) - u_n(y)| / (|x - y| + h)` over sampled edges.
    pub lipschitz_ratio_stat: f64,
    /// Largest `|u_n|` seen in any trial, and the stability bound `2 max |v|`.
    pub max_abs_u: f64,
    pub stability_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Exponent of the power-law fit of error against `h`.
    pub fitted_slope: f64,
    pub seed: u64,
}

/// Largest number of edges inspected for the Lipschitz statistic.
const LIPSCHITZ_SAMPLE: usize = 100_000;

fn lipschitz_stat(graph: &DirectedGeometricGraph, points: &PointCloud, u: &[f64], h: f64) -> f64 {
    let m = graph.edge_count();
    let stride = m.div_ceil(LIPSCHITZ_SAMPLE).max(1);
    let mut ratios: Vec<f64> = graph
        .edges()
        .step_by(stride)
        .filter(|&(i, j, _)| i != j)
        .map(|(i, j, _)| (u[i] - u[j]).abs() / (torus_distance(points.point(i), points.point(j)) + h))
        .collect();
    if ratios.is_empty() {
        return 0.0;
    }
    let k = ((ratios.len() as f64 * 0.99).ceil() as usize).clamp(1, ratios.len()) - 1;
    let (_, v, _) = ratios.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

struct TrialOutcome {
    error: f64,
    lipschitz: f64,
    max_abs_u: f64,
    max_abs_v: f64,
}

fn convergence_trial(row: &ScheduleRow, kernel: &KernelSpec, seed: u64) -> Result<TrialOutcome> {
    let points = sample_density(&DensitySpec::uniform(2), row.n, seed)?;
    let graph = build_rdgg(&points, kernel, &DriftSpec::zero(2), row.h, 0.0)?;
    let gamma_h = (1.0 - row.alpha) * row.h * row.h / row.alpha;
    let v: Vec<f64> = points
        .iter()
        .map(|x| explicit_source(x, gamma_h, kernel.sigma_phi()))
        .collect();
    let max_abs_v = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let res = solve_pagerank(&graph, &PageRankConfig::signed(row.alpha, v))?;
    let error = points
        .iter()
        .zip(&res.u)
        .map(|(x, u)| (u - explicit_solution(x)).abs())
        .fold(0.0, f64::max);
    Ok(TrialOutcome {
        error,
        lipschitz: lipschitz_stat(&graph, &points, &res.u, row.h),
        max_abs_u: res.u.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        max_abs_v,
    })
}

/// Runs every schedule row for `trials` independent samples (indicator
/// kernel, uniform density, no drift) and fits the error rate in `h`.
pub fn convergence_study(rows: &[ScheduleRow], trials: usize, seed: u64) -> Result<ConvergenceReport> {
    if rows.is_empty() {
        return Err(Error::invalid("schedule is empty"));
    }
    if trials == 0 {
        return Err(Error::invalid("need at least one trial per row"));
    }
    let kernel = KernelSpec::indicator(2);
    let mut out = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let outcomes: Vec<TrialOutcome> = (0..trials)
            .into_par_iter()
            .map(|t| convergence_trial(row, &kernel, stream_id(r, t) ^ seed.rotate_left(17)))
            .collect::<Result<_>>()
            .map_err(|e| e.context(format!("row {r} (n = {}, h = {}, alpha = {})", row.n, row.h, row.alpha)))?;
        let m = trials as f64;
        out.push(ConvergenceRow {
            n: row.n,
            h: row.h,
            alpha: row.alpha,
            eps: 0.0,
            trials,
            mean_linf_error: outcomes.iter().map(|o| o.error).sum::<f64>() / m,
            lipschitz_ratio_stat: outcomes.iter().map(|o| o.lipschitz).sum::<f64>() / m,
            max_abs_u: outcomes.iter().map(|o| o.max_abs_u).fold(0.0, f64::max),
            stability_bound: 2.0 * outcomes.iter().map(|o| o.max_abs_v).fold(0.0, f64::max),
        });
    }
    let distinct_h = out.windows(2).any(|w| w[0].h != w[1].h);
    let fitted_slope = if distinct_h {
        let hs: Vec<f64> = out.iter().map(|r| r.h).collect();
        let es: Vec<f64> = out.iter().map(|r| r.mean_linf_error).collect();
        fit_power_law(&hs, &es)?.exponent
    } else {
        f64::NAN
    };
    Ok(ConvergenceReport {
        rows: out,
        fitted_slope,
        seed,
    })
}

// ---------------------------------------------------------------------------
// random surfer against the parabolic equation

/// Initial condition shared by the graph evolution and the continuum equation.
#[derive(Clone)]
pub enum InitialCondition {
    /// Evaluated exactly at the sample points and sampled on the grid.
    Field(SharedScalar),
    /// The stationary continuum solution, interpolated to the sample points.
    Stationary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolutionRow {
    pub k: usize,
    /// Continuum time `alpha k`.
    pub t: f64,
    /// `max_i |u(x_i, alpha k) - u_n(x_i, k)|`.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionReport {
    pub rows: Vec<EvolutionRow>,
    /// Least-squares slope of error against `k`.
    pub slope: f64,
    /// Fitted change over the whole window relative to the mean error,
    /// `slope * k_max / mean(error)`.
    pub relative_slope: f64,
    /// Exponent of the power-law fit of error against `alpha k`, `k >= 1`.
    pub growth_exponent: f64,
    /// Continuum time step actually used.
    pub dt: f64,
}

/// Compares `u_n(., k)` with the continuum solution at `t = alpha k`,
/// `k = 0..=steps`. The continuum step is `alpha / m` for the smallest
/// integer `m` making it at most `dt_max` (default: the stability bound).
pub fn evolution_study(
    graph: &DirectedGeometricGraph,
    coeffs: &PdeCoeffs,
    alpha: f64,
    v_nodes: &[f64],
    g: &InitialCondition,
    steps: usize,
    dt_max: Option<f64>,
) -> Result<EvolutionReport> {
    let points = graph
        .points()
        .ok_or_else(|| Error::invalid("graph carries no sample positions"))?;
    if !matches!(graph.params(), GraphParams::Geometric { .. }) {
        return Err(Error::invalid("evolution study needs a geometric graph"));
    }
    if points.dim() != coeffs.dim() {
        return Err(Error::invalid("graph and grid dimensions differ"));
    }
    let bound = max_stable_dt(coeffs);
    let dt_cap = dt_max.unwrap_or(bound).min(bound);
    let per_step = (alpha / dt_cap).ceil().max(1.0) as usize;
    let dt = alpha / per_step as f64;

    let (g_grid, g_nodes) = match g {
        InitialCondition::Field(f) => {
            let grid = GridField::sample(f.as_ref(), coeffs.resolution())?;
            let nodes = points.iter().map(|x| f.value(x)).collect::<Vec<_>>();
            (grid, nodes)
        }
        InitialCondition::Stationary => {
            let tol = 1e-10 * coeffs.source().max_abs().max(1e-300);
            let grid = solve_pde_2nd(coeffs, tol)?.u;
            let nodes = points.iter().map(|x| grid.interpolate(x)).collect::<Vec<_>>();
            (grid, nodes)
        }
    };

    let cfg = PageRankConfig::signed(alpha, v_nodes.to_vec());
    let discrete = evolve_surfer(graph, &cfg, &g_nodes, steps)?;
    let marks: Vec<usize> = (0..=steps).map(|k| k * per_step).collect();
    let continuum = solve_pde_time_at(coeffs, &g_grid, dt, &marks)?;

    let rows: Vec<EvolutionRow> = (0..=steps)
        .map(|k| {
            let grid = &continuum[k];
            let error = points
                .iter()
                .zip(&discrete[k])
                .map(|(x, un)| (grid.interpolate(x) - un).abs())
                .fold(0.0, f64::max);
            EvolutionRow {
                k,
                t: alpha * k as f64,
                error,
            }
        })
        .collect();

    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let (slope, relative_slope) = if rows.len() >= 2 {
        let (slope, _) = linear_fit(&ks, &es)?;
        let mean = es.iter().sum::<f64>() / es.len() as f64;
        (slope, slope * steps as f64 / mean)
    } else {
        (0.0, 0.0)
    };
    let (ts, pos): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .skip(1)
        .filter(|r| r.error > 0.0)
        .map(|r| (r.t, r.error))
        .unzip();
    let growth_exponent = if ts.len() >= 2 {
        fit_power_law(&ts, &pos)?.exponent
    } else {
        f64::NAN
    };
    Ok(EvolutionReport {
        rows,
        slope,
        relative_slope,
        growth_exponent,
        dt,
    })
}

// ---------------------------------------------------------------------------
// teleportation sweep

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaSweepRow {
    pub alpha: f64,
    /// `max |r / sum r - v / sum v|`.
    pub linf_distance: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSweepReport {
    pub rows: Vec<AlphaSweepRow>,
    /// `p` in `distance ~ a alpha^{-p}` (rows with zero distance excluded).
    pub exponent: f64,
    pub prefactor: f64,
    pub residual: f64,
}

/// Distance between PageRank and teleportation, both as probability vectors,
/// across `alphas`.
pub fn alpha_sweep(graph: &DirectedGeometricGraph, alphas: &[f64], v: &[f64]) -> Result<AlphaSweepReport> {
    if alphas.is_empty() {
        return Err(Error::invalid("no alpha values given"));
    }
    let mass: f64 = v.iter().sum();
    let rows: Vec<AlphaSweepRow> = alphas
        .par_iter()
        .map(|&alpha| {
            let res = solve_pagerank(graph, &PageRankConfig::new(alpha, v.to_vec()))
                .map_err(|e| e.context(format!("alpha = {alpha}")))?;
            let p = res.probabilities();
            let linf_distance = p
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b / mass).abs())
                .fold(0.0, f64::max);
            Ok(AlphaSweepRow {
                alpha,
                linf_distance,
                iterations: res.iterations,
            })
        })
        .collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.linf_distance > 0.0)
        .map(|r| (r.alpha, r.linf_distance))
        .unzip();
    let (exponent, prefactor, residual) = if xs.len() >= 2 {
        let fit = fit_power_law(&xs, &ys)?;
        (-fit.exponent, fit.prefactor, fit.residual)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    Ok(AlphaSweepReport {
        rows,
        exponent,
        prefactor,
        residual,
    })
}

/// `count` values geometrically spaced over `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (r * i as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{TrigPoly, TrigVectorField};
    use crate::graph::{build_knn_graph, VectorSet};
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    #[test]
    fn exact_power_laws() {
        let xs: Vec<f64> = (1..=6).map(|i| i as f64 * 0.7).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let fit = fit_power_law(&xs, &ys).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        let two = fit_power_law(&[1.0, 2.0], &[1.0, 4.0]).unwrap();
        assert!((two.exponent - 2.0).abs() < 1e-14);
        assert!(fit_power_law(&[1.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(fit_power_law(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = stream_rng(5, 0);
        let xs: Vec<f64> = (1..=20).map(|i| i as f64 / 4.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.powf(1.5) * (1.0 + rng.gen_range(-0.01..0.01)))
            .collect();
        assert!((fit_power_law(&xs, &ys).unwrap().exponent - 1.5).abs() < 0.05);
    }

    #[test]
    fn h_rules() {
        assert!((HRule::TwoCubeRoot.h(8000) - 0.1).abs() < 1e-12);
        assert!((HRule::QuarterRoot.h(10_000) - 0.1).abs() < 1e-12);
        assert!((HRule::LogSqrt.h(100) - 100f64.ln() / 10.0).abs() < 1e-12);
        for r in [HRule::LogSqrt, HRule::TwoCubeRoot, HRule::QuarterRoot, HRule::Fixed(0.25)] {
            assert_eq!(HRule::parse(&r.name()).unwrap(), r);
        }
        let rows = schedule(HRule::TwoCubeRoot, 20.0, &[8000]);
        assert!((rows[0].alpha - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constants_are_consistent() {
        let density = DensitySpec::cosine_bump(2, 0.3).unwrap();
        let kernel = KernelSpec::smooth_bump(2);
        let one = TrigPoly::constant(2, 1.0);
        let points = sample_density(&density, 3000, 2).unwrap();
        // no drift: both sides vanish
        let setup = ConsistencySetup {
            density: &density,
            drift: &DriftSpec::zero(2),
            kernel: &kernel,
            h: 0.08,
            eps: 0.0,
        };
        let s = consistency_check(&points, &setup, &[&one]).unwrap();
        assert!(s[0].max_abs < 1e-12, "{s:?}");
        // with drift the right side is the drift divergence term only
        let b = TrigVectorField::new(vec![TrigPoly::sine(2, 1, 1, 0.5, 0.0), TrigPoly::constant(2, 0.3)]);
        let drift = DriftSpec::trig(b);
        let setup = ConsistencySetup {
            drift: &drift,
            eps: 0.01,
            ..setup
        };
        let x = [0.3, 0.7];
        let (first, second) = setup.rhs(&one, &x);
        assert_eq!(second, 0.0);
        let r = density.eval(&x);
        let gr = density.field().gradient(&x);
        let bx = drift.field().value(&x);
        let expect = -0.01 * (drift.field().divergence(&x) + 2.0 * (gr[0] * bx[0] + gr[1] * bx[1]) / r);
        assert!((first - expect).abs() < 1e-15);
    }

    #[test]
    fn consistency_graph_and_matrix_free_agree() {
        let density = DensitySpec::uniform(2);
        let kernel = KernelSpec::smooth_bump(2);
        let drift = DriftSpec::constant(vec![1.0, 0.0]);
        let points = sample_density(&density, 2000, 8).unwrap();
        let (h, eps) = (0.08, 0.0064);
        let graph = build_rdgg(&points, &kernel, &drift, h, eps).unwrap();
        let phi = TrigPoly::cosine(2, 0, 1, 1.0, 0.0);
        let setup = ConsistencySetup {
            density: &density,
            drift: &drift,
            kernel: &kernel,
            h,
            eps,
        };
        let a = consistency_check(&points, &setup, &[&phi]).unwrap()[0];
        let b = consistency_check_graph(&graph, &setup, &[&phi]).unwrap()[0];
        assert!((a.mean_abs - b.mean_abs).abs() < 1e-10 * a.mean_abs);
    }

    #[test]
    fn consistency_rejects_anisotropy() {
        let density = DensitySpec::uniform(2);
        let kernel = KernelSpec::smooth_bump(2);
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let drift = DriftSpec::with_anisotropy(
            "stretched",
            Arc::new(crate::fields::ZeroField { dim: 2 }),
            0.0,
            crate::kernel::Anisotropy::Constant(m),
            1.0,
        )
        .unwrap();
        let points = sample_density(&density, 10, 1).unwrap();
        let setup = ConsistencySetup {
            density: &density,
            drift: &drift,
            kernel: &kernel,
            h: 0.1,
            eps: 0.0,
        };
        assert!(matches!(consistency_check(&points, &setup, &[]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn small_convergence_study() {
        let rows = schedule(HRule::TwoCubeRoot, 20.0, &[800, 3200]);
        let rep = convergence_study(&rows, 2, 3).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows[1].mean_linf_error < rep.rows[0].mean_linf_error);
        for r in &rep.rows {
            assert!(r.max_abs_u <= r.stability_bound);
            assert!(r.lipschitz_ratio_stat > 0.0);
        }
        assert_eq!(convergence_study(&rows, 2, 3).unwrap(), rep);
    }

    #[test]
    fn alpha_one_row_isolates_degree_fluctuation() {
        let row = ScheduleRow { n: 2000, h: 0.1, alpha: 1.0 };
        let one = convergence_study(&[row], 1, 9).unwrap();
        // with alpha = 1 the source equals the solution and u = n h^d v / d,
        // so the error is exactly the degree fluctuation max |u (n h^d / d - 1)|
        let points = sample_density(&DensitySpec::uniform(2), 2000, stream_id(0, 0) ^ 9u64.rotate_left(17)).unwrap();
        let graph = build_rdgg(&points, &KernelSpec::indicator(2), &DriftSpec::zero(2), 0.1, 0.0).unwrap();
        let v: Vec<f64> = points.iter().map(|x| explicit_source(x, 0.0, 0.25)).collect();
        let res = solve_pagerank(&graph, &PageRankConfig::signed(1.0, v.clone())).unwrap();
        let c = graph.normalization();
        let mut fluct = 0.0f64;
        for (i, x) in points.iter().enumerate() {
            assert_eq!(res.u[i], c * v[i] / graph.degrees()[i]);
            fluct = fluct.max((explicit_solution(x) * (c / graph.degrees()[i] - 1.0)).abs());
        }
        assert!((one.rows[0].mean_linf_error - fluct).abs() < 1e-12);
    }

    #[test]
    fn sweep_on_small_cloud() {
        let mut rng = stream_rng(1, 0);
        let vals: Vec<f64> = (0..1200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let data = VectorSet::new(2, vals).unwrap();
        let g10 = build_knn_graph(&data, 10).unwrap();
        let g30 = build_knn_graph(&data, 30).unwrap();
        let v = vec![1.0; 600];
        let alphas = geometric_grid(0.02, 0.5, 5);
        let a = alpha_sweep(&g10, &alphas, &v).unwrap();
        let b = alpha_sweep(&g30, &alphas, &v).unwrap();
        for rep in [&a, &b] {
            assert!(rep.rows.windows(2).all(|w| w[1].linf_distance < w[0].linf_distance));
            assert!(rep.exponent > 0.0);
        }
        let at_one = alpha_sweep(&g10, &[1.0], &v).unwrap();
        assert_eq!(at_one.rows[0].linf_distance, 0.0);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(0.01, 0.5, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[7] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evolution_tracks_scalar_relaxation() {
        // b = 0, rho = 1, v = 1, g = 2: the continuum solution is 1 + e^{-t}
        let n = 3000;
        let (h, alpha) = (0.1, 0.05);
        let points = sample_density(&DensitySpec::uniform(2), n, 4).unwrap();
        let kernel = KernelSpec::smooth_bump(2);
        let graph = build_rdgg(&points, &kernel, &DriftSpec::zero(2), h, 0.0).unwrap();
        let (ge, gh) = crate::continuum::gammas(alpha, 0.0, h);
        let coeffs = PdeCoeffs::from_fields(
            16,
            Arc::new(TrigPoly::constant(2, 1.0)),
            Arc::new(crate::fields::ZeroField { dim: 2 }),
            &TrigPoly::constant(2, 1.0),
            ge,
            gh,
            kernel.sigma_phi(),
        )
        .unwrap();
        let g = InitialCondition::Field(Arc::new(TrigPoly::constant(2, 2.0)));
        let rep = evolution_study(&graph, &coeffs, alpha, &vec![1.0; n], &g, 40, None).unwrap();
        assert!(rep.rows[0].error < 1e-14);
        let noise = alpha + 1.0 / (n as f64 * h * h).sqrt();
        let traj = evolve_surfer(&graph, &PageRankConfig::new(alpha, vec![1.0; n]), &vec![2.0; n], 40).unwrap();
        for (k, u) in traj.iter().enumerate() {
            let mean = u.iter().sum::<f64>() / n as f64;
            let exact = 1.0 + (-alpha * k as f64).exp();
            assert!((mean - exact).abs() < noise, "k={k}: {mean} vs {exact}");
        }
    }
}
