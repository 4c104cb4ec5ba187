use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use prpde_core::continuum::{gammas, integrate_characteristics_fields, solve_pde_1st, solve_pde_2nd};
use prpde_core::experiments::{
    alpha_sweep, consistency_check, convergence_study, evolution_study, geometric_grid, schedule, ConsistencySetup,
    HRule, InitialCondition,
};
use prpde_core::fields::{ScalarField, TrigPoly};
use prpde_core::io::{
    fmt_f64, write_depth_csv, write_depth_vectors_csv, write_edges_csv, write_grid_csv, write_points_csv,
    write_rank_csv, CsvOut, Sidecar,
};
use prpde_core::pagerank::{solve_pagerank, PageRankConfig};
use prpde_core::{depth_ranking, depth_ranking_for};

use crate::settings::{preset, Map, Settings};
use crate::setup::{
    check_alpha, check_regime, dataset, eta, geometry, graph_setup, initial_field, knn_graph, named_field,
    pde_coeffs, DATA_KEYS, GEOMETRY_KEYS, GRAPH_KEYS,
};

const COMMON_KEYS: &[&str] = &["out", "seed"];

fn keys(command: &str) -> Vec<&'static str> {
    let mut k: Vec<&'static str> = COMMON_KEYS.to_vec();
    let (groups, own): (&[&[&'static str]], &[&'static str]) = match command {
        "generate" => (&[GRAPH_KEYS, GEOMETRY_KEYS], &["points_out"]),
        "pagerank" => (&[GRAPH_KEYS, GEOMETRY_KEYS, DATA_KEYS], &["k", "alpha", "teleport", "tol"]),
        "evolve" => (
            &[GRAPH_KEYS, GEOMETRY_KEYS],
            &["alpha", "grid", "steps", "initial", "teleport", "dt"],
        ),
        "solve-pde" => (
            &[GEOMETRY_KEYS],
            &["alpha", "h", "eps", "gamma_eps", "gamma_h", "grid", "order", "delta", "source", "tol"],
        ),
        "converge" => (&[], &["rules", "ns", "trials"]),
        "consistency" => (&[GRAPH_KEYS, GEOMETRY_KEYS], &["phi", "reps"]),
        "alpha-sweep" => (&[DATA_KEYS], &["k", "alphas"]),
        "depth" => (&[DATA_KEYS], &["k", "alpha", "top", "full", "classes", "vectors_out"]),
        "characteristics" => (&[GEOMETRY_KEYS], &["x0", "z0", "p0", "t", "dt"]),
        other => unreachable!("unknown command {other}"),
    };
    for g in groups {
        k.extend_from_slice(g);
    }
    k.extend_from_slice(own);
    k
}

pub fn run(command: &str, preset_name: Option<&str>, config: Option<&Path>, flags: Map) -> Result<()> {
    let preset = preset_name.map(|p| preset(p, command)).transpose()?;
    let s = Settings::layered(&keys(command), preset, config, flags)?;
    let out: PathBuf = s.req::<String>("out")?.into();
    let start = Instant::now();
    let results = match command {
        "generate" => generate(&s, &out)?,
        "pagerank" => pagerank(&s, &out)?,
        "evolve" => evolve(&s, &out)?,
        "solve-pde" => solve_pde(&s, &out)?,
        "converge" => converge(&s, &out)?,
        "consistency" => consistency(&s, &out)?,
        "alpha-sweep" => sweep(&s, &out)?,
        "depth" => depth(&s, &out)?,
        "characteristics" => characteristics(&s, &out)?,
        other => unreachable!("unknown command {other}"),
    };
    let mut side = s.sidecar(command);
    for (k, v) in results.entries() {
        side.set(k.clone(), v);
    }
    side.set("meta.wall_clock_secs", format!("{:.3}", start.elapsed().as_secs_f64()));
    let path = side.write_for(&out)?;
    eprintln!("wrote {} and {}", out.display(), path.display());
    Ok(())
}

fn generate(s: &Settings, out: &Path) -> Result<Sidecar> {
    let g = graph_setup(s)?;
    let points = g.sample()?;
    let graph = g.build(&points)?;
    write_edges_csv(out, &graph)?;
    if let Some(p) = s.opt::<String>("points_out")? {
        write_points_csv(&p, &points)?;
    }
    let mut meta = Sidecar::new();
    let mean_degree = graph.degrees().iter().sum::<f64>() / graph.len() as f64;
    meta.set("result.edges", graph.edge_count())
        .set("result.mean_degree", fmt_f64(mean_degree));
    Ok(meta)
}

fn has_dataset(s: &Settings) -> Result<bool> {
    Ok(s.opt::<String>("data")?.is_some()
        || s.opt::<String>("idx_images")?.is_some()
        || s.opt::<usize>("synthetic_n")?.is_some())
}

fn pagerank(s: &Settings, out: &Path) -> Result<Sidecar> {
    let alpha: f64 = s.req("alpha")?;
    check_alpha(alpha)?;
    let (graph, v) = if has_dataset(s)? {
        let data = dataset(s)?;
        let teleport: String = s.get("teleport", "uniform".to_string())?;
        ensure!(teleport == "uniform", "k-NN graphs only support uniform teleportation");
        let graph = knn_graph(&data, s.get("k", 10usize)?)?;
        let n = graph.len();
        (graph, vec![1.0; n])
    } else {
        let g = graph_setup(s)?;
        let (_, gh) = gammas(alpha, g.eps, g.h);
        let field = named_field(&s.get("teleport", "uniform".to_string())?, &g.geo, gh)?;
        let points = g.sample()?;
        let graph = g.build(&points)?;
        let v = points.iter().map(|x| field.value(x)).collect();
        (graph, v)
    };
    let signed = v.iter().any(|&x: &f64| x < 0.0);
    let mut cfg = if signed {
        PageRankConfig::signed(alpha, v)
    } else {
        PageRankConfig::new(alpha, v)
    };
    if let Some(tol) = s.opt::<f64>("tol")? {
        cfg = cfg.with_tol(tol);
    }
    let res = solve_pagerank(&graph, &cfg)?;
    write_rank_csv(out, &res)?;
    let mut meta = Sidecar::new();
    meta.set("result.nodes", graph.len())
        .set("result.iterations", res.iterations)
        .set("result.residual", fmt_f64(res.residual))
        .set("result.tol", fmt_f64(res.tol));
    Ok(meta)
}

fn evolve(s: &Settings, out: &Path) -> Result<Sidecar> {
    let alpha: f64 = s.req("alpha")?;
    check_alpha(alpha)?;
    let g = graph_setup(s)?;
    let (ge, gh) = gammas(alpha, g.eps, g.h);
    check_regime(&g.geo, ge)?;
    let grid: usize = s.get("grid", 64)?;
    let steps: usize = s.get("steps", 100)?;
    let initial = match s.get("initial", "stationary".to_string())?.as_str() {
        "stationary" => InitialCondition::Stationary,
        other => InitialCondition::Field(initial_field(other, g.geo.dim)?),
    };
    let teleport: String = s.get("teleport", "density".to_string())?;
    let dt = s.opt::<f64>("dt")?;
    let coeffs = pde_coeffs(&g.geo, grid, ge, gh, &teleport)?;
    let field = named_field(&teleport, &g.geo, gh)?;
    let points = g.sample()?;
    let graph = g.build(&points)?;
    let v: Vec<f64> = points.iter().map(|x| field.value(x)).collect();
    let rep = evolution_study(&graph, &coeffs, alpha, &v, &initial, steps, dt)?;
    let mut csv = CsvOut::create(out, &["k", "t", "error"])?;
    for r in &rep.rows {
        csv.row([r.k.to_string(), fmt_f64(r.t), fmt_f64(r.error)])?;
    }
    csv.finish()?;
    let mut meta = Sidecar::new();
    meta.set("result.slope", fmt_f64(rep.slope))
        .set("result.relative_slope", fmt_f64(rep.relative_slope))
        .set("result.growth_exponent", fmt_f64(rep.growth_exponent))
        .set("result.dt", fmt_f64(rep.dt));
    Ok(meta)
}

fn solve_pde(s: &Settings, out: &Path) -> Result<Sidecar> {
    let geo = geometry(s)?;
    let (ge, gh) = match (s.opt::<f64>("gamma_eps")?, s.opt::<f64>("gamma_h")?) {
        (Some(ge), Some(gh)) => (ge, gh),
        (None, None) => {
            let alpha: f64 = s.req("alpha")?;
            check_alpha(alpha)?;
            gammas(alpha, s.get("eps", 0.0)?, s.req("h")?)
        }
        _ => bail!("set both gamma_eps and gamma_h, or neither"),
    };
    ensure!(ge >= 0.0 && gh >= 0.0, "gamma_eps and gamma_h must be nonnegative");
    check_regime(&geo, ge)?;
    let grid: usize = s.get("grid", 64)?;
    let order: u8 = s.get("order", 2)?;
    let tol: f64 = s.get("tol", 1e-10)?;
    let coeffs = pde_coeffs(&geo, grid, ge, gh, &s.get("source", "uniform".to_string())?)?;
    let sol = match order {
        2 => solve_pde_2nd(&coeffs, tol)?,
        1 => solve_pde_1st(&coeffs, s.opt("delta")?, tol)?,
        o => bail!("order must be 1 or 2, got {o}"),
    };
    write_grid_csv(out, &sol.u)?;
    let mut meta = Sidecar::new();
    meta.set("result.eta", fmt_f64(coeffs.eta()))
        .set("result.residual", fmt_f64(sol.residual))
        .set("result.sweeps", sol.sweeps);
    Ok(meta)
}

fn parse_rule(spec: &str) -> Result<(HRule, f64)> {
    let (rule, c) = spec
        .rsplit_once(':')
        .with_context(|| format!("rule '{spec}' should look like name:C"))?;
    let c: f64 = c.parse().with_context(|| format!("bad constant in rule '{spec}'"))?;
    ensure!(c > 0.0, "rule constant must be positive in '{spec}'");
    Ok((HRule::parse(rule)?, c))
}

fn converge(s: &Settings, out: &Path) -> Result<Sidecar> {
    let rules: Vec<String> = s
        .list("rules")?
        .unwrap_or_else(|| vec!["log-sqrt:30".into(), "two-cube-root:20".into(), "quarter-root:10".into()]);
    let rules = rules.iter().map(|r| parse_rule(r)).collect::<Result<Vec<_>>>()?;
    let ns: Vec<usize> = s.list("ns")?.unwrap_or_else(|| vec![2500, 5000, 10000, 20000, 40000]);
    let trials: usize = s.get("trials", 10)?;
    let seed: u64 = s.get("seed", 0)?;
    ensure!(trials >= 1, "trials must be positive");
    let reports = rules
        .iter()
        .map(|&(rule, c)| {
            convergence_study(&schedule(rule, c, &ns), trials, seed)
                .map(|rep| (rule, rep))
                .with_context(|| format!("rule {}", rule.name()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = CsvOut::create(
        out,
        &[
            "rule",
            "n",
            "h",
            "alpha",
            "eps",
            "trials",
            "mean_linf_error",
            "lipschitz_ratio_stat",
            "max_abs_u",
            "stability_bound",
            "fitted_slope",
        ],
    )?;
    let mut meta = Sidecar::new();
    for (rule, rep) in reports {
        for r in &rep.rows {
            csv.row([
                rule.name(),
                r.n.to_string(),
                fmt_f64(r.h),
                fmt_f64(r.alpha),
                fmt_f64(r.eps),
                r.trials.to_string(),
                fmt_f64(r.mean_linf_error),
                fmt_f64(r.lipschitz_ratio_stat),
                fmt_f64(r.max_abs_u),
                fmt_f64(r.stability_bound),
                fmt_f64(rep.fitted_slope),
            ])?;
        }
        meta.set(format!("result.slope.{}", rule.name()), fmt_f64(rep.fitted_slope));
    }
    csv.finish()?;
    Ok(meta)
}

fn test_function(name: &str, dim: usize) -> Result<TrigPoly> {
    Ok(match name {
        "one" => TrigPoly::constant(dim, 1.0),
        "cos1" => TrigPoly::cosine(dim, 0, 1, 1.0, 0.0),
        "cos2" => TrigPoly::cosine(dim, 0, 2, 1.0, 0.0),
        other => bail!("unknown test function '{other}' (expected one, cos1 or cos2)"),
    })
}

fn consistency(s: &Settings, out: &Path) -> Result<Sidecar> {
    let g = graph_setup(s)?;
    let phi = test_function(&s.get("phi", "cos1".to_string())?, g.geo.dim)?;
    let reps: usize = s.get("reps", 1)?;
    ensure!(reps >= 1, "reps must be positive");
    let setup = ConsistencySetup {
        density: &g.geo.density,
        drift: &g.geo.drift,
        kernel: &g.geo.kernel,
        h: g.h,
        eps: g.eps,
    };
    let mut csv = CsvOut::create(out, &["rep", "mean_abs", "max_abs", "normalized", "normalized_first_order"])?;
    let mut total = 0.0;
    for rep in 0..reps {
        let points = prpde_core::sample_density(&g.geo.density, g.n, g.seed.wrapping_add(rep as u64))?;
        let stats = consistency_check(&points, &setup, &[&phi as &dyn ScalarField])?[0];
        total += stats.normalized;
        csv.row([
            rep.to_string(),
            fmt_f64(stats.mean_abs),
            fmt_f64(stats.max_abs),
            fmt_f64(stats.normalized),
            fmt_f64(stats.normalized_first_order),
        ])?;
    }
    csv.finish()?;
    let mut meta = Sidecar::new();
    meta.set("result.mean_normalized", fmt_f64(total / reps as f64));
    Ok(meta)
}

fn parse_alphas(s: &Settings) -> Result<Vec<f64>> {
    let raw: String = s.get("alphas", "0.01:0.5:8".to_string())?;
    let alphas: Vec<f64> = if raw.contains(':') {
        let parts: Vec<&str> = raw.split(':').collect();
        ensure!(parts.len() == 3, "alphas range should look like lo:hi:count");
        let lo: f64 = parts[0].trim().parse().context("alphas: bad lower end")?;
        let hi: f64 = parts[1].trim().parse().context("alphas: bad upper end")?;
        let count: usize = parts[2].trim().parse().context("alphas: bad count")?;
        ensure!(count >= 1 && lo <= hi, "alphas range needs lo <= hi and count >= 1");
        geometric_grid(lo, hi, count)
    } else {
        s.list("alphas")?.unwrap_or_default()
    };
    ensure!(!alphas.is_empty(), "no alpha values given");
    for &a in &alphas {
        check_alpha(a)?;
    }
    Ok(alphas)
}

fn sweep(s: &Settings, out: &Path) -> Result<Sidecar> {
    let alphas = parse_alphas(s)?;
    let k: usize = s.get("k", 10)?;
    let data = dataset(s)?;
    let graph = knn_graph(&data, k)?;
    let rep = alpha_sweep(&graph, &alphas, &vec![1.0; graph.len()])?;
    let mut csv = CsvOut::create(out, &["alpha", "linf_distance", "iterations"])?;
    for r in &rep.rows {
        csv.row([fmt_f64(r.alpha), fmt_f64(r.linf_distance), r.iterations.to_string()])?;
    }
    csv.finish()?;
    let mut meta = Sidecar::new();
    meta.set("result.exponent", fmt_f64(rep.exponent))
        .set("result.prefactor", fmt_f64(rep.prefactor))
        .set("result.fit_residual", fmt_f64(rep.residual));
    Ok(meta)
}

fn depth(s: &Settings, out: &Path) -> Result<Sidecar> {
    let alpha: f64 = s.get("alpha", 0.05)?;
    check_alpha(alpha)?;
    let k: usize = s.get("k", 10)?;
    let top: usize = s.get("top", prpde_core::depth::DEFAULT_TOP)?;
    let data = dataset(s)?;
    let labels = data
        .labels
        .as_deref()
        .context("depth needs class labels (labels=true for CSV input, or idx_labels)")?;
    ensure!(k >= 1 && k < data.vectors.len(), "k must lie in [1, n - 1], got {k}");
    let result = match s.list::<i64>("classes")? {
        Some(classes) => depth_ranking_for(&data.vectors, labels, &classes, k, alpha, top)?,
        None => depth_ranking(&data.vectors, labels, k, alpha, top)?,
    };
    write_depth_csv(out, &result, s.flag("full")?)?;
    if let Some(p) = s.opt::<String>("vectors_out")? {
        write_depth_vectors_csv(&p, &result, &data.vectors)?;
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let mut meta = Sidecar::new();
    meta.set("result.classes", result.classes.len())
        .set("result.warnings", result.warnings.join("; "));
    Ok(meta)
}

fn characteristics(s: &Settings, out: &Path) -> Result<Sidecar> {
    let geo = geometry(s)?;
    let d = geo.dim;
    let x0: Vec<f64> = s.list("x0")?.unwrap_or_else(|| vec![0.5; d]);
    let p0: Vec<f64> = s.list("p0")?.unwrap_or_else(|| vec![0.0; d]);
    ensure!(x0.len() == d && p0.len() == d, "x0 and p0 need {d} entries");
    let z0: f64 = s.get("z0", 1.0)?;
    let t: f64 = s.get("t", 1.0)?;
    let dt: f64 = s.get("dt", 0.01)?;
    let rho = Arc::clone(geo.density.field());
    let path = integrate_characteristics_fields(rho.as_ref(), geo.drift.field().as_ref(), &x0, z0, &p0, t, dt)?;
    let mut header = vec!["s".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.push("z".into());
    header.extend((1..=d).map(|k| format!("p{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvOut::create(out, &header)?;
    for st in &path {
        let mut row = vec![fmt_f64(st.s)];
        row.extend(st.x.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(st.z));
        row.extend(st.p.iter().map(|&v| fmt_f64(v)));
        csv.row(row)?;
    }
    csv.finish()?;
    let mut meta = Sidecar::new();
    meta.set("result.eta", fmt_f64(eta(&geo))).set("result.points", path.len());
    Ok(meta)
}
