use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;
mod setup;

use settings::Flags;

/// Directed geometric graphs, PageRank and their continuum limits.
#[derive(Parser)]
#[command(name = "prpde", version)]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "PRPDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value file; flags override it, it overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// uniform | cosine
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    density_amplitude: Option<f64>,
    /// zero | constant | shear | rotation
    #[arg(long)]
    drift: Option<String>,
    #[arg(long)]
    drift_amplitude: Option<f64>,
    /// Comma separated, for the constant drift.
    #[arg(long)]
    drift_vector: Option<String>,
    /// indicator | bump
    #[arg(long)]
    kernel: Option<String>,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[command(flatten)]
    geo: GeometryArgs,
}

#[derive(Args)]
struct DataArgs {
    /// CSV of vectors, one per row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// The last CSV column is an integer class label.
    #[arg(long)]
    labels: bool,
    #[arg(long)]
    idx_images: Option<PathBuf>,
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Use only the first rows of the input.
    #[arg(long)]
    limit: Option<usize>,
    /// Draw a standard Gaussian cloud of this size instead of reading data.
    #[arg(long)]
    synthetic_n: Option<usize>,
    #[arg(long)]
    synthetic_dim: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample points and write the directed geometric graph.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        points_out: Option<PathBuf>,
    },
    /// PageRank on a geometric graph, or on a k-NN graph of a dataset.
    Pagerank {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        graph: GraphArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// uniform | density | cosine | explicit
        #[arg(long)]
        teleport: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Random surfer against the time-dependent continuum equation.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// stationary | cosine | constant:<c>
        #[arg(long)]
        initial: Option<String>,
        #[arg(long)]
        teleport: Option<String>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Solve the stationary continuum equation on a periodic grid.
    SolvePde {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geo: GeometryArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        gamma_eps: Option<f64>,
        #[arg(long)]
        gamma_h: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        /// 1 (viscous upwind) or 2
        #[arg(long)]
        order: Option<u8>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Convergence of u_n to the explicit solution over h schedules.
    Converge {
        #[command(flatten)]
        common: Common,
        /// rule:C pairs, e.g. two-cube-root:20,log-sqrt:30
        #[arg(long)]
        rules: Option<String>,
        #[arg(long)]
        ns: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Pointwise consistency of the graph operator.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        graph: GraphArgs,
        /// one, cos1 = cos(2 pi x1), cos2 = cos(4 pi x1)
        #[arg(long)]
        phi: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Distance between PageRank and teleportation across alpha.
    AlphaSweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        /// lo:hi:count (geometric) or a comma separated list
        #[arg(long)]
        alphas: Option<String>,
    },
    /// In-class data depth from localized PageRank.
    Depth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        top: Option<usize>,
        /// Write every node of every class instead of the top members.
        #[arg(long)]
        full: bool,
        /// Only these labels (comma separated).
        #[arg(long)]
        classes: Option<String>,
        /// Also write the raw vectors of the top members.
        #[arg(long)]
        vectors_out: Option<PathBuf>,
    },
    /// Characteristic curves of the first-order equation.
    Characteristics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geo: GeometryArgs,
        #[arg(long)]
        x0: Option<String>,
        #[arg(long)]
        z0: Option<f64>,
        #[arg(long)]
        p0: Option<String>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

impl Common {
    fn flags(&self, f: &mut Flags) {
        f.put("out", &self.out.as_ref().map(|p| p.display().to_string()));
        f.put("seed", &self.seed);
    }
}

impl GeometryArgs {
    fn flags(&self, f: &mut Flags) {
        f.put("dim", &self.dim)
            .put("density", &self.density)
            .put("density_amplitude", &self.density_amplitude)
            .put("drift", &self.drift)
            .put("drift_amplitude", &self.drift_amplitude)
            .put("drift_vector", &self.drift_vector)
            .put("kernel", &self.kernel);
    }
}

impl GraphArgs {
    fn flags(&self, f: &mut Flags) {
        f.put("n", &self.n).put("h", &self.h).put("eps", &self.eps);
        self.geo.flags(f);
    }
}

impl DataArgs {
    fn flags(&self, f: &mut Flags) {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        f.put("data", &path(&self.data))
            .switch("labels", self.labels)
            .put("idx_images", &path(&self.idx_images))
            .put("idx_labels", &path(&self.idx_labels))
            .put("limit", &self.limit)
            .put("synthetic_n", &self.synthetic_n)
            .put("synthetic_dim", &self.synthetic_dim);
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    let mut f = Flags::default();
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let (name, common) = match &command {
        Command::Generate { common, graph, points_out } => {
            graph.flags(&mut f);
            f.put("points_out", &path(points_out));
            ("generate", common)
        }
        Command::Pagerank {
            common,
            graph,
            data,
            k,
            alpha,
            teleport,
            tol,
        } => {
            graph.flags(&mut f);
            data.flags(&mut f);
            f.put("k", k).put("alpha", alpha).put("teleport", teleport).put("tol", tol);
            ("pagerank", common)
        }
        Command::Evolve {
            common,
            graph,
            alpha,
            grid,
            steps,
            initial,
            teleport,
            dt,
        } => {
            graph.flags(&mut f);
            f.put("alpha", alpha)
                .put("grid", grid)
                .put("steps", steps)
                .put("initial", initial)
                .put("teleport", teleport)
                .put("dt", dt);
            ("evolve", common)
        }
        Command::SolvePde {
            common,
            geo,
            alpha,
            h,
            eps,
            gamma_eps,
            gamma_h,
            grid,
            order,
            delta,
            source,
            tol,
        } => {
            geo.flags(&mut f);
            f.put("alpha", alpha)
                .put("h", h)
                .put("eps", eps)
                .put("gamma_eps", gamma_eps)
                .put("gamma_h", gamma_h)
                .put("grid", grid)
                .put("order", order)
                .put("delta", delta)
                .put("source", source)
                .put("tol", tol);
            ("solve-pde", common)
        }
        Command::Converge { common, rules, ns, trials } => {
            f.put("rules", rules).put("ns", ns).put("trials", trials);
            ("converge", common)
        }
        Command::Consistency { common, graph, phi, reps } => {
            graph.flags(&mut f);
            f.put("phi", phi).put("reps", reps);
            ("consistency", common)
        }
        Command::AlphaSweep { common, data, k, alphas } => {
            data.flags(&mut f);
            f.put("k", k).put("alphas", alphas);
            ("alpha-sweep", common)
        }
        Command::Depth {
            common,
            data,
            k,
            alpha,
            top,
            full,
            classes,
            vectors_out,
        } => {
            data.flags(&mut f);
            f.put("k", k)
                .put("alpha", alpha)
                .put("top", top)
                .switch("full", *full)
                .put("classes", classes)
                .put("vectors_out", &path(vectors_out));
            ("depth", common)
        }
        Command::Characteristics {
            common,
            geo,
            x0,
            z0,
            p0,
            t,
            dt,
        } => {
            geo.flags(&mut f);
            f.put("x0", x0).put("z0", z0).put("p0", p0).put("t", t).put("dt", dt);
            ("characteristics", common)
        }
    };
    common.flags(&mut f);
    commands::run(name, common.preset.as_deref(), common.config.as_deref(), f.0)
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}
