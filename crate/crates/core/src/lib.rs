//! Directed geometric graphs on the torus, PageRank on them, and the
//! drift-diffusion equations describing their large-sample limit.

pub mod continuum;
pub mod depth;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod kernel;
pub mod pagerank;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
pub use fields::{ScalarField, TrigPoly, TrigVectorField, VectorField};
pub use geometry::{sample_density, torus_displacement, torus_distance, wrap, DensitySpec, PointCloud, TorusPoint};
pub use graph::{build_knn_graph, build_rdgg, degrees, DirectedGeometricGraph, GraphParams, VectorSet};
pub use kernel::{directed_weight, Anisotropy, DriftSpec, KernelSpec, Profile};
pub use pagerank::{apply_l, evolve_surfer, localized_pagerank, solve_pagerank, PageRankConfig, RankResult};
pub use continuum::{continuum_operator_2nd, integrate_characteristics, solve_pde_1st, solve_pde_2nd, solve_pde_time, GridField, PdeCoeffs, PdeSolution};
pub use depth::{depth_ranking, depth_ranking_for, ClassDepth, DepthResult};
pub use io::{read_idx, read_vectors_csv, IdxTensor, Sidecar};
pub use experiments::{
    alpha_sweep, consistency_check, convergence_study, evolution_study, fit_power_law, schedule, AlphaSweepReport,
    ConvergenceReport, EvolutionReport, HRule, PowerFit,
};
