use proptest::prelude::*;
use rand::Rng;

use prpde_core::continuum::{solve_pde_1st, GridField, PdeCoeffs};
use prpde_core::experiments::fit_power_law;
use prpde_core::graph::build_knn_graph_brute;
use prpde_core::io::{encode_idx, fmt_f64, parse_idx, parse_vectors_csv, IdxData, IdxTensor};
use prpde_core::rng::stream_rng;
use prpde_core::*;

fn cloud(n: usize, seed: u64) -> PointCloud {
    sample_density(&DensitySpec::cosine_bump(2, 0.3).unwrap(), n, seed).unwrap()
}

fn geometric(n: usize, h: f64, eps: f64, b: [f64; 2], seed: u64) -> DirectedGeometricGraph {
    let drift = DriftSpec::constant(b.to_vec());
    build_rdgg(&cloud(n, seed), &KernelSpec::indicator(2), &drift, h, eps).unwrap()
}

fn positive_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 1);
    (0..n).map(|_| rng.gen_range(0.1..2.0)).collect()
}

fn edges(g: &DirectedGeometricGraph) -> Vec<(usize, usize, f64)> {
    let mut e: Vec<_> = g.edges().collect();
    e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pagerank_conserves_mass_and_stays_nonnegative(
        n in 30usize..150,
        h in 0.1f64..0.2,
        eps in 0.0f64..0.05,
        bx in -1.0f64..1.0,
        alpha in 0.05f64..1.0,
        seed in 0u64..1000,
    ) {
        let g = geometric(n, h, eps, [bx, 0.5], seed);
        let v = positive_vec(n, seed);
        let res = solve_pagerank(&g, &PageRankConfig::new(alpha, v.clone())).unwrap();
        let (sr, sv): (f64, f64) = (res.r.iter().sum(), v.iter().sum());
        prop_assert!((sr - sv).abs() <= 1e-10 * sv);
        prop_assert!(res.r.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn alpha_one_returns_teleportation(n in 20usize..120, h in 0.1f64..0.2, seed in 0u64..1000) {
        let g = geometric(n, h, 0.0, [0.0, 0.0], seed);
        let v = positive_vec(n, seed);
        let res = solve_pagerank(&g, &PageRankConfig::new(1.0, v.clone())).unwrap();
        prop_assert_eq!(&res.r, &v);
        let c = g.normalization();
        for i in 0..n {
            let want = c * v[i] / g.degrees()[i];
            prop_assert!((res.u[i] - want).abs() <= 1e-14 * want.abs());
        }
    }

    #[test]
    fn pagerank_is_monotone_and_linear_in_teleportation(
        n in 30usize..120,
        alpha in 0.05f64..0.9,
        scale in 0.1f64..10.0,
        seed in 0u64..1000,
    ) {
        let g = geometric(n, 0.15, 0.01, [1.0, 0.0], seed);
        let v = positive_vec(n, seed);
        let w: Vec<f64> = v.iter().enumerate().map(|(i, x)| x + (i % 3) as f64 * 0.1).collect();
        let tol = 1e-14;
        let rv = solve_pagerank(&g, &PageRankConfig::new(alpha, v.clone()).with_tol(tol)).unwrap();
        let rw = solve_pagerank(&g, &PageRankConfig::new(alpha, w).with_tol(tol)).unwrap();
        for (a, b) in rv.r.iter().zip(&rw.r) {
            prop_assert!(*a <= b + 1e-12);
        }
        let scaled: Vec<f64> = v.iter().map(|x| scale * x).collect();
        let rs = solve_pagerank(&g, &PageRankConfig::new(alpha, scaled).with_tol(tol * scale)).unwrap();
        for (a, b) in rv.r.iter().zip(&rs.r) {
            prop_assert!((scale * a - b).abs() <= 1e-10 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn cell_list_rdgg_matches_pairwise_weights(
        n in 10usize..120,
        h in 0.05f64..0.2,
        eps in 0.0f64..0.04,
        bx in -1.0f64..1.0,
        by in -1.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let pts = cloud(n, seed);
        let kernel = KernelSpec::smooth_bump(2);
        let drift = DriftSpec::constant(vec![bx, by]);
        let g = build_rdgg(&pts, &kernel, &drift, h, eps).unwrap();
        let mut brute = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = directed_weight(&kernel, &drift, pts.point(i), pts.point(j), h, eps).unwrap();
                if w > 0.0 {
                    brute.push((i, j, w));
                }
            }
        }
        prop_assert_eq!(edges(&g), brute);
    }

    #[test]
    fn knn_cell_search_matches_brute_force(
        dim in 1usize..4,
        n in 12usize..150,
        k in 1usize..8,
        seed in 0u64..1000,
    ) {
        let mut rng = stream_rng(seed, 2);
        let vals: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let data = VectorSet::new(dim, vals).unwrap();
        let fast = build_knn_graph(&data, k).unwrap();
        let slow = build_knn_graph_brute(&data, k).unwrap();
        prop_assert_eq!(edges(&fast), edges(&slow));
    }

    #[test]
    fn first_order_solve_conserves_weighted_mass(
        amp in 0.0f64..0.4,
        phase in 0.0f64..1.0,
        bx in -1.0f64..1.0,
        by in -1.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let n = 16;
        let tau = 2.0 * std::f64::consts::PI;
        let rho = GridField::from_fn(2, n, |x| 1.0 + amp * (tau * (x[0] + x[1] + phase)).cos()).unwrap();
        let b = vec![GridField::constant(2, n, bx).unwrap(), GridField::constant(2, n, by).unwrap()];
        let mut rng = stream_rng(seed, 3);
        let v = GridField::new(2, n, (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let probe = PdeCoeffs::new(rho.clone(), b.clone(), v.clone(), 0.0, 0.0, 0.25).unwrap();
        let ge = 0.5 / (probe.eta() + 1.0);
        let c = PdeCoeffs::new(rho.clone(), b, v.clone(), ge, 0.0, 0.25).unwrap();
        let sol = solve_pde_1st(&c, Some(0.05), 1e-12).unwrap();
        let lhs: f64 = sol.u.values().iter().zip(rho.values()).map(|(u, r)| r * r * u).sum();
        let rhs: f64 = v.values().iter().zip(rho.values()).map(|(v, r)| r * v).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1.0));
    }

    #[test]
    fn vectors_survive_a_csv_round_trip(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20),
        labels in prop::collection::vec(-5i64..5, 20),
    ) {
        let mut text = String::new();
        for (r, l) in rows.iter().zip(&labels) {
            let cells: Vec<String> = r.iter().map(|&x| fmt_f64(x)).collect();
            text.push_str(&format!("{},{l}\n", cells.join(",")));
        }
        let (data, got) = parse_vectors_csv(text.as_bytes(), true).unwrap();
        prop_assert_eq!(data.len(), rows.len());
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(data.row(i), r.as_slice());
        }
        prop_assert_eq!(got.unwrap(), labels[..rows.len()].to_vec());
    }

    #[test]
    fn idx_encoding_round_trips(
        d0 in 1usize..6,
        d1 in 1usize..6,
        bytes in prop::collection::vec(any::<u8>(), 36),
    ) {
        let len = d0 * d1;
        let t = IdxTensor { dims: vec![d0, d1], data: IdxData::U8(bytes[..len].to_vec()) };
        let back = parse_idx(&encode_idx(&t)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn power_law_fit_recovers_exact_laws(p in -3.0f64..3.0, a in 0.01f64..100.0) {
        let xs: Vec<f64> = (1..8).map(|i| i as f64 * 0.37).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a * x.powf(p)).collect();
        let fit = fit_power_law(&xs, &ys).unwrap();
        prop_assert!((fit.exponent - p).abs() < 1e-10);
        prop_assert!((fit.prefactor / a - 1.0).abs() < 1e-10);
    }
}

#[test]
fn constants_are_in_the_kernel_of_the_matrix_free_operator() {
    use prpde_core::experiments::{consistency_check, ConsistencySetup};
    let density = DensitySpec::uniform(2);
    let drift = DriftSpec::zero(2);
    let kernel = KernelSpec::indicator(2);
    let pts = sample_density(&density, 100_000, 3).unwrap();
    let setup = ConsistencySetup { density: &density, drift: &drift, kernel: &kernel, h: 0.05, eps: 0.0 };
    let one = TrigPoly::constant(2, 1.0);
    let stats = consistency_check(&pts, &setup, &[&one]).unwrap();
    assert!(stats[0].max_abs < 1e-12);
}

#[test]
fn mean_degree_scales_with_n_h_squared() {
    let (n, h) = (20_000, 0.05);
    let pts = sample_density(&DensitySpec::uniform(2), n, 4).unwrap();
    let g = build_rdgg(&pts, &KernelSpec::indicator(2), &DriftSpec::zero(2), h, 0.0).unwrap();
    let mean = g.degrees().iter().sum::<f64>() / n as f64;
    let scaled = mean / (n as f64 * h * h);
    assert!((0.9..=1.1).contains(&scaled), "mean degree / (n h^2) = {scaled}");
}
