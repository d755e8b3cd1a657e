use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use romschwarz::analytic1d::{exact_trace_map_1d, Params1D};
use romschwarz::config::RunConfig;
use romschwarz::fem::{trace_dot, InnerProductKind};
use romschwarz::geometry::{build_pipe_decomposition, build_structured_mesh, PipeGeometry, Rectangle};
use romschwarz::geometry::InterfaceId;
use romschwarz::network::{train_latent_map, Normalizer, TrainSettings};
use romschwarz::pod::compute_pod_basis;
use romschwarz::schwarz::fit_contraction;

fn kind() -> impl Strategy<Value = InnerProductKind> {
    prop_oneof![Just(InnerProductKind::L2d), Just(InnerProductKind::H1d)]
}

fn snapshots() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 4usize..16).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, m), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pod_modes_are_orthonormal_sorted_and_minimal(snaps in snapshots(), kind in kind(), sigma in 1e-6f64..0.5) {
        let h = 5.0 / (snaps[0].len() - 1) as f64;
        let b = compute_pod_basis(&snaps, InterfaceId::In2, h, kind, sigma).unwrap();
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                let v = trace_dot(&b.modes[i], &b.modes[j], h, kind).unwrap();
                let delta = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - delta).abs() < 1e-10);
            }
            let peak = b.modes[i].iter().fold(0.0f64, |p, v| if v.abs() > p.abs() { *v } else { p });
            prop_assert!(peak > 0.0);
        }
        prop_assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let total: f64 = b.eigenvalues.iter().sum();
        let kept: f64 = b.eigenvalues[..b.dim()].iter().sum();
        prop_assert!(kept >= (1.0 - sigma) * total * (1.0 - 1e-12));
        if b.dim() > 1 {
            let fewer: f64 = b.eigenvalues[..b.dim() - 1].iter().sum();
            prop_assert!(fewer < (1.0 - sigma) * total);
        }
    }

    #[test]
    fn projection_is_the_best_approximation(snaps in snapshots(), kind in kind(), seed in any::<u64>()) {
        let m = snaps[0].len();
        let h = 5.0 / (m - 1) as f64;
        let b = compute_pod_basis(&snaps, InterfaceId::Out1, h, kind, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let err = |c: &[f64]| {
            let r = b.reconstruct(c).unwrap();
            let d: Vec<f64> = t.iter().zip(&r).map(|(a, b)| a - b).collect();
            trace_dot(&d, &d, h, kind).unwrap()
        };
        let best = err(&b.project(&t).unwrap());
        for _ in 0..100 {
            let c: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
            prop_assert!(best <= err(&c) + 1e-10);
        }
        // projector identity on the span
        let c: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let back = b.project(&b.reconstruct(&c).unwrap()).unwrap();
        for (x, y) in back.iter().zip(&c) {
            prop_assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn trace_products_are_symmetric_bilinear_and_positive(
        v in prop::collection::vec(-5.0f64..5.0, 6),
        w in prop::collection::vec(-5.0f64..5.0, 6),
        a in -3.0f64..3.0,
        kind in kind(),
    ) {
        let h = 1.0;
        let av: Vec<f64> = v.iter().map(|x| a * x).collect();
        let vw = trace_dot(&v, &w, h, kind).unwrap();
        prop_assert!((vw - trace_dot(&w, &v, h, kind).unwrap()).abs() < 1e-12 * (1.0 + vw.abs()));
        prop_assert!((trace_dot(&av, &w, h, kind).unwrap() - a * vw).abs() < 1e-12 * (1.0 + vw.abs()));
        prop_assert!(trace_dot(&v, &v, h, kind).unwrap() >= 0.0);
    }

    #[test]
    fn ordered_cuts_give_overlapping_layout(l1 in 0.5f64..10.0, d1 in 0.5f64..5.0, g in 0.5f64..10.0, d2 in 0.5f64..5.0) {
        let cuts = [l1, l1 + d1, l1 + d1 + g, l1 + d1 + g + d2];
        let length = cuts[3] + 3.0;
        let d = build_pipe_decomposition(&PipeGeometry::new(5.0, length, cuts).unwrap()).unwrap();
        prop_assert_eq!(d.omega[0].x1, cuts[1]);
        prop_assert_eq!(d.omega[1].x0, cuts[0]);
        prop_assert_eq!(d.omega[1].x1, cuts[3]);
        prop_assert_eq!(d.omega[2].x0, cuts[2]);
        prop_assert!(d.omega[0].x1 < d.omega[2].x0);
        let swapped = [cuts[0], cuts[2], cuts[1], cuts[3]];
        prop_assert!(PipeGeometry::new(5.0, length, swapped).is_err());
    }

    #[test]
    fn structured_meshes_tile_their_rectangle(nx in 1usize..20, ny in 1usize..20, w in 0.5f64..10.0, h in 0.5f64..10.0) {
        let rect = Rectangle::new(1.0, 1.0 + w, 0.0, h);
        let mesh = build_structured_mesh(rect, nx, ny).unwrap();
        prop_assert_eq!(mesh.node_count(), (nx + 1) * (ny + 1));
        prop_assert_eq!(mesh.triangles().len(), 2 * nx * ny);
        let mut area = 0.0;
        for t in 0..mesh.triangles().len() {
            let a = mesh.signed_area(t);
            prop_assert!(a > 0.0);
            area += a;
        }
        prop_assert!((area - w * h).abs() <= 1e-12 * w * h);
    }

    #[test]
    fn one_dimensional_trace_map_is_affine(
        pe in 0.2f64..4.0,
        g1 in -2.0f64..2.0, m1 in -2.0f64..2.0, g2 in -2.0f64..2.0, m2 in -2.0f64..2.0,
        a in -2.0f64..2.0, b in -2.0f64..2.0,
    ) {
        let p = Params1D::for_peclet(pe);
        let cuts = [0.1, 0.3, 0.6, 0.9];
        let lhs = exact_trace_map_1d(a * g1 + b * g2, a * m1 + b * m2, cuts, &p).unwrap();
        let r1 = exact_trace_map_1d(g1, m1, cuts, &p).unwrap();
        let r2 = exact_trace_map_1d(g2, m2, cuts, &p).unwrap();
        prop_assert!((lhs.0 - (a * r1.0 + b * r2.0)).abs() < 1e-12);
        prop_assert!((lhs.1 - (a * r1.1 + b * r2.1)).abs() < 1e-12);
    }

    #[test]
    fn geometric_errors_recover_their_rate(rho in 0.01f64..0.95, e0 in 1e-3f64..1e3, n in 4usize..20) {
        let errors: Vec<f64> = (0..n).map(|k| e0 * rho.powi(k as i32)).collect();
        let c = fit_contraction(&errors, 0.0, 0).unwrap();
        prop_assert!((c.rho_fit - rho).abs() < 1e-12);
    }

    #[test]
    fn normalizers_invert(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..10)) {
        let n = Normalizer::fit(&rows);
        for r in &rows {
            let back = n.inverse(&n.forward(r));
            for (x, y) in back.iter().zip(r) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn config_hash_survives_a_text_round_trip(seed in any::<u32>(), tol in 1e-12f64..1e-6, workers in 1usize..8) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed as u64;
        cfg.online.tol = tol;
        cfg.workers = workers;
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = seed as u64 + 1;
        prop_assert_ne!(other.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_is_reproducible(seed in any::<u64>(), rows in 20usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..rows).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[1] + 0.3, (x[2]).sin()]).collect();
        let s = TrainSettings { hidden: 4, max_epochs: 15, seed, restarts: 2, ..Default::default() };
        let a = train_latent_map(&xs, &ys, &s).unwrap();
        let b = train_latent_map(&xs, &ys, &s).unwrap();
        prop_assert_eq!(a, b);
    }
}
