mod common;

use std::sync::OnceLock;

use romschwarz::fem::{omega2_solve_count, trace_dot, InnerProductKind, NormKind};
use romschwarz::reduced::{estimate_trace_error, run_reduced_schwarz, ExactTauOracle, ReducedSetup, RomTraceMap, TraceMap};
use romschwarz::rom::{
    build_enrichment_dataset, coefficient_bounds, collect_snapshots, compute_bases, load_rom, rom_from_str, rom_to_string,
    run_offline, save_rom, snapshot_rows, EnrichmentResponses, OfflineOutput, RowSource,
};
use romschwarz::schwarz::{FullOrderModel, InitRule, SchwarzOptions};
use romschwarz::Error;

fn tiny() -> &'static OfflineOutput {
    static OUT: OnceLock<OfflineOutput> = OnceLock::new();
    OUT.get_or_init(|| {
        let cfg = common::tiny_config();
        run_offline(&cfg.problem().unwrap(), &cfg.offline_settings()).unwrap()
    })
}

fn sine_traces(len: usize) -> (Vec<f64>, Vec<f64>) {
    let s: Vec<f64> = (0..len).map(|k| (k as f64 / (len - 1) as f64 * std::f64::consts::PI).sin()).collect();
    let t = s.iter().map(|v| 0.4 * v).collect();
    (s, t)
}

#[test]
fn offline_dataset_has_snapshot_and_grid_rows() {
    let out = tiny();
    let cfg = common::tiny_config();
    let rom = &out.artifact;
    assert!(rom.ranks().iter().all(|&r| r >= 1));
    assert_eq!(rom.geometry.interface_nodes, [cfg.mesh.ny + 1; 4]);
    let grid: usize = rom.training.grid_counts.iter().product();
    assert_eq!(out.dataset.count(RowSource::Snapshot), out.snapshots.len());
    assert_eq!(out.dataset.count(RowSource::Enrichment), grid * cfg.parameters.tilde_count);
    assert_eq!(out.dataset.len(), rom.training.snapshot_rows + rom.training.enrichment_rows);
    let l_in = rom.ranks()[0] + rom.ranks()[1];
    assert!(out.dataset.inputs.iter().all(|r| r.len() == l_in + 1));
    // bounds contain every snapshot-derived row
    for (row, src) in out.dataset.inputs.iter().zip(&out.dataset.source) {
        if *src == RowSource::Snapshot {
            for (v, b) in row.iter().zip(&rom.training.bounds) {
                assert!(*v >= b[0] && *v <= b[1]);
            }
        }
    }
}

#[test]
fn snapshots_span_every_sweep_of_every_training_run() {
    let out = tiny();
    let n = out.snapshots.interfaces[0].len();
    assert!(out.snapshots.interfaces.iter().all(|s| s.len() == n));
    for p in &out.snapshots.d_train {
        let sweeps: Vec<usize> = out.snapshots.interfaces[0].iter().filter(|s| s.parameter == *p).map(|s| s.sweep).collect();
        assert!(!sweeps.is_empty());
        assert_eq!(sweeps, (1..=sweeps.len()).collect::<Vec<_>>());
    }
}

#[test]
fn single_parameter_one_sweep_gives_one_snapshot_per_interface() {
    let cfg = common::tiny_config();
    let opts = SchwarzOptions { tol: 1e6, ..Default::default() };
    let set = collect_snapshots(&cfg.problem().unwrap(), &[9.0], &opts, 1).unwrap();
    assert!(set.interfaces.iter().all(|s| s.len() == 1));
}

#[test]
fn truncated_energy_stays_below_sigma() {
    let out = tiny();
    for b in &out.artifact.bases {
        let snaps = out.snapshots.values(b.interface);
        let mut residual = 0.0;
        let mut total = 0.0;
        for s in &snaps {
            let r = b.reconstruct(&b.project(s).unwrap()).unwrap();
            let d: Vec<f64> = s.iter().zip(&r).map(|(a, c)| a - c).collect();
            residual += b.inner(&d, &d).unwrap();
            total += b.inner(s, s).unwrap();
        }
        assert!(residual / total <= b.sigma * (1.0 + 1e-6) + 1e-13, "{}: {}", b.interface, residual / total);
    }
}

#[test]
fn artifact_round_trip_is_bit_identical() {
    let rom = &tiny().artifact;
    let text = rom_to_string(rom).unwrap();
    let back = rom_from_str(&text).unwrap();
    assert_eq!(&back, rom);
    assert_eq!(rom_to_string(&back).unwrap(), text);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rom.json");
    save_rom(rom, &path).unwrap();
    let loaded = load_rom(&path).unwrap();
    assert_eq!(loaded.bases[0].kind, InnerProductKind::H1d);
    let (a, b) = sine_traces(rom.geometry.interface_nodes[0]);
    assert_eq!(loaded.evaluate(&a, &b, 9.0).unwrap(), rom.evaluate(&a, &b, 9.0).unwrap());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("rom.json")]);
}

#[test]
fn truncated_artifact_is_a_parse_error() {
    let text = rom_to_string(&tiny().artifact).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.json");
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_rom(&path), Err(Error::Parse(_))));
}

#[test]
fn incompatible_problem_is_rejected() {
    let rom = &tiny().artifact;
    let cfg = common::tiny_config();
    let mut p = cfg.problem().unwrap();
    assert!(rom.check_compatible(&p).is_ok());
    p.physics.beta_y = 0.3;
    assert!(matches!(rom.check_compatible(&p), Err(Error::Compatibility(_))));
    let wide = cfg.problem_with_cuts(cfg.studies.overlap_cuts).unwrap();
    assert!(matches!(rom.check_compatible(&wide), Err(Error::Compatibility(_))));
    let (a, _) = sine_traces(rom.geometry.interface_nodes[0] + 1);
    assert!(rom.evaluate(&a, &a, 9.0).is_err());
}

#[test]
fn out_of_range_parameter_is_flagged() {
    let rom = &tiny().artifact;
    let (a, b) = sine_traces(rom.geometry.interface_nodes[0]);
    assert!(!rom.is_extrapolated(5.0) && !rom.is_extrapolated(14.0));
    assert!(rom.is_extrapolated(20.0) && rom.is_extrapolated(4.99));
    let (t1, t3) = rom.evaluate(&a, &b, 20.0).unwrap();
    assert!(t1.iter().chain(&t3).all(|v| v.is_finite()));
}

#[test]
fn enrichment_is_bit_identical_when_regenerated() {
    let out = tiny();
    let cfg = common::tiny_config();
    let problem = cfg.problem().unwrap();
    let rom = &out.artifact;
    let d_tilde = &rom.training.d_tilde;
    let a = build_enrichment_dataset(&problem, &rom.bases, &rom.training.bounds, &rom.training.grid_counts, d_tilde, 1).unwrap();
    let b = build_enrichment_dataset(&problem, &rom.bases, &rom.training.bounds, &rom.training.grid_counts, d_tilde, 2).unwrap();
    assert_eq!(a, b);
    let stored: Vec<_> = out.dataset.inputs.iter().zip(&out.dataset.outputs).zip(&out.dataset.source)
        .filter(|(_, s)| **s == RowSource::Enrichment)
        .map(|((i, o), _)| (i.clone(), o.clone()))
        .collect();
    let regenerated: Vec<_> = a.inputs.into_iter().zip(a.outputs).collect();
    assert_eq!(stored, regenerated);
}

#[test]
fn centred_single_point_grid_gives_one_row() {
    let out = tiny();
    let cfg = common::tiny_config();
    let rom = &out.artifact;
    let counts = vec![1; rom.training.bounds.len()];
    let ds = build_enrichment_dataset(&cfg.problem().unwrap(), &rom.bases, &rom.training.bounds, &counts, &[9.0], 1).unwrap();
    assert_eq!(ds.len(), 1);
    for (v, b) in ds.inputs[0].iter().zip(&rom.training.bounds) {
        assert_eq!(*v, 0.5 * (b[0] + b[1]));
    }
    assert_eq!(*ds.inputs[0].last().unwrap(), 9.0);
}

#[test]
fn enrichment_reproduces_a_snapshot_at_its_own_parameter() {
    let cfg = common::tiny_config();
    let problem = cfg.problem().unwrap();
    let p = 8.2;
    let opts = SchwarzOptions { tol: 1e-8, ..Default::default() };
    let set = collect_snapshots(&problem, &[p], &opts, 1).unwrap();
    let bases = compute_bases(&set, InnerProductKind::H1d, 1e-14).unwrap();
    let rows = snapshot_rows(&set, &bases).unwrap();
    let resp = EnrichmentResponses::compute(&problem, &bases, p).unwrap();
    let l_in = bases[0].dim() + bases[1].dim();
    for (input, output) in rows.inputs.iter().zip(&rows.outputs) {
        let got = resp.combine(&input[..l_in]).unwrap();
        let scale = output.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (g, e) in got.iter().zip(output) {
            assert!((g - e).abs() <= 1e-6 * scale, "{g} vs {e}");
        }
    }
}

#[test]
fn oracle_is_linear_without_source() {
    let cfg = common::tiny_config();
    let oracle = ExactTauOracle::new(&cfg.problem().unwrap(), 9.0).unwrap();
    let n = cfg.mesh.ny + 1;
    let zero = vec![0.0; n];
    let (z1, z3) = oracle.map(&zero, &zero).unwrap();
    assert!(z1.iter().chain(&z3).all(|v| *v == 0.0));
    let (t, s) = sine_traces(n);
    let u: Vec<f64> = (0..n).map(|k| (k * (n - 1 - k)) as f64).collect();
    let (a, b) = (1.7, -0.6);
    let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect::<Vec<_>>();
    let lhs = oracle.map(&mix(&t, &u), &mix(&s, &t)).unwrap();
    let r1 = oracle.map(&t, &s).unwrap();
    let r2 = oracle.map(&u, &t).unwrap();
    for (l, (x, y)) in lhs.0.iter().chain(&lhs.1).zip(r1.0.iter().chain(&r1.1).zip(r2.0.iter().chain(&r2.1))) {
        assert!((l - (a * x + b * y)).abs() <= 1e-9 * (1.0 + l.abs()));
    }
}

#[test]
fn oracle_reduced_iteration_matches_full_schwarz() {
    let cfg = common::tiny_config();
    let problem = cfg.problem().unwrap();
    let opts = cfg.online_options();
    for p in [5.09091, 13.9091] {
        let setup = ReducedSetup::new(&problem, p).unwrap();
        let oracle = ExactTauOracle::new(&problem, p).unwrap();
        let red = run_reduced_schwarz(&setup, &oracle, &opts).unwrap();
        assert!(red.summary.converged);
        let full = FullOrderModel::new(&problem, p).unwrap().run(&opts).unwrap();
        assert!(full.converged);
        for (i, (s, j)) in [(&setup.omega1, 0), (&setup.omega3, 2)].into_iter().enumerate() {
            let d = s.norms.distance(&red.report.fields[j], &full.fields[j], NormKind::L2).unwrap();
            let n = s.norms.norm(&full.fields[j], NormKind::L2).unwrap();
            assert!(d / n <= 10.0 * opts.tol, "subdomain {i}: {}", d / n);
        }
    }
}

#[test]
fn reference_start_with_oracle_stops_after_one_sweep() {
    let cfg = common::tiny_config();
    let problem = cfg.problem().unwrap();
    let setup = ReducedSetup::new(&problem, 9.0).unwrap();
    let oracle = ExactTauOracle::new(&problem, 9.0).unwrap();
    let opts = SchwarzOptions { init: InitRule::ScaledReference { factor: 1.0 }, ..cfg.online_options() };
    let r = run_reduced_schwarz(&setup, &oracle, &opts).unwrap();
    assert!(r.summary.converged);
    assert_eq!(r.summary.sweeps, 1);
}

#[test]
fn relative_errors_are_homogeneous() {
    let cfg = common::tiny_config();
    let setup = ReducedSetup::new(&cfg.problem().unwrap(), 9.0).unwrap();
    let [a, b] = setup.relative_errors(&setup.reference[0], &setup.reference[1]).unwrap();
    assert_eq!((a, b), (0.0, 0.0));
    let scale = |v: &[f64]| v.iter().map(|x| 1.01 * x).collect::<Vec<_>>();
    let [a, b] = setup.relative_errors(&scale(&setup.reference[0]), &scale(&setup.reference[1])).unwrap();
    assert!((a - 0.01).abs() < 1e-12 && (b - 0.01).abs() < 1e-12);
}

#[test]
fn reduced_runs_never_solve_on_the_middle_subdomain() {
    let rom = &tiny().artifact;
    let cfg = common::tiny_config();
    let setup = ReducedSetup::new(&cfg.problem().unwrap(), 9.45455).unwrap();
    let before = omega2_solve_count();
    let r = run_reduced_schwarz(&setup, &RomTraceMap { rom, parameter: 9.45455 }, &cfg.online_options()).unwrap();
    assert_eq!(r.omega2_solves, 0);
    assert_eq!(omega2_solve_count(), before);
    assert!(r.report.fields[1].is_empty());
    assert!(!r.summary.extrapolated);
}

#[test]
fn trace_error_estimate_is_reported() {
    let rom = &tiny().artifact;
    let cfg = common::tiny_config();
    let oracle = ExactTauOracle::new(&cfg.problem().unwrap(), 9.0).unwrap();
    let mu = estimate_trace_error(rom, &oracle, 20, 3).unwrap();
    assert!(mu.is_finite() && mu >= 0.0);
    assert_eq!(mu, estimate_trace_error(rom, &oracle, 20, 3).unwrap());
}

#[test]
fn snapshot_rows_reproduce_targets_within_training_loss() {
    let out = tiny();
    let net = &out.artifact.network;
    let norm = &net.normalizers.output;
    let mut sq = 0.0;
    let mut n = 0;
    for ((x, y), s) in out.dataset.inputs.iter().zip(&out.dataset.outputs).zip(&out.dataset.source) {
        if *s != RowSource::Snapshot {
            continue;
        }
        let got = norm.forward(&net.evaluate(x).unwrap());
        let want = norm.forward(y);
        sq += got.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += got.len();
    }
    let rmse = (sq / n as f64).sqrt();
    let loss = net.loss.train.max(net.loss.validation).sqrt();
    assert!(rmse <= 10.0 * loss, "snapshot rmse {rmse:e}, training rmse {loss:e}");
}

#[test]
fn bounds_of_snapshot_rows_are_tight() {
    let out = tiny();
    let rows = snapshot_rows(&out.snapshots, &out.artifact.bases).unwrap();
    assert_eq!(coefficient_bounds(&rows), out.artifact.training.bounds);
    let b = &out.artifact.bases[0];
    let phi = &b.modes[0];
    assert!((trace_dot(phi, phi, b.spacing, b.kind).unwrap() - 1.0).abs() < 1e-10);
}
