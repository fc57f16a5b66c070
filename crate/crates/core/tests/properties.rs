use darkcycle::liouvillian::{build_liouvillian, expectation, steady_state};
use darkcycle::model::{build_model, SystemParams};
use darkcycle::montecarlo::{
    build_rb87_model, run_trajectory, simulate_photon_statistics, JumpModel, Rb87Config, StatsOptions, TrajectoryOptions,
};
use darkcycle::observables::{coherent_amplitude, driven_empty_cavity, g2_correlation};
use darkcycle::scan::{run_scan, Observable, Param, ScanAxis, ScanSpec};
use darkcycle::units::mhz;
use darkcycle::C64;
use proptest::prelude::*;

fn small(g: f64, o12: f64, o23: f64, d12: f64, d23: f64) -> SystemParams {
    SystemParams {
        g: mhz(g),
        omega12: mhz(o12),
        omega23: mhz(o23),
        delta12: mhz(d12),
        delta23: mhz(d23),
        fock_cutoff: 2,
        ..SystemParams::baseline()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steady_state_is_a_density_matrix(
        g in 0.5f64..15.0, o12 in 0.05f64..2.0, o23 in 0.0f64..8.0, d12 in -10.0f64..10.0, d23 in -10.0f64..10.0,
    ) {
        let p = small(g, o12, o23, d12, d23);
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let rho = steady_state(&l).unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-10 && rho.trace().im.abs() < 1e-10);
        prop_assert!(rho.hermiticity_error() < 1e-10);
        prop_assert!(rho.min_eigenvalue() > -1e-8);
        let residual = l.matrix().matvec(&rho.to_vec()).norm() / l.norm();
        prop_assert!(residual < 1e-10, "residual {residual}");
    }

    #[test]
    fn driven_cavity_is_coherent(re in -0.6f64..0.6, im in -0.6f64..0.6, detuning in -2.0f64..2.0, kappa in 0.5f64..3.0) {
        let eps = C64::new(re, im);
        let (l, a) = driven_empty_cavity(eps, detuning, kappa, 14).unwrap();
        let rho = steady_state(&l).unwrap();
        let alpha = coherent_amplitude(eps, detuning, kappa);
        prop_assert!((expectation(&rho, &a).unwrap() - alpha).norm() < 1e-8);
        prop_assert!((expectation(&rho, &(&a.dag() * &a)).unwrap().re - alpha.norm_sqr()).abs() < 1e-8);
        if alpha.norm_sqr() > 1e-3 {
            let tau: Vec<f64> = (0..21).map(|k| 0.25 * k as f64).collect();
            let g2 = g2_correlation(&l, &rho, &a, &tau).unwrap();
            prop_assert!(g2.values.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", g2.values);
        }
    }

    #[test]
    fn scans_are_transposition_invariant(n0 in 1usize..4, n1 in 1usize..4, lo in -8.0f64..0.0, span in 1.0f64..10.0) {
        let base = small(6.0, 0.5, 3.0, 0.0, 0.0);
        let grid = |n: usize| (0..n).map(|k| mhz(lo + span * k as f64)).collect::<Vec<_>>();
        let a0 = ScanAxis { param: Param::Delta12, values: grid(n0) };
        let a1 = ScanAxis { param: Param::Omega23, values: (0..n1).map(|k| mhz(1.0 + 0.5 * span * k as f64)).collect() };
        let spec = ScanSpec::steady(base, vec![a0.clone(), a1.clone()], Observable::PhotonNumber);
        let r = run_scan(&spec).unwrap();
        let swapped = run_scan(&ScanSpec { axes: vec![a1, a0], ..spec.clone() }).unwrap();
        let t = r.transposed().unwrap();
        prop_assert_eq!(t.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), swapped.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let again = run_scan(&spec).unwrap();
        prop_assert_eq!(r.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), again.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn trajectories_replay_from_seed_and_stream(seed in any::<u64>(), stream in 0u64..1000) {
        let jm = JumpModel::from_realization(&build_model(&small(5.0, 2.0, 4.0, 0.0, 0.0)).unwrap()).unwrap();
        let opts = TrajectoryOptions { t_max: 3.0, dt_max: 0.25 };
        let a = run_trajectory(&jm, &opts, seed, stream).unwrap();
        let b = run_trajectory(&jm, &opts, seed, stream).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.jump_events.windows(2).all(|w| w[0].time <= w[1].time));
        prop_assert!(a.jump_events.iter().all(|e| e.time > 0.0 && e.time <= opts.t_max));
        let counted = a.jump_events.iter().filter(|e| jm.channels()[e.channel].counted).count();
        prop_assert_eq!(counted, a.photon_count);
    }
}

#[test]
fn ensemble_does_not_depend_on_thread_count() {
    let model = build_rb87_model(&Rb87Config::new(SystemParams { fock_cutoff: 2, ..SystemParams::fom_preset() }))
        .unwrap()
        .realize()
        .unwrap();
    let opts = StatsOptions::new(64, 8.0, 0.26, 99);
    let many = simulate_photon_statistics(&model, &opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let one = pool.install(|| simulate_photon_statistics(&model, &opts).unwrap());
    assert_eq!(many.records, one.records);
    // NaN fields rule out PartialEq here
    assert_eq!(format!("{:?}", many.stats), format!("{:?}", one.stats));
}

#[test]
fn detected_never_exceeds_produced() {
    let model = build_rb87_model(&Rb87Config::new(SystemParams { fock_cutoff: 2, ..SystemParams::fom_preset() }))
        .unwrap()
        .realize()
        .unwrap();
    let e = simulate_photon_statistics(&model, &StatsOptions::new(200, 10.0, 0.26, 5)).unwrap();
    assert!(e.records.iter().all(|r| r.detected_count <= r.photon_count));
    let total: usize = e.stats.detected_histogram.values().sum();
    assert_eq!(total, e.stats.n_trajectories);
    assert!(e.stats.mean_detected <= e.stats.mean_produced);
}
