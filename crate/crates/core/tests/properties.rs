use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use edgesense::experiments::{esaki_tsu, SweepTable};
use edgesense::lattice::{build_rhombic, build_ssh, hermiticity_defect, spectrum};
use edgesense::leads::assemble_composite;
use edgesense::master_eq::{apply_liouvillian, solve_steady_state};
use edgesense::observables::{current_profile, net_inflow, site_populations};
use edgesense::{CMatrix, Lattice, RhombicTermination, RingLead, SolverConfig, C64};
use proptest::prelude::*;

fn rhombic_term() -> impl Strategy<Value = RhombicTermination> {
    prop_oneof![Just(RhombicTermination::Hub), Just(RhombicTermination::Arm)]
}

fn small_lattice() -> impl Strategy<Value = Lattice> {
    prop_oneof![
        (2usize..6, 0.2f64..1.5, 0.1f64..1.5, -1.0f64..1.0)
            .prop_map(|(half, j, jt, d)| build_ssh(2 * half, j, jt, d).unwrap()),
        (2usize..4, 0.5f64..2.0, 0.0f64..(2.0 * PI), -1.0f64..1.0, rhombic_term())
            .prop_map(|(l, j, phi, d, t)| build_rhombic(l, j, phi, d, t).unwrap()),
    ]
}

fn leads(mu: f64, beta: f64, gamma: f64) -> (RingLead, RingLead) {
    (RingLead::new(6, 1.0, mu, beta, gamma).unwrap(), RingLead::new(6, 1.0, -mu, beta, gamma).unwrap())
}

fn random_hermitian_density(n: usize, seed: &[f64]) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |i, j| {
        let k = (i * n + j) % seed.len();
        C64::new(seed[k], seed[(k + 1) % seed.len()])
    });
    let h = &a * a.adjoint();
    let tr = h.trace().re;
    h / C64::new(tr, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lattice_hamiltonian_is_hermitian(lat in small_lattice()) {
        prop_assert!(hermiticity_defect(lat.hamiltonian()) < 1e-12);
    }

    #[test]
    fn ssh_spectrum_is_chiral(half in 2usize..12, j in 0.2f64..1.5, jt in 0.1f64..1.5, d in -1.0f64..1.0) {
        let e = spectrum(&build_ssh(2 * half, j, jt, d).unwrap()).energies;
        let n = e.len();
        for k in 0..n {
            prop_assert!((e[k] - d + (e[n - 1 - k] - d)).abs() < 1e-10);
        }
    }

    #[test]
    fn gauge_leaves_spectrum_unchanged(lat in small_lattice(), seed in prop::collection::vec(0.0f64..(2.0 * PI), 1..8)) {
        let n = lat.n_sites();
        let phases: Vec<f64> = (0..n).map(|i| seed[i % seed.len()]).collect();
        let a = spectrum(&lat).energies;
        let b = spectrum(&lat.gauge_transformed(&phases).unwrap()).energies;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dephasing_preserves_populations(lat in small_lattice(), kappa in 0.0f64..2.0, seed in prop::collection::vec(-1.0f64..1.0, 3..9)) {
        let (l, r) = leads(0.2, 3.0, 0.1);
        let sys = assemble_composite(&lat, &l, &r, 0.3).unwrap();
        let rho = random_hermitian_density(sys.dim(), &seed);
        let with = apply_liouvillian(&sys, &rho, kappa).unwrap();
        let without = apply_liouvillian(&sys, &rho, 0.0).unwrap();
        let d = with - without;
        for i in 0..sys.dim() {
            prop_assert!(d[(i, i)].norm() < 1e-13);
        }
    }

    #[test]
    fn esaki_tsu_peaks_at_sqrt_c(a in 1e-6f64..1e2, c in 1e-6f64..1e2) {
        let kp = c.sqrt();
        let top = esaki_tsu(a, c, kp);
        prop_assert!((top - a / (2.0 * kp)).abs() <= 1e-12 * top);
        for f in [0.5, 0.9, 1.1, 2.0] {
            prop_assert!(esaki_tsu(a, c, kp * f) < top);
        }
    }

    #[test]
    fn csv_round_trip_is_byte_identical(values in prop::collection::vec(-1e3f64..1e3, 2..12)) {
        let n = values.len();
        let axis: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.3).collect();
        let t = SweepTable {
            axis_name: "delta".into(),
            axis_values: axis,
            current: values.clone(),
            residuals: values.iter().map(|v| v.abs() * 1e-12).collect(),
            imbalance: values.iter().map(|v| v / 1e3).collect(),
            gradient: values.iter().map(|v| -v / 1e4).collect(),
            extra_columns: vec![("status".into(), vec![0.0; n])],
            config_fingerprint: "0123456789abcdef".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        let back = SweepTable::read_csv(&p).unwrap();
        prop_assert_eq!(back.to_csv_string().unwrap(), t.to_csv_string().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steady_state_properties(
        lat in small_lattice(),
        mu in 0.05f64..0.8,
        beta in prop_oneof![Just(f64::INFINITY), 0.5f64..20.0],
        gamma in 0.02f64..0.5,
        eps in 0.05f64..0.6,
        kappa in prop_oneof![Just(0.0), 1e-3f64..1.0],
    ) {
        let (l, r) = leads(mu, beta, gamma);
        let sys = assemble_composite(&lat, &l, &r, eps).unwrap();
        let (rho, diag) = solve_steady_state(&sys, kappa, &SolverConfig::default()).unwrap();
        prop_assert!(diag.residual < 1e-8);

        for i in sys.layout.lattice_range() {
            prop_assert!(net_inflow(&rho, &sys, i).unwrap().abs() < 1e-8);
        }
        let p = current_profile(&rho, &sys).unwrap();
        let scale = p.mean.abs().max(1e-8);
        prop_assert!(p.max_deviation <= 1e-6 * scale.max(1.0));
        prop_assert!((p.currents[0] - p.currents[p.currents.len() - 1]).abs() < 1e-8);
        for x in site_populations(&rho, &sys) {
            prop_assert!((-1e-8..=1.0 + 1e-8).contains(&x));
        }
    }

    #[test]
    fn zero_bias_carries_no_current(lat in small_lattice(), mu in -0.5f64..0.5, kappa in prop_oneof![Just(0.0), 1e-3f64..0.5]) {
        let lead = RingLead::new(6, 1.0, mu, 4.0, 0.1).unwrap();
        let sys = assemble_composite(&lat, &lead, &lead, 0.3).unwrap();
        let (rho, _) = solve_steady_state(&sys, kappa, &SolverConfig::default()).unwrap();
        let p = current_profile(&rho, &sys).unwrap();
        for j in p.currents {
            prop_assert!(j.abs() < 1e-8);
        }
    }

    #[test]
    fn gauge_leaves_current_unchanged(lat in small_lattice(), seed in prop::collection::vec(0.0f64..(2.0 * PI), 1..8), kappa in 0.0f64..0.2) {
        let n = lat.n_sites();
        let mut phases: Vec<f64> = (0..n).map(|i| seed[i % seed.len()]).collect();
        phases[lat.left_terminal()] = 0.0;
        phases[lat.right_terminal()] = 0.0;
        let (l, r) = leads(0.3, f64::INFINITY, 0.1);
        let cfg = SolverConfig::default();
        let a = assemble_composite(&lat, &l, &r, 0.3).unwrap();
        let b = assemble_composite(&lat.gauge_transformed(&phases).unwrap(), &l, &r, 0.3).unwrap();
        let ja = current_profile(&solve_steady_state(&a, kappa, &cfg).unwrap().0, &a).unwrap().mean;
        let jb = current_profile(&solve_steady_state(&b, kappa, &cfg).unwrap().0, &b).unwrap().mean;
        assert_abs_diff_eq!(ja, jb, epsilon = 1e-9);
    }
}
