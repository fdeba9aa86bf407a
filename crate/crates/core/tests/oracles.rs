use std::f64::consts::PI;

use edgesense::lattice::{build_rhombic, build_ssh};
use edgesense::leads::assemble_composite;
use edgesense::master_eq::{full_linear_steady_state, propagate, solve_steady_state};
use edgesense::observables::{current_profile, site_populations};
use edgesense::{max_abs, Lattice, RhombicTermination, RingLead, SolverConfig, SolverMethod, Spdm};

fn pair(m: usize, mu_l: f64, mu_r: f64, beta: f64, gamma: f64) -> (RingLead, RingLead) {
    (RingLead::new(m, 1.0, mu_l, beta, gamma).unwrap(), RingLead::new(m, 1.0, mu_r, beta, gamma).unwrap())
}

fn mean_current(lat: &Lattice, l: &RingLead, r: &RingLead, eps: f64, kappa: f64) -> f64 {
    let sys = assemble_composite(lat, l, r, eps).unwrap();
    let (rho, _) = solve_steady_state(&sys, kappa, &SolverConfig::default()).unwrap();
    current_profile(&rho, &sys).unwrap().mean
}

#[test]
fn long_propagation_reaches_full_solution() {
    let lat = build_ssh(4, 1.0, 0.5, 0.1).unwrap();
    let (l, r) = pair(8, 0.4, -0.4, 10.0, 0.3);
    let sys = assemble_composite(&lat, &l, &r, 0.5).unwrap();
    let kappa = 0.05;
    let exact = full_linear_steady_state(&sys, kappa).unwrap();
    let cfg = SolverConfig { method: SolverMethod::TimeMarch, step_tol: 1e-12, ..SolverConfig::default() };
    let rho = propagate(&sys, &Spdm::zeros(&sys), kappa, 2000.0, &cfg).unwrap();
    assert!(max_abs(&(rho.matrix - &exact)) < 1e-8);

    let (sylv, _) = solve_steady_state(&sys, kappa, &SolverConfig::default()).unwrap();
    assert!(max_abs(&(sylv.matrix - exact)) < 1e-8);
}

#[test]
fn infinite_temperature_leads_half_fill_the_lattice() {
    // arm dark states of the diamond chain keep their initial filling without dephasing
    let cases = [
        (build_ssh(6, 1.0, 0.5, 0.3).unwrap(), vec![0.0, 0.1]),
        (build_rhombic(3, 1.0, 2.0, -0.2, RhombicTermination::Hub).unwrap(), vec![0.1]),
    ];
    for (lat, kappas) in cases {
        let (l, r) = pair(8, 0.5, -0.5, 0.0, 0.2);
        let sys = assemble_composite(&lat, &l, &r, 0.4).unwrap();
        for kappa in kappas {
            let (rho, _) = solve_steady_state(&sys, kappa, &SolverConfig::default()).unwrap();
            for p in site_populations(&rho, &sys) {
                assert!((p - 0.5).abs() < 1e-9, "population {p}");
            }
            assert!(current_profile(&rho, &sys).unwrap().mean.abs() < 1e-10);
        }
    }
}

#[test]
fn mirrored_setup_with_reversed_bias_negates_current() {
    let lat = build_ssh(8, 1.0, 0.4, 0.05).unwrap();
    let (l, r) = pair(10, 1.0, -1.0, f64::INFINITY, 0.1);
    let (rl, rr) = pair(10, -1.0, 1.0, f64::INFINITY, 0.1);
    for kappa in [0.0, 0.02] {
        let j = mean_current(&lat, &l, &r, 0.3, kappa);
        let jm = mean_current(&lat.mirrored(), &rl, &rr, 0.3, kappa);
        assert!(j.abs() > 1e-6);
        assert!((j + jm).abs() < 1e-10 * j.abs().max(1.0), "{j} vs {jm}");
    }
}

#[test]
fn caged_rhombic_chain_blocks_coherent_transport() {
    let lat = build_rhombic(6, 1.0, PI, 0.0, RhombicTermination::Hub).unwrap();
    let (l, r) = pair(12, PI / 40.0, -PI / 40.0, f64::INFINITY, 0.05);
    assert!(mean_current(&lat, &l, &r, 0.2, 0.0).abs() < 1e-10);
    assert!(mean_current(&lat, &l, &r, 0.2, 0.01).abs() > 1e-8);
}
