//! Measurements on a (steady) single-particle density matrix: bond currents,
//! cut currents, site populations, population gradient and edge imbalance.

use serde::Serialize;

use crate::lattice::least_squares_slope;
use crate::leads::CompositeSystem;
use crate::master_eq::Spdm;
use crate::{Error, Result};

/// Particle current from index `n` to index `m`, `2 Im(H_mn rho_nm)`.
///
/// This is the contribution of the bond to `d rho_mm / dt`; with `n` left of
/// `m` a positive value is flow toward the right lead.
pub fn bond_current(rho: &Spdm, sys: &CompositeSystem, m: usize, n: usize) -> Result<f64> {
    let dim = sys.dim();
    for idx in [m, n] {
        if idx >= dim || idx >= rho.dim() {
            return Err(Error::IndexOutOfRange { index: idx, len: dim.min(rho.dim()) });
        }
    }
    Ok(2.0 * (sys.hamiltonian[(m, n)] * rho.matrix[(n, m)]).im)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurrentProfile {
    pub cut_labels: Vec<String>,
    pub currents: Vec<f64>,
    /// Mean over all cuts, reported as the stationary current.
    pub mean: f64,
    pub max_deviation: f64,
}

impl CurrentProfile {
    /// `max_deviation / |mean|`, or the absolute deviation when the mean
    /// vanishes.
    pub fn relative_spread(&self) -> f64 {
        if self.mean.abs() > 1e-12 {
            self.max_deviation / self.mean.abs()
        } else {
            self.max_deviation
        }
    }
}

/// Current through the left contact, every device cut, and the right contact.
pub fn current_profile(rho: &Spdm, sys: &CompositeSystem) -> Result<CurrentProfile> {
    let lat = &sys.lattice;
    let labels = lat.site_labels();
    let [l0, r0] = sys.contacts;
    let mut cut_labels = Vec::new();
    let mut currents = Vec::new();

    cut_labels.push(format!("lead_L>{}", labels[lat.left_terminal()]));
    currents.push(bond_current(rho, sys, lat.left_terminal(), l0)?);
    for cut in lat.cuts() {
        let mut total = 0.0;
        let mut names = Vec::with_capacity(cut.bonds.len());
        for &(from, to) in &cut.bonds {
            total += bond_current(rho, sys, to, from)?;
            names.push(format!("{}>{}", labels[from], labels[to]));
        }
        cut_labels.push(names.join("+"));
        currents.push(total);
    }
    cut_labels.push(format!("{}>lead_R", labels[lat.right_terminal()]));
    currents.push(bond_current(rho, sys, r0, lat.right_terminal())?);

    let mean = currents.iter().sum::<f64>() / currents.len() as f64;
    let max_deviation = currents.iter().map(|j| (j - mean).abs()).fold(0.0, f64::max);
    Ok(CurrentProfile { cut_labels, currents, mean, max_deviation })
}

/// Net inflow into index `m` from all its bonds.
pub fn net_inflow(rho: &Spdm, sys: &CompositeSystem, m: usize) -> Result<f64> {
    let mut total = 0.0;
    for n in 0..sys.dim() {
        if n != m && sys.hamiltonian[(m, n)].norm() > 0.0 {
            total += bond_current(rho, sys, m, n)?;
        }
    }
    Ok(total)
}

/// Lattice occupations `rho_ll`.
pub fn site_populations(rho: &Spdm, sys: &CompositeSystem) -> Vec<f64> {
    sys.layout.lattice_range().map(|i| rho.matrix[(i, i)].re).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportRegime {
    WeaklyDiffusive,
    StronglyDiffusive,
}

#[derive(Debug, Clone, Copy)]
pub struct GradientOptions {
    /// Fraction of the lattice, centred, used for the fit.
    pub interior_fraction: f64,
    /// `|slope| * L` at or above this labels the row strongly diffusive.
    pub strong_threshold: f64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions { interior_fraction: 0.6, strong_threshold: 0.05 }
    }
}

/// Least-squares slope of population against site index over the central
/// `fit_window` fraction of the lattice.
pub fn population_gradient(populations: &[f64], fit_window: f64) -> Result<f64> {
    if !(fit_window > 0.0 && fit_window <= 1.0) {
        return Err(Error::param("fit_window", format!("must lie in (0, 1], got {fit_window}")));
    }
    let n = populations.len();
    let width = ((n as f64) * fit_window).round() as usize;
    if width < 4 {
        return Err(Error::param("fit_window", format!("window of {width} sites is too small (need 4)")));
    }
    let start = (n - width) / 2;
    let xs: Vec<f64> = (start..start + width).map(|i| i as f64).collect();
    Ok(least_squares_slope(&xs, &populations[start..start + width]))
}

/// Regime label for a gradient; a heuristic for output rows only.
pub fn classify_regime(slope: f64, n_sites: usize, opts: &GradientOptions) -> TransportRegime {
    if slope.abs() * n_sites as f64 >= opts.strong_threshold {
        TransportRegime::StronglyDiffusive
    } else {
        TransportRegime::WeaklyDiffusive
    }
}

/// Mean of the first `k` populations minus mean of the last `k`.
pub fn edge_imbalance(populations: &[f64], k: usize) -> Result<f64> {
    let n = populations.len();
    if k == 0 || 2 * k > n {
        return Err(Error::param("K", format!("need 1 <= K <= L/2, got K={k} for L={n}")));
    }
    let head = populations[..k].iter().sum::<f64>() / k as f64;
    let tail = populations[n - k..].iter().sum::<f64>() / k as f64;
    Ok(head - tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_ssh, Lattice};
    use crate::leads::{assemble_composite, RingLead};
    use crate::master_eq::{apply_liouvillian, solve_steady_state, SolverConfig};
    use crate::{CMatrix, C64};
    use approx::assert_abs_diff_eq;

    fn two_site() -> (CompositeSystem, Spdm) {
        let h = CMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(-0.5, 0.0), C64::new(-0.5, 0.0), C64::new(0.0, 0.0)]);
        let lat = Lattice::custom(h, None, 0.0).unwrap();
        let lead = RingLead::new(4, 1.0, 0.0, 1.0, 0.1).unwrap();
        let sys = assemble_composite(&lat, &lead, &lead, 0.0).unwrap();
        (sys.clone(), Spdm::zeros(&sys))
    }

    #[test]
    fn two_site_sign_matches_continuity() {
        let (sys, mut rho) = two_site();
        let c = 0.3;
        rho.matrix[(0, 1)] = C64::new(0.0, c);
        rho.matrix[(1, 0)] = C64::new(0.0, -c);
        // flow from site 1 to site 2 (indices 0 -> 1)
        let j12 = bond_current(&rho, &sys, 1, 0).unwrap();
        assert_abs_diff_eq!(j12, -c, epsilon = 1e-15);
        let d = apply_liouvillian(&sys, &rho.matrix, 0.0).unwrap();
        assert_abs_diff_eq!(d[(0, 0)].re, -j12, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)].re, j12, epsilon = 1e-15);
    }

    #[test]
    fn real_density_matrix_carries_no_current() {
        let (sys, mut rho) = two_site();
        rho.matrix[(0, 1)] = C64::new(0.2, 0.0);
        rho.matrix[(1, 0)] = C64::new(0.2, 0.0);
        assert_eq!(bond_current(&rho, &sys, 1, 0).unwrap(), 0.0);
        assert!(bond_current(&rho, &sys, 99, 0).is_err());
    }

    #[test]
    fn decoupled_steady_state_has_no_contact_current() {
        let lat = build_ssh(4, 1.0, 0.5, 0.0).unwrap();
        let l = RingLead::new(8, 1.0, 0.3, 5.0, 0.2).unwrap();
        let r = RingLead::new(8, 1.0, -0.3, 5.0, 0.2).unwrap();
        let sys = assemble_composite(&lat, &l, &r, 0.0).unwrap();
        let (rho, _) = solve_steady_state(&sys, 0.1, &SolverConfig::default()).unwrap();
        let p = current_profile(&rho, &sys).unwrap();
        assert_eq!(p.currents[0], 0.0);
        assert_eq!(*p.currents.last().unwrap(), 0.0);
        assert!(site_populations(&rho, &sys).iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn gradient_of_simple_profiles() {
        let flat = vec![0.4; 20];
        assert_abs_diff_eq!(population_gradient(&flat, 0.6).unwrap(), 0.0, epsilon = 1e-15);
        let n = 30;
        let ramp: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect();
        assert_abs_diff_eq!(population_gradient(&ramp, 0.6).unwrap(), -1.0 / (n - 1) as f64, epsilon = 1e-14);
        assert!(population_gradient(&ramp[..5], 0.6).is_err());
        let opts = GradientOptions::default();
        assert_eq!(classify_regime(-1.0 / 29.0, 30, &opts), TransportRegime::StronglyDiffusive);
        assert_eq!(classify_regime(1e-5, 30, &opts), TransportRegime::WeaklyDiffusive);
    }

    #[test]
    fn imbalance_basics() {
        let sym = vec![0.9, 0.5, 0.5, 0.9];
        assert_eq!(edge_imbalance(&sym, 1).unwrap(), 0.0);
        let p = vec![1.0, 0.5, 0.5, 0.0];
        assert_abs_diff_eq!(edge_imbalance(&p, 1).unwrap(), 1.0);
        assert!(edge_imbalance(&p, 3).is_err());
        assert!(edge_imbalance(&p, 0).is_err());
    }
}
