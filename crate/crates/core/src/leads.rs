//! Ring leads and assembly of the total single-particle Hamiltonian.
//!
//! Each lead is a tight-binding ring of `M` sites with hopping `-J_lead/2`,
//! so its quasimomentum states `|k>` have energies `-J_lead cos(2 pi k / M)`.
//! The lead relaxes at rate `gamma` toward the Fermi-Dirac state that is
//! diagonal in `|k>`.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lattice::Lattice;
use crate::{CMatrix, Error, Result, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingLead {
    pub sites: usize,
    pub hopping: f64,
    pub mu: f64,
    /// Inverse temperature; `f64::INFINITY` means zero temperature.
    pub beta: f64,
    pub gamma: f64,
}

impl RingLead {
    pub fn new(sites: usize, hopping: f64, mu: f64, beta: f64, gamma: f64) -> Result<Self> {
        let lead = RingLead { sites, hopping, mu, beta, gamma };
        lead.validate()?;
        Ok(lead)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 4 {
            return Err(Error::param("M", format!("ring needs at least 4 sites, got {}", self.sites)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !self.hopping.is_finite() || !self.mu.is_finite() {
            return Err(Error::param("J_lead", "hopping and mu must be finite"));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::param("beta", format!("must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// `E_k = -J_lead cos(2 pi k / M)` for `k = 0..M`.
    pub fn dispersion(&self) -> Vec<f64> {
        let m = self.sites;
        (0..m)
            .map(|k| {
                // fold onto [0, M/2] so E_k == E_{M-k} bit for bit, and hit the
                // band centre exactly when 4k = M
                let k = k.min(m - k);
                if 4 * k == m {
                    0.0
                } else {
                    -self.hopping * (2.0 * PI * k as f64 / m as f64).cos()
                }
            })
            .collect()
    }

    /// Fermi-Dirac occupations of the quasimomentum states.
    pub fn occupations(&self) -> Vec<f64> {
        self.dispersion().into_iter().map(|e| fermi(self.beta, e - self.mu)).collect()
    }

    /// Ring Hamiltonian in the site basis.
    pub fn hamiltonian(&self) -> CMatrix {
        let m = self.sites;
        let mut h = DMatrix::from_element(m, m, C64::new(0.0, 0.0));
        for x in 0..m {
            let y = (x + 1) % m;
            h[(x, y)] = C64::new(-self.hopping / 2.0, 0.0);
            h[(y, x)] = C64::new(-self.hopping / 2.0, 0.0);
        }
        h
    }

    /// Unitary whose column `k` is `|k>` in the site basis,
    /// `<x|k> = exp(2 pi i k x / M) / sqrt(M)`.
    pub fn momentum_basis(&self) -> CMatrix {
        let m = self.sites;
        let norm = 1.0 / (m as f64).sqrt();
        DMatrix::from_fn(m, m, |x, k| {
            let phase = 2.0 * PI * ((k * x) % m) as f64 / m as f64;
            C64::from_polar(norm, phase)
        })
    }

    /// Thermal single-particle matrix `sum_k n_k |k><k|` in the site basis.
    pub fn thermal_target(&self) -> CMatrix {
        let u = self.momentum_basis();
        let n = self.occupations();
        let m = self.sites;
        let mut scaled = u.clone();
        for k in 0..m {
            scaled.column_mut(k).scale_mut(n[k]);
        }
        let mut target = scaled * u.adjoint();
        for x in 0..m {
            for y in 0..x {
                let avg = (target[(x, y)] + target[(y, x)].conj()) * 0.5;
                target[(x, y)] = avg;
                target[(y, x)] = avg.conj();
            }
            target[(x, x)].im = 0.0;
        }
        target
    }
}

/// Fermi function with an exact zero-temperature limit. At `beta = inf`
/// a level sitting exactly at `mu` is half filled.
pub fn fermi(beta: f64, x: f64) -> f64 {
    if beta.is_infinite() {
        if x < 0.0 {
            1.0
        } else if x > 0.0 {
            0.0
        } else {
            0.5
        }
    } else {
        let y = beta * x;
        if y > 0.0 {
            let e = (-y).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + y.exp())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Lattice,
    LeftLead,
    RightLead,
}

/// Index layout of the composite system: lattice sites first, then the left
/// ring, then the right ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockLayout {
    pub lattice: usize,
    pub left: usize,
    pub right: usize,
}

impl BlockLayout {
    pub fn len(&self) -> usize {
        self.lattice + self.left + self.right
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lattice_range(&self) -> Range<usize> {
        0..self.lattice
    }

    pub fn left_range(&self) -> Range<usize> {
        self.lattice..self.lattice + self.left
    }

    pub fn right_range(&self) -> Range<usize> {
        self.lattice + self.left..self.len()
    }

    pub fn block_of(&self, i: usize) -> Block {
        if i < self.lattice {
            Block::Lattice
        } else if i < self.lattice + self.left {
            Block::LeftLead
        } else {
            Block::RightLead
        }
    }
}

/// Device plus both leads, ready for the master equation.
#[derive(Debug, Clone)]
pub struct CompositeSystem {
    pub hamiltonian: CMatrix,
    pub layout: BlockLayout,
    pub epsilon: f64,
    pub lattice: Lattice,
    pub left: RingLead,
    pub right: RingLead,
    /// Site-to-quasimomentum unitaries of the left and right ring.
    pub lead_basis: [CMatrix; 2],
    /// Thermal target, nonzero only on the two lead diagonal blocks.
    pub target: CMatrix,
    /// Relaxation rate of each index: `gamma` of its lead, 0 on the lattice.
    pub lead_rates: Vec<f64>,
    /// `true` for lattice indices (dephasing acts there).
    pub lattice_mask: Vec<bool>,
    /// Index of the left/right ring site touching the lattice.
    pub contacts: [usize; 2],
}

/// Assemble `H_s + sum_i (H_i + eps H_s,i)`: each lead's ring site 0 is
/// coupled to the terminal lattice site on its side by `-eps/2`.
pub fn assemble_composite(
    lat: &Lattice,
    left: &RingLead,
    right: &RingLead,
    epsilon: f64,
) -> Result<CompositeSystem> {
    left.validate()?;
    right.validate()?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be >= 0, got {epsilon}")));
    }
    let h_lat = lat.hamiltonian();
    let n_lat = lat.n_sites();
    if h_lat.nrows() != n_lat || h_lat.ncols() != n_lat {
        return Err(Error::Dimension("lattice Hamiltonian is not square".into()));
    }
    if lat.left_terminal() >= n_lat || lat.right_terminal() >= n_lat {
        return Err(Error::Dimension("lattice terminal outside the lattice".into()));
    }
    let layout = BlockLayout { lattice: n_lat, left: left.sites, right: right.sites };
    let n = layout.len();

    let mut h = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    h.view_mut((0, 0), (n_lat, n_lat)).copy_from(h_lat);
    let (l0, r0) = (layout.left_range().start, layout.right_range().start);
    h.view_mut((l0, l0), (left.sites, left.sites)).copy_from(&left.hamiltonian());
    h.view_mut((r0, r0), (right.sites, right.sites)).copy_from(&right.hamiltonian());

    let c = C64::new(-epsilon / 2.0, 0.0);
    let (lt, rt) = (lat.left_terminal(), lat.right_terminal());
    h[(l0, lt)] = c;
    h[(lt, l0)] = c;
    h[(r0, rt)] = c;
    h[(rt, r0)] = c;

    let mut target = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    target.view_mut((l0, l0), (left.sites, left.sites)).copy_from(&left.thermal_target());
    target.view_mut((r0, r0), (right.sites, right.sites)).copy_from(&right.thermal_target());

    let lead_rates = (0..n)
        .map(|i| match layout.block_of(i) {
            Block::Lattice => 0.0,
            Block::LeftLead => left.gamma,
            Block::RightLead => right.gamma,
        })
        .collect();
    let lattice_mask = (0..n).map(|i| i < n_lat).collect();

    Ok(CompositeSystem {
        hamiltonian: h,
        layout,
        epsilon,
        lattice: lat.clone(),
        left: left.clone(),
        right: right.clone(),
        lead_basis: [left.momentum_basis(), right.momentum_basis()],
        target,
        lead_rates,
        lattice_mask,
        contacts: [l0, r0],
    })
}

impl CompositeSystem {
    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    /// `gamma_i * target` on each lead block: the constant source term of the
    /// lead dissipator.
    pub fn source(&self) -> CMatrix {
        let mut s = self.target.clone();
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                if s[(i, j)] != C64::new(0.0, 0.0) {
                    s[(i, j)] *= self.lead_rates[i];
                }
            }
        }
        s
    }

    /// Per-index damping `gamma_i/2` on leads and `kappa/2` on the lattice.
    pub fn damping(&self, kappa: f64) -> Vec<f64> {
        self.lead_rates
            .iter()
            .zip(&self.lattice_mask)
            .map(|(&g, &latt)| if latt { kappa / 2.0 } else { g / 2.0 })
            .collect()
    }

    /// `A = i H + diag(damping)`; the generator reads
    /// `d rho/dt = -(A rho + rho A^dagger) + source + kappa diag_lattice(rho)`.
    pub fn drift_matrix(&self, kappa: f64) -> CMatrix {
        let mut a = self.hamiltonian.map(|z| C64::new(-z.im, z.re));
        for (i, d) in self.damping(kappa).into_iter().enumerate() {
            a[(i, i)] += C64::new(d, 0.0);
        }
        a
    }
}
