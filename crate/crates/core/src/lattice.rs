//! Device Hamiltonians: SSH chain, flux-rhombic (diamond) chain and custom
//! tight-binding matrices, plus spectra and edge-state detection.
//!
//! Energies are in units of the hopping `J`; all hopping matrix elements carry
//! the `-J/2` normalization so a uniform chain has the band `-J cos k`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{CMatrix, Error, Result, C64};

/// Margin kept between an analytic band edge and the reported gap interval.
const GAP_MARGIN: f64 = 1e-6;
/// Floor applied to `|psi|^2` before taking logarithms in the tail fit.
const DENSITY_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Ssh,
    Rhombic,
    Custom,
}

/// How the diamond chain is closed at its two ends.
///
/// * `Hub`: the chain starts and ends on a hub site, so each end hub carries
///   one dangling arm pair. Leads attach to the end hubs.
/// * `Arm`: both end hubs are removed and the chain starts and ends on an arm
///   pair. Leads attach to the first/last `B` arm site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhombicTermination {
    #[default]
    Hub,
    Arm,
}

impl RhombicTermination {
    pub const SUPPORTED: [&'static str; 2] = ["hub", "arm"];
}

impl FromStr for RhombicTermination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hub" => Ok(Self::Hub),
            "arm" => Ok(Self::Arm),
            other => Err(Error::param(
                "termination",
                format!(
                    "unknown termination `{other}`; supported: {}",
                    Self::SUPPORTED.join(", ")
                ),
            )),
        }
    }
}

impl fmt::Display for RhombicTermination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hub => f.write_str("hub"),
            Self::Arm => f.write_str("arm"),
        }
    }
}

/// Builder parameters a lattice was created from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeParams {
    Ssh { sites: usize, hopping: f64, hopping_weak: f64 },
    Rhombic { rhombs: usize, hopping_abs: f64, phi: f64, termination: RhombicTermination },
    Custom,
}

/// A set of directed bonds `(from, to)` that together separate the left part
/// of the device from the right part. `from` lies on the left side.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub bonds: Vec<(usize, usize)>,
}

/// Device Hamiltonian plus site metadata.
#[derive(Debug, Clone)]
pub struct Lattice {
    kind: LatticeKind,
    params: LatticeParams,
    hamiltonian: CMatrix,
    site_labels: Vec<String>,
    gate_offset: f64,
    cuts: Vec<Cut>,
    left_terminal: usize,
    right_terminal: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SshOptions {
    /// Accept odd chain lengths (one edge state instead of two).
    pub allow_odd_length: bool,
}

/// SSH chain `delta * sum |l><l| - sum J_l/2 (|l+1><l| + h.c.)` whose bonds
/// alternate between `hopping_weak` and `hopping`, with the weak bond at both
/// ends so that each end hosts an edge state.
pub fn build_ssh(sites: usize, hopping: f64, hopping_weak: f64, delta: f64) -> Result<Lattice> {
    build_ssh_with(sites, hopping, hopping_weak, delta, SshOptions::default())
}

pub fn build_ssh_with(
    sites: usize,
    hopping: f64,
    hopping_weak: f64,
    delta: f64,
    opts: SshOptions,
) -> Result<Lattice> {
    if sites < 2 {
        return Err(Error::param("L", format!("need at least 2 sites, got {sites}")));
    }
    if sites % 2 == 1 && !opts.allow_odd_length {
        return Err(Error::param(
            "L",
            format!("odd length {sites} does not host two edge states; pass the odd-length override to accept it"),
        ));
    }
    if !(hopping > 0.0 && hopping.is_finite()) {
        return Err(Error::param("J", format!("must be positive, got {hopping}")));
    }
    if !(hopping_weak > 0.0 && hopping_weak.is_finite()) {
        return Err(Error::param("J_tilde", format!("must be positive, got {hopping_weak}")));
    }
    check_finite("delta", delta)?;

    let mut h = DMatrix::from_element(sites, sites, C64::new(0.0, 0.0));
    for l in 0..sites {
        h[(l, l)] = C64::new(delta, 0.0);
    }
    for l in 0..sites - 1 {
        let j = if l % 2 == 0 { hopping_weak } else { hopping };
        h[(l + 1, l)] = C64::new(-j / 2.0, 0.0);
        h[(l, l + 1)] = C64::new(-j / 2.0, 0.0);
    }
    let cuts = (0..sites - 1).map(|l| Cut { bonds: vec![(l, l + 1)] }).collect();
    Ok(Lattice {
        kind: LatticeKind::Ssh,
        params: LatticeParams::Ssh { sites, hopping, hopping_weak },
        hamiltonian: h,
        site_labels: (1..=sites).map(|l| format!("ell={l}")).collect(),
        gate_offset: delta,
        cuts,
        left_terminal: 0,
        right_terminal: sites - 1,
    })
}

/// Diamond chain of `rhombs` plaquettes. Every bond has modulus
/// `hopping_abs / 2`; the bond from hub `A_n` to arm `B_n` carries the Peierls
/// factor `exp(i phi)`, so each plaquette encloses flux `phi`.
pub fn build_rhombic(
    rhombs: usize,
    hopping_abs: f64,
    phi: f64,
    delta: f64,
    termination: RhombicTermination,
) -> Result<Lattice> {
    if rhombs < 2 {
        return Err(Error::param("L", format!("need at least 2 rhombs, got {rhombs}")));
    }
    if !(hopping_abs > 0.0 && hopping_abs.is_finite()) {
        return Err(Error::param("J_abs", format!("must be positive, got {hopping_abs}")));
    }
    if !(0.0..2.0 * PI).contains(&phi) {
        return Err(Error::param("phi", format!("must lie in [0, 2pi), got {phi}")));
    }
    check_finite("delta", delta)?;

    // Full hub-terminated layout: A_n = 3(n-1), B_n = 3(n-1)+1, C_n = 3(n-1)+2,
    // closing hub A_{L+1} = 3L. The arm termination drops both end hubs.
    let full = 3 * rhombs + 1;
    let hub = |n: usize| 3 * (n - 1);
    let arm_b = |n: usize| 3 * (n - 1) + 1;
    let arm_c = |n: usize| 3 * (n - 1) + 2;

    let t = -hopping_abs / 2.0;
    let peierls = C64::from_polar(1.0, phi) * t;
    let plain = C64::new(t, 0.0);

    // (to, from, amplitude) for H[to, from]
    let mut bonds: Vec<(usize, usize, C64)> = Vec::with_capacity(4 * rhombs);
    for n in 1..=rhombs {
        bonds.push((arm_b(n), hub(n), peierls));
        bonds.push((arm_c(n), hub(n), plain));
        bonds.push((hub(n + 1), arm_b(n), plain));
        bonds.push((hub(n + 1), arm_c(n), plain));
    }

    let mut labels: Vec<String> = Vec::with_capacity(full);
    for n in 1..=rhombs {
        labels.push(format!("A{n}"));
        labels.push(format!("B{n}"));
        labels.push(format!("C{n}"));
    }
    labels.push(format!("A{}", rhombs + 1));

    let keep: Vec<bool> = (0..full)
        .map(|i| match termination {
            RhombicTermination::Hub => true,
            RhombicTermination::Arm => i != hub(1) && i != hub(rhombs + 1),
        })
        .collect();
    let mut new_index = vec![usize::MAX; full];
    let mut next = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            new_index[i] = next;
            next += 1;
        }
    }
    let n_sites = next;

    let mut h = DMatrix::from_element(n_sites, n_sites, C64::new(0.0, 0.0));
    for i in 0..n_sites {
        h[(i, i)] = C64::new(delta, 0.0);
    }
    for &(to, from, amp) in &bonds {
        if keep[to] && keep[from] {
            let (a, b) = (new_index[to], new_index[from]);
            h[(a, b)] = amp;
            h[(b, a)] = amp.conj();
        }
    }

    let mut cuts = Vec::new();
    for n in 1..=rhombs {
        if keep[hub(n)] {
            cuts.push(Cut {
                bonds: vec![
                    (new_index[hub(n)], new_index[arm_b(n)]),
                    (new_index[hub(n)], new_index[arm_c(n)]),
                ],
            });
        }
        if keep[hub(n + 1)] {
            cuts.push(Cut {
                bonds: vec![
                    (new_index[arm_b(n)], new_index[hub(n + 1)]),
                    (new_index[arm_c(n)], new_index[hub(n + 1)]),
                ],
            });
        }
    }

    let (left_terminal, right_terminal) = match termination {
        RhombicTermination::Hub => (new_index[hub(1)], new_index[hub(rhombs + 1)]),
        RhombicTermination::Arm => (new_index[arm_b(1)], new_index[arm_b(rhombs)]),
    };
    let site_labels = labels
        .into_iter()
        .zip(&keep)
        .filter_map(|(l, &k)| k.then_some(l))
        .collect();

    Ok(Lattice {
        kind: LatticeKind::Rhombic,
        params: LatticeParams::Rhombic { rhombs, hopping_abs, phi, termination },
        hamiltonian: h,
        site_labels,
        gate_offset: delta,
        cuts,
        left_terminal,
        right_terminal,
    })
}

impl Lattice {
    /// Wrap an arbitrary Hermitian hopping matrix with zero diagonal. The gate
    /// offset is placed on the diagonal; leads attach to the first and last site.
    pub fn custom(hopping: CMatrix, labels: Option<Vec<String>>, delta: f64) -> Result<Self> {
        let n = hopping.nrows();
        if n == 0 || hopping.ncols() != n {
            return Err(Error::Dimension(format!(
                "custom hopping matrix must be square and non-empty, got {}x{}",
                hopping.nrows(),
                hopping.ncols()
            )));
        }
        if hermiticity_defect(&hopping) > 1e-14 {
            return Err(Error::param("matrix", "custom hopping matrix is not Hermitian"));
        }
        if (0..n).any(|i| hopping[(i, i)].norm() > 0.0) {
            return Err(Error::param("matrix", "on-site terms come from the gate offset; diagonal must be zero"));
        }
        check_finite("delta", delta)?;
        let labels = labels.unwrap_or_else(|| (1..=n).map(|l| format!("ell={l}")).collect());
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} sites", labels.len())));
        }
        let mut h = hopping;
        for i in 0..n {
            h[(i, i)] = C64::new(delta, 0.0);
        }
        Ok(Lattice {
            kind: LatticeKind::Custom,
            params: LatticeParams::Custom,
            hamiltonian: h,
            site_labels: labels,
            gate_offset: delta,
            cuts: Vec::new(),
            left_terminal: 0,
            right_terminal: n - 1,
        })
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn params(&self) -> &LatticeParams {
        &self.params
    }

    pub fn n_sites(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn site_labels(&self) -> &[String] {
        &self.site_labels
    }

    pub fn gate_offset(&self) -> f64 {
        self.gate_offset
    }

    pub fn cuts(&self) -> &[Cut] {
        &self.cuts
    }

    /// Site the left lead couples to.
    pub fn left_terminal(&self) -> usize {
        self.left_terminal
    }

    /// Site the right lead couples to.
    pub fn right_terminal(&self) -> usize {
        self.right_terminal
    }

    /// Same lattice with the uniform on-site energy replaced by `delta`.
    pub fn with_gate(&self, delta: f64) -> Lattice {
        let mut out = self.clone();
        for i in 0..out.n_sites() {
            out.hamiltonian[(i, i)] = C64::new(delta, 0.0);
        }
        out.gate_offset = delta;
        out
    }

    /// Conjugate the Hamiltonian by the diagonal unitary `diag(exp(i theta))`.
    pub fn gauge_transformed(&self, phases: &[f64]) -> Result<Lattice> {
        let n = self.n_sites();
        if phases.len() != n {
            return Err(Error::Dimension(format!("{} phases for {n} sites", phases.len())));
        }
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.hamiltonian[(i, j)] *= C64::from_polar(1.0, phases[i] - phases[j]);
            }
        }
        Ok(out)
    }

    /// Spatially reversed lattice: site `i` becomes `n-1-i`, terminals swap.
    pub fn mirrored(&self) -> Lattice {
        let n = self.n_sites();
        let p = |i: usize| n - 1 - i;
        let hamiltonian = DMatrix::from_fn(n, n, |i, j| self.hamiltonian[(p(i), p(j))]);
        let cuts = self
            .cuts
            .iter()
            .rev()
            .map(|c| Cut { bonds: c.bonds.iter().map(|&(a, b)| (p(b), p(a))).collect() })
            .collect();
        Lattice {
            kind: self.kind,
            params: self.params.clone(),
            hamiltonian,
            site_labels: self.site_labels.iter().rev().cloned().collect(),
            gate_offset: self.gate_offset,
            cuts,
            left_terminal: p(self.right_terminal),
            right_terminal: p(self.left_terminal),
        }
    }

    /// Bulk band gaps implied by the builder parameters, shifted by the gate
    /// and shrunk by a small margin so that band states never fall inside.
    /// Custom lattices report no gaps.
    pub fn spectral_gaps(&self) -> Vec<(f64, f64)> {
        let d = self.gate_offset;
        match self.params {
            LatticeParams::Ssh { hopping, hopping_weak, .. } => {
                let half = (hopping - hopping_weak).abs() / 2.0;
                if half > GAP_MARGIN {
                    vec![(d - half + GAP_MARGIN, d + half - GAP_MARGIN)]
                } else {
                    Vec::new()
                }
            }
            LatticeParams::Rhombic { hopping_abs, phi, .. } => {
                let (inner, _) = rhombic_band_edges(hopping_abs, phi);
                if inner > 2.0 * GAP_MARGIN {
                    vec![
                        (d - inner + GAP_MARGIN, d - GAP_MARGIN),
                        (d + GAP_MARGIN, d + inner - GAP_MARGIN),
                    ]
                } else {
                    Vec::new()
                }
            }
            LatticeParams::Custom => Vec::new(),
        }
    }

    /// Serializable form `{kind, n_sites, delta, params, matrix}` with the
    /// matrix as row-major `[re, im]` pairs.
    pub fn to_dump(&self) -> LatticeDump {
        let n = self.n_sites();
        let mut matrix = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.hamiltonian[(i, j)];
                matrix.push([z.re, z.im]);
            }
        }
        LatticeDump {
            kind: self.kind,
            n_sites: n,
            delta: self.gate_offset,
            params: self.params.clone(),
            site_labels: self.site_labels.clone(),
            matrix,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeDump {
    pub kind: LatticeKind,
    pub n_sites: usize,
    pub delta: f64,
    pub params: LatticeParams,
    pub site_labels: Vec<String>,
    pub matrix: Vec<[f64; 2]>,
}

/// Inner and outer edge `(e_min, e_max)` of the positive dispersive band of
/// the infinite diamond chain, `E^2 = J^2 (1 +/- |cos(phi/2)|)`.
pub fn rhombic_band_edges(hopping_abs: f64, phi: f64) -> (f64, f64) {
    let c = (phi / 2.0).cos().abs();
    (hopping_abs * (1.0 - c).max(0.0).sqrt(), hopping_abs * (1.0 + c).sqrt())
}

/// Largest elementwise modulus of `H - H^dagger`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite, got {v}")))
    }
}

/// Eigenpairs of a lattice Hamiltonian, energies ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    /// Column `k` is the normalized eigenvector of `energies[k]`.
    pub states: CMatrix,
}

pub fn spectrum(lat: &Lattice) -> Spectrum {
    hermitian_spectrum(lat.hamiltonian())
}

pub(crate) fn hermitian_spectrum(h: &CMatrix) -> Spectrum {
    let eig = h.clone().symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let states = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    Spectrum { energies, states }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeStateReport {
    /// Index of the eigenvector the reported state overlaps most.
    pub eigen_index: usize,
    pub energy: f64,
    /// Decay length of `|psi|^2 ~ exp(-d / xi)` measured in sites.
    pub localization_length: f64,
    pub ipr: f64,
    pub side: Side,
    /// Weight within the `end_sites` outermost sites on the dominant side.
    pub end_weight: f64,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EdgeDetection {
    pub threshold: f64,
    pub end_sites: usize,
    /// In-gap eigenvalues closer than this are treated as one degenerate
    /// cluster and rotated into end-localized combinations.
    pub cluster_tol: f64,
}

impl Default for EdgeDetection {
    fn default() -> Self {
        EdgeDetection { threshold: 0.5, end_sites: 4, cluster_tol: 1e-6 }
    }
}

/// Find eigenstates inside any of `gaps` whose weight on the outermost
/// `end_sites` sites of either end exceeds `threshold`.
///
/// Near-degenerate in-gap states (bonding/antibonding pairs of the two end
/// states of a long chain) are first rotated by diagonalizing the position
/// operator inside their cluster, so each report describes one end.
pub fn classify_edge_states(
    spec: &Spectrum,
    gaps: &[(f64, f64)],
    opts: &EdgeDetection,
) -> Result<Vec<EdgeStateReport>> {
    if gaps.iter().any(|&(lo, hi)| !(lo < hi)) {
        return Err(Error::param("gap", "gap intervals must be non-empty"));
    }
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::param("threshold", format!("must lie in (0, 1), got {}", opts.threshold)));
    }
    let n = spec.states.nrows();
    if opts.end_sites == 0 || 2 * opts.end_sites > n {
        return Err(Error::param("end_sites", format!("need 1 <= K <= n/2, got {}", opts.end_sites)));
    }

    let in_gap: Vec<usize> = (0..spec.energies.len())
        .filter(|&k| gaps.iter().any(|&(lo, hi)| spec.energies[k] > lo && spec.energies[k] < hi))
        .collect();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &k in &in_gap {
        match clusters.last_mut() {
            Some(c) if spec.energies[k] - spec.energies[*c.last().unwrap()] < opts.cluster_tol => c.push(k),
            _ => clusters.push(vec![k]),
        }
    }

    let mut reports = Vec::new();
    for cluster in clusters {
        for (coeffs, psi) in localize_cluster(spec, &cluster) {
            let density: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
            let left: f64 = density[..opts.end_sites].iter().sum();
            let right: f64 = density[n - opts.end_sites..].iter().sum();
            let end_weight = left.max(right);
            if end_weight <= opts.threshold {
                continue;
            }
            let side = if left >= 2.0 * right {
                Side::Left
            } else if right >= 2.0 * left {
                Side::Right
            } else {
                Side::Both
            };
            let energy: f64 = coeffs
                .iter()
                .zip(&cluster)
                .map(|(c, &k)| c.norm_sqr() * spec.energies[k])
                .sum();
            let (best, _) = coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| (cluster[i], c.norm_sqr()))
                .fold((cluster[0], -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            reports.push(EdgeStateReport {
                eigen_index: best,
                energy,
                localization_length: tail_length(&density, side != Side::Right),
                ipr: density.iter().map(|w| w * w).sum(),
                side,
                end_weight,
                density,
            });
        }
    }
    Ok(reports)
}

/// Rotate a cluster of eigenvectors into eigenvectors of the projected
/// position operator. Returns (cluster coefficients, site amplitudes).
fn localize_cluster(spec: &Spectrum, cluster: &[usize]) -> Vec<(Vec<C64>, Vec<C64>)> {
    let n = spec.states.nrows();
    let g = cluster.len();
    let basis = DMatrix::from_fn(n, g, |i, a| spec.states[(i, cluster[a])]);
    if g == 1 {
        return vec![(vec![C64::new(1.0, 0.0)], basis.column(0).iter().copied().collect())];
    }
    let position = DMatrix::from_fn(g, g, |a, b| {
        (0..n)
            .map(|i| basis[(i, a)].conj() * basis[(i, b)] * i as f64)
            .sum::<C64>()
    });
    let eig = position.symmetric_eigen();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .into_iter()
        .map(|c| {
            let coeffs: Vec<C64> = eig.eigenvectors.column(c).iter().copied().collect();
            let psi = (0..n)
                .map(|i| (0..g).map(|a| basis[(i, a)] * coeffs[a]).sum())
                .collect();
            (coeffs, psi)
        })
        .collect()
}

/// Decay length from a least-squares fit of `ln |psi|^2` against distance
/// from the dominant end, using the monotone upper envelope of the density
/// over the half of the lattice nearest that end.
fn tail_length(density: &[f64], from_left: bool) -> f64 {
    let n = density.len();
    let half = (n + 1) / 2;
    let by_distance: Vec<f64> = (0..n)
        .map(|d| if from_left { density[d] } else { density[n - 1 - d] })
        .collect();
    let mut envelope = vec![0.0; n];
    let mut running: f64 = 0.0;
    for d in (0..n).rev() {
        running = running.max(by_distance[d]);
        envelope[d] = running;
    }
    let xs: Vec<f64> = (0..half).map(|d| d as f64).collect();
    let ys: Vec<f64> = envelope[..half].iter().map(|&w| w.max(DENSITY_FLOOR).ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    if slope < 0.0 {
        -1.0 / slope
    } else {
        f64::INFINITY
    }
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
