//! Parameter sweeps over the gate voltage and the dephasing rate, the
//! conduction window, Esaki-Tsu fits and in-gap peak metrics.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use log::{debug, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::lattice::{least_squares_slope, Lattice};
use crate::leads::{assemble_composite, CompositeSystem, RingLead};
use crate::master_eq::{solve_steady_state_from, Diagnostics, SolverConfig, SolverMethod, Spdm};
use crate::observables::{current_profile, edge_imbalance, population_gradient, site_populations};
use crate::{Error, Result};

/// First line of every sweep CSV, followed by the fingerprint.
pub const CSV_MAGIC: &str = "# edgesense v1, fingerprint=";
const BASE_COLUMNS: [&str; 5] = ["axis", "current", "residual", "imbalance", "gradient"];

/// Energy interval `(mu_R - gamma/2, mu_L + gamma/2)` that carries
/// bias-driven current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConductionWindow {
    pub lo: f64,
    pub hi: f64,
}

impl ConductionWindow {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, e: f64) -> bool {
        e > self.lo && e < self.hi
    }

    /// Gate values `delta` for which a level at `energy` (at zero gate) is
    /// shifted into the window.
    pub fn gate_interval(&self, energy: f64) -> (f64, f64) {
        (self.lo - energy, self.hi - energy)
    }
}

/// The caller is responsible for `mu_l >= mu_r`; a reversed pair yields the
/// correspondingly reversed interval.
pub fn conduction_window(mu_l: f64, mu_r: f64, gamma: f64) -> ConductionWindow {
    ConductionWindow { lo: mu_r - gamma / 2.0, hi: mu_l + gamma / 2.0 }
}

/// Everything needed for one steady-state solve apart from the swept value.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub lattice: Lattice,
    pub left: RingLead,
    pub right: RingLead,
    pub epsilon: f64,
    pub kappa: f64,
    pub solver: SolverConfig,
}

impl Scenario {
    pub fn system(&self) -> Result<CompositeSystem> {
        assemble_composite(&self.lattice, &self.left, &self.right, self.epsilon)
    }

    pub fn with_delta(&self, delta: f64) -> Scenario {
        Scenario { lattice: self.lattice.with_gate(delta), ..self.clone() }
    }

    pub fn with_kappa(&self, kappa: f64) -> Scenario {
        Scenario { kappa, ..self.clone() }
    }

    pub fn with_lead_sites(&self, sites: usize) -> Scenario {
        let mut s = self.clone();
        s.left.sites = sites;
        s.right.sites = sites;
        s
    }

    pub fn window(&self) -> ConductionWindow {
        conduction_window(self.left.mu, self.right.mu, self.left.gamma.max(self.right.gamma))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeasureOptions {
    /// End sites averaged by the imbalance column.
    pub imbalance_sites: usize,
    /// Interior fraction used for the gradient column.
    pub fit_window: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions { imbalance_sites: 2, fit_window: 0.6 }
    }
}

/// Observables of one steady state.
#[derive(Debug, Clone, Serialize)]
pub struct SteadyPoint {
    pub current: f64,
    pub max_deviation: f64,
    pub residual: f64,
    pub imbalance: f64,
    pub gradient: f64,
    pub populations: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Solve one scenario and measure it.
pub fn solve_point(scenario: &Scenario, opts: &MeasureOptions) -> Result<SteadyPoint> {
    solve_point_from(scenario, opts, None).map(|(p, _)| p)
}

fn solve_point_from(
    scenario: &Scenario,
    opts: &MeasureOptions,
    initial: Option<&Spdm>,
) -> Result<(SteadyPoint, Spdm)> {
    let sys = scenario.system()?;
    let (rho, diagnostics) = solve_steady_state_from(&sys, scenario.kappa, &scenario.solver, initial)?;
    let point = measure(&rho, &sys, diagnostics, opts)?;
    Ok((point, rho))
}

/// Observables of an already solved steady state.
pub fn measure(rho: &Spdm, sys: &CompositeSystem, diagnostics: Diagnostics, opts: &MeasureOptions) -> Result<SteadyPoint> {
    let profile = current_profile(rho, sys)?;
    let populations = site_populations(rho, sys);
    let imbalance = edge_imbalance(&populations, opts.imbalance_sites)?;
    let gradient = population_gradient(&populations, opts.fit_window)?;
    Ok(SteadyPoint {
        current: profile.mean,
        max_deviation: profile.max_deviation,
        residual: diagnostics.residual,
        imbalance,
        gradient,
        populations,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Delta,
    Kappa,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Delta => "delta",
            SweepAxis::Kappa => "kappa",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Worker threads; 0 uses the global rayon pool.
    pub parallelism: usize,
    /// Start each time-marching solve from the previous row's state. Rows are
    /// then processed in `parallelism` contiguous chunks.
    pub warm_start: bool,
    pub measure: MeasureOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { parallelism: 0, warm_start: true, measure: MeasureOptions::default() }
    }
}

/// One column per observable, rows in axis order. Failed rows hold NaN and a
/// nonzero `status`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis_name: String,
    pub axis_values: Vec<f64>,
    pub current: Vec<f64>,
    pub residuals: Vec<f64>,
    pub imbalance: Vec<f64>,
    pub gradient: Vec<f64>,
    pub extra_columns: Vec<(String, Vec<f64>)>,
    pub config_fingerprint: String,
}

impl SweepTable {
    pub fn len(&self) -> usize {
        self.axis_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis_values.is_empty()
    }

    pub fn extra(&self, name: &str) -> Option<&[f64]> {
        self.extra_columns.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Indices of rows whose solve failed.
    pub fn failed_rows(&self) -> Vec<usize> {
        match self.extra("status") {
            Some(s) => s.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect(),
            None => (0..self.len()).filter(|&i| self.current[i].is_nan()).collect(),
        }
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.len();
        let ok = [self.current.len(), self.residuals.len(), self.imbalance.len(), self.gradient.len()]
            .into_iter()
            .chain(self.extra_columns.iter().map(|(_, v)| v.len()))
            .all(|l| l == n);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("sweep table columns differ in length".into()))
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        self.check_shape()?;
        let mut out = String::new();
        let _ = writeln!(out, "{CSV_MAGIC}{}", self.config_fingerprint);
        let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
        header[0] = &self.axis_name;
        header.extend(self.extra_columns.iter().map(|(n, _)| n.as_str()));
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&header).map_err(csv_error)?;
        for i in 0..self.len() {
            let mut row = vec![
                fmt_float(self.axis_values[i]),
                fmt_float(self.current[i]),
                fmt_float(self.residuals[i]),
                fmt_float(self.imbalance[i]),
                fmt_float(self.gradient[i]),
            ];
            row.extend(self.extra_columns.iter().map(|(_, v)| fmt_float(v[i])));
            w.write_record(&row).map_err(csv_error)?;
        }
        let body = w.into_inner().map_err(|e| Error::Dimension(e.to_string()))?;
        out.push_str(&String::from_utf8_lossy(&body));
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = self.to_csv_string()?;
        let mut f = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<SweepTable> {
        let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
        let mut reader = std::io::BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| io_error(path, e))?;
        let fingerprint = first
            .trim_end()
            .strip_prefix(CSV_MAGIC)
            .ok_or_else(|| Error::config(path.display().to_string(), "missing `# edgesense v1` header line"))?
            .to_string();
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < BASE_COLUMNS.len() || header[1..5] != BASE_COLUMNS[1..] {
            return Err(Error::config(
                path.display().to_string(),
                format!("expected columns <axis>,current,residual,imbalance,gradient, got {}", header.join(",")),
            ));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::config(format!("{}:row {}:{}", path.display(), line + 1, header[j]), format!("not a number: `{field}`"))
                })?;
                cols[j].push(v);
            }
        }
        let mut it = cols.into_iter();
        let table = SweepTable {
            axis_name: header[0].clone(),
            axis_values: it.next().unwrap_or_default(),
            current: it.next().unwrap_or_default(),
            residuals: it.next().unwrap_or_default(),
            imbalance: it.next().unwrap_or_default(),
            gradient: it.next().unwrap_or_default(),
            extra_columns: header[5..].iter().cloned().zip(it).collect(),
            config_fingerprint: fingerprint,
        };
        table.check_shape()?;
        Ok(table)
    }
}

/// Twelve significant digits, scientific notation.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x == 0.0 {
        "0".into()
    } else {
        format!("{x:.11e}")
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Dimension(format!("csv: {e}"))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn check_monotone(values: &[f64], name: &'static str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::param(name, "no sweep values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param(name, "sweep values must be finite"));
    }
    let inc = values.windows(2).all(|w| w[1] > w[0]);
    let dec = values.windows(2).all(|w| w[1] < w[0]);
    if values.len() > 1 && !inc && !dec {
        return Err(Error::param(name, "sweep values must be strictly monotone"));
    }
    Ok(())
}

/// Current against gate voltage at fixed `scenario.kappa`.
pub fn sweep_gate(scenario: &Scenario, deltas: &[f64], opts: &SweepOptions, fingerprint: &str) -> Result<SweepTable> {
    check_monotone(deltas, "delta")?;
    run_sweep(scenario, SweepAxis::Delta, deltas, opts, fingerprint)
}

/// Current against dephasing rate at fixed gate voltage.
pub fn sweep_decoherence(scenario: &Scenario, kappas: &[f64], opts: &SweepOptions, fingerprint: &str) -> Result<SweepTable> {
    check_monotone(kappas, "kappa")?;
    if kappas.iter().any(|&k| k < 0.0) {
        return Err(Error::param("kappa", "dephasing rates must be >= 0"));
    }
    run_sweep(scenario, SweepAxis::Kappa, kappas, opts, fingerprint)
}

type Row = std::result::Result<SteadyPoint, String>;

fn run_sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    opts: &SweepOptions,
    fingerprint: &str,
) -> Result<SweepTable> {
    // Fail fast on an invalid template instead of flagging every row.
    scenario.solver.validate()?;
    scenario.system()?;

    let at = |v: f64| match axis {
        SweepAxis::Delta => scenario.with_delta(v),
        SweepAxis::Kappa => scenario.with_kappa(v),
    };
    let warm = opts.warm_start && scenario.solver.method == SolverMethod::TimeMarch;
    let run_chunk = |chunk: &[f64]| -> Vec<Row> {
        let mut prev: Option<Spdm> = None;
        chunk
            .iter()
            .map(|&v| {
                let initial = if warm { prev.as_ref() } else { None };
                match solve_point_from(&at(v), &opts.measure, initial) {
                    Ok((p, rho)) => {
                        debug!("{}={v}: current {:.6e}", axis.name(), p.current);
                        if warm {
                            prev = Some(rho);
                        }
                        Ok(p)
                    }
                    Err(e) => {
                        warn!("{}={v}: {e}", axis.name());
                        prev = None;
                        Err(e.to_string())
                    }
                }
            })
            .collect()
    };
    let compute = || -> Vec<Row> {
        if warm {
            let workers = if opts.parallelism == 0 { rayon::current_num_threads() } else { opts.parallelism };
            let size = values.len().div_ceil(workers.max(1)).max(1);
            values.par_chunks(size).map(run_chunk).collect::<Vec<_>>().into_iter().flatten().collect()
        } else {
            values.par_iter().map(|&v| run_chunk(&[v]).pop().expect("one row")).collect()
        }
    };
    let rows = if opts.parallelism == 0 {
        compute()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallelism)
            .build()
            .map_err(|e| Error::param("parallelism", e.to_string()))?
            .install(compute)
    };
    Ok(assemble_table(axis, values, &rows, fingerprint))
}

fn assemble_table(axis: SweepAxis, values: &[f64], rows: &[Row], fingerprint: &str) -> SweepTable {
    let pick = |f: fn(&SteadyPoint) -> f64| -> Vec<f64> {
        rows.iter().map(|r| r.as_ref().map(f).unwrap_or(f64::NAN)).collect()
    };
    SweepTable {
        axis_name: axis.name().into(),
        axis_values: values.to_vec(),
        current: pick(|p| p.current),
        residuals: pick(|p| p.residual),
        imbalance: pick(|p| p.imbalance),
        gradient: pick(|p| p.gradient),
        extra_columns: vec![
            ("max_deviation".into(), pick(|p| p.max_deviation)),
            ("status".into(), rows.iter().map(|r| if r.is_ok() { 0.0 } else { 1.0 }).collect()),
        ],
        config_fingerprint: fingerprint.into(),
    }
}

/// `j = a kappa / (kappa^2 + c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EsakiTsuFit {
    pub a: f64,
    pub c: f64,
    pub relative_residual: f64,
    pub kappa_peak: f64,
}

impl EsakiTsuFit {
    pub fn eval(&self, kappa: f64) -> f64 {
        esaki_tsu(self.a, self.c, kappa)
    }
}

pub fn esaki_tsu(a: f64, c: f64, kappa: f64) -> f64 {
    a * kappa / (kappa * kappa + c)
}

const ET_GRID_POINTS: usize = 400;
const ET_MAX_GN_ITERS: usize = 200;

/// Least-squares Esaki-Tsu fit: a scan over `log c` (with the optimal `a`
/// in closed form at each grid point) followed by damped Gauss-Newton in
/// `(a, ln c)`.
pub fn fit_esaki_tsu(kappa: &[f64], current: &[f64]) -> Result<EsakiTsuFit> {
    if kappa.len() != current.len() {
        return Err(Error::Dimension(format!("{} kappa values but {} currents", kappa.len(), current.len())));
    }
    if kappa.len() < 6 {
        return Err(Error::param("kappa", format!("need at least 6 points, got {}", kappa.len())));
    }
    if kappa.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::param("kappa", "all dephasing rates must be positive"));
    }
    if current.iter().any(|&j| !(j > 0.0 && j.is_finite())) {
        return Err(Error::param("current", "Esaki-Tsu fit needs strictly positive currents"));
    }
    let kmin = kappa.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = kappa.iter().cloned().fold(0.0, f64::max);
    if kmax / kmin < 100.0 {
        return Err(Error::param("kappa", format!("points must span two decades, got {:.3}", (kmax / kmin).log10())));
    }

    let sse = |a: f64, c: f64| -> f64 {
        kappa.iter().zip(current).map(|(&k, &j)| (esaki_tsu(a, c, k) - j).powi(2)).sum()
    };
    let best_a = |c: f64| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (&k, &j) in kappa.iter().zip(current) {
            let g = k / (k * k + c);
            num += g * j;
            den += g * g;
        }
        num / den
    };

    let (lo, hi) = ((kmin * kmin * 1e-2).ln(), (kmax * kmax * 1e2).ln());
    let (mut a, mut c, mut best) = (0.0, 0.0, f64::INFINITY);
    for i in 0..ET_GRID_POINTS {
        let ci = (lo + (hi - lo) * i as f64 / (ET_GRID_POINTS - 1) as f64).exp();
        let ai = best_a(ci);
        let s = sse(ai, ci);
        if s < best {
            (a, c, best) = (ai, ci, s);
        }
    }
    let grid = (a, c);

    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..ET_MAX_GN_ITERS {
        // Residuals r_i = f_i - j_i; parameters (a, u = ln c).
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&k, &j) in kappa.iter().zip(current) {
            let d = k * k + c;
            let f = a * k / d;
            let grad = [k / d, -a * k * c / (d * d)];
            let r = f - j;
            for p in 0..2 {
                jtr[p] += grad[p] * r;
                for q in 0..2 {
                    jtj[p][q] += grad[p] * grad[q];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let m00 = jtj[0][0] * (1.0 + lambda);
            let m11 = jtj[1][1] * (1.0 + lambda);
            let det = m00 * m11 - jtj[0][1] * jtj[1][0];
            let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
            let du = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
            let (na, nc) = (a + da, c * du.exp());
            let s = sse(na, nc);
            if na > 0.0 && s.is_finite() && s <= best {
                let small = da.abs() <= 1e-14 * a.abs() && du.abs() <= 1e-14;
                (a, c, best) = (na, nc, s);
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                converged = small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged || !(a > 0.0 && c > 0.0 && a.is_finite() && c.is_finite()) {
        return Err(Error::Fit { reason: "Gauss-Newton refinement diverged".into(), a: grid.0, c: grid.1 });
    }
    let norm: f64 = current.iter().map(|j| j * j).sum::<f64>().sqrt();
    Ok(EsakiTsuFit { a, c, relative_residual: best.sqrt() / norm, kappa_peak: c.sqrt() })
}

/// Gate ranges used to separate an in-gap peak from its baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakRegion {
    /// Gate interval in which no band level lies inside the conduction
    /// window.
    pub gap: (f64, f64),
    /// Gate interval over which the edge level lies inside the window.
    pub window: (f64, f64),
}

impl PeakRegion {
    /// Region for an edge level at `edge_energy` inside the spectral gap
    /// `band_gap` (both at zero gate).
    pub fn for_edge(edge_energy: f64, band_gap: (f64, f64), window: ConductionWindow) -> PeakRegion {
        // A band edge b is outside the window while b + delta is.
        let gap = (window.hi - band_gap.1, window.lo - band_gap.0);
        PeakRegion { gap, window: window.gate_interval(edge_energy) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeakMetrics {
    Peak { height: f64, center: f64, fwhm: f64, baseline: f64 },
    NoPeak { baseline: f64, max_excess: f64 },
}

impl PeakMetrics {
    pub fn height(&self) -> Option<f64> {
        match *self {
            PeakMetrics::Peak { height, .. } => Some(height),
            PeakMetrics::NoPeak { .. } => None,
        }
    }

    pub fn fwhm(&self) -> Option<f64> {
        match *self {
            PeakMetrics::Peak { fwhm, .. } => Some(fwhm),
            PeakMetrics::NoPeak { .. } => None,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Height, centre and full width at half maximum of the in-gap peak of a
/// gate sweep. The baseline is the median current over gap rows outside the
/// window; a peak must clear it by three times the largest solver residual.
pub fn peak_metrics(table: &SweepTable, region: &PeakRegion) -> Result<PeakMetrics> {
    let x = &table.axis_values;
    let y = &table.current;
    let inside = |v: f64, (lo, hi): (f64, f64)| v > lo && v < hi;
    let rows: Vec<usize> = (0..table.len()).filter(|&i| y[i].is_finite()).collect();
    let baseline_rows: Vec<f64> = rows
        .iter()
        .filter(|&&i| inside(x[i], region.gap) && !inside(x[i], region.window))
        .map(|&i| y[i])
        .collect();
    if baseline_rows.is_empty() {
        return Err(Error::param("table", "no rows lie in the gap outside the conduction window"));
    }
    let baseline = median(baseline_rows);
    let peak_rows: Vec<usize> = rows.iter().cloned().filter(|&i| inside(x[i], region.window)).collect();
    let Some(&imax) = peak_rows.iter().max_by(|&&i, &&j| y[i].total_cmp(&y[j])) else {
        return Err(Error::param("table", "no rows inside the conduction window"));
    };
    let noise = 3.0 * rows.iter().map(|&i| table.residuals[i]).fold(0.0, f64::max);
    let excess = y[imax] - baseline;
    if excess <= noise {
        return Ok(PeakMetrics::NoPeak { baseline, max_excess: excess });
    }
    let half = baseline + excess / 2.0;
    let crossing = |step: isize| -> f64 {
        let mut i = imax as isize;
        loop {
            let next = i + step;
            if next < 0 || next as usize >= x.len() || !y[next as usize].is_finite() {
                return x[i as usize];
            }
            let (i0, i1) = (i as usize, next as usize);
            if y[i1] <= half {
                let t = (y[i0] - half) / (y[i0] - y[i1]);
                return x[i0] + t * (x[i1] - x[i0]);
            }
            i = next;
        }
    };
    let fwhm = (crossing(1) - crossing(-1)).abs();
    Ok(PeakMetrics::Peak { height: excess, center: x[imax], fwhm, baseline })
}

/// Coefficient of determination of `y = s x` (line through the origin),
/// together with the slope.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = sxy / sxx;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    (slope, 1.0 - ss_res / ss_tot)
}

/// Ordinary least-squares line `y = slope x + intercept` and its `R^2`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let slope = least_squares_slope(x, y);
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (slope, intercept, 1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeadConvergence {
    pub sites: Vec<usize>,
    pub currents: Vec<f64>,
    pub converged: bool,
}

/// Double the ring size, starting from `scenario.left.sites`, until the
/// current changes by less than `rel_tol` or `max_sites` is exceeded.
pub fn converge_lead_size(scenario: &Scenario, rel_tol: f64, max_sites: usize, opts: &MeasureOptions) -> Result<LeadConvergence> {
    let mut sites = vec![scenario.left.sites];
    let mut currents = vec![solve_point(scenario, opts)?.current];
    loop {
        let m = 2 * sites.last().expect("nonempty");
        if m > max_sites {
            return Ok(LeadConvergence { sites, currents, converged: false });
        }
        let j = solve_point(&scenario.with_lead_sites(m), opts)?.current;
        let prev = *currents.last().expect("nonempty");
        sites.push(m);
        currents.push(j);
        if (j - prev).abs() <= rel_tol * j.abs().max(prev.abs()) {
            return Ok(LeadConvergence { sites, currents, converged: true });
        }
    }
}

/// `n` values from `start` to `stop` inclusive with spacing `step`.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::param("range", format!("need start <= stop and step > 0, got {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + step * i as f64).collect())
}

/// `points` log-spaced values from `start` to `stop` inclusive.
pub fn log_grid(start: f64, stop: f64, points: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && stop > start) || points < 2 {
        return Err(Error::param("log_range", format!("need 0 < start < stop and points >= 2, got {start}..{stop} x{points}")));
    }
    let (a, b) = (start.ln(), stop.ln());
    Ok((0..points)
        .map(|i| {
            if i == points - 1 {
                stop
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}
