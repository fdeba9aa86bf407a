//! Adaptive Dormand-Prince 5(4) integration of the single-particle master
//! equation.

use super::{hermitize, Generator, SolverConfig, Spdm};
use crate::leads::CompositeSystem;
use crate::{max_abs, CMatrix, Error, Result};

// Dormand-Prince tableau. The generator is autonomous, so the nodes c_i
// are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b*, the embedded fourth-order difference.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

pub(crate) struct MarchOutcome {
    pub rho: CMatrix,
    pub time: f64,
    pub steps: usize,
    /// Max-abs generator entry at the final state.
    pub residual: f64,
}

/// `rho(t_final)` starting from `rho0` at its recorded time offset zero.
pub fn propagate(sys: &CompositeSystem, rho0: &Spdm, kappa: f64, t_final: f64, cfg: &SolverConfig) -> Result<Spdm> {
    cfg.validate()?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::param("t_final", format!("must be finite and >= 0, got {t_final}")));
    }
    if rho0.dim() != sys.dim() {
        return Err(Error::Dimension(format!("rho0 has dimension {}, system {}", rho0.dim(), sys.dim())));
    }
    let gen = Generator::new(sys, kappa)?;
    let out = march(&gen, rho0.matrix.clone(), rho0.time, rho0.time + t_final, cfg, None)?;
    Ok(Spdm { matrix: out.rho, layout: sys.layout, time: out.time })
}

/// Integrate from `t0` to `t1`, or until the generator residual drops below
/// `stop_below` when given.
/// Accepted steps without halving the residual before the local tolerance is
/// tightened during a steady-state march.
const STALL_STEPS: usize = 500;
const MIN_STEP_TOL: f64 = 1e-15;

pub(crate) fn march(
    gen: &Generator,
    mut y: CMatrix,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    stop_below: Option<f64>,
) -> Result<MarchOutcome> {
    let mut tol = cfg.step_tol;
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut t = t0;
    let mut h = cfg.dt.min((t1 - t0).max(0.0));
    let mut k1 = gen.apply(&y, true);
    let mut steps = 0;

    if let Some(stop) = stop_below {
        if max_abs(&k1) < stop {
            return Ok(MarchOutcome { residual: max_abs(&k1), rho: y, time: t, steps });
        }
    }

    while t < t1 {
        if steps >= cfg.max_steps {
            break;
        }
        h = h.min(t1 - t);
        let min_step = 1e-13 * t.abs().max(1.0);
        if h < min_step {
            if t1 - t < min_step {
                break;
            }
            return Err(Error::StepUnderflow { time: t, dt: h });
        }

        let k2 = gen.apply(&combo(&y, h, &[(A21, &k1)]), true);
        let k3 = gen.apply(&combo(&y, h, &[(A31, &k1), (A32, &k2)]), true);
        let k4 = gen.apply(&combo(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]), true);
        let k5 = gen.apply(&combo(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]), true);
        let k6 = gen.apply(
            &combo(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            true,
        );
        let y_new = combo(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = gen.apply(&y_new, true);
        let zero = CMatrix::zeros(y.nrows(), y.ncols());
        let err = combo(&zero, h, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)]);

        let mut ratio: f64 = 0.0;
        for ((e, a), b) in err.iter().zip(y.iter()).zip(y_new.iter()) {
            let scale = tol + tol * a.norm().max(b.norm());
            ratio = ratio.max(e.norm() / scale);
        }

        if ratio <= 1.0 {
            t += h;
            steps += 1;
            y = hermitize(y_new);
            // k7 is f(y_new) before re-symmetrization; the hermitized state
            // differs only at round-off, so FSAL reuse stays valid.
            k1 = k7;
            if let Some(stop) = stop_below {
                let r = max_abs(&k1);
                if r < stop {
                    break;
                }
                // A residual floor set by the local error tolerance: tighten it.
                if r < 0.5 * best {
                    best = r;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= STALL_STEPS && tol > MIN_STEP_TOL {
                        tol = (tol * 0.1).max(MIN_STEP_TOL);
                        best = r;
                        since_best = 0;
                    }
                }
            }
        }
        let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }

    let residual = max_abs(&gen.apply(&y, true));
    Ok(MarchOutcome { rho: y, time: t, steps, residual })
}

/// `base + h * sum_i c_i k_i`.
fn combo(base: &CMatrix, h: f64, terms: &[(f64, &CMatrix)]) -> CMatrix {
    let mut out = base.clone();
    for &(c, k) in terms {
        let f = h * c;
        for (o, x) in out.iter_mut().zip(k.iter()) {
            *o += x * f;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_ssh;
    use crate::leads::{assemble_composite, RingLead};
    use crate::C64;

    #[test]
    fn zero_time_is_identity() {
        let lat = build_ssh(4, 1.0, 0.5, 0.0).unwrap();
        let l = RingLead::new(8, 1.0, 0.2, 1.0, 0.1).unwrap();
        let sys = assemble_composite(&lat, &l, &l, 0.2).unwrap();
        let rho0 = Spdm::target(&sys);
        let out = propagate(&sys, &rho0, 0.1, 0.0, &SolverConfig::default()).unwrap();
        assert_eq!(out.matrix, rho0.matrix);
    }

    #[test]
    fn lead_deviation_decays_at_gamma() {
        let lat = build_ssh(4, 1.0, 0.5, 0.0).unwrap();
        let gamma = 0.3;
        let l = RingLead::new(8, 1.0, 0.2, 2.0, gamma).unwrap();
        let r = RingLead::new(8, 1.0, -0.2, 2.0, gamma).unwrap();
        let sys = assemble_composite(&lat, &l, &r, 0.0).unwrap();
        // Deviation commuting with the ring Hamiltonian: the identity on the left ring.
        let mut rho0 = Spdm::target(&sys);
        let range = sys.layout.left_range();
        for i in range.clone() {
            rho0.matrix[(i, i)] += C64::new(0.05, 0.0);
        }
        let t = 5.0;
        let out = propagate(&sys, &rho0, 0.0, t, &SolverConfig::default()).unwrap();
        let dev0 = max_abs(&(&rho0.matrix - &sys.target));
        let dev = max_abs(&(&out.matrix - &sys.target));
        assert!((dev - dev0 * (-gamma * t).exp()).abs() < 1e-8, "{dev}");
    }
}
