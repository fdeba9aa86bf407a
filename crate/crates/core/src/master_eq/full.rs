//! Reference steady-state solver: the generator is materialized as an
//! `N^2 x N^2` matrix column by column (by applying it to the matrix units
//! `E_kl`) and the stationary condition is solved by dense LU.

use super::{Generator, FULL_SOLVE_MAX_DIM};
use crate::leads::CompositeSystem;
use crate::{CMatrix, Error, Result, C64};
use nalgebra::{DMatrix, DVector};

pub fn full_linear_steady_state(sys: &CompositeSystem, kappa: f64) -> Result<CMatrix> {
    let n = sys.dim();
    if n > FULL_SOLVE_MAX_DIM {
        return Err(Error::param(
            "method",
            format!("full linear solve is limited to N <= {FULL_SOLVE_MAX_DIM}, got N = {n}"),
        ));
    }
    if sys.epsilon == 0.0 && kappa > 0.0 {
        return Err(Error::Decomposition(
            "generator is singular at epsilon = 0 with dephasing (lattice populations conserved)".into(),
        ));
    }
    let gen = Generator::new(sys, kappa)?;
    let dim = n * n;
    let mut lin = DMatrix::<C64>::zeros(dim, dim);
    let mut unit = CMatrix::zeros(n, n);
    for l in 0..n {
        for k in 0..n {
            unit[(k, l)] = C64::new(1.0, 0.0);
            let col = gen.apply(&unit, false);
            unit[(k, l)] = C64::new(0.0, 0.0);
            lin.column_mut(k + l * n).copy_from_slice(col.as_slice());
        }
    }
    let constant = gen.apply(&CMatrix::zeros(n, n), true);
    let rhs = DVector::from_iterator(dim, constant.iter().map(|z| -z));
    let x = lin
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Decomposition("vectorized generator is singular".into()))?;
    Ok(CMatrix::from_column_slice(n, n, x.as_slice()))
}
