//! Factorized `I - M(mu)` with the history block eliminated.
//!
//! History rows read `x_e - mu x_{e+E} = b_e`, so the history state of
//! period `d` back is `mu^d x_c + g_d` with `g_d = mu g_{d-1} + b_d`. Only
//! the current-period block is factorized.

use nalgebra::{DMatrix, Dyn, LU};

use crate::error::{Error, Result};
use crate::scalar::{cabs, cln, re, Cx, Scalar};
use crate::space::DiscretizedOperators;

/// Pivot ratio below which a factorization counts as singular.
pub(crate) fn singular_threshold<T: Scalar>(dim: usize) -> T {
    T::eps() * T::from_count(dim.max(1)) * T::lit(10.0)
}

/// Sum of complex logs of the pivots, with the permutation sign.
pub(crate) fn lu_logdet<T: Scalar>(lu: &LU<Cx<T>, Dyn, Dyn>) -> (Cx<T>, T) {
    let u = lu.u();
    let mut acc = re(T::zero());
    let mut lo = T::lit(f64::INFINITY);
    let mut hi = T::zero();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        let a = cabs(d);
        lo = lo.min(a);
        hi = hi.max(a);
        acc += cln(d);
    }
    if lu.p().determinant::<T>() < T::zero() {
        acc.im += T::pi();
    }
    let ratio = if hi > T::zero() { lo / hi } else { T::zero() };
    (acc, ratio)
}

pub struct Resolvent<T: Scalar> {
    mu: Cx<T>,
    lu: LU<Cx<T>, Dyn, Dyn>,
    /// Current rows of `M(mu)` restricted to history period `d = 1..m-1`.
    coupling: Vec<DMatrix<Cx<T>>>,
    offset: usize,
    per: usize,
    logdet: Cx<T>,
}

impl<T: Scalar> Resolvent<T> {
    pub fn new(ops: &DiscretizedOperators<T>, mu: Cx<T>) -> Result<Self> {
        let mesh = &ops.mesh;
        let off = mesh.current_offset();
        let per = mesh.period_dofs();
        let m = mesh.horizon();
        let cur = |mat: &DMatrix<Cx<T>>, col: usize| mat.view((off, col), (per, per)).into_owned();
        let block = |col: usize| cur(&ops.m0, col) + cur(&ops.l_hat, col) * mu;

        let mut r = -block(off);
        let mut coupling = Vec::with_capacity(m.saturating_sub(1));
        let mut mu_d = re(T::one());
        for d in 1..m {
            mu_d *= mu;
            let c = block(off - d * per);
            r -= &c * mu_d;
            coupling.push(c);
        }
        for i in 0..per {
            r[(i, i)] += re(T::one());
        }
        let lu = r.lu();
        let (logdet, ratio) = lu_logdet(&lu);
        if !(ratio > singular_threshold::<T>(per)) {
            return Err(Error::RegionViolation {
                mu_abs: cabs(mu).to_f64_lossy(),
                radius: ops.guaranteed_radius().to_f64_lossy(),
            });
        }
        Ok(Self {
            mu,
            lu,
            coupling,
            offset: off,
            per,
            logdet,
        })
    }

    pub fn mu(&self) -> Cx<T> {
        self.mu
    }

    /// `log det (I - M(mu))`.
    pub fn logdet(&self) -> Cx<T> {
        self.logdet
    }

    /// Solves `(I - M(mu)) X = B` for all columns of `B`.
    pub fn solve(&self, b: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
        let (off, per) = (self.offset, self.per);
        let cols = b.ncols();
        let mut x = DMatrix::zeros(b.nrows(), cols);
        let mut rhs = b.rows(off, per).into_owned();
        let mut g = DMatrix::<Cx<T>>::zeros(per, cols);
        for (d, c) in self.coupling.iter().enumerate() {
            let start = off - (d + 1) * per;
            g = &g * self.mu + b.rows(start, per);
            rhs += c * &g;
            x.rows_mut(start, per).copy_from(&g);
        }
        self.lu.solve_mut(&mut rhs);
        let mut mu_d = re(T::one());
        for d in 1..=self.coupling.len() {
            mu_d *= self.mu;
            let start = off - d * per;
            let mut hist = x.rows_mut(start, per);
            hist += &rhs * mu_d;
        }
        x.rows_mut(off, per).copy_from(&rhs);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayTerm, FourierMatrix, FourierSeries, PeriodicDde};
    use crate::scalar::cx;
    use crate::space::{assemble, build_mesh};

    #[test]
    fn matches_dense_solve_with_history() {
        let b = FourierMatrix::new(
            2,
            2,
            vec![
                FourierSeries { a0: 0.3, cos: vec![0.1], sin: vec![] },
                FourierSeries::constant(-0.2),
                FourierSeries::constant(0.05),
                FourierSeries { a0: 0.1, cos: vec![], sin: vec![0.2] },
            ],
        )
        .unwrap();
        let dde = PeriodicDde::new(
            2,
            3,
            FourierMatrix::constant(&DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.0])),
            vec![DelayTerm::discrete(0.5, b.clone()), DelayTerm::discrete(2.5, b.scaled(0.5))],
        )
        .unwrap();
        let ops = assemble(&dde, build_mesh(&dde, 2, 4).unwrap()).unwrap();
        let mu = cx(0.7, -0.4);
        let rhs = DMatrix::from_fn(ops.ndof(), 3, |i, j| cx((i * 7 + j) as f64 * 0.01, (i as f64).sin()));
        let res = Resolvent::new(&ops, mu).unwrap();
        let x = res.solve(&rhs);
        let full = DMatrix::identity(ops.ndof(), ops.ndof()) - ops.m_of(mu);
        let resid = crate::linalg::max_abs(&(&full * &x - &rhs));
        assert!(resid < 1e-12, "{resid}");
        let (dense, _) = lu_logdet(&full.lu());
        let diff = dense - res.logdet();
        let turns = diff.im / (2.0 * std::f64::consts::PI);
        assert!(diff.re.abs() < 1e-10 && (turns - turns.round()).abs() < 1e-10, "{diff}");
    }
}
