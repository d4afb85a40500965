//! The extended characteristic matrix `Delta_k(mu)`, its derivatives and
//! log-determinant, and the numerical check of the equivalence
//! `F G E = H` behind it.

use nalgebra::{DMatrix, Dyn, LU};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{norm_inf, trace};
use crate::resolvent::{lu_logdet, singular_threshold, Resolvent};
use crate::scalar::{carg, cexp, re, Cx, Scalar};
use crate::space::DiscretizedOperators;

/// `Delta_k(mu)` with its factorization.
pub struct CharMatrixEval<T: Scalar> {
    pub mu: Cx<T>,
    pub delta: DMatrix<Cx<T>>,
    pub lu: LU<Cx<T>, Dyn, Dyn>,
    /// `log det Delta_k(mu)`; the imaginary part is the unwrapped sum of
    /// pivot arguments.
    pub logdet: Cx<T>,
    /// Smallest over largest pivot modulus of `delta`.
    pub pivot_ratio: T,
    resolvent: Resolvent<T>,
    /// `[I - M(mu)]^{-1} S`.
    x: DMatrix<Cx<T>>,
}

impl<T: Scalar> CharMatrixEval<T> {
    pub fn det(&self) -> Cx<T> {
        cexp(self.logdet)
    }

    /// Phase of the determinant in `(-pi, pi]`.
    pub fn phase(&self) -> T {
        carg(self.det())
    }

    pub fn resolvent(&self) -> &Resolvent<T> {
        &self.resolvent
    }

    pub fn resolvent_times_s(&self) -> &DMatrix<Cx<T>> {
        &self.x
    }

    /// Whether `delta` is invertible to working precision.
    pub fn is_regular(&self) -> bool {
        self.pivot_ratio > singular_threshold::<T>(self.delta.nrows())
    }
}

/// Evaluates `Delta_k(mu) = I - Gamma_-(mu) [I - M(mu)]^{-1} S`.
pub fn evaluate<T: Scalar>(ops: &DiscretizedOperators<T>, mu: Cx<T>) -> Result<CharMatrixEval<T>> {
    let resolvent = Resolvent::new(ops, mu)?;
    let x = resolvent.solve(&ops.s_hat);
    let delta = delta_from(ops, mu, &x);
    let lu = delta.clone().lu();
    let (logdet, pivot_ratio) = lu_logdet(&lu);
    Ok(CharMatrixEval {
        mu,
        delta,
        lu,
        logdet,
        pivot_ratio,
        resolvent,
        x,
    })
}

fn delta_from<T: Scalar>(ops: &DiscretizedOperators<T>, mu: Cx<T>, x: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    let nk = ops.grid_len();
    let mut delta = -(&ops.g_minus0 * x + (&ops.g_minus1 * x) * mu);
    for i in 0..nk {
        delta[(i, i)] += re(T::one());
    }
    delta
}

/// `Delta_k^{(0)}, ..., Delta_k^{(jmax)}` at one point.
#[derive(Debug, Clone)]
pub struct DerivativeStack<T: Scalar> {
    pub mu: Cx<T>,
    pub derivs: Vec<DMatrix<Cx<T>>>,
}

impl<T: Scalar> DerivativeStack<T> {
    /// Taylor coefficients `Delta^{(j)} / j!`.
    pub fn taylor(&self) -> Vec<DMatrix<Cx<T>>> {
        let mut fact = T::one();
        self.derivs
            .iter()
            .enumerate()
            .map(|(j, d)| {
                if j > 0 {
                    fact *= T::from_count(j);
                }
                d / re(fact)
            })
            .collect()
    }
}

/// Exact derivatives from the affine dependence of `M` and `Gamma_-` on
/// `mu`: with `X_j = j! (N L)^j N S`,
/// `Delta^{(j)} = -Gamma_-(mu) X_j - j G1 X_{j-1}`.
pub fn derivatives<T: Scalar>(ops: &DiscretizedOperators<T>, mu: Cx<T>, jmax: usize) -> Result<DerivativeStack<T>> {
    let resolvent = Resolvent::new(ops, mu)?;
    let x0 = resolvent.solve(&ops.s_hat);
    Ok(derivatives_from(ops, &resolvent, x0, jmax))
}

pub(crate) fn derivatives_from<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    resolvent: &Resolvent<T>,
    x0: DMatrix<Cx<T>>,
    jmax: usize,
) -> DerivativeStack<T> {
    let mu = resolvent.mu();
    let gamma = ops.gamma_minus_of(mu);
    let mut derivs = vec![delta_from(ops, mu, &x0)];
    let mut prev = x0;
    for j in 1..=jmax {
        let jj = re(T::from_count(j));
        let xj = resolvent.solve(&(&ops.l_hat * &prev)) * jj;
        derivs.push(-(&gamma * &xj) - (&ops.g_minus1 * &prev) * jj);
        prev = xj;
    }
    DerivativeStack { mu, derivs }
}

impl<T: Scalar> CharMatrixEval<T> {
    /// Derivative stack reusing this evaluation's factorization.
    pub fn derivatives(&self, ops: &DiscretizedOperators<T>, jmax: usize) -> DerivativeStack<T> {
        derivatives_from(ops, &self.resolvent, self.x.clone(), jmax)
    }
}

/// `tr(Delta^{-1} Delta')` and its derivative at one point. `None` when
/// `Delta` is singular to working precision.
pub(crate) fn log_derivative<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    mu: Cx<T>,
    with_second: bool,
) -> Result<(Option<(Cx<T>, Cx<T>)>, CharMatrixEval<T>)> {
    let ev = evaluate(ops, mu)?;
    let stack = ev.derivatives(ops, if with_second { 2 } else { 1 });
    if !ev.is_regular() {
        return Ok((None, ev));
    }
    let Some(a) = ev.lu.solve(&stack.derivs[1]) else {
        return Ok((None, ev));
    };
    let h = trace(&a);
    let dh = if with_second {
        match ev.lu.solve(&stack.derivs[2]) {
            Some(b) => trace(&b) - trace(&(&a * &a)),
            None => return Ok((None, ev)),
        }
    } else {
        re(T::zero())
    };
    Ok((Some((h, dh)), ev))
}

/// One row of [`logdet_grid`].
#[derive(Debug, Clone)]
pub struct LogdetSample<T: Scalar> {
    pub mu: Cx<T>,
    pub logdet: Option<Cx<T>>,
    pub phase: Option<T>,
    /// `"ok"`, or the reason the point could not be evaluated.
    pub status: String,
}

/// `log det Delta_k` on a list of points, in input order. Failures are
/// recorded per point.
pub fn logdet_grid<T: Scalar>(ops: &DiscretizedOperators<T>, mus: &[Cx<T>]) -> Vec<LogdetSample<T>> {
    mus.par_iter()
        .map(|&mu| match evaluate(ops, mu) {
            Ok(ev) => LogdetSample {
                mu,
                logdet: Some(ev.logdet),
                phase: Some(ev.phase()),
                status: "ok".into(),
            },
            Err(Error::RegionViolation { .. }) => LogdetSample {
                mu,
                logdet: None,
                phase: None,
                status: "region-violation".into(),
            },
            Err(e) => LogdetSample {
                mu,
                logdet: None,
                phase: None,
                status: format!("error: {e}"),
            },
        })
        .collect()
}

/// Winding number of `det Delta_k` along a closed polygon of samples,
/// from successive phase increments of the pivot sum.
pub fn phase_winding<T: Scalar>(samples: &[LogdetSample<T>]) -> Option<i64> {
    let mut total = T::zero();
    let pi = T::pi();
    let two_pi = T::two_pi();
    let n = samples.len();
    for i in 0..n {
        let a = samples[i].phase?;
        let b = samples[(i + 1) % n].phase?;
        let mut d = b - a;
        while d > pi {
            d -= two_pi;
        }
        while d <= -pi {
            d += two_pi;
        }
        total += d;
    }
    Some((total / two_pi).round().to_f64_lossy() as i64)
}

/// Residuals of the discretized equivalence `F G E = diag(Delta, I)`.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceReport<T: Scalar> {
    /// `|F G E - H| / |H|`.
    pub fgh_residual: T,
    /// `|E E^{-1} - I|`.
    pub e_inverse_residual: T,
    /// `|F F^{-1} - I|`.
    pub f_inverse_residual: T,
    /// `|(I - mu T) - [I - S G0 - M0]^{-1} [I - S Gamma_-(mu) - M(mu)]|`
    /// with `T` assembled independently.
    pub factorization_residual: T,
}

/// Builds `E`, `F`, `G = I - mu T` and `H` as dense matrices and measures
/// the identities that relate them (infinity norms).
pub fn verify_equivalence<T: Scalar>(ops: &DiscretizedOperators<T>, mu: Cx<T>) -> Result<EquivalenceReport<T>> {
    let n = ops.ndof();
    let nk = ops.grid_len();
    let mesh = &ops.mesh;
    let one = re(T::one());
    let eye = DMatrix::<Cx<T>>::identity(n, n);

    // C_{k,0}: every dof except the left node of each current J_i
    let mut left = vec![false; n];
    for i in 0..mesh.k() {
        let e = mesh.subinterval_elements(mesh.current_subinterval(i)).start;
        for c in 0..mesh.dim() {
            left[mesh.dof(e, 0, c)] = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| !left[i]).collect();
    let mut p = DMatrix::<Cx<T>>::zeros(n, free.len());
    for (j, &i) in free.iter().enumerate() {
        p[(i, j)] = one;
    }

    let resolvent = Resolvent::new(ops, mu)?;
    let m_mu = ops.m_of(mu);
    let gamma = ops.gamma_minus_of(mu);
    let s = &ops.s_hat;

    let mut sv_phi = DMatrix::zeros(n, n);
    sv_phi.view_mut((0, 0), (n, nk)).copy_from(s);
    sv_phi.view_mut((0, nk), (n, n - nk)).copy_from(&p);
    let e = resolvent.solve(&sv_phi);

    let proj = &eye - s * &ops.g_plus;
    let mut e_inv = DMatrix::zeros(n, n);
    e_inv.view_mut((0, 0), (nk, n)).copy_from(&ops.g_plus);
    e_inv
        .view_mut((nk, 0), (n - nk, n))
        .copy_from(&(p.transpose() * (&proj - &m_mu)));

    let base = &eye - s * &ops.g_minus0 - &ops.m0;
    let base_lu = base.clone().lu();
    let singular = || Error::Singular("I - S Gamma_-(0) - M(0) is not invertible".into());
    let shifted = &eye - s * &gamma - &m_mu;
    let g = base_lu.solve(&shifted).ok_or_else(singular)?;

    let phi_op = &proj - &ops.m0;
    let mut f = DMatrix::zeros(n, n);
    f.view_mut((0, 0), (nk, n))
        .copy_from(&(&ops.g_plus - &ops.g_minus0 + &gamma * resolvent.solve(&phi_op)));
    f.view_mut((nk, 0), (n - nk, n)).copy_from(&(p.transpose() * &phi_op));

    let n_p = resolvent.solve(&p);
    let mut f_rhs = DMatrix::zeros(n, n);
    f_rhs.view_mut((0, 0), (n, nk)).copy_from(s);
    f_rhs
        .view_mut((0, nk), (n, n - nk))
        .copy_from(&(&p - s * (&gamma * &n_p)));
    let f_inv = base_lu.solve(&f_rhs).ok_or_else(singular)?;

    let ev = evaluate(ops, mu)?;
    let mut h = DMatrix::<Cx<T>>::identity(n, n);
    h.view_mut((0, 0), (nk, nk)).copy_from(&ev.delta);

    let fge = &f * &g * &e;
    let t_hat = crate::oracle::discretize_t(ops)?;
    let factorization = (&eye - &t_hat * mu) - &g;

    Ok(EquivalenceReport {
        fgh_residual: norm_inf(&(&fge - &h)) / norm_inf(&h),
        e_inverse_residual: norm_inf(&(&e * &e_inv - &eye)),
        f_inverse_residual: norm_inf(&(&f * &f_inv - &eye)),
        factorization_residual: norm_inf(&factorization),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayTerm, FourierMatrix, PeriodicDde};
    use crate::scalar::cx;
    use crate::space::{assemble, build_mesh};

    fn zero_ops(k: usize) -> DiscretizedOperators<f64> {
        let dde = PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![]).unwrap();
        assemble(&dde, build_mesh(&dde, k, 4).unwrap()).unwrap()
    }

    fn delay_half_ops(k: usize, p: usize) -> DiscretizedOperators<f64> {
        let dde = PeriodicDde::new(
            1,
            1,
            FourierMatrix::zeros(1, 1),
            vec![DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0))],
        )
        .unwrap();
        assemble(&dde, build_mesh(&dde, k, p).unwrap()).unwrap()
    }

    #[test]
    fn zero_problem_determinant() {
        for k in [1, 2, 5] {
            let ops = zero_ops(k);
            for mu in [cx(0.3, 0.1), cx(-1.5, 0.7), cx(0.0, 0.0)] {
                let d = evaluate(&ops, mu).unwrap().det();
                assert!((d - (cx(1.0, 0.0) - mu)).norm() < 1e-14, "k={k}: {d}");
            }
            let st = derivatives(&ops, cx(0.2, 0.3), 2).unwrap();
            assert!(st.derivs[2].iter().all(|z| z.norm() < 1e-15));
            let nonzero = st.derivs[1].iter().filter(|z| z.norm() > 0.0).count();
            assert_eq!(nonzero, 1);
        }
    }

    #[test]
    fn causality_at_origin() {
        for k in [1, 2, 3] {
            let ops = delay_half_ops(k, 10);
            let ev = evaluate(&ops, cx(0.0, 0.0)).unwrap();
            assert!(ev.logdet.norm() < 1e-13);
            for i in 0..k {
                for j in i..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ev.delta[(i, j)] - cx(want, 0.0)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let ops = delay_half_ops(3, 8);
        let mu = cx(0.4, 0.9);
        let a = evaluate(&ops, mu).unwrap().delta;
        let b = evaluate(&ops, mu.conj()).unwrap().delta;
        assert!(crate::linalg::max_abs(&(a.map(|z| z.conj()) - b)) < 1e-13);
    }

    #[test]
    fn winding_on_phase_grid() {
        let ops = zero_ops(3);
        let circle = |r: f64| -> Vec<Cx<f64>> {
            (0..64)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
                    cx(r * t.cos(), r * t.sin())
                })
                .collect()
        };
        assert_eq!(phase_winding(&logdet_grid(&ops, &circle(0.9))), Some(0));
        assert_eq!(phase_winding(&logdet_grid(&ops, &circle(1.1))), Some(1));
    }

    #[test]
    fn equivalence_at_origin() {
        let ops = delay_half_ops(2, 8);
        let rep = verify_equivalence(&ops, cx(0.0, 0.0)).unwrap();
        assert!(rep.fgh_residual < 1e-10, "{rep:?}");
        assert!(rep.e_inverse_residual < 1e-10);
        assert!(rep.f_inverse_residual < 1e-10);
    }
}
