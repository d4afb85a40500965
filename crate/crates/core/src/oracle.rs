//! Brute-force references: the dense discretized monodromy matrix and the
//! scalar characteristic equation of autonomous problems.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cluster, eigenvalues};
use crate::model::PeriodicDde;
use crate::scalar::{cabs, cexp, cx, Cx, Scalar};
use crate::space::{assemble, build_mesh, DiscretizedOperators};

/// Dense monodromy matrix on the same degrees of freedom as `ops`.
#[derive(Debug, Clone)]
pub struct MonodromyMatrix<T: Scalar> {
    pub matrix: DMatrix<Cx<T>>,
    pub k: usize,
    pub degree: usize,
}

/// `[I - S G0 - M0]^{-1} [S G1 + L]`.
pub fn discretize_t<T: Scalar>(ops: &DiscretizedOperators<T>) -> Result<DMatrix<Cx<T>>> {
    let n = ops.ndof();
    let base = DMatrix::<Cx<T>>::identity(n, n) - &ops.s_hat * &ops.g_minus0 - &ops.m0;
    let rhs = &ops.s_hat * &ops.g_minus1 + &ops.l_hat;
    base.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - S Gamma_-(0) - M(0) is not invertible".into()))
}

pub fn monodromy_matrix<T: Scalar>(ops: &DiscretizedOperators<T>) -> Result<MonodromyMatrix<T>> {
    Ok(MonodromyMatrix {
        matrix: discretize_t(ops)?,
        k: ops.k(),
        degree: ops.mesh.degree(),
    })
}

/// Eigenvalues with `|lambda| >= min_abs_lambda`, clustered at relative
/// distance `1e-6`, sorted by decreasing modulus.
pub fn oracle_multipliers<T: Scalar>(t_hat: &DMatrix<Cx<T>>, min_abs_lambda: T) -> Result<Vec<(Cx<T>, usize)>> {
    if !(min_abs_lambda > T::zero()) {
        return Err(invalid("min_abs_lambda must be positive"));
    }
    let big: Vec<Cx<T>> = eigenvalues(t_hat)
        .into_iter()
        .filter(|l| cabs(*l) >= min_abs_lambda)
        .collect();
    let mut out = cluster(&big, T::tol(1e-6));
    sort_by_modulus_desc(&mut out);
    Ok(out)
}

/// Result of comparing the oracle at degree `p` and `p + 8`.
#[derive(Debug, Clone)]
pub struct StableSpectrum<T: Scalar> {
    /// Eigenvalues that moved less than the tolerance.
    pub accepted: Vec<(Cx<T>, usize)>,
    /// Degree-`p` eigenvalues without a close partner at `p + 8`.
    pub rejected: Vec<(Cx<T>, usize)>,
    pub coarse: Vec<(Cx<T>, usize)>,
    pub fine: Vec<(Cx<T>, usize)>,
}

/// Degree increment of the refinement comparison.
pub const REFINEMENT_STEP: usize = 8;

/// Oracle multipliers at degrees `p` and `p + 8`; a coarse eigenvalue is
/// accepted when a fine one lies within `1e-6` relative.
pub fn stable_oracle_multipliers<T: Scalar>(
    dde: &PeriodicDde<T>,
    k: usize,
    p: usize,
    min_abs_lambda: T,
) -> Result<StableSpectrum<T>> {
    let run = |deg: usize| -> Result<Vec<(Cx<T>, usize)>> {
        let ops = assemble(dde, build_mesh(dde, k, deg)?)?;
        oracle_multipliers(&discretize_t(&ops)?, min_abs_lambda)
    };
    let coarse = run(p)?;
    let fine = run(p + REFINEMENT_STEP)?;
    let tol = T::tol(1e-6);
    let (accepted, rejected) = coarse.iter().partition(|(l, _)| {
        fine.iter()
            .any(|(f, _)| cabs(*f - *l) <= tol * cabs(*l).max(T::one()))
    });
    Ok(StableSpectrum {
        accepted,
        rejected,
        coarse,
        fine,
    })
}

/// Multipliers `e^s` of the `count` rightmost roots of
/// `s - a - sum b_j e^{-s tau_j} = 0`, by Newton from a grid of starts.
pub fn constant_coefficient_reference(a: Cx<f64>, terms: &[(Cx<f64>, f64)], count: usize) -> Result<Vec<Cx<f64>>> {
    Ok(characteristic_roots(a, terms, count)?
        .into_iter()
        .map(cexp)
        .collect())
}

/// The roots `s` behind [`constant_coefficient_reference`], sorted by
/// decreasing real part.
pub fn characteristic_roots(a: Cx<f64>, terms: &[(Cx<f64>, f64)], count: usize) -> Result<Vec<Cx<f64>>> {
    if terms.iter().any(|(_, tau)| !(*tau >= 0.0) || !tau.is_finite()) {
        return Err(invalid("delays must be finite and non-negative"));
    }
    let f = |s: Cx<f64>| {
        let mut v = s - a;
        let mut d = cx(1.0, 0.0);
        for &(b, tau) in terms {
            let e = b * cexp(-s * tau);
            v -= e;
            d += e * tau;
        }
        (v, d)
    };
    let live: Vec<_> = terms.iter().filter(|(b, _)| b.norm() > 0.0).collect();
    if live.is_empty() {
        return Ok(if count > 0 { vec![a] } else { Vec::new() });
    }
    // roots have Re s bounded above by |a| + sum |b| when Re s >= 0
    let bound = a.norm() + live.iter().map(|(b, _)| b.norm()).sum::<f64>() + 1.0;
    let tau_max = live.iter().map(|(_, t)| *t).fold(0.0, f64::max).max(1e-3);
    let im_span = (2.0 * std::f64::consts::PI * (count as f64 + 2.0) / tau_max).max(bound) + bound;
    let mut roots: Vec<Cx<f64>> = Vec::new();
    let (nre, nim) = (24, 96);
    for i in 0..nre {
        let x = -4.0 * bound + 5.0 * bound * i as f64 / (nre - 1) as f64;
        for j in 0..nim {
            let y = -im_span + 2.0 * im_span * j as f64 / (nim - 1) as f64;
            let Some(s) = newton(&f, cx(x, y)) else {
                continue;
            };
            if !roots.iter().any(|r| (r - s).norm() < 1e-10 * s.norm().max(1.0)) {
                roots.push(s);
            }
        }
    }
    roots.sort_by(|p, q| {
        q.re.partial_cmp(&p.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(q.im.partial_cmp(&p.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    roots.truncate(count);
    Ok(roots)
}

fn newton(f: &impl Fn(Cx<f64>) -> (Cx<f64>, Cx<f64>), start: Cx<f64>) -> Option<Cx<f64>> {
    let mut s = start;
    for _ in 0..100 {
        let (v, d) = f(s);
        if d.norm() == 0.0 || !s.re.is_finite() {
            return None;
        }
        let step = v / d;
        s -= step;
        if step.norm() <= 1e-15 * s.norm().max(1.0) {
            break;
        }
    }
    let (v, _) = f(s);
    (s.re.is_finite() && s.im.is_finite() && v.norm() < 1e-12 * s.norm().max(1.0)).then_some(s)
}

fn sort_by_modulus_desc<T: Scalar>(v: &mut [(Cx<T>, usize)]) {
    v.sort_by(|a, b| {
        let ka = (cabs(a.0).to_f64_lossy(), a.0.im.to_f64_lossy());
        let kb = (cabs(b.0).to_f64_lossy(), b.0.im.to_f64_lossy());
        kb.partial_cmp(&ka).unwrap_or(std::cmp::Ordering::Equal)
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayTerm, FourierMatrix, FourierSeries};

    fn ops(dde: &PeriodicDde<f64>, k: usize, p: usize) -> DiscretizedOperators<f64> {
        assemble(dde, build_mesh(dde, k, p).unwrap()).unwrap()
    }

    #[test]
    fn ode_flow() {
        let dde = PeriodicDde::new(1, 1, FourierMatrix::scalar(0.7), vec![]).unwrap();
        let t = discretize_t(&ops(&dde, 2, 12)).unwrap();
        let m = oracle_multipliers(&t, 1e-3).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0].0 - cx(0.7f64.exp(), 0.0)).norm() < 1e-10);
    }

    #[test]
    fn zero_problem_has_unit_multiplier() {
        let dde = PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![]).unwrap();
        let m = oracle_multipliers(&discretize_t(&ops(&dde, 3, 6)).unwrap(), 1e-3).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0].0 - cx(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn periodic_scalar_ode() {
        let a = FourierMatrix::new(1, 1, vec![FourierSeries { a0: 0.25, cos: vec![1.0], sin: vec![] }]).unwrap();
        let dde = PeriodicDde::new(1, 1, a, vec![]).unwrap();
        let m = oracle_multipliers(&discretize_t(&ops(&dde, 2, 16)).unwrap(), 1e-3).unwrap();
        assert!((m[0].0.re - 0.25f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn delay_half_dominant() {
        let dde = PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0))]).unwrap();
        let want = constant_coefficient_reference(cx(0.0, 0.0), &[(cx(1.0, 0.0), 0.5)], 1).unwrap()[0];
        let m = oracle_multipliers(&discretize_t(&ops(&dde, 2, 24)).unwrap(), 0.5).unwrap();
        assert!((m[0].0 - want).norm() / want.norm() < 1e-8, "{:?} vs {want}", m[0]);
    }

    #[test]
    fn two_period_iterate_is_continuous() {
        let dde = PeriodicDde::new(
            1,
            2,
            FourierMatrix::scalar(-0.2),
            vec![DelayTerm::discrete(1.5, FourierMatrix::scalar(0.4))],
        )
        .unwrap();
        let o = ops(&dde, 3, 10);
        let t = discretize_t(&o).unwrap();
        let t2 = &t * &t;
        let x = nalgebra::DVector::from_fn(o.ndof(), |i, _| cx(((i * 37 % 11) as f64 - 5.0) / 7.0, 0.0));
        let y = crate::space::PiecewiseFunction::new(o.mesh.clone(), &t2 * x).unwrap();
        assert!(y.max_jump() < 1e-8 * y.sup_norm().max(1.0), "{}", y.max_jump());
    }

    #[test]
    fn references() {
        let s = characteristic_roots(cx(0.0, 0.0), &[(cx(1.0, 0.0), 0.5)], 3).unwrap();
        assert!((s[0] - cx(0.70347, 0.0)).norm() < 1e-5, "{s:?}");
        let (v, _) = (s[0] - cexp(-s[0] * 0.5), ());
        assert!(v.norm() < 1e-12);
        let s = characteristic_roots(cx(-0.4, 0.0), &[], 2).unwrap();
        assert_eq!(s, vec![cx(-0.4, 0.0)]);
    }

    #[test]
    fn refinement_filter_keeps_true_multipliers() {
        let dde = PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0))]).unwrap();
        let st: StableSpectrum<f64> = stable_oracle_multipliers(&dde, 2, 16, 0.5).unwrap();
        assert!(!st.accepted.is_empty());
        assert!((st.accepted[0].0.re - 2.0208).abs() < 1e-3);
    }
}
