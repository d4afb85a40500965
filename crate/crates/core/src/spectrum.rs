//! Roots of `det Delta_k(mu)`: contour counting, Newton refinement,
//! multiplicities, Jordan chains, eigenfunctions, and the poles of
//! `Delta_k` when `k` is too small.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::charmat::{derivatives, evaluate, log_derivative};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cluster, eigenvalues, monic_roots, null_space, vec_norm};
use crate::resolvent::Resolvent;
use crate::scalar::{cabs, carg, cis, re, Cx, Scalar};
use crate::space::{DiscretizedOperators, PiecewiseFunction};

/// Argument-principle count of roots inside a circle.
#[derive(Debug, Clone, Copy)]
pub struct ContourReport<T: Scalar> {
    pub center: Cx<T>,
    pub radius: T,
    pub winding: i64,
    pub samples: usize,
    /// `|quadrature - winding|`.
    pub residual: T,
}

impl<T: Scalar> ContourReport<T> {
    pub fn reliable(&self) -> bool {
        self.residual < T::lit(0.25)
    }
}

struct Contour<T: Scalar> {
    center: Cx<T>,
    radius: T,
    /// `(zeta, tr(Delta^{-1} Delta')(zeta))`; `None` marks a root on the
    /// contour.
    points: Vec<(Cx<T>, Option<Cx<T>>)>,
}

impl<T: Scalar> Contour<T> {
    fn sample(ops: &DiscretizedOperators<T>, center: Cx<T>, radius: T, n: usize) -> Result<Self> {
        let points = Self::points(ops, center, radius, n, 0, 1)?;
        Ok(Self {
            center,
            radius,
            points,
        })
    }

    fn points(
        ops: &DiscretizedOperators<T>,
        center: Cx<T>,
        radius: T,
        n: usize,
        first: usize,
        step: usize,
    ) -> Result<Vec<(Cx<T>, Option<Cx<T>>)>> {
        (first..n)
            .step_by(step)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&j| {
                let zeta = center + cis(T::two_pi() * T::from_count(j) / T::from_count(n)) * radius;
                let (h, _) = log_derivative(ops, zeta, false)?;
                Ok((zeta, h.map(|v| v.0)))
            })
            .collect()
    }

    /// Doubles the sample count, reusing the existing points.
    fn refine(&mut self, ops: &DiscretizedOperators<T>) -> Result<()> {
        let n = self.points.len() * 2;
        let odd = Self::points(ops, self.center, self.radius, n, 1, 2)?;
        let even = std::mem::take(&mut self.points);
        self.points = even
            .into_iter()
            .zip(odd)
            .flat_map(|(a, b)| [a, b])
            .collect();
        Ok(())
    }

    /// `(1/N) sum h(zeta) (zeta - c) w^j` with `w = (zeta - c) / scale`:
    /// the power sums of `(mu_l - c) / scale` over the enclosed roots.
    fn moment(&self, c: Cx<T>, scale: T, j: usize) -> Option<Cx<T>> {
        let mut acc = re(T::zero());
        for &(zeta, h) in &self.points {
            let d = zeta - c;
            let w = d / scale;
            let mut wj = re(T::one());
            for _ in 0..j {
                wj *= w;
            }
            acc += h? * d * wj;
        }
        Some(acc / T::from_count(self.points.len()))
    }

    fn report(&self) -> ContourReport<T> {
        let q = self.moment(self.center, T::one(), 0);
        let (winding, residual) = match q {
            Some(q) => {
                let w = q.re.round();
                (w.to_f64_lossy() as i64, cabs(q - re(w)))
            }
            None => (0, T::lit(f64::INFINITY)),
        };
        ContourReport {
            center: self.center,
            radius: self.radius,
            winding,
            samples: self.points.len(),
            residual,
        }
    }
}

/// Single-pass count with `samples` trapezoid nodes.
pub fn count_roots<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    center: Cx<T>,
    radius: T,
    samples: usize,
) -> Result<ContourReport<T>> {
    if !(radius > T::zero()) || samples < 4 {
        return Err(invalid("contour needs a positive radius and at least 4 samples"));
    }
    Ok(Contour::sample(ops, center, radius, samples)?.report())
}

const MAX_SAMPLES: usize = 2048;

/// Doubles the samples until the quadrature is near an integer and stable.
fn adaptive_contour<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    center: Cx<T>,
    radius: T,
    start: usize,
) -> Result<(Contour<T>, ContourReport<T>)> {
    let mut contour = Contour::sample(ops, center, radius, start)?;
    let mut prev = contour.report();
    loop {
        contour.refine(ops)?;
        let rep = contour.report();
        let settled = rep.residual < T::lit(0.05)
            && rep.winding == prev.winding
            && (rep.residual - prev.residual).absval() < T::lit(0.05);
        if settled || contour.points.len() >= MAX_SAMPLES {
            return Ok((contour, rep));
        }
        prev = rep;
    }
}

/// One multiplier with its Jordan structure.
#[derive(Debug, Clone)]
pub struct MultiplierRecord<T: Scalar> {
    pub mu_star: Cx<T>,
    pub lambda: Cx<T>,
    pub alg_mult: usize,
    pub geom_mult: usize,
    /// Each chain is `(y_0, ..., y_{len-1})` in `C^{nk}`.
    pub chains: Vec<Vec<DVector<Cx<T>>>>,
    /// Per chain, `(x_0, ..., x_{len-1})` with `x_0` the eigenfunction.
    pub eigenfunctions: Vec<Vec<PiecewiseFunction<T>>>,
    /// Smallest singular value of `Delta_k(mu_star)` over `max(1, largest)`.
    pub residual: T,
    /// Diagnostics; empty when every check passed.
    pub flags: Vec<String>,
}

impl<T: Scalar> MultiplierRecord<T> {
    pub fn max_chain_len(&self) -> usize {
        self.chains.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Full output of [`find_multipliers_report`].
#[derive(Debug, Clone)]
pub struct SearchReport<T: Scalar> {
    pub records: Vec<MultiplierRecord<T>>,
    /// Count on the search circle itself.
    pub contour: ContourReport<T>,
    pub flags: Vec<String>,
}

/// Multipliers `lambda = 1 / mu` with `|mu| <= r_search`, sorted by
/// `(|mu|, arg mu)`.
pub fn find_multipliers<T: Scalar>(ops: &DiscretizedOperators<T>, r_search: T) -> Result<Vec<MultiplierRecord<T>>> {
    Ok(find_multipliers_report(ops, r_search)?.records)
}

const NEWTON_STEPS: usize = 50;
const MAX_DEPTH: usize = 6;
const MAX_MOMENT_ROOTS: usize = 6;

pub fn find_multipliers_report<T: Scalar>(ops: &DiscretizedOperators<T>, r_search: T) -> Result<SearchReport<T>> {
    let limit = ops.guaranteed_radius();
    if !(r_search > T::zero()) {
        return Err(invalid("search radius must be positive"));
    }
    if r_search > limit * T::lit(0.99) * (T::one() + T::lit(1e-12)) {
        return Err(invalid(format!(
            "search radius {:.6} exceeds 0.99 x the guaranteed radius {:.6} for k = {}",
            r_search.to_f64_lossy(),
            limit.to_f64_lossy(),
            ops.k()
        )));
    }
    let pole_limit: OnceCell<T> = OnceCell::new();
    let allowed = || {
        *pole_limit.get_or_init(|| {
            let poles = locate_poles(ops, T::lit(f64::INFINITY));
            let nearest = poles.poles.first().map(|p| cabs(p.0)).unwrap_or(T::lit(f64::INFINITY));
            limit.max(nearest * T::lit(0.9))
        })
    };

    let mut flags = Vec::new();
    let mut found: Vec<(Cx<T>, usize)> = Vec::new();
    let mut stack = vec![(re(T::zero()), r_search, 0usize)];
    let mut top: Option<ContourReport<T>> = None;
    while let Some((c, r, depth)) = stack.pop() {
        let (contour, rep) = adaptive_contour(ops, c, r, 64)?;
        if top.is_none() {
            top = Some(rep);
        }
        if !rep.reliable() {
            flags.push(format!(
                "unreliable count on |mu - ({:.4}, {:.4})| = {:.4}: residual {:.3}",
                c.re.to_f64_lossy(),
                c.im.to_f64_lossy(),
                r.to_f64_lossy(),
                rep.residual.to_f64_lossy()
            ));
        }
        if rep.winding <= 0 {
            continue;
        }
        if let Some(roots) = resolve_disk(ops, &contour, rep.winding as usize)? {
            found.extend(roots);
            continue;
        }
        if depth >= MAX_DEPTH {
            flags.push(format!(
                "could not separate {} roots near ({:.6}, {:.6})",
                rep.winding,
                c.re.to_f64_lossy(),
                c.im.to_f64_lossy()
            ));
            continue;
        }
        let child_r = r * T::lit(0.55);
        let ring = r * T::lit(0.75f64.sqrt());
        let mut centers = vec![c];
        for j in 0..6 {
            centers.push(c + cis(T::pi() * T::from_count(j) / T::lit(3.0)) * ring);
        }
        for cc in centers {
            if cabs(cc) - child_r >= r_search {
                continue;
            }
            let mut rr = child_r;
            if cabs(cc) + rr > limit * T::lit(0.99) {
                let room = allowed() - cabs(cc);
                rr = rr.min(room);
                if !(rr > T::zero()) {
                    continue;
                }
            }
            stack.push((cc, rr, depth + 1));
        }
    }

    // merge duplicates from overlapping disks
    let mut merged: Vec<(Cx<T>, usize)> = Vec::new();
    for (mu, q) in found {
        let tol = T::tol(1e-6) * cabs(mu).max(T::one());
        if !merged.iter().any(|(m, _)| cabs(*m - mu) < tol) {
            merged.push((mu, q));
        }
    }
    merged.retain(|(mu, _)| cabs(*mu) <= r_search);
    merged.sort_by(|a, b| {
        let ka = (cabs(a.0).to_f64_lossy(), carg(a.0).to_f64_lossy());
        let kb = (cabs(b.0).to_f64_lossy(), carg(b.0).to_f64_lossy());
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let contour = top.expect("search circle was sampled");
    let total: usize = merged.iter().map(|(_, q)| *q).sum();
    if contour.reliable() && total as i64 != contour.winding {
        flags.push(format!(
            "found {total} roots counted with multiplicity but the search circle winds {}",
            contour.winding
        ));
    }
    let records = merged
        .into_iter()
        .map(|(mu, q)| build_record(ops, mu, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchReport {
        records,
        contour,
        flags,
    })
}

/// Roots inside one contour from its moments, refined by Newton and
/// classified by small-circle windings. `None` when the disk must be split.
fn resolve_disk<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    contour: &Contour<T>,
    count: usize,
) -> Result<Option<Vec<(Cx<T>, usize)>>> {
    if count > MAX_MOMENT_ROOTS {
        return Ok(None);
    }
    let (c, r) = (contour.center, contour.radius);
    let mut sums = Vec::with_capacity(count);
    for j in 1..=count {
        match contour.moment(c, r, j) {
            Some(s) => sums.push(s),
            None => return Ok(None),
        }
    }
    // Newton's identities: j e_j = sum_{i=1}^{j} (-1)^{i-1} e_{j-i} p_i
    let mut e = vec![re(T::one())];
    for j in 1..=count {
        let mut acc = re(T::zero());
        for i in 1..=j {
            let term = e[j - i] * sums[i - 1];
            acc += if i.is_multiple_of(2) { -term } else { term };
        }
        e.push(acc / T::from_count(j));
    }
    let coeffs: Vec<Cx<T>> = (0..count)
        .map(|i| {
            let j = count - i;
            if j.is_multiple_of(2) {
                e[j]
            } else {
                -e[j]
            }
        })
        .collect();
    let starts: Vec<Cx<T>> = monic_roots(&coeffs).into_iter().map(|z| c + z * r).collect();

    let rho = T::tol(1e-3);
    let mut roots: Vec<(Cx<T>, usize)> = Vec::new();
    for s in starts {
        let Some(mu) = newton(ops, s)? else {
            return Ok(None);
        };
        if roots.iter().any(|(m, _)| cabs(*m - mu) < rho * T::lit(2.0)) {
            continue;
        }
        let radius = rho * cabs(mu).max(T::one()).min(r);
        let (small, rep) = match adaptive_contour(ops, mu, radius, 32) {
            Ok(v) => v,
            Err(Error::RegionViolation { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if !rep.reliable() || rep.winding <= 0 {
            return Ok(None);
        }
        let q = rep.winding as usize;
        let centre = if q >= 2 {
            match small.moment(mu, T::one(), 1) {
                Some(shift) => mu + shift / T::from_count(q),
                None => mu,
            }
        } else {
            mu
        };
        roots.push((centre, q));
    }
    let inside: usize = roots
        .iter()
        .filter(|(mu, _)| cabs(*mu - c) < r)
        .map(|(_, q)| *q)
        .sum();
    let total: usize = roots.iter().map(|(_, q)| *q).sum();
    if inside != count || total != count {
        return Ok(None);
    }
    Ok(Some(roots))
}

/// Newton on `1 / tr(Delta^{-1} Delta')`, which has a simple zero at every
/// root of `det Delta`: `mu <- mu + h / h'`.
fn newton<T: Scalar>(ops: &DiscretizedOperators<T>, start: Cx<T>) -> Result<Option<Cx<T>>> {
    let mut mu = start;
    let tol = T::tol(1e-12);
    for _ in 0..NEWTON_STEPS {
        let (hd, _) = match log_derivative(ops, mu, true) {
            Ok(v) => v,
            Err(Error::RegionViolation { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let Some((h, dh)) = hd else {
            return Ok(Some(mu));
        };
        if cabs(dh) == T::zero() {
            return Ok(None);
        }
        let step = h / dh;
        if !step.re.to_f64_lossy().is_finite() || !step.im.to_f64_lossy().is_finite() {
            return Ok(Some(mu));
        }
        mu += step;
        if cabs(step) <= tol * cabs(mu).max(T::one()) {
            return Ok(Some(mu));
        }
    }
    Ok(None)
}

fn build_record<T: Scalar>(ops: &DiscretizedOperators<T>, mu: Cx<T>, alg: usize) -> Result<MultiplierRecord<T>> {
    let jr = jordan_chains(ops, mu, alg)?;
    let mut rec = MultiplierRecord {
        mu_star: mu,
        lambda: re(T::one()) / mu,
        alg_mult: alg,
        geom_mult: jr.geom_mult,
        chains: jr.chains,
        eigenfunctions: Vec::new(),
        residual: jr.smallest_singular_ratio,
        flags: jr.flags,
    };
    let (funcs, flags) = eigenfunctions(ops, &rec)?;
    rec.eigenfunctions = funcs;
    rec.flags.extend(flags);
    Ok(rec)
}

/// Jordan structure at a root.
#[derive(Debug, Clone)]
pub struct JordanResult<T: Scalar> {
    pub geom_mult: usize,
    pub chains: Vec<Vec<DVector<Cx<T>>>>,
    /// `dim ker T_j` of the block Toeplitz matrices, `j = 0..alg_mult`.
    pub kernel_dims: Vec<usize>,
    pub smallest_singular_ratio: T,
    pub flags: Vec<String>,
}

/// Relative singular-value threshold for numerical kernels.
pub const KERNEL_THRESHOLD: f64 = 1e-8;

/// Chains from the kernels of the block Toeplitz matrices
/// `T_j = [D_0; D_1 D_0; ...; D_j ... D_0]`, `D_i = Delta^{(i)} / i!`.
/// The number of chains of length at least `l` is
/// `dim ker T_{l-1} - dim ker T_{l-2}`.
pub fn jordan_chains<T: Scalar>(ops: &DiscretizedOperators<T>, mu_star: Cx<T>, alg_mult: usize) -> Result<JordanResult<T>> {
    if alg_mult == 0 {
        return Err(invalid("algebraic multiplicity must be at least 1"));
    }
    let nk = ops.grid_len();
    let taylor = derivatives(ops, mu_star, alg_mult.max(1))?.taylor();
    let thr = T::tol(KERNEL_THRESHOLD);
    let toeplitz = |j: usize| {
        let size = (j + 1) * nk;
        let mut t = DMatrix::zeros(size, size);
        for row in 0..=j {
            for col in 0..=row {
                t.view_mut((row * nk, col * nk), (nk, nk)).copy_from(&taylor[row - col]);
            }
        }
        t
    };

    let mut kernels = Vec::new();
    let mut dims = Vec::new();
    let mut ratio = T::zero();
    for j in 0..alg_mult {
        let (z, sv) = null_space(&toeplitz(j), thr, T::one());
        if j == 0 {
            let smax = sv.first().copied().unwrap_or(T::one()).max(T::one());
            ratio = sv.last().copied().unwrap_or(T::zero()) / smax;
        }
        let done = j > 0 && z.ncols() == dims[j - 1];
        dims.push(z.ncols());
        kernels.push(z);
        if done || dims[j] == 0 {
            break;
        }
    }
    let geom = dims[0];
    let mut at_least = vec![0usize; dims.len() + 2];
    for l in 1..=dims.len() {
        let prev = if l >= 2 { dims[l - 2] } else { 0 };
        at_least[l] = dims[l - 1].saturating_sub(prev);
    }

    let mut flags = Vec::new();
    let mut heads: Vec<DVector<Cx<T>>> = Vec::new();
    let mut chains: Vec<Vec<DVector<Cx<T>>>> = Vec::new();
    for l in (1..=dims.len()).rev() {
        let need = at_least[l].saturating_sub(at_least[l + 1]);
        if need == 0 {
            continue;
        }
        let z = &kernels[l - 1];
        let first = z.rows(0, nk).into_owned();
        let mut proj = first.clone();
        for h in &heads {
            let coef = h.adjoint() * &proj;
            proj -= h * coef;
        }
        let svd = nalgebra::SVD::new(proj, true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| {
            svd.singular_values[*b]
                .partial_cmp(&svd.singular_values[*a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let pinv = first.clone().pseudo_inverse(thr).map_err(|e| Error::Singular(e.to_string()))?;
        for &idx in order.iter().take(need) {
            let head: DVector<Cx<T>> = u.column(idx).into_owned();
            let stacked = z * (&pinv * &head);
            let chain: Vec<DVector<Cx<T>>> = (0..l).map(|b| stacked.rows(b * nk, nk).into_owned()).collect();
            heads.push(head);
            chains.push(chain);
        }
    }
    let total: usize = chains.iter().map(Vec::len).sum();
    if total != alg_mult {
        flags.push(format!(
            "chain lengths sum to {total} but the root has multiplicity {alg_mult}"
        ));
    }
    if geom != chains.len() {
        flags.push(format!("kernel dimension {geom} but {} chains", chains.len()));
    }
    if geom == 0 {
        flags.push("Delta_k is not singular at the reported root".into());
    }
    chains.sort_by_key(|c| std::cmp::Reverse(c.len()));
    Ok(JordanResult {
        geom_mult: geom,
        chains,
        kernel_dims: dims,
        smallest_singular_ratio: ratio,
        flags,
    })
}

/// `|Delta(mu* + h) sum_j h^j y_j|` for each `h`, and the log-log slope
/// between the first two step sizes.
pub fn chain_remainder_slope<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    mu_star: Cx<T>,
    chain: &[DVector<Cx<T>>],
    steps: &[T],
) -> Result<(Vec<T>, T)> {
    let mut norms = Vec::with_capacity(steps.len());
    for &h in steps {
        let ev = evaluate(ops, mu_star + re(h))?;
        let mut v = DVector::zeros(chain[0].len());
        let mut hj = T::one();
        for y in chain {
            v += y * re(hj);
            hj *= h;
        }
        norms.push(vec_norm(&(&ev.delta * v)));
    }
    let slope = if steps.len() >= 2 {
        (norms[0] / norms[1]).ln() / (steps[0] / steps[1]).ln()
    } else {
        T::zero()
    };
    Ok((norms, slope))
}

/// Relative tolerance on jumps of reconstructed eigenfunctions.
pub const JUMP_TOLERANCE: f64 = 1e-8;
/// Relative tolerance on the pointwise residual of the eigen-equation.
pub const RESIDUAL_TOLERANCE: f64 = 1e-7;

/// `x_j = sum_{i <= j} E_i y_{j-i}` with `E_i y = (N L)^i N S y` at
/// `mu*`, per chain, plus any failed continuity or residual checks.
pub fn eigenfunctions<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    record: &MultiplierRecord<T>,
) -> Result<(Vec<Vec<PiecewiseFunction<T>>>, Vec<String>)> {
    let mu = record.mu_star;
    let res = Resolvent::new(ops, mu)?;
    let mut out = Vec::new();
    let mut flags = Vec::new();
    for (ci, chain) in record.chains.iter().enumerate() {
        let len = chain.len();
        let mut xs = Vec::with_capacity(len);
        // terms[i][j] = E_i y_j
        let ys = DMatrix::from_columns(chain);
        let mut terms = vec![res.solve(&(&ops.s_hat * &ys))];
        for i in 1..len {
            let prev = &terms[i - 1];
            terms.push(res.solve(&(&ops.l_hat * prev)));
        }
        for j in 0..len {
            let mut x = DVector::zeros(ops.ndof());
            for i in 0..=j {
                x += terms[i].column(j - i);
            }
            xs.push(PiecewiseFunction::new(ops.mesh.clone(), x)?);
        }
        let x0 = &xs[0];
        let scale = x0.sup_norm();
        if scale > T::zero() {
            let jump = x0.max_jump() / scale;
            if jump > T::tol(JUMP_TOLERANCE) {
                flags.push(format!(
                    "chain {ci}: eigenfunction jump {:.3e} exceeds tolerance; raise the degree",
                    jump.to_f64_lossy()
                ));
            }
            let resid = eigen_residual(ops, mu, x0, 10) / scale;
            if resid > T::tol(RESIDUAL_TOLERANCE) {
                flags.push(format!(
                    "chain {ci}: eigen-equation residual {:.3e} exceeds tolerance; raise the degree",
                    resid.to_f64_lossy()
                ));
            }
        } else {
            flags.push(format!("chain {ci}: eigenfunction vanishes"));
        }
        out.push(xs);
    }
    Ok((out, flags))
}

/// Largest pointwise residual of `x = mu T x` on a grid refining every
/// element `factor` times: `x' = A x + sum B x~(t - theta)` on `[-1, 0]`
/// and `x(t) = mu x(t + 1)` before.
pub fn eigen_residual<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    mu: Cx<T>,
    x: &PiecewiseFunction<T>,
    factor: usize,
) -> T {
    let Ok(delays) = ops.dde.point_delays() else {
        return T::lit(f64::INFINITY);
    };
    let n = ops.mesh.dim();
    let mut worst = T::zero();
    let to_cx = |m: DMatrix<T>| m.map(re);
    for t in ops.mesh.refined_times(factor) {
        if t < -T::one() {
            let a = x.eval(t);
            let b = x.eval(t + T::one());
            for c in 0..n {
                worst = worst.max(cabs(a[c] - b[c] * mu));
            }
            continue;
        }
        let xv = DVector::from_vec(x.eval(t));
        let mut rhs = to_cx(ops.dde.drift().eval(t)) * &xv;
        for d in &delays {
            let u = t - d.tau;
            let val = if u >= -T::one() {
                DVector::from_vec(x.eval(u))
            } else {
                DVector::from_vec(x.eval(u + T::one())) * mu
            };
            rhs += to_cx(d.coeff.eval(t)) * val;
        }
        let dx = x.eval_derivative(t);
        for c in 0..n {
            worst = worst.max(cabs(dx[c] - rhs[c]));
        }
    }
    worst
}

/// Poles of `Delta_k` with their estimated multiplicities.
#[derive(Debug, Clone)]
pub struct PoleSet<T: Scalar> {
    /// `(mu, multiplicity)` sorted by modulus.
    pub poles: Vec<(Cx<T>, usize)>,
    pub k: usize,
}

/// Reciprocals of the nonzero eigenvalues of `(I - M0)^{-1} L` with
/// `|mu| <= r_search`.
pub fn locate_poles<T: Scalar>(ops: &DiscretizedOperators<T>, r_search: T) -> PoleSet<T> {
    let n = ops.ndof();
    let a = DMatrix::<Cx<T>>::identity(n, n) - &ops.m0;
    let Some(k_op) = a.lu().solve(&ops.l_hat) else {
        return PoleSet {
            poles: Vec::new(),
            k: ops.k(),
        };
    };
    let scale = crate::linalg::norm_inf(&k_op);
    let floor = T::eps() * T::lit(1e3) * scale.max(T::one());
    let mus: Vec<Cx<T>> = eigenvalues(&k_op)
        .into_iter()
        .filter(|l| cabs(*l) > floor)
        .map(|l| re(T::one()) / l)
        .filter(|mu| cabs(*mu) <= r_search)
        .collect();
    let mut poles = cluster(&mus, T::tol(1e-6));
    poles.sort_by(|a, b| {
        let ka = (cabs(a.0).to_f64_lossy(), carg(a.0).to_f64_lossy());
        let kb = (cabs(b.0).to_f64_lossy(), carg(b.0).to_f64_lossy());
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    PoleSet { poles, k: ops.k() }
}

/// Newton iteration on a scalar function given as `z -> (f(z), f'(z))`.
pub fn scalar_newton<T: Scalar>(f: impl Fn(Cx<T>) -> (Cx<T>, Cx<T>), start: Cx<T>) -> Option<Cx<T>> {
    let mut z = start;
    for _ in 0..100 {
        let (v, d) = f(z);
        if cabs(d) == T::zero() {
            return None;
        }
        let step = v / d;
        z -= step;
        if cabs(step) <= T::eps() * T::lit(4.0) * cabs(z).max(T::one()) {
            return Some(z);
        }
    }
    let (v, _) = f(z);
    (cabs(v) < T::tol(1e-12)).then_some(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayTerm, FourierMatrix, FourierSeries, PeriodicDde};
    use crate::scalar::cx;
    use crate::space::{assemble, build_mesh};

    fn ops_of(dde: &PeriodicDde<f64>, k: usize, p: usize) -> DiscretizedOperators<f64> {
        assemble(dde, build_mesh(dde, k, p).unwrap()).unwrap()
    }

    fn zero() -> PeriodicDde<f64> {
        PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![]).unwrap()
    }

    fn delay_half() -> PeriodicDde<f64> {
        PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0))]).unwrap()
    }

    #[test]
    fn counts_for_zero_problem() {
        let ops = ops_of(&zero(), 2, 4);
        assert_eq!(count_roots(&ops, cx(0.0, 0.0), 1.5, 64).unwrap().winding, 1);
        assert_eq!(count_roots(&ops, cx(0.0, 0.0), 0.5, 64).unwrap().winding, 0);
    }

    #[test]
    fn counts_for_delay_half() {
        let ops = ops_of(&delay_half(), 2, 16);
        let rep = count_roots(&ops, cx(0.0, 0.0), 1.0, 128).unwrap();
        assert_eq!(rep.winding, 1);
        assert!(rep.reliable());
    }

    #[test]
    fn ode_multiplier() {
        let a = std::f64::consts::LN_2;
        let dde = PeriodicDde::new(1, 1, FourierMatrix::scalar(a), vec![]).unwrap();
        let ops = ops_of(&dde, 1, 16);
        let recs = find_multipliers(&ops, 1.9).unwrap();
        assert_eq!(recs.len(), 1);
        assert!((recs[0].lambda - cx(2.0, 0.0)).norm() < 1e-12);
        assert_eq!((recs[0].alg_mult, recs[0].geom_mult), (1, 1));
        assert!(recs[0].flags.is_empty(), "{:?}", recs[0].flags);
        let x0 = &recs[0].eigenfunctions[0][0];
        let s = x0.eval(0.0)[0];
        let mut worst: f64 = 0.0;
        for t in [-1.0, -0.7, -0.31, -0.05, 0.0] {
            let want = s * (a * t).exp();
            worst = worst.max((x0.eval(t)[0] - want).norm() / s.norm());
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn periodic_ode_multiplier() {
        let a = FourierMatrix::new(1, 1, vec![FourierSeries { a0: 0.25, cos: vec![1.0], sin: vec![] }]).unwrap();
        let dde = PeriodicDde::new(1, 1, a, vec![]).unwrap();
        let ops = ops_of(&dde, 2, 16);
        let recs = find_multipliers(&ops, 1.9).unwrap();
        assert_eq!(recs.len(), 1);
        assert!((recs[0].lambda.re - 0.25f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn decoupled_copies_are_semisimple() {
        let a = DMatrix::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.4]);
        let dde = PeriodicDde::new(2, 1, FourierMatrix::constant(&a), vec![]).unwrap();
        let ops = ops_of(&dde, 1, 12);
        let recs = find_multipliers(&ops, 1.9).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.alg_mult, r.geom_mult, r.chains.len(), r.max_chain_len()), (2, 2, 2, 1));
    }

    #[test]
    fn poles_of_k1_construction() {
        let ops = ops_of(&delay_half(), 1, 16);
        let poles = locate_poles(&ops, 3.0);
        assert!(!poles.poles.is_empty());
        assert!((poles.poles[0].0.re - 1.8535).abs() < 2e-3);
        let b_free = PeriodicDde::new(1, 1, FourierMatrix::scalar(0.3), vec![]).unwrap();
        assert!(locate_poles(&ops_of(&b_free, 1, 8), 100.0).poles.is_empty());
    }
}
