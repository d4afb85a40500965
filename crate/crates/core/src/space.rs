//! Shooting mesh, piecewise polynomial functions on `[-m, 0]`, and the
//! discrete maps `S`, `Gamma_+`, `Gamma_-(mu)` and `M_k(mu) = M0 + mu L`.
//!
//! Every subinterval `J_i = [t_i, t_{i+1})` is cut into elements at the
//! points where a discrete delay carries a mesh boundary (kinks of the
//! solution), and every element carries `p + 1` Chebyshev-Lobatto nodes.
//! History elements on `[-m, -1)` are exact copies of the current period
//! shifted by whole periods.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{compute_bounds, CoefficientBounds, PeriodicDde, PointDelay, DEFAULT_BOUND_SAMPLES};
use crate::quadrature::{gauss_legendre, ChebyshevBasis};
use crate::scalar::{cabs, re, Cx, Scalar};

pub const DEFAULT_DEGREE: usize = 16;
const PHASE_MERGE_TOL: f64 = 1e-9;

/// Controls for [`build_mesh_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshOptions {
    /// Polynomial degree per element.
    pub degree: usize,
    /// How many times mesh points are propagated along the discrete delays.
    pub kink_depth: usize,
    /// Upper bound on elements per subinterval; propagation stops there.
    pub max_elements_per_subinterval: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            degree: DEFAULT_DEGREE,
            kink_depth: 3,
            max_elements_per_subinterval: 8,
        }
    }
}

impl MeshOptions {
    pub fn with_degree(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element<T: Scalar> {
    pub start: T,
    pub end: T,
    /// Local subinterval index `0..m k` (global index minus `k - m k`).
    pub subinterval: usize,
}

impl<T: Scalar> Element<T> {
    pub fn len(&self) -> T {
        self.end - self.start
    }

    fn node(&self, xi: T) -> T {
        self.start + (xi + T::one()) * T::lit(0.5) * self.len()
    }

    fn reference(&self, t: T) -> T {
        let xi = (t - self.start) * T::lit(2.0) / self.len() - T::one();
        xi.max(-T::one()).min(T::one())
    }
}

/// Multiple-shooting mesh on `[-m, 0]`.
#[derive(Debug, Clone)]
pub struct Mesh<T: Scalar> {
    n: usize,
    m: usize,
    k: usize,
    basis: ChebyshevBasis<T>,
    phases: Vec<f64>,
    elements: Vec<Element<T>>,
    /// First element of each local subinterval, plus a sentinel.
    sub_start: Vec<usize>,
}

/// Mesh with default options and degree `p`.
pub fn build_mesh<T: Scalar>(dde: &PeriodicDde<T>, k: usize, p: usize) -> Result<Mesh<T>> {
    build_mesh_with(dde, k, MeshOptions::with_degree(p))
}

pub fn build_mesh_with<T: Scalar>(dde: &PeriodicDde<T>, k: usize, opts: MeshOptions) -> Result<Mesh<T>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if opts.degree < 2 {
        return Err(invalid("polynomial degree must be at least 2"));
    }
    let shifts: Vec<f64> = dde
        .point_delays()?
        .iter()
        .filter(|d| d.sharp)
        .map(|d| d.tau.to_f64_lossy().rem_euclid(1.0))
        .filter(|s| *s > PHASE_MERGE_TOL && *s < 1.0 - PHASE_MERGE_TOL)
        .collect();
    let phases = kink_phases(k, &shifts, opts.kink_depth, opts.max_elements_per_subinterval.max(1));
    Ok(Mesh::from_phases(dde.dim(), dde.horizon(), k, opts.degree, phases))
}

fn subinterval_of(phase: f64, k: usize) -> usize {
    ((phase * k as f64 + 1e-9).floor() as usize).min(k - 1)
}

/// Phases in `[0, 1)` of all element starts: the grid `i / k` closed under
/// `phi -> frac(phi + shift)` up to `depth` times.
fn kink_phases(k: usize, shifts: &[f64], depth: usize, cap: usize) -> Vec<f64> {
    let mut phases: Vec<f64> = (0..k).map(|i| i as f64 / k as f64).collect();
    let mut count = vec![1usize; k];
    let mut frontier = phases.clone();
    let same = |a: f64, b: f64| {
        let d = (a - b).abs();
        d < PHASE_MERGE_TOL || d > 1.0 - PHASE_MERGE_TOL
    };
    for _ in 0..depth {
        let mut next = Vec::new();
        for &phi in &frontier {
            for &s in shifts {
                let psi = (phi + s).rem_euclid(1.0);
                if phases.iter().any(|&q| same(q, psi)) {
                    continue;
                }
                let sub = subinterval_of(psi, k);
                if count[sub] >= cap {
                    continue;
                }
                count[sub] += 1;
                phases.push(psi);
                next.push(psi);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    phases.sort_by(|a, b| a.total_cmp(b));
    phases
}

impl<T: Scalar> Mesh<T> {
    fn from_phases(n: usize, m: usize, k: usize, p: usize, phases: Vec<f64>) -> Self {
        let per = phases.len();
        let mut elements = Vec::with_capacity(m * per);
        let mut sub_start = Vec::with_capacity(m * k + 1);
        for d in 0..m {
            let base = d as f64 - m as f64;
            for (j, &phi) in phases.iter().enumerate() {
                let start = T::lit(base + phi);
                let end = if j + 1 < per {
                    T::lit(base + phases[j + 1])
                } else {
                    T::lit(base + 1.0)
                };
                let sub = d * k + subinterval_of(phi, k);
                if sub_start.len() == sub {
                    sub_start.push(elements.len());
                }
                elements.push(Element {
                    start,
                    end,
                    subinterval: sub,
                });
            }
        }
        sub_start.push(elements.len());
        Self {
            n,
            m,
            k,
            basis: ChebyshevBasis::new(p),
            phases,
            elements,
            sub_start,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn basis(&self) -> &ChebyshevBasis<T> {
        &self.basis
    }

    pub fn elements(&self) -> &[Element<T>] {
        &self.elements
    }

    pub fn elements_per_period(&self) -> usize {
        self.phases.len()
    }

    pub fn n_subintervals(&self) -> usize {
        self.m * self.k
    }

    /// Boundaries `t_{k - m k} = -m, ..., t_k = 0`.
    pub fn boundaries(&self) -> Vec<T> {
        let mut b: Vec<T> = self.sub_start[..self.n_subintervals()]
            .iter()
            .map(|&e| self.elements[e].start)
            .collect();
        b.push(T::zero());
        b
    }

    /// Element index range of local subinterval `j`.
    pub fn subinterval_elements(&self, j: usize) -> std::ops::Range<usize> {
        self.sub_start[j]..self.sub_start[j + 1]
    }

    /// Local index of the current-period subinterval `J_i`, `i = 0..k`.
    pub fn current_subinterval(&self, i: usize) -> usize {
        (self.m - 1) * self.k + i
    }

    pub fn nodes_per_element(&self) -> usize {
        self.degree() + 1
    }

    pub fn ndof(&self) -> usize {
        self.elements.len() * self.nodes_per_element() * self.n
    }

    /// Degrees of freedom of one period.
    pub fn period_dofs(&self) -> usize {
        self.elements_per_period() * self.nodes_per_element() * self.n
    }

    /// First dof of the current period `[-1, 0]`.
    pub fn current_offset(&self) -> usize {
        (self.m - 1) * self.period_dofs()
    }

    pub fn grid_len(&self) -> usize {
        self.n * self.k
    }

    #[inline]
    pub fn dof(&self, elem: usize, node: usize, comp: usize) -> usize {
        (elem * self.nodes_per_element() + node) * self.n + comp
    }

    pub fn node_time(&self, elem: usize, node: usize) -> T {
        self.elements[elem].node(self.basis.nodes[node])
    }

    /// Element holding `t` under the right-continuous convention.
    pub fn element_at(&self, t: T) -> usize {
        let idx = self.elements.partition_point(|e| e.start <= t);
        idx.saturating_sub(1)
    }

    /// Element whose closure ends at or after `t`, preferring the left one.
    fn element_left_of(&self, t: T) -> usize {
        let idx = self.elements.partition_point(|e| e.start < t);
        idx.saturating_sub(1)
    }

    /// Sample times of a grid refining every element `factor` times.
    pub fn refined_times(&self, factor: usize) -> Vec<T> {
        let f = factor.max(1);
        let mut out = Vec::with_capacity(self.elements.len() * f + 1);
        for e in &self.elements {
            for j in 0..f {
                out.push(e.start + e.len() * T::from_count(j) / T::from_count(f));
            }
        }
        out.push(T::zero());
        out
    }
}

/// Values `v_0, ..., v_{k-1}` attached to `t_0, ..., t_{k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVector<T: Scalar> {
    n: usize,
    values: DVector<Cx<T>>,
}

impl<T: Scalar> GridVector<T> {
    pub fn new(n: usize, values: DVector<Cx<T>>) -> Result<Self> {
        if n == 0 || !values.len().is_multiple_of(n) {
            return Err(invalid(format!(
                "grid vector length {} is not a multiple of n = {n}",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(mesh: &Mesh<T>) -> Self {
        Self {
            n: mesh.n,
            values: DVector::zeros(mesh.grid_len()),
        }
    }

    pub fn values(&self) -> &DVector<Cx<T>> {
        &self.values
    }

    pub fn into_values(self) -> DVector<Cx<T>> {
        self.values
    }

    pub fn block(&self, i: usize) -> &[Cx<T>] {
        &self.values.as_slice()[i * self.n..(i + 1) * self.n]
    }
}

/// Element of `C_k` stored by nodal values.
#[derive(Debug, Clone)]
pub struct PiecewiseFunction<T: Scalar> {
    mesh: Arc<Mesh<T>>,
    values: DVector<Cx<T>>,
}

impl<T: Scalar> PiecewiseFunction<T> {
    pub fn new(mesh: Arc<Mesh<T>>, values: DVector<Cx<T>>) -> Result<Self> {
        if values.len() != mesh.ndof() {
            return Err(invalid(format!(
                "expected {} nodal values, got {}",
                mesh.ndof(),
                values.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh<T>>) -> Self {
        let values = DVector::zeros(mesh.ndof());
        Self { mesh, values }
    }

    /// Samples `f` at every node; `f` returns the `n` components.
    pub fn from_fn(mesh: Arc<Mesh<T>>, f: impl Fn(T) -> Vec<Cx<T>>) -> Self {
        let mut values = DVector::zeros(mesh.ndof());
        for e in 0..mesh.elements.len() {
            for q in 0..mesh.nodes_per_element() {
                let v = f(mesh.node_time(e, q));
                for c in 0..mesh.n {
                    values[mesh.dof(e, q, c)] = v[c];
                }
            }
        }
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        &self.mesh
    }

    pub fn values(&self) -> &DVector<Cx<T>> {
        &self.values
    }

    fn eval_in(&self, e: usize, t: T) -> Vec<Cx<T>> {
        let mesh = &self.mesh;
        let row = mesh.basis.interpolation_row(mesh.elements[e].reference(t));
        (0..mesh.n)
            .map(|c| {
                row.iter().enumerate().fold(Cx::new(T::zero(), T::zero()), |acc, (r, &l)| {
                    acc + self.values[mesh.dof(e, r, c)] * l
                })
            })
            .collect()
    }

    /// Derivative of the interpolant of the element holding `t`.
    pub fn eval_derivative(&self, t: T) -> Vec<Cx<T>> {
        let mesh = &self.mesh;
        let e = mesh.element_at(t);
        let elem = mesh.elements[e];
        let row = mesh.basis.interpolation_row(elem.reference(t));
        let scale = T::lit(2.0) / elem.len();
        (0..mesh.n)
            .map(|c| {
                let mut acc = Cx::new(T::zero(), T::zero());
                for (q, &l) in row.iter().enumerate() {
                    if l == T::zero() {
                        continue;
                    }
                    let d = mesh.basis.differentiation[q]
                        .iter()
                        .enumerate()
                        .fold(Cx::new(T::zero(), T::zero()), |a, (r, &w)| a + self.values[mesh.dof(e, r, c)] * w);
                    acc += d * l;
                }
                acc * scale
            })
            .collect()
    }

    /// `x(t)`, right-continuous at mesh points; `t = 0` gives `x(0)-`.
    pub fn eval(&self, t: T) -> Vec<Cx<T>> {
        self.eval_in(self.mesh.element_at(t), t)
    }

    /// Left-sided limit `x(t)-`.
    pub fn eval_left(&self, t: T) -> Vec<Cx<T>> {
        self.eval_in(self.mesh.element_left_of(t), t)
    }

    /// Largest jump `|x(t)+ - x(t)-|_inf` over interior element boundaries.
    pub fn max_jump(&self) -> T {
        let mesh = &self.mesh;
        let last = mesh.nodes_per_element() - 1;
        (1..mesh.elements.len())
            .map(|e| {
                (0..mesh.n).fold(T::zero(), |acc, c| {
                    acc.max(cabs(self.values[mesh.dof(e, 0, c)] - self.values[mesh.dof(e - 1, last, c)]))
                })
            })
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a.max(cabs(v)))
    }

    /// `max_t R^t |x(t)|_inf` over the nodes.
    pub fn weighted_norm(&self, r: T) -> Result<T> {
        weighted_norm(self, r)
    }

    /// `(x(t + 1))` for `t < -1`, zero on the current period.
    pub fn backshift(&self) -> Self {
        let shift = self.mesh.period_dofs();
        let start = self.mesh.current_offset();
        let mut values = DVector::zeros(self.values.len());
        for i in 0..start {
            values[i] = self.values[i + shift];
        }
        Self {
            mesh: self.mesh.clone(),
            values,
        }
    }
}

/// `max_t R^t |x(t)|_inf` over the nodes.
pub fn weighted_norm<T: Scalar>(x: &PiecewiseFunction<T>, r: T) -> Result<T> {
    if !(r > T::zero()) {
        return Err(invalid("weight base R must be positive"));
    }
    let mesh = &x.mesh;
    let mut best = T::zero();
    for e in 0..mesh.elements.len() {
        for q in 0..mesh.nodes_per_element() {
            let w = r.powf(mesh.node_time(e, q));
            for c in 0..mesh.n {
                best = best.max(w * cabs(x.values[mesh.dof(e, q, c)]));
            }
        }
    }
    Ok(best)
}

/// Assembled discrete maps on one mesh.
#[derive(Debug, Clone)]
pub struct DiscretizedOperators<T: Scalar> {
    pub dde: PeriodicDde<T>,
    pub mesh: Arc<Mesh<T>>,
    pub bounds: CoefficientBounds<T>,
    /// `ndof x nk`.
    pub s_hat: DMatrix<Cx<T>>,
    /// `nk x ndof`.
    pub g_plus: DMatrix<Cx<T>>,
    pub g_minus0: DMatrix<Cx<T>>,
    pub g_minus1: DMatrix<Cx<T>>,
    /// `ndof x ndof`, `M(mu) = m0 + mu l_hat`.
    pub m0: DMatrix<Cx<T>>,
    pub l_hat: DMatrix<Cx<T>>,
}

impl<T: Scalar> DiscretizedOperators<T> {
    pub fn k(&self) -> usize {
        self.mesh.k
    }

    pub fn ndof(&self) -> usize {
        self.mesh.ndof()
    }

    pub fn grid_len(&self) -> usize {
        self.mesh.grid_len()
    }

    /// `M0 + mu L`.
    pub fn m_of(&self, mu: Cx<T>) -> DMatrix<Cx<T>> {
        &self.m0 + &self.l_hat * mu
    }

    /// `G0 + mu G1`.
    pub fn gamma_minus_of(&self, mu: Cx<T>) -> DMatrix<Cx<T>> {
        &self.g_minus0 + &self.g_minus1 * mu
    }

    /// Radius of the disk on which `I - M(mu)` is invertible by the bounds.
    pub fn guaranteed_radius(&self) -> T {
        guaranteed_radius(&self.bounds, self.mesh.k, self.mesh.m)
    }

    pub fn apply_s(&self, v: &GridVector<T>) -> PiecewiseFunction<T> {
        apply_s(&self.mesh, v)
    }
}

/// Discretizes `S`, `Gamma_+`, `Gamma_-` and `M_k` on `mesh`.
pub fn assemble<T: Scalar>(dde: &PeriodicDde<T>, mesh: Mesh<T>) -> Result<DiscretizedOperators<T>> {
    if dde.dim() != mesh.n || dde.horizon() != mesh.m {
        return Err(invalid("mesh was built for a different problem"));
    }
    if dde.max_delay() > T::from_count(mesh.m) {
        return Err(invalid(format!("delay exceeds the horizon m = {}", mesh.m)));
    }
    let bounds = compute_bounds(dde, DEFAULT_BOUND_SAMPLES)?;
    let delays = dde.point_delays()?;
    let mesh = Arc::new(mesh);
    let ndof = mesh.ndof();
    let nk = mesh.grid_len();
    let n = mesh.n;
    let p = mesh.degree();
    let one = re(T::one());

    let mut s_hat = DMatrix::zeros(ndof, nk);
    let mut g_plus = DMatrix::zeros(nk, ndof);
    let mut g_minus0 = DMatrix::zeros(nk, ndof);
    let mut g_minus1 = DMatrix::zeros(nk, ndof);
    for i in 0..mesh.k {
        let elems = mesh.subinterval_elements(mesh.current_subinterval(i));
        for e in elems.clone() {
            for q in 0..=p {
                for c in 0..n {
                    s_hat[(mesh.dof(e, q, c), i * n + c)] = one;
                }
            }
        }
        for c in 0..n {
            g_plus[(i * n + c, mesh.dof(elems.start, 0, c))] = one;
            let right = mesh.dof(elems.end - 1, p, c);
            if i + 1 < mesh.k {
                g_minus0[((i + 1) * n + c, right)] = one;
            } else {
                g_minus1[(c, right)] = one;
            }
        }
    }

    let mut m0 = DMatrix::zeros(ndof, ndof);
    let mut l_hat = DMatrix::zeros(ndof, ndof);
    let per = mesh.period_dofs();
    for row in 0..mesh.current_offset() {
        l_hat[(row, row + per)] = one;
    }

    let asm = Assembler::new(&mesh, dde, &delays);
    for i in 0..mesh.k {
        let elems = mesh.subinterval_elements(mesh.current_subinterval(i));
        let mut acc0 = DMatrix::<Cx<T>>::zeros(n, ndof);
        let mut acc1 = DMatrix::<Cx<T>>::zeros(n, ndof);
        for e in elems {
            for q in 0..=p {
                let mut b0 = acc0.clone();
                let mut b1 = acc1.clone();
                asm.partial(e, q, &mut b0, &mut b1);
                for c in 0..n {
                    let row = mesh.dof(e, q, c);
                    m0.row_mut(row).copy_from(&b0.row(c));
                    l_hat.row_mut(row).copy_from(&b1.row(c));
                }
                if q == p {
                    acc0 = b0;
                    acc1 = b1;
                }
            }
        }
    }

    Ok(DiscretizedOperators {
        dde: dde.clone(),
        mesh,
        bounds,
        s_hat,
        g_plus,
        g_minus0,
        g_minus1,
        m0,
        l_hat,
    })
}

struct Assembler<'a, T: Scalar> {
    mesh: &'a Mesh<T>,
    dde: &'a PeriodicDde<T>,
    delays: &'a [PointDelay<T>],
    gauss: (Vec<T>, Vec<T>),
}

impl<'a, T: Scalar> Assembler<'a, T> {
    fn new(mesh: &'a Mesh<T>, dde: &'a PeriodicDde<T>, delays: &'a [PointDelay<T>]) -> Self {
        Self {
            mesh,
            dde,
            delays,
            gauss: gauss_legendre(mesh.degree() + 4),
        }
    }

    /// Adds `\int_{start(e)}^{s_q} [A x + sum B x(s - theta)]` to the
    /// `n x ndof` row blocks of `M0` and `L`.
    fn partial(&self, e: usize, q: usize, b0: &mut DMatrix<Cx<T>>, b1: &mut DMatrix<Cx<T>>) {
        let mesh = self.mesh;
        let n = mesh.n;
        let elem = mesh.elements[e];
        let half = elem.len() * T::lit(0.5);
        let basis = &mesh.basis;
        if !self.dde.drift().is_zero() {
            for (r, &w) in basis.integration[q].iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                let a = self.dde.drift().eval(mesh.node_time(e, r));
                for c in 0..n {
                    for c2 in 0..n {
                        b0[(c, mesh.dof(e, r, c2))] += re(w * half * a[(c, c2)]);
                    }
                }
            }
        }
        if q == 0 {
            return;
        }
        let upper = mesh.node_time(e, q);
        for d in self.delays {
            if d.coeff.is_zero() {
                continue;
            }
            for (lo, hi) in self.pieces(elem.start, upper, d.tau) {
                self.integrate_piece(lo, hi, d, b0, b1);
            }
        }
    }

    /// Splits `[a, b]` where `s - theta` crosses an element boundary.
    fn pieces(&self, a: T, b: T, theta: T) -> Vec<(T, T)> {
        let tol = T::lit(1e-12);
        let mut cuts = vec![a];
        for &phi in &self.mesh.phases {
            let s0 = T::lit(phi) + theta;
            let frac = s0 - a;
            let mut s = a + (frac - frac.floor());
            while s < b - tol {
                if s > a + tol {
                    cuts.push(s);
                }
                s += T::one();
            }
        }
        cuts.push(b);
        cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite cut points"));
        cuts.windows(2)
            .filter(|w| w[1] - w[0] > tol)
            .map(|w| (w[0], w[1]))
            .collect()
    }

    fn integrate_piece(
        &self,
        lo: T,
        hi: T,
        d: &PointDelay<T>,
        b0: &mut DMatrix<Cx<T>>,
        b1: &mut DMatrix<Cx<T>>,
    ) {
        let mesh = self.mesh;
        let n = mesh.n;
        let half = (hi - lo) * T::lit(0.5);
        let mid = (hi + lo) * T::lit(0.5);
        let u_mid = mid - d.tau;
        // the shifted branch reads the previous period of the state
        let (target, offset) = if u_mid >= -T::one() {
            (b0, T::zero())
        } else {
            (b1, T::one())
        };
        let src = mesh.element_at(u_mid + offset);
        let src_elem = mesh.elements[src];
        let (gx, gw) = &self.gauss;
        for (&x, &w) in gx.iter().zip(gw) {
            let s = mid + half * x;
            let u = s - d.tau + offset;
            let l = mesh.basis.interpolation_row(src_elem.reference(u));
            let b = d.coeff.eval(s);
            let wt = w * half;
            for (r, &lr) in l.iter().enumerate() {
                if lr == T::zero() {
                    continue;
                }
                for c in 0..n {
                    for c2 in 0..n {
                        target[(c, mesh.dof(src, r, c2))] += re(wt * lr * b[(c, c2)]);
                    }
                }
            }
        }
    }
}

/// `S v`: `v_i` on every node of `J_i`, zero before `-1`.
pub fn apply_s<T: Scalar>(mesh: &Arc<Mesh<T>>, v: &GridVector<T>) -> PiecewiseFunction<T> {
    let mut x = PiecewiseFunction::zeros(mesh.clone());
    for i in 0..mesh.k {
        let vi = v.block(i);
        for e in mesh.subinterval_elements(mesh.current_subinterval(i)) {
            for q in 0..mesh.nodes_per_element() {
                for c in 0..mesh.n {
                    x.values[mesh.dof(e, q, c)] = vi[c];
                }
            }
        }
    }
    x
}

/// `[x(t_0)+, ..., x(t_{k-1})+]`.
pub fn gamma_plus<T: Scalar>(x: &PiecewiseFunction<T>) -> GridVector<T> {
    let mesh = &x.mesh;
    let mut out = DVector::zeros(mesh.grid_len());
    for i in 0..mesh.k {
        let e = mesh.subinterval_elements(mesh.current_subinterval(i)).start;
        for c in 0..mesh.n {
            out[i * mesh.n + c] = x.values[mesh.dof(e, 0, c)];
        }
    }
    GridVector { n: mesh.n, values: out }
}

/// `[mu x(0)-, x(t_1)-, ..., x(t_{k-1})-]`.
pub fn gamma_minus<T: Scalar>(mu: Cx<T>, x: &PiecewiseFunction<T>) -> GridVector<T> {
    let mesh = &x.mesh;
    let p = mesh.degree();
    let mut out = DVector::zeros(mesh.grid_len());
    for i in 0..mesh.k {
        let e = mesh.subinterval_elements(mesh.current_subinterval(i)).end - 1;
        let (row, scale) = if i + 1 < mesh.k {
            (i + 1, re(T::one()))
        } else {
            (0, mu)
        };
        for c in 0..mesh.n {
            out[row * mesh.n + c] = x.values[mesh.dof(e, p, c)] * scale;
        }
    }
    GridVector { n: mesh.n, values: out }
}

/// Row-sum norm of `|M0| + mu_abs |L|`, the largest induced infinity norm
/// of `M(mu)` over `|mu| = mu_abs`.
pub fn operator_norm_inf<T: Scalar>(ops: &DiscretizedOperators<T>, mu_abs: T) -> Result<T> {
    if mu_abs < T::zero() {
        return Err(invalid("|mu| must be nonnegative"));
    }
    let mut best = T::zero();
    for i in 0..ops.m0.nrows() {
        let mut s = T::zero();
        for j in 0..ops.m0.ncols() {
            s += cabs(ops.m0[(i, j)]) + mu_abs * cabs(ops.l_hat[(i, j)]);
        }
        best = best.max(s);
    }
    Ok(best)
}

/// Exact induced infinity norm of `M(mu)` at one point.
pub fn operator_norm_at<T: Scalar>(ops: &DiscretizedOperators<T>, mu: Cx<T>) -> T {
    let m = ops.m_of(mu);
    (0..m.nrows())
        .map(|i| m.row(i).iter().fold(T::zero(), |a, &v| a + cabs(v)))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Margin kept between the guaranteed disk and the general bound.
pub const GENERAL_BOUND_FRACTION: f64 = 0.99;

fn general_bound_exponent<T: Scalar>(v_bar: T, r: T, m: usize) -> Option<T> {
    // smallest admissible k is the first integer above ln R / ln(1 + eps / V)
    let ln_r = r.ln();
    let eps = (r - r * T::lit(GENERAL_BOUND_FRACTION)) / r.powi(m as i32 + 1) * ln_r;
    if v_bar <= T::zero() {
        return None;
    }
    Some(ln_r / (T::one() + eps / v_bar).ln())
}

fn first_integer_above<T: Scalar>(x: T) -> usize {
    let f = x.to_f64_lossy();
    if !(f >= 0.0) {
        return 1;
    }
    ((f.floor() as usize) + 1).max(1)
}

/// Smallest number of subintervals for which `I - M_k(mu)` is provably
/// invertible on `|mu| < R` (`m = 1`) or `|mu| <= 0.99 R` (`m >= 2`).
pub fn select_k<T: Scalar>(bounds: &CoefficientBounds<T>, r: T, m: usize) -> Result<usize> {
    if !(r >= T::one()) {
        return Err(invalid(format!(
            "radius R must be at least 1, got {}",
            r.to_f64_lossy()
        )));
    }
    if m == 0 {
        return Err(invalid("delay horizon m must be at least 1"));
    }
    let contraction = first_integer_above(bounds.contraction_constant(r));
    if m == 1 {
        return Ok(contraction);
    }
    let general = if r == T::one() {
        first_integer_above(bounds.v_bar)
    } else {
        general_bound_exponent(bounds.v_bar, r, m).map_or(1, first_integer_above)
    };
    Ok(contraction.max(general))
}

/// Largest `R` for which `k` subintervals are admissible (the inverse of
/// [`select_k`]). Infinite when the problem has no delayed or drift terms.
/// Root searches stay within `0.99` of it.
pub fn guaranteed_radius<T: Scalar>(bounds: &CoefficientBounds<T>, k: usize, m: usize) -> T {
    let kf = T::from_count(k);
    if m <= 1 {
        if bounds.sup_b_total <= T::zero() {
            return T::lit(f64::INFINITY);
        }
        return ((kf - bounds.sup_a) / bounds.sup_b_total).max(T::zero());
    }
    if bounds.v_bar <= T::zero() {
        return T::lit(f64::INFINITY);
    }
    let admissible = |r: T| select_k(bounds, r, m).is_ok_and(|need| need <= k);
    if !admissible(T::lit(1.0 + 1e-9)) {
        return T::zero();
    }
    let mut lo = T::lit(1.0 + 1e-9);
    let mut hi = T::lit(2.0);
    while admissible(hi) {
        lo = hi;
        hi *= T::lit(2.0);
        if hi > T::lit(1e12) {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < T::lit(1e-12) * hi {
            break;
        }
    }
    lo
}

/// Trace of the iteration `x <- S v + M(mu) x`.
#[derive(Debug, Clone)]
pub struct FixedPointReport<T: Scalar> {
    pub solution: PiecewiseFunction<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Ratios of successive update norms.
    pub rates: Vec<T>,
}

impl<T: Scalar> FixedPointReport<T> {
    /// Largest observed contraction ratio.
    pub fn max_rate(&self) -> T {
        self.rates.iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

pub fn fixed_point_iteration<T: Scalar>(
    ops: &DiscretizedOperators<T>,
    mu: Cx<T>,
    v: &GridVector<T>,
    tol: T,
    max_iter: usize,
) -> FixedPointReport<T> {
    let m = ops.m_of(mu);
    let sv = &ops.s_hat * v.values();
    let mut x = sv.clone();
    let mut prev: Option<T> = None;
    let mut rates = Vec::new();
    let scale = x.iter().fold(T::zero(), |a, &v| a.max(cabs(v))).max(T::one());
    for it in 1..=max_iter {
        let next = &sv + &m * &x;
        let diff = (&next - &x).iter().fold(T::zero(), |a, &v| a.max(cabs(v)));
        x = next;
        if let Some(p) = prev {
            if p > T::zero() && diff > T::eps() * scale * T::lit(100.0) {
                rates.push(diff / p);
            }
        }
        prev = Some(diff);
        if diff <= tol * scale {
            return FixedPointReport {
                solution: PiecewiseFunction {
                    mesh: ops.mesh.clone(),
                    values: x,
                },
                iterations: it,
                converged: true,
                rates,
            };
        }
    }
    FixedPointReport {
        solution: PiecewiseFunction {
            mesh: ops.mesh.clone(),
            values: x,
        },
        iterations: max_iter,
        converged: false,
        rates,
    }
}

#[derive(Serialize)]
struct DumpEntry {
    name: &'static str,
    rows: usize,
    cols: usize,
    /// Offset in complex numbers from the start of the binary file.
    offset: usize,
}

#[derive(Serialize)]
struct DumpHeader {
    n: usize,
    m: usize,
    k: usize,
    degree: usize,
    ndof: usize,
    grid_len: usize,
    layout: &'static str,
    matrices: Vec<DumpEntry>,
}

/// Writes `<stem>.bin` (row-major little-endian complex doubles) and
/// `<stem>.json` describing the matrices inside.
pub fn dump_operators<T: Scalar>(ops: &DiscretizedOperators<T>, dir: &Path, stem: &str) -> Result<()> {
    let mats: [(&'static str, &DMatrix<Cx<T>>); 6] = [
        ("S", &ops.s_hat),
        ("Gamma_plus", &ops.g_plus),
        ("Gamma_minus0", &ops.g_minus0),
        ("Gamma_minus1", &ops.g_minus1),
        ("M0", &ops.m0),
        ("L", &ops.l_hat),
    ];
    let mut entries = Vec::new();
    let mut offset = 0;
    let mut bin = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.bin")))?);
    for (name, m) in mats {
        entries.push(DumpEntry {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            offset,
        });
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                bin.write_all(&z.re.to_f64_lossy().to_le_bytes())?;
                bin.write_all(&z.im.to_f64_lossy().to_le_bytes())?;
            }
        }
        offset += m.len();
    }
    bin.flush()?;
    let header = DumpHeader {
        n: ops.mesh.n,
        m: ops.mesh.m,
        k: ops.mesh.k,
        degree: ops.mesh.degree(),
        ndof: ops.ndof(),
        grid_len: ops.grid_len(),
        layout: "dof = (element * (degree + 1) + node) * n + component",
        matrices: entries,
    };
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&header).map_err(Error::Json)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayTerm, FourierMatrix};
    use crate::scalar::cx;

    fn delay_half() -> PeriodicDde<f64> {
        PeriodicDde::new(
            1,
            1,
            FourierMatrix::zeros(1, 1),
            vec![DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0))],
        )
        .unwrap()
    }

    fn zero_dde(m: usize) -> PeriodicDde<f64> {
        PeriodicDde::new(1, m, FourierMatrix::zeros(1, 1), vec![]).unwrap()
    }

    fn ode(a: f64) -> PeriodicDde<f64> {
        PeriodicDde::new(1, 1, FourierMatrix::scalar(a), vec![]).unwrap()
    }

    #[test]
    fn mesh_boundaries() {
        let mesh = build_mesh(&zero_dde(1), 3, 4).unwrap();
        let b = mesh.boundaries();
        let want = [-1.0, -2.0 / 3.0, -1.0 / 3.0, 0.0];
        assert_eq!(b.len(), 4);
        for (x, y) in b.iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
        let mesh = build_mesh(&zero_dde(2), 2, 4).unwrap();
        assert_eq!(mesh.n_subintervals(), 4);
        assert_eq!(mesh.boundaries()[0], -2.0);
        let mesh = build_mesh(&zero_dde(1), 1, 4).unwrap();
        assert_eq!(mesh.boundaries(), vec![-1.0, 0.0]);
        assert!(build_mesh(&zero_dde(1), 0, 4).is_err());
        assert!(build_mesh(&zero_dde(1), 1, 1).is_err());
    }

    #[test]
    fn kinks_split_subintervals() {
        let mesh = build_mesh(&delay_half(), 1, 8).unwrap();
        assert_eq!(mesh.elements_per_period(), 2);
        assert_eq!(mesh.elements()[1].start, -0.5);
        let mesh = build_mesh(&delay_half(), 3, 8).unwrap();
        assert_eq!(mesh.elements_per_period(), 6);
        assert_eq!(mesh.n_subintervals(), 3);
    }

    #[test]
    fn gamma_plus_inverts_s() {
        let dde = delay_half();
        let ops = assemble(&dde, build_mesh(&dde, 3, 6).unwrap()).unwrap();
        let prod = &ops.g_plus * &ops.s_hat;
        assert_eq!(prod, DMatrix::identity(3, 3));
        let v = GridVector::new(1, DVector::from_vec(vec![cx(1.0, 2.0), cx(-0.5, 0.0), cx(3.0, -1.0)])).unwrap();
        assert_eq!(gamma_plus(&ops.apply_s(&v)), v);
    }

    #[test]
    fn gamma_minus_of_constant() {
        let dde = delay_half();
        let mesh = Arc::new(build_mesh(&dde, 3, 5).unwrap());
        let c = cx(0.7, -0.2);
        let x = PiecewiseFunction::from_fn(mesh, |_| vec![c]);
        let mu = cx(0.3, 0.4);
        let g = gamma_minus(mu, &x);
        assert!((g.values()[0] - mu * c).norm() < 1e-15);
        assert_eq!(g.values()[1], c);
        assert_eq!(g.values()[2], c);
        assert_eq!(gamma_minus(cx(0.0, 0.0), &x).values()[0], cx(0.0, 0.0));
    }

    #[test]
    fn images_of_m_vanish_at_left_nodes() {
        let dde = PeriodicDde::new(
            1,
            2,
            FourierMatrix::scalar(0.4),
            vec![
                DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0)),
                DelayTerm::discrete(1.5, FourierMatrix::scalar(-0.3)),
            ],
        )
        .unwrap();
        let ops = assemble(&dde, build_mesh(&dde, 2, 5).unwrap()).unwrap();
        let mesh = &ops.mesh;
        for i in 0..2 {
            let e = mesh.subinterval_elements(mesh.current_subinterval(i)).start;
            let row = mesh.dof(e, 0, 0);
            assert!(ops.m0.row(row).iter().all(|v| *v == cx(0.0, 0.0)));
            assert!(ops.l_hat.row(row).iter().all(|v| *v == cx(0.0, 0.0)));
        }
        // history rows are the pure shift
        let per = mesh.period_dofs();
        for row in 0..mesh.current_offset() {
            assert_eq!(ops.l_hat[(row, row + per)], cx(1.0, 0.0));
            assert!(ops.m0.row(row).iter().all(|v| *v == cx(0.0, 0.0)));
        }
    }

    #[test]
    fn zero_problem_gives_piecewise_constant_solution() {
        let dde = zero_dde(1);
        let ops = assemble(&dde, build_mesh(&dde, 4, 3).unwrap()).unwrap();
        assert!(ops.m0.iter().all(|v| *v == cx(0.0, 0.0)));
        assert!(ops.l_hat.iter().all(|v| *v == cx(0.0, 0.0)));
        let v = GridVector::new(1, DVector::from_fn(4, |i, _| cx(i as f64, 1.0))).unwrap();
        let rep = fixed_point_iteration(&ops, cx(0.5, 0.0), &v, 1e-14, 10);
        assert!(rep.converged);
        let x = rep.solution;
        for (i, t) in [-0.9, -0.6, -0.3, -0.1].iter().enumerate() {
            assert!((x.eval(*t)[0] - cx(i as f64, 1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn exponential_solution_is_reproduced() {
        let a = std::f64::consts::LN_2;
        let dde = ode(a);
        for k in [1, 3] {
            let ops = assemble(&dde, build_mesh(&dde, k, 12).unwrap()).unwrap();
            // chain the subintervals: v_{i+1} = x(t_{i+1})-
            let v = GridVector::new(
                1,
                DVector::from_fn(k, |i, _| cx((a * i as f64 / k as f64).exp(), 0.0)),
            )
            .unwrap();
            let rep = fixed_point_iteration(&ops, cx(0.0, 0.0), &v, 1e-15, 200);
            assert!(rep.converged);
            let end = rep.solution.eval(0.0)[0];
            assert!((end.re - 2.0).abs() < 1e-12, "k={k}: {end}");
        }
    }

    #[test]
    fn norm_bound_and_halving() {
        let dde = delay_half();
        let norm = |k: usize| {
            let ops = assemble(&dde, build_mesh(&dde, k, 10).unwrap()).unwrap();
            operator_norm_inf(&ops, 1.0).unwrap()
        };
        let n4 = norm(4);
        assert!(n4 <= 1.0 / 4.0 * 1.05, "{n4}");
        assert!(norm(8) <= 0.55 * n4);
        let z = zero_dde(1);
        let ops = assemble(&z, build_mesh(&z, 2, 4).unwrap()).unwrap();
        assert_eq!(operator_norm_inf(&ops, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn select_k_examples() {
        let b = CoefficientBounds {
            sup_a: 0.0,
            sup_b_total: 1.01,
            v_bar: 1.01,
        };
        assert_eq!(select_k(&b, 3.0, 1).unwrap(), 4);
        assert_eq!(select_k(&b, 1.9, 1).unwrap(), 2);
        assert!(select_k(&b, 0.5, 1).is_err());

        let b = CoefficientBounds {
            sup_a: 0.0,
            sup_b_total: 0.0,
            v_bar: 1.0,
        };
        let k = select_k(&b, 2.0, 2).unwrap();
        let rhs = 1.0 + (0.02 / 8.0) * 2f64.ln();
        assert!(2f64.powf(1.0 / k as f64) < rhs);
        assert!(2f64.powf(1.0 / (k - 1) as f64) >= rhs);

        let r = guaranteed_radius(&b, k, 2);
        assert!((2.0 - 1e-9..2.1).contains(&r), "{r}");
    }

    #[test]
    fn weighted_norm_and_backshift() {
        let dde = zero_dde(2);
        let mesh = Arc::new(build_mesh(&dde, 2, 4).unwrap());
        let one = PiecewiseFunction::from_fn(mesh.clone(), |_| vec![cx(1.0, 0.0)]);
        assert!((one.weighted_norm(2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(one.weighted_norm(1.0).unwrap(), one.sup_norm());
        let x = PiecewiseFunction::from_fn(mesh, |t| vec![cx((3.0 * t).sin() + 1.5, t)]);
        for r in [1.0, 1.5, 2.0, 4.0] {
            let lhs = x.backshift().weighted_norm(r).unwrap();
            let rhs = x.weighted_norm(r).unwrap() / r;
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dump_writes_header_and_payload() {
        let dde = delay_half();
        let ops = assemble(&dde, build_mesh(&dde, 1, 3).unwrap()).unwrap();
        let dir = std::env::temp_dir().join(format!("ddefloquet-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dump_operators(&ops, &dir, "ops").unwrap();
        let header: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("ops.json")).unwrap()).unwrap();
        let total: u64 = header["matrices"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["rows"].as_u64().unwrap() * m["cols"].as_u64().unwrap())
            .sum();
        assert_eq!(std::fs::metadata(dir.join("ops.bin")).unwrap().len(), total * 16);
        std::fs::remove_dir_all(dir).ok();
    }
}
