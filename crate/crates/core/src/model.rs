//! Periodic delay equations `x'(t) = A(t) x(t) + sum_j B_j(t) x(t - tau_j)
//! + \int K(t, theta) x(t - theta) dtheta` with period-1 coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{field_error, invalid, Error, Result};
use crate::quadrature::gauss_legendre;
use crate::scalar::Scalar;

/// Samples used by [`compute_bounds`] when the caller has no preference.
pub const DEFAULT_BOUND_SAMPLES: usize = 1024;
/// Multiplier applied to sampled maxima so they act as upper bounds.
pub const BOUND_SAFETY_FACTOR: f64 = 1.01;

/// `a0 + sum_j cos[j-1] cos(2 pi j t) + sin[j-1] sin(2 pi j t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries<T: Scalar> {
    pub a0: T,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Scalar> FourierSeries<T> {
    pub fn constant(a0: T) -> Self {
        Self {
            a0,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn eval(&self, t: T) -> T {
        let phase = t - t.floor();
        let mut v = self.a0;
        let harmonics = self.cos.len().max(self.sin.len());
        for j in 0..harmonics {
            let arg = T::two_pi() * T::from_count(j + 1) * phase;
            if let Some(&c) = self.cos.get(j) {
                v += c * arg.cos();
            }
            if let Some(&s) = self.sin.get(j) {
                v += s * arg.sin();
            }
        }
        v
    }

    fn scaled(&self, s: T) -> Self {
        Self {
            a0: self.a0 * s,
            cos: self.cos.iter().map(|&c| c * s).collect(),
            sin: self.sin.iter().map(|&c| c * s).collect(),
        }
    }

    fn axpy(&mut self, s: T, other: &Self) {
        self.a0 += s * other.a0;
        if self.cos.len() < other.cos.len() {
            self.cos.resize(other.cos.len(), T::zero());
        }
        if self.sin.len() < other.sin.len() {
            self.sin.resize(other.sin.len(), T::zero());
        }
        for (a, &b) in self.cos.iter_mut().zip(&other.cos) {
            *a += s * b;
        }
        for (a, &b) in self.sin.iter_mut().zip(&other.sin) {
            *a += s * b;
        }
    }

    fn is_finite(&self) -> bool {
        std::iter::once(&self.a0)
            .chain(&self.cos)
            .chain(&self.sin)
            .all(|v| v.to_f64_lossy().is_finite())
    }

    fn is_zero(&self) -> bool {
        std::iter::once(&self.a0)
            .chain(&self.cos)
            .chain(&self.sin)
            .all(|v| *v == T::zero())
    }
}

/// Matrix-valued period-1 trigonometric polynomial, entries row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    entries: Vec<FourierSeries<T>>,
}

impl<T: Scalar> FourierMatrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<FourierSeries<T>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("Fourier matrix needs positive dimensions"));
        }
        if entries.len() != rows * cols {
            return Err(invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![FourierSeries::constant(T::zero()); rows * cols],
        }
    }

    /// Time-independent matrix.
    pub fn constant(m: &DMatrix<T>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(FourierSeries::constant(m[(i, j)]));
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    pub fn scalar(a0: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            entries: vec![FourierSeries::constant(a0)],
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> &FourierSeries<T> {
        &self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[FourierSeries<T>] {
        &self.entries
    }

    pub fn eval(&self, t: T) -> DMatrix<T> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.entry(i, j).eval(t))
    }

    /// Induced infinity norm (maximum absolute row sum) at time `t`.
    pub fn norm_inf_at(&self, t: T) -> T {
        let m = self.eval(t);
        (0..self.rows)
            .map(|i| (0..self.cols).fold(T::zero(), |acc, j| acc + m[(i, j)].absval()))
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.scaled(s)).collect(),
        }
    }

    fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.axpy(s, b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(FourierSeries::is_zero)
    }

    fn is_finite(&self) -> bool {
        self.entries.iter().all(FourierSeries::is_finite)
    }
}

/// A delayed contribution to the right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayTerm<T: Scalar> {
    /// `B(t) x(t - tau)`.
    Discrete { tau: T, coeff: FourierMatrix<T> },
    /// `\int_{lo}^{hi} K(t, theta) x(t - theta) dtheta` with
    /// `K(t, theta) = sum_d kernel[d](t) theta^d`.
    Distributed {
        theta_lo: T,
        theta_hi: T,
        kernel: Vec<FourierMatrix<T>>,
        quadrature_order: usize,
    },
}

impl<T: Scalar> DelayTerm<T> {
    pub fn discrete(tau: T, coeff: FourierMatrix<T>) -> Self {
        DelayTerm::Discrete { tau, coeff }
    }

    /// Largest delay reached by this term.
    pub fn max_delay(&self) -> T {
        match self {
            DelayTerm::Discrete { tau, .. } => *tau,
            DelayTerm::Distributed { theta_hi, .. } => *theta_hi,
        }
    }
}

/// Weighted point delay produced from a delay term, ready for assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDelay<T: Scalar> {
    pub tau: T,
    /// Coefficient with the quadrature weight already folded in.
    pub coeff: FourierMatrix<T>,
    pub weight: T,
    /// True for genuine point delays, whose solutions carry derivative
    /// discontinuities; false for quadrature nodes of smooth kernels.
    pub sharp: bool,
}

/// Linear DDE with period-1 coefficients and delays in `(0, m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicDde<T: Scalar> {
    n: usize,
    m: usize,
    drift: FourierMatrix<T>,
    delays: Vec<DelayTerm<T>>,
}

impl<T: Scalar> PeriodicDde<T> {
    pub fn new(
        n: usize,
        m: usize,
        drift: FourierMatrix<T>,
        delays: Vec<DelayTerm<T>>,
    ) -> Result<Self> {
        let dde = Self {
            n,
            m,
            drift,
            delays,
        };
        dde.validate()?;
        Ok(dde)
    }

    /// Smallest horizon `m` that covers every delay (at least 1).
    pub fn with_minimal_horizon(
        n: usize,
        drift: FourierMatrix<T>,
        delays: Vec<DelayTerm<T>>,
    ) -> Result<Self> {
        let m = minimal_horizon(delays.iter().map(DelayTerm::max_delay));
        Self::new(n, m, drift, delays)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.m
    }

    pub fn drift(&self) -> &FourierMatrix<T> {
        &self.drift
    }

    pub fn delays(&self) -> &[DelayTerm<T>] {
        &self.delays
    }

    pub fn max_delay(&self) -> T {
        self.delays
            .iter()
            .map(DelayTerm::max_delay)
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Returns a copy with one more delay term.
    pub fn with_delay(&self, term: DelayTerm<T>) -> Result<Self> {
        let mut delays = self.delays.clone();
        delays.push(term);
        let m = self
            .m
            .max(minimal_horizon(delays.iter().map(DelayTerm::max_delay)));
        Self::new(self.n, m, self.drift.clone(), delays)
    }

    /// All delay terms as weighted point delays (distributed terms through
    /// their Gauss rules).
    pub fn point_delays(&self) -> Result<Vec<PointDelay<T>>> {
        let mut out = Vec::new();
        for term in &self.delays {
            match term {
                DelayTerm::Discrete { tau, coeff } => out.push(PointDelay {
                    tau: *tau,
                    coeff: coeff.clone(),
                    weight: T::one(),
                    sharp: true,
                }),
                DelayTerm::Distributed { .. } => out.extend(discretize_distributed(term)?),
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(field_error("n", "state dimension must be at least 1"));
        }
        if self.m == 0 {
            return Err(field_error("m", "delay horizon must be at least 1"));
        }
        let square = |f: &FourierMatrix<T>, name: String| -> Result<()> {
            if f.nrows() != self.n || f.ncols() != self.n {
                return Err(field_error(
                    name,
                    format!(
                        "expected a {n}x{n} matrix, got {}x{}",
                        f.nrows(),
                        f.ncols(),
                        n = self.n
                    ),
                ));
            }
            if !f.is_finite() {
                return Err(field_error(name, "coefficients must be finite"));
            }
            Ok(())
        };
        square(&self.drift, "drift".into())?;
        let m = T::from_count(self.m);
        for (i, term) in self.delays.iter().enumerate() {
            match term {
                DelayTerm::Discrete { tau, coeff } => {
                    let name = format!("delays[{i}].tau");
                    if !tau.to_f64_lossy().is_finite() || *tau <= T::zero() {
                        return Err(field_error(name, "discrete delays must be positive"));
                    }
                    if *tau > m {
                        return Err(field_error(
                            name,
                            format!("delay exceeds the horizon m = {}", self.m),
                        ));
                    }
                    square(coeff, format!("delays[{i}].coeff"))?;
                }
                DelayTerm::Distributed {
                    theta_lo,
                    theta_hi,
                    kernel,
                    quadrature_order,
                } => {
                    if *theta_lo < T::zero() || theta_lo >= theta_hi {
                        return Err(field_error(
                            format!("delays[{i}].theta_lo"),
                            "need 0 <= theta_lo < theta_hi",
                        ));
                    }
                    if *theta_hi > m {
                        return Err(field_error(
                            format!("delays[{i}].theta_hi"),
                            format!("delay exceeds the horizon m = {}", self.m),
                        ));
                    }
                    if *quadrature_order == 0 {
                        return Err(field_error(
                            format!("delays[{i}].quadrature_order"),
                            "must be at least 1",
                        ));
                    }
                    if kernel.is_empty() {
                        return Err(field_error(
                            format!("delays[{i}].kernel"),
                            "needs at least one coefficient matrix",
                        ));
                    }
                    for (d, c) in kernel.iter().enumerate() {
                        square(c, format!("delays[{i}].kernel[{d}]"))?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn minimal_horizon<T: Scalar>(delays: impl Iterator<Item = T>) -> usize {
    let max = delays.fold(T::zero(), |a, b| a.max(b)).to_f64_lossy();
    // a delay that is an integer up to rounding must not push m up by one
    ((max * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// Maps a problem with period `period` onto period 1: `t' = t / P`,
/// delays `tau / P`, coefficients multiplied by `P`.
///
/// The input's Fourier series are read as functions of `t / P`, so their
/// coefficients carry over unchanged apart from the factor `P`.
pub fn rescale_to_unit_period<T: Scalar>(dde: &PeriodicDde<T>, period: T) -> Result<PeriodicDde<T>> {
    if !(period > T::zero()) || !period.to_f64_lossy().is_finite() {
        return Err(invalid(format!(
            "period must be positive, got {}",
            period.to_f64_lossy()
        )));
    }
    if period == T::one() {
        return Ok(dde.clone());
    }
    let delays = dde
        .delays
        .iter()
        .map(|term| match term {
            DelayTerm::Discrete { tau, coeff } => DelayTerm::Discrete {
                tau: *tau / period,
                coeff: coeff.scaled(period),
            },
            DelayTerm::Distributed {
                theta_lo,
                theta_hi,
                kernel,
                quadrature_order,
            } => DelayTerm::Distributed {
                theta_lo: *theta_lo / period,
                theta_hi: *theta_hi / period,
                // chain rule, d theta = P d theta', theta^d = P^d theta'^d
                kernel: kernel
                    .iter()
                    .enumerate()
                    .map(|(d, c)| c.scaled(period.powi(d as i32 + 2)))
                    .collect(),
                quadrature_order: *quadrature_order,
            },
        })
        .collect();
    PeriodicDde::with_minimal_horizon(dde.n, dde.drift.scaled(period), delays)
}

/// Sampled sup-norm bounds on the coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds<T: Scalar> {
    /// `max_t |A(t)|_inf`.
    pub sup_a: T,
    /// Sum over delay terms of `max_t |B(t)|_inf`.
    pub sup_b_total: T,
    /// Bound on the total variation of the delay kernel, drift included.
    pub v_bar: T,
}

impl<T: Scalar> CoefficientBounds<T> {
    /// `C*(r) = sup_a + r sup_b_total`.
    pub fn contraction_constant(&self, r: T) -> T {
        self.sup_a + r * self.sup_b_total
    }
}

/// Sup-norm bounds by sampling one period at `n_samples` points (at least
/// 64), inflated by [`BOUND_SAFETY_FACTOR`].
pub fn compute_bounds<T: Scalar>(dde: &PeriodicDde<T>, n_samples: usize) -> Result<CoefficientBounds<T>> {
    let samples = n_samples.max(64);
    let times: Vec<T> = (0..samples)
        .map(|i| T::from_count(i) / T::from_count(samples))
        .collect();
    let sup = |f: &dyn Fn(T) -> T| times.iter().fold(T::zero(), |acc, &t| acc.max(f(t)));

    let sup_a = sup(&|t| dde.drift.norm_inf_at(t));
    let mut sup_b_total = T::zero();
    let mut per_term: Vec<Vec<PointDelay<T>>> = Vec::new();
    for term in &dde.delays {
        let points = match term {
            DelayTerm::Discrete { .. } => dde_term_points(term),
            DelayTerm::Distributed { .. } => discretize_distributed(term)?,
        };
        sup_b_total += sup(&|t| {
            points
                .iter()
                .fold(T::zero(), |acc, p| acc + p.coeff.norm_inf_at(t))
        });
        per_term.push(points);
    }
    let v_bar = sup(&|t| {
        per_term.iter().flatten().fold(dde.drift.norm_inf_at(t), |acc, p| {
            acc + p.coeff.norm_inf_at(t)
        })
    });
    let s = T::lit(BOUND_SAFETY_FACTOR);
    Ok(CoefficientBounds {
        sup_a: sup_a * s,
        sup_b_total: sup_b_total * s,
        v_bar: v_bar * s,
    })
}

fn dde_term_points<T: Scalar>(term: &DelayTerm<T>) -> Vec<PointDelay<T>> {
    match term {
        DelayTerm::Discrete { tau, coeff } => vec![PointDelay {
            tau: *tau,
            coeff: coeff.clone(),
            weight: T::one(),
            sharp: true,
        }],
        DelayTerm::Distributed { .. } => Vec::new(),
    }
}

/// Replaces a distributed term by Gauss-Legendre point delays with the
/// weights folded into the coefficients. Discrete terms pass through.
pub fn discretize_distributed<T: Scalar>(term: &DelayTerm<T>) -> Result<Vec<PointDelay<T>>> {
    let (lo, hi, kernel, order) = match term {
        DelayTerm::Discrete { .. } => return Ok(dde_term_points(term)),
        DelayTerm::Distributed {
            theta_lo,
            theta_hi,
            kernel,
            quadrature_order,
        } => (*theta_lo, *theta_hi, kernel, *quadrature_order),
    };
    if !(hi > lo) {
        return Err(invalid("distributed delay has an empty interval"));
    }
    if order == 0 {
        return Err(invalid("quadrature order must be at least 1"));
    }
    let Some(first) = kernel.first() else {
        return Err(invalid("distributed delay has an empty kernel"));
    };
    let (x, w) = gauss_legendre::<T>(order);
    let half = (hi - lo) * T::lit(0.5);
    let mid = (hi + lo) * T::lit(0.5);
    Ok(x.iter()
        .zip(&w)
        .map(|(&xq, &wq)| {
            let theta = mid + half * xq;
            let weight = half * wq;
            let mut coeff = FourierMatrix::zeros(first.nrows(), first.ncols());
            let mut power = T::one();
            for c in kernel {
                coeff.axpy(weight * power, c);
                power *= theta;
            }
            PointDelay {
                tau: theta,
                coeff,
                weight,
                sharp: false,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Problem files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierEntryJson {
    pub a0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelayJson {
    Discrete {
        tau: f64,
        coeff: Vec<FourierEntryJson>,
    },
    Distributed {
        theta_lo: f64,
        theta_hi: f64,
        kernel: Vec<Vec<FourierEntryJson>>,
        quadrature_order: usize,
    },
}

/// On-disk problem description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    /// Period of the coefficients; rescaled to 1 on load. Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<FourierEntryJson>>,
    #[serde(default)]
    pub delays: Vec<DelayJson>,
}

fn matrix_from_json<T: Scalar>(
    n: usize,
    entries: &[FourierEntryJson],
    field: &str,
) -> Result<FourierMatrix<T>> {
    if entries.len() != n * n {
        return Err(field_error(
            field,
            format!("expected {} entries (n = {n}, row-major), got {}", n * n, entries.len()),
        ));
    }
    let conv = |v: f64, what: &str| -> Result<T> {
        if v.is_finite() {
            Ok(T::lit(v))
        } else {
            Err(field_error(field, format!("non-finite {what}")))
        }
    };
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(FourierSeries {
            a0: conv(e.a0, "a0")?,
            cos: e.cos.iter().map(|&v| conv(v, "cos")).collect::<Result<_>>()?,
            sin: e.sin.iter().map(|&v| conv(v, "sin")).collect::<Result<_>>()?,
        });
    }
    FourierMatrix::new(n, n, out)
}

fn matrix_to_json<T: Scalar>(f: &FourierMatrix<T>) -> Vec<FourierEntryJson> {
    f.entries
        .iter()
        .map(|e| FourierEntryJson {
            a0: e.a0.to_f64_lossy(),
            cos: e.cos.iter().map(|v| v.to_f64_lossy()).collect(),
            sin: e.sin.iter().map(|v| v.to_f64_lossy()).collect(),
        })
        .collect()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field_error(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })
    }

    /// Builds the period-1 problem (rescaling when `period` is given).
    pub fn to_dde<T: Scalar>(&self) -> Result<PeriodicDde<T>> {
        let n = self.n;
        if n == 0 {
            return Err(field_error("n", "state dimension must be at least 1"));
        }
        if self.drift.is_none() && self.delays.is_empty() {
            return Err(field_error("drift", "need a drift matrix or at least one delay term"));
        }
        let drift = match &self.drift {
            Some(e) => matrix_from_json(n, e, "drift")?,
            None => FourierMatrix::zeros(n, n),
        };
        let mut delays = Vec::with_capacity(self.delays.len());
        for (i, d) in self.delays.iter().enumerate() {
            delays.push(match d {
                DelayJson::Discrete { tau, coeff } => DelayTerm::Discrete {
                    tau: T::lit(*tau),
                    coeff: matrix_from_json(n, coeff, &format!("delays[{i}].coeff"))?,
                },
                DelayJson::Distributed {
                    theta_lo,
                    theta_hi,
                    kernel,
                    quadrature_order,
                } => DelayTerm::Distributed {
                    theta_lo: T::lit(*theta_lo),
                    theta_hi: T::lit(*theta_hi),
                    kernel: kernel
                        .iter()
                        .enumerate()
                        .map(|(d, c)| matrix_from_json(n, c, &format!("delays[{i}].kernel[{d}]")))
                        .collect::<Result<_>>()?,
                    quadrature_order: *quadrature_order,
                },
            });
        }
        let dde = PeriodicDde::new(n, self.m, drift, delays)?;
        match self.period {
            None => Ok(dde),
            Some(p) if p > 0.0 && p.is_finite() => rescale_to_unit_period(&dde, T::lit(p)),
            Some(_) => Err(field_error("period", "must be positive")),
        }
    }

    pub fn from_dde<T: Scalar>(dde: &PeriodicDde<T>) -> Self {
        Self {
            n: dde.n,
            m: dde.m,
            period: None,
            drift: Some(matrix_to_json(&dde.drift)),
            delays: dde
                .delays
                .iter()
                .map(|d| match d {
                    DelayTerm::Discrete { tau, coeff } => DelayJson::Discrete {
                        tau: tau.to_f64_lossy(),
                        coeff: matrix_to_json(coeff),
                    },
                    DelayTerm::Distributed {
                        theta_lo,
                        theta_hi,
                        kernel,
                        quadrature_order,
                    } => DelayJson::Distributed {
                        theta_lo: theta_lo.to_f64_lossy(),
                        theta_hi: theta_hi.to_f64_lossy(),
                        kernel: kernel.iter().map(matrix_to_json).collect(),
                        quadrature_order: *quadrature_order,
                    },
                })
                .collect(),
        }
    }
}

/// Reads a problem file from disk.
pub fn load_problem<T: Scalar>(path: &std::path::Path) -> Result<PeriodicDde<T>> {
    let text = std::fs::read_to_string(path).map_err(Error::Io)?;
    ProblemFile::parse(&text)?.to_dde()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_delay(b: f64, tau: f64) -> PeriodicDde<f64> {
        PeriodicDde::with_minimal_horizon(
            1,
            FourierMatrix::zeros(1, 1),
            vec![DelayTerm::discrete(tau, FourierMatrix::scalar(b))],
        )
        .unwrap()
    }

    #[test]
    fn rescale_identity_and_scalar_case() {
        let dde = scalar_delay(0.7, 0.5);
        assert_eq!(rescale_to_unit_period(&dde, 1.0).unwrap(), dde);

        let two = scalar_delay(0.7, 1.0);
        let r = rescale_to_unit_period(&two, 2.0).unwrap();
        match &r.delays()[0] {
            DelayTerm::Discrete { tau, coeff } => {
                assert_eq!(*tau, 0.5);
                assert_eq!(coeff.entry(0, 0).a0, 1.4);
            }
            _ => unreachable!(),
        }
        assert_eq!(r.horizon(), 1);
        assert!(rescale_to_unit_period(&dde, 0.0).is_err());
        assert!(rescale_to_unit_period(&dde, -1.0).is_err());
    }

    #[test]
    fn rescale_doubles_drift() {
        let dde = PeriodicDde::with_minimal_horizon(
            1,
            FourierMatrix::scalar(0.3),
            vec![DelayTerm::discrete(1.0, FourierMatrix::scalar(-1.0))],
        )
        .unwrap();
        let r = rescale_to_unit_period(&dde, 2.0).unwrap();
        assert_eq!(r.drift().entry(0, 0).a0, 0.6);
    }

    #[test]
    fn bounds_of_constant_and_periodic_problems() {
        let b = compute_bounds(&scalar_delay(1.0, 0.5), 1024).unwrap();
        assert_eq!(b.sup_a, 0.0);
        assert!((b.sup_b_total - 1.01).abs() < 1e-15);

        let a = FourierMatrix::new(
            1,
            1,
            vec![FourierSeries {
                a0: 2.0,
                cos: vec![1.0],
                sin: vec![],
            }],
        )
        .unwrap();
        let ode = PeriodicDde::new(1, 1, a, vec![]).unwrap();
        let b: CoefficientBounds<f64> = compute_bounds(&ode, 1024).unwrap();
        assert!((b.sup_a - 3.03).abs() < 1e-12);
        assert_eq!(b.sup_b_total, 0.0);

        let two = scalar_delay(1.0, 0.3)
            .with_delay(DelayTerm::discrete(0.6, FourierMatrix::scalar(0.5)))
            .unwrap();
        let b = compute_bounds(&two, 1024).unwrap();
        assert!((b.sup_b_total - 1.515).abs() < 1e-12);
    }

    #[test]
    fn distributed_midpoint_and_exactness() {
        let term = DelayTerm::Distributed {
            theta_lo: 0.2,
            theta_hi: 0.4,
            kernel: vec![FourierMatrix::scalar(1.0)],
            quadrature_order: 1,
        };
        let pts: Vec<PointDelay<f64>> = discretize_distributed(&term).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].tau - 0.3).abs() < 1e-15);
        assert!((pts[0].weight - 0.2).abs() < 1e-15);
        assert!((pts[0].coeff.entry(0, 0).a0 - 0.2).abs() < 1e-15);

        let linear = DelayTerm::Distributed {
            theta_lo: 0.0,
            theta_hi: 1.0,
            kernel: vec![FourierMatrix::scalar(0.0), FourierMatrix::scalar(1.0)],
            quadrature_order: 2,
        };
        let pts = discretize_distributed(&linear).unwrap();
        let total: f64 = pts.iter().map(|p| p.coeff.entry(0, 0).a0).sum();
        assert!((total - 0.5).abs() < 1e-15);
        let wsum: f64 = pts.iter().map(|p| p.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-15);

        let empty = DelayTerm::Distributed {
            theta_lo: 0.5,
            theta_hi: 0.5,
            kernel: vec![FourierMatrix::scalar(1.0)],
            quadrature_order: 3,
        };
        assert!(discretize_distributed(&empty).is_err());
    }

    /// Composite Simpson with Richardson-style refinement until two levels
    /// agree; independent of the Gauss rule under test.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
        let mut n = 16;
        let mut prev = simpson(f, a, b, n);
        loop {
            n *= 2;
            let cur = simpson(f, a, b, n);
            if (cur - prev).abs() < 1e-14 || n > 1 << 20 {
                return cur;
            }
            prev = cur;
        }
    }

    #[test]
    fn order_eight_rule_on_smooth_integrand() {
        // K(theta) = 1 - theta + 0.5 theta^2 applied to x(t - theta) = exp(-theta) cos(3 theta)
        let term = DelayTerm::Distributed {
            theta_lo: 0.3,
            theta_hi: 1.1,
            kernel: vec![
                FourierMatrix::scalar(1.0),
                FourierMatrix::scalar(-1.0),
                FourierMatrix::scalar(0.5),
            ],
            quadrature_order: 8,
        };
        let g = |th: f64| (-th).exp() * (3.0 * th).cos();
        let pts: Vec<PointDelay<f64>> = discretize_distributed(&term).unwrap();
        let gauss: f64 = pts.iter().map(|p| p.coeff.entry(0, 0).a0 * g(p.tau)).sum();
        let reference = adaptive_simpson(&|th| (1.0 - th + 0.5 * th * th) * g(th), 0.3, 1.1);
        assert!((gauss - reference).abs() < 1e-10, "{gauss} vs {reference}");
    }

    #[test]
    fn problem_file_round_trip_and_errors() {
        let text = r#"{"n":1,"m":1,"delays":[{"tau":0.5,"coeff":[{"a0":1.0}]}]}"#;
        let dde: PeriodicDde<f64> = ProblemFile::parse(text).unwrap().to_dde().unwrap();
        assert_eq!(dde, scalar_delay(1.0, 0.5));
        let back: PeriodicDde<f64> = ProblemFile::parse(&serde_json::to_string(&ProblemFile::from_dde(&dde)).unwrap())
            .unwrap()
            .to_dde()
            .unwrap();
        assert_eq!(back, dde);

        let err = ProblemFile::parse(r#"{"n":1,"m":1,"drift":[{"a0":"x"}]}"#).unwrap_err();
        assert!(err.to_string().contains("drift[0].a0"), "{err}");

        let err = ProblemFile::parse(r#"{"n":2,"m":1,"drift":[{"a0":1.0}]}"#)
            .unwrap()
            .to_dde::<f64>()
            .unwrap_err();
        assert!(err.to_string().contains("drift"), "{err}");

        let err = ProblemFile::parse(r#"{"n":1,"m":1,"delays":[{"tau":1.5,"coeff":[{"a0":1.0}]}]}"#)
            .unwrap()
            .to_dde::<f64>()
            .unwrap_err();
        assert!(err.to_string().contains("delays[0].tau"), "{err}");
    }

    fn arb_series() -> impl Strategy<Value = FourierSeries<f64>> {
        (
            -2.0..2.0f64,
            prop::collection::vec(-1.0..1.0f64, 0..4),
            prop::collection::vec(-1.0..1.0f64, 0..4),
        )
            .prop_map(|(a0, cos, sin)| FourierSeries { a0, cos, sin })
    }

    proptest! {
        #[test]
        fn coefficients_are_periodic(s in arb_series(), t in -3.0..3.0f64) {
            let a = s.eval(t);
            let b = s.eval(t + 1.0);
            prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        }

        #[test]
        fn adding_a_delay_never_decreases_bounds(
            b1 in -2.0..2.0f64, b2 in -2.0..2.0f64, c in -1.0..1.0f64,
            tau1 in 0.05..1.0f64, tau2 in 0.05..2.0f64,
        ) {
            let base = PeriodicDde::with_minimal_horizon(
                1,
                FourierMatrix::scalar(c),
                vec![DelayTerm::discrete(tau1, FourierMatrix::scalar(b1))],
            ).unwrap();
            let more = base.with_delay(DelayTerm::discrete(tau2, FourierMatrix::scalar(b2))).unwrap();
            let x = compute_bounds(&base, 64).unwrap();
            let y = compute_bounds(&more, 64).unwrap();
            prop_assert!(y.sup_b_total >= x.sup_b_total);
            prop_assert!(y.v_bar >= x.v_bar);
        }

        #[test]
        fn gauss_rule_exact_for_polynomial_kernels(deg in 0usize..6, lo in 0.0..0.5f64, len in 0.1..1.0f64) {
            let order = deg / 2 + 1;
            let mut kernel = vec![FourierMatrix::scalar(0.0); deg + 1];
            kernel[deg] = FourierMatrix::scalar(1.0);
            let term = DelayTerm::Distributed { theta_lo: lo, theta_hi: lo + len, kernel, quadrature_order: order };
            let pts: Vec<PointDelay<f64>> = discretize_distributed(&term).unwrap();
            let q: f64 = pts.iter().map(|p| p.coeff.entry(0, 0).a0).sum();
            let hi = lo + len;
            let exact = (hi.powi(deg as i32 + 1) - lo.powi(deg as i32 + 1)) / (deg as f64 + 1.0);
            prop_assert!((q - exact).abs() < 1e-13 * (1.0 + exact.abs()));
        }
    }
}
