//! Reference-interval rules on [-1, 1]: Gauss-Legendre quadrature and
//! Chebyshev-Lobatto interpolation, integration and differentiation.

use crate::scalar::Scalar;

/// Gauss-Legendre rule with `n` points on [-1, 1], nodes ascending.
pub fn gauss_legendre<T: Scalar>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    // Newton on P_n in f64, then convert; f64 is at least as precise as
    // every supported scalar.
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (
        nodes.into_iter().map(T::lit).collect(),
        weights.into_iter().map(T::lit).collect(),
    )
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Chebyshev points of the second kind (Lobatto points), ascending, `p + 1`
/// of them including both endpoints.
pub fn chebyshev_lobatto<T: Scalar>(p: usize) -> Vec<T> {
    let pf = p as f64;
    (0..=p)
        .map(|j| {
            if j == 0 {
                T::lit(-1.0)
            } else if j == p {
                T::one()
            } else {
                // sin form keeps the points exactly antisymmetric
                T::lit((std::f64::consts::FRAC_PI_2 * (2.0 * j as f64 - pf) / pf).sin())
            }
        })
        .collect()
}

/// Degree-`p` polynomial interpolation on the Chebyshev-Lobatto grid.
#[derive(Debug, Clone)]
pub struct ChebyshevBasis<T: Scalar> {
    pub nodes: Vec<T>,
    pub bary: Vec<T>,
    /// `integration[q][r] = \int_{-1}^{x_q} l_r(s) ds`.
    pub integration: Vec<Vec<T>>,
    /// `differentiation[q][r] = l_r'(x_q)`.
    pub differentiation: Vec<Vec<T>>,
}

impl<T: Scalar> ChebyshevBasis<T> {
    pub fn new(p: usize) -> Self {
        assert!(p >= 1);
        let nodes = chebyshev_lobatto::<T>(p);
        let bary: Vec<T> = (0..=p)
            .map(|j| {
                let s = if j % 2 == 0 { T::one() } else { -T::one() };
                if j == 0 || j == p {
                    s * T::lit(0.5)
                } else {
                    s
                }
            })
            .collect();
        let mut basis = Self {
            nodes,
            bary,
            integration: Vec::new(),
            differentiation: Vec::new(),
        };
        basis.integration = basis.build_integration();
        basis.differentiation = basis.build_differentiation();
        basis
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Lagrange basis values `l_r(xi)` at a point of [-1, 1].
    pub fn interpolation_row(&self, xi: T) -> Vec<T> {
        let n = self.nodes.len();
        let mut row = vec![T::zero(); n];
        for (r, &x) in self.nodes.iter().enumerate() {
            if (xi - x).absval() <= T::eps() * T::lit(4.0) {
                row[r] = T::one();
                return row;
            }
        }
        let mut denom = T::zero();
        for r in 0..n {
            let w = self.bary[r] / (xi - self.nodes[r]);
            row[r] = w;
            denom += w;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
        row
    }

    fn build_integration(&self) -> Vec<Vec<T>> {
        let p = self.degree();
        let (gx, gw) = gauss_legendre::<T>(p + 1);
        let half = T::lit(0.5);
        self.nodes
            .iter()
            .map(|&xq| {
                let mut row = vec![T::zero(); p + 1];
                let len = xq + T::one();
                if len > T::zero() {
                    for (g, w) in gx.iter().zip(&gw) {
                        let s = -T::one() + (*g + T::one()) * half * len;
                        let l = self.interpolation_row(s);
                        for r in 0..=p {
                            row[r] += *w * half * len * l[r];
                        }
                    }
                }
                row
            })
            .collect()
    }

    fn build_differentiation(&self) -> Vec<Vec<T>> {
        let n = self.nodes.len();
        let mut d = vec![vec![T::zero(); n]; n];
        for i in 0..n {
            let mut diag = T::zero();
            for j in 0..n {
                if i != j {
                    let v = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                    d[i][j] = v;
                    diag -= v;
                }
            }
            d[i][i] = diag;
        }
        d
    }
}
