//! Shared test problems and independent reference solvers.
#![allow(dead_code)]

use ddefloquet::model::{DelayTerm, FourierMatrix, FourierSeries, PeriodicDde};
use ddefloquet::space::{assemble, build_mesh, DiscretizedOperators};
use ddefloquet::Cx;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ops(dde: &PeriodicDde<f64>, k: usize, p: usize) -> DiscretizedOperators<f64> {
    assemble(dde, build_mesh(dde, k, p).unwrap()).unwrap()
}

/// `x'(t) = x(t - 1/2)`.
pub fn delay_half() -> PeriodicDde<f64> {
    PeriodicDde::new(
        1,
        1,
        FourierMatrix::zeros(1, 1),
        vec![DelayTerm::discrete(0.5, FourierMatrix::scalar(1.0))],
    )
    .unwrap()
}

pub fn zero_problem() -> PeriodicDde<f64> {
    PeriodicDde::new(1, 1, FourierMatrix::zeros(1, 1), vec![]).unwrap()
}

/// `x' = (0.25 + cos 2 pi t) x`.
pub fn periodic_scalar_ode() -> PeriodicDde<f64> {
    let a = FourierMatrix::new(
        1,
        1,
        vec![FourierSeries {
            a0: 0.25,
            cos: vec![1.0],
            sin: vec![],
        }],
    )
    .unwrap();
    PeriodicDde::new(1, 1, a, vec![]).unwrap()
}

/// `x' = [[a, 0], [1, a]] x`.
pub fn jordan_block_ode(a: f64) -> PeriodicDde<f64> {
    let m = nalgebra::DMatrix::from_row_slice(2, 2, &[a, 0.0, 1.0, a]);
    PeriodicDde::new(2, 1, FourierMatrix::constant(&m), vec![]).unwrap()
}

/// `x'(t) = b x(t - 1)`.
pub fn delay_equals_period(b: f64) -> PeriodicDde<f64> {
    PeriodicDde::new(
        1,
        1,
        FourierMatrix::zeros(1, 1),
        vec![DelayTerm::discrete(1.0, FourierMatrix::scalar(b))],
    )
    .unwrap()
}

/// Entry scales of [`random_problem`].
#[derive(Debug, Clone, Copy)]
pub struct Scales {
    pub drift: f64,
    pub drift_harmonic: f64,
    pub delay: f64,
    pub delay_harmonic: f64,
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, mean: f64, harmonic: f64) -> FourierMatrix<f64> {
    let entries = (0..n * n)
        .map(|_| FourierSeries {
            a0: rng.random_range(-mean..=mean),
            cos: vec![rng.random_range(-harmonic..=harmonic)],
            sin: vec![rng.random_range(-harmonic..=harmonic)],
        })
        .collect();
    FourierMatrix::new(n, n, entries).unwrap()
}

/// Seeded 2-D problem with one first-harmonic periodic coefficient per
/// entry and one delay term per entry of `taus`.
pub fn random_problem(seed: u64, taus: &[f64], s: Scales) -> PeriodicDde<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift = random_matrix(&mut rng, 2, s.drift, s.drift_harmonic);
    let delays = taus
        .iter()
        .map(|&tau| DelayTerm::discrete(tau, random_matrix(&mut rng, 2, s.delay, s.delay_harmonic)))
        .collect();
    PeriodicDde::with_minimal_horizon(2, drift, delays).unwrap()
}

/// Single-delay 2-D periodic problem used for the `k`-invariance check.
pub fn random_single_delay(seed: u64) -> PeriodicDde<f64> {
    random_problem(
        seed,
        &[0.5],
        Scales {
            drift: 0.3,
            drift_harmonic: 0.1,
            delay: 0.25,
            delay_harmonic: 0.05,
        },
    )
}

/// Two-period 2-D problem with delays `0.5` and `1.5`, scaled so that the
/// general bound asks for a moderate `k`.
pub fn random_two_period(seed: u64) -> PeriodicDde<f64> {
    random_problem(
        seed,
        &[0.5, 1.5],
        Scales {
            drift: 0.004,
            drift_harmonic: 0.001,
            delay: 0.003,
            delay_harmonic: 0.001,
        },
    )
}

/// Uniform points in the disk `|mu| < r`.
pub fn random_points(seed: u64, count: usize, r: f64) -> Vec<Cx<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rho = r * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            Cx::from_polar(rho, phi)
        })
        .collect()
}

/// Scalar Newton on a holomorphic `f` given as `z -> (f, f')`.
pub fn newton(f: impl Fn(Cx<f64>) -> (Cx<f64>, Cx<f64>), start: Cx<f64>) -> Cx<f64> {
    let mut z = start;
    for _ in 0..100 {
        let (v, d) = f(z);
        let step = v / d;
        z -= step;
        if step.norm() < 1e-16 * z.norm().max(1.0) {
            break;
        }
    }
    z
}

/// Real root of `s = exp(-s / 2)`.
pub fn delay_half_exponent() -> f64 {
    newton(
        |s| (s - (-s * 0.5).exp(), Cx::new(1.0, 0.0) + (-s * 0.5).exp() * 0.5),
        Cx::new(0.7, 0.0),
    )
    .re
}

/// Root of `1 - sqrt(mu) sinh(sqrt(mu) / 2)` near `start`.
pub fn delay_half_pole(start: f64) -> f64 {
    let f = |mu: Cx<f64>| {
        let r = mu.sqrt();
        let v = Cx::new(1.0, 0.0) - r * (r * 0.5).sinh();
        let d = -((r * 0.5).sinh() / (r * 2.0) + (r * 0.5).cosh() * 0.25);
        (v, d)
    };
    newton(f, Cx::new(start, 0.0)).re
}

/// Matches two multisets of `(value, multiplicity)` to `rel`; returns the
/// worst relative distance, or `None` when no bijection exists.
pub fn match_multisets(a: &[(Cx<f64>, usize)], b: &[(Cx<f64>, usize)], rel: f64) -> Option<f64> {
    let expand = |v: &[(Cx<f64>, usize)]| -> Vec<Cx<f64>> {
        v.iter()
            .flat_map(|(z, q)| std::iter::repeat_n(*z, *q))
            .collect()
    };
    let (xa, mut xb) = (expand(a), expand(b));
    if xa.len() != xb.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for z in xa {
        let (idx, d) = xb
            .iter()
            .enumerate()
            .map(|(i, w)| (i, (z - w).norm() / z.norm().max(1e-300)))
            .min_by(|x, y| x.1.total_cmp(&y.1))?;
        if d > rel {
            return None;
        }
        worst = worst.max(d);
        xb.swap_remove(idx);
    }
    Some(worst)
}
