use nalgebra::{DMatrix, DVector};

use crate::scalar::{cabs, cx, Cx, Scalar};

/// Eigenvalues of a dense complex matrix; real input takes the real Schur
/// path, which is several times faster.
pub(crate) fn eigenvalues<T: Scalar>(a: &DMatrix<Cx<T>>) -> Vec<Cx<T>> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    if a.iter().all(|z| z.im == T::zero()) {
        let real = a.map(|z| z.re);
        let schur = nalgebra::Schur::try_new(real.clone(), T::eps(), 100 * n)
            .unwrap_or_else(|| nalgebra::Schur::new(real));
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| cx(z.re, z.im))
            .collect();
    }
    let schur = nalgebra::Schur::try_new(a.clone(), T::eps(), 100 * n)
        .unwrap_or_else(|| nalgebra::Schur::new(a.clone()));
    let (_, t) = schur.unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

/// Groups values closer than `rel * max(1, |z|)`; returns cluster means and
/// sizes.
pub(crate) fn cluster<T: Scalar>(values: &[Cx<T>], rel: T) -> Vec<(Cx<T>, usize)> {
    let mut out: Vec<(Cx<T>, usize, Cx<T>)> = Vec::new();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| cabs(*b).partial_cmp(&cabs(*a)).unwrap_or(std::cmp::Ordering::Equal));
    for z in sorted {
        let hit = out.iter_mut().find(|(mean, _, _)| {
            cabs(*mean - z) <= rel * cabs(*mean).max(cabs(z)).max(T::one())
        });
        match hit {
            Some((mean, count, sum)) => {
                *sum += z;
                *count += 1;
                *mean = *sum / T::from_count(*count);
            }
            None => out.push((z, 1, z)),
        }
    }
    out.into_iter().map(|(m, c, _)| (m, c)).collect()
}

/// Orthonormal basis of the numerical null space (singular values below
/// `rel * max(sigma_max, floor)`) and all singular values in descending
/// order. The floor keeps tiny matrices such as a `1 x 1` root from
/// looking full rank.
pub(crate) fn null_space<T: Scalar>(a: &DMatrix<Cx<T>>, rel: T, floor: T) -> (DMatrix<Cx<T>>, Vec<T>) {
    let ncols = a.ncols();
    // pad short matrices so the SVD returns a full right basis
    let work = if a.nrows() < ncols {
        let mut w = DMatrix::zeros(ncols, ncols);
        w.view_mut((0, 0), (a.nrows(), ncols)).copy_from(a);
        w
    } else {
        a.clone()
    };
    let mut svd = nalgebra::SVD::new(work, false, true);
    svd.sort_by_singular_values();
    let sv: Vec<T> = svd.singular_values.iter().copied().collect();
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = sv.first().copied().unwrap_or(T::zero());
    let cut = rel * smax.max(floor);
    let null: Vec<usize> = (0..sv.len()).filter(|&i| !(sv[i] > cut)).collect();
    let mut basis = DMatrix::zeros(ncols, null.len());
    for (j, &i) in null.iter().enumerate() {
        for r in 0..ncols {
            basis[(r, j)] = vt[(i, r)].conj();
        }
    }
    (basis, sv)
}

pub(crate) fn vec_norm<T: Scalar>(v: &DVector<Cx<T>>) -> T {
    v.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt()
}

#[cfg(test)]
pub(crate) fn max_abs<T: Scalar>(a: &DMatrix<Cx<T>>) -> T {
    a.iter().fold(T::zero(), |m, &z| m.max(cabs(z)))
}

/// Induced infinity norm.
pub(crate) fn norm_inf<T: Scalar>(a: &DMatrix<Cx<T>>) -> T {
    (0..a.nrows())
        .map(|i| a.row(i).iter().fold(T::zero(), |s, &z| s + cabs(z)))
        .fold(T::zero(), |m, s| m.max(s))
}

pub(crate) fn trace<T: Scalar>(a: &DMatrix<Cx<T>>) -> Cx<T> {
    (0..a.nrows().min(a.ncols())).fold(Cx::new(T::zero(), T::zero()), |s, i| s + a[(i, i)])
}

/// Roots of the monic polynomial `z^n + c[n-1] z^{n-1} + ... + c[0]`.
pub(crate) fn monic_roots<T: Scalar>(c: &[Cx<T>]) -> Vec<Cx<T>> {
    let n = c.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![-c[0]];
    }
    let mut comp = DMatrix::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = cx(T::one(), T::zero());
    }
    for i in 0..n {
        comp[(i, n - 1)] = -c[i];
    }
    eigenvalues(&comp)
}
