//! Dense complex linear-algebra helpers shared by the optimizer modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

const EIGEN_MAX_ITERS: usize = 10_000;

/// Rebuilds the lower triangle from the upper one and zeroes the imaginary
/// part of the diagonal. The upper triangle is authoritative.
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            m[(j, i)] = m[(i, j)].conj();
        }
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
/// Column `k` of the returned matrix is the eigenvector of eigenvalue `k`.
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITERS).ok_or_else(|| {
        Error::Numerical(format!(
            "Hermitian eigendecomposition did not converge ({n}x{n}, frobenius norm {:.3e})",
            m.norm()
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> Result<f64> {
    let (values, _) = hermitian_eigen(m)?;
    Ok(values.last().copied().unwrap_or(0.0))
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn max_eigenvalue(m: &CMat) -> Result<f64> {
    let (values, _) = hermitian_eigen(m)?;
    Ok(values.first().copied().unwrap_or(0.0))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to 0).
pub fn project_psd(m: &CMat) -> Result<CMat> {
    let (values, vectors) = hermitian_eigen(m)?;
    if values.iter().all(|&l| l >= 0.0) {
        let mut out = m.clone();
        hermitize(&mut out);
        return Ok(out);
    }
    Ok(reconstruct(&values, &vectors, |l| l.max(0.0)))
}

/// `Q diag(f(λ)) Qᴴ`.
pub fn reconstruct(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vectors.nrows();
    let mut out = CMat::zeros(n, n);
    for (k, &l) in values.iter().enumerate() {
        let w = f(l);
        if w == 0.0 {
            continue;
        }
        let q = vectors.column(k);
        for j in 0..n {
            let qj = q[j].conj() * w;
            for i in 0..=j {
                out[(i, j)] += q[i] * qj;
            }
        }
    }
    hermitize(&mut out);
    out
}

/// `Re(vᴴ M v)`.
pub fn quad_form(m: &CMat, v: &CVec) -> f64 {
    let n = v.len();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = C64::new(0.0, 0.0);
        for i in 0..n {
            col += v[i].conj() * m[(i, j)];
        }
        acc += col * v[j];
    }
    acc.re
}

/// `Re tr(A B)` for square matrices of equal size.
pub fn trace_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Real part of the Frobenius inner product `Re tr(Aᴴ B)`.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `v vᴴ`.
pub fn outer(v: &CVec) -> CMat {
    let n = v.len();
    let mut out = CMat::from_fn(n, n, |i, j| v[i] * v[j].conj());
    hermitize(&mut out);
    out
}

/// Hadamard product of a real symmetric matrix with a complex one.
pub fn hadamard_real(k: &RMat, m: &CMat) -> CMat {
    CMat::from_fn(k.nrows(), k.ncols(), |i, j| m[(i, j)] * k[(i, j)])
}

/// One draw of `CN(0, I_n)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    })
}

/// `min λ / max(|max λ|, tiny)` style helper: returns `(λ_min, λ_max)`.
pub fn eigen_extremes(m: &CMat) -> Result<(f64, f64)> {
    let (values, _) = hermitian_eigen(m)?;
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    Ok((min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let g = CMat::from_fn(n, n, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let mut h = (&g + g.adjoint()) * C64::new(0.5, 0.0);
        hermitize(&mut h);
        h
    }

    #[test]
    fn eigen_reconstructs_and_sorts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(&mut rng, 6);
        let (values, vectors) = hermitian_eigen(&h).unwrap();
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let back = reconstruct(&values, &vectors, |l| l);
        assert!((back - &h).norm() < 1e-10 * h.norm());
    }

    #[test]
    fn psd_projection_clears_negative_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_hermitian(&mut rng, 5);
        let p = project_psd(&h).unwrap();
        assert!(min_eigenvalue(&p).unwrap() > -1e-12);
        // projecting again is a no-op
        let pp = project_psd(&p).unwrap();
        assert!((pp - &p).norm() < 1e-10);
    }

    #[test]
    fn quad_form_matches_trace_of_outer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_hermitian(&mut rng, 4);
        let v = complex_gaussian(&mut rng, 4);
        let direct = quad_form(&h, &v);
        let lifted = trace_product(&h, &outer(&v));
        assert!((direct - lifted).abs() < 1e-12 * (1.0 + direct.abs()));
    }
}
