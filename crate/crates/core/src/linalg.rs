//! Truncated SVD (one-sided Jacobi) and thin QR for small dense matrices.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Scalar};

const MAX_SWEEPS: usize = 60;

/// Thin SVD `m = u * diag(s) * vt`, possibly truncated.
#[derive(Clone, Debug)]
pub struct SvdResult<T: Scalar> {
    /// `rows x k`, orthonormal columns.
    pub u: DenseTensor<T>,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `k x cols`, orthonormal rows.
    pub vt: DenseTensor<T>,
    /// Root-sum-square of the discarded singular values.
    pub truncation_error: f64,
}

impl<T: Scalar> SvdResult<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s) * vt`.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let us = scale_columns(&self.u, &self.s);
        us.matmul(&self.vt).expect("factor shapes agree")
    }
}

pub(crate) fn scale_columns<T: Scalar>(m: &DenseTensor<T>, s: &[f64]) -> DenseTensor<T> {
    let (rows, cols) = m.dims2().expect("matrix");
    let mut out = m.clone();
    let data = out.data_mut();
    for i in 0..rows {
        for j in 0..cols {
            data[i * cols + j] = data[i * cols + j].scale(s[j]);
        }
    }
    out
}

pub(crate) fn scale_rows<T: Scalar>(m: &DenseTensor<T>, s: &[f64]) -> DenseTensor<T> {
    let (rows, cols) = m.dims2().expect("matrix");
    let mut out = m.clone();
    let data = out.data_mut();
    for i in 0..rows {
        for j in 0..cols {
            data[i * cols + j] = data[i * cols + j].scale(s[i]);
        }
    }
    out
}

/// Singular value decomposition keeping at most `max_rank` values.
///
/// One-sided Jacobi (Hestenes) on the columns of `m` or of its adjoint,
/// whichever has fewer columns. Ties among singular values keep their
/// original column order. The largest-magnitude entry of every left singular
/// vector is made real and non-negative.
pub fn svd<T: Scalar>(m: &DenseTensor<T>, max_rank: Option<usize>) -> Result<SvdResult<T>> {
    let (rows, cols) = m.dims2()?;
    if max_rank == Some(0) {
        return Err(Error::InvalidArgument("max-rank must be at least 1".into()));
    }
    let transposed = rows < cols;
    let work = if transposed { m.adjoint()? } else { m.clone() };
    let (p, q) = work.dims2()?;

    // columns of the working matrix and of the accumulated right rotation
    let mut a: Vec<Vec<T>> = (0..q)
        .map(|j| (0..p).map(|i| work.data()[i * q + j]).collect())
        .collect();
    let mut v: Vec<Vec<T>> = (0..q)
        .map(|j| (0..q).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    let total: f64 = a.iter().flatten().map(|x| x.abs_sq()).sum();
    // columns below this squared norm are numerical noise
    let floor = total * f64::EPSILON * f64::EPSILON;
    let tol = (p as f64) * f64::EPSILON;
    let mut converged = q < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q {
            for j in (i + 1)..q {
                let alpha: f64 = a[i].iter().map(|x| x.abs_sq()).sum();
                let beta: f64 = a[j].iter().map(|x| x.abs_sq()).sum();
                let gamma = a[i]
                    .iter()
                    .zip(&a[j])
                    .fold(T::zero(), |acc, (&x, &y)| acc + x.conj() * y);
                let g = gamma.abs();
                if g == 0.0 || alpha <= floor || beta <= floor {
                    continue;
                }
                if g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let e = gamma.phase();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, i, j, c, s, e);
                rotate(&mut v, i, j, c, s, e);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..q).collect();
    // stable sort keeps original column order among ties
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let null_tol = smax * (p.max(q) as f64) * f64::EPSILON;

    let mut s_all = Vec::with_capacity(q);
    let mut left: Vec<Option<Vec<T>>> = Vec::with_capacity(q);
    let mut right: Vec<Vec<T>> = Vec::with_capacity(q);
    for &k in &order {
        let sigma = norms[k];
        s_all.push(sigma);
        if sigma > null_tol && sigma > 0.0 {
            left.push(Some(a[k].iter().map(|x| x.scale(1.0 / sigma)).collect()));
        } else {
            left.push(None);
        }
        right.push(v[k].clone());
    }
    let left = complete_orthonormal(left, p);

    let keep = max_rank.map_or(q, |r| r.min(q));
    let truncation_error = s_all[keep..].iter().map(|x| x * x).sum::<f64>().sqrt();

    // u_w: p x keep, v_w: q x keep, work = u_w diag(s) v_w^H
    let (mut ucols, mut vcols) = if transposed {
        // m = work^H = v_w diag(s) u_w^H
        (right[..keep].to_vec(), left[..keep].to_vec())
    } else {
        (left[..keep].to_vec(), right[..keep].to_vec())
    };
    for (ucol, vcol) in ucols.iter_mut().zip(vcols.iter_mut()) {
        let (mut best, mut bi) = (-1.0, 0);
        for (i, x) in ucol.iter().enumerate() {
            let a = x.abs();
            if a > best {
                best = a;
                bi = i;
            }
        }
        let ph = ucol[bi].phase();
        let phc = ph.conj();
        for x in ucol.iter_mut() {
            *x *= phc;
        }
        // vt row k is conj(vcol); multiplying u by conj(ph) and vt by ph
        for x in vcol.iter_mut() {
            *x *= phc;
        }
    }
    let u = DenseTensor::from_fn(&[rows, keep], |ix| ucols[ix[1]][ix[0]]);
    let vt = DenseTensor::from_fn(&[keep, cols], |ix| vcols[ix[0]][ix[1]].conj());
    Ok(SvdResult {
        u,
        s: s_all[..keep].to_vec(),
        vt,
        truncation_error,
    })
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], i: usize, j: usize, c: f64, s: f64, e: T) {
    let ec = e.conj();
    let (lo, hi) = cols.split_at_mut(j);
    let (ci, cj) = (&mut lo[i], &mut hi[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let b = *y * ec;
        let xi = *x;
        *x = xi.scale(c) - b.scale(s);
        *y = xi.scale(s) + b.scale(c);
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other column.
fn complete_orthonormal<T: Scalar>(cols: Vec<Option<Vec<T>>>, dim: usize) -> Vec<Vec<T>> {
    let mut basis: Vec<Vec<T>> = cols.iter().flatten().cloned().collect();
    let mut candidate = 0usize;
    cols.into_iter()
        .map(|c| match c {
            Some(v) => v,
            None => loop {
                assert!(candidate < dim, "cannot complete an orthonormal basis");
                let mut w: Vec<T> = (0..dim)
                    .map(|i| if i == candidate { T::one() } else { T::zero() })
                    .collect();
                candidate += 1;
                for _ in 0..2 {
                    for b in &basis {
                        let proj = b
                            .iter()
                            .zip(&w)
                            .fold(T::zero(), |acc, (&x, &y)| acc + x.conj() * y);
                        for (wi, &bi) in w.iter_mut().zip(b) {
                            *wi = *wi - bi * proj;
                        }
                    }
                }
                let n = w.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt();
                if n > 0.5 {
                    let w: Vec<T> = w.into_iter().map(|x| x.scale(1.0 / n)).collect();
                    basis.push(w.clone());
                    break w;
                }
            },
        })
        .collect()
}

/// Thin QR of a `rows x cols` matrix with `rows >= cols`: `q` has orthonormal
/// columns and `r` is upper triangular. Rank-deficient columns get an
/// arbitrary orthonormal completion with a zero diagonal in `r`.
pub fn qr<T: Scalar>(m: &DenseTensor<T>) -> Result<(DenseTensor<T>, DenseTensor<T>)> {
    let (rows, cols) = m.dims2()?;
    if rows < cols {
        return Err(Error::ShapeMismatch(format!(
            "thin QR needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let scale = m.frobenius_norm();
    let mut q: Vec<Option<Vec<T>>> = Vec::with_capacity(cols);
    let mut r = DenseTensor::<T>::zeros(&[cols, cols]);
    for j in 0..cols {
        let mut w: Vec<T> = (0..rows).map(|i| m.data()[i * cols + j]).collect();
        // modified Gram-Schmidt, applied twice
        for _ in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let Some(qk) = qk else { continue };
                let proj = qk
                    .iter()
                    .zip(&w)
                    .fold(T::zero(), |acc, (&x, &y)| acc + x.conj() * y);
                r.set(&[k, j], r.get(&[k, j]) + proj);
                for (wi, &qi) in w.iter_mut().zip(qk) {
                    *wi = *wi - qi * proj;
                }
            }
        }
        let n = w.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt();
        if n > scale * 1e-14 && n > 0.0 {
            r.set(&[j, j], T::from_real(n));
            q.push(Some(w.into_iter().map(|x| x.scale(1.0 / n)).collect()));
        } else {
            q.push(None);
        }
    }
    let q = complete_orthonormal(q, rows);
    let qm = DenseTensor::from_fn(&[rows, cols], |ix| q[ix[1]][ix[0]]);
    Ok((qm, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(rows: usize, cols: usize, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(&[rows, cols], |_| rng.gen_range(-1.0..1.0))
    }

    fn random_complex(rows: usize, cols: usize, seed: u64) -> DenseTensor<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(&[rows, cols], |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn orthonormal_cols<T: Scalar>(u: &DenseTensor<T>) -> f64 {
        let g = u.adjoint().unwrap().matmul(u).unwrap();
        g.max_abs_diff(&DenseTensor::identity(g.shape()[0])).unwrap()
    }

    #[test]
    fn identity_singular_values() {
        let r = svd(&DenseTensor::<f64>::identity(2), None).unwrap();
        assert_eq!(r.s, vec![1.0, 1.0]);
        assert_eq!(r.truncation_error, 0.0);
    }

    #[test]
    fn diagonal_truncation() {
        let m = DenseTensor::matrix(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let r = svd(&m, Some(1)).unwrap();
        assert_eq!(r.s, vec![3.0]);
        assert!((r.truncation_error - 1.0).abs() < 1e-15);
        assert_eq!(r.u.shape(), &[2, 1]);
        assert_eq!(r.vt.shape(), &[1, 2]);
    }

    #[test]
    fn random_reconstruction() {
        for (rows, cols, seed) in [(4, 4, 1), (6, 3, 2), (3, 7, 3), (16, 16, 4), (64, 64, 5)] {
            let m = random_real(rows, cols, seed);
            let r = svd(&m, None).unwrap();
            let err = r.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
            assert!(err < 1e-12, "{rows}x{cols}: {err}");
            assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(orthonormal_cols(&r.u) < 1e-12);
            assert!(orthonormal_cols(&r.vt.adjoint().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn complex_reconstruction() {
        for (rows, cols, seed) in [(8, 8, 11), (8, 4, 12), (2, 5, 13)] {
            let m = random_complex(rows, cols, seed);
            let r = svd(&m, None).unwrap();
            let err = r.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
            assert!(err < 1e-12, "{err}");
            assert!(orthonormal_cols(&r.u) < 1e-12);
        }
    }

    #[test]
    fn sign_convention() {
        let m = random_complex(5, 5, 21);
        let r = svd(&m, None).unwrap();
        let (rows, k) = r.u.dims2().unwrap();
        for j in 0..k {
            let col: Vec<Complex64> = (0..rows).map(|i| r.u.get(&[i, j])).collect();
            let best = col
                .iter()
                .cloned()
                .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
                .unwrap();
            assert!(best.re >= 0.0 && best.im.abs() < 1e-14);
        }
    }

    #[test]
    fn zero_matrix_gives_identity_blocks() {
        let r = svd(&DenseTensor::<f64>::zeros(&[3, 2]), None).unwrap();
        assert_eq!(r.s, vec![0.0, 0.0]);
        assert_eq!(r.u.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(r.vt, DenseTensor::identity(2));
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_factors() {
        // rank 1 outer product
        let m = DenseTensor::from_fn(&[4, 4], |i| ((i[0] + 1) * (i[1] + 2)) as f64);
        let r = svd(&m, None).unwrap();
        assert!(r.s[1] < 1e-12 * r.s[0]);
        assert!(orthonormal_cols(&r.u) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let t = DenseTensor::<f64>::zeros(&[2, 2, 2]);
        assert!(matches!(svd(&t, None), Err(Error::NotMatrix(3))));
        assert!(svd(&DenseTensor::<f64>::identity(2), Some(0)).is_err());
    }

    #[test]
    fn qr_factors() {
        let m = random_complex(8, 4, 31);
        let (q, r) = qr(&m).unwrap();
        assert!(orthonormal_cols(&q) < 1e-12);
        assert!(q.matmul(&r).unwrap().max_abs_diff(&m).unwrap() < 1e-12);
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(r.get(&[i, j]), Complex64::new(0.0, 0.0));
            }
        }
        // rank-deficient input still yields an isometry
        let z = DenseTensor::<Complex64>::zeros(&[6, 3]);
        let (q, r) = qr(&z).unwrap();
        assert!(orthonormal_cols(&q) < 1e-12);
        assert_eq!(r.frobenius_norm(), 0.0);
    }
}
