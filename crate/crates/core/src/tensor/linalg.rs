use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Trans {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c` on contiguous row-major buffers,
/// where `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: Trans,
    b: &[f64],
    tb: Trans,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::N => (k as isize, 1),
        Trans::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::N => (n as isize, 1),
        Trans::T => (1, k as isize),
    };
    // SAFETY: the asserts above pin every buffer to the extents and strides
    // handed to the kernel, so all accesses stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul of {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), Trans::N, b.data(), Trans::N, 0.0, &mut out);
    Ok(Tensor::from_parts(vec![m, n], out))
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Solves `m * x = rhs` for symmetric positive-definite `m` by Cholesky
/// factorization. If the factorization breaks down, diagonal jitter starting
/// at 1e-10 is added and grown tenfold up to 1e-6. `context` names the layer
/// being fitted and is carried by the singularity error.
pub fn solve_spd(m: &Tensor, rhs: &Tensor, context: &str) -> Result<Tensor> {
    let (n, n2) = m.dims2()?;
    if n != n2 {
        return Err(Error::dim(format!("solve_spd needs a square matrix, got {:?}", m.shape())));
    }
    let (rows, k) = rhs.dims2()?;
    if rows != n {
        return Err(Error::dim(format!(
            "solve_spd rhs {:?} against matrix {:?}",
            rhs.shape(),
            m.shape()
        )));
    }
    let a = m.data();
    let scale = m.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-9 * scale {
                return Err(Error::input(format!(
                    "matrix for {context} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut jitter = 0.0;
    let chol = loop {
        if let Some(l) = cholesky(a, n, jitter) {
            break l;
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_MAX * (1.0 + 1e-9) {
            return Err(Error::Singular {
                layer: context.to_string(),
                jitter: JITTER_MAX,
            });
        }
    };
    if jitter > 0.0 {
        log::warn!("{context}: Gram matrix needed diagonal jitter {jitter:e}");
    }

    // Forward then backward substitution, one rhs row at a time.
    let mut x = rhs.data().to_vec();
    for i in 0..n {
        let (done, rest) = x.split_at_mut(i * k);
        let row = &mut rest[..k];
        for j in 0..i {
            let lij = chol[i * n + j];
            if lij != 0.0 {
                let yj = &done[j * k..(j + 1) * k];
                row.iter_mut().zip(yj).for_each(|(r, y)| *r -= lij * y);
            }
        }
        let d = chol[i * n + i];
        row.iter_mut().for_each(|r| *r /= d);
    }
    for i in (0..n).rev() {
        let (head, tail) = x.split_at_mut((i + 1) * k);
        let row = &mut head[i * k..];
        for j in i + 1..n {
            let lji = chol[j * n + i];
            if lji != 0.0 {
                let xj = &tail[(j - i - 1) * k..(j - i) * k];
                row.iter_mut().zip(xj).for_each(|(r, v)| *r -= lji * v);
            }
        }
        let d = chol[i * n + i];
        row.iter_mut().for_each(|r| *r /= d);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            layer: context.to_string(),
            jitter,
        });
    }
    Ok(Tensor::from_parts(vec![n, k], x))
}

/// Lower Cholesky factor of `a + jitter * I`, or `None` on a non-positive pivot.
fn cholesky(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j] + jitter;
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            let (li, lj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            s -= li.iter().zip(lj).map(|(x, y)| x * y).sum::<f64>();
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let n = b.shape()[1];
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            (0..k).map(|p| a.get(&[i, p]) * b.get(&[p, j])).sum()
        })
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn rel_residual(m: &Tensor, x: &Tensor, rhs: &Tensor) -> f64 {
        matmul(m, x).unwrap().sub(rhs).unwrap().norm() / rhs.norm()
    }

    #[test]
    fn matmul_identity_and_row_by_column() {
        let b = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &b).unwrap(), b);
        let r = Tensor::new(&[1, 2], vec![1., 2.]).unwrap();
        let c = Tensor::new(&[2, 1], vec![3., 4.]).unwrap();
        assert_eq!(matmul(&r, &c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (m, k, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
            let a = random(&mut rng, &[m, k]);
            let b = random(&mut rng, &[k, n]);
            let fast = matmul(&a, &b).unwrap();
            let slow = naive_matmul(&a, &b);
            assert!(fast.sub(&slow).unwrap().max_abs() < 1e-12);
        }
        let a = random(&mut rng, &[4, 5]);
        let b = random(&mut rng, &[5, 3]);
        assert!(matmul(&a, &b).unwrap().sub(&naive_matmul(&a, &b)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn gemm_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[5, 4]);
        // a * b^T
        let mut c = vec![0.0; 15];
        gemm(3, 4, 5, 1.0, a.data(), Trans::N, b.data(), Trans::T, 0.0, &mut c);
        let want = naive_matmul(&a, &b.transpose2().unwrap());
        assert!(Tensor::new(&[3, 5], c).unwrap().sub(&want).unwrap().max_abs() < 1e-12);
        // a^T * a
        let mut c = vec![0.0; 16];
        gemm(4, 3, 4, 1.0, a.data(), Trans::T, a.data(), Trans::N, 0.0, &mut c);
        let want = naive_matmul(&a.transpose2().unwrap(), &a);
        assert!(Tensor::new(&[4, 4], c).unwrap().sub(&want).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn solve_scaled_identity() {
        let m = Tensor::eye(3).scale(2.0);
        let x = solve_spd(&m, &Tensor::eye(3), "t").unwrap();
        assert!(x.sub(&Tensor::eye(3).scale(0.5)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn solve_two_by_two_by_hand() {
        // Gaussian elimination: 4a + b = 1, a + 3b = 2 -> a = 1/11, b = 7/11.
        let m = Tensor::new(&[2, 2], vec![4., 1., 1., 3.]).unwrap();
        let rhs = Tensor::new(&[2, 1], vec![1., 2.]).unwrap();
        let x = solve_spd(&m, &rhs, "t").unwrap();
        assert!((x.data()[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((x.data()[1] - 7.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn solve_rank_deficient_with_jitter() {
        // Zero third row and column; rhs consistent with that null direction.
        let m = Tensor::new(&[3, 3], vec![2., 1., 0., 1., 2., 0., 0., 0., 0.]).unwrap();
        let rhs = Tensor::new(&[3, 2], vec![1., 0., 0., 1., 0., 0.]).unwrap();
        let x = solve_spd(&m, &rhs, "t").unwrap();
        assert!(rel_residual(&m, &x, &rhs) <= 1e-6);
    }

    #[test]
    fn solve_indefinite_names_layer() {
        let m = Tensor::new(&[2, 2], vec![1., 0., 0., -1.]).unwrap();
        let err = solve_spd(&m, &Tensor::eye(2), "dense-3").unwrap_err();
        match err {
            Error::Singular { layer, .. } => assert_eq!(layer, "dense-3"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn solve_rejects_asymmetric() {
        let m = Tensor::new(&[2, 2], vec![1., 0.5, 0., 1.]).unwrap();
        assert!(solve_spd(&m, &Tensor::eye(2), "t").is_err());
    }

    #[test]
    fn solve_random_well_conditioned_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let n = rng.random_range(1..40);
            let k = rng.random_range(1..6);
            let b = random(&mut rng, &[n, n]);
            let m = matmul(&b, &b.transpose2().unwrap())
                .unwrap()
                .add(&Tensor::eye(n).scale(0.5))
                .unwrap();
            let rhs = random(&mut rng, &[n, k]);
            let x = solve_spd(&m, &rhs, "t").unwrap();
            assert!(rel_residual(&m, &x, &rhs) <= 1e-8);
        }
    }
}
