//! Small dense solvers used by the regression engine and the linear SVIE solver.

/// In-place LU factorization with partial pivoting of a row-major `n x n`
/// matrix. Returns the pivot permutation, or the offending pivot magnitude when
/// it falls below `min_pivot`.
pub fn lu_factor(a: &mut [f64], n: usize, min_pivot: f64) -> Result<Vec<usize>, f64> {
    debug_assert_eq!(a.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (piv_row, piv_abs) = (k..n)
            .map(|r| (r, a[r * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_abs < min_pivot {
            return Err(piv_abs);
        }
        if piv_row != k {
            for c in 0..n {
                a.swap(k * n + c, piv_row * n + c);
            }
            perm.swap(k, piv_row);
        }
        let pivot = a[k * n + k];
        for r in k + 1..n {
            let factor = a[r * n + k] / pivot;
            a[r * n + k] = factor;
            if factor != 0.0 {
                for c in k + 1..n {
                    a[r * n + c] -= factor * a[k * n + c];
                }
            }
        }
    }
    Ok(perm)
}

/// Solves with factors from [`lu_factor`].
pub fn lu_solve(lu: &[f64], perm: &[usize], n: usize, rhs: &[f64]) -> Vec<f64> {
    let mut x: Vec<f64> = perm.iter().map(|&p| rhs[p]).collect();
    for r in 0..n {
        let mut s = x[r];
        for c in 0..r {
            s -= lu[r * n + c] * x[c];
        }
        x[r] = s;
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= lu[r * n + c] * x[c];
        }
        x[r] = s / lu[r * n + r];
    }
    x
}

/// Cholesky factor `L` (row-major, lower) of a symmetric positive definite
/// matrix, or `None` when a diagonal entry is not positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
        (0..n).map(|r| (0..n).map(|c| a[r * n + c] * x[c]).sum()).collect()
    }

    #[test]
    fn lu_solves_permuted_system() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let b = vec![3.0, 2.0, 4.0];
        let mut f = a.clone();
        let perm = lu_factor(&mut f, 3, 1e-12).unwrap();
        let x = lu_solve(&f, &perm, 3, &b);
        let r = matvec(&a, 3, &x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_reports_singular_pivot() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(lu_factor(&mut a, 2, 1e-12).is_err());
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = vec![4.0, 2.0, 0.4, 2.0, 3.0, 0.5, 0.4, 0.5, 2.0];
        let l = cholesky(&a, 3).unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let x = cholesky_solve(&l, 3, &b);
        let r = matvec(&a, 3, &x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
