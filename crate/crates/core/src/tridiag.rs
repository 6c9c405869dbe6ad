/// Solves a tridiagonal system by forward elimination and back substitution.
///
/// `lower[i]` couples row `i + 1` to column `i`, `upper[i]` couples row `i`
/// to column `i + 1`. No pivoting; the caller guarantees diagonal dominance.
/// `diag` and `rhs` are overwritten, the solution is written to `rhs`.
pub fn solve_in_place(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    debug_assert_eq!(rhs.len(), n);
    debug_assert_eq!(lower.len() + 1, n);
    debug_assert_eq!(upper.len() + 1, n);
    for i in 1..n {
        let factor = lower[i - 1] / diag[i - 1];
        diag[i] -= factor * upper[i - 1];
        rhs[i] -= factor * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn matches_dense_elimination() {
        let n = 9;
        let lower: Vec<f64> = (0..n - 1).map(|i| -0.3 - 0.1 * i as f64).collect();
        let upper: Vec<f64> = (0..n - 1).map(|i| -0.2 + 0.05 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 2.0 + 0.5 * (i % 3) as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();

        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            dense[i][i] = diag[i];
            if i + 1 < n {
                dense[i][i + 1] = upper[i];
                dense[i + 1][i] = lower[i];
            }
        }
        let expected = dense_solve(&mut dense, &mut rhs.clone());

        let mut d = diag.clone();
        let mut x = rhs.clone();
        solve_in_place(&lower, &mut d, &upper, &mut x);
        for (a, b) in x.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_with_zero_couplings() {
        let mut d = vec![1.0; 5];
        let mut x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        solve_in_place(&[0.0; 4], &mut d, &[0.0; 4], &mut x);
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
