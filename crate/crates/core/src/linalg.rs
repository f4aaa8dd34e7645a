//! Small dense linear-algebra helpers used for verification: an exact
//! (one-sided Jacobi) top-singular-value oracle, independent of the power
//! iteration inside spectral normalization.

/// Top singular value of a row-major `rows x cols` matrix via one-sided
/// Jacobi rotations. Exact to ~1e-12 for the small matrices used here.
pub fn top_singular_value(a: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(a.len(), rows * cols);
    // Work on the side with fewer columns: orthogonalizing n columns costs
    // O(n^2 m) per sweep, and sigma(A) == sigma(A^T).
    if cols > rows {
        let mut at = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                at[c * rows + r] = a[r * cols + c];
            }
        }
        return top_singular_value(&at, cols, rows);
    }

    let m = rows;
    let n = cols;
    // Column-major copy for contiguous column access.
    let mut u = vec![0.0f64; m * n];
    for r in 0..m {
        for c in 0..n {
            u[c * m + r] = a[r * n + c];
        }
    }

    let eps = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let (cp, cq) = (p * m, q * m);
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let x = u[cp + i];
                    let y = u[cq + i];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt().max(1e-300) {
                    continue;
                }
                off = off.max(gamma.abs());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = u[cp + i];
                    let y = u[cq + i];
                    u[cp + i] = c * x - s * y;
                    u[cq + i] = s * x + c * y;
                }
            }
        }
        if off <= eps {
            break;
        }
    }

    let mut best = 0.0f64;
    for c in 0..n {
        let norm2: f64 = (0..m).map(|i| u[c * m + i] * u[c * m + i]).sum();
        best = best.max(norm2.sqrt());
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal() {
        let a = [3.0, 0.0, 0.0, 1.0];
        assert!((top_singular_value(&a, 2, 2) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one() {
        // outer product u v^T has sigma = ||u|| ||v||
        let u = [1.0, 2.0, 2.0];
        let v = [3.0, 4.0];
        let mut a = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                a[i * 2 + j] = u[i] * v[j];
            }
        }
        let expect = 3.0 * 5.0;
        assert!((top_singular_value(&a, 3, 2) - expect).abs() < 1e-10);
    }

    #[test]
    fn wide_equals_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..3 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut at = vec![0.0; 21];
        for r in 0..3 {
            for c in 0..7 {
                at[c * 3 + r] = a[r * 7 + c];
            }
        }
        let s1 = top_singular_value(&a, 3, 7);
        let s2 = top_singular_value(&at, 7, 3);
        assert!((s1 - s2).abs() < 1e-10);
    }

    #[test]
    fn matches_frobenius_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<f64> = (0..8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sigma = top_singular_value(&a, 8, 8);
        let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(sigma <= fro + 1e-12);
        assert!(sigma >= fro / (8.0f64).sqrt() - 1e-12);
    }
}
