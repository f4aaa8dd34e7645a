//! Scalar abstraction: the whole stack runs in f32 for training and in f64
//! for finite-difference verification, over the same code.

use std::fmt::{Debug, Display};

/// Floating-point scalar used by tensors, parameters and losses.
pub trait Real:
    num_traits::Float + num_traits::NumAssign + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C = alpha * op(A) . op(B) + beta * C, all row-major.
    ///
    /// `a` is the physical buffer of the logical m x k matrix A (stored
    /// transposed when `ta`), likewise `b` for the logical k x n matrix B.
    fn gemm(
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_real {
    ($ty:ty, $gemm:path) => {
        impl Real for $ty {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $ty
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                ta: bool,
                tb: bool,
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: A buffer too small");
                assert!(b.len() >= k * n, "gemm: B buffer too small");
                assert!(c.len() >= m * n, "gemm: C buffer too small");
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                unsafe {
                    $gemm(
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
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Shorthand for converting literals into the active scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_plain() {
        // [[1,2],[3,4]] . [[5],[7]] = [[19],[43]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 7.0];
        let mut c = [0.0f64; 2];
        f64::gemm(false, false, 2, 2, 1, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 43.0]);
    }

    #[test]
    fn gemm_transposed_a() {
        // A logical 2x3 stored as 3x2 (transposed); B 3x1.
        // A = [[1,3,5],[2,4,6]], B = [1,1,1]^T -> [9, 12]
        let a_phys = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2 row-major
        let b = [1.0f64, 1.0, 1.0];
        let mut c = [0.0f64; 2];
        f64::gemm(true, false, 2, 3, 1, 1.0, &a_phys, &b, 0.0, &mut c);
        assert_eq!(c, [9.0, 12.0]);
    }

    #[test]
    fn gemm_transposed_b_accumulates() {
        // C starts at [10, 10]; A 1x2; B logical 2x2 = [[1,2],[3,4]]^T of physical.
        let a = [1.0f64, 1.0];
        let b_phys = [1.0f64, 2.0, 3.0, 4.0]; // physical 2x2, logical B = transpose
        let mut c = [10.0f64, 10.0];
        f64::gemm(false, true, 1, 2, 2, 1.0, &a, &b_phys, 1.0, &mut c);
        // B^T = [[1,3],[2,4]] summed over rows -> [3, 7]; plus 10
        assert_eq!(c, [13.0, 17.0]);
    }
}
