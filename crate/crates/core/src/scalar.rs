//! Floating-point abstraction so the whole pipeline runs in either f32 or f64.
//!
//! f32 is the working precision for training and solving; f64 exists as a
//! reference mode for finite-difference gradient checks.

use num_traits::{Float, NumAssignOps};
use std::fmt::{Debug, Display};

/// Scalar type the tensors, tape and optimizers are generic over.
///
/// `gemm` computes `C = alpha * A * B + beta * C` on strided slices and is
/// the single compute kernel everything heavy (conv, dense) reduces to.
pub trait Scalar:
    Float + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

/// Highest index touched by a gemm operand, for the bounds check below.
fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    let r = (rows as isize - 1).max(0) * rs;
    let c = (cols as isize - 1).max(0) * cs;
    (r + c) as usize
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c.iter_mut() {
                        *v = *v * beta;
                    }
                    return;
                }
                assert!(max_index(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
                assert!(max_index(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
                assert!(max_index(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
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
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_loops() {
        let m = 3;
        let k = 4;
        let n = 5;
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| 1.0 - i as f32 * 0.25).collect();
        let mut c = vec![0.0f32; m * n];
        f32::gemm(m, k, n, 1.0, &a, k as isize, 1, &b, n as isize, 1, 0.0, &mut c, n as isize, 1);

        for i in 0..m {
            for j in 0..n {
                let mut want = 0.0f32;
                for p in 0..k {
                    want += a[i * k + p] * b[p * n + j];
                }
                assert!((c[i * n + j] - want).abs() < 1e-5, "({i},{j})");
            }
        }
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [2.0f64];
        let b = [3.0f64];
        let mut c = [10.0f64];
        f64::gemm(1, 1, 1, 1.0, &a, 1, 1, &b, 1, 1, 1.0, &mut c, 1, 1);
        assert_eq!(c[0], 16.0);
    }

    #[test]
    fn gemm_transposed_a_via_strides() {
        // A is stored 2x3 row-major but used as its 3x2 transpose.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 6];
        f64::gemm(3, 2, 2, 1.0, &a, 1, 3, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
