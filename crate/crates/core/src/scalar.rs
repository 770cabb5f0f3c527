//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is
//! `num_traits::Float` plus the handful of capabilities the hot paths need:
//! a standard-normal draw and a strided matrix multiply. The matmul hook is
//! what lets the batched MLP paths run on `matrixmultiply`'s cache-blocked
//! kernels for both `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn from_f64(x: f64) -> Self;

    fn to_f64(self) -> f64;

    /// `c[m x n] += alpha * a[m x k] * b[k x n]` with explicit row/column
    /// strides (in elements) for every operand. `c` is scaled by `beta`
    /// first. Strides let callers multiply by a transposed view without
    /// copying.
    ///
    /// # Panics
    /// Panics if a buffer is too short for the stated shape and strides.
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

    /// Width of one scalar in the little-endian binary checkpoint format.
    const BYTE_WIDTH: usize;

    fn write_le_bytes(self, out: &mut Vec<u8>);

    /// Decode one scalar from exactly `BYTE_WIDTH` little-endian bytes.
    fn from_le_bytes(bytes: &[u8]) -> Self;

    #[inline]
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }

    #[inline]
    fn two() -> Self {
        Self::from_f64(2.0)
    }
}

/// Largest index touched by an `m x n` operand with the given strides, plus
/// one. Zero when the operand is empty.
fn required_len(m: usize, n: usize, rs: isize, cs: isize) -> usize {
    if m == 0 || n == 0 {
        return 0;
    }
    let corner = |i: usize, j: usize| i as isize * rs + j as isize * cs;
    let corners = [
        corner(0, 0),
        corner(m - 1, 0),
        corner(0, n - 1),
        corner(m - 1, n - 1),
    ];
    let min = corners.iter().copied().min().unwrap();
    let max = corners.iter().copied().max().unwrap();
    assert!(min >= 0, "negative stride offset out of range");
    max as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            const BYTE_WIDTH: usize = std::mem::size_of::<$t>();

            #[inline]
            fn write_le_bytes(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn from_le_bytes(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("scalar byte width"))
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
                assert!(a.len() >= required_len(m, k, rsa, csa), "gemm: a too short");
                assert!(b.len() >= required_len(k, n, rsb, csb), "gemm: b too short");
                assert!(c.len() >= required_len(m, n, rsc, csc), "gemm: c too short");
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
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

/// All entries finite (no NaN, no infinities).
pub fn all_finite<S: Scalar>(xs: &[S]) -> bool {
    xs.iter().all(|x| x.is_finite())
}
