//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar the tensor engine can compute with: `f32` for training,
/// `f64` for gradient checks and oracles.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Tag written into checkpoints.
    const DTYPE: &'static str;
    /// Bytes per value in the little-endian encoding.
    const WIDTH: usize;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// `c ← c + a·b` for an `m×k` by `k×n` product, every operand addressed
    /// through (row stride, column stride) so transposes cost nothing.
    #[allow(clippy::too_many_arguments)]
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        c: (&mut [Self], isize, isize),
    );
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

macro_rules! gemm_impl {
    ($kernel:path) => {
        fn gemm_acc(
            m: usize,
            k: usize,
            n: usize,
            a: (&[Self], isize, isize),
            b: (&[Self], isize, isize),
            c: (&mut [Self], isize, isize),
        ) {
            assert!(a.1 >= 0 && a.2 >= 0 && b.1 >= 0 && b.2 >= 0 && c.1 >= 0 && c.2 >= 0);
            assert!(a.0.len() >= span(m, k, a.1, a.2), "gemm: lhs too short");
            assert!(b.0.len() >= span(k, n, b.1, b.2), "gemm: rhs too short");
            assert!(c.0.len() >= span(m, n, c.1, c.2), "gemm: output too short");
            if m == 0 || n == 0 || k == 0 {
                return;
            }
            // SAFETY: the asserts above bound every address the kernel touches.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    1.0,
                    a.0.as_ptr(),
                    a.1,
                    a.2,
                    b.0.as_ptr(),
                    b.1,
                    b.2,
                    1.0,
                    c.0.as_mut_ptr(),
                    c.1,
                    c.2,
                );
            }
        }
    };
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }

    gemm_impl!(matrixmultiply::sgemm);
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }

    gemm_impl!(matrixmultiply::dgemm);
}
