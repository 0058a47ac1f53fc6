//! Floating-point scalar abstraction shared by the network, replay and learner code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// A real scalar usable as network parameter type: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint files.
    const DTYPE: u8;
    /// Encoded width in bytes.
    const WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from `f64`; exact for `f64` itself.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("every Real converts to f64")
    }

    /// Elementwise tanh in place.
    fn tanh_slice(xs: &mut [Self]) {
        for x in xs {
            *x = x.tanh();
        }
    }
}

/// Applies [`Real::tanh_slice`] to every element of an array.
pub fn tanh_inplace<S: Real, D: ndarray::Dimension>(a: &mut ndarray::Array<S, D>) {
    match a.as_slice_memory_order_mut() {
        Some(xs) => S::tanh_slice(xs),
        None => a.map_inplace(|x| S::tanh_slice(std::slice::from_mut(x))),
    }
}

// ln 2 split so that k * LN2_HI is exact for the k that occur
const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
const LN2_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76);
const SHIFT: f64 = 6_755_399_441_055_744.0;

/// tanh within a few ulp of libm, written without branches or integer casts
/// so the loop over a slice vectorizes.
///
/// tanh|x| = -m / (2 + m) with m = expm1(-2|x|). The expm1 is reduced to
/// 2^k (p + 1) - 1 with p a Taylor polynomial of expm1 on |r| <= ln2/2,
/// assembled as 2^k p + (2^k - 1) so k = 0 is exact.
#[inline(always)]
fn tanh_f64(x: f64) -> f64 {
    let y0 = -2.0 * x.abs();
    // tanh rounds to 1 well before this; keeps 2^k normal
    let y = if y0 < -40.0 { -40.0 } else { y0 };
    let shifted = y * std::f64::consts::LOG2_E + SHIFT;
    let kf = shifted - SHIFT;
    let r = (y - kf * LN2_HI) - kf * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r * r + r;
    let k = shifted.to_bits().wrapping_sub(SHIFT.to_bits());
    let scale = f64::from_bits(k.wrapping_add(1023) << 52);
    let m = scale * p + (scale - 1.0);
    (-m / (2.0 + m)).copysign(x)
}

fn tanh_f64_slice(xs: &mut [f64]) {
    for x in xs {
        *x = tanh_f64(*x);
    }
}

// The same scalar code compiled with wider vectors. Rust never fuses mul and
// add, so every path gives identical bits.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tanh_f64_slice_avx512(xs: &mut [f64]) {
    tanh_f64_slice(xs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_f64_slice_avx2(xs: &mut [f64]) {
    tanh_f64_slice(xs)
}

impl Real for f32 {
    const DTYPE: u8 = 1;
    const WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: u8 = 2;
    const WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn tanh_slice(xs: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: feature checked just above
                unsafe { tanh_f64_slice_avx512(xs) };
                return;
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: feature checked just above
                unsafe { tanh_f64_slice_avx2(xs) };
                return;
            }
        }
        tanh_f64_slice(xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_round_trip_is_bit_exact() {
        for x in [0.0f64, -0.0, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300] {
            let mut buf = Vec::new();
            x.write_le(&mut buf);
            assert_eq!(f64::read_le(&buf).to_bits(), x.to_bits());
        }
        let mut buf = Vec::new();
        0.1f32.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf).to_bits(), 0.1f32.to_bits());
    }

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64).abs_diff(b.to_bits() as i64)
    }

    #[test]
    fn fast_tanh_tracks_libm() {
        let mut xs: Vec<f64> = (0..200_001).map(|i| (i as f64 - 100_000.0) / 4_000.0).collect();
        xs.extend([1e-300, -1e-300, 1e-12, 0.0, -0.0, 19.0, 25.0, 400.0, -400.0, f64::INFINITY, f64::NEG_INFINITY]);
        let mut ys = xs.clone();
        f64::tanh_slice(&mut ys);
        let mut plain = xs.clone();
        tanh_f64_slice(&mut plain);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            let mut avx2 = xs.clone();
            // SAFETY: feature checked just above
            unsafe { tanh_f64_slice_avx2(&mut avx2) };
            assert!(avx2.iter().zip(&plain).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for ((x, y), p) in xs.iter().zip(&ys).zip(&plain) {
            assert!(ulps(*y, x.tanh()) <= 4, "x={x} fast={y} libm={}", x.tanh());
            assert_eq!(y.to_bits(), p.to_bits(), "vector path differs at {x}");
            assert!(y.abs() <= 1.0);
        }
        assert!(tanh_f64(-0.0).is_sign_negative());
        assert!(tanh_f64(f64::NAN).is_nan());
    }

    #[test]
    fn tanh_inplace_handles_strided_views() {
        let a = ndarray::Array2::from_shape_fn((3, 4), |(i, j)| i as f64 - j as f64 * 0.7);
        let mut t = a.t().to_owned();
        let mut f = a.clone().reversed_axes();
        let mut strided = a.slice(ndarray::s![.., ..;2]).to_owned().t().to_owned();
        tanh_inplace(&mut t);
        tanh_inplace(&mut f);
        tanh_inplace(&mut strided);
        assert_eq!(t, f);
        let mut want = a.slice(ndarray::s![.., ..;2]).t().to_owned();
        want.map_inplace(|x| f64::tanh_slice(std::slice::from_mut(x)));
        assert_eq!(strided, want);
    }
}
