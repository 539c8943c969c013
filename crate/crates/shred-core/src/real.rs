//! Scalar abstraction so every block runs in either `f32` or `f64`.
//!
//! Reference values and reproducibility checks run at 64 bits; training can
//! drop to 32 bits for throughput. The surface is deliberately small so the
//! two widths stay in lockstep. With default features the transcendental
//! functions come from the standard library; under `--no-default-features
//! --features libm` they come from `libm`, which keeps the crate `no_std`.

use core::fmt::{Debug, Display};
use core::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    /// `"f32"` or `"f64"`; recorded in checkpoints.
    fn dtype_name() -> &'static str;

    #[inline]
    fn abs(self) -> Self {
        if self < Self::ZERO {
            -self
        } else {
            self
        }
    }

    #[inline]
    fn maxv(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn minv(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $exp:path, $ln:path, $sqrt:path, $sin:path, $cos:path, $tanh:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[cfg(feature = "std")]
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[cfg(not(feature = "std"))]
            #[inline]
            fn exp(self) -> Self {
                $exp(self)
            }

            #[cfg(feature = "std")]
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[cfg(not(feature = "std"))]
            #[inline]
            fn ln(self) -> Self {
                $ln(self)
            }

            #[cfg(feature = "std")]
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[cfg(not(feature = "std"))]
            #[inline]
            fn sqrt(self) -> Self {
                $sqrt(self)
            }

            #[cfg(feature = "std")]
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[cfg(not(feature = "std"))]
            #[inline]
            fn sin(self) -> Self {
                $sin(self)
            }

            #[cfg(feature = "std")]
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[cfg(not(feature = "std"))]
            #[inline]
            fn cos(self) -> Self {
                $cos(self)
            }

            #[cfg(feature = "std")]
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[cfg(not(feature = "std"))]
            #[inline]
            fn tanh(self) -> Self {
                $tanh(self)
            }

            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn dtype_name() -> &'static str {
                $name
            }
        }
    };
}

impl_real!(
    f32,
    "f32",
    libm::expf,
    libm::logf,
    libm::sqrtf,
    libm::sinf,
    libm::cosf,
    libm::tanhf
);
impl_real!(
    f64,
    "f64",
    libm::exp,
    libm::log,
    libm::sqrt,
    libm::sin,
    libm::cos,
    libm::tanh
);
