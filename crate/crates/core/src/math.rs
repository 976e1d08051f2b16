// Scalar float functions that work with and without `std`.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn sin(x: f64) -> f64 {
        x.sin()
    }
    #[inline]
    pub fn cos(x: f64) -> f64 {
        x.cos()
    }
    #[inline]
    pub fn asin(x: f64) -> f64 {
        x.asin()
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn log2(x: f64) -> f64 {
        x.log2()
    }
    #[inline]
    pub fn log10(x: f64) -> f64 {
        x.log10()
    }
    #[inline]
    pub fn powf(x: f64, y: f64) -> f64 {
        x.powf(y)
    }
    #[inline]
    pub fn ceil(x: f64) -> f64 {
        x.ceil()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub use libm::{asin, ceil, cos, exp, log10, log2, sin, sqrt};
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn powf(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
}

pub use imp::*;

#[inline]
pub fn cis(phase: f64) -> crate::C64 {
    crate::C64::new(cos(phase), sin(phase))
}

pub fn db(x: f64) -> f64 {
    10.0 * log10(x)
}

pub fn from_db(x_db: f64) -> f64 {
    powf(10.0, x_db / 10.0)
}

/// `|z|`, available without `std`.
pub fn abs(z: crate::C64) -> f64 {
    sqrt(z.norm_sqr())
}
