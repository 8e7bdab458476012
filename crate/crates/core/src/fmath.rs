//! Float math shims: `std` intrinsics when available, `libm` otherwise.

#[cfg(feature = "std")]
pub(crate) fn exp2(x: f64) -> f64 {
    x.exp2()
}
#[cfg(not(feature = "std"))]
pub(crate) fn exp2(x: f64) -> f64 {
    libm::exp2(x)
}

#[cfg(feature = "std")]
pub(crate) fn ln(x: f64) -> f64 {
    x.ln()
}
#[cfg(not(feature = "std"))]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
pub(crate) fn powf(x: f64, p: f64) -> f64 {
    x.powf(p)
}
#[cfg(not(feature = "std"))]
pub(crate) fn powf(x: f64, p: f64) -> f64 {
    libm::pow(x, p)
}

#[cfg(feature = "std")]
pub(crate) fn sqrt(x: f64) -> f64 {
    x.sqrt()
}
#[cfg(not(feature = "std"))]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) const LN_2: f64 = core::f64::consts::LN_2;

/// 2-norm of a slice.
pub(crate) fn norm2(xs: &[f64]) -> f64 {
    sqrt(xs.iter().map(|v| v * v).sum())
}

/// FNV-1a over the IEEE-754 bit patterns, little-endian. Used for
/// reproducibility fingerprints of allocations, prices, and instances.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn write_f64(&mut self, v: f64) {
        self.write_bytes(&v.to_bits().to_le_bytes());
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Hash a dense vector of values in order.
pub(crate) fn hash_f64s(xs: &[f64]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(xs.len() as u64);
    for &x in xs {
        h.write_f64(x);
    }
    h.finish()
}
