//! Correctly rounded reference arithmetic on `f64`, used to cross-check the
//! fused residual mask `f * m + f` against the restated form `f * (1 + m)`.
//!
//! Both are computed here as exact dyadic rationals and rounded once, to
//! nearest with ties to even.

use num_bigint::{BigInt, Sign};
use num_traits::{One, Signed, Zero};

/// `mantissa * 2^exponent` with an arbitrary-precision mantissa.
#[derive(Clone, Debug, PartialEq)]
pub struct Dyadic {
    pub mantissa: BigInt,
    pub exponent: i64,
}

impl Dyadic {
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "exact arithmetic on non-finite value {x}");
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let fraction = bits & ((1u64 << 52) - 1);
        let (m, e) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1u64 << 52), biased - 1075)
        };
        let mantissa = BigInt::from(m);
        Self {
            mantissa: if negative { -mantissa } else { mantissa },
            exponent: e,
        }
    }

    pub fn one() -> Self {
        Self {
            mantissa: BigInt::one(),
            exponent: 0,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let e = self.exponent.min(other.exponent);
        let a = &self.mantissa << (self.exponent - e) as usize;
        let b = &other.mantissa << (other.exponent - e) as usize;
        Self {
            mantissa: a + b,
            exponent: e,
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            mantissa: &self.mantissa * &other.mantissa,
            exponent: self.exponent + other.exponent,
        }
    }

    /// Nearest `f64`, ties to even; overflow gives an infinity.
    pub fn to_f64(&self) -> f64 {
        if self.mantissa.is_zero() {
            return 0.0;
        }
        let negative = self.mantissa.sign() == Sign::Minus;
        let mag = self.mantissa.abs();
        let bits = mag.bits() as i64;
        // keep 53 significant bits, but never go below the subnormal quantum
        let shift = (bits - 53).max(-1074 - self.exponent);
        let (q, e) = if shift > 0 {
            let s = shift as usize;
            let q: BigInt = &mag >> s;
            let rem: BigInt = &mag - (&q << s);
            let half = BigInt::one() << (s - 1);
            let round_up = rem > half || (rem == half && (&q & BigInt::one()) == BigInt::one());
            (if round_up { q + 1 } else { q }, self.exponent + shift)
        } else {
            (mag, self.exponent)
        };
        let q: u64 = q.try_into().expect("at most 54 significant bits");
        let v = scale_pow2(q as f64, e);
        if negative {
            -v
        } else {
            v
        }
    }
}

/// `x * 2^e`, exact whenever the result is representable.
fn scale_pow2(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= f64::from_bits(((1000 + 1023) as u64) << 52);
        e -= 1000;
    }
    while e < -1000 {
        x *= f64::from_bits(((-1000 + 1023) as u64) << 52);
        e += 1000;
    }
    x * f64::from_bits(((e + 1023) as u64) << 52)
}

/// `f * (1 + m)` rounded once.
pub fn residual_scale(f: f64, m: f64) -> f64 {
    Dyadic::from_f64(f).mul(&Dyadic::one().add(&Dyadic::from_f64(m))).to_f64()
}

/// `f * m + f` rounded once.
pub fn residual_mask(f: f64, m: f64) -> f64 {
    let fd = Dyadic::from_f64(f);
    fd.mul(&Dyadic::from_f64(m)).add(&fd).to_f64()
}
