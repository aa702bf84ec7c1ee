//! Dyadic interval arithmetic with directed rounding.
//!
//! Numbers are `mant * 2^exp` with a big-integer mantissa. Every operation
//! takes a working precision p and rounds the lower endpoint down and the
//! upper endpoint up to p mantissa bits, so a [`DyadicInterval`] always
//! encloses the exact real result. The only irrational ingredient ever
//! needed here is sqrt(m), enclosed by an exact integer square root at
//! 2p fractional bits.
//!
//! This is the engine behind interval-mode digit certification: a floor is
//! accepted only when both endpoints of the enclosure of sqrt(m)/x have the
//! same floor, otherwise the caller escalates precision.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;

/// `mant * 2^exp`, not necessarily normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dyadic {
    pub mant: BigInt,
    pub exp: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic { mant: BigInt::zero(), exp: 0 }
    }

    pub fn from_bigint(n: BigInt) -> Self {
        Dyadic { mant: n, exp: 0 }
    }

    fn bits(&self) -> u64 {
        self.mant.magnitude().bits()
    }

    /// Round to at most `p` mantissa bits, toward -inf (`down`) or +inf.
    fn round(&self, p: u64, down: bool) -> Self {
        let bits = self.bits();
        if bits <= p {
            return self.clone();
        }
        let shift = bits - p;
        let mant = if down {
            self.mant.clone() >> shift
        } else {
            -((-self.mant.clone()) >> shift)
        };
        Dyadic { mant, exp: self.exp + shift as i64 }
    }

    pub fn is_positive(&self) -> bool {
        self.mant.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.mant.is_negative()
    }

    /// Exact floor as a big integer.
    pub fn floor(&self) -> BigInt {
        if self.exp >= 0 {
            self.mant.clone() << self.exp as u64
        } else {
            // BigInt shr is an arithmetic shift: rounds toward -inf
            self.mant.clone() >> (-self.exp) as u64
        }
    }

    pub fn to_f64(&self) -> f64 {
        let e = self.exp.clamp(-4000, 4000) as i32;
        self.mant.to_f64().unwrap_or(f64::NAN) * 2f64.powi(e)
    }

    fn align(a: &Dyadic, b: &Dyadic) -> (BigInt, BigInt, i64) {
        match a.exp.cmp(&b.exp) {
            Ordering::Equal => (a.mant.clone(), b.mant.clone(), a.exp),
            Ordering::Greater => {
                let shift = (a.exp - b.exp) as u64;
                (a.mant.clone() << shift, b.mant.clone(), b.exp)
            }
            Ordering::Less => {
                let shift = (b.exp - a.exp) as u64;
                (a.mant.clone(), b.mant.clone() << shift, a.exp)
            }
        }
    }

    fn add(a: &Dyadic, b: &Dyadic) -> Dyadic {
        let (ma, mb, e) = Dyadic::align(a, b);
        Dyadic { mant: ma + mb, exp: e }
    }

    fn sub(a: &Dyadic, b: &Dyadic) -> Dyadic {
        let (ma, mb, e) = Dyadic::align(a, b);
        Dyadic { mant: ma - mb, exp: e }
    }

    fn mul(a: &Dyadic, b: &Dyadic) -> Dyadic {
        Dyadic { mant: &a.mant * &b.mant, exp: a.exp + b.exp }
    }

    /// Directed p-bit quotient a/b.
    fn div(a: &Dyadic, b: &Dyadic, p: u64, down: bool) -> Dyadic {
        assert!(!b.mant.is_zero());
        let abits = a.bits() as i64;
        let bbits = b.bits() as i64;
        let shift = (p as i64 + bbits - abits + 2).max(0) as u64;
        let num = a.mant.clone() << shift;
        let mant = if down {
            num.div_floor(&b.mant)
        } else {
            num.div_ceil(&b.mant)
        };
        Dyadic { mant, exp: a.exp - b.exp - shift as i64 }
    }

    fn cmp_value(a: &Dyadic, b: &Dyadic) -> Ordering {
        let (ma, mb, _) = Dyadic::align(a, b);
        ma.cmp(&mb)
    }
}

/// A closed interval [lo, hi] with dyadic endpoints, lo <= hi.
#[derive(Debug, Clone)]
pub struct DyadicInterval {
    pub lo: Dyadic,
    pub hi: Dyadic,
}

impl DyadicInterval {
    pub fn point(d: Dyadic) -> Self {
        DyadicInterval { lo: d.clone(), hi: d }
    }

    pub fn from_bigint(n: BigInt) -> Self {
        Self::point(Dyadic::from_bigint(n))
    }

    /// Enclose a rational at p bits.
    pub fn from_rational(r: &BigRational, p: u64) -> Self {
        let num = Dyadic::from_bigint(r.numer().clone());
        let den = Dyadic::from_bigint(r.denom().clone());
        DyadicInterval {
            lo: Dyadic::div(&num, &den, p, true),
            hi: Dyadic::div(&num, &den, p, false),
        }
    }

    /// Enclose sqrt(m) at p fractional bits via exact integer square root:
    /// s = isqrt(m * 4^p) gives s*2^-p <= sqrt(m) < (s+1)*2^-p.
    pub fn sqrt_u64(m: u64, p: u64) -> Self {
        let scaled = BigInt::from(m) << (2 * p);
        let s = scaled.sqrt();
        DyadicInterval {
            lo: Dyadic { mant: s.clone(), exp: -(p as i64) },
            hi: Dyadic { mant: s + BigInt::one(), exp: -(p as i64) },
        }
    }

    pub fn add(&self, other: &Self, p: u64) -> Self {
        DyadicInterval {
            lo: Dyadic::add(&self.lo, &other.lo).round(p, true),
            hi: Dyadic::add(&self.hi, &other.hi).round(p, false),
        }
    }

    pub fn sub(&self, other: &Self, p: u64) -> Self {
        DyadicInterval {
            lo: Dyadic::sub(&self.lo, &other.hi).round(p, true),
            hi: Dyadic::sub(&self.hi, &other.lo).round(p, false),
        }
    }

    pub fn mul(&self, other: &Self, p: u64) -> Self {
        let c = [
            Dyadic::mul(&self.lo, &other.lo),
            Dyadic::mul(&self.lo, &other.hi),
            Dyadic::mul(&self.hi, &other.lo),
            Dyadic::mul(&self.hi, &other.hi),
        ];
        let mut lo = c[0].clone();
        let mut hi = c[0].clone();
        for x in &c[1..] {
            if Dyadic::cmp_value(x, &lo) == Ordering::Less {
                lo = x.clone();
            }
            if Dyadic::cmp_value(x, &hi) == Ordering::Greater {
                hi = x.clone();
            }
        }
        DyadicInterval { lo: lo.round(p, true), hi: hi.round(p, false) }
    }

    /// 1/self for intervals strictly excluding zero.
    pub fn inv(&self, p: u64) -> Option<Self> {
        if self.contains_zero() {
            return None;
        }
        let one = Dyadic::from_bigint(BigInt::one());
        Some(DyadicInterval {
            lo: Dyadic::div(&one, &self.hi, p, true),
            hi: Dyadic::div(&one, &self.lo, p, false),
        })
    }

    pub fn contains_zero(&self) -> bool {
        !self.lo.is_positive() && !self.hi.is_negative()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.lo.is_positive()
    }

    pub fn is_strictly_negative(&self) -> bool {
        self.hi.is_negative()
    }

    /// The shared floor of both endpoints, if they agree.
    pub fn certified_floor(&self) -> Option<BigInt> {
        let f = self.lo.floor();
        if f == self.hi.floor() {
            Some(f)
        } else {
            None
        }
    }

    pub fn midpoint_f64(&self) -> f64 {
        0.5 * (self.lo.to_f64() + self.hi.to_f64())
    }

    pub fn width_f64(&self) -> f64 {
        Dyadic::sub(&self.hi, &self.lo).to_f64()
    }

    /// Enclose `a + b*sqrt(m)` at p bits.
    pub fn from_quad(a: &BigRational, b: &BigRational, m: u64, p: u64) -> Self {
        let ia = Self::from_rational(a, p);
        let ib = Self::from_rational(b, p);
        let sq = Self::sqrt_u64(m, p);
        ia.add(&ib.mul(&sq, p), p)
    }
}

/// Exact sign of `a + b*sqrt(m)` by enclosure with escalating precision,
/// None if the value could be zero at every precision tried (in particular
/// when it is exactly zero).
pub fn quad_sign_by_interval(
    a: &BigRational,
    b: &BigRational,
    m: u64,
    start_prec: u64,
    max_prec: u64,
) -> Option<i8> {
    let mut p = start_prec.max(8);
    loop {
        let enc = DyadicInterval::from_quad(a, b, m, p);
        if enc.is_strictly_positive() {
            return Some(1);
        }
        if enc.is_strictly_negative() {
            return Some(-1);
        }
        if p >= max_prec {
            return None;
        }
        p = (p * 2).min(max_prec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bigint_shr_is_floor() {
        assert_eq!(BigInt::from(-5) >> 1u64, BigInt::from(-3));
        assert_eq!(BigInt::from(5) >> 1u64, BigInt::from(2));
    }

    #[test]
    fn sqrt_enclosure_tightens() {
        for p in [8u64, 32, 128, 512] {
            let s = DyadicInterval::sqrt_u64(2, p);
            let lo = s.lo.to_f64();
            let hi = s.hi.to_f64();
            assert!(lo <= std::f64::consts::SQRT_2 && std::f64::consts::SQRT_2 <= hi);
            assert!(hi - lo <= 2f64.powi(-(p as i32) + 1).max(1e-300));
        }
    }

    #[test]
    fn interval_division_encloses() {
        let a = DyadicInterval::from_rational(&BigRational::new(1.into(), 3.into()), 64);
        let b = a.inv(64).unwrap();
        assert!(b.lo.to_f64() <= 3.0 && 3.0 <= b.hi.to_f64());
        assert!(b.width_f64() < 1e-15);
    }

    #[test]
    fn inv_requires_nonzero() {
        let z = DyadicInterval {
            lo: Dyadic::from_bigint((-1).into()),
            hi: Dyadic::from_bigint(1.into()),
        };
        assert!(z.inv(32).is_none());
    }

    #[test]
    fn certified_floor_agreement() {
        let x = DyadicInterval::from_rational(&BigRational::new(7.into(), 2.into()), 64);
        assert_eq!(x.certified_floor(), Some(BigInt::from(3)));
        let wide = DyadicInterval {
            lo: Dyadic::from_bigint(3.into()),
            hi: Dyadic::from_bigint(4.into()),
        };
        assert_eq!(wide.certified_floor(), None);
    }

    #[test]
    fn quad_sign_matches_small_cases() {
        // 3 - 2 sqrt(2) > 0, -3/2 + sqrt(2) < 0
        let r = |p: i64, q: i64| BigRational::new(p.into(), q.into());
        assert_eq!(quad_sign_by_interval(&r(3, 1), &r(-2, 1), 2, 16, 1024), Some(1));
        assert_eq!(quad_sign_by_interval(&r(-3, 2), &r(1, 1), 2, 16, 1024), Some(-1));
        assert_eq!(quad_sign_by_interval(&r(0, 1), &r(0, 1), 2, 16, 256), None);
    }
}
