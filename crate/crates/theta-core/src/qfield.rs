//! Exact arithmetic in the real quadratic field Q(sqrt(m)).
//!
//! A [`QuadNumber`] is `a + b*sqrt(m)` with arbitrary-precision rational
//! coefficients and a fixed non-square radicand `m >= 2`. Since sqrt(m) is
//! irrational the representation is unique, so equality is componentwise.
//! Sign and floor are decided by exact integer comparisons, never by
//! floating point: this is what makes digit computation on exact orbits
//! certified rather than merely probable.

use num_bigint::BigInt;
use num_integer::{Integer, Roots};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QFieldError {
    /// Radicand must be an integer >= 2 that is not a perfect square.
    #[error("invalid radicand {0}: must be a non-square integer >= 2")]
    InvalidRadicand(u64),
    /// Arithmetic between numbers from different fields is undefined.
    #[error("mismatched radicands {0} and {1}")]
    MismatchedRadicand(u64, u64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("cannot parse {0:?} as a quadratic number")]
    Parse(String),
}

/// Returns true if `m` is admissible as a radicand: non-square and >= 2.
pub fn valid_radicand(m: u64) -> bool {
    let r = m.sqrt();
    m >= 2 && r * r != m
}

/// An element `a + b*sqrt(m)` of Q(sqrt(m)), kept in lowest terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuadNumber {
    a: BigRational,
    b: BigRational,
    m: u64,
}

impl QuadNumber {
    pub fn new(a: BigRational, b: BigRational, m: u64) -> Result<Self, QFieldError> {
        if !valid_radicand(m) {
            return Err(QFieldError::InvalidRadicand(m));
        }
        Ok(QuadNumber { a, b, m })
    }

    /// `p/q + 0*sqrt(m)`, a rational element of the field.
    pub fn from_ratio(p: i64, q: i64, m: u64) -> Result<Self, QFieldError> {
        if q == 0 {
            return Err(QFieldError::DivisionByZero);
        }
        Self::new(
            BigRational::new(BigInt::from(p), BigInt::from(q)),
            BigRational::zero(),
            m,
        )
    }

    pub fn from_rational(r: BigRational, m: u64) -> Result<Self, QFieldError> {
        Self::new(r, BigRational::zero(), m)
    }

    pub fn zero(m: u64) -> Result<Self, QFieldError> {
        Self::from_ratio(0, 1, m)
    }

    /// The generator sqrt(m) itself.
    pub fn sqrt_radicand(m: u64) -> Result<Self, QFieldError> {
        Self::new(BigRational::zero(), BigRational::one(), m)
    }

    pub fn a(&self) -> &BigRational {
        &self.a
    }

    pub fn b(&self) -> &BigRational {
        &self.b
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    pub fn is_rational(&self) -> bool {
        self.b.is_zero()
    }

    fn same_field(&self, other: &Self) -> Result<(), QFieldError> {
        if self.m == other.m {
            Ok(())
        } else {
            Err(QFieldError::MismatchedRadicand(self.m, other.m))
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, QFieldError> {
        self.same_field(other)?;
        Ok(QuadNumber {
            a: &self.a + &other.a,
            b: &self.b + &other.b,
            m: self.m,
        })
    }

    pub fn checked_sub(&self, other: &Self) -> Result<Self, QFieldError> {
        self.same_field(other)?;
        Ok(QuadNumber {
            a: &self.a - &other.a,
            b: &self.b - &other.b,
            m: self.m,
        })
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, QFieldError> {
        self.same_field(other)?;
        let m = BigRational::from(BigInt::from(self.m));
        Ok(QuadNumber {
            a: &self.a * &other.a + &self.b * &other.b * &m,
            b: &self.a * &other.b + &self.b * &other.a,
            m: self.m,
        })
    }

    pub fn checked_div(&self, other: &Self) -> Result<Self, QFieldError> {
        self.checked_mul(&other.inv()?)
    }

    pub fn neg(&self) -> Self {
        QuadNumber {
            a: -&self.a,
            b: -&self.b,
            m: self.m,
        }
    }

    /// Multiplicative inverse via the conjugate:
    /// `1/(a + b*sqrt(m)) = (a - b*sqrt(m)) / (a^2 - b^2 m)`.
    /// The denominator is a nonzero rational whenever the number is nonzero,
    /// because sqrt(m) is irrational.
    pub fn inv(&self) -> Result<Self, QFieldError> {
        if self.is_zero() {
            return Err(QFieldError::DivisionByZero);
        }
        let m = BigRational::from(BigInt::from(self.m));
        let norm = &self.a * &self.a - &self.b * &self.b * &m;
        debug_assert!(!norm.is_zero());
        Ok(QuadNumber {
            a: &self.a / &norm,
            b: -&self.b / &norm,
            m: self.m,
        })
    }

    /// Scale by an integer.
    pub fn scale_int(&self, k: &BigInt) -> Self {
        let k = BigRational::from(k.clone());
        QuadNumber {
            a: &self.a * &k,
            b: &self.b * &k,
            m: self.m,
        }
    }

    /// Exact sign: -1, 0, or +1.
    ///
    /// When a and b have opposite signs the comparison |a| vs |b|*sqrt(m)
    /// reduces to the integer-rational comparison a^2 vs b^2 m; equality is
    /// impossible for nonzero b since m is not a square.
    pub fn sign(&self) -> i8 {
        let sa = rational_sign(&self.a);
        let sb = rational_sign(&self.b);
        match (sa, sb) {
            (0, 0) => 0,
            (s, 0) | (0, s) => s,
            (s, t) if s == t => s,
            (s, _) => {
                let m = BigRational::from(BigInt::from(self.m));
                let lhs = &self.a * &self.a;
                let rhs = &self.b * &self.b * &m;
                match lhs.cmp(&rhs) {
                    Ordering::Greater => s,
                    Ordering::Less => -s,
                    Ordering::Equal => unreachable!("sqrt({}) would be rational", self.m),
                }
            }
        }
    }

    /// Exact floor.
    ///
    /// Writing the number over a common positive denominator D as
    /// (A + P*sqrt(m))/D with integer A, P, the bracket
    /// s <= |P|*sqrt(m) < s+1 comes from the exact integer square root
    /// s = isqrt(P^2 m). Both inequalities are strict for P != 0 since
    /// P*sqrt(m) is irrational, so floor(A + P*sqrt(m)) is A+s for P >= 0
    /// and A-s-1 for P < 0, and the outer division is plain floored
    /// integer division.
    pub fn floor(&self) -> BigInt {
        let (pa, qa) = (self.a.numer(), self.a.denom());
        let (pb, qb) = (self.b.numer(), self.b.denom());
        let big_a = pa * qb;
        let big_p = pb * qa;
        let d = qa * qb;
        debug_assert!(d.is_positive());
        let num = if big_p.is_negative() {
            let s = (&big_p * &big_p * BigInt::from(self.m)).sqrt();
            big_a - s - 1
        } else {
            let s = (&big_p * &big_p * BigInt::from(self.m)).sqrt();
            big_a + s
        };
        num.div_floor(&d)
    }

    /// Compare against an integer without constructing intermediates.
    pub fn cmp_int(&self, k: i64) -> Ordering {
        let diff = QuadNumber {
            a: &self.a - BigRational::from(BigInt::from(k)),
            b: self.b.clone(),
            m: self.m,
        };
        match diff.sign() {
            s if s < 0 => Ordering::Less,
            0 => Ordering::Equal,
            _ => Ordering::Greater,
        }
    }

    /// Round to f64 through an exact floor of x * 2^64, accurate to within
    /// about one ulp even when a and b nearly cancel.
    pub fn to_f64(&self) -> f64 {
        let shifted = QuadNumber {
            a: &self.a * BigRational::from(BigInt::one() << 64),
            b: &self.b * BigRational::from(BigInt::one() << 64),
            m: self.m,
        };
        let n = shifted.floor();
        n.to_f64().unwrap_or(f64::NAN) / 18446744073709551616.0
    }

    /// Exact decimal rendering, rounded to nearest at `digits` places.
    pub fn to_decimal_string(&self, digits: usize) -> String {
        let pow = BigInt::from(10u64).pow(digits as u32);
        let scaled = QuadNumber {
            a: &self.a * BigRational::from(pow.clone()) + BigRational::new(BigInt::one(), BigInt::from(2)),
            b: &self.b * BigRational::from(pow.clone()),
            m: self.m,
        };
        let n = scaled.floor();
        let negative = n.is_negative();
        let abs = n.abs();
        let (int_part, frac_part) = abs.div_rem(&pow);
        let frac = format!("{:0>width$}", frac_part.to_string(), width = digits);
        let sign = if negative { "-" } else { "" };
        if digits == 0 {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{frac}")
        }
    }

    /// Parse the canonical text form `a+b√m` (or `a-b√m`), where a and b are
    /// rationals like `3`, `-1/2`. The ASCII spelling `sqrt` is accepted, the
    /// radicand may be parenthesized, the coefficient may be joined with `*`
    /// or omitted (`b√m`, `√m`, `-√m`), and a bare rational (b = 0) parses
    /// when a default radicand is supplied.
    pub fn parse(s: &str, default_m: Option<u64>) -> Result<Self, QFieldError> {
        let err = || QFieldError::Parse(s.to_string());
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (root_at, root_len) = match (t.find('√'), t.find("sqrt")) {
            (Some(i), _) => (i, '√'.len_utf8()),
            (None, Some(i)) => (i, 4),
            (None, None) => {
                let m = default_m.ok_or_else(err)?;
                let r = parse_rational(&t).ok_or_else(err)?;
                return Self::from_rational(r, m);
            }
        };
        let mut radicand = &t[root_at + root_len..];
        if let Some(inner) = radicand.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            radicand = inner;
        }
        let m: u64 = radicand.parse().map_err(|_| err())?;
        let head = t[..root_at].strip_suffix('*').unwrap_or(&t[..root_at]);
        // split head into "a" and signed "b" at the last top-level +/-;
        // a head without one is a bare coefficient (a = 0)
        let bytes = head.as_bytes();
        let mut split = None;
        for i in (1..bytes.len()).rev() {
            if (bytes[i] == b'+' || bytes[i] == b'-') && bytes[i - 1] != b'/' {
                split = Some(i);
                break;
            }
        }
        let zero = BigRational::from_integer(BigInt::from(0));
        let (a, b_text, negate) = match split {
            Some(i) => {
                (parse_rational(&head[..i]).ok_or_else(err)?, &head[i + 1..], bytes[i] == b'-')
            }
            None => match head.strip_prefix('-') {
                Some(rest) => (zero, rest, true),
                None => (zero, head, false),
            },
        };
        let mut b = if b_text.is_empty() {
            BigRational::from_integer(BigInt::from(1))
        } else {
            parse_rational(b_text).ok_or_else(err)?
        };
        if negate {
            b = -b;
        }
        Self::new(a, b, m)
    }
}

fn rational_sign(r: &BigRational) -> i8 {
    if r.is_zero() {
        0
    } else if r.is_positive() {
        1
    } else {
        -1
    }
}

/// Parse `p`, `-p`, `p/q` into a rational.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().ok()?;
            let q: BigInt = q.trim().parse().ok()?;
            if q.is_zero() {
                None
            } else {
                Some(BigRational::new(p, q))
            }
        }
        None => {
            let p: BigInt = s.parse().ok()?;
            Some(BigRational::from(p))
        }
    }
}

impl PartialOrd for QuadNumber {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.m != other.m {
            return None;
        }
        let diff = self.checked_sub(other).ok()?;
        Some(match diff.sign() {
            s if s < 0 => Ordering::Less,
            0 => Ordering::Equal,
            _ => Ordering::Greater,
        })
    }
}

impl fmt::Display for QuadNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b_abs = self.b.abs();
        let sign = if self.b.is_negative() { '-' } else { '+' };
        write!(f, "{}{}{}√{}", self.a, sign, b_abs, self.m)
    }
}
