//! The theta-expansion map, digit sequences, cylinders, and orbit geometry.
//!
//! For theta = 1/sqrt(m) the map on (0, theta] is
//!
//! ```text
//! T(x) = 1/x - theta * floor(1/(theta x)),     T(0) = 0,
//! ```
//!
//! and the digit of x is `l(x) = floor(1/(theta x)) = floor(sqrt(m)/x)`,
//! always >= m. Points 1/(theta k) map to 0 and their expansions terminate.
//!
//! One algorithm runs in three numeric modes. Exact mode keeps orbit points
//! in Q(sqrt(m)) and certifies every floor by integer arithmetic. Interval
//! mode encloses the orbit in dyadic intervals, doubling the working
//! precision (up to a cap) whenever a floor or a termination test is
//! ambiguous, and fails loudly if the cap is reached. Double mode is plain
//! f64 and is what the Monte Carlo harness uses, where digit statistics,
//! not individual digits, are the object of interest.

use crate::dyadic::DyadicInterval;
use crate::qfield::{QFieldError, QuadNumber};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExpansionError {
    #[error(transparent)]
    Field(#[from] QFieldError),
    #[error("point {0} outside the domain (0, theta]")]
    DomainViolation(String),
    #[error("digit at step {step} does not fit in 64 bits")]
    DigitOverflow { step: usize },
    #[error("digit {digit} at index {index} below the minimum {min}")]
    InvalidDigit { index: usize, digit: u64, min: u64 },
    #[error(
        "cannot certify step {step} at precision {precision}: \
         floor candidates {lower} and {upper}"
    )]
    CertificationFailure {
        step: usize,
        precision: u64,
        lower: String,
        upper: String,
    },
    #[error("exact mode requires an exact starting point")]
    ExactInputRequired,
    #[error("orbit terminated at step {step}, before the requested {want}")]
    TerminatedEarly { step: usize, want: usize },
}

/// The parameter pack for one value of m: theta = 1/sqrt(m), m >= 2 non-square.
#[derive(Debug, Clone)]
pub struct ThetaParams {
    m: u64,
    sqrt_m: f64,
    theta: f64,
}

impl ThetaParams {
    pub fn new(m: u64) -> Result<Self, ExpansionError> {
        if !crate::qfield::valid_radicand(m) {
            return Err(QFieldError::InvalidRadicand(m).into());
        }
        let sqrt_m = (m as f64).sqrt();
        Ok(ThetaParams { m, sqrt_m, theta: 1.0 / sqrt_m })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    /// theta as f64 (upper end of the domain).
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sqrt_m(&self) -> f64 {
        self.sqrt_m
    }

    /// theta = sqrt(m)/m exactly.
    pub fn theta_exact(&self) -> QuadNumber {
        QuadNumber::new(
            BigRational::from_integer(0.into()),
            BigRational::new(1.into(), BigInt::from(self.m)),
            self.m,
        )
        .expect("validated radicand")
    }

    /// Smallest possible digit (= m).
    pub fn min_digit(&self) -> u64 {
        self.m
    }
}

/// How orbits are computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Interval { start_precision: u64, max_precision: u64 },
    Double,
}

impl Mode {
    pub fn interval_default() -> Self {
        Mode::Interval { start_precision: 64, max_precision: 4096 }
    }
}

/// A starting point: exact element of Q(sqrt(m)) or a double.
#[derive(Debug, Clone)]
pub enum Point {
    Exact(QuadNumber),
    Double(f64),
}

impl Point {
    pub fn to_f64(&self) -> f64 {
        match self {
            Point::Exact(q) => q.to_f64(),
            Point::Double(x) => *x,
        }
    }

    fn to_exact(&self, m: u64) -> Result<QuadNumber, ExpansionError> {
        match self {
            Point::Exact(q) => Ok(q.clone()),
            Point::Double(x) => {
                let r = BigRational::from_float(*x)
                    .ok_or_else(|| ExpansionError::DomainViolation(format!("{x}")))?;
                Ok(QuadNumber::from_rational(r, m)?)
            }
        }
    }
}

/// Orbit points in the numeric type of the mode that produced them.
#[derive(Debug, Clone)]
pub enum Orbit {
    Exact(Vec<QuadNumber>),
    Double(Vec<f64>),
    Interval(Vec<(f64, f64)>),
}

impl Orbit {
    pub fn len(&self) -> usize {
        match self {
            Orbit::Exact(v) => v.len(),
            Orbit::Double(v) => v.len(),
            Orbit::Interval(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Orbit point k as f64 (midpoint in interval mode).
    pub fn point_f64(&self, k: usize) -> f64 {
        match self {
            Orbit::Exact(v) => v[k].to_f64(),
            Orbit::Double(v) => v[k],
            Orbit::Interval(v) => 0.5 * (v[k].0 + v[k].1),
        }
    }

    pub fn final_point_decimal(&self) -> String {
        match self {
            Orbit::Exact(v) => v.last().map(|q| q.to_decimal_string(30)).unwrap_or_default(),
            Orbit::Double(v) => v.last().map(|x| format!("{x}")).unwrap_or_default(),
            Orbit::Interval(v) => v
                .last()
                .map(|(lo, hi)| format!("{}", 0.5 * (lo + hi)))
                .unwrap_or_default(),
        }
    }
}

/// A digit sequence with its orbit. `orbit[0]` is the starting point and
/// `orbit[k+1] = T(orbit[k])`; if the expansion terminated, the last orbit
/// point is 0 and `digits` holds every digit emitted on the way there.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub m: u64,
    pub mode: Mode,
    pub digits: Vec<u64>,
    pub terminated: bool,
    pub orbit: Orbit,
}

impl Expansion {
    /// The wire format: {m, mode, digits, terminated, final_point_decimal}.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "m": self.m,
            "mode": mode_label(&self.mode),
            "digits": self.digits,
            "terminated": self.terminated,
            "final_point_decimal": self.orbit.final_point_decimal(),
        })
    }
}

pub fn mode_label(mode: &Mode) -> &'static str {
    match mode {
        Mode::Exact => "exact",
        Mode::Interval { .. } => "interval",
        Mode::Double => "double",
    }
}

/// One exact step: digit and image of x under T.
pub fn gauss_step_exact(
    x: &QuadNumber,
    params: &ThetaParams,
) -> Result<(u64, QuadNumber), ExpansionError> {
    check_domain_exact(x, params)?;
    let inv = x.inv()?;
    let z = inv.checked_mul(&QuadNumber::sqrt_radicand(params.m)?)?; // 1/(theta x)
    let d = z.floor();
    debug_assert!(d >= BigInt::from(params.m));
    let digit = d
        .to_u64()
        .ok_or(ExpansionError::DigitOverflow { step: 0 })?;
    let dtheta = QuadNumber::new(
        BigRational::from_integer(0.into()),
        BigRational::new(d, BigInt::from(params.m)),
        params.m,
    )?;
    let next = inv.checked_sub(&dtheta)?;
    debug_assert!(next.sign() >= 0);
    Ok((digit, next))
}

/// One double-precision step. Rounding at cylinder boundaries is resolved
/// toward a digit/next pair satisfying next = 1/x - digit*theta in [0, theta].
#[allow(clippy::neg_cmp_op_on_partial_ord)] // !(x > 0.0) also rejects NaN
pub fn gauss_step_double(x: f64, params: &ThetaParams) -> Result<(u64, f64), ExpansionError> {
    if !(x > 0.0) || x > params.theta * (1.0 + 1e-12) {
        return Err(ExpansionError::DomainViolation(format!("{x}")));
    }
    let r = params.sqrt_m / x;
    if r >= 9.0e18 {
        return Err(ExpansionError::DigitOverflow { step: 0 });
    }
    let mut d = (r.floor() as u64).max(params.m);
    let recip = 1.0 / x;
    let mut next = recip - (d as f64) * params.theta;
    while next > params.theta {
        d += 1;
        next -= params.theta;
    }
    while next < 0.0 && d > params.m {
        d -= 1;
        next += params.theta;
    }
    if next < 0.0 {
        next = 0.0;
    }
    Ok((d, next))
}

fn check_domain_exact(x: &QuadNumber, params: &ThetaParams) -> Result<(), ExpansionError> {
    if x.sign() <= 0 || params.theta_exact().checked_sub(x)?.sign() < 0 {
        return Err(ExpansionError::DomainViolation(x.to_string()));
    }
    Ok(())
}

/// Expand x to at most n digits in the given mode.
pub fn expand(
    x: &Point,
    n: usize,
    params: &ThetaParams,
    mode: &Mode,
) -> Result<Expansion, ExpansionError> {
    match mode {
        Mode::Exact => {
            let q = match x {
                Point::Exact(q) => q.clone(),
                Point::Double(_) => return Err(ExpansionError::ExactInputRequired),
            };
            expand_exact(&q, n, params)
        }
        Mode::Double => expand_double(x.to_f64(), n, params),
        Mode::Interval { start_precision, max_precision } => {
            let q = x.to_exact(params.m)?;
            expand_interval(&q, n, params, *start_precision, *max_precision)
        }
    }
}

fn expand_exact(x0: &QuadNumber, n: usize, params: &ThetaParams) -> Result<Expansion, ExpansionError> {
    check_domain_exact(x0, params)?;
    let mut orbit = vec![x0.clone()];
    let mut digits = Vec::new();
    let mut terminated = false;
    let mut x = x0.clone();
    for step in 0..n {
        let (d, next) = gauss_step_exact(&x, params).map_err(|e| at_step(e, step))?;
        digits.push(d);
        orbit.push(next.clone());
        if next.is_zero() {
            terminated = true;
            break;
        }
        x = next;
    }
    Ok(Expansion { m: params.m, mode: Mode::Exact, digits, terminated, orbit: Orbit::Exact(orbit) })
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // !(x0 > 0.0) also rejects NaN
fn expand_double(x0: f64, n: usize, params: &ThetaParams) -> Result<Expansion, ExpansionError> {
    if !(x0 > 0.0) || x0 > params.theta * (1.0 + 1e-12) {
        return Err(ExpansionError::DomainViolation(format!("{x0}")));
    }
    let mut orbit = vec![x0.min(params.theta)];
    let mut digits = Vec::new();
    let mut terminated = false;
    let mut x = orbit[0];
    for step in 0..n {
        let (d, next) = gauss_step_double(x, params).map_err(|e| at_step(e, step))?;
        digits.push(d);
        orbit.push(next);
        if next == 0.0 {
            terminated = true;
            break;
        }
        x = next;
    }
    Ok(Expansion { m: params.m, mode: Mode::Double, digits, terminated, orbit: Orbit::Double(orbit) })
}

fn at_step(e: ExpansionError, step: usize) -> ExpansionError {
    match e {
        ExpansionError::DigitOverflow { .. } => ExpansionError::DigitOverflow { step },
        other => other,
    }
}

fn expand_interval(
    x0: &QuadNumber,
    n: usize,
    params: &ThetaParams,
    start_precision: u64,
    max_precision: u64,
) -> Result<Expansion, ExpansionError> {
    check_domain_exact(x0, params)?;
    let m = params.m;
    let mut p = start_precision.clamp(16, max_precision.max(16));
    loop {
        match try_expand_interval(x0, n, m, p) {
            Ok(mut exp) => {
                // report the precision that certified the run alongside the cap
                exp.mode = Mode::Interval { start_precision: p, max_precision };
                return Ok(exp);
            }
            Err(ExpansionError::CertificationFailure { step, precision, lower, upper }) => {
                if p >= max_precision {
                    return Err(ExpansionError::CertificationFailure {
                        step,
                        precision,
                        lower,
                        upper,
                    });
                }
                p = (p * 2).min(max_precision);
            }
            Err(other) => return Err(other),
        }
    }
}

fn try_expand_interval(
    x0: &QuadNumber,
    n: usize,
    m: u64,
    p: u64,
) -> Result<Expansion, ExpansionError> {
    let sqm = DyadicInterval::sqrt_u64(m, p);
    let mut x = DyadicInterval::from_quad(x0.a(), x0.b(), m, p);
    let mut orbit = vec![(x.lo.to_f64(), x.hi.to_f64())];
    let mut digits = Vec::new();
    for step in 0..n {
        let ambiguous = |which: &DyadicInterval| ExpansionError::CertificationFailure {
            step,
            precision: p,
            lower: which.lo.floor().to_string(),
            upper: which.hi.floor().to_string(),
        };
        let inv = match x.inv(p) {
            Some(v) => v,
            None => return Err(ambiguous(&x)),
        };
        let z = inv.mul(&sqm, p);
        let d = match z.certified_floor() {
            Some(d) => d,
            None => return Err(ambiguous(&z)),
        };
        let digit = d.to_u64().ok_or(ExpansionError::DigitOverflow { step })?;
        digits.push(digit);
        let dtheta = sqm.mul(
            &DyadicInterval::from_rational(&BigRational::new(d, BigInt::from(m)), p),
            p,
        );
        let next = inv.sub(&dtheta, p);
        orbit.push((next.lo.to_f64(), next.hi.to_f64()));
        if next.contains_zero() || next.is_strictly_negative() {
            // exact termination and a barely-positive point are
            // indistinguishable at this precision
            return Err(ambiguous(&next));
        }
        x = next;
    }
    Ok(Expansion {
        m,
        mode: Mode::Interval { start_precision: p, max_precision: p },
        digits,
        terminated: false,
        orbit: Orbit::Interval(orbit),
    })
}

/// Value of the finite expansion with digit list `digits` and tail 0, by the
/// backward recurrence v <- 1/(theta*d + v).
pub fn evaluate(digits: &[u64], params: &ThetaParams) -> Result<f64, ExpansionError> {
    validate_digits(digits, params)?;
    let mut v = 0.0f64;
    for &d in digits.iter().rev() {
        v = 1.0 / (params.theta * d as f64 + v);
    }
    Ok(v)
}

/// Exact value of the finite expansion, optionally continued by an exact tail.
pub fn evaluate_exact(
    digits: &[u64],
    tail: Option<&QuadNumber>,
    params: &ThetaParams,
) -> Result<QuadNumber, ExpansionError> {
    validate_digits(digits, params)?;
    let theta = params.theta_exact();
    let mut v = match tail {
        Some(t) => t.clone(),
        None => QuadNumber::zero(params.m)?,
    };
    for &d in digits.iter().rev() {
        let dtheta = theta.scale_int(&BigInt::from(d));
        v = dtheta.checked_add(&v)?.inv()?;
    }
    Ok(v)
}

/// Convergents p_k/q_k of the expansion via the two-term recurrence with
/// partial quotients theta*l_k. Returns (p_k, q_k) for k = 1..=len.
pub fn convergents(digits: &[u64], params: &ThetaParams) -> Result<Vec<(f64, f64)>, ExpansionError> {
    validate_digits(digits, params)?;
    let mut out = Vec::with_capacity(digits.len());
    let (mut p_prev, mut p) = (1.0f64, 0.0f64);
    let (mut q_prev, mut q) = (0.0f64, 1.0f64);
    for &d in digits {
        let a = params.theta * d as f64;
        let p_next = a * p + p_prev;
        let q_next = a * q + q_prev;
        p_prev = p;
        p = p_next;
        q_prev = q;
        q = q_next;
        out.push((p, q));
    }
    Ok(out)
}

fn validate_digits(digits: &[u64], params: &ThetaParams) -> Result<(), ExpansionError> {
    for (index, &digit) in digits.iter().enumerate() {
        if digit < params.m {
            return Err(ExpansionError::InvalidDigit { index, digit, min: params.m });
        }
    }
    Ok(())
}

/// A cylinder interval. `closed_left` records which end is closed; rank-1
/// cylinders are (lo, hi], and each inverse branch application flips the
/// orientation because the branches are decreasing.
#[derive(Debug, Clone)]
pub struct Cylinder<T> {
    pub lo: T,
    pub hi: T,
    pub closed_left: bool,
}

impl Cylinder<QuadNumber> {
    pub fn to_f64(&self) -> Cylinder<f64> {
        Cylinder { lo: self.lo.to_f64(), hi: self.hi.to_f64(), closed_left: self.closed_left }
    }

    /// Exact membership test respecting the half-open side.
    pub fn contains(&self, x: &QuadNumber) -> Result<bool, ExpansionError> {
        let lo = x.checked_sub(&self.lo)?.sign();
        let hi = self.hi.checked_sub(x)?.sign();
        let left_ok = if self.closed_left { lo >= 0 } else { lo > 0 };
        let right_ok = if self.closed_left { hi > 0 } else { hi >= 0 };
        Ok(left_ok && right_ok)
    }

    pub fn width_f64(&self) -> f64 {
        self.hi.to_f64() - self.lo.to_f64()
    }
}

/// Rank-1 cylinder of digit i: (1/(theta(i+1)), 1/(theta i)].
pub fn cylinder_exact(digit: u64, params: &ThetaParams) -> Result<Cylinder<QuadNumber>, ExpansionError> {
    validate_digits(&[digit], params)?;
    let m = params.m;
    // 1/(theta k) = sqrt(m)/k
    let endpoint = |k: u64| {
        QuadNumber::new(
            BigRational::from_integer(0.into()),
            BigRational::new(1.into(), BigInt::from(k)),
            m,
        )
    };
    Ok(Cylinder { lo: endpoint(digit + 1)?, hi: endpoint(digit)?, closed_left: false })
}

/// Rank-n cylinder of a digit string, by pulling [0, theta] back through the
/// inverse branches w_d(x) = 1/(x + d*theta) in reverse digit order.
pub fn cylinder_rank_n_exact(
    digits: &[u64],
    params: &ThetaParams,
) -> Result<Cylinder<QuadNumber>, ExpansionError> {
    validate_digits(digits, params)?;
    if digits.is_empty() {
        return Ok(Cylinder {
            lo: QuadNumber::zero(params.m)?,
            hi: params.theta_exact(),
            closed_left: false,
        });
    }
    let theta = params.theta_exact();
    let mut lo = QuadNumber::zero(params.m)?;
    let mut hi = params.theta_exact();
    for &d in digits.iter().rev() {
        let dtheta = theta.scale_int(&BigInt::from(d));
        let new_hi = lo.checked_add(&dtheta)?.inv()?;
        let new_lo = hi.checked_add(&dtheta)?.inv()?;
        lo = new_lo;
        hi = new_hi;
    }
    // rank 1 is (lo, hi] and every decreasing branch flips the closed side
    Ok(Cylinder { lo, hi, closed_left: digits.len().is_multiple_of(2) })
}

pub fn cylinder(digit: u64, params: &ThetaParams) -> Result<Cylinder<f64>, ExpansionError> {
    Ok(cylinder_exact(digit, params)?.to_f64())
}

pub fn cylinder_rank_n(digits: &[u64], params: &ThetaParams) -> Result<Cylinder<f64>, ExpansionError> {
    Ok(cylinder_rank_n_exact(digits, params)?.to_f64())
}

/// log |(T^n)'(x)| = -2 * sum of log of the first n orbit points.
/// Always at least n*log(m) since |T'| = 1/x^2 >= m on the domain.
pub fn orbit_log_derivative(
    x: &Point,
    n: usize,
    params: &ThetaParams,
    mode: &Mode,
) -> Result<f64, ExpansionError> {
    if n == 0 {
        return Ok(0.0);
    }
    let exp = expand(x, n, params, mode)?;
    if exp.digits.len() < n && exp.terminated {
        // the n-th iterate needs the first n points to be nonzero
        if exp.orbit.len() <= n {
            return Err(ExpansionError::TerminatedEarly { step: exp.digits.len(), want: n });
        }
    }
    let mut sum = 0.0;
    for k in 0..n {
        let xk = exp.orbit.point_f64(k);
        if xk <= 0.0 {
            return Err(ExpansionError::TerminatedEarly { step: k, want: n });
        }
        sum += xk.ln();
    }
    Ok(-2.0 * sum)
}

/// Ratio |(T^n)'(x)| / |(T^n)'(y)| for x, y in the rank-n cylinder of
/// `digits`, both orbits driven by that digit itinerary.
pub fn distortion_ratio(
    digits: &[u64],
    x: f64,
    y: f64,
    params: &ThetaParams,
) -> Result<f64, ExpansionError> {
    let cyl = cylinder_rank_n(digits, params)?;
    for v in [x, y] {
        if v < cyl.lo - 1e-12 || v > cyl.hi + 1e-12 {
            return Err(ExpansionError::DomainViolation(format!(
                "{v} outside the rank-{} cylinder [{}, {}]",
                digits.len(),
                cyl.lo,
                cyl.hi
            )));
        }
    }
    let mut log_ratio = 0.0;
    let (mut xs, mut ys) = (x, y);
    for &d in digits {
        log_ratio += -2.0 * (xs.ln() - ys.ln());
        xs = 1.0 / xs - d as f64 * params.theta;
        ys = 1.0 / ys - d as f64 * params.theta;
    }
    Ok(log_ratio.exp())
}

/// Detect eventual periodicity of an exact orbit: returns (preperiod, period),
/// with period 0 meaning the orbit hit 0 and terminated. None if no repeat
/// occurs within `cap` steps.
pub fn detect_period(
    x: &QuadNumber,
    cap: usize,
    params: &ThetaParams,
) -> Result<Option<(usize, usize)>, ExpansionError> {
    check_domain_exact(x, params)?;
    let mut seen: HashMap<QuadNumber, usize> = HashMap::new();
    let mut current = x.clone();
    seen.insert(current.clone(), 0);
    for step in 1..=cap {
        let (_, next) = gauss_step_exact(&current, params)?;
        if next.is_zero() {
            return Ok(Some((step, 0)));
        }
        if let Some(&first) = seen.get(&next) {
            return Ok(Some((first, step - first)));
        }
        seen.insert(next.clone(), step);
        current = next;
    }
    Ok(None)
}

/// First index at which exact-mode and double-mode digits differ, comparing
/// up to `max_steps` digits; returns `max_steps` if no divergence was seen.
/// The exact orbit stops contributing at termination.
pub fn first_divergence(
    x: &QuadNumber,
    max_steps: usize,
    params: &ThetaParams,
) -> Result<usize, ExpansionError> {
    let exact = expand(&Point::Exact(x.clone()), max_steps, params, &Mode::Exact)?;
    let double = expand(&Point::Double(x.to_f64()), max_steps, params, &Mode::Double)?;
    Ok(exact
        .digits
        .iter()
        .zip(double.digits.iter())
        .take_while(|(a, b)| a == b)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(m: u64) -> ThetaParams {
        ThetaParams::new(m).unwrap()
    }

    fn rational(p: i64, q: i64, m: u64) -> QuadNumber {
        QuadNumber::from_ratio(p, q, m).unwrap()
    }

    #[test]
    fn rejects_square_radicand() {
        assert!(ThetaParams::new(4).is_err());
        assert!(ThetaParams::new(1).is_err());
        assert!(ThetaParams::new(2).is_ok());
    }

    #[test]
    fn theta_endpoint_terminates() {
        let p = params(2);
        let theta = p.theta_exact();
        let exp = expand(&Point::Exact(theta), 5, &p, &Mode::Exact).unwrap();
        assert_eq!(exp.digits, vec![2]);
        assert!(exp.terminated);
        let p3 = params(3);
        let exp3 = expand(&Point::Exact(p3.theta_exact()), 5, &p3, &Mode::Exact).unwrap();
        assert_eq!(exp3.digits, vec![3]);
        assert!(exp3.terminated);
    }

    #[test]
    fn half_theta_terminates_with_digit_four() {
        let p = params(2);
        let x = QuadNumber::new(
            BigRational::from_integer(0.into()),
            BigRational::new(1.into(), 4.into()),
            2,
        )
        .unwrap(); // theta/2 = sqrt(2)/4
        let exp = expand(&Point::Exact(x), 5, &p, &Mode::Exact).unwrap();
        assert_eq!(exp.digits, vec![4]);
        assert!(exp.terminated);
    }

    #[test]
    fn one_half_has_eventually_periodic_expansion() {
        let p = params(2);
        let exp = expand(&Point::Exact(rational(1, 2, 2)), 5, &p, &Mode::Exact).unwrap();
        assert_eq!(exp.digits, vec![2, 2, 4, 2, 4]);
        assert!(!exp.terminated);
        if let Orbit::Exact(orbit) = &exp.orbit {
            // x1 = 2 - sqrt(2), x2 = 1 - sqrt(2)/2, x3 = x1
            let x1 = QuadNumber::parse("2-1√2", None).unwrap();
            let x2 = QuadNumber::parse("1-1/2√2", None).unwrap();
            assert_eq!(orbit[1], x1);
            assert_eq!(orbit[2], x2);
            assert_eq!(orbit[3], x1);
        } else {
            panic!("exact orbit expected");
        }
    }

    #[test]
    fn double_mode_tracks_exact_prefix() {
        let p = params(2);
        let exp = expand(&Point::Double(0.5), 5, &p, &Mode::Double).unwrap();
        assert_eq!(exp.digits, vec![2, 2, 4, 2, 4]);
        let k = first_divergence(&rational(1, 2, 2), 40, &p).unwrap();
        assert!(k >= 10, "agreement only {k} steps");
    }

    #[test]
    fn interval_mode_agrees_with_exact_where_certified() {
        let p = params(2);
        for (num, den) in [(1i64, 2i64), (1, 3), (2, 5), (3, 7), (5, 13)] {
            let x = rational(num, den, 2);
            let want = expand(&Point::Exact(x.clone()), 30, &p, &Mode::Exact).unwrap();
            let got = expand(
                &Point::Exact(x),
                30,
                &p,
                &Mode::Interval { start_precision: 64, max_precision: 4096 },
            )
            .unwrap();
            assert_eq!(want.digits, got.digits, "start {num}/{den}");
        }
    }

    #[test]
    fn interval_mode_fails_loudly_on_exact_boundary() {
        // theta/2 maps through 1/(theta x) = 4 exactly; no finite precision
        // can separate the floor candidates 3 and 4.
        let p = params(2);
        let x = QuadNumber::new(
            BigRational::from_integer(0.into()),
            BigRational::new(1.into(), 4.into()),
            2,
        )
        .unwrap();
        let err = expand(
            &Point::Exact(x),
            3,
            &p,
            &Mode::Interval { start_precision: 32, max_precision: 512 },
        )
        .unwrap_err();
        match err {
            ExpansionError::CertificationFailure { step, precision, lower, upper } => {
                assert_eq!(step, 0);
                assert_eq!(precision, 512);
                assert_eq!((lower.as_str(), upper.as_str()), ("3", "4"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn exact_mode_requires_exact_input() {
        let p = params(2);
        let err = expand(&Point::Double(0.5), 3, &p, &Mode::Exact).unwrap_err();
        assert_eq!(err, ExpansionError::ExactInputRequired);
    }

    #[test]
    fn domain_violations_rejected() {
        let p = params(2);
        assert!(matches!(
            expand(&Point::Double(0.0), 1, &p, &Mode::Double),
            Err(ExpansionError::DomainViolation(_))
        ));
        assert!(matches!(
            expand(&Point::Double(0.8), 1, &p, &Mode::Double),
            Err(ExpansionError::DomainViolation(_))
        ));
        assert!(matches!(
            expand(&Point::Exact(rational(-1, 2, 2)), 1, &p, &Mode::Exact),
            Err(ExpansionError::DomainViolation(_))
        ));
    }

    #[test]
    fn evaluate_known_values() {
        let p = params(2);
        // one digit: 1/(2 theta) = theta
        assert_abs_diff_eq!(evaluate(&[2], &p).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-6);
        assert_abs_diff_eq!(evaluate(&[4], &p).unwrap(), 0.3535534, epsilon = 1e-6);
        assert_abs_diff_eq!(evaluate(&[2, 2, 4], &p).unwrap(), 0.5050763, epsilon = 1e-6);
        assert!(matches!(
            evaluate(&[2, 1], &p),
            Err(ExpansionError::InvalidDigit { index: 1, digit: 1, min: 2 })
        ));
    }

    #[test]
    fn evaluate_exact_round_trips_periodic_tail() {
        // value of [2,2,4] with tail x1 = 2 - sqrt(2) reproduces 1/2 exactly?
        // The expansion of 1/2 is 2,(2,4) repeating: digits [2,2,4] then the
        // orbit returns to x1, so evaluating [2,2,4] with tail T^3(1/2) = x1
        // must give exactly 1/2.
        let p = params(2);
        let x1 = QuadNumber::parse("2-1√2", None).unwrap();
        let v = evaluate_exact(&[2, 2, 4], Some(&x1), &p).unwrap();
        assert_eq!(v, rational(1, 2, 2));
    }

    #[test]
    fn convergents_alternate_and_tighten() {
        let p = params(2);
        let x = 0.5;
        let exp = expand(&Point::Double(x), 14, &p, &Mode::Double).unwrap();
        let cs = convergents(&exp.digits, &p).unwrap();
        let mut prev_err = f64::INFINITY;
        let mut prev_sign = 0i8;
        for (pk, qk) in cs {
            let c = pk / qk;
            let err = c - x;
            assert!(err.abs() < prev_err);
            let sign = if err > 0.0 { 1 } else { -1 };
            if prev_sign != 0 {
                assert_eq!(sign, -prev_sign, "convergents should alternate");
            }
            prev_sign = sign;
            prev_err = err.abs();
        }
        assert!(prev_err < 1e-9);
    }

    #[test]
    fn cylinder_endpoints_exact() {
        let p = params(2);
        let c2 = cylinder_exact(2, &p).unwrap();
        assert_eq!(c2.lo, QuadNumber::parse("0+1/3√2", None).unwrap());
        assert_eq!(c2.hi, QuadNumber::parse("0+1/2√2", None).unwrap());
        assert!(!c2.closed_left);
        let c4 = cylinder(4, &p).unwrap();
        assert_abs_diff_eq!(c4.lo, 0.2828427, epsilon = 1e-6);
        assert_abs_diff_eq!(c4.hi, 0.3535534, epsilon = 1e-6);
        assert!(cylinder(1, &p).is_err());
    }

    #[test]
    fn rank_two_cylinder_of_2_2() {
        let p = params(2);
        let c = cylinder_rank_n_exact(&[2, 2], &p).unwrap();
        let theta = p.theta_exact();
        // theta * hi = 3/8 and theta * lo = 1/3 exactly
        assert_eq!(c.hi.checked_mul(&theta).unwrap(), rational(3, 8, 2));
        assert_eq!(c.lo.checked_mul(&theta).unwrap(), rational(1, 3, 2));
        assert!(c.closed_left);
        assert!(c.contains(&rational(1, 2, 2)).unwrap());
        assert!(!c.contains(&rational(2, 5, 2)).unwrap());
        let f = c.to_f64();
        assert_abs_diff_eq!(f.lo, 0.4714045, epsilon = 1e-6);
        assert_abs_diff_eq!(f.hi, 0.5303301, epsilon = 1e-6);
    }

    #[test]
    fn cylinders_nest_and_contract() {
        let p = params(2);
        let digits = [2u64, 3, 2, 5, 2, 2];
        for n in 1..=digits.len() {
            let outer = cylinder_rank_n_exact(&digits[..n - 1], &p).unwrap();
            let inner = cylinder_rank_n_exact(&digits[..n], &p).unwrap();
            assert!(outer.lo <= inner.lo && inner.hi <= outer.hi, "nesting fails at {n}");
            let width = inner.width_f64();
            let bound = p.theta() / (p.m() as f64).powi(n as i32);
            assert!(width <= bound * (1.0 + 1e-12), "contraction fails at {n}");
        }
    }

    #[test]
    fn expansion_point_lies_in_its_cylinder() {
        let p = params(2);
        for (num, den) in [(1i64, 2i64), (2, 5), (3, 7), (5, 8), (7, 11)] {
            let x = rational(num, den, 2);
            let exp = expand(&Point::Exact(x.clone()), 8, &p, &Mode::Exact).unwrap();
            if exp.terminated {
                // x would sit on the open edge of its own cylinder
                continue;
            }
            let cyl = cylinder_rank_n_exact(&exp.digits, &p).unwrap();
            assert!(cyl.contains(&x).unwrap(), "{num}/{den} not in its own cylinder");
            let approx_err = (evaluate(&exp.digits, &p).unwrap() - x.to_f64()).abs();
            assert!(approx_err <= cyl.width_f64() + 1e-15);
        }
    }

    #[test]
    fn log_derivative_values() {
        let p = params(2);
        let x = Point::Exact(rational(1, 2, 2));
        let d1 = orbit_log_derivative(&x, 1, &p, &Mode::Exact).unwrap();
        assert_abs_diff_eq!(d1, 1.3862944, epsilon = 1e-6);
        let d2 = orbit_log_derivative(&x, 2, &p, &Mode::Exact).unwrap();
        assert_abs_diff_eq!(d2, 2.4558936, epsilon = 1e-6);
        for n in 1..=6 {
            let dn = orbit_log_derivative(&x, n, &p, &Mode::Exact).unwrap();
            assert!(dn >= n as f64 * (2.0f64).ln() - 1e-12);
        }
    }

    #[test]
    fn distortion_ratio_stabilizes() {
        let p = params(2);
        let digits = [2u64, 2, 4, 2];
        let cyl = cylinder_rank_n(&digits, &p).unwrap();
        let x = cyl.lo + 0.25 * (cyl.hi - cyl.lo);
        let y = cyl.lo + 0.75 * (cyl.hi - cyl.lo);
        let r = distortion_ratio(&digits, x, y, &p).unwrap();
        assert!(r.is_finite() && r > 0.0);
        assert!(r < 4.0 && r > 0.25, "distortion {r} out of the expected range");
        assert!(distortion_ratio(&digits, 0.1, y, &p).is_err());
    }

    #[test]
    fn period_detection() {
        let p = params(2);
        assert_eq!(
            detect_period(&rational(1, 2, 2), 10, &p).unwrap(),
            Some((1, 2))
        );
        assert_eq!(
            detect_period(&p.theta_exact(), 10, &p).unwrap(),
            Some((1, 0))
        );
        assert_eq!(detect_period(&rational(1, 2, 2), 0, &p).unwrap(), None);
        // 2/5 has preperiod 1 and period 6: not found with cap 4
        assert_eq!(detect_period(&rational(2, 5, 2), 4, &p).unwrap(), None);
        assert_eq!(
            detect_period(&rational(2, 5, 2), 30, &p).unwrap(),
            Some((1, 6))
        );
    }

    #[test]
    fn digit_overflow_reported() {
        let p = params(2);
        let err = expand(&Point::Double(1e-300), 1, &p, &Mode::Double).unwrap_err();
        assert!(matches!(err, ExpansionError::DigitOverflow { .. }));
    }

    #[test]
    fn summary_json_shape() {
        let p = params(2);
        let exp = expand(&Point::Exact(rational(1, 2, 2)), 3, &p, &Mode::Exact).unwrap();
        let j = exp.summary_json();
        assert_eq!(j["m"], 2);
        assert_eq!(j["mode"], "exact");
        assert_eq!(j["terminated"], false);
        assert_eq!(j["digits"].as_array().unwrap().len(), 3);
        assert!(j["final_point_decimal"].as_str().unwrap().starts_with("0.58578"));
    }
}
