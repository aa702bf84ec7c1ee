//! The invariant measure of the theta-expansion map and its closed-form
//! calculus: density, interval measure, digit and tail masses, truncated
//! digit moments, and the quantile function.
//!
//! With theta = 1/sqrt(m), the map preserves
//!
//! ```text
//! gamma(A) = C * integral over A of theta/(1 + theta*x) dx,
//! C = 1/log(1 + 1/m),
//! ```
//!
//! and every quantity here reduces to logarithms of rational expressions.
//! All formulas are arranged around `ln_1p` so that small masses keep full
//! relative accuracy and `tail_mass(m)` is exactly 1.

use crate::expansion::ThetaParams;

/// The invariant measure for one parameter m.
#[derive(Debug, Clone)]
pub struct MeasureContext {
    params: ThetaParams,
    c: f64,
}

impl MeasureContext {
    pub fn new(params: ThetaParams) -> Self {
        let c = 1.0 / (1.0 / params.m() as f64).ln_1p();
        MeasureContext { params, c }
    }

    pub fn params(&self) -> &ThetaParams {
        &self.params
    }

    /// The normalizing constant C = 1/log(1 + 1/m). This is also the limit
    /// of S_n/(n log n) in the weak law for digit sums.
    pub fn normalizer(&self) -> f64 {
        self.c
    }

    /// Alias for [`normalizer`](Self::normalizer) under the name the digit
    /// sum law gives it.
    pub fn khinchine_constant(&self) -> f64 {
        self.c
    }

    /// Density C*theta/(1 + theta*x) on [0, theta], zero outside.
    pub fn density(&self, x: f64) -> f64 {
        let theta = self.params.theta();
        if !(0.0..=theta).contains(&x) {
            return 0.0;
        }
        self.c * theta / (1.0 + theta * x)
    }

    /// Measure of the interval (a, b] intersected with (0, theta].
    /// Endpoints may come in either order.
    pub fn measure_interval(&self, a: f64, b: f64) -> f64 {
        let theta = self.params.theta();
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let a = a.clamp(0.0, theta);
        let b = b.clamp(0.0, theta);
        if b <= a {
            return 0.0;
        }
        // C * log((1+theta b)/(1+theta a)) in a cancellation-free form
        self.c * (theta * (b - a) / (1.0 + theta * a)).ln_1p()
    }

    /// Cumulative distribution function F(x) = gamma((0, x]).
    pub fn cdf(&self, x: f64) -> f64 {
        let theta = self.params.theta();
        let x = x.clamp(0.0, theta);
        self.c * (theta * x).ln_1p()
    }

    /// Measure of the rank-1 cylinder of digit i:
    /// C * log((i+1)^2 / (i(i+2))), which is -C*log(1 - (i+1)^-2).
    pub fn digit_mass(&self, digit: u64) -> f64 {
        if digit < self.params.m() {
            return 0.0;
        }
        let t = 1.0 / (digit as f64 + 1.0);
        -self.c * (-t * t).ln_1p()
    }

    /// Measure of {digit >= k} = (0, 1/(theta k)], which is C*log(1 + 1/k).
    /// Computed as a ratio of log1p values so that `tail_mass(m) == 1.0`
    /// exactly.
    pub fn tail_mass(&self, k: u64) -> f64 {
        let m = self.params.m();
        if k <= m {
            return 1.0;
        }
        (1.0 / k as f64).ln_1p() / (1.0 / m as f64).ln_1p()
    }

    /// Truncated digit moment: sum of i^order * digit_mass(i) for
    /// m <= i <= cap. The order-1 moment grows like C*log(cap); the full
    /// moments diverge, which is why the limit theorems need truncation.
    /// Runs in O(cap) time.
    pub fn truncated_moment(&self, cap: u64, order: u32) -> f64 {
        let m = self.params.m();
        if cap < m {
            return 0.0;
        }
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for i in m..=cap {
            let term = (i as f64).powi(order as i32) * self.digit_mass(i);
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum
    }

    /// Inverse CDF on (0, 1]: the x with gamma((0, x]) = u, namely
    /// sqrt(m) * (exp(u/C) - 1), clamped into the domain.
    pub fn quantile(&self, u: f64) -> f64 {
        assert!((0.0..=1.0).contains(&u), "quantile needs u in [0, 1]");
        let x = self.params.sqrt_m() * (u / self.c).exp_m1();
        x.clamp(0.0, self.params.theta())
    }
}
