//! Seeded Monte Carlo harness for digit statistics of theta-expansions.
//!
//! Trajectories start from exact stationary samples (the closed-form
//! quantile applied to a uniform variate), so the digit process is
//! stationary from the first step and no burn-in is needed. Orbits run in
//! double precision: the laws probed here are distributional and are
//! insensitive to floating-point shadowing error, while exact arithmetic at
//! these horizons is far out of reach.
//!
//! Four experiments are provided on top of a shared trajectory ensemble:
//!
//! * [`khinchine_experiment`]: the weak law for S_n/(n log n), with
//!   exceedance fractions per epsilon and the finite-n corrected center.
//! * [`diamond_vaaler_experiment`]: trimmed sums (S_n - L_n)/(n log n),
//!   cross-trial dispersion and per-trial fluctuation comparisons.
//! * [`max_digit_experiment`]: P(L_n > eps n log n) against the tail bound
//!   C/(eps log n).
//! * [`philipp_experiment`]: the strong-law dichotomy under a norming
//!   sequence a(n), with exceedance counts against the Borel-Cantelli
//!   prediction.
//!
//! Determinism contract: each trial draws from its own ChaCha8 stream
//! seeded with `seed XOR trial_index`, trials are aggregated in trial
//! order, and no statistic depends on scheduling, so identical
//! configurations produce identical results for any thread count.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::distributions::OpenClosed01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::expansion::{gauss_step_double, ExpansionError, ThetaParams};
use crate::measure::MeasureContext;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
}

/// Norming sequence a(n) used to scale digit sums and define exceedance
/// events. Built-in families are classified analytically; explicit tables
/// are classified by a partial-sum heuristic.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NormingSequence {
    /// a(n) = n log n
    NLogN,
    /// a(n) = n (log n)^p
    NLogNPow { p: f64 },
    /// a(n) = n^p
    NPow { p: f64 },
    /// explicit values a(1), a(2), ...; must cover the full horizon
    Table { values: Vec<f64> },
}

/// Whether the series sum 1/a(n) converges or diverges; the two branches
/// of the strong-law dichotomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Convergent,
    Divergent,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormingReport {
    pub classification: Classification,
    /// true when the classification came from the partial-sum heuristic
    /// (table input) rather than the integral test
    pub heuristic: bool,
    /// whether a(n)/n is non-decreasing; false is a hypothesis violation
    /// for the convergent branch (the divergent branch needs no regularity)
    pub regular: bool,
}

impl NormingSequence {
    /// a(n) for n >= 1. Panics on n = 0 or a table shorter than n.
    pub fn value(&self, n: usize) -> f64 {
        assert!(n >= 1, "norming sequences are indexed from 1");
        let x = n as f64;
        match self {
            NormingSequence::NLogN => x * x.ln(),
            NormingSequence::NLogNPow { p } => x * x.ln().powf(*p),
            NormingSequence::NPow { p } => x.powf(*p),
            NormingSequence::Table { values } => {
                *values.get(n - 1).expect("norming table shorter than requested index")
            }
        }
    }

    /// Convergence class of sum 1/a(n), plus regularity of a(n)/n.
    pub fn classify(&self) -> NormingReport {
        match self {
            NormingSequence::NLogN => NormingReport {
                classification: Classification::Divergent,
                heuristic: false,
                regular: true,
            },
            // Bertrand series: sum 1/(n (log n)^p) converges iff p > 1;
            // a(n)/n = (log n)^p is non-decreasing iff p >= 0
            NormingSequence::NLogNPow { p } => NormingReport {
                classification: if *p > 1.0 {
                    Classification::Convergent
                } else {
                    Classification::Divergent
                },
                heuristic: false,
                regular: *p >= 0.0,
            },
            // p-series: converges iff p > 1; a(n)/n non-decreasing iff p >= 1
            NormingSequence::NPow { p } => NormingReport {
                classification: if *p > 1.0 {
                    Classification::Convergent
                } else {
                    Classification::Divergent
                },
                heuristic: false,
                regular: *p >= 1.0,
            },
            NormingSequence::Table { values } => classify_table(values),
        }
    }
}

/// Heuristic classification for explicit tables: compare the contribution
/// of the last octave of indices to sum 1/a(n) against the previous
/// octave. Geometric decay of octave sums suggests convergence; a
/// near-constant contribution per octave suggests divergence. Slowly
/// varying borderline sequences can be misjudged, which is why the result
/// carries the heuristic flag.
fn classify_table(values: &[f64]) -> NormingReport {
    let regular = values
        .windows(2)
        .enumerate()
        .all(|(i, w)| w[1] / (i as f64 + 2.0) >= w[0] / (i as f64 + 1.0) - 1e-12);
    let n = values.len();
    if n < 8 {
        // too short to measure decay; divergent is the branch that needs
        // no hypothesis, so it is the safe default
        return NormingReport {
            classification: Classification::Divergent,
            heuristic: true,
            regular,
        };
    }
    let octave_sum = |lo: usize, hi: usize| -> f64 {
        values[lo..hi].iter().map(|&a| 1.0 / a).sum()
    };
    let last = octave_sum(n / 2, n);
    let previous = octave_sum(n / 4, n / 2);
    let classification = if last < 0.9 * previous {
        Classification::Convergent
    } else {
        Classification::Divergent
    };
    NormingReport { classification, heuristic: true, regular }
}

/// Configuration shared by all experiments. `checkpoints` must be strictly
/// increasing and end at or before `horizon`; statistics are frozen at each.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub m: u64,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// epsilon grid for exceedance fractions |S_n/(n log n) - C| > eps
    pub epsilons: Vec<f64>,
    pub norming: NormingSequence,
    /// exceedance multiplier M: digit_k counts as an exceedance when
    /// digit_k >= M a(k)
    pub exceedance_multiplier: f64,
    pub checkpoints: Vec<usize>,
    /// running-series sampling density, in samples per decade of k
    pub grid_per_decade: usize,
}

impl ExperimentConfig {
    /// Standard setup: n log n norming, M = 1, epsilon grid {0.25, 0.5, 1},
    /// decade checkpoints from 10^3 up to the horizon, 48 running samples
    /// per decade.
    pub fn standard(m: u64, horizon: usize, trials: usize, seed: u64) -> Self {
        let mut checkpoints: Vec<usize> = [1_000, 10_000, 100_000, 1_000_000]
            .iter()
            .copied()
            .filter(|&c| c < horizon)
            .collect();
        checkpoints.push(horizon);
        ExperimentConfig {
            m,
            horizon,
            trials,
            seed,
            epsilons: vec![0.25, 0.5, 1.0],
            norming: NormingSequence::NLogN,
            exceedance_multiplier: 1.0,
            checkpoints,
            grid_per_decade: 48,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // !(x > 0.0) also rejects NaN
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::Config(msg));
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.horizon < 2 {
            return fail("horizon must be >= 2".into());
        }
        if self.checkpoints.is_empty() {
            return fail("at least one checkpoint is required".into());
        }
        if !self.checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return fail("checkpoints must be strictly increasing".into());
        }
        if self.checkpoints[0] < 2 {
            return fail("checkpoints must be >= 2".into());
        }
        if *self.checkpoints.last().unwrap() > self.horizon {
            return fail("checkpoints may not exceed the horizon".into());
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return fail("epsilons must be positive".into());
        }
        if !(self.exceedance_multiplier > 0.0) {
            return fail("exceedance multiplier must be positive".into());
        }
        if self.grid_per_decade == 0 {
            return fail("grid_per_decade must be >= 1".into());
        }
        if let NormingSequence::Table { values } = &self.norming {
            if values.len() < self.horizon {
                return fail(format!(
                    "norming table has {} entries but the horizon is {}",
                    values.len(),
                    self.horizon
                ));
            }
            if values.iter().any(|&a| !(a > 0.0)) {
                return fail("norming table entries must be positive".into());
            }
        }
        Ok(())
    }
}

/// One stationary draw from (0, theta]: the closed-form quantile applied
/// to a uniform variate in (0, 1], so exact 0 can never be produced.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, ctx: &MeasureContext) -> f64 {
    let u: f64 = rng.sample(OpenClosed01);
    ctx.quantile(u)
}

/// Truncation level N(n) = floor(n log n); 0 for n <= 1.
pub fn truncation_level(n: usize) -> u64 {
    if n <= 1 {
        return 0;
    }
    let x = n as f64;
    (x * x.ln()).floor() as u64
}

/// Strictly increasing sample grid from `lo` to `hi` with roughly
/// `per_decade` geometrically spaced points per decade; `hi` is always
/// included.
pub fn geometric_grid(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    assert!(lo >= 1 && hi >= lo && per_decade >= 1);
    let mut out = Vec::new();
    let step = 1.0 / per_decade as f64;
    let mut idx = ((lo as f64).log10() / step).floor() as i64;
    loop {
        let k = 10f64.powf(idx as f64 * step).round() as usize;
        if k >= hi {
            break;
        }
        if k >= lo && out.last() != Some(&k) {
            out.push(k);
        }
        idx += 1;
    }
    out.push(hi);
    out
}

fn ser_biguint<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn big_to_f64(v: &BigUint) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}

/// Digit statistics frozen at one horizon n. The digit sum is kept as an
/// arbitrary-precision integer: a single digit can reach ~10^15 under the
/// invariant measure's tail, and sums across long adversarial runs do not
/// fit 64 bits.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryStats {
    pub n: usize,
    /// S_n, the sum of the first n digits
    #[serde(serialize_with = "ser_biguint")]
    pub digit_sum: BigUint,
    /// L_n, the largest digit among the first n
    pub max_digit: u64,
    /// S_n - L_n
    #[serde(serialize_with = "ser_biguint")]
    pub trimmed_sum: BigUint,
    /// N(n) = floor(n log n)
    pub truncation_level: u64,
    /// sum of the digits that are <= the truncation level
    #[serde(serialize_with = "ser_biguint")]
    pub truncated_sum: BigUint,
    /// digit_sum - truncated_sum
    #[serde(serialize_with = "ser_biguint")]
    pub remainder: BigUint,
    /// count of 2 <= k <= n with digit_k >= M a(k)
    pub exceedance_count: u64,
}

impl TrajectoryStats {
    /// S_n / a(n) under a norming sequence.
    pub fn sum_ratio(&self, norming: &NormingSequence) -> f64 {
        big_to_f64(&self.digit_sum) / norming.value(self.n)
    }

    /// (S_n - L_n) / a(n), the trimmed counterpart.
    pub fn trimmed_ratio(&self, norming: &NormingSequence) -> f64 {
        big_to_f64(&self.trimmed_sum) / norming.value(self.n)
    }
}

/// Downsampled running statistics at step k.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunningSample {
    pub k: usize,
    /// S_k as f64 (exact below 2^53; negligible rounding beyond)
    pub digit_sum: f64,
    /// L_k
    pub max_digit: u64,
    /// S_k / a(k) under the configured norming; NaN where a(k) <= 0
    pub sum_ratio: f64,
}

/// One simulated orbit's accumulated statistics.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub trial: u64,
    pub start: f64,
    /// number of digits produced before the orbit died, when it died early
    /// (reaching exact 0 or overflowing the digit range); None for a full run
    pub short_at: Option<usize>,
    /// fresh starts drawn after early orbit deaths (ensemble level)
    pub restarts: u32,
    /// stats per requested checkpoint, in order; a short orbit carries only
    /// the checkpoints it reached
    pub checkpoints: Vec<TrajectoryStats>,
    pub running: Vec<RunningSample>,
    /// max over 2 <= k <= n of S_k/a(k), the limsup surrogate
    pub max_sum_ratio: f64,
    /// the k attaining max_sum_ratio
    pub max_sum_ratio_at: usize,
}

/// Options for a single trajectory run. `checkpoints` and `grid` must be
/// strictly increasing.
#[derive(Debug, Clone)]
pub struct TrajectoryOptions<'a> {
    pub checkpoints: &'a [usize],
    pub norming: &'a NormingSequence,
    pub exceedance_multiplier: f64,
    pub grid: &'a [usize],
}

/// Run one orbit through the last checkpoint, accumulating digit sums, the
/// max digit, per-checkpoint truncated sums, exceedance counts, and the
/// downsampled running series in a single pass.
///
/// The digit sum is accumulated in u128, which cannot overflow here: each
/// digit is below 2^63 by the overflow guard in the double-mode step, so
/// the horizon would need to exceed 2^65 steps first. Checkpoint stats
/// materialize the sums as arbitrary-precision integers.
pub fn run_trajectory(
    start: f64,
    params: &ThetaParams,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord, ExperimentError> {
    let checkpoints = opts.checkpoints;
    if checkpoints.is_empty() {
        return Err(ExperimentError::Config("at least one checkpoint is required".into()));
    }
    debug_assert!(checkpoints.windows(2).all(|w| w[0] < w[1]));
    let n_final = *checkpoints.last().unwrap();
    let levels: Vec<u64> = checkpoints.iter().map(|&c| truncation_level(c)).collect();
    let mut truncated = vec![0u128; checkpoints.len()];
    let mut stats = Vec::with_capacity(checkpoints.len());
    let mut running = Vec::with_capacity(opts.grid.len());
    let mut sum: u128 = 0;
    let mut max_digit: u64 = 0;
    let mut exceedances: u64 = 0;
    let mut max_ratio = 0.0f64;
    let mut max_ratio_at = 0usize;
    let mut cp_idx = 0usize;
    let mut grid_idx = 0usize;
    let mut short_at = None;
    let mut x = start;
    let mult = opts.exceedance_multiplier;

    for k in 1..=n_final {
        let (digit, next) = match gauss_step_double(x, params) {
            Ok(pair) => pair,
            Err(ExpansionError::DigitOverflow { .. }) => {
                short_at = Some(k - 1);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        sum += digit as u128;
        if digit > max_digit {
            max_digit = digit;
        }
        // a(1) = 0 for the n log n family; ratios and exceedances start at
        // k = 2, matching the k >= 2 prediction sums
        if k >= 2 {
            let ak = opts.norming.value(k);
            if ak > 0.0 {
                if digit as f64 >= mult * ak {
                    exceedances += 1;
                }
                let ratio = sum as f64 / ak;
                if ratio > max_ratio {
                    max_ratio = ratio;
                    max_ratio_at = k;
                }
            }
        }
        for (j, &level) in levels.iter().enumerate().skip(cp_idx) {
            if digit <= level {
                truncated[j] += digit as u128;
            }
        }
        while grid_idx < opts.grid.len() && opts.grid[grid_idx] == k {
            let ak = if k >= 2 { opts.norming.value(k) } else { 0.0 };
            running.push(RunningSample {
                k,
                digit_sum: sum as f64,
                max_digit,
                sum_ratio: if ak > 0.0 { sum as f64 / ak } else { f64::NAN },
            });
            grid_idx += 1;
        }
        if cp_idx < checkpoints.len() && checkpoints[cp_idx] == k {
            let digit_sum = BigUint::from(sum);
            let truncated_sum = BigUint::from(truncated[cp_idx]);
            stats.push(TrajectoryStats {
                n: k,
                trimmed_sum: &digit_sum - BigUint::from(max_digit),
                remainder: &digit_sum - &truncated_sum,
                digit_sum,
                max_digit,
                truncation_level: levels[cp_idx],
                truncated_sum,
                exceedance_count: exceedances,
            });
            cp_idx += 1;
        }
        if next == 0.0 {
            // the digit at k is valid; the orbit simply has no successor
            if k < n_final {
                short_at = Some(k);
            }
            break;
        }
        x = next;
    }

    Ok(TrajectoryRecord {
        trial: 0,
        start,
        short_at,
        restarts: 0,
        checkpoints: stats,
        running,
        max_sum_ratio: max_ratio,
        max_sum_ratio_at: max_ratio_at,
    })
}

/// A deterministic batch of independent trajectories sharing one
/// configuration, ordered by trial index.
#[derive(Debug, Clone, Serialize)]
pub struct DigitEnsemble {
    pub config: ExperimentConfig,
    pub records: Vec<TrajectoryRecord>,
}

impl DigitEnsemble {
    /// Simulate `config.trials` trajectories in parallel. Each trial owns
    /// the RNG stream seeded with `seed XOR trial_index`; collection is in
    /// trial order, so the result is identical for any thread count.
    pub fn generate(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let params = ThetaParams::new(config.m)?;
        let ctx = MeasureContext::new(params.clone());
        let grid = geometric_grid(2, config.horizon, config.grid_per_decade);
        let records = (0..config.trials as u64)
            .into_par_iter()
            .map(|trial| simulate_trial(trial, config, &params, &ctx, &grid))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DigitEnsemble { config: config.clone(), records })
    }
}

/// An orbit that dies early (hitting exact 0 is a measure-zero event that
/// floating point can surface) is replaced by a fresh stationary start from
/// the same stream, keeping the ensemble stationary; the retry count is
/// recorded. After 8 failed starts the short record is returned as is.
fn simulate_trial(
    trial: u64,
    config: &ExperimentConfig,
    params: &ThetaParams,
    ctx: &MeasureContext,
    grid: &[usize],
) -> Result<TrajectoryRecord, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ trial);
    let opts = TrajectoryOptions {
        checkpoints: &config.checkpoints,
        norming: &config.norming,
        exceedance_multiplier: config.exceedance_multiplier,
        grid,
    };
    let mut restarts = 0u32;
    loop {
        let start = sample_gamma(&mut rng, ctx);
        let mut record = run_trajectory(start, params, &opts)?;
        if record.short_at.is_none() || restarts >= 8 {
            record.trial = trial;
            record.restarts = restarts;
            return Ok(record);
        }
        restarts += 1;
    }
}

/// Linear-interpolation percentile (midpoint-free, the common numerical
/// convention); q in [0, 1]. Sorts a copy of the input.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty slice");
    assert!((0.0..=1.0).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("percentile needs totally ordered values"));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn n_log_n(n: usize) -> f64 {
    let x = n as f64;
    x * x.ln()
}

/// The finite-n center of S_n/(n log n): C (log n + log log n)/log n.
/// At reachable horizons the log log correction is large (about 19% at
/// n = 10^6), so experiments gate against this target rather than the
/// limit constant C itself.
pub fn corrected_weak_law_target(c: f64, n: usize) -> f64 {
    assert!(n >= 2);
    let ln = (n as f64).ln();
    c * (ln + ln.ln()) / ln
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsilonFraction {
    pub epsilon: f64,
    /// fraction of trials with |S_n/(n log n) - C| > epsilon
    pub exceedance_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakLawCheckpoint {
    pub n: usize,
    pub median_ratio: f64,
    pub mean_ratio: f64,
    /// the limit constant C = 1/log(1 + 1/m)
    pub limit_constant: f64,
    pub corrected_target: f64,
    pub epsilon_rows: Vec<EpsilonFraction>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KhinchineReport {
    pub m: u64,
    pub trials: usize,
    pub seed: u64,
    pub checkpoints: Vec<WeakLawCheckpoint>,
}

/// Weak-law experiment: the distribution of S_n/(n log n) across trials at
/// each checkpoint, its median and mean, exceedance fractions per epsilon,
/// and the corrected finite-n target.
pub fn khinchine_experiment(ensemble: &DigitEnsemble) -> Result<KhinchineReport, ExperimentError> {
    let cfg = &ensemble.config;
    let ctx = MeasureContext::new(ThetaParams::new(cfg.m)?);
    let c = ctx.khinchine_constant();
    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    for (ci, &n) in cfg.checkpoints.iter().enumerate() {
        let ratios = checkpoint_ratios(ensemble, ci, n, |st| big_to_f64(&st.digit_sum));
        if ratios.is_empty() {
            continue;
        }
        let epsilon_rows = cfg
            .epsilons
            .iter()
            .map(|&epsilon| EpsilonFraction {
                epsilon,
                exceedance_fraction: ratios.iter().filter(|&&r| (r - c).abs() > epsilon).count()
                    as f64
                    / ratios.len() as f64,
            })
            .collect();
        checkpoints.push(WeakLawCheckpoint {
            n,
            median_ratio: percentile(&ratios, 0.5),
            mean_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            limit_constant: c,
            corrected_target: corrected_weak_law_target(c, n),
            epsilon_rows,
        });
    }
    Ok(KhinchineReport { m: cfg.m, trials: cfg.trials, seed: cfg.seed, checkpoints })
}

/// n-log-n ratios of one statistic at checkpoint index `ci`, across trials.
fn checkpoint_ratios(
    ensemble: &DigitEnsemble,
    ci: usize,
    n: usize,
    stat: impl Fn(&TrajectoryStats) -> f64,
) -> Vec<f64> {
    ensemble
        .records
        .iter()
        .filter_map(|r| r.checkpoints.get(ci))
        .filter(|st| st.n == n)
        .map(|st| stat(st) / n_log_n(n))
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrimmedCheckpoint {
    pub n: usize,
    pub median_trimmed_ratio: f64,
    /// cross-trial interquartile range of (S_n - L_n)/(n log n)
    pub trimmed_iqr: f64,
    /// cross-trial interquartile range of S_n/(n log n)
    pub untrimmed_iqr: f64,
    pub corrected_target: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrimmedReport {
    pub m: u64,
    pub trials: usize,
    pub checkpoints: Vec<TrimmedCheckpoint>,
    /// trials whose trimmed running series fluctuates strictly less than
    /// the untrimmed one over the final decade
    pub calmer_trimmed_trials: usize,
    /// trials with enough running samples in the final decade to score
    pub trials_scored: usize,
}

/// Trimmed-sum experiment: removing the single largest digit from S_n
/// collapses the heavy-tail dispersion. Reports cross-trial interquartile
/// ranges of trimmed vs untrimmed ratios per checkpoint, and counts trials
/// whose trimmed running series is flatter over the final decade.
pub fn diamond_vaaler_experiment(ensemble: &DigitEnsemble) -> Result<TrimmedReport, ExperimentError> {
    let cfg = &ensemble.config;
    let ctx = MeasureContext::new(ThetaParams::new(cfg.m)?);
    let c = ctx.khinchine_constant();
    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    for (ci, &n) in cfg.checkpoints.iter().enumerate() {
        let trimmed = checkpoint_ratios(ensemble, ci, n, |st| big_to_f64(&st.trimmed_sum));
        let untrimmed = checkpoint_ratios(ensemble, ci, n, |st| big_to_f64(&st.digit_sum));
        if trimmed.is_empty() {
            continue;
        }
        checkpoints.push(TrimmedCheckpoint {
            n,
            median_trimmed_ratio: percentile(&trimmed, 0.5),
            trimmed_iqr: percentile(&trimmed, 0.75) - percentile(&trimmed, 0.25),
            untrimmed_iqr: percentile(&untrimmed, 0.75) - percentile(&untrimmed, 0.25),
            corrected_target: corrected_weak_law_target(c, n),
        });
    }

    let window_lo = cfg.horizon / 10;
    let mut calmer = 0usize;
    let mut scored = 0usize;
    for record in &ensemble.records {
        let window: Vec<&RunningSample> =
            record.running.iter().filter(|s| s.k > window_lo).collect();
        if window.len() < 3 {
            continue;
        }
        scored += 1;
        let untrimmed: Vec<f64> =
            window.iter().map(|s| s.digit_sum / n_log_n(s.k)).collect();
        let trimmed: Vec<f64> = window
            .iter()
            .map(|s| (s.digit_sum - s.max_digit as f64) / n_log_n(s.k))
            .collect();
        if fluctuation(&trimmed) < fluctuation(&untrimmed) {
            calmer += 1;
        }
    }

    Ok(TrimmedReport {
        m: cfg.m,
        trials: cfg.trials,
        checkpoints,
        calmer_trimmed_trials: calmer,
        trials_scored: scored,
    })
}

/// Max deviation from the median over a series window.
fn fluctuation(series: &[f64]) -> f64 {
    let median = percentile(series, 0.5);
    series.iter().map(|v| (v - median).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaxDigitCell {
    pub n: usize,
    pub epsilon: f64,
    /// fraction of trials with L_n > epsilon n log n
    pub empirical_probability: f64,
    /// tail bound C/(epsilon log n)
    pub analytic_bound: f64,
    /// binomial standard error of the bound at this trial count
    pub binomial_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxDigitReport {
    pub m: u64,
    pub trials: usize,
    pub cells: Vec<MaxDigitCell>,
}

/// Max-digit experiment: the largest digit is asymptotically negligible
/// against n log n. Each cell compares empirical P(L_n > eps n log n) to
/// the tail bound C/(eps log n).
pub fn max_digit_experiment(ensemble: &DigitEnsemble) -> Result<MaxDigitReport, ExperimentError> {
    let cfg = &ensemble.config;
    let ctx = MeasureContext::new(ThetaParams::new(cfg.m)?);
    let c = ctx.khinchine_constant();
    let mut cells = Vec::new();
    for (ci, &n) in cfg.checkpoints.iter().enumerate() {
        let maxima: Vec<f64> = ensemble
            .records
            .iter()
            .filter_map(|r| r.checkpoints.get(ci))
            .filter(|st| st.n == n)
            .map(|st| st.max_digit as f64)
            .collect();
        if maxima.is_empty() {
            continue;
        }
        for &epsilon in &cfg.epsilons {
            let threshold = epsilon * n_log_n(n);
            let empirical = maxima.iter().filter(|&&l| l > threshold).count() as f64
                / maxima.len() as f64;
            let bound = (c / (epsilon * (n as f64).ln())).min(1.0);
            let se = (bound * (1.0 - bound) / maxima.len() as f64).sqrt();
            cells.push(MaxDigitCell {
                n,
                epsilon,
                empirical_probability: empirical,
                analytic_bound: bound,
                binomial_se: se,
            });
        }
    }
    Ok(MaxDigitReport { m: cfg.m, trials: cfg.trials, cells })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DichotomyCheckpoint {
    pub n: usize,
    /// median over trials of S_n/a(n)
    pub median_ratio: f64,
    /// max over trials of S_n/a(n)
    pub max_ratio: f64,
    pub mean_exceedance_count: f64,
    /// Borel-Cantelli side: sum_{k=2}^{n} C/(M a(k))
    pub predicted_exceedances: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhilippReport {
    pub m: u64,
    pub trials: usize,
    pub seed: u64,
    pub norming: NormingSequence,
    pub exceedance_multiplier: f64,
    pub classification: Classification,
    pub heuristic_classification: bool,
    /// whether a(n)/n is non-decreasing; the divergent branch holds without it
    pub regular: bool,
    pub checkpoints: Vec<DichotomyCheckpoint>,
    /// fraction of trials with at least one exceedance by the last checkpoint
    pub fraction_with_exceedance: f64,
    /// per-trial limsup surrogates max_k S_k/a(k), in trial order
    pub max_sum_ratios: Vec<f64>,
}

/// Strong-law dichotomy experiment. S_n/a(n) tends to 0 along sequences
/// with sum 1/a(n) < infinity and has limsup infinity along sequences with
/// a divergent sum; the report carries the convergent-side quantiles and
/// the divergent-side exceedance counts with their Borel-Cantelli
/// prediction, for whichever branch the norming classifies into.
pub fn philipp_experiment(config: &ExperimentConfig) -> Result<PhilippReport, ExperimentError> {
    let norming_report = config.norming.classify();
    let ensemble = DigitEnsemble::generate(config)?;
    let ctx = MeasureContext::new(ThetaParams::new(config.m)?);
    let c = ctx.khinchine_constant();

    // prediction partial sums at each checkpoint, one sweep over k
    let mut predictions = Vec::with_capacity(config.checkpoints.len());
    let mut partial = 0.0f64;
    let mut cp_idx = 0usize;
    for k in 2..=config.horizon {
        let ak = config.norming.value(k);
        if ak > 0.0 {
            partial += c / (config.exceedance_multiplier * ak);
        }
        if cp_idx < config.checkpoints.len() && config.checkpoints[cp_idx] == k {
            predictions.push(partial);
            cp_idx += 1;
        }
    }
    while predictions.len() < config.checkpoints.len() {
        predictions.push(partial);
    }

    let mut checkpoints = Vec::with_capacity(config.checkpoints.len());
    for (ci, &n) in config.checkpoints.iter().enumerate() {
        let stats: Vec<&TrajectoryStats> = ensemble
            .records
            .iter()
            .filter_map(|r| r.checkpoints.get(ci))
            .filter(|st| st.n == n)
            .collect();
        if stats.is_empty() {
            continue;
        }
        let ratios: Vec<f64> = stats
            .iter()
            .map(|st| big_to_f64(&st.digit_sum) / config.norming.value(n))
            .collect();
        let mean_exceedances = stats.iter().map(|st| st.exceedance_count as f64).sum::<f64>()
            / stats.len() as f64;
        checkpoints.push(DichotomyCheckpoint {
            n,
            median_ratio: percentile(&ratios, 0.5),
            max_ratio: ratios.iter().fold(0.0f64, |a, &b| a.max(b)),
            mean_exceedance_count: mean_exceedances,
            predicted_exceedances: predictions[ci],
        });
    }

    let last_ci = config.checkpoints.len() - 1;
    let with_exceedance = ensemble
        .records
        .iter()
        .filter_map(|r| r.checkpoints.get(last_ci))
        .filter(|st| st.exceedance_count > 0)
        .count();
    let scored = ensemble
        .records
        .iter()
        .filter(|r| r.checkpoints.get(last_ci).is_some())
        .count();

    Ok(PhilippReport {
        m: config.m,
        trials: config.trials,
        seed: config.seed,
        norming: config.norming.clone(),
        exceedance_multiplier: config.exceedance_multiplier,
        classification: norming_report.classification,
        heuristic_classification: norming_report.heuristic,
        regular: norming_report.regular,
        checkpoints,
        fraction_with_exceedance: if scored > 0 {
            with_exceedance as f64 / scored as f64
        } else {
            0.0
        },
        max_sum_ratios: ensemble.records.iter().map(|r| r.max_sum_ratio).collect(),
    })
}

/// Empirical frequency of each digit in m..=cap along one orbit of `steps`
/// digits from `start`; digits beyond the cap contribute to the step count
/// but are not recorded. Errors if the orbit dies before `steps` digits.
pub fn digit_frequencies(
    params: &ThetaParams,
    start: f64,
    steps: usize,
    cap: u64,
) -> Result<Vec<f64>, ExpansionError> {
    let m = params.min_digit();
    assert!(cap >= m && steps > 0);
    let mut counts = vec![0u64; (cap - m + 1) as usize];
    let mut x = start;
    for step in 0..steps {
        let (digit, next) = gauss_step_double(x, params)?;
        if digit <= cap {
            counts[(digit - m) as usize] += 1;
        }
        if next == 0.0 {
            if step + 1 < steps {
                return Err(ExpansionError::TerminatedEarly { step: step + 1, want: steps });
            }
            break;
        }
        x = next;
    }
    Ok(counts.into_iter().map(|c| c as f64 / steps as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params2() -> ThetaParams {
        ThetaParams::new(2).unwrap()
    }

    fn ctx2() -> MeasureContext {
        MeasureContext::new(params2())
    }

    #[test]
    fn norming_values() {
        assert_eq!(NormingSequence::NLogN.value(1), 0.0);
        assert_abs_diff_eq!(NormingSequence::NLogN.value(2), 1.3862943611, epsilon = 1e-9);
        assert_abs_diff_eq!(
            NormingSequence::NLogNPow { p: 2.0 }.value(100),
            100.0 * 100.0f64.ln().powi(2),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(NormingSequence::NPow { p: 1.5 }.value(4), 8.0, epsilon = 1e-12);
        let table = NormingSequence::Table { values: vec![5.0, 6.0, 7.0] };
        assert_eq!(table.value(2), 6.0);
    }

    #[test]
    #[should_panic(expected = "shorter")]
    fn norming_table_out_of_range_panics() {
        NormingSequence::Table { values: vec![5.0, 6.0] }.value(3);
    }

    #[test]
    fn norming_classification() {
        let report = NormingSequence::NLogN.classify();
        assert_eq!(report.classification, Classification::Divergent);
        assert!(!report.heuristic && report.regular);

        assert_eq!(
            NormingSequence::NLogNPow { p: 2.0 }.classify().classification,
            Classification::Convergent
        );
        assert_eq!(
            NormingSequence::NLogNPow { p: 1.0 }.classify().classification,
            Classification::Divergent
        );
        assert_eq!(
            NormingSequence::NPow { p: 1.0 }.classify().classification,
            Classification::Divergent
        );
        assert_eq!(
            NormingSequence::NPow { p: 1.5 }.classify().classification,
            Classification::Convergent
        );
        let irregular = NormingSequence::NPow { p: 0.5 }.classify();
        assert_eq!(irregular.classification, Classification::Divergent);
        assert!(!irregular.regular);
    }

    #[test]
    fn table_classification_heuristic() {
        let harmonic: Vec<f64> = (1..=4096).map(|n| n as f64).collect();
        let report = NormingSequence::Table { values: harmonic }.classify();
        assert_eq!(report.classification, Classification::Divergent);
        assert!(report.heuristic && report.regular);

        let squares: Vec<f64> = (1..=4096).map(|n| (n * n) as f64).collect();
        let report = NormingSequence::Table { values: squares }.classify();
        assert_eq!(report.classification, Classification::Convergent);
        assert!(report.heuristic && report.regular);

        let shrinking: Vec<f64> = (1..=4096).map(|n| (n as f64).sqrt()).collect();
        assert!(!NormingSequence::Table { values: shrinking }.classify().regular);
    }

    #[test]
    fn truncation_levels() {
        assert_eq!(truncation_level(1), 0);
        assert_eq!(truncation_level(2), 1);
        assert_eq!(truncation_level(3), 3);
        assert_eq!(truncation_level(1000), 6907);
    }

    #[test]
    fn geometric_grid_shape() {
        let grid = geometric_grid(2, 1000, 4);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert!(*grid.first().unwrap() >= 2);
        assert_eq!(*grid.last().unwrap(), 1000);
        assert!(grid.len() >= 10);
    }

    #[test]
    fn percentile_linear_interpolation() {
        let values = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&values, 0.0), 1.0);
        assert_eq!(percentile(&values, 1.0), 4.0);
        assert_abs_diff_eq!(percentile(&values, 0.5), 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(percentile(&values, 0.25), 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(percentile(&values, 0.75), 3.25, epsilon = 1e-12);
    }

    #[test]
    fn gamma_samples_match_distribution() {
        let ctx = ctx2();
        let theta = ctx.params().theta();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000usize;
        let mut samples: Vec<f64> = (0..n).map(|_| sample_gamma(&mut rng, &ctx)).collect();
        assert!(samples.iter().all(|&x| x > 0.0 && x <= theta));

        let mean = samples.iter().sum::<f64>() / n as f64;
        // E[x] = C (theta - log(1 + theta^2)/theta)
        assert_abs_diff_eq!(mean, 0.3297263403, epsilon = 3e-3);

        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0f64;
        for (i, &x) in samples.iter().enumerate() {
            let f = ctx.cdf(x);
            ks = ks.max((f - i as f64 / n as f64).abs());
            ks = ks.max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks < 0.006, "KS statistic {ks}");
    }

    #[test]
    fn trajectory_exact_example() {
        // digits of 1/2 are 2, 2, 4
        let params = params2();
        let opts = TrajectoryOptions {
            checkpoints: &[3],
            norming: &NormingSequence::NLogN,
            exceedance_multiplier: 1.0,
            grid: &[2, 3],
        };
        let record = run_trajectory(0.5, &params, &opts).unwrap();
        assert!(record.short_at.is_none());
        assert_eq!(record.checkpoints.len(), 1);
        let stats = &record.checkpoints[0];
        assert_eq!(stats.n, 3);
        assert_eq!(stats.digit_sum, BigUint::from(8u32));
        assert_eq!(stats.max_digit, 4);
        assert_eq!(stats.trimmed_sum, BigUint::from(4u32));
        assert_eq!(stats.truncation_level, 3);
        // digits <= 3: the two 2s
        assert_eq!(stats.truncated_sum, BigUint::from(4u32));
        assert_eq!(stats.remainder, BigUint::from(4u32));
        // k=2: 2 >= 2 log 2; k=3: 4 >= 3 log 3
        assert_eq!(stats.exceedance_count, 2);

        assert_abs_diff_eq!(record.max_sum_ratio, 2.8853900818, epsilon = 1e-9);
        assert_eq!(record.max_sum_ratio_at, 2);

        assert_eq!(record.running.len(), 2);
        assert_eq!(record.running[0].k, 2);
        assert_eq!(record.running[0].digit_sum, 4.0);
        assert_eq!(record.running[0].max_digit, 2);
        assert_abs_diff_eq!(record.running[1].sum_ratio, 2.4273046043, epsilon = 1e-9);
    }

    #[test]
    fn short_orbit_is_flagged() {
        // for m = 5 the double orbit of theta reaches exact 0 in one step
        let params = ThetaParams::new(5).unwrap();
        let opts = TrajectoryOptions {
            checkpoints: &[3],
            norming: &NormingSequence::NLogN,
            exceedance_multiplier: 1.0,
            grid: &[],
        };
        let record = run_trajectory(params.theta(), &params, &opts).unwrap();
        assert_eq!(record.short_at, Some(1));
        assert!(record.checkpoints.is_empty());
    }

    #[test]
    fn accounting_with_a_huge_first_digit() {
        let params = params2();
        let opts = TrajectoryOptions {
            checkpoints: &[2],
            norming: &NormingSequence::NLogN,
            exceedance_multiplier: 1.0,
            grid: &[],
        };
        let record = run_trajectory(1e-9, &params, &opts).unwrap();
        let stats = &record.checkpoints[0];
        assert!(stats.max_digit > 1_000_000_000);
        assert_eq!(stats.truncated_sum.clone() + stats.remainder.clone(), stats.digit_sum);
        assert_eq!(
            stats.trimmed_sum.clone() + BigUint::from(stats.max_digit),
            stats.digit_sum
        );
        // the huge digit is far above N(2) = 1, so it sits in the remainder
        assert!(stats.remainder >= BigUint::from(1_000_000_000u64));
    }

    #[test]
    fn ensemble_invariants() {
        let mut config = ExperimentConfig::standard(2, 2000, 6, 9);
        config.checkpoints = vec![1000, 2000];
        let ensemble = DigitEnsemble::generate(&config).unwrap();
        assert_eq!(ensemble.records.len(), 6);
        for (i, record) in ensemble.records.iter().enumerate() {
            assert_eq!(record.trial, i as u64);
            assert!(record.short_at.is_none());
            assert_eq!(record.checkpoints.len(), 2);
            for stats in &record.checkpoints {
                assert!(stats.digit_sum >= BigUint::from(2 * stats.n));
                assert!(stats.max_digit >= 2);
                assert_eq!(
                    stats.truncated_sum.clone() + stats.remainder.clone(),
                    stats.digit_sum
                );
            }
            let [first, second] = &record.checkpoints[..] else { unreachable!() };
            assert!(second.digit_sum > first.digit_sum);
            assert!(second.max_digit >= first.max_digit);
            assert!(second.exceedance_count >= first.exceedance_count);
        }
    }

    #[test]
    fn ensemble_deterministic_across_thread_counts() {
        let config = ExperimentConfig::standard(2, 500, 4, 3);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| DigitEnsemble::generate(&config).unwrap());
        let double = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap()
            .install(|| DigitEnsemble::generate(&config).unwrap());
        assert_eq!(
            serde_json::to_string(&single).unwrap(),
            serde_json::to_string(&double).unwrap()
        );
    }

    #[test]
    fn weak_law_report_shape() {
        let mut config = ExperimentConfig::standard(2, 2000, 16, 11);
        config.epsilons = vec![0.5, 1e9];
        let ensemble = DigitEnsemble::generate(&config).unwrap();
        let report = khinchine_experiment(&ensemble).unwrap();
        assert_eq!(report.checkpoints.len(), 2);
        let ctx = ctx2();
        let c = ctx.khinchine_constant();
        for cp in &report.checkpoints {
            assert!(cp.median_ratio > 1.0 && cp.median_ratio < 6.0);
            assert_abs_diff_eq!(
                cp.corrected_target,
                corrected_weak_law_target(c, cp.n),
                epsilon = 1e-15
            );
            // nothing exceeds an absurd epsilon
            assert_eq!(cp.epsilon_rows[1].exceedance_fraction, 0.0);
        }
        let ln = 1000.0f64.ln();
        assert_abs_diff_eq!(
            report.checkpoints[0].corrected_target,
            c * (ln + ln.ln()) / ln,
            epsilon = 1e-12
        );
    }

    #[test]
    fn trimmed_report_shape() {
        let mut config = ExperimentConfig::standard(2, 2000, 16, 11);
        config.checkpoints = vec![1000, 2000];
        let ensemble = DigitEnsemble::generate(&config).unwrap();
        let report = diamond_vaaler_experiment(&ensemble).unwrap();
        assert_eq!(report.checkpoints.len(), 2);
        for cp in &report.checkpoints {
            assert!(cp.trimmed_iqr >= 0.0 && cp.untrimmed_iqr >= 0.0);
            assert!(cp.median_trimmed_ratio > 0.0);
        }
        assert_eq!(report.trials_scored, 16);
        assert!(report.calmer_trimmed_trials <= report.trials_scored);
    }

    #[test]
    fn max_digit_report_bounds() {
        let config = ExperimentConfig::standard(2, 2000, 16, 11);
        let ensemble = DigitEnsemble::generate(&config).unwrap();
        let report = max_digit_experiment(&ensemble).unwrap();
        let ctx = ctx2();
        let c = ctx.khinchine_constant();
        assert_eq!(report.cells.len(), 2 * 3);
        for cell in &report.cells {
            assert!((0.0..=1.0).contains(&cell.empirical_probability));
            let expected = (c / (cell.epsilon * (cell.n as f64).ln())).min(1.0);
            assert_abs_diff_eq!(cell.analytic_bound, expected, epsilon = 1e-15);
            assert!(cell.binomial_se >= 0.0);
        }
    }

    #[test]
    fn philipp_divergent_branch() {
        let mut config = ExperimentConfig::standard(2, 10_000, 8, 21);
        config.checkpoints = vec![1000, 10_000];
        let report = philipp_experiment(&config).unwrap();
        assert_eq!(report.classification, Classification::Divergent);
        assert!(!report.heuristic_classification && report.regular);
        // sum_{k=2}^{10^4} C/(k log k)
        assert_abs_diff_eq!(
            report.checkpoints[1].predicted_exceedances,
            7.4359317735,
            epsilon = 1e-6
        );
        assert!(report.checkpoints[1].mean_exceedance_count > 0.0);
        assert!(report.fraction_with_exceedance > 0.5);
        assert_eq!(report.max_sum_ratios.len(), 8);
        assert!(report.max_sum_ratios.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn philipp_convergent_branch() {
        let mut config = ExperimentConfig::standard(2, 10_000, 8, 21);
        config.norming = NormingSequence::NLogNPow { p: 2.0 };
        config.checkpoints = vec![1000, 10_000];
        let report = philipp_experiment(&config).unwrap();
        assert_eq!(report.classification, Classification::Convergent);
        for cp in &report.checkpoints {
            assert!(cp.median_ratio.is_finite() && cp.median_ratio > 0.0);
            assert!(cp.max_ratio >= cp.median_ratio);
        }
    }

    #[test]
    fn digit_frequencies_approach_masses() {
        let params = params2();
        let ctx = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start = sample_gamma(&mut rng, &ctx);
        let freqs = digit_frequencies(&params, start, 100_000, 10).unwrap();
        assert_eq!(freqs.len(), 9);
        assert_abs_diff_eq!(freqs[0], ctx.digit_mass(2), epsilon = 0.01);
        assert_abs_diff_eq!(freqs[1], ctx.digit_mass(3), epsilon = 0.01);
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let mut config = ExperimentConfig::standard(2, 1000, 4, 1);
        config.trials = 0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::standard(2, 1000, 4, 1);
        config.checkpoints = vec![500, 500];
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::standard(2, 1000, 4, 1);
        config.checkpoints = vec![500, 2000];
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::standard(2, 1000, 4, 1);
        config.norming = NormingSequence::Table { values: vec![1.0; 10] };
        assert!(config.validate().is_err());
    }
}
