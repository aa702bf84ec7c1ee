//! Acceptance gates for the library. Each test checks one numbered
//! criterion and prints a single verdict line
//!
//!   acceptance NN <name>: PASS|FAIL (measured quantities)
//!
//! before asserting. Run with `--nocapture` to see the lines for passing
//! gates as well. Items 07, 08, and 09 share one 200-trial ensemble.

use std::sync::OnceLock;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use theta_core::expansion::{first_divergence, ThetaParams};
use theta_core::measure::MeasureContext;
use theta_core::montecarlo::{
    diamond_vaaler_experiment, digit_frequencies, khinchine_experiment, max_digit_experiment,
    philipp_experiment, sample_gamma, DigitEnsemble, ExperimentConfig, NormingSequence,
};
use theta_core::qfield::QuadNumber;
use theta_core::transfer::{
    psi_fit, psi_mixing_closed_form, psi_mixing_quadrature, transfer_apply_density,
    CollocationOperator, UlamOperator,
};

fn verdict(number: u8, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {number:02} {name}: {tag} ({detail})");
    println!("{line}");
    assert!(pass, "{line}");
}

fn context(m: u64) -> MeasureContext {
    MeasureContext::new(ThetaParams::new(m).unwrap())
}

/// Composite Simpson rule with `panels` even subdivisions.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for j in 1..panels {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + j as f64 * h);
    }
    sum * h / 3.0
}

/// Mass of the digit set {l >= k} as an integral of the density over
/// (0, 1/(theta k)], evaluated by quadrature rather than the closed form.
fn tail_by_quadrature(ctx: &MeasureContext, k: u64) -> f64 {
    let theta = ctx.params().theta();
    let hi = (1.0 / (theta * k as f64)).min(theta);
    simpson(|x| ctx.density(x), 0.0, hi, 1000)
}

#[test]
fn a01_exact_tail_law() {
    let start = Instant::now();
    let mut max_closed_dev = 0.0f64;
    let mut max_quad_dev = 0.0f64;
    let mut unit_tail_exact = true;
    for m in [2u64, 3, 5] {
        let ctx = context(m);
        let c = ctx.khinchine_constant();
        unit_tail_exact &= ctx.tail_mass(m) == 1.0;
        for k in m..=1000 {
            let closed = c * (1.0 / k as f64).ln_1p();
            max_closed_dev = max_closed_dev.max((ctx.tail_mass(k) - closed).abs());
            max_quad_dev = max_quad_dev.max((ctx.tail_mass(k) - tail_by_quadrature(&ctx, k)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = max_closed_dev < 1e-12 && max_quad_dev < 1e-10 && unit_tail_exact && secs < 1.0;
    verdict(
        1,
        "exact-tail-law",
        pass,
        &format!(
            "m in {{2,3,5}}, k up to 1000: closed-form dev {max_closed_dev:.2e} < 1e-12, \
             quadrature dev {max_quad_dev:.2e} < 1e-10, tail(m) == 1 exactly: {unit_tail_exact}, \
             {secs:.2}s < 1s"
        ),
    );
}

#[test]
fn a02_invariant_density_fixed_point() {
    let start = Instant::now();
    let mut sup = 0.0f64;
    for m in [2u64, 3, 5] {
        let ctx = context(m);
        let theta = ctx.params().theta();
        for j in 0..1000 {
            let x = theta * (j as f64 + 0.5) / 1000.0;
            sup = sup.max((transfer_apply_density(x, 1000, &ctx) - ctx.density(x)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = sup < 1e-10 && secs < 1.0;
    verdict(
        2,
        "invariant-density-fixed-point",
        pass,
        &format!(
            "m in {{2,3,5}}, 1000-point grid, 1000 branches: sup residual {sup:.2e} < 1e-10, \
             {secs:.2}s < 1s"
        ),
    );
}

/// Mass of T^{-1}(a, b] as a compensated branch sum with a 1e-15 term
/// cutoff; branches past the cutoff are closed in exact telescoped form
/// rather than dropped.
fn preimage_mass(ctx: &MeasureContext, a: f64, b: f64) -> (f64, u64) {
    let m = ctx.params().m();
    let theta = ctx.params().theta();
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut i = m;
    loop {
        let fi = i as f64;
        let term = ctx.measure_interval(1.0 / (b + fi * theta), 1.0 / (a + fi * theta));
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        i += 1;
        if term < 1e-15 || i - m > 10_000 {
            break;
        }
    }
    let fi = i as f64;
    let tail = ctx.khinchine_constant() * ((b + fi * theta) / (a + fi * theta)).ln();
    (sum + tail, i - m)
}

#[test]
fn a03_pushforward_invariance() {
    let start = Instant::now();
    let ctx = context(2);
    let theta = ctx.params().theta();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut most_branches = 0u64;
    for _ in 0..100 {
        let u = rng.gen_range(0.0..theta);
        let v = rng.gen_range(0.0..theta);
        let (a, b) = if u <= v { (u, v) } else { (v, u) };
        let direct = ctx.measure_interval(a, b);
        let (pulled, branches) = preimage_mass(&ctx, a, b);
        worst = worst.max((pulled - direct).abs());
        most_branches = most_branches.max(branches);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && secs < 5.0;
    verdict(
        3,
        "pushforward-invariance",
        pass,
        &format!(
            "100 random subintervals: max |preimage - direct| {worst:.2e} < 1e-9, \
             up to {most_branches} explicit branches plus exact tail, {secs:.2}s < 5s"
        ),
    );
}

#[test]
fn a04_ulam_recovery() {
    let start = Instant::now();
    let params = ThetaParams::new(2).unwrap();
    let ctx = context(2);
    let cell_counts = [256usize, 512, 1024, 2048, 4096];
    let l1: Vec<f64> = cell_counts
        .iter()
        .map(|&cells| UlamOperator::build(&params, cells).density_l1_error(&ctx))
        .collect();
    let decreasing = l1.windows(2).all(|w| w[1] < w[0]);
    let finest = *l1.last().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = finest < 1e-2 && decreasing && secs < 60.0;
    let trace: Vec<String> =
        cell_counts.iter().zip(&l1).map(|(c, e)| format!("{c}:{e:.2e}")).collect();
    verdict(
        4,
        "ulam-recovery",
        pass,
        &format!(
            "L1 by cells {}: finest {finest:.2e} < 1e-2, strictly decreasing: {decreasing}, \
             {secs:.1}s < 60s",
            trace.join(" ")
        ),
    );
}

#[test]
fn a05_mixing_estimates() {
    let start = Instant::now();
    let params = ThetaParams::new(2).unwrap();
    let ctx = context(2);

    let lag1 = psi_mixing_closed_form(&ctx, 2);
    let reference =
        (ctx.khinchine_constant() * (33.0f64 / 32.0).ln() / ctx.digit_mass(2).powi(2) - 1.0).abs();
    let closed_ok = (lag1.psi_hat - reference).abs() < 1e-4 && (reference - 0.1006).abs() < 1e-4;

    let op = CollocationOperator::build(&params, 64, 400);
    let points: Vec<(usize, f64)> = (1..=12)
        .map(|lag| {
            let est = psi_mixing_quadrature(&op, &ctx, lag, 40);
            (lag, est.psi_hat)
        })
        .collect();
    let fit = psi_fit(&points);
    let secs = start.elapsed().as_secs_f64();
    let pass = closed_ok && fit.rho < 1.0 && fit.r_squared >= 0.98 && secs < 60.0;
    verdict(
        5,
        "mixing-estimates",
        pass,
        &format!(
            "lag-1 pair (2,2) {:.6} vs closed form {reference:.6} (tol 1e-4); \
             lags 1..12 fit rho {:.4} < 1, r^2 {:.5} >= 0.98, {secs:.1}s < 60s",
            lag1.psi_hat, fit.rho, fit.r_squared
        ),
    );
}

#[test]
fn a06_ergodic_digit_frequencies() {
    let start = Instant::now();
    let params = ThetaParams::new(2).unwrap();
    let ctx = context(2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0 = sample_gamma(&mut rng, &ctx);
    let freqs = digit_frequencies(&params, x0, 1_000_000, 10).unwrap();
    let mut worst = 0.0f64;
    for digit in 2u64..=10 {
        let dev = (freqs[(digit - 2) as usize] - ctx.digit_mass(digit)).abs();
        worst = worst.max(dev);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 5e-3 && secs < 10.0;
    verdict(
        6,
        "ergodic-digit-frequencies",
        pass,
        &format!(
            "one 1e6-step orbit (seed 6): max |freq - mass| over digits 2..10 \
             {worst:.2e} < 5e-3, {secs:.1}s < 10s"
        ),
    );
}

/// The 200-trial, 1e6-step ensemble shared by items 07, 08, and 09.
fn shared_ensemble() -> &'static DigitEnsemble {
    static ENSEMBLE: OnceLock<DigitEnsemble> = OnceLock::new();
    ENSEMBLE.get_or_init(|| {
        let mut config = ExperimentConfig::standard(2, 1_000_000, 200, 42);
        config.epsilons = vec![0.25, 0.5, 1.0, 2.0];
        DigitEnsemble::generate(&config).expect("ensemble generates")
    })
}

#[test]
fn a07_weak_law() {
    let start = Instant::now();
    let report = khinchine_experiment(shared_ensemble()).unwrap();
    let fractions: Vec<f64> = report
        .checkpoints
        .iter()
        .map(|cp| {
            cp.epsilon_rows
                .iter()
                .find(|r| (r.epsilon - 0.5).abs() < 1e-12)
                .expect("epsilon 0.5 present")
                .exceedance_fraction
        })
        .collect();
    let non_increasing = fractions.windows(2).all(|w| w[1] <= w[0]);
    let last = report.checkpoints.last().unwrap();
    let rel_dev = (last.median_ratio / last.corrected_target - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();
    let pass = non_increasing && rel_dev < 0.10 && secs < 900.0;
    verdict(
        7,
        "weak-law",
        pass,
        &format!(
            "200 trials to 1e6 (seed 42): eps=0.5 exceedance fractions {fractions:?} \
             non-increasing: {non_increasing}; median at 1e6 {:.4} vs corrected target {:.4} \
             (rel dev {rel_dev:.3} < 0.10), {secs:.1}s < 900s",
            last.median_ratio, last.corrected_target
        ),
    );
}

#[test]
fn a08_trimmed_law() {
    let report = diamond_vaaler_experiment(shared_ensemble()).unwrap();
    let iqr_at = |n: usize| {
        report
            .checkpoints
            .iter()
            .find(|cp| cp.n == n)
            .expect("checkpoint present")
            .trimmed_iqr
    };
    let iqr_small = iqr_at(10_000);
    let iqr_large = iqr_at(1_000_000);
    let calm_fraction = report.calmer_trimmed_trials as f64 / report.trials_scored as f64;
    let pass = iqr_large < iqr_small && calm_fraction >= 0.80;
    verdict(
        8,
        "trimmed-law",
        pass,
        &format!(
            "trimmed-ratio IQR 1e6 {iqr_large:.4} < IQR 1e4 {iqr_small:.4}; trimmed series \
             calmer than untrimmed in {}/{} trials ({calm_fraction:.2} >= 0.80); \
             runtime shared with item 07",
            report.calmer_trimmed_trials, report.trials_scored
        ),
    );
}

#[test]
fn a09_max_digit_bound() {
    let report = max_digit_experiment(shared_ensemble()).unwrap();
    let mut worst_slack = f64::NEG_INFINITY;
    let mut cells_checked = 0usize;
    for cell in &report.cells {
        if cell.epsilon >= 0.5 - 1e-12 {
            let slack = cell.empirical_probability - (cell.analytic_bound + 3.0 * cell.binomial_se);
            worst_slack = worst_slack.max(slack);
            cells_checked += 1;
        }
    }
    let pass = cells_checked == 12 && worst_slack <= 0.0;
    verdict(
        9,
        "max-digit-bound",
        pass,
        &format!(
            "{cells_checked} cells (eps in {{0.5,1,2}} x 4 checkpoints): worst \
             empirical - (bound + 3 SE) = {worst_slack:.3e} <= 0; runtime shared with item 07"
        ),
    );
}

#[test]
fn a10_philipp_dichotomy() {
    let start = Instant::now();

    let divergent_config = ExperimentConfig::standard(2, 1_000_000, 200, 42);
    let divergent = philipp_experiment(&divergent_config).unwrap();
    let last = divergent.checkpoints.last().unwrap();
    let count_ratio = last.mean_exceedance_count / last.predicted_exceedances;
    let divergent_ok = count_ratio > 1.0 / 3.0
        && count_ratio < 3.0
        && divergent.fraction_with_exceedance >= 0.95;

    let mut convergent_config = ExperimentConfig::standard(2, 1_000_000, 200, 42);
    convergent_config.norming = NormingSequence::NLogNPow { p: 2.0 };
    let convergent = philipp_experiment(&convergent_config).unwrap();
    let medians: Vec<f64> = convergent.checkpoints.iter().map(|cp| cp.median_ratio).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let final_median = *medians.last().unwrap();
    let convergent_ok = decreasing && final_median < 0.6;

    let secs = start.elapsed().as_secs_f64();
    let pass = divergent_ok && convergent_ok && secs < 900.0;
    verdict(
        10,
        "philipp-dichotomy",
        pass,
        &format!(
            "divergent n log n: mean exceedances {:.2} vs predicted {:.2} (ratio \
             {count_ratio:.2} in [1/3, 3]), trials with an exceedance {:.2} >= 0.95; \
             convergent n (log n)^2: medians {medians:?} decreasing to {final_median:.3} < 0.6; \
             {secs:.1}s < 900s",
            last.mean_exceedance_count, last.predicted_exceedances,
            divergent.fraction_with_exceedance
        ),
    );
}

#[test]
fn a11_exact_double_agreement() {
    let start = Instant::now();
    let params = ThetaParams::new(2).unwrap();
    let theta_exact = QuadNumber::new(
        BigRational::from_integer(BigInt::from(0)),
        BigRational::new(BigInt::from(1), BigInt::from(2)),
        2,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut starts: Vec<(String, QuadNumber)> = Vec::new();
    while starts.len() < 10 {
        let den = rng.gen_range(1000i64..=2000);
        let num = rng.gen_range(1..=den * 7 / 10);
        starts.push((format!("{num}/{den}"), QuadNumber::from_ratio(num, den, 2).unwrap()));
    }
    while starts.len() < 20 {
        let p = rng.gen_range(-20i64..=20);
        let q = rng.gen_range(30i64..=80);
        let r = rng.gen_range(-15i64..=15);
        let s = rng.gen_range(40i64..=90);
        let candidate = QuadNumber::new(
            BigRational::new(BigInt::from(p), BigInt::from(q)),
            BigRational::new(BigInt::from(r), BigInt::from(s)),
            2,
        )
        .unwrap();
        let below = theta_exact.checked_sub(&candidate).unwrap().sign() == 1;
        if candidate.sign() == 1 && below {
            starts.push((format!("{p}/{q}+{r}/{s}*sqrt(2)"), candidate));
        }
    }

    let mut indices = Vec::new();
    for (label, x0) in &starts {
        let idx = first_divergence(x0, 40, &params).unwrap();
        println!("  start {label:<22} agrees for {idx} digits");
        indices.push(idx);
    }
    let min = *indices.iter().min().unwrap();
    let mut sorted = indices.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    let secs = start.elapsed().as_secs_f64();
    let pass = min >= 25 && secs < 5.0;
    verdict(
        11,
        "exact-double-agreement",
        pass,
        &format!(
            "20 exact starts in Q(sqrt(2)), 40-step budget: first-divergence indices \
             {indices:?}, min {min} (need >= 25), median {median}, {secs:.1}s < 5s"
        ),
    );
}
