//! Subcommand definitions and handlers.

use clap::{Args, Subcommand};
use serde_json::{json, Value};

use theta_core::expansion::{
    cylinder_rank_n_exact, evaluate, evaluate_exact, expand, ThetaParams,
};
use theta_core::measure::MeasureContext;
use theta_core::montecarlo::{
    diamond_vaaler_experiment, khinchine_experiment, max_digit_experiment, philipp_experiment,
    DigitEnsemble, ExperimentConfig,
};
use theta_core::transfer::{
    psi_fit, psi_mixing_closed_form, psi_mixing_quadrature, psi_mixing_ulam,
    transfer_apply_density, CollocationOperator, MixingEstimate, UlamOperator,
};

use crate::input::{parse_list, parse_mode, parse_norming, parse_point, FileConfig};
use crate::output::{num, CommandOutput, Csv};
use crate::CliError;

#[derive(Subcommand)]
pub enum Command {
    /// Expand a starting point into theta-expansion digits
    Expand(ExpandArgs),
    /// Evaluate a digit sequence back into the number it encodes
    Evaluate(DigitsArgs),
    /// Endpoints and invariant mass of the cylinder set of a digit prefix
    Cylinder(DigitsArgs),
    /// Invariant-measure quantities
    #[command(subcommand)]
    Measure(MeasureCommand),
    /// Invariant-measure quantile: the x with F(x) = u
    Quantile(QuantileArgs),
    /// Residual of the invariant density under one transfer-operator step
    InvariantCheck(InvariantCheckArgs),
    /// Ulam matrix, its stationary density, and its spectral gap
    Ulam(UlamArgs),
    /// psi-mixing coefficients across lags, with a geometric-decay fit
    Mixing(MixingArgs),
    /// Monte Carlo digit-sum experiments
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
pub struct ExpandArgs {
    /// Radicand of theta = 1/sqrt(m); any non-square integer >= 2
    #[arg(long)]
    pub m: Option<u64>,
    /// Starting point in (0, theta]: p/q, a+b*sqrt(m), or a decimal
    #[arg(long)]
    pub x: Option<String>,
    /// exact | double | interval | interval:START_BITS:MAX_BITS
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of digits to produce (default 30)
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Args)]
pub struct DigitsArgs {
    /// Radicand of theta = 1/sqrt(m); any non-square integer >= 2
    #[arg(long)]
    pub m: Option<u64>,
    /// Comma-separated digits, each >= m
    #[arg(long)]
    pub digits: Option<String>,
}

#[derive(Subcommand)]
pub enum MeasureCommand {
    /// Density C*theta/(1 + theta*x) at a point or on a midpoint grid
    Density(DensityArgs),
    /// Mass of the subinterval between a and b
    Interval(IntervalArgs),
    /// Mass of one digit cell, or of every cell from m up to a cap
    DigitMass(DigitMassArgs),
    /// Mass of digits strictly above k
    Tail(TailArgs),
    /// Truncated moment: sum over digits i <= cap of i^order * mass(i)
    Moment(MomentArgs),
    /// The digit-law constant C = 1/log(1 + 1/m)
    Khinchine(MArgs),
}

#[derive(Args)]
pub struct MArgs {
    /// Radicand of theta = 1/sqrt(m); any non-square integer >= 2
    #[arg(long)]
    pub m: Option<u64>,
}

#[derive(Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Evaluation point in (0, theta]
    #[arg(long)]
    pub x: Option<f64>,
    /// Sample the density at this many cell midpoints instead
    #[arg(long)]
    pub cells: Option<usize>,
}

#[derive(Args)]
pub struct IntervalArgs {
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Args)]
pub struct DigitMassArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Single digit to weigh
    #[arg(long)]
    pub digit: Option<u64>,
    /// Weigh every digit from m through this cap instead
    #[arg(long)]
    pub through: Option<u64>,
}

#[derive(Args)]
pub struct TailArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Tail threshold, at least m
    #[arg(long)]
    pub k: Option<u64>,
}

#[derive(Args)]
pub struct MomentArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Largest digit included in the sum
    #[arg(long)]
    pub cap: Option<u64>,
    /// Moment order (default 1)
    #[arg(long)]
    pub order: Option<u32>,
}

#[derive(Args)]
pub struct QuantileArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Probability level, strictly between 0 and 1
    #[arg(long)]
    pub u: Option<f64>,
}

#[derive(Args)]
pub struct InvariantCheckArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Number of midpoint evaluation nodes (default 1000)
    #[arg(long)]
    pub grid: Option<usize>,
    /// Explicit inverse branches before the closed-form tail (default 1000)
    #[arg(long)]
    pub branches: Option<u64>,
}

#[derive(Args)]
pub struct UlamArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Grid cells over (0, theta] (default 512, at least 8)
    #[arg(long)]
    pub cells: Option<usize>,
    /// summary | matrix | density
    #[arg(long)]
    pub emit: Option<String>,
    /// Stationary-vector iteration tolerance (default 1e-12)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap for the stationary vector and the gap (default 10000)
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Args)]
pub struct MixingArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// closed-form | quadrature | ulam (closed-form is lag 1 only)
    #[arg(long)]
    pub method: Option<String>,
    /// Largest lag to estimate (default 8)
    #[arg(long)]
    pub lags: Option<usize>,
    /// Digit pairs up to this cap enter the maximum (default 40)
    #[arg(long)]
    pub digit_cap: Option<u64>,
    /// Chebyshev degree for the quadrature method (even, >= 16, default 64)
    #[arg(long)]
    pub degree: Option<usize>,
    /// Explicit branches for the quadrature method (default 400)
    #[arg(long)]
    pub branches: Option<u64>,
    /// Grid cells for the ulam method (default 1024)
    #[arg(long)]
    pub cells: Option<usize>,
}

#[derive(Subcommand)]
pub enum ExperimentCommand {
    /// Weak law of digit sums: S_n/(n log n) against the constant C
    Khinchine(ExperimentArgs),
    /// Trimmed sums: dropping the single largest digit stabilizes S_n
    DiamondVaaler(ExperimentArgs),
    /// The largest digit is negligible against n log n
    MaxDigit(ExperimentArgs),
    /// Strong-law dichotomy for S_n/a(n) under a chosen norming
    Philipp(ExperimentArgs),
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub m: Option<u64>,
    /// Orbit length per trial (default 10000)
    #[arg(long)]
    pub n: Option<usize>,
    /// Independent trajectories (default 20)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base RNG seed; trial t uses seed XOR t (default 42)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated epsilon grid for exceedance fractions
    #[arg(long)]
    pub epsilons: Option<String>,
    /// Comma-separated checkpoint steps (default: decades up to n)
    #[arg(long)]
    pub checkpoints: Option<String>,
    /// Norming a(n): n_log_n | n_log_n_pow:P | n_pow:P
    #[arg(long)]
    pub norming: Option<String>,
    /// Exceedance multiplier M in the event digit_k >= M*a(k)
    #[arg(long)]
    pub multiplier: Option<f64>,
    /// Running-series samples per decade of k (default 48)
    #[arg(long)]
    pub grid_per_decade: Option<usize>,
}

pub fn dispatch(command: Command, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    match command {
        Command::Expand(a) => expand_cmd(a, cfg),
        Command::Evaluate(a) => evaluate_cmd(a, cfg),
        Command::Cylinder(a) => cylinder_cmd(a, cfg),
        Command::Measure(sub) => measure_cmd(sub, cfg),
        Command::Quantile(a) => quantile_cmd(a, cfg),
        Command::InvariantCheck(a) => invariant_check_cmd(a, cfg),
        Command::Ulam(a) => ulam_cmd(a, cfg),
        Command::Mixing(a) => mixing_cmd(a, cfg),
        Command::Experiment(sub) => experiment_cmd(sub, cfg),
    }
}

fn context(m: u64) -> Result<MeasureContext, CliError> {
    Ok(MeasureContext::new(ThetaParams::new(m)?))
}

/// One (m, formula_id, parameters, value) record in both formats.
fn scalar_output(
    m: u64,
    formula_id: &'static str,
    fields: &[(&'static str, Value)],
    value: f64,
) -> CommandOutput {
    let mut obj = serde_json::Map::new();
    obj.insert("m".into(), m.into());
    obj.insert("formula_id".into(), formula_id.into());
    for (key, val) in fields {
        obj.insert((*key).to_string(), val.clone());
    }
    obj.insert("value".into(), value.into());

    let mut header = vec!["m", "formula_id"];
    header.extend(fields.iter().map(|(key, _)| *key));
    header.push("value");
    let mut row = vec![m.to_string(), formula_id.to_string()];
    row.extend(fields.iter().map(|(_, val)| value_text(val)));
    row.push(num(value));

    CommandOutput { json: Value::Object(obj), csv: Csv { header, rows: vec![row] } }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn expand_cmd(a: ExpandArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let x_text = cfg.required::<String>(a.x, "x")?;
    let n = cfg.or_default(a.n, "n", 30)?;
    let mode_text = cfg.opt(a.mode, "mode")?;
    let params = ThetaParams::new(m)?;
    let point = parse_point(&x_text, m)?;
    let mode = parse_mode(mode_text.as_deref(), &point)?;
    let expansion = expand(&point.into_point(), n, &params, &mode)?;

    let mut json = expansion.summary_json();
    let obj = json.as_object_mut().expect("summary is an object");
    obj.insert("formula_id".into(), "theta_expansion".into());
    obj.insert("x".into(), x_text.clone().into());

    let rows = expansion
        .digits
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            vec![m.to_string(), "theta_expansion".into(), (k + 1).to_string(), d.to_string()]
        })
        .collect();
    Ok(CommandOutput {
        json,
        csv: Csv { header: vec!["m", "formula_id", "index", "digit"], rows },
    })
}

fn evaluate_cmd(a: DigitsArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let digits = parse_list::<u64>(&cfg.required::<String>(a.digits, "digits")?)?;
    let params = ThetaParams::new(m)?;
    let value = evaluate(&digits, &params)?;
    let value_decimal = evaluate_exact(&digits, None, &params)?.to_decimal_string(30);
    let json = json!({
        "m": m,
        "formula_id": "expansion_value",
        "digits": digits,
        "value": value,
        "value_decimal": value_decimal,
    });
    let rows = vec![vec![m.to_string(), "expansion_value".into(), num(value), value_decimal]];
    Ok(CommandOutput {
        json,
        csv: Csv { header: vec!["m", "formula_id", "value", "value_decimal"], rows },
    })
}

fn cylinder_cmd(a: DigitsArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let digits = parse_list::<u64>(&cfg.required::<String>(a.digits, "digits")?)?;
    let params = ThetaParams::new(m)?;
    let cyl = cylinder_rank_n_exact(&digits, &params)?;
    let lo = cyl.lo.to_f64();
    let hi = cyl.hi.to_f64();
    let ctx = MeasureContext::new(params);
    let mass = ctx.measure_interval(lo, hi);
    let json = json!({
        "m": m,
        "formula_id": "cylinder",
        "digits": digits,
        "lo": lo,
        "hi": hi,
        "lo_decimal": cyl.lo.to_decimal_string(30),
        "hi_decimal": cyl.hi.to_decimal_string(30),
        "closed_left": cyl.closed_left,
        "width": hi - lo,
        "mass": mass,
    });
    let rows = vec![vec![
        m.to_string(),
        "cylinder".into(),
        digits.len().to_string(),
        num(lo),
        num(hi),
        cyl.closed_left.to_string(),
        num(hi - lo),
        num(mass),
    ]];
    Ok(CommandOutput {
        json,
        csv: Csv {
            header: vec!["m", "formula_id", "rank", "lo", "hi", "closed_left", "width", "mass"],
            rows,
        },
    })
}

fn measure_cmd(sub: MeasureCommand, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    match sub {
        MeasureCommand::Density(a) => {
            let m = cfg.required::<u64>(a.m, "m")?;
            let ctx = context(m)?;
            let x = cfg.opt(a.x, "x")?;
            let cells = cfg.opt(a.cells, "cells")?;
            match (x, cells) {
                (Some(x), None) => {
                    Ok(scalar_output(m, "invariant_density", &[("x", x.into())], ctx.density(x)))
                }
                (None, Some(cells)) if cells >= 1 => {
                    let theta = ctx.params().theta();
                    let mut samples = Vec::with_capacity(cells);
                    let mut rows = Vec::with_capacity(cells);
                    for i in 0..cells {
                        let xi = theta * (i as f64 + 0.5) / cells as f64;
                        let d = ctx.density(xi);
                        samples.push(json!({"x": xi, "density": d}));
                        rows.push(vec![
                            m.to_string(),
                            "invariant_density".into(),
                            num(xi),
                            num(d),
                        ]);
                    }
                    let json = json!({
                        "m": m,
                        "formula_id": "invariant_density",
                        "cells": cells,
                        "samples": samples,
                    });
                    Ok(CommandOutput {
                        json,
                        csv: Csv { header: vec!["m", "formula_id", "x", "density"], rows },
                    })
                }
                _ => Err(CliError::usage("pass exactly one of --x or --cells (>= 1)")),
            }
        }
        MeasureCommand::Interval(a) => {
            let m = cfg.required::<u64>(a.m, "m")?;
            let lo = cfg.required::<f64>(a.a, "a")?;
            let hi = cfg.required::<f64>(a.b, "b")?;
            let ctx = context(m)?;
            Ok(scalar_output(
                m,
                "interval_mass",
                &[("a", lo.into()), ("b", hi.into())],
                ctx.measure_interval(lo, hi),
            ))
        }
        MeasureCommand::DigitMass(a) => {
            let m = cfg.required::<u64>(a.m, "m")?;
            let ctx = context(m)?;
            let digit = cfg.opt(a.digit, "digit")?;
            let through = cfg.opt(a.through, "through")?;
            match (digit, through) {
                (Some(d), None) => {
                    if d < m {
                        return Err(CliError::usage(format!("digits start at m = {m}")));
                    }
                    Ok(scalar_output(m, "digit_mass", &[("digit", d.into())], ctx.digit_mass(d)))
                }
                (None, Some(cap)) => {
                    if cap < m {
                        return Err(CliError::usage(format!("digits start at m = {m}")));
                    }
                    let mut rows = Vec::new();
                    let mut samples = Vec::new();
                    for d in m..=cap {
                        let mass = ctx.digit_mass(d);
                        samples.push(json!({"digit": d, "mass": mass}));
                        rows.push(vec![
                            m.to_string(),
                            "digit_mass".into(),
                            d.to_string(),
                            num(mass),
                        ]);
                    }
                    let json = json!({
                        "m": m,
                        "formula_id": "digit_mass",
                        "through": cap,
                        "samples": samples,
                    });
                    Ok(CommandOutput {
                        json,
                        csv: Csv { header: vec!["m", "formula_id", "digit", "mass"], rows },
                    })
                }
                _ => Err(CliError::usage("pass exactly one of --digit or --through")),
            }
        }
        MeasureCommand::Tail(a) => {
            let m = cfg.required::<u64>(a.m, "m")?;
            let k = cfg.required::<u64>(a.k, "k")?;
            if k < m {
                return Err(CliError::usage(format!("tail threshold must be at least m = {m}")));
            }
            let ctx = context(m)?;
            Ok(scalar_output(m, "tail_mass", &[("k", k.into())], ctx.tail_mass(k)))
        }
        MeasureCommand::Moment(a) => {
            let m = cfg.required::<u64>(a.m, "m")?;
            let cap = cfg.required::<u64>(a.cap, "cap")?;
            let order = cfg.or_default(a.order, "order", 1)?;
            if cap < m {
                return Err(CliError::usage(format!("cap must be at least m = {m}")));
            }
            let ctx = context(m)?;
            Ok(scalar_output(
                m,
                "truncated_moment",
                &[("cap", cap.into()), ("order", order.into())],
                ctx.truncated_moment(cap, order),
            ))
        }
        MeasureCommand::Khinchine(a) => {
            let m = cfg.required::<u64>(a.m, "m")?;
            let ctx = context(m)?;
            Ok(scalar_output(m, "khinchine_constant", &[], ctx.khinchine_constant()))
        }
    }
}

fn quantile_cmd(a: QuantileArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let u = cfg.required::<f64>(a.u, "u")?;
    if !(u > 0.0 && u <= 1.0) {
        return Err(CliError::new("domain", "u must lie in (0, 1]"));
    }
    let ctx = context(m)?;
    Ok(scalar_output(m, "quantile", &[("u", u.into())], ctx.quantile(u)))
}

fn invariant_check_cmd(a: InvariantCheckArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let grid = cfg.or_default(a.grid, "grid", 1000)?;
    let branches = cfg.or_default(a.branches, "branches", 1000)?;
    if grid == 0 {
        return Err(CliError::usage("grid must be at least 1"));
    }
    if branches < m {
        return Err(CliError::usage(format!("need at least m = {m} branches")));
    }
    let ctx = context(m)?;
    let theta = ctx.params().theta();
    let mut sup = 0.0f64;
    let mut sum = 0.0f64;
    for j in 0..grid {
        let x = theta * (j as f64 + 0.5) / grid as f64;
        let residual = (transfer_apply_density(x, branches, &ctx) - ctx.density(x)).abs();
        sup = sup.max(residual);
        sum += residual;
    }
    let mean = sum / grid as f64;
    let json = json!({
        "m": m,
        "formula_id": "invariant_residual",
        "grid": grid,
        "branches": branches,
        "sup_residual": sup,
        "mean_residual": mean,
    });
    let rows = vec![vec![
        m.to_string(),
        "invariant_residual".into(),
        grid.to_string(),
        branches.to_string(),
        num(sup),
        num(mean),
    ]];
    Ok(CommandOutput {
        json,
        csv: Csv {
            header: vec!["m", "formula_id", "grid", "branches", "sup_residual", "mean_residual"],
            rows,
        },
    })
}

fn ulam_cmd(a: UlamArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let cells = cfg.or_default(a.cells, "cells", 512)?;
    let emit = cfg.or_default(a.emit, "emit", "summary".to_string())?;
    let tol = cfg.or_default(a.tol, "tol", 1e-12)?;
    let max_iter = cfg.or_default(a.max_iter, "max-iter", 10_000)?;
    if cells < 8 {
        return Err(CliError::usage("need at least 8 cells"));
    }
    let params = ThetaParams::new(m)?;
    let op = UlamOperator::build(&params, cells);
    match emit.as_str() {
        "summary" => {
            let ctx = MeasureContext::new(params);
            let l1_error = op.density_l1_error(&ctx);
            let spectral = op.spectral_gap(max_iter);
            let max_row_dev =
                op.row_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0f64, f64::max);
            let json = json!({
                "m": m,
                "formula_id": "ulam_summary",
                "cells": cells,
                "l1_error": l1_error,
                "lambda2": spectral.lambda2,
                "spectral_gap": spectral.gap,
                "power_iterations": spectral.iterations,
                "max_row_sum_deviation": max_row_dev,
            });
            let rows = vec![vec![
                m.to_string(),
                "ulam_summary".into(),
                cells.to_string(),
                num(l1_error),
                num(spectral.lambda2),
                num(spectral.gap),
                spectral.iterations.to_string(),
                num(max_row_dev),
            ]];
            Ok(CommandOutput {
                json,
                csv: Csv {
                    header: vec![
                        "m",
                        "formula_id",
                        "cells",
                        "l1_error",
                        "lambda2",
                        "spectral_gap",
                        "power_iterations",
                        "max_row_sum_deviation",
                    ],
                    rows,
                },
            })
        }
        "matrix" => {
            let mut entries = Vec::new();
            let mut rows = Vec::new();
            for (row, col, value) in op.nonzero_entries() {
                entries.push(json!([row, col, value]));
                rows.push(vec![
                    m.to_string(),
                    "ulam_matrix".into(),
                    row.to_string(),
                    col.to_string(),
                    num(value),
                ]);
            }
            let json = json!({
                "m": m,
                "formula_id": "ulam_matrix",
                "cells": cells,
                "entries": entries,
            });
            Ok(CommandOutput {
                json,
                csv: Csv { header: vec!["m", "formula_id", "row", "col", "value"], rows },
            })
        }
        "density" => {
            let density = op.stationary_density(tol, max_iter);
            let delta = op.delta();
            let mut samples = Vec::with_capacity(cells);
            let mut rows = Vec::with_capacity(cells);
            for (i, &d) in density.iter().enumerate() {
                let x = (i as f64 + 0.5) * delta;
                samples.push(json!({"x": x, "density": d}));
                rows.push(vec![m.to_string(), "ulam_density".into(), num(x), num(d)]);
            }
            let json = json!({
                "m": m,
                "formula_id": "ulam_density",
                "cells": cells,
                "samples": samples,
            });
            Ok(CommandOutput {
                json,
                csv: Csv { header: vec!["m", "formula_id", "x", "density"], rows },
            })
        }
        other => Err(CliError::usage(format!(
            "unknown emit target {other:?}; use summary, matrix, or density"
        ))),
    }
}

fn mixing_cmd(a: MixingArgs, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let method = cfg.or_default(a.method, "method", "quadrature".to_string())?;
    let lags = cfg.or_default(a.lags, "lags", 8)?;
    let digit_cap = cfg.or_default(a.digit_cap, "digit-cap", 40)?;
    if lags == 0 {
        return Err(CliError::usage("need at least one lag"));
    }
    if digit_cap < m {
        return Err(CliError::usage(format!("digit cap must be at least m = {m}")));
    }
    let params = ThetaParams::new(m)?;
    let ctx = MeasureContext::new(params.clone());
    let estimates: Vec<MixingEstimate> = match method.as_str() {
        "closed-form" => vec![psi_mixing_closed_form(&ctx, digit_cap)],
        "quadrature" => {
            let degree = cfg.or_default(a.degree, "degree", 64)?;
            let branches = cfg.or_default(a.branches, "branches", 400)?;
            if degree < 16 || !degree.is_multiple_of(2) {
                return Err(CliError::usage("degree must be even and at least 16"));
            }
            if branches < 100 {
                return Err(CliError::usage("need at least 100 branches"));
            }
            let op = CollocationOperator::build(&params, degree, branches);
            (1..=lags).map(|lag| psi_mixing_quadrature(&op, &ctx, lag, digit_cap)).collect()
        }
        "ulam" => {
            let cells = cfg.or_default(a.cells, "cells", 1024)?;
            if cells < 8 {
                return Err(CliError::usage("need at least 8 cells"));
            }
            let op = UlamOperator::build(&params, cells);
            (1..=lags).map(|lag| psi_mixing_ulam(&op, &ctx, lag, digit_cap)).collect()
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown method {other:?}; use closed-form, quadrature, or ulam"
            )))
        }
    };

    let points: Vec<(usize, f64)> =
        estimates.iter().filter(|e| e.psi_hat > 0.0).map(|e| (e.lag, e.psi_hat)).collect();
    let fit = (points.len() >= 2).then(|| psi_fit(&points));
    let fit_json = fit
        .map(|f| json!({"prefactor": f.prefactor, "rho": f.rho, "r_squared": f.r_squared}))
        .unwrap_or(Value::Null);
    let lag_rows: Vec<Value> = estimates
        .iter()
        .map(|e| json!({"lag": e.lag, "psi_hat": e.psi_hat, "pairs_evaluated": e.pairs_evaluated}))
        .collect();
    let json = json!({
        "m": m,
        "formula_id": "psi_mixing",
        "method": method,
        "digit_cap": digit_cap,
        "estimates": lag_rows,
        "fit": fit_json,
    });
    let rows = estimates
        .iter()
        .map(|e| {
            vec![
                m.to_string(),
                "psi_mixing".into(),
                method.clone(),
                e.lag.to_string(),
                num(e.psi_hat),
            ]
        })
        .collect();
    Ok(CommandOutput {
        json,
        csv: Csv { header: vec!["m", "formula_id", "method", "lag", "psi_hat"], rows },
    })
}

fn build_experiment_config(
    a: ExperimentArgs,
    cfg: &FileConfig,
) -> Result<ExperimentConfig, CliError> {
    let m = cfg.required::<u64>(a.m, "m")?;
    let horizon = cfg.or_default(a.n, "n", 10_000)?;
    let trials = cfg.or_default(a.trials, "trials", 20)?;
    let seed = cfg.or_default(a.seed, "seed", 42)?;
    let mut config = ExperimentConfig::standard(m, horizon, trials, seed);
    if let Some(text) = cfg.opt(a.epsilons, "epsilons")? {
        config.epsilons = parse_list(&text)?;
    }
    if let Some(text) = cfg.opt(a.checkpoints, "checkpoints")? {
        let mut checkpoints = parse_list::<usize>(&text)?;
        checkpoints.sort_unstable();
        checkpoints.dedup();
        config.checkpoints = checkpoints;
    }
    if let Some(text) = cfg.opt(a.norming, "norming")? {
        config.norming = parse_norming(&text)?;
    }
    config.exceedance_multiplier =
        cfg.or_default(a.multiplier, "multiplier", config.exceedance_multiplier)?;
    config.grid_per_decade =
        cfg.or_default(a.grid_per_decade, "grid-per-decade", config.grid_per_decade)?;
    Ok(config)
}

/// Trial-by-checkpoint rows common to the ensemble experiments; ratios are
/// taken against the configured norming.
fn ensemble_output(
    ensemble: &DigitEnsemble,
    formula_id: &'static str,
    report: Value,
) -> Result<CommandOutput, CliError> {
    let config = &ensemble.config;
    let mut rows = Vec::new();
    for record in &ensemble.records {
        for stats in &record.checkpoints {
            rows.push(vec![
                config.m.to_string(),
                formula_id.into(),
                record.trial.to_string(),
                stats.n.to_string(),
                stats.digit_sum.to_string(),
                stats.max_digit.to_string(),
                stats.trimmed_sum.to_string(),
                stats.truncation_level.to_string(),
                stats.truncated_sum.to_string(),
                stats.remainder.to_string(),
                stats.exceedance_count.to_string(),
                num(stats.sum_ratio(&config.norming)),
                num(stats.trimmed_ratio(&config.norming)),
            ]);
        }
    }
    let json = json!({
        "m": config.m,
        "formula_id": formula_id,
        "config": serde_json::to_value(config)?,
        "report": report,
    });
    Ok(CommandOutput {
        json,
        csv: Csv {
            header: vec![
                "m",
                "formula_id",
                "trial",
                "n",
                "digit_sum",
                "max_digit",
                "trimmed_sum",
                "truncation_level",
                "truncated_sum",
                "remainder",
                "exceedance_count",
                "sum_ratio",
                "trimmed_ratio",
            ],
            rows,
        },
    })
}

fn experiment_cmd(sub: ExperimentCommand, cfg: &FileConfig) -> Result<CommandOutput, CliError> {
    match sub {
        ExperimentCommand::Khinchine(a) => {
            let config = build_experiment_config(a, cfg)?;
            let ensemble = DigitEnsemble::generate(&config)?;
            let report = khinchine_experiment(&ensemble)?;
            ensemble_output(&ensemble, "khinchine_weak_law", serde_json::to_value(report)?)
        }
        ExperimentCommand::DiamondVaaler(a) => {
            let config = build_experiment_config(a, cfg)?;
            let ensemble = DigitEnsemble::generate(&config)?;
            let report = diamond_vaaler_experiment(&ensemble)?;
            ensemble_output(&ensemble, "trimmed_sums", serde_json::to_value(report)?)
        }
        ExperimentCommand::MaxDigit(a) => {
            let config = build_experiment_config(a, cfg)?;
            let ensemble = DigitEnsemble::generate(&config)?;
            let report = max_digit_experiment(&ensemble)?;
            ensemble_output(&ensemble, "max_digit_negligibility", serde_json::to_value(report)?)
        }
        ExperimentCommand::Philipp(a) => {
            let config = build_experiment_config(a, cfg)?;
            let report = philipp_experiment(&config)?;
            let rows = report
                .checkpoints
                .iter()
                .map(|c| {
                    vec![
                        config.m.to_string(),
                        "strong_law_dichotomy".into(),
                        c.n.to_string(),
                        num(c.median_ratio),
                        num(c.max_ratio),
                        num(c.mean_exceedance_count),
                        num(c.predicted_exceedances),
                    ]
                })
                .collect();
            let json = json!({
                "m": config.m,
                "formula_id": "strong_law_dichotomy",
                "config": serde_json::to_value(&config)?,
                "report": serde_json::to_value(&report)?,
            });
            Ok(CommandOutput {
                json,
                csv: Csv {
                    header: vec![
                        "m",
                        "formula_id",
                        "n",
                        "median_ratio",
                        "max_ratio",
                        "mean_exceedance_count",
                        "predicted_exceedances",
                    ],
                    rows,
                },
            })
        }
    }
}
