//! Flag-value parsing and the key=value config file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use theta_core::expansion::{Mode, Point};
use theta_core::montecarlo::NormingSequence;
use theta_core::qfield::{parse_rational, QuadNumber};

use crate::CliError;

/// Values loaded from --config. A config entry fills in for any flag the
/// command line leaves unset; an explicit flag always wins. Keys are the
/// long flag names without the leading dashes, one `key = value` pair per
/// line, with `#` starting a comment.
pub struct FileConfig(HashMap<String, String>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::new("io", format!("cannot read config {}: {e}", path.display()))
            })?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::new(
                        "config",
                        format!("{}:{}: expected key=value", path.display(), idx + 1),
                    ));
                };
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self(map))
    }

    /// The flag value when given, else the config entry under `key`.
    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::new("config", format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    pub fn or_default<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.opt(flag, key)?
            .ok_or_else(|| CliError::usage(format!("missing required value for --{key}")))
    }
}

/// Comma-separated values, whitespace-tolerant.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .map(|piece| {
            piece
                .parse::<T>()
                .map_err(|_| CliError::usage(format!("cannot parse list entry {piece:?}")))
        })
        .collect()
}

/// A starting point as read from --x: exact when written as a rational or
/// a field element, floating when written as a decimal.
pub enum InputPoint {
    Exact(QuadNumber),
    Decimal(f64),
}

impl InputPoint {
    pub fn into_point(self) -> Point {
        match self {
            InputPoint::Exact(q) => Point::Exact(q),
            InputPoint::Decimal(v) => Point::Double(v),
        }
    }
}

/// Accepts `p/q` rationals, `a+b sqrt(m)` field elements (`sqrt` or the
/// radical sign), and plain decimals. A decimal has no exact field
/// representation, so it selects floating arithmetic unless a mode that
/// re-certifies it is requested.
pub fn parse_point(text: &str, m: u64) -> Result<InputPoint, CliError> {
    let trimmed = text.trim();
    if let Some(r) = parse_rational(trimmed) {
        return Ok(InputPoint::Exact(QuadNumber::from_rational(r, m)?));
    }
    if trimmed.contains('√') || trimmed.contains("sqrt") {
        return Ok(InputPoint::Exact(QuadNumber::parse(trimmed, Some(m))?));
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(InputPoint::Decimal(v)),
        _ => Err(CliError::new("input", format!("cannot parse point {trimmed:?}"))),
    }
}

/// Mode selection: `exact`, `double`, `interval`, or
/// `interval:START_BITS:MAX_BITS`. Defaults to exact arithmetic for exact
/// inputs and doubles otherwise.
pub fn parse_mode(text: Option<&str>, point: &InputPoint) -> Result<Mode, CliError> {
    let Some(text) = text else {
        return Ok(match point {
            InputPoint::Exact(_) => Mode::Exact,
            InputPoint::Decimal(_) => Mode::Double,
        });
    };
    match text {
        "exact" => match point {
            InputPoint::Exact(_) => Ok(Mode::Exact),
            InputPoint::Decimal(_) => Err(CliError::new(
                "input",
                "exact mode needs an exact starting point; write x as p/q or a+b*sqrt(m)",
            )),
        },
        "double" => Ok(Mode::Double),
        "interval" => Ok(Mode::interval_default()),
        other => {
            let Some(rest) = other.strip_prefix("interval:") else {
                return Err(CliError::usage(format!(
                    "unknown mode {other:?}; use exact, double, or interval[:START:MAX]"
                )));
            };
            let Some((start, max)) = rest.split_once(':') else {
                return Err(CliError::usage("interval mode takes interval:START_BITS:MAX_BITS"));
            };
            let start_precision: u64 = start
                .parse()
                .map_err(|_| CliError::usage(format!("bad interval start precision {start:?}")))?;
            let max_precision: u64 = max
                .parse()
                .map_err(|_| CliError::usage(format!("bad interval max precision {max:?}")))?;
            if start_precision < 16 || max_precision < start_precision {
                return Err(CliError::usage("interval precisions need 16 <= start <= max"));
            }
            Ok(Mode::Interval { start_precision, max_precision })
        }
    }
}

/// Norming families: `n_log_n`, `n_log_n_pow:P` for n (log n)^P, and
/// `n_pow:P` for n^P.
pub fn parse_norming(text: &str) -> Result<NormingSequence, CliError> {
    let (family, param) = match text.split_once(':') {
        Some((f, p)) => (f, Some(p)),
        None => (text, None),
    };
    let parse_p = |raw: Option<&str>| -> Result<f64, CliError> {
        let raw = raw.ok_or_else(|| {
            CliError::usage(format!("norming family {family:?} needs a :P parameter"))
        })?;
        raw.parse()
            .map_err(|_| CliError::usage(format!("cannot parse norming parameter {raw:?}")))
    };
    match family {
        "n_log_n" if param.is_none() => Ok(NormingSequence::NLogN),
        "n_log_n_pow" => Ok(NormingSequence::NLogNPow { p: parse_p(param)? }),
        "n_pow" => Ok(NormingSequence::NPow { p: parse_p(param)? }),
        _ => Err(CliError::usage(format!(
            "unknown norming {text:?}; use n_log_n, n_log_n_pow:P, or n_pow:P"
        ))),
    }
}
