//! Named terminal conditions.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Terminal {
    /// `exp(-(x - center)^2 / (2 width^2))`.
    GaussianBump { center: f64, width: f64 },
    /// `max(x - strike, 0)`.
    CallPayoff { strike: f64 },
    /// 1 on `[a, b)`, 0 elsewhere.
    Indicator { a: f64, b: f64 },
    Constant { value: f64 },
    /// Piecewise-linear through `(x, value)` points sorted by `x`; 0 outside.
    Samples { points: Vec<(f64, f64)> },
}

impl Terminal {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Terminal::GaussianBump { center, width } => {
                let z = (x - center) / width;
                (-0.5 * z * z).exp()
            }
            Terminal::CallPayoff { strike } => (x - strike).max(0.0),
            Terminal::Indicator { a, b } => {
                if x >= *a && x < *b {
                    1.0
                } else {
                    0.0
                }
            }
            Terminal::Constant { value } => *value,
            Terminal::Samples { points } => {
                let i = points.partition_point(|p| p.0 <= x);
                if i == 0 || i == points.len() && x > points[i - 1].0 {
                    return 0.0;
                }
                if i == points.len() {
                    return points[i - 1].1;
                }
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    pub fn from_points(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Parse("no samples".into()));
        }
        if points.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
            return Err(Error::Parse("samples must be finite".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse("duplicate x in samples".into()));
        }
        Ok(Terminal::Samples { points })
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::GaussianBump { center, width } => write!(f, "gaussian_bump({center},{width})"),
            Terminal::CallPayoff { strike } => write!(f, "call_payoff({strike})"),
            Terminal::Indicator { a, b } => write!(f, "indicator({a},{b})"),
            Terminal::Constant { value } => write!(f, "constant({value})"),
            Terminal::Samples { points } => write!(f, "samples({} points)", points.len()),
        }
    }
}

/// Parses `gaussian_bump(c, w)`, `gaussian_bump` (center 0, width 1), `call_payoff(K)`,
/// `indicator(a, b)` and `constant(v)`.
impl FromStr for Terminal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parse(format!("missing ')' in {s:?}")))?;
                (&s[..open], &close[open + 1..])
            }
            None => (s, ""),
        };
        let args: Vec<f64> = args
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(|a| a.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {a:?} in {s:?}"))))
            .collect::<Result<_>>()?;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("{name} takes {n} arguments, got {}", args.len())))
            }
        };
        match name.trim() {
            "gaussian_bump" if args.is_empty() => Ok(Terminal::GaussianBump { center: 0.0, width: 1.0 }),
            "gaussian_bump" => {
                arity(2)?;
                if !(args[1] > 0.0) {
                    return Err(Error::Parse("bump width must be > 0".into()));
                }
                Ok(Terminal::GaussianBump { center: args[0], width: args[1] })
            }
            "call_payoff" => {
                arity(1)?;
                Ok(Terminal::CallPayoff { strike: args[0] })
            }
            "indicator" => {
                arity(2)?;
                Ok(Terminal::Indicator { a: args[0], b: args[1] })
            }
            "constant" => {
                arity(1)?;
                Ok(Terminal::Constant { value: args[0] })
            }
            other => Err(Error::Parse(format!(
                "unknown terminal {other:?}; expected gaussian_bump, call_payoff, indicator or constant"
            ))),
        }
    }
}
