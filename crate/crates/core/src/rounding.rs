//! Rounding strategies for deriving integer weights.
//!
//! `BitShift`, `Rtn`, `Up` and `Down` act element by element. `Adaptive` is a
//! data-free group rounding: it starts from round-to-nearest and then flips
//! the cheapest elements of each kernel group between floor and ceil until
//! the group's accumulated perturbation `Σ(x - q)` is at most one half. This
//! stands in for a Hessian-based rounding objective whose Hessian is
//! approximated by its diagonal plus a per-group sum term.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingStrategy {
    /// Arithmetic right shift, i.e. floor.
    BitShift,
    /// Round half away from zero.
    Rtn,
    Up,
    Down,
    /// Group-sum adaptive rounding. `group_axis: None` treats the whole
    /// tensor as one group; `Some(a)` makes one group per index of axis `a`.
    Adaptive { group_axis: Option<usize> },
}

impl RoundingStrategy {
    pub const ADAPTIVE: RoundingStrategy = RoundingStrategy::Adaptive {
        group_axis: Some(0),
    };

    /// The four element-wise strategies, in census order.
    pub const SCALAR: [RoundingStrategy; 4] = [
        RoundingStrategy::BitShift,
        RoundingStrategy::Rtn,
        RoundingStrategy::Up,
        RoundingStrategy::Down,
    ];

    pub const ALL: [RoundingStrategy; 5] = [
        RoundingStrategy::BitShift,
        RoundingStrategy::Rtn,
        RoundingStrategy::Up,
        RoundingStrategy::Down,
        RoundingStrategy::ADAPTIVE,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RoundingStrategy::BitShift => "bitshift",
            RoundingStrategy::Rtn => "rtn",
            RoundingStrategy::Up => "up",
            RoundingStrategy::Down => "down",
            RoundingStrategy::Adaptive { .. } => "adaptive",
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, RoundingStrategy::Adaptive { .. })
    }

    /// Rounds `value / 2^shift` exactly, in integer arithmetic.
    pub fn round_shifted(&self, value: i64, shift: u32) -> Result<i64> {
        if shift == 0 {
            return Ok(value);
        }
        let floor = value >> shift;
        let rem = value - (floor << shift);
        let ceil = if rem == 0 { floor } else { floor + 1 };
        let half = 1i64 << (shift - 1);
        Ok(match self {
            RoundingStrategy::BitShift | RoundingStrategy::Down => floor,
            RoundingStrategy::Up => ceil,
            RoundingStrategy::Rtn => {
                if rem > half || (rem == half && value > 0) {
                    ceil
                } else {
                    floor
                }
            }
            RoundingStrategy::Adaptive { .. } => {
                return Err(Error::UnsupportedStrategy(
                    "adaptive rounding needs a whole group, not a scalar".into(),
                ))
            }
        })
    }

    pub fn round_float(&self, x: f64) -> Result<i64> {
        Ok(match self {
            RoundingStrategy::BitShift | RoundingStrategy::Down => x.floor() as i64,
            RoundingStrategy::Up => x.ceil() as i64,
            RoundingStrategy::Rtn => x.round() as i64,
            RoundingStrategy::Adaptive { .. } => {
                return Err(Error::UnsupportedStrategy(
                    "adaptive rounding needs a whole group, not a scalar".into(),
                ))
            }
        })
    }
}

impl fmt::Display for RoundingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoundingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bitshift" => Ok(RoundingStrategy::BitShift),
            "rtn" => Ok(RoundingStrategy::Rtn),
            "up" => Ok(RoundingStrategy::Up),
            "down" => Ok(RoundingStrategy::Down),
            "adaptive" => Ok(RoundingStrategy::ADAPTIVE),
            other => Err(Error::UnsupportedStrategy(other.to_string())),
        }
    }
}

/// Rounds every element of a row-major tensor.
pub fn round_tensor(values: &[f64], shape: &[usize], strategy: RoundingStrategy) -> Result<Vec<i64>> {
    match strategy {
        RoundingStrategy::Adaptive { group_axis } => adaptive_round(values, shape, group_axis),
        s => values.iter().map(|&x| s.round_float(x)).collect(),
    }
}

/// Maps each flat index to its group id.
fn group_ids(shape: &[usize], group_axis: Option<usize>, len: usize) -> Result<(Vec<usize>, usize)> {
    match group_axis {
        None => Ok((vec![0; len], 1)),
        Some(axis) => {
            if axis >= shape.len() {
                return Err(Error::InvalidModel(format!(
                    "group axis {axis} out of range for rank {}",
                    shape.len()
                )));
            }
            let stride: usize = shape[axis + 1..].iter().product();
            let dim = shape[axis];
            Ok(((0..len).map(|i| (i / stride.max(1)) % dim.max(1)).collect(), dim.max(1)))
        }
    }
}

/// Group-sum adaptive rounding.
///
/// Every output is the floor or ceil of its input. Within each group the
/// residual `|Σ(x_i - q_i)|` ends up at most 0.5, which is the smallest value
/// reachable by floor/ceil choices up to the half-integer tie.
pub fn adaptive_round(values: &[f64], shape: &[usize], group_axis: Option<usize>) -> Result<Vec<i64>> {
    let expected: usize = shape.iter().product();
    if expected != values.len() {
        return Err(Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected,
            actual: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (ids, groups) = group_ids(shape, group_axis, values.len())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (i, &g) in ids.iter().enumerate() {
        members[g].push(i);
    }

    let mut out: Vec<i64> = values.iter().map(|x| x.round() as i64).collect();
    for idx in &members {
        rebalance_group(values, &mut out, idx);
    }
    Ok(out)
}

fn rebalance_group(values: &[f64], out: &mut [i64], idx: &[usize]) {
    let err: f64 = idx.iter().map(|&i| values[i] - out[i] as f64).sum();
    let flips = err.round() as i64;
    if flips == 0 {
        return;
    }
    let dir = flips.signum();
    // Candidates are non-integral elements rounded away from `dir`.
    let mut cands: Vec<(f64, usize)> = idx
        .iter()
        .filter_map(|&i| {
            let delta = values[i] - out[i] as f64;
            if delta != 0.0 && delta.signum() as i64 == dir {
                Some((1.0 - 2.0 * delta.abs(), i))
            } else {
                None
            }
        })
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in cands.iter().take(flips.unsigned_abs() as usize) {
        out[i] += dir;
    }
}
