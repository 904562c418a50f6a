//! Closed-form storage and switching arithmetic.
//!
//! Everything is kept as exact rationals; rounding to a percentage happens
//! only when presenting.

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nesting::check_split;
use crate::switch::Transition;

pub type Fraction = Ratio<u64>;

/// Storage saved by one nested model over separate INT-n and INT-h models.
///
/// Nested weights take `h + (l + 1) = n + 1` bits per parameter against
/// `n + h` for the pair, so the saving is `1 - (n + 1) / (n + h)`.
pub fn ideal_storage_reduction(n: u8, h: u8) -> Result<Fraction> {
    check_split(n, h)?;
    Ok(Fraction::from_integer(1) - Fraction::new(n as u64 + 1, n as u64 + h as u64))
}

/// Splits a nested disk size `d` into its high and low page-in shares,
/// `h / (n + 1)` and `(l + 1) / (n + 1)` of `d`.
pub fn nest_page_costs(d: u64, n: u8, h: u8) -> Result<(Fraction, Fraction)> {
    check_split(n, h)?;
    if d == 0 {
        return Err(Error::UndefinedRatio("disk size must be positive".into()));
    }
    let denom = n as u64 + 1;
    let l = (n - h) as u64;
    Ok((
        Fraction::new(d * h as u64, denom),
        Fraction::new(d * (l + 1), denom),
    ))
}

/// `1 - nest_total / diverse_total`.
pub fn reduced_overhead(nest: &Transition, diverse: &Transition) -> Result<Fraction> {
    reduced_overhead_bytes(nest.total(), diverse.total())
}

pub fn reduced_overhead_bytes(nest_total: u64, diverse_total: u64) -> Result<Fraction> {
    if diverse_total == 0 {
        return Err(Error::UndefinedRatio("diverse baseline moved no bytes".into()));
    }
    if nest_total > diverse_total {
        // negative savings are not representable in an unsigned ratio
        return Err(Error::UndefinedRatio(format!(
            "nested transition ({nest_total} B) exceeds the baseline ({diverse_total} B)"
        )));
    }
    Ok(Fraction::from_integer(1) - Fraction::new(nest_total, diverse_total))
}

/// Memory estimate for a `k`-bit model from a measured INT8 footprint.
pub fn memory_usage_estimate(u_int8_bytes: u64, k: u8) -> Result<Fraction> {
    if !(1..=8).contains(&k) {
        return Err(Error::InvalidBitwidth(k));
    }
    Ok(Fraction::new(u_int8_bytes * k as u64, 8))
}

pub fn to_f64(r: Fraction) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Percentage rounded half-up to `decimals` places.
pub fn percent(r: Fraction, decimals: u32) -> f64 {
    let scale = 10u64.pow(decimals);
    let scaled = r * Fraction::from_integer(100 * scale);
    let rounded = (scaled + Fraction::new(1, 2)).floor().to_integer();
    rounded as f64 / scale as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub nest_page_in: u64,
    pub nest_page_out: u64,
    pub diverse_page_in: u64,
    pub diverse_page_out: u64,
    pub reduced_fraction: f64,
}

impl OverheadReport {
    pub fn from_transitions(nest: &Transition, diverse: &Transition) -> Result<Self> {
        let r = reduced_overhead(nest, diverse)?;
        Ok(Self {
            nest_page_in: nest.bytes_paged_in,
            nest_page_out: nest.bytes_paged_out,
            diverse_page_in: diverse.bytes_paged_in,
            diverse_page_out: diverse.bytes_paged_out,
            reduced_fraction: to_f64(r),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::switch::Direction;
    use std::time::SystemTime;

    const MB: u64 = 1_000_000;

    fn t(i: u64, o: u64) -> Transition {
        Transition {
            direction: Direction::Upgrade,
            bytes_paged_in: i,
            bytes_paged_out: o,
            timestamp: SystemTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn ideal_reductions() {
        let cases = [((8, 4), 25.0), ((8, 5), 31.0), ((8, 6), 36.0), ((8, 7), 40.0), ((6, 4), 30.0), ((6, 5), 36.0)];
        for ((n, h), want) in cases {
            assert_eq!(percent(ideal_storage_reduction(n, h).unwrap(), 0), want, "INT({n}|{h})");
        }
        assert_eq!(ideal_storage_reduction(6, 5).unwrap(), Fraction::new(4, 11));
        assert_eq!(percent(ideal_storage_reduction(6, 5).unwrap(), 1), 36.4);
    }

    #[test]
    fn reduction_grows_with_h() {
        for n in [6u8, 8] {
            for h in 3..n - 1 {
                assert!(ideal_storage_reduction(n, h + 1).unwrap() > ideal_storage_reduction(n, h).unwrap());
            }
        }
    }

    #[test]
    fn page_cost_shares() {
        let (_, low) = nest_page_costs(134 * MB / 10, 8, 6).unwrap();
        assert!((to_f64(low) / MB as f64 - 4.467).abs() < 1e-3);
        let (_, low) = nest_page_costs(133 * MB / 10, 8, 4).unwrap();
        assert!((to_f64(low) / MB as f64 - 7.389).abs() < 1e-3);
        for n in [6u8, 8] {
            for h in 3..n {
                let d = 12_345_677;
                let (a, b) = nest_page_costs(d, n, h).unwrap();
                assert_eq!(a + b, Fraction::from_integer(d));
            }
        }
        assert!(nest_page_costs(0, 8, 4).is_err());
    }

    #[test]
    fn reduced_overhead_examples() {
        let r = reduced_overhead(&t(45 * MB / 10, 0), &t(113 * MB / 10, 91 * MB / 10)).unwrap();
        assert!((percent(r, 1) - 78.1).abs() <= 0.5);
        let r = reduced_overhead(&t(29 * MB / 10, 0), &t(113 * MB / 10, 101 * MB / 10)).unwrap();
        assert!((percent(r, 1) - 86.6).abs() <= 0.5);
        let same = t(10, 5);
        assert_eq!(reduced_overhead(&same, &same).unwrap(), Fraction::from_integer(0));
        assert!(matches!(reduced_overhead(&same, &t(0, 0)), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn memory_estimates() {
        let vit_l = memory_usage_estimate(6_944 * MB / 10, 3).unwrap();
        assert_eq!(vit_l, Fraction::from_integer(2_604 * MB / 10));
        let deit = memory_usage_estimate(2_519 * MB / 10, 4).unwrap();
        assert_eq!((to_f64(deit) / MB as f64 * 10.0).round() / 10.0, 126.0);
        assert_eq!(memory_usage_estimate(777, 8).unwrap(), Fraction::from_integer(777));
        assert!(memory_usage_estimate(1, 0).is_err());
    }

    #[test]
    fn overhead_report_fields() {
        let r = OverheadReport::from_transitions(&t(10, 0), &t(30, 10)).unwrap();
        assert_eq!((r.nest_page_in, r.diverse_page_out), (10, 10));
        assert!((r.reduced_fraction - 0.75).abs() < 1e-12);
    }
}
