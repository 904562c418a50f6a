//! Pearson, Spearman and Kendall tau-b between two equally sized tensors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantizer::FloatTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlations {
    pub pearson: f64,
    pub spearman: f64,
    pub kendall: f64,
}

pub fn correlations(a: &FloatTensor, b: &FloatTensor) -> Result<Correlations> {
    let x: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    correlations_f64(&x, &y)
}

pub fn correlations_f64(x: &[f64], y: &[f64]) -> Result<Correlations> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    Ok(Correlations {
        pearson: pearson(x, y)?,
        spearman: pearson(&ranks(x), &ranks(y))?,
        kendall: kendall_tau_b(x, y)?,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Number of pairs tied within runs of equal values in a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tx = tied_pairs(&xs);
    let tj = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_count(&mut ys, &mut buf);
    let ty = tied_pairs(&ys);

    let n0 = n * (n - 1) / 2;
    if tx == n0 || ty == n0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    let num = n0 as f64 - tx as f64 - ty as f64 + tj as f64 - 2.0 * swaps as f64;
    let den = ((n0 - tx) as f64).sqrt() * ((n0 - ty) as f64).sqrt();
    Ok((num / den).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Quadratic reference: concordant minus discordant over all pairs.
    fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let sx = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
                let sy = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
                match (sx == 0.0, sy == 0.0) {
                    (true, true) => {}
                    (true, false) => tx += 1,
                    (false, true) => ty += 1,
                    _ if sx == sy => c += 1,
                    _ => d += 1,
                }
            }
        }
        (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
    }

    #[test]
    fn identity_and_negation() {
        let v = [0.3, -1.2, 2.5, 0.0, 7.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        for (other, sign) in [(v.to_vec(), 1.0), (neg, -1.0)] {
            let c = correlations_f64(&v, &other).unwrap();
            for r in [c.pearson, c.spearman, c.kendall] {
                assert!((r - sign).abs() < 1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn constant_is_undefined() {
        let v = [1.0, 1.0, 1.0];
        assert!(matches!(correlations_f64(&v, &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(correlations_f64(&[1.0], &[2.0]).is_err());
        assert!(correlations_f64(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn known_values() {
        // two concordant pairs, one pair tied in y
        let x = [1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 3.0];
        let t = kendall_tau_b(&x, &y).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 5.0, 9.0]).unwrap();
        assert!((r - 11.0 / 130f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kendall_matches_quadratic(pairs in prop::collection::vec((0i8..6, 0i8..6), 3..40)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let fast = kendall_tau_b(&x, &y);
            let distinct = |v: &[f64]| v.iter().any(|&a| a != v[0]);
            if distinct(&x) && distinct(&y) {
                prop_assert!((fast.unwrap() - kendall_oracle(&x, &y)).abs() < 1e-12);
            } else {
                prop_assert!(fast.is_err());
            }
        }

        #[test]
        fn spearman_is_pearson_of_ranks(v in prop::collection::vec(-100.0f64..100.0, 3..30)) {
            let w: Vec<f64> = v.iter().map(|x| x * x * x).collect();
            if v.iter().any(|&a| a != v[0]) {
                let c = correlations_f64(&v, &w).unwrap();
                prop_assert!((c.spearman - 1.0).abs() < 1e-12);
                prop_assert!((c.kendall - 1.0).abs() < 1e-12);
            }
        }
    }
}
