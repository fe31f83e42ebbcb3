//! Small statistics toolkit: least squares, percentile bootstrap, sign test.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least-squares slope of `ys` against `xs`. Zero when `xs` has no spread.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    sxy / sxx
}

/// Slope of `ys` against their index.
pub fn index_slope(ys: &[f64]) -> f64 {
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    ls_slope(&xs, ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn disjoint(&self, other: &Interval) -> bool {
        self.high < other.low || other.high < self.low
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

/// Percentile of a sorted slice (linear interpolation).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap over `n` items: `stat` receives resampled indices.
/// Returns the sorted replicate values.
pub fn bootstrap<R, F>(n: usize, resamples: usize, rng: &mut R, mut stat: F) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> f64,
{
    let mut idx = vec![0usize; n];
    let mut reps: Vec<f64> = (0..resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.gen_range(0..n);
            }
            stat(&idx)
        })
        .collect();
    reps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    reps
}

/// Central `level` interval from sorted bootstrap replicates.
pub fn percentile_interval(sorted: &[f64], level: f64) -> Interval {
    let tail = (1.0 - level) / 2.0;
    Interval {
        low: percentile_sorted(sorted, tail),
        high: percentile_sorted(sorted, 1.0 - tail),
    }
}

pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let mut log_terms = Vec::with_capacity((n - k + 1) as usize);
    for j in k..=n {
        log_terms.push(ln_choose(n, j) - n as f64 * std::f64::consts::LN_2);
    }
    log_terms.iter().map(|l| l.exp()).sum::<f64>().min(1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs where the first series is strictly better.
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// One-sided p-value for "first series better"; ties are dropped.
    pub p_value: f64,
}

/// One-sided paired sign test. `better(a, b)` decides whether `a` beats `b`.
pub fn sign_test<F>(a: &[f64], b: &[f64], better: F) -> SignTest
where
    F: Fn(f64, f64) -> bool,
{
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (&x, &y) in a.iter().zip(b) {
        if better(x, y) {
            wins += 1;
        } else if better(y, x) {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_upper_tail(wins + losses, wins),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn slope_of_line() {
        let ys: Vec<f64> = (0..10).map(|i| 3.0 - 0.5 * i as f64).collect();
        assert!((index_slope(&ys) + 0.5).abs() < 1e-12);
        assert_eq!(ls_slope(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
    }

    #[test]
    fn binomial_tail_values() {
        // Hand-summed: (C(20,15)+...+C(20,20)) / 2^20 = 21700 / 1048576.
        assert!((binomial_upper_tail(20, 15) - 21_700.0 / 1_048_576.0).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(5, 0), 1.0);
        assert_eq!(binomial_upper_tail(5, 6), 0.0);
        assert!((binomial_upper_tail(1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sign_test_counts() {
        let t = sign_test(&[1.0, 2.0, 3.0, 3.0], &[0.0, 3.0, 1.0, 3.0], |x, y| x > y);
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        assert!((t.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_mean_interval_covers_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let mut rng = stream(4, Purpose::Bootstrap, 0, 0);
        let reps = bootstrap(xs.len(), 1000, &mut rng, |idx| {
            idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64
        });
        let ci = percentile_interval(&reps, 0.95);
        assert!(ci.contains(mean(&xs)));
        assert!(ci.width() > 0.0 && ci.width() < 1.0);
    }
}
