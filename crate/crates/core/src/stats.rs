//! Small numeric helpers: compensated sums, moments, quantiles, a local
//! linear smoother.

use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Compensated::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Sample variance with the n - 1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() as f64 - 1.0)
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Quantile of already-sorted data by linear interpolation between order
/// statistics (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
}

impl BoxStats {
    /// Quartiles with Tukey whiskers: the most extreme data within 1.5 IQR.
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let median = quantile_sorted(&v, 0.5);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let lo_whisker = v.iter().copied().find(|x| *x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let hi_whisker = v.iter().rev().copied().find(|x| *x <= q3 + 1.5 * iqr).unwrap_or(q3);
        Some(BoxStats {
            q1,
            median,
            q3,
            lo_whisker,
            hi_whisker,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.q1 <= x && x <= self.q3
    }

    pub fn width(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Local linear regression with tricube weights over the nearest
/// `span * n` points, evaluated at `at`.
pub fn local_linear_smooth(x: &[f64], y: &[f64], span: f64, at: &[f64]) -> Vec<f64> {
    let n = x.len();
    let k = ((span * n as f64).ceil() as usize).clamp(2.min(n), n);
    let mut dist = vec![0.0; n];
    at.iter()
        .map(|&x0| {
            for (d, xi) in dist.iter_mut().zip(x) {
                *d = (xi - x0).abs();
            }
            let mut sorted = dist.clone();
            sorted.sort_by(f64::total_cmp);
            let h = sorted[k - 1].max(f64::MIN_POSITIVE) * 1.000_001;
            let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let u = dist[i] / h;
                if u >= 1.0 {
                    continue;
                }
                let w = (1.0 - u * u * u).powi(3);
                let dx = x[i] - x0;
                sw += w;
                swx += w * dx;
                swy += w * y[i];
                swxx += w * dx * dx;
                swxy += w * dx * y[i];
            }
            let det = sw * swxx - swx * swx;
            if det.abs() <= 1e-12 * sw * swxx.max(f64::MIN_POSITIVE) {
                swy / sw
            } else {
                (swxx * swy - swx * swxy) / det
            }
        })
        .collect()
}

/// Standard normal quantiles at the plotting positions (i - 0.5) / n.
pub fn normal_scores(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| crate::model::standard_normal_quantile((i as f64 - 0.5) / n as f64))
        .collect()
}
