//! Shared statistical helpers: compensated sums, running moments, batch-means
//! standard errors, autocovariance truncation, least-squares and geometric
//! fits, Kolmogorov-Smirnov distances, quantiles, and the gamma function.

use crate::error::{Error, Result};
use serde::Serialize;

/// Neumaier compensated sum. Keeps a separate correction term so that adding
/// small and huge terms in any order loses no more than one ulp overall.
pub fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    neumaier_sum(xs) / xs.len() as f64
}

/// Streaming version of the compensated sum, for accumulators that cannot
/// hold all terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Welford accumulator for mean and sample variance in one pass.
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean, valid for independent entries.
    pub fn se(&self) -> f64 {
        self.sd() / (self.n as f64).sqrt()
    }
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let mut acc = RunningMoments::new();
    for &x in xs {
        acc.push(x);
    }
    acc.variance()
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchMeans {
    pub mean: f64,
    pub se: f64,
    pub batches: usize,
    pub batch_len: usize,
}

/// Mean with a batch-means standard error, the default error bar for
/// correlated series. Points that do not fill the last batch are dropped.
pub fn batch_means(xs: &[f64], n_batches: usize) -> Result<BatchMeans> {
    let batch_len = xs.len() / n_batches.max(1);
    if n_batches < 2 || batch_len == 0 {
        return Err(Error::InsufficientSamples(format!(
            "{} points cannot fill {} batches",
            xs.len(),
            n_batches
        )));
    }
    let mut acc = RunningMoments::new();
    for b in 0..n_batches {
        acc.push(mean(&xs[b * batch_len..(b + 1) * batch_len]));
    }
    Ok(BatchMeans {
        mean: acc.mean(),
        se: acc.se(),
        batches: n_batches,
        batch_len,
    })
}

/// Biased (1/n) autocovariance at the given lag, with the mean passed in so a
/// caller scanning many lags computes it once.
pub fn autocovariance(xs: &[f64], xbar: f64, lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (xs[t] - xbar) * (xs[t + lag] - xbar);
    }
    acc / n as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct LongRunVariance {
    /// gamma_0 + 2 * sum of truncated-lag autocovariances.
    pub var: f64,
    pub gamma0: f64,
    pub lags_used: usize,
}

/// Long-run variance of a stationary series by the initial-positive-sequence
/// truncation: lag autocovariances are summed in consecutive pairs and the sum
/// stops at the first non-positive pair. A series whose pair sums are still a
/// large fraction of the first pair at `max_lag` is reported as not decaying.
pub fn long_run_variance(xs: &[f64], max_lag: usize) -> Result<LongRunVariance> {
    let n = xs.len();
    if n < 8 {
        return Err(Error::InsufficientSamples(format!(
            "{n} points for a long-run variance"
        )));
    }
    let max_lag = max_lag.min(n / 4).max(1);
    let xbar = mean(xs);
    let gamma0 = autocovariance(xs, xbar, 0);
    if gamma0 <= 0.0 {
        return Err(Error::InsufficientSamples(
            "series is constant; long-run variance is zero".into(),
        ));
    }
    let pair0 = gamma0 + autocovariance(xs, xbar, 1);
    let mut total = -gamma0 + 2.0 * pair0.max(0.0);
    let mut lags_used = 1;
    let mut m = 1;
    loop {
        let lo = 2 * m;
        if lo + 1 > max_lag {
            let last = autocovariance(xs, xbar, lo - 2) + autocovariance(xs, xbar, lo - 1);
            if last > 0.25 * pair0 {
                return Err(Error::SeriesNotDecaying(format!(
                    "pair sum at lag {lo} is still {:.2}x the lag-0 pair",
                    last / pair0
                )));
            }
            break;
        }
        let pair = autocovariance(xs, xbar, lo) + autocovariance(xs, xbar, lo + 1);
        if pair <= 0.0 {
            break;
        }
        total += 2.0 * pair;
        lags_used = lo + 1;
        m += 1;
    }
    Ok(LongRunVariance {
        var: total.max(0.0),
        gamma0,
        lags_used,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares for y = intercept + slope * x.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<FitLine> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "fit over {} abscissae and {} ordinates",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientSamples("fewer than 2 fit points".into()));
    }
    let xbar = mean(x);
    let ybar = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for k in 0..n {
        let dx = x[k] - xbar;
        let dy = y[k] - ybar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientSamples("degenerate abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r2 = if syy > 0.0 {
        1.0 - ss_res / syy
    } else {
        // flat data fit by a flat line
        1.0
    };
    Ok(FitLine {
        slope,
        intercept,
        r2,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeometricFit {
    /// Per-step ratio, exp(slope of the log fit).
    pub rate: f64,
    /// Fitted value at index 0.
    pub amplitude: f64,
    pub r2: f64,
    /// Points actually fitted (prefix above the floor).
    pub window: usize,
}

/// Fit d_k ~ amplitude * rate^k on the longest prefix staying strictly above
/// `floor`. Exactly coalesced or noise-floor tails would otherwise poison the
/// log fit, so they are excluded by construction.
pub fn fit_geometric(d: &[f64], floor: f64) -> Result<GeometricFit> {
    let window = d.iter().take_while(|&&v| v > floor).count();
    if window < 3 {
        return Err(Error::InsufficientSamples(format!(
            "only {window} points above the floor {floor}"
        )));
    }
    let xs: Vec<f64> = (0..window).map(|k| k as f64).collect();
    let ys: Vec<f64> = d[..window].iter().map(|v| v.ln()).collect();
    let line = fit_line(&xs, &ys)?;
    Ok(GeometricFit {
        rate: line.slope.exp(),
        amplitude: line.intercept.exp(),
        r2: line.r2,
        window,
    })
}

/// One-sample Kolmogorov-Smirnov distance against a reference cdf. Input must
/// be sorted ascending.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (k, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - k as f64 / n).max((k + 1) as f64 / n - f);
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 4 || b.len() < 4 {
        return Err(Error::InsufficientSamples(
            "two-sample comparison needs at least 4 points a side".into(),
        ));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|u, v| u.total_cmp(v));
    sb.sort_by(|u, v| u.total_cmp(v));
    let (na, nb) = (sa.len(), sb.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut d = 0.0f64;
    while ia < na && ib < nb {
        let xa = sa[ia];
        let xb = sb[ib];
        if xa <= xb {
            ia += 1;
        }
        if xb <= xa {
            ib += 1;
        }
        let fa = ia as f64 / na as f64;
        let fb = ib as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    Ok((d, ks_pvalue(d, n_eff)))
}

/// Asymptotic Kolmogorov-Smirnov p-value with Stephens' finite-n correction.
pub fn ks_pvalue(d: f64, n_eff: f64) -> f64 {
    let sn = n_eff.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0f64;
    let mut sign = 1.0f64;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        p += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Quantile by linear interpolation of order statistics (the same convention
/// as numpy's default). Input must be sorted ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gamma function by the Lanczos approximation (g = 7, 9 coefficients),
/// accurate to about 1e-13 over the range used here.
pub fn gamma_fn(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let z = x - 1.0;
        let mut acc = C[0];
        for (i, &c) in C.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + G + 0.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_handles_cancellation() {
        assert_eq!(neumaier_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(neumaier_sum(&[]), 0.0);
    }

    #[test]
    fn welford_matches_hand_values() {
        let mut acc = RunningMoments::new();
        for x in [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0] {
            acc.push(x);
        }
        assert_eq!(acc.mean(), 5.0);
        // sum of squared deviations = 32, n-1 = 7
        assert!((acc.variance() - 32.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_on_blocks() {
        // two batches [1,3] and [5,7]: batch means 2 and 6
        let r = batch_means(&[1.0, 3.0, 5.0, 7.0], 2).unwrap();
        assert_eq!(r.mean, 4.0);
        // sd of {2,6} = sqrt(8), se = sqrt(8)/sqrt(2) = 2
        assert!((r.se - 2.0).abs() < 1e-12);
        assert!(batch_means(&[1.0], 2).is_err());
    }

    #[test]
    fn autocovariance_alternating() {
        let xs = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        assert!((autocovariance(&xs, 0.0, 0) - 1.0).abs() < 1e-15);
        // lag 1: 5 products of -1, divided by 6
        assert!((autocovariance(&xs, 0.0, 1) + 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn long_run_variance_near_gamma0_for_white_noise() {
        use rand::Rng;
        let mut rng = crate::sampler::SeedStream::new(123).rng(0);
        let xs: Vec<f64> = (0..4096).map(|_| rng.gen::<f64>() - 0.5).collect();
        let lrv = long_run_variance(&xs, 200).unwrap();
        assert!((lrv.gamma0 - 1.0 / 12.0).abs() < 4e-3);
        assert!((lrv.var - lrv.gamma0).abs() < 0.15 * lrv.gamma0);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_fit_skips_collapsed_tail() {
        let d = [8.0, 4.0, 2.0, 1.0, 0.5, 0.0, 0.0];
        let f = fit_geometric(&d, 0.0).unwrap();
        assert_eq!(f.window, 5);
        assert!((f.rate - 0.5).abs() < 1e-12);
        assert!((f.amplitude - 8.0).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_distance_of_centered_grid() {
        let n = 100usize;
        let xs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_pvalue_known_point() {
        // 2 * sum (-1)^{j-1} exp(-2 j^2) at lambda = 1
        let q = {
            let sn = 1.0e8f64.sqrt();
            let d = 1.0 / (sn + 0.12 + 0.11 / sn);
            ks_pvalue(d, 1.0e8)
        };
        assert!((q - 0.269_999_67).abs() < 1e-6);
    }

    #[test]
    fn two_sample_identical_is_insignificant() {
        let a: Vec<f64> = (0..64).map(|k| k as f64).collect();
        let (d, p) = ks_two_sample(&a, &a).unwrap();
        assert!(d <= 1.0 / 64.0 + 1e-12);
        assert!(p > 0.99);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_known_values() {
        assert!((gamma_fn(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gamma_fn(5.0) - 24.0).abs() < 1e-10);
        assert!((gamma_fn(4.0) - 6.0).abs() < 1e-11);
        assert!((gamma_fn(3.5) - 1.875 * std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }
}
