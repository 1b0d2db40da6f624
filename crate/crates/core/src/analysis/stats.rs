use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, SCHEMA_VERSION};
use crate::seed::splitmix64;
use crate::sim::{substream, ArrivalSampler, Trajectory};

/// Minimum trajectory length accepted by [`stability_proxy`].
pub const MIN_PROXY_SAMPLES: usize = 10_000;

/// Blocks used for the batch-means standard error of the drift slope.
const BATCHES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schema_version: u32,
    pub samples: usize,
    /// Fraction of samples with an empty network.
    pub empty_fraction: f64,
    /// Mean total over samples in the second half of the time range.
    pub time_avg_total: f64,
    /// Least-squares slope of the total against time.
    pub drift_slope: f64,
    /// Batch-means standard error of the slope.
    pub slope_se: f64,
    pub t_stat: f64,
    /// One-sided p-value against "slope <= 0".
    pub p_increasing: f64,
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx, sxx)
}

/// Empirical stability proxies: empty fraction, late time-average and drift.
///
/// The slope's standard error comes from regressing the means of 20
/// consecutive blocks, which absorbs the strong autocorrelation of queue
/// lengths; the p-value uses Student's t with 18 degrees of freedom.
pub fn stability_proxy(traj: &Trajectory) -> Result<StabilityReport> {
    let n = traj.len();
    if n < MIN_PROXY_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "stability proxies need at least {MIN_PROXY_SAMPLES} samples (got {n})"
        )));
    }
    let x: Vec<f64> = traj.times.iter().map(|&t| t as f64).collect();
    let y: Vec<f64> = traj.totals.iter().map(|&t| t as f64).collect();
    let empty_fraction = traj.totals.iter().filter(|&&t| t == 0).count() as f64 / n as f64;
    let half = x[n - 1] / 2.0;
    let late: Vec<f64> = x
        .iter()
        .zip(&y)
        .filter(|(t, _)| **t >= half)
        .map(|(_, v)| *v)
        .collect();
    let time_avg_total = late.iter().sum::<f64>() / late.len() as f64;
    let (drift_slope, _, _) = ols(&x, &y);

    let (mut bx, mut by) = (Vec::with_capacity(BATCHES), Vec::with_capacity(BATCHES));
    for b in 0..BATCHES {
        let (lo, hi) = (b * n / BATCHES, (b + 1) * n / BATCHES);
        let len = (hi - lo) as f64;
        bx.push(x[lo..hi].iter().sum::<f64>() / len);
        by.push(y[lo..hi].iter().sum::<f64>() / len);
    }
    let (bslope, bint, bsxx) = ols(&bx, &by);
    let sse: f64 = bx
        .iter()
        .zip(&by)
        .map(|(a, b)| (b - bint - bslope * a).powi(2))
        .sum();
    let df = (BATCHES - 2) as f64;
    let slope_se = if bsxx > 0.0 {
        (sse / df / bsxx).sqrt()
    } else {
        0.0
    };
    let (t_stat, p_increasing) = if slope_se > 0.0 {
        let t = drift_slope / slope_se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        (t, 1.0 - dist.cdf(t))
    } else if drift_slope > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(StabilityReport {
        schema_version: SCHEMA_VERSION,
        samples: n,
        empty_fraction,
        time_avg_total,
        drift_slope,
        slope_se,
        t_stat,
        p_increasing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub horizon: u64,
    pub delta: f64,
    pub trials: usize,
    pub passes: usize,
    pub pass_rate: f64,
    /// Mean over trials of `sup_{s <= t <= T} |A(t) - A(s) - rate (t - s)|`.
    pub mean_sup_deviation: f64,
}

/// Monte-Carlo check that the centered arrival counts of `class` stay within
/// `delta * T` over every sub-interval of `[0, T]`.
///
/// Only the arrival streams of `spec` are simulated.
pub fn concentration_test(
    spec: &NetworkSpec,
    class: usize,
    horizon: u64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if horizon == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "horizon and trials must be positive".into(),
        ));
    }
    if class >= spec.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "class index {class} out of range"
        )));
    }
    let rate = spec.arrival_rates()[class];
    let sampler = ArrivalSampler::new(spec);
    let mut buf = Vec::new();
    let mut passes = 0;
    let mut dev_sum = 0.0;
    for trial in 0..trials {
        let mut rng = substream(splitmix64(seed.wrapping_add(trial as u64)), 0);
        let (mut count, mut lo, mut hi) = (0u64, 0.0f64, 0.0f64);
        for t in 1..=horizon {
            buf.clear();
            sampler.sample(&mut rng, &mut buf);
            count += buf.iter().filter(|&&k| k == class).count() as u64;
            let x = count as f64 - rate * t as f64;
            lo = lo.min(x);
            hi = hi.max(x);
        }
        // the largest increment |X(t) - X(s)| over s <= t is the range of X
        let sup = hi - lo;
        dev_sum += sup;
        if sup <= delta * horizon as f64 {
            passes += 1;
        }
    }
    Ok(ConcentrationReport {
        horizon,
        delta,
        trials,
        passes,
        pass_rate: passes as f64 / trials as f64,
        mean_sup_deviation: dev_sum / trials as f64,
    })
}
