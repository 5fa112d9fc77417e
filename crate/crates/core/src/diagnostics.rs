//! Convergence diagnostics: residual series, power-law rate fits and
//! comparison of two runs.

use alloc::vec::Vec;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::problem::InverseProblem;

/// Minimum number of samples in a fitting window.
pub const MIN_FIT_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(alloc::format!(
                "{} times for {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.times.last()?, *self.values.last()?))
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn at(&self, t: f64) -> Option<f64> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let k = self.times.partition_point(|&s| s < t);
        if k < n && self.times[k] == t {
            return Some(self.values[k]);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Some(self.values[k - 1] * (1.0 - w) + self.values[k] * w)
    }
}

/// Mean regularised potential `(1/N) Σ Φ^reg(u^(j)(t))` at each stored time.
pub fn mean_residual(traj: &Trajectory, p: &InverseProblem) -> Result<TimeSeries> {
    let mut times = Vec::with_capacity(traj.samples.len());
    let mut values = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        times.push(s.t());
        values.push(ensemble_residual(&s.ensemble, p)?);
    }
    TimeSeries::new(times, values)
}

/// Ensemble-averaged `Φ^reg` of a single snapshot.
pub fn ensemble_residual(e: &Ensemble, p: &InverseProblem) -> Result<f64> {
    let inputs: Vec<&[f64]> = e.particles().iter().map(|u| &**u).collect();
    let outputs = p.forward().evaluate_batch(&inputs);
    let mut total = 0.0;
    for (u, g) in inputs.iter().zip(outputs) {
        let g = g.map_err(|source| Error::Forward {
            t: e.time(),
            source,
        })?;
        total += p.potential_from_output(u, &g)?;
    }
    Ok(total / e.len() as f64)
}

/// `value ≈ C t^{-rate}` fitted by least squares in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fits a power law to the samples with `t_lo <= t <= t_hi`.
pub fn fit_power_law(series: &TimeSeries, window: (f64, f64)) -> Result<RateFit> {
    let (lo, hi) = window;
    let picked: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(t, v)| (*t, *v))
        .collect();
    if picked.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(alloc::format!(
            "window [{lo}, {hi}] holds {} samples, at least {MIN_FIT_SAMPLES} are needed",
            picked.len()
        )));
    }
    let bad: Vec<f64> = picked
        .iter()
        .filter(|(t, v)| !(*t > 0.0) || !(*v > 0.0))
        .map(|(t, _)| *t)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Fit(alloc::format!(
            "nonpositive samples at t = {bad:?}"
        )));
    }
    let xs: Vec<f64> = picked.iter().map(|(t, _)| libm::log(*t)).collect();
    let ys: Vec<f64> = picked.iter().map(|(_, v)| libm::log(*v)).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("window spans a single time".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    Ok(RateFit {
        rate: -slope,
        prefactor: libm::exp(intercept),
        r_squared,
        samples: picked.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunComparison {
    /// `b(t_end) / a(t_end)` at the end of the common support.
    pub terminal_ratio: f64,
    /// `max |ln b - ln a|` over the later half (in log time) of the common support.
    pub max_tail_log_distance: f64,
    /// Logarithmic grid on which the two series were compared.
    pub grid: Vec<f64>,
}

/// Compares two positive series on their common support.
pub fn compare_runs(a: &TimeSeries, b: &TimeSeries) -> Result<RunComparison> {
    let first_positive = |s: &TimeSeries| s.times.iter().copied().find(|t| *t > 0.0);
    let (Some(a0), Some(b0)) = (first_positive(a), first_positive(b)) else {
        return Err(Error::InvalidInput("series have no positive times".into()));
    };
    let start = a0.max(b0);
    let end = a
        .times
        .last()
        .copied()
        .unwrap_or(0.0)
        .min(b.times.last().copied().unwrap_or(0.0));
    if !(end > start) {
        return Err(Error::InvalidInput(alloc::format!(
            "series supports are disjoint: [{start}, {end}]"
        )));
    }
    let points = 64;
    let (ls, le) = (libm::log(start), libm::log(end));
    let grid: Vec<f64> = (0..points)
        .map(|k| libm::exp(ls + (le - ls) * k as f64 / (points - 1) as f64))
        .map(|t| t.clamp(start, end))
        .collect();
    let mut worst: f64 = 0.0;
    let mut terminal = f64::NAN;
    for (k, &t) in grid.iter().enumerate() {
        let (va, vb) = (a.at(t).unwrap(), b.at(t).unwrap());
        if !(va > 0.0) || !(vb > 0.0) {
            return Err(Error::InvalidInput(alloc::format!(
                "nonpositive value at t = {t}"
            )));
        }
        if k >= points / 2 {
            worst = worst.max((libm::log(vb) - libm::log(va)).abs());
        }
        terminal = vb / va;
    }
    Ok(RunComparison {
        terminal_ratio: terminal,
        max_tail_log_distance: worst,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn power_series(c: f64, rate: f64) -> TimeSeries {
        let times: Vec<f64> = (0..40).map(|k| libm::pow(10.0, k as f64 / 10.0)).collect();
        let values = times.iter().map(|t| c * libm::pow(*t, -rate)).collect();
        TimeSeries::new(times, values).unwrap()
    }

    #[test]
    fn recovers_exact_power_law() {
        let fit = fit_power_law(&power_series(3.0, 0.5), (1.0, 1e4)).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-12);
        assert!((fit.prefactor - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_window_is_rejected() {
        assert!(matches!(
            fit_power_law(&power_series(1.0, 1.0), (1.0, 2.0)),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn nonpositive_values_are_rejected() {
        let mut s = power_series(1.0, 1.0);
        s.values[12] = 0.0;
        assert!(matches!(fit_power_law(&s, (1.0, 1e4)), Err(Error::Fit(_))));
    }

    #[test]
    fn comparison_of_identical_runs() {
        let s = power_series(2.0, 1.0);
        let c = compare_runs(&s, &s).unwrap();
        assert!((c.terminal_ratio - 1.0).abs() < 1e-12);
        assert!(c.max_tail_log_distance < 1e-12);
    }

    #[test]
    fn disjoint_supports_are_rejected() {
        let a = TimeSeries::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let b = TimeSeries::new(vec![3.0, 4.0], vec![1.0, 1.0]).unwrap();
        assert!(compare_runs(&a, &b).is_err());
    }
}
