//! Dormand–Prince 5(4) with FSAL and the standard 4th-order dense output.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Error coefficients: 5th-order weights minus embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

/// New right-hand-side evaluations per attempted step (stages 2..=7).
pub const STAGES_PER_STEP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            min_step: 1e-12,
            max_step: f64::MAX,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol >= 0.0
            && self.min_step > 0.0
            && self.max_step >= self.min_step;
        if !ok {
            return Err(Error::Config(alloc::format!(
                "invalid integrator tolerances {self:?}"
            )));
        }
        Ok(())
    }
}

/// Statistics of one interval integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_calls: usize,
}

impl core::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rhs_calls += o.rhs_calls;
    }
}

/// Outcome of [`integrate_interval`].
#[derive(Debug, Clone)]
pub struct IntervalOutcome {
    pub y: Vec<f64>,
    /// Step size proposed for continuing past the interval end.
    pub next_step: f64,
    pub stats: StepStats,
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], ctl: &StepControl) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = ctl.abs_tol + ctl.rel_tol * a.abs().max(b.abs());
            let r = e / sc;
            r * r
        })
        .sum();
    libm::sqrt(sum / n)
}

/// Integrates `y' = f(t, y)` over `[t0, t1]`.
///
/// `f` writes the derivative into its last argument. `samples` must be
/// sorted; each one inside `[t0, t1]` is reported through `on_sample` using
/// the dense-output interpolant of the step covering it. `initial_step` of
/// `None` selects a starting step from the local derivative scale.
pub fn integrate_interval<F, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    initial_step: Option<f64>,
    ctl: &StepControl,
    samples: &[f64],
    mut on_sample: S,
) -> Result<IntervalOutcome>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    S: FnMut(f64, &[f64]) -> Result<()>,
{
    ctl.validate()?;
    let n = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut sample_idx = samples.partition_point(|&s| s < t0);

    let mut k1 = vec![0.0; n];
    f(t, &y, &mut k1)?;
    stats.rhs_calls += 1;

    while sample_idx < samples.len() && samples[sample_idx] <= t0 {
        on_sample(samples[sample_idx], &y)?;
        sample_idx += 1;
    }
    if t1 <= t0 {
        return Ok(IntervalOutcome {
            y,
            next_step: initial_step.unwrap_or(ctl.max_step),
            stats,
        });
    }

    let mut h = match initial_step {
        Some(h) => h,
        None => {
            let d0 = error_norm(&y, &vec![0.0; n], &y, ctl).max(1e-5);
            let d1 = error_norm(&k1, &vec![0.0; n], &y, ctl).max(1e-5);
            0.01 * d0 / d1
        }
    }
    .clamp(ctl.min_step, ctl.max_step);

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut ys = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    loop {
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        let h_step = if last { remaining } else { h };

        axpy(&mut ys, &y, h_step, &[(A21, &k1)]);
        f(t + C2 * h_step, &ys, &mut k2)?;
        axpy(&mut ys, &y, h_step, &[(A31, &k1), (A32, &k2)]);
        f(t + C3 * h_step, &ys, &mut k3)?;
        axpy(&mut ys, &y, h_step, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(t + C4 * h_step, &ys, &mut k4)?;
        axpy(
            &mut ys,
            &y,
            h_step,
            &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        );
        f(t + C5 * h_step, &ys, &mut k5)?;
        axpy(
            &mut ys,
            &y,
            h_step,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        f(t + h_step, &ys, &mut k6)?;
        axpy(
            &mut y_new,
            &y,
            h_step,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let t_new = if last { t1 } else { t + h_step };
        f(t_new, &y_new, &mut k7)?;
        stats.rhs_calls += STAGES_PER_STEP;

        for i in 0..n {
            err[i] = h_step
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let en = error_norm(&err, &y, &y_new, ctl);
        let en_finite = if en.is_finite() { en } else { f64::INFINITY };

        if en_finite <= 1.0 {
            stats.accepted += 1;
            // Dense output on [t, t_new].
            while sample_idx < samples.len() && samples[sample_idx] <= t_new {
                let ts = samples[sample_idx];
                let theta = ((ts - t) / h_step).clamp(0.0, 1.0);
                let th1 = 1.0 - theta;
                let mut yi = vec![0.0; n];
                for i in 0..n {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h_step * k1[i] - ydiff;
                    let c4 = ydiff - h_step * k7[i] - bspl;
                    let c5 = h_step
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                    yi[i] = y[i] + theta * (ydiff + th1 * (bspl + theta * (c4 + th1 * c5)));
                }
                if ts == t_new {
                    yi.copy_from_slice(&y_new);
                }
                on_sample(ts, &yi)?;
                sample_idx += 1;
            }
            core::mem::swap(&mut y, &mut y_new);
            core::mem::swap(&mut k1, &mut k7);
            t = t_new;
            let factor = if en_finite == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * libm::pow(en_finite, -0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            let proposed = (h_step * factor).clamp(ctl.min_step, ctl.max_step);
            if last {
                // Keep the pre-truncation step size when the interval end clipped the step.
                let next = if h_step < h {
                    h.max(proposed)
                } else {
                    proposed
                };
                return Ok(IntervalOutcome {
                    y,
                    next_step: next.min(ctl.max_step),
                    stats,
                });
            }
            h = proposed;
        } else {
            stats.rejected += 1;
            let factor = (SAFETY * libm::pow(en_finite, -0.2)).clamp(MIN_FACTOR, 1.0);
            let shrunk = h_step
                * if en_finite.is_finite() {
                    factor
                } else {
                    MIN_FACTOR
                };
            if shrunk < ctl.min_step {
                // A step that only needs to cover a sliver at the interval end may go below min_step.
                if !(last && remaining < ctl.min_step) {
                    return Err(Error::StepUnderflow { t, h: shrunk });
                }
            }
            h = shrunk;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctl(rel: f64, abs: f64) -> StepControl {
        StepControl {
            rel_tol: rel,
            abs_tol: abs,
            min_step: 1e-12,
            max_step: 10.0,
        }
    }

    #[test]
    fn exponential_decay_is_accurate() {
        let out = integrate_interval(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            5.0,
            &[1.0],
            None,
            &ctl(1e-10, 1e-12),
            &[],
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((out.y[0] - libm::exp(-5.0)).abs() < 1e-9);
        assert_eq!(
            out.stats.rhs_calls,
            1 + STAGES_PER_STEP * (out.stats.accepted + out.stats.rejected)
        );
    }

    #[test]
    fn dense_output_tracks_solution() {
        let samples: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
        let mut worst: f64 = 0.0;
        integrate_interval(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            10.0,
            &[0.0, 1.0],
            None,
            &ctl(1e-9, 1e-12),
            &samples,
            |t, y| {
                worst = worst.max((y[0] - libm::sin(t)).abs());
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-7, "dense output error {worst}");
    }

    #[test]
    fn underflow_is_reported() {
        let r = integrate_interval(
            |t, _, dy| {
                dy[0] = if t < 0.5 { 0.0 } else { f64::NAN };
                Ok(())
            },
            0.0,
            1.0,
            &[0.0],
            Some(0.1),
            &StepControl {
                rel_tol: 1e-6,
                abs_tol: 1e-9,
                min_step: 1e-3,
                max_step: 1.0,
            },
            &[],
            |_, _| Ok(()),
        );
        assert!(matches!(r, Err(Error::StepUnderflow { .. })));
    }
}
