//! Randomized data subsampling: partitions of the observation vector, the
//! continuous-time Markov index process that selects the active subset, and
//! the subsampled EKI flow.

use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{Ensemble, ParameterVector};
use crate::error::{config_err, invalid, Error, Result};
use crate::flow::{
    self, DriftTerms, Evaluator, FlowConfig, FlowVariant, Sample, SwitchEvent, Trajectory,
};
use crate::ode::{self, StepStats};
use crate::problem::{InverseProblem, NoiseModel, PriorModel};

/// How observation indices are grouped into subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum PartitionScheme {
    /// Row-major image of `width × height` pixels cut into horizontal bands.
    HorizontalBands { width: usize, height: usize },
    /// Consecutive index blocks of near-equal size.
    ContiguousBlocks,
}

/// A partition of the data into `N_sub` subsets with their noise blocks and
/// the subset-scaled prior `C0 = (N_sub/α) D0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPartition {
    ranges: Vec<Range<usize>>,
    noise: Vec<NoiseModel>,
    prior: PriorModel,
    n_obs: usize,
}

fn split(len: usize, parts: usize) -> Vec<Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

/// Splits the observations of `p` into `n_sub` subsets.
pub fn partition(
    p: &InverseProblem,
    n_sub: usize,
    scheme: PartitionScheme,
) -> Result<DataPartition> {
    let n_obs = p.dim_y();
    if n_sub < 2 {
        return Err(config_err!(
            "subsampling needs at least 2 subsets, got {n_sub}"
        ));
    }
    let ranges = match scheme {
        PartitionScheme::HorizontalBands { width, height } => {
            if width * height != n_obs {
                return Err(config_err!(
                    "image of {width}x{height} pixels does not match {n_obs} observations"
                ));
            }
            if n_sub > height {
                return Err(config_err!(
                    "{n_sub} bands requested for an image of {height} rows"
                ));
            }
            split(height, n_sub)
                .into_iter()
                .map(|r| r.start * width..r.end * width)
                .collect()
        }
        PartitionScheme::ContiguousBlocks => {
            if n_sub > n_obs {
                return Err(config_err!(
                    "{n_sub} subsets requested for {n_obs} observations"
                ));
            }
            split(n_obs, n_sub)
        }
    };
    DataPartition::from_ranges(p, ranges)
}

impl DataPartition {
    /// Builds a partition from explicit consecutive ranges covering `0..n_obs`.
    pub fn from_ranges(p: &InverseProblem, ranges: Vec<Range<usize>>) -> Result<Self> {
        let n_obs = p.dim_y();
        let mut expect = 0;
        for r in &ranges {
            if r.start != expect || r.end <= r.start {
                return Err(config_err!(
                    "subset ranges must be nonempty, consecutive and start at 0"
                ));
            }
            expect = r.end;
        }
        if expect != n_obs {
            return Err(config_err!(
                "subset ranges cover {expect} of {n_obs} observations"
            ));
        }
        let noise = ranges
            .iter()
            .map(|r| p.noise().restrict(r.start, r.end))
            .collect::<Result<Vec<_>>>()?;
        let prior = p.prior().scaled(ranges.len());
        Ok(Self {
            ranges,
            noise,
            prior,
            n_obs,
        })
    }

    /// The single-subset partition, under which subsampling reduces to the full flow.
    pub fn whole(p: &InverseProblem) -> Result<Self> {
        Self::from_ranges(p, alloc::vec![0..p.dim_y()])
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.ranges[i].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn noise(&self, i: usize) -> &NoiseModel {
        &self.noise[i]
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// `Φ_i^reg(u) = ½‖y_i - G_i(u)‖²_{Γ_i} + (α/(2 N_sub)) uᵀD0⁻¹u`, given the full output `g`.
    pub fn potential_i(&self, p: &InverseProblem, i: usize, u: &[f64], g: &[f64]) -> Result<f64> {
        let r = self.range(i);
        if g.len() != self.n_obs {
            return Err(invalid!(
                "output of length {} against {} observations",
                g.len(),
                self.n_obs
            ));
        }
        let res: Vec<f64> = g[r.clone()]
            .iter()
            .zip(&p.data()[r])
            .map(|(a, b)| b - a)
            .collect();
        let alpha_share = p.prior().alpha() / self.len() as f64;
        let penalty = if alpha_share == 0.0 {
            0.0
        } else {
            let d0_inv = p.prior().c0_inverse() / p.prior().alpha();
            let v = nalgebra::DVector::from_column_slice(u);
            0.5 * alpha_share * v.dot(&(d0_inv * &v))
        };
        Ok(0.5 * self.noise[i].weighted_norm_sq(&res)? + penalty)
    }
}

/// `Q = (1/((N-1)η)) 𝟙𝟙ᵀ - N/((N-1)η) Id`.
pub fn transition_rate_matrix(n_sub: usize, eta: f64) -> Result<DMatrix<f64>> {
    if n_sub < 2 {
        return Err(config_err!("rate matrix needs at least 2 states"));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(config_err!("learning rate must be positive, got {eta}"));
    }
    let n = n_sub as f64;
    let off = 1.0 / ((n - 1.0) * eta);
    Ok(DMatrix::from_element(n_sub, n_sub, off)
        - DMatrix::identity(n_sub, n_sub) * (n / ((n - 1.0) * eta)))
}

/// Learning rate `η(t) = 1/(a t + b)` with an optional deterministic tail.
///
/// After `t_cutoff` the random switching stops and `n_post_switches`
/// switches are placed at `t_c + k (horizon - t_c)/n`, `k = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LearningRateSchedule {
    pub a: f64,
    pub b: f64,
    pub t_cutoff: Option<f64>,
    pub n_post_switches: usize,
    pub horizon: f64,
}

impl LearningRateSchedule {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let s = Self {
            a,
            b,
            t_cutoff: None,
            n_post_switches: 0,
            horizon: f64::INFINITY,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_cutoff(
        mut self,
        t_cutoff: f64,
        n_post_switches: usize,
        horizon: f64,
    ) -> Result<Self> {
        self.t_cutoff = Some(t_cutoff);
        self.n_post_switches = n_post_switches;
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) || !(self.b > 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(config_err!(
                "learning rate needs a >= 0 and b > 0, got a = {}, b = {}",
                self.a,
                self.b
            ));
        }
        if let Some(tc) = self.t_cutoff {
            if !(tc >= 0.0) || !(self.horizon > tc) {
                return Err(config_err!(
                    "cutoff {tc} must lie in [0, horizon = {})",
                    self.horizon
                ));
            }
        }
        Ok(())
    }

    pub fn eta(&self, t: f64) -> f64 {
        1.0 / (self.a * t + self.b)
    }

    /// Switching rate `1/η(t)`.
    pub fn rate(&self, t: f64) -> f64 {
        self.a * t + self.b
    }

    /// `∫_{t0}^{t0+Δ} 1/η = a Δ²/2 + (a t0 + b) Δ`.
    pub fn integrated_rate(&self, t0: f64, dt: f64) -> f64 {
        0.5 * self.a * dt * dt + self.rate(t0) * dt
    }

    /// `P(no switch in (t0, t0+Δ])`.
    pub fn survival(&self, t0: f64, dt: f64) -> f64 {
        libm::exp(-self.integrated_rate(t0, dt))
    }

    /// Holding time solving `∫ 1/η = E` for an exponential draw `E`.
    pub fn holding_time_for(&self, t0: f64, e: f64) -> f64 {
        let c = self.rate(t0);
        2.0 * e / (c + libm::sqrt(c * c + 2.0 * self.a * e))
    }

    fn post_cutoff_times(&self) -> Vec<f64> {
        match self.t_cutoff {
            Some(tc) if self.n_post_switches > 0 => {
                let n = self.n_post_switches as f64;
                (1..=self.n_post_switches)
                    .map(|k| tc + k as f64 * (self.horizon - tc) / n)
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Draws a holding time from `t0` by inverse transform of the survival function.
pub fn sample_holding_time<R: Rng + ?Sized>(
    schedule: &LearningRateSchedule,
    t0: f64,
    rng: &mut R,
) -> f64 {
    let u: f64 = rng.random();
    let e = -libm::log(1.0 - u);
    schedule.holding_time_for(t0, e)
}

/// Picks the successor of `current` uniformly among the other `n_sub - 1` indices.
pub fn next_index<R: Rng + ?Sized>(n_sub: usize, current: usize, rng: &mut R) -> usize {
    let k = rng.random_range(0..n_sub - 1);
    if k >= current {
        k + 1
    } else {
        k
    }
}

/// The active-subset process `i(t)`: uniform initial state, holding times
/// with rate `1/η(t)` and uniform jumps to a different index.
#[derive(Debug, Clone)]
pub struct IndexProcess {
    n_sub: usize,
    schedule: LearningRateSchedule,
    rng: ChaCha8Rng,
    current: usize,
    initial: usize,
    next_switch: f64,
    post_times: Vec<f64>,
    post_cursor: usize,
    log: Vec<SwitchEvent>,
}

impl IndexProcess {
    pub fn new(
        n_sub: usize,
        schedule: LearningRateSchedule,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if n_sub < 2 {
            return Err(config_err!("index process needs at least 2 states"));
        }
        schedule.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let current = rng.random_range(0..n_sub);
        let mut p = Self {
            n_sub,
            schedule,
            rng,
            current,
            initial: current,
            next_switch: f64::INFINITY,
            post_times: schedule.post_cutoff_times(),
            post_cursor: 0,
            log: Vec::new(),
        };
        p.next_switch = p.draw_next(0.0);
        Ok(p)
    }

    fn draw_next(&mut self, t0: f64) -> f64 {
        let cutoff = self.schedule.t_cutoff.unwrap_or(f64::INFINITY);
        if t0 < cutoff {
            let t = t0 + sample_holding_time(&self.schedule, t0, &mut self.rng);
            if t <= cutoff {
                return t;
            }
        }
        while self.post_cursor < self.post_times.len() && self.post_times[self.post_cursor] <= t0 {
            self.post_cursor += 1;
        }
        match self.post_times.get(self.post_cursor) {
            Some(&t) => {
                self.post_cursor += 1;
                t
            }
            None => f64::INFINITY,
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn next_switch(&self) -> f64 {
        self.next_switch
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn log(&self) -> &[SwitchEvent] {
        &self.log
    }

    /// Performs every switch scheduled at or before `t` and returns the active index.
    pub fn advance_to(&mut self, t: f64) -> usize {
        while self.next_switch <= t {
            let ts = self.next_switch;
            self.current = next_index(self.n_sub, self.current, &mut self.rng);
            self.log.push(SwitchEvent {
                t: ts,
                index: self.current,
            });
            self.next_switch = self.draw_next(ts);
        }
        self.current
    }
}

/// Single switching step from state `(t0, i)`: the holding time and the successor index.
pub fn advance_index<R: Rng + ?Sized>(
    schedule: &LearningRateSchedule,
    n_sub: usize,
    t0: f64,
    i: usize,
    rng: &mut R,
) -> (f64, usize) {
    let dt = sample_holding_time(schedule, t0, rng);
    (t0 + dt, next_index(n_sub, i, rng))
}

fn c0_inverse_for(variant: FlowVariant, part: &DataPartition) -> Option<DMatrix<f64>> {
    match variant {
        FlowVariant::Plain => None,
        _ => Some(part.prior().c0_inverse()),
    }
}

/// Drift of the flow restricted to subset `i`, scaled by `N_sub` so that the
/// subset average equals the full regularised drift.
pub fn rhs_subsampled(
    e: &Ensemble,
    p: &InverseProblem,
    part: &DataPartition,
    i: usize,
    rho: f64,
) -> Result<Vec<ParameterVector>> {
    if i >= part.len() {
        return Err(invalid!(
            "subset index {i} out of range for {} subsets",
            part.len()
        ));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(config_err!(
            "variance inflation weight must lie in [0, 1), got {rho}"
        ));
    }
    let mut evaluator = Evaluator::new(p.forward().as_ref());
    let outputs = evaluator.evaluate(e);
    let r = part.range(i);
    let mut slices = Vec::with_capacity(outputs.len());
    for g in outputs {
        match g {
            Ok(g) => slices.push(Some(&g[r.clone()])),
            Err(err) => {
                return Err(Error::Forward {
                    t: e.time(),
                    source: err.clone(),
                })
            }
        }
    }
    let c0_inv = part.prior().c0_inverse();
    let terms = DriftTerms {
        data: &p.data()[r],
        noise: part.noise(i),
        c0_inverse: Some(&c0_inv),
        rho,
        scale: part.len() as f64,
    };
    flow::drift_from_outputs(e, &slices, terms)?
        .into_iter()
        .map(ParameterVector::new)
        .collect()
}

/// Integrates the subsampled flow, switching subsets along `i(t)`.
///
/// Forward outputs are computed for the full data vector and sliced, so a
/// switch re-uses the outputs at the switching state.
pub fn integrate_subsampled(
    e0: &Ensemble,
    p: &InverseProblem,
    part: &DataPartition,
    cfg: &FlowConfig,
    schedule: &LearningRateSchedule,
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if e0.len() < 2 {
        return Err(invalid!("EKI needs at least 2 particles"));
    }
    if e0.dim() != p.dim_u() || part.n_obs() != p.dim_y() {
        return Err(invalid!(
            "ensemble, problem and partition dimensions disagree"
        ));
    }
    let mut process = IndexProcess::new(part.len(), *schedule, seed, stream)?;
    let c0_inv = c0_inverse_for(cfg.variant, part);
    let rho = cfg.effective_rho();
    let n_ens = e0.len();
    let rank = flow::span_rank(e0)?;
    let grid = flow::log_time_grid(cfg.t_end, cfg.first_sample, cfg.samples_per_decade);

    let mut evaluator = Evaluator::new(p.forward().as_ref());
    let mut failures = Vec::new();
    let mut samples = Vec::with_capacity(grid.len());
    let mut stats = StepStats::default();
    let mut y = e0.to_flat();
    let mut t = 0.0;
    let mut h = cfg.initial_step;
    let mut grid_pos = 0;

    while t < cfg.t_end {
        let i = process.current();
        let t_next = process.next_switch().min(cfg.t_end);
        let grid_end = grid.partition_point(|&s| s <= t_next);
        let r = part.range(i);
        let terms = DriftTerms {
            data: &p.data()[r.clone()],
            noise: part.noise(i),
            c0_inverse: c0_inv.as_ref(),
            rho,
            scale: part.len() as f64,
        };
        if t_next > t {
            let out = ode::integrate_interval(
                |tt, yy, dy| {
                    let e = Ensemble::from_flat(yy, n_ens, tt.max(0.0))?;
                    let outputs = evaluator.evaluate(&e);
                    let inputs =
                        flow::apply_policy(outputs, tt, cfg.failure_policy, &mut failures, |g| {
                            &g[r.clone()]
                        })?;
                    let drifts = flow::drift_from_outputs(&e, &inputs, terms)
                        .map_err(|err| flow::with_time(err, tt))?;
                    for (chunk, v) in dy.chunks_mut(e.dim()).zip(drifts) {
                        chunk.copy_from_slice(&v);
                    }
                    Ok(())
                },
                t,
                t_next,
                &y,
                h,
                &cfg.control,
                &grid[grid_pos..grid_end],
                |ts, ys| {
                    samples.push(Sample::new_at(Ensemble::from_flat(ys, n_ens, ts)?, rank)?);
                    Ok(())
                },
            )?;
            y = out.y;
            h = Some(out.next_step);
            stats += out.stats;
        }
        grid_pos = grid_end;
        t = t_next;
        process.advance_to(t);
    }

    Ok(Trajectory {
        samples,
        forward_evaluations: evaluator.evaluations,
        stats,
        failures,
        initial_index: Some(process.initial()),
        switches: process.log().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::rhs_regularised;
    use crate::problem::LinearModel;
    use alloc::sync::Arc;
    use alloc::vec;

    fn problem() -> InverseProblem {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, -1.0]);
        InverseProblem::new(
            Arc::new(LinearModel::new(a)),
            vec![1.0, 2.0, 0.5, -0.3],
            NoiseModel::Identity(4),
            PriorModel::isotropic(2, 0.7).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bands_split_rows_evenly() {
        let p = InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::zeros(12, 1))),
            vec![0.0; 12],
            NoiseModel::Identity(12),
            PriorModel::none(1),
        )
        .unwrap();
        let part = partition(
            &p,
            3,
            PartitionScheme::HorizontalBands {
                width: 2,
                height: 6,
            },
        )
        .unwrap();
        assert_eq!(part.ranges(), &[0..4, 4..8, 8..12]);
        assert!(partition(&p, 1, PartitionScheme::ContiguousBlocks).is_err());
        assert!(partition(&p, 13, PartitionScheme::ContiguousBlocks).is_err());
        assert!(partition(
            &p,
            7,
            PartitionScheme::HorizontalBands {
                width: 2,
                height: 6
            }
        )
        .is_err());
    }

    #[test]
    fn rate_matrix_rows_sum_to_zero() {
        let q = transition_rate_matrix(4, 0.5).unwrap();
        for i in 0..4 {
            assert!(q.row(i).sum().abs() < 1e-14);
            assert!((q[(i, i)] + 2.0).abs() < 1e-14);
        }
        assert!(transition_rate_matrix(1, 0.5).is_err());
    }

    #[test]
    fn single_subset_reduces_to_full_flow() {
        let p = problem();
        let part = DataPartition::whole(&p).unwrap();
        let e = Ensemble::from_rows(vec![vec![0.1, 0.2], vec![1.0, -0.5], vec![-0.7, 0.9]], 0.0)
            .unwrap();
        let a = rhs_subsampled(&e, &p, &part, 0, 0.0).unwrap();
        let b = rhs_regularised(&e, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn no_switch_before_cutoff_without_rate() {
        let s = LearningRateSchedule::new(0.0, 1e-9)
            .unwrap()
            .with_cutoff(1.0, 3, 4.0)
            .unwrap();
        let mut proc = IndexProcess::new(3, s, 1, 0).unwrap();
        proc.advance_to(10.0);
        let times: Vec<f64> = proc.log().iter().map(|e| e.t).collect();
        assert_eq!(times, vec![2.0, 3.0, 4.0]);
    }
}
