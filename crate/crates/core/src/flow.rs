//! Deterministic continuous-time EKI: the plain, Tikhonov-regularised and
//! variance-inflated particle drifts, and their adaptive integration.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{
    ensemble_mean, ensemble_spread, parameter_covariance, Ensemble, ParameterVector,
};
use crate::error::{config_err, invalid, Error, ForwardError, Result};
use crate::linalg;
use crate::ode::{self, StepControl, StepStats};
use crate::problem::{whiten, ForwardModel, InverseProblem, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FlowVariant {
    Plain,
    Regularised,
    VarianceInflated,
}

/// What to do with a particle whose forward evaluation fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FailurePolicy {
    /// Drive the particle by `-Ĉ^u C0⁻¹ u` alone for that evaluation and log it.
    Regulariser,
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FlowConfig {
    pub variant: FlowVariant,
    /// Variance-inflation weight ρ in `[0, 1)`.
    pub rho_vi: f64,
    pub t_end: f64,
    pub control: StepControl,
    pub initial_step: Option<f64>,
    /// Diagnostic samples per decade of the logarithmic grid.
    pub samples_per_decade: usize,
    /// First nonzero diagnostic time.
    pub first_sample: f64,
    pub failure_policy: FailurePolicy,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            variant: FlowVariant::Regularised,
            rho_vi: 0.0,
            t_end: 1000.0,
            control: StepControl::default(),
            initial_step: None,
            samples_per_decade: 64,
            first_sample: 1e-3,
            failure_policy: FailurePolicy::Regulariser,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho_vi)?;
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(config_err!(
                "t_end must be positive and finite, got {}",
                self.t_end
            ));
        }
        if self.samples_per_decade == 0 || !(self.first_sample > 0.0) {
            return Err(config_err!(
                "diagnostic grid needs samples_per_decade >= 1 and first_sample > 0"
            ));
        }
        self.control.validate()
    }

    /// ρ actually applied: zero unless the variant inflates.
    pub fn effective_rho(&self) -> f64 {
        match self.variant {
            FlowVariant::VarianceInflated => self.rho_vi,
            _ => 0.0,
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(config_err!(
            "variance inflation weight must lie in [0, 1), got {rho}"
        ));
    }
    Ok(())
}

/// Data and regulariser ingredients of a drift evaluation.
#[derive(Clone, Copy)]
pub(crate) struct DriftTerms<'a> {
    pub data: &'a [f64],
    pub noise: &'a NoiseModel,
    pub c0_inverse: Option<&'a DMatrix<f64>>,
    pub rho: f64,
    /// Overall multiplier of the drift.
    pub scale: f64,
}

/// Per-particle drifts from precomputed forward outputs.
///
/// Particles whose output is `None` get the regulariser drift only; the
/// data covariance is formed from the remaining particles.
pub(crate) fn drift_from_outputs(
    e: &Ensemble,
    outputs: &[Option<&[f64]>],
    terms: DriftTerms<'_>,
) -> Result<Vec<Vec<f64>>> {
    let n = e.len();
    let d = e.dim();
    if outputs.len() != n {
        return Err(invalid!(
            "{} forward outputs for {} particles",
            outputs.len(),
            n
        ));
    }
    let ok: Vec<usize> = (0..n).filter(|&j| outputs[j].is_some()).collect();
    if ok.len() < 2 {
        return Err(Error::Forward {
            t: e.time(),
            source: ForwardError::Other(alloc::format!(
                "only {} of {n} particles evaluated successfully",
                ok.len()
            )),
        });
    }
    let n_obs = terms.data.len();
    for &j in &ok {
        let g = outputs[j].unwrap();
        if g.len() != n_obs {
            return Err(invalid!(
                "forward output of length {} against data of length {n_obs}",
                g.len()
            ));
        }
    }

    let n_ok = ok.len() as f64;
    let mut u_mean_ok = alloc::vec![0.0; d];
    for &j in &ok {
        for (m, v) in u_mean_ok.iter_mut().zip(e.particle(j).iter()) {
            *m += v / n_ok;
        }
    }
    let mut g_mean = alloc::vec![0.0; n_obs];
    for &j in &ok {
        for (m, v) in g_mean.iter_mut().zip(outputs[j].unwrap()) {
            *m += v;
        }
    }
    g_mean.iter_mut().for_each(|m| *m /= n_ok);
    let g_dev: Vec<Vec<f64>> = ok
        .iter()
        .map(|&j| {
            outputs[j]
                .unwrap()
                .iter()
                .zip(&g_mean)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    let u_dev: Vec<Vec<f64>> = ok
        .iter()
        .map(|&j| {
            e.particle(j)
                .iter()
                .zip(&u_mean_ok)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();

    // -Ĉ^{uG} Γ⁻¹ r, contracted through inner products in observation space.
    let data_drift = |r: &[f64]| -> Result<Vec<f64>> {
        let w = terms.noise.apply_inverse(r)?;
        let mut out = alloc::vec![0.0; d];
        for (du, dg) in u_dev.iter().zip(&g_dev) {
            let c: f64 = dg.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / (n_ok - 1.0);
            for (o, x) in out.iter_mut().zip(du) {
                *o -= c * x;
            }
        }
        Ok(out)
    };

    let reg_matrix: Option<DMatrix<f64>> = match terms.c0_inverse {
        Some(c0_inv) => Some(parameter_covariance(e)? * c0_inv),
        None => None,
    };
    let reg_drift = |u: &[f64]| -> Vec<f64> {
        match &reg_matrix {
            Some(m) => (-(m * DVector::from_column_slice(u))).as_slice().to_vec(),
            None => alloc::vec![0.0; d],
        }
    };

    let mean_term = if terms.rho > 0.0 {
        let r: Vec<f64> = g_mean.iter().zip(terms.data).map(|(g, y)| g - y).collect();
        let mut m = data_drift(&r)?;
        let u_bar = ensemble_mean(e);
        for (a, b) in m.iter_mut().zip(reg_drift(&u_bar)) {
            *a += b;
        }
        Some(m)
    } else {
        None
    };

    let mut drifts = Vec::with_capacity(n);
    for j in 0..n {
        let u = e.particle(j);
        let mut v = match outputs[j] {
            Some(g) => {
                let r: Vec<f64> = g.iter().zip(terms.data).map(|(g, y)| g - y).collect();
                let mut v = data_drift(&r)?;
                for (a, b) in v.iter_mut().zip(reg_drift(u)) {
                    *a += b;
                }
                if let Some(m) = &mean_term {
                    for (a, b) in v.iter_mut().zip(m) {
                        *a = (1.0 - terms.rho) * *a + terms.rho * b;
                    }
                }
                v
            }
            None => reg_drift(u),
        };
        v.iter_mut().for_each(|x| *x *= terms.scale);
        drifts.push(v);
    }
    Ok(drifts)
}

fn evaluate_all(
    model: &dyn ForwardModel,
    e: &Ensemble,
) -> Vec<core::result::Result<Vec<f64>, ForwardError>> {
    let inputs: Vec<&[f64]> = e.particles().iter().map(|p| &**p).collect();
    model.evaluate_batch(&inputs)
}

fn rhs_with(
    e: &Ensemble,
    p: &InverseProblem,
    c0_inverse: Option<&DMatrix<f64>>,
    rho: f64,
) -> Result<Vec<ParameterVector>> {
    if e.dim() != p.dim_u() {
        return Err(invalid!(
            "ensemble dimension {} vs problem dimension {}",
            e.dim(),
            p.dim_u()
        ));
    }
    let outputs = evaluate_all(p.forward().as_ref(), e);
    let mut slices = Vec::with_capacity(outputs.len());
    for g in &outputs {
        match g {
            Ok(g) => slices.push(Some(g.as_slice())),
            Err(err) => {
                return Err(Error::Forward {
                    t: e.time(),
                    source: err.clone(),
                })
            }
        }
    }
    let terms = DriftTerms {
        data: p.data(),
        noise: p.noise(),
        c0_inverse,
        rho,
        scale: 1.0,
    };
    drift_from_outputs(e, &slices, terms)?
        .into_iter()
        .map(ParameterVector::new)
        .collect()
}

/// `du/dt = -Ĉ^{uG} Γ⁻¹ (G(u^(j)) - y)`.
pub fn rhs_plain(e: &Ensemble, p: &InverseProblem) -> Result<Vec<ParameterVector>> {
    rhs_with(e, p, None, 0.0)
}

/// Plain drift plus `-Ĉ^u C0⁻¹ u^(j)`.
pub fn rhs_regularised(e: &Ensemble, p: &InverseProblem) -> Result<Vec<ParameterVector>> {
    let c0_inv = p.prior().c0_inverse();
    rhs_with(e, p, Some(&c0_inv), 0.0)
}

/// `(1-ρ)[particle drift] + ρ[drift evaluated at the means Ḡ, ū]`.
pub fn rhs_variance_inflated(
    e: &Ensemble,
    p: &InverseProblem,
    rho: f64,
) -> Result<Vec<ParameterVector>> {
    check_rho(rho)?;
    let c0_inv = p.prior().c0_inverse();
    rhs_with(e, p, Some(&c0_inv), rho)
}

/// A logged forward failure.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub t: f64,
    pub particle: usize,
    pub error: ForwardError,
}

/// A change of the active data subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub index: usize,
}

/// Ensemble snapshot with its per-time diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ensemble: Ensemble,
    /// `V_e(t)`.
    pub spread: f64,
    /// Smallest eigenvalue of `Ĉ^u` on the span of the initial deviations.
    pub lambda_min: f64,
}

impl Sample {
    pub fn t(&self) -> f64 {
        self.ensemble.time()
    }

    pub(crate) fn new_at(ensemble: Ensemble, span_rank: usize) -> Result<Self> {
        let spread = ensemble_spread(&ensemble);
        let eig = linalg::sym_eigenvalues_desc(&parameter_covariance(&ensemble)?);
        let lambda_min = eig[span_rank.clamp(1, eig.len()) - 1];
        Ok(Self {
            ensemble,
            spread,
            lambda_min,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub forward_evaluations: usize,
    pub stats: StepStats,
    pub failures: Vec<FailureEvent>,
    /// Active subset at t = 0 (subsampled runs only).
    pub initial_index: Option<usize>,
    pub switches: Vec<SwitchEvent>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(Sample::t).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn final_mean(&self) -> ParameterVector {
        ensemble_mean(&self.last().ensemble)
    }
}

/// `[0, first, first·10^{1/k}, …, t_end]`.
pub fn log_time_grid(t_end: f64, first: f64, per_decade: usize) -> Vec<f64> {
    let mut grid = alloc::vec![0.0];
    let mut k = 0i32;
    loop {
        let t = first * libm::pow(10.0, k as f64 / per_decade as f64);
        if t >= t_end * (1.0 - 1e-12) {
            break;
        }
        grid.push(t);
        k += 1;
    }
    grid.push(t_end);
    grid
}

/// Rank of the initial deviation span, capped by `d` and `N_ens - 1`.
pub(crate) fn span_rank(e: &Ensemble) -> Result<usize> {
    let eig = linalg::sym_eigenvalues_desc(&parameter_covariance(e)?);
    let top = eig[0].abs().max(f64::MIN_POSITIVE);
    Ok(eig.iter().filter(|v| **v > 1e-10 * top).count().max(1))
}

/// Counts forward evaluations and reuses the outputs of the last state seen.
pub(crate) struct Evaluator<'a> {
    model: &'a dyn ForwardModel,
    pub evaluations: usize,
    last_state: Vec<f64>,
    last_outputs: Vec<core::result::Result<Vec<f64>, ForwardError>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a dyn ForwardModel) -> Self {
        Self {
            model,
            evaluations: 0,
            last_state: Vec::new(),
            last_outputs: Vec::new(),
        }
    }

    pub fn evaluate(&mut self, e: &Ensemble) -> &[core::result::Result<Vec<f64>, ForwardError>] {
        let flat = e.to_flat();
        let hit = flat.len() == self.last_state.len()
            && flat
                .iter()
                .zip(&self.last_state)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !hit {
            self.last_outputs = evaluate_all(self.model, e);
            self.evaluations += e.len();
            self.last_state = flat;
        }
        &self.last_outputs
    }
}

/// Converts evaluation results into drift inputs, applying the failure policy.
pub(crate) fn apply_policy<'o>(
    outputs: &'o [core::result::Result<Vec<f64>, ForwardError>],
    t: f64,
    policy: FailurePolicy,
    failures: &mut Vec<FailureEvent>,
    slice: impl Fn(&'o [f64]) -> &'o [f64],
) -> Result<Vec<Option<&'o [f64]>>> {
    let mut out = Vec::with_capacity(outputs.len());
    for (j, g) in outputs.iter().enumerate() {
        match g {
            Ok(g) => out.push(Some(slice(g))),
            Err(err) => match policy {
                FailurePolicy::Abort => {
                    return Err(Error::Forward {
                        t,
                        source: err.clone(),
                    })
                }
                FailurePolicy::Regulariser => {
                    log::warn!("forward evaluation of particle {j} failed at t = {t}: {err}");
                    failures.push(FailureEvent {
                        t,
                        particle: j,
                        error: err.clone(),
                    });
                    out.push(None);
                }
            },
        }
    }
    Ok(out)
}

/// Integrates the configured flow from `e0` to `cfg.t_end`.
///
/// The problem is whitened once so the drift runs with `Γ = Id`.
/// Diagnostics are sampled on a logarithmic grid via dense output.
pub fn integrate(e0: &Ensemble, p: &InverseProblem, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if e0.len() < 2 {
        return Err(invalid!("EKI needs at least 2 particles"));
    }
    if e0.dim() != p.dim_u() {
        return Err(invalid!(
            "ensemble dimension {} vs problem dimension {}",
            e0.dim(),
            p.dim_u()
        ));
    }
    let pw = whiten(p)?;
    let c0_inv = match cfg.variant {
        FlowVariant::Plain => None,
        _ => Some(pw.prior().c0_inverse()),
    };
    let rho = cfg.effective_rho();
    let n_ens = e0.len();
    let rank = span_rank(e0)?;
    let grid = log_time_grid(cfg.t_end, cfg.first_sample, cfg.samples_per_decade);

    let mut evaluator = Evaluator::new(pw.forward().as_ref());
    let mut failures = Vec::new();
    let mut samples = Vec::with_capacity(grid.len());
    let terms = DriftTerms {
        data: pw.data(),
        noise: pw.noise(),
        c0_inverse: c0_inv.as_ref(),
        rho,
        scale: 1.0,
    };

    let out = ode::integrate_interval(
        |t, y, dy| {
            let e = Ensemble::from_flat(y, n_ens, t.max(0.0))?;
            let outputs = evaluator.evaluate(&e);
            let inputs = apply_policy(outputs, t, cfg.failure_policy, &mut failures, |g| g)?;
            let drifts = drift_from_outputs(&e, &inputs, terms).map_err(|err| with_time(err, t))?;
            for (chunk, v) in dy.chunks_mut(e.dim()).zip(drifts) {
                chunk.copy_from_slice(&v);
            }
            Ok(())
        },
        0.0,
        cfg.t_end,
        &e0.to_flat(),
        cfg.initial_step,
        &cfg.control,
        &grid,
        |t, y| {
            samples.push(Sample::new_at(Ensemble::from_flat(y, n_ens, t)?, rank)?);
            Ok(())
        },
    )?;

    Ok(Trajectory {
        samples,
        forward_evaluations: evaluator.evaluations,
        stats: out.stats,
        failures,
        initial_index: None,
        switches: Vec::new(),
    })
}

pub(crate) fn with_time(err: Error, t: f64) -> Error {
    match err {
        Error::Forward { source, .. } => Error::Forward { t, source },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{augment, LinearModel, PriorModel};
    use alloc::sync::Arc;
    use alloc::vec;

    fn scalar_problem(a: f64, y: f64, alpha: f64) -> InverseProblem {
        InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::from_element(1, 1, a))),
            vec![y],
            NoiseModel::Identity(1),
            PriorModel::isotropic(1, alpha).unwrap(),
        )
        .unwrap()
    }

    fn ens(rows: &[&[f64]]) -> Ensemble {
        Ensemble::from_rows(rows.iter().map(|r| r.to_vec()).collect(), 0.0).unwrap()
    }

    #[test]
    fn plain_drift_examples() {
        let p = scalar_problem(1.0, 0.0, 0.0);
        let d = rhs_plain(&ens(&[&[-1.0], &[1.0]]), &p).unwrap();
        assert_eq!((d[0][0], d[1][0]), (2.0, -2.0));
        let d = rhs_plain(&ens(&[&[0.4], &[0.4], &[0.4]]), &p).unwrap();
        assert!(d.iter().all(|v| v[0] == 0.0));
        // Exact fit: G(u) = y for every particle.
        let flat = InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::zeros(2, 1))),
            vec![0.0, 0.0],
            NoiseModel::Identity(2),
            PriorModel::none(1),
        )
        .unwrap();
        assert!(rhs_plain(&ens(&[&[-1.0], &[3.0]]), &flat)
            .unwrap()
            .iter()
            .all(|v| v[0] == 0.0));
    }

    #[test]
    fn regularised_drift_examples() {
        let p = scalar_problem(1.0, 0.5, 1.0);
        let d = rhs_regularised(&ens(&[&[0.2], &[0.2]]), &p).unwrap();
        assert!(d.iter().all(|v| v[0] == 0.0));
        // G ≡ 0, y = 0, C0 = Id: pure regulariser -Ĉ^u u.
        let zero = InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::zeros(1, 2))),
            vec![0.0],
            NoiseModel::Identity(1),
            PriorModel::isotropic(2, 1.0).unwrap(),
        )
        .unwrap();
        let e = ens(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 2.0]]);
        let c = parameter_covariance(&e).unwrap();
        let d = rhs_regularised(&e, &zero).unwrap();
        for (j, dj) in d.iter().enumerate() {
            let expect = -(&c * DVector::from_column_slice(e.particle(j)));
            assert!((DVector::from_column_slice(dj) - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn regularised_matches_augmented_plain() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let p = InverseProblem::new(
            Arc::new(LinearModel::new(a)),
            vec![1.0, -1.0, 0.5],
            NoiseModel::Identity(3),
            PriorModel::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 0.8).unwrap(),
        )
        .unwrap();
        let e = ens(&[&[0.1, 0.2], &[1.0, -0.5], &[-0.7, 0.9]]);
        let r = rhs_regularised(&e, &p).unwrap();
        let aug = augment(&p).unwrap();
        let q = rhs_plain(&e, aug.as_problem()).unwrap();
        for (x, y) in r.iter().zip(&q) {
            for (a, b) in x.iter().zip(y.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variance_inflation_edge_cases() {
        let p = scalar_problem(2.0, 1.0, 0.5);
        let e = ens(&[&[0.3], &[-0.4], &[1.1]]);
        assert_eq!(
            rhs_variance_inflated(&e, &p, 0.0).unwrap(),
            rhs_regularised(&e, &p).unwrap()
        );
        assert!(rhs_variance_inflated(&e, &p, 1.0).is_err());
        assert!(rhs_variance_inflated(&e, &p, -0.1).is_err());
        let same = ens(&[&[0.3], &[0.3]]);
        let d = rhs_variance_inflated(&same, &p, 0.5).unwrap();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn identical_particles_stay_frozen() {
        let p = scalar_problem(1.0, 3.0, 1.0);
        let e0 = ens(&[&[0.5], &[0.5], &[0.5]]);
        let cfg = FlowConfig {
            t_end: 10.0,
            samples_per_decade: 4,
            ..FlowConfig::default()
        };
        let traj = integrate(&e0, &p, &cfg).unwrap();
        for s in &traj.samples {
            assert!(s.ensemble.particles().iter().all(|u| u[0] == 0.5));
        }
    }

    #[test]
    fn evaluation_count_is_stages_times_particles() {
        let p = scalar_problem(1.0, 3.0, 1.0);
        let e0 = ens(&[&[0.0], &[1.0], &[2.0]]);
        let cfg = FlowConfig {
            t_end: 50.0,
            samples_per_decade: 8,
            ..FlowConfig::default()
        };
        let traj = integrate(&e0, &p, &cfg).unwrap();
        let steps = traj.stats.accepted + traj.stats.rejected;
        assert_eq!(traj.stats.rhs_calls, 1 + ode::STAGES_PER_STEP * steps);
        assert_eq!(traj.forward_evaluations, 3 * traj.stats.rhs_calls);
    }

    #[test]
    fn log_grid_shape() {
        let g = log_time_grid(100.0, 1.0, 2);
        assert_eq!(g.len(), 1 + 4 + 1);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 100.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
