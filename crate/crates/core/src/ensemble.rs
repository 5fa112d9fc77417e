//! Particle ensembles and the empirical statistics driving every EKI flow.
//!
//! Both covariances use the unbiased divisor `N_ens - 1`. The d×N_obs
//! cross-covariance is formed densely when asked for; the flows themselves
//! contract it against observation-space vectors without materialising it.

use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Observation-space vector (flattened distance map, possibly augmented).
pub type ObservationVector = Vec<f64>;

/// A point in parameter space, stored in nondimensional units.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid!("parameter vector must have dimension >= 1"));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("parameter entry {i} is not finite"));
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(alloc::vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// `N_ens` particles of common dimension `d`, stamped with the flow time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Vec<ParameterVector>,
    time: f64,
}

impl Ensemble {
    pub fn new(particles: Vec<ParameterVector>, time: f64) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(invalid!("ensemble is empty"));
        };
        let d = first.dim();
        if let Some(j) = particles.iter().position(|p| p.dim() != d) {
            return Err(invalid!(
                "particle {j} has dimension {} (expected {d})",
                particles[j].dim()
            ));
        }
        if !(time >= 0.0) || !time.is_finite() {
            return Err(invalid!(
                "ensemble time must be finite and nonnegative, got {time}"
            ));
        }
        Ok(Self { particles, time })
    }

    /// Builds an ensemble from raw rows.
    pub fn from_rows(rows: Vec<Vec<f64>>, time: f64) -> Result<Self> {
        let particles = rows
            .into_iter()
            .map(ParameterVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(particles, time)
    }

    /// Rebuilds an ensemble from a particle-major flat state vector.
    pub fn from_flat(flat: &[f64], n_ens: usize, time: f64) -> Result<Self> {
        if n_ens == 0 || flat.len() % n_ens != 0 {
            return Err(invalid!(
                "flat state of length {} does not split into {n_ens} particles",
                flat.len()
            ));
        }
        let d = flat.len() / n_ens;
        Self::from_rows(flat.chunks(d).map(<[f64]>::to_vec).collect(), time)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.particles
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn particles(&self) -> &[ParameterVector] {
        &self.particles
    }

    pub fn particle(&self, j: usize) -> &ParameterVector {
        &self.particles[j]
    }

    fn require_pairs(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(invalid!(
                "empirical covariance needs at least 2 particles, got {}",
                self.len()
            ));
        }
        Ok(())
    }

    /// Deviations `u^(j) - ū` of every particle from the ensemble mean.
    pub fn deviations(&self) -> Vec<Vec<f64>> {
        let mean = ensemble_mean(self);
        self.particles
            .iter()
            .map(|p| p.iter().zip(mean.iter()).map(|(a, b)| a - b).collect())
            .collect()
    }
}

/// Arithmetic mean of the particles.
pub fn ensemble_mean(e: &Ensemble) -> ParameterVector {
    // Accumulate offsets from the first particle so identical particles average exactly.
    let n = e.len() as f64;
    let base = e.particle(0);
    let mut acc = alloc::vec![0.0; e.dim()];
    for p in e.particles() {
        for ((a, v), b) in acc.iter_mut().zip(p.iter()).zip(base.iter()) {
            *a += v - b;
        }
    }
    ParameterVector(base.iter().zip(&acc).map(|(b, a)| b + a / n).collect())
}

/// Componentwise mean of forward-model outputs.
pub fn observation_mean<V: AsRef<[f64]>>(values: &[V]) -> Result<ObservationVector> {
    let Some(first) = values.first() else {
        return Err(invalid!("no observation vectors to average"));
    };
    let n_obs = first.as_ref().len();
    let mut mean = alloc::vec![0.0; n_obs];
    for (j, v) in values.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != n_obs {
            return Err(invalid!(
                "observation {j} has length {} (expected {n_obs})",
                v.len()
            ));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = values.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// `Ĉ^{uG} = 1/(N-1) Σ (u^(j) - ū) ⊗ (G(u^(j)) - Ḡ)`, a d×N_obs matrix.
pub fn cross_covariance<V: AsRef<[f64]>>(e: &Ensemble, g_values: &[V]) -> Result<DMatrix<f64>> {
    e.require_pairs()?;
    if g_values.len() != e.len() {
        return Err(invalid!(
            "{} observation vectors for {} particles",
            g_values.len(),
            e.len()
        ));
    }
    let g_mean = observation_mean(g_values)?;
    let dev = e.deviations();
    let mut c = DMatrix::zeros(e.dim(), g_mean.len());
    for (du, g) in dev.iter().zip(g_values) {
        for (col, (gv, gm)) in g.as_ref().iter().zip(&g_mean).enumerate() {
            let dg = gv - gm;
            for (row, dui) in du.iter().enumerate() {
                c[(row, col)] += dui * dg;
            }
        }
    }
    Ok(c / (e.len() - 1) as f64)
}

/// `Ĉ^u = 1/(N-1) Σ (u^(j) - ū) ⊗ (u^(j) - ū)`.
pub fn parameter_covariance(e: &Ensemble) -> Result<DMatrix<f64>> {
    e.require_pairs()?;
    let d = e.dim();
    let mut c = DMatrix::zeros(d, d);
    for du in e.deviations() {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += du[a] * du[b];
            }
        }
    }
    Ok(c / (e.len() - 1) as f64)
}

/// `V_e = 1/N Σ ½‖u^(j) - ū‖²`.
pub fn ensemble_spread(e: &Ensemble) -> f64 {
    let total: f64 = e
        .deviations()
        .iter()
        .map(|du| du.iter().map(|v| v * v).sum::<f64>())
        .sum();
    0.5 * total / e.len() as f64
}

/// `n` particles drawn from `N(mean, diag(std²))` with a seeded ChaCha8 stream.
pub fn sample_ensemble(mean: &[f64], std: &[f64], n: usize, seed: u64) -> Result<Ensemble> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    if mean.len() != std.len() || mean.is_empty() {
        return Err(Error::InvalidInput(alloc::format!(
            "mean of length {} with spread of length {}",
            mean.len(),
            std.len()
        )));
    }
    if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput(
            "ensemble spread must be finite and nonnegative".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            mean.iter()
                .zip(std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect()
        })
        .collect();
    Ensemble::from_rows(rows, 0.0)
}
