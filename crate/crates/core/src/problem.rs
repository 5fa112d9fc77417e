//! Forward operators, the Gaussian noise and prior models, the Tikhonov
//! potential and the augmented operator `G̃(u) = (G(u), C0^{-1/2} u)`.
//!
//! Weighted norms follow `‖x‖²_Γ = xᵀ Γ⁻¹ x`.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{ObservationVector, ParameterVector};
use crate::error::{config_err, invalid, Error, ForwardError, Result};
use crate::linalg;

/// Black-box forward operator `u ↦ G(u)`.
///
/// Implementations must be stateless (or internally synchronised): the
/// flows evaluate one particle per worker.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError>;

    /// Evaluates several inputs. Results are returned in input order.
    fn evaluate_batch(
        &self,
        inputs: &[&[f64]],
    ) -> Vec<core::result::Result<Vec<f64>, ForwardError>> {
        inputs.iter().map(|u| self.evaluate(u)).collect()
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for Arc<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
        (**self).evaluate(u)
    }
    fn evaluate_batch(
        &self,
        inputs: &[&[f64]],
    ) -> Vec<core::result::Result<Vec<f64>, ForwardError>> {
        (**self).evaluate_batch(inputs)
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for Box<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
        (**self).evaluate(u)
    }
    fn evaluate_batch(
        &self,
        inputs: &[&[f64]],
    ) -> Vec<core::result::Result<Vec<f64>, ForwardError>> {
        (**self).evaluate_batch(inputs)
    }
}

/// `G(u) = A u`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    matrix: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
        if u.len() != self.matrix.ncols() {
            return Err(ForwardError::Other(alloc::format!(
                "expected input of length {}",
                self.matrix.ncols()
            )));
        }
        Ok((&self.matrix * DVector::from_column_slice(u))
            .as_slice()
            .to_vec())
    }
}

/// Observational noise covariance Γ, block-diagonal along the data vector.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Identity(usize),
    Diagonal(Vec<f64>),
    /// Consecutive dense blocks tiling the data vector.
    Blocks(Vec<DMatrix<f64>>),
}

impl NoiseModel {
    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::Identity(n) => *n,
            NoiseModel::Diagonal(v) => v.len(),
            NoiseModel::Blocks(b) => b.iter().map(|m| m.nrows()).sum(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, NoiseModel::Identity(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Identity(_) => Ok(()),
            NoiseModel::Diagonal(v) => match v.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
                Some(i) => Err(config_err!("noise variance {i} is not positive")),
                None => Ok(()),
            },
            NoiseModel::Blocks(blocks) => {
                for m in blocks {
                    linalg::inverse_spd(m, "noise block")?;
                }
                Ok(())
            }
        }
    }

    fn block_map(
        &self,
        v: &[f64],
        f: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
        diag: impl Fn(f64) -> f64,
    ) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(invalid!(
                "vector of length {} against noise of dimension {}",
                v.len(),
                self.dim()
            ));
        }
        Ok(match self {
            NoiseModel::Identity(_) => v.to_vec(),
            NoiseModel::Diagonal(s) => v.iter().zip(s).map(|(x, s)| x * diag(*s)).collect(),
            NoiseModel::Blocks(blocks) => {
                let mut out = Vec::with_capacity(v.len());
                let mut off = 0;
                for m in blocks {
                    let n = m.nrows();
                    let t = f(m)? * DVector::from_column_slice(&v[off..off + n]);
                    out.extend_from_slice(t.as_slice());
                    off += n;
                }
                out
            }
        })
    }

    /// `Γ⁻¹ v`.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.block_map(v, |m| linalg::inverse_spd(m, "noise block"), |s| 1.0 / s)
    }

    /// `Γ^{-1/2} v`.
    pub fn apply_inv_sqrt(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.block_map(
            v,
            |m| linalg::inv_sqrt_spd(m, "noise block"),
            |s| 1.0 / libm::sqrt(s),
        )
    }

    /// `‖v‖²_Γ = vᵀ Γ⁻¹ v`.
    pub fn weighted_norm_sq(&self, v: &[f64]) -> Result<f64> {
        let w = self.apply_inverse(v)?;
        Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum())
    }

    /// Restriction to the index range `[start, end)`.
    pub fn restrict(&self, start: usize, end: usize) -> Result<NoiseModel> {
        if start > end || end > self.dim() {
            return Err(invalid!(
                "range {start}..{end} outside noise of dimension {}",
                self.dim()
            ));
        }
        match self {
            NoiseModel::Identity(_) => Ok(NoiseModel::Identity(end - start)),
            NoiseModel::Diagonal(v) => Ok(NoiseModel::Diagonal(v[start..end].to_vec())),
            NoiseModel::Blocks(blocks) => {
                let mut off = 0;
                let mut taken = Vec::new();
                for m in blocks {
                    let n = m.nrows();
                    let (lo, hi) = (off, off + n);
                    if lo >= start && hi <= end {
                        taken.push(m.clone());
                    } else if hi > start && lo < end {
                        return Err(config_err!("subset boundary {start}..{end} cuts through a noise block at {lo}..{hi}"));
                    }
                    off = hi;
                }
                Ok(NoiseModel::Blocks(taken))
            }
        }
    }

    /// Block-diagonal concatenation `diag(self, other)`.
    pub fn stack(&self, other: &NoiseModel) -> NoiseModel {
        match (self, other) {
            (NoiseModel::Identity(a), NoiseModel::Identity(b)) => NoiseModel::Identity(a + b),
            _ => {
                let mut diag = Vec::with_capacity(self.dim() + other.dim());
                let as_blocks = |n: &NoiseModel| -> Option<Vec<f64>> {
                    match n {
                        NoiseModel::Identity(k) => Some(alloc::vec![1.0; *k]),
                        NoiseModel::Diagonal(v) => Some(v.clone()),
                        NoiseModel::Blocks(_) => None,
                    }
                };
                match (as_blocks(self), as_blocks(other)) {
                    (Some(a), Some(b)) => {
                        diag.extend(a);
                        diag.extend(b);
                        NoiseModel::Diagonal(diag)
                    }
                    _ => {
                        let mut blocks = self.to_blocks();
                        blocks.extend(other.to_blocks());
                        NoiseModel::Blocks(blocks)
                    }
                }
            }
        }
    }

    fn to_blocks(&self) -> Vec<DMatrix<f64>> {
        match self {
            NoiseModel::Identity(n) => (0..*n).map(|_| DMatrix::identity(1, 1)).collect(),
            NoiseModel::Diagonal(v) => v.iter().map(|s| DMatrix::from_element(1, 1, *s)).collect(),
            NoiseModel::Blocks(b) => b.clone(),
        }
    }

    /// Dense Γ (for small problems and tests).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in self.to_blocks() {
            let k = b.nrows();
            m.view_mut((off, off), (k, k)).copy_from(&b);
            off += k;
        }
        m
    }
}

/// Gaussian prior `N(0, D0)` with Tikhonov weight α.
///
/// The effective prior covariance is `C0 = (scale/α) D0`, where `scale` is 1
/// for full-data problems and `N_sub` for each subsampled potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    d0: DMatrix<f64>,
    alpha: f64,
    scale: f64,
    d0_inverse: DMatrix<f64>,
}

impl PriorModel {
    pub fn new(d0: DMatrix<f64>, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(config_err!(
                "regularisation weight must be nonnegative, got {alpha}"
            ));
        }
        let d0_inverse = linalg::inverse_spd(&d0, "D0")?;
        Ok(Self {
            d0,
            alpha,
            scale: 1.0,
            d0_inverse,
        })
    }

    /// Identity `D0` of dimension `d`.
    pub fn isotropic(d: usize, alpha: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d), alpha)
    }

    /// No regularisation (α = 0).
    pub fn none(d: usize) -> Self {
        Self::isotropic(d, 0.0).expect("identity is positive definite")
    }

    /// Same prior with `C0 = (n_sub/α) D0`.
    pub fn scaled(&self, n_sub: usize) -> Self {
        Self {
            scale: n_sub as f64,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.d0.nrows()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn d0(&self) -> &DMatrix<f64> {
        &self.d0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `C0`. Requires α > 0.
    pub fn c0(&self) -> Result<DMatrix<f64>> {
        if !(self.alpha > 0.0) {
            return Err(config_err!("C0 is undefined for alpha = 0"));
        }
        Ok(&self.d0 * (self.scale / self.alpha))
    }

    /// `C0⁻¹ = (α/scale) D0⁻¹`; the zero matrix when α = 0.
    pub fn c0_inverse(&self) -> DMatrix<f64> {
        &self.d0_inverse * (self.alpha / self.scale)
    }

    /// `½ uᵀ C0⁻¹ u`.
    pub fn penalty(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        0.5 * v.dot(&(self.c0_inverse() * &v))
    }
}

/// `y = G(u) + η` together with its Tikhonov prior.
#[derive(Clone)]
pub struct InverseProblem {
    forward: Arc<dyn ForwardModel>,
    data: ObservationVector,
    noise: NoiseModel,
    prior: PriorModel,
}

impl fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseProblem")
            .field("dim_u", &self.dim_u())
            .field("dim_y", &self.dim_y())
            .field("noise", &self.noise)
            .field("prior", &self.prior)
            .finish()
    }
}

impl InverseProblem {
    pub fn new(
        forward: Arc<dyn ForwardModel>,
        data: ObservationVector,
        noise: NoiseModel,
        prior: PriorModel,
    ) -> Result<Self> {
        if forward.output_dim() != data.len() {
            return Err(config_err!(
                "forward output dimension {} != data length {}",
                forward.output_dim(),
                data.len()
            ));
        }
        if noise.dim() != data.len() {
            return Err(config_err!(
                "noise dimension {} != data length {}",
                noise.dim(),
                data.len()
            ));
        }
        if prior.dim() != forward.input_dim() {
            return Err(config_err!(
                "prior dimension {} != parameter dimension {}",
                prior.dim(),
                forward.input_dim()
            ));
        }
        noise.validate()?;
        Ok(Self {
            forward,
            data,
            noise,
            prior,
        })
    }

    pub fn forward(&self) -> &Arc<dyn ForwardModel> {
        &self.forward
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }
    pub fn dim_u(&self) -> usize {
        self.forward.input_dim()
    }
    pub fn dim_y(&self) -> usize {
        self.data.len()
    }

    pub fn with_prior(&self, prior: PriorModel) -> Result<Self> {
        Self::new(
            self.forward.clone(),
            self.data.clone(),
            self.noise.clone(),
            prior,
        )
    }

    /// Φ^reg from an already computed forward output `g = G(u)`.
    pub fn potential_from_output(&self, u: &[f64], g: &[f64]) -> Result<f64> {
        if g.len() != self.dim_y() {
            return Err(invalid!(
                "forward output of length {} (expected {})",
                g.len(),
                self.dim_y()
            ));
        }
        let r: Vec<f64> = self.data.iter().zip(g).map(|(y, g)| y - g).collect();
        Ok(0.5 * self.noise.weighted_norm_sq(&r)? + self.prior.penalty(u))
    }
}

/// `Φ^reg(u) = ½‖y − G(u)‖²_Γ + (α/2)‖u‖²_{D0}`.
pub fn potential(p: &InverseProblem, u: &[f64]) -> Result<f64> {
    if u.len() != p.dim_u() {
        return Err(invalid!(
            "parameter of dimension {} (expected {})",
            u.len(),
            p.dim_u()
        ));
    }
    let g = p.forward.evaluate(u)?;
    p.potential_from_output(u, &g)
}

/// `G̃(u) = (G(u), L u)` with `L = C0^{-1/2}`.
struct AugmentedModel {
    inner: Arc<dyn ForwardModel>,
    tail: DMatrix<f64>,
}

impl ForwardModel for AugmentedModel {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim() + self.tail.nrows()
    }
    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
        let mut g = self.inner.evaluate(u)?;
        g.extend_from_slice((&self.tail * DVector::from_column_slice(u)).as_slice());
        Ok(g)
    }
    fn evaluate_batch(
        &self,
        inputs: &[&[f64]],
    ) -> Vec<core::result::Result<Vec<f64>, ForwardError>> {
        self.inner
            .evaluate_batch(inputs)
            .into_iter()
            .zip(inputs)
            .map(|(g, u)| {
                g.map(|mut g| {
                    g.extend_from_slice((&self.tail * DVector::from_column_slice(u)).as_slice());
                    g
                })
            })
            .collect()
    }
}

/// The stacked operator and data `(G̃, ỹ)` of a regularised problem.
#[derive(Debug, Clone)]
pub struct AugmentedProblem {
    base: InverseProblem,
    augmented: InverseProblem,
    c0_inv_sqrt: DMatrix<f64>,
}

impl AugmentedProblem {
    pub fn base(&self) -> &InverseProblem {
        &self.base
    }

    /// The augmented problem without a prior: `½‖ỹ − G̃(u)‖²` with noise `diag(Γ, Id)`.
    pub fn as_problem(&self) -> &InverseProblem {
        &self.augmented
    }

    pub fn c0_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.c0_inv_sqrt
    }

    pub fn data(&self) -> &[f64] {
        self.augmented.data()
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.augmented.forward().evaluate(u)?)
    }

    /// `½‖ỹ − G̃(u)‖²`, weighted by `diag(Γ, Id)`.
    pub fn misfit(&self, u: &[f64]) -> Result<f64> {
        potential(&self.augmented, u)
    }
}

pub fn augment(p: &InverseProblem) -> Result<AugmentedProblem> {
    let c0 = p.prior.c0()?;
    let l = linalg::inv_sqrt_spd(&c0, "C0")?;
    let d = p.dim_u();
    let model = Arc::new(AugmentedModel {
        inner: p.forward.clone(),
        tail: l.clone(),
    });
    let mut data = p.data.clone();
    data.extend(core::iter::repeat(0.0).take(d));
    let noise = p.noise.stack(&NoiseModel::Identity(d));
    let augmented = InverseProblem::new(model, data, noise, PriorModel::none(d))?;
    Ok(AugmentedProblem {
        base: p.clone(),
        augmented,
        c0_inv_sqrt: l,
    })
}

struct WhitenedModel {
    inner: Arc<dyn ForwardModel>,
    noise: NoiseModel,
}

impl WhitenedModel {
    fn apply(&self, g: Vec<f64>) -> core::result::Result<Vec<f64>, ForwardError> {
        self.noise
            .apply_inv_sqrt(&g)
            .map_err(|e| ForwardError::Other(alloc::format!("{e}")))
    }
}

impl ForwardModel for WhitenedModel {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
        self.apply(self.inner.evaluate(u)?)
    }
    fn evaluate_batch(
        &self,
        inputs: &[&[f64]],
    ) -> Vec<core::result::Result<Vec<f64>, ForwardError>> {
        self.inner
            .evaluate_batch(inputs)
            .into_iter()
            .map(|g| g.and_then(|g| self.apply(g)))
            .collect()
    }
}

/// Equivalent problem with `Γ = Id`: `y' = Γ^{-1/2} y`, `G' = Γ^{-1/2} ∘ G`.
pub fn whiten(p: &InverseProblem) -> Result<InverseProblem> {
    if p.noise.is_identity() {
        return Ok(p.clone());
    }
    p.noise.validate()?;
    let data = p.noise.apply_inv_sqrt(&p.data)?;
    let model = Arc::new(WhitenedModel {
        inner: p.forward.clone(),
        noise: p.noise.clone(),
    });
    InverseProblem::new(
        model,
        data,
        NoiseModel::Identity(p.dim_y()),
        p.prior.clone(),
    )
}

/// Closed-form minimiser of Φ^reg for `G(u) = A u`:
/// `(AᵀΓ⁻¹A + C0⁻¹)⁻¹ AᵀΓ⁻¹ y`.
pub fn tikhonov_solution(p: &InverseProblem, a: &DMatrix<f64>) -> Result<ParameterVector> {
    if a.nrows() != p.dim_y() || a.ncols() != p.dim_u() {
        return Err(invalid!(
            "matrix is {}x{}, problem is {}x{}",
            a.nrows(),
            a.ncols(),
            p.dim_y(),
            p.dim_u()
        ));
    }
    let gamma_inv = linalg::inverse_spd(&p.noise.to_dense(), "noise covariance")?;
    let normal = a.transpose() * &gamma_inv * a + p.prior.c0_inverse();
    let rhs = a.transpose() * &gamma_inv * DVector::from_column_slice(&p.data);
    let u = linalg::solve_spd(&normal, &rhs)?;
    ParameterVector::new(u.as_slice().to_vec())
}

/// `∇Φ^reg(u) = Aᵀ Γ⁻¹ (A u − y) + C0⁻¹ u` for linear problems.
pub fn linear_potential_gradient(
    p: &InverseProblem,
    a: &DMatrix<f64>,
    u: &[f64],
) -> Result<Vec<f64>> {
    let uv = DVector::from_column_slice(u);
    let r: Vec<f64> = (a * &uv).iter().zip(&p.data).map(|(g, y)| g - y).collect();
    let w = DVector::from_vec(p.noise.apply_inverse(&r)?);
    let g = a.transpose() * w + p.prior.c0_inverse() * uv;
    Ok(g.as_slice().to_vec())
}

impl From<Error> for ForwardError {
    fn from(e: Error) -> Self {
        ForwardError::Other(alloc::format!("{e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_problem(y: Vec<f64>, alpha: f64) -> InverseProblem {
        let n = y.len();
        InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::identity(n, n))),
            y,
            NoiseModel::Identity(n),
            PriorModel::isotropic(n, alpha).unwrap(),
        )
        .unwrap()
    }

    fn random_linear(
        rng: &mut ChaCha8Rng,
        n_obs: usize,
        d: usize,
        diag_noise: bool,
    ) -> (InverseProblem, DMatrix<f64>) {
        let a = DMatrix::from_fn(n_obs, d, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n_obs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise = if diag_noise {
            NoiseModel::Diagonal((0..n_obs).map(|_| rng.random_range(0.5..3.0)).collect())
        } else {
            NoiseModel::Identity(n_obs)
        };
        let d0 = DMatrix::from_fn(d, d, |i, j| if i == j { 1.5 } else { 0.2 });
        let p = InverseProblem::new(
            Arc::new(LinearModel::new(a.clone())),
            y,
            noise,
            PriorModel::new(d0, 0.7).unwrap(),
        )
        .unwrap();
        (p, a)
    }

    #[test]
    fn potential_examples() {
        assert_eq!(
            potential(&identity_problem(vec![0.3, -1.0], 0.0), &[0.3, -1.0]).unwrap(),
            0.0
        );
        assert!(
            (potential(&identity_problem(vec![0.0], 2.0), &[1.0]).unwrap() - 1.5).abs() < 1e-15
        );
        assert!(potential(&identity_problem(vec![0.0], 2.0), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn augment_examples() {
        let p = identity_problem(vec![1.0, 2.0], 1.0);
        let aug = augment(&p).unwrap();
        assert_eq!(aug.evaluate(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0, 3.0, 4.0]);
        assert_eq!(&aug.data()[2..], &[0.0, 0.0]);
        let p4 = InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::identity(1, 1))),
            vec![0.0],
            NoiseModel::Identity(1),
            PriorModel::new(DMatrix::from_element(1, 1, 4.0), 1.0).unwrap(),
        )
        .unwrap();
        let g = augment(&p4).unwrap().evaluate(&[3.0]).unwrap();
        assert!((g[1] - 1.5).abs() < 1e-15);
        assert!(augment(&identity_problem(vec![1.0], 0.0)).is_err());
    }

    #[test]
    fn augmented_misfit_equals_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, _) = random_linear(&mut rng, 7, 3, true);
        let aug = augment(&p).unwrap();
        for _ in 0..100 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = potential(&p, &u).unwrap();
            let b = aug.misfit(&u).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn whiten_examples() {
        let p = identity_problem(vec![1.0], 1.0);
        assert_eq!(whiten(&p).unwrap().data(), p.data());
        let p4 = InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::identity(1, 1))),
            vec![2.0],
            NoiseModel::Diagonal(vec![4.0]),
            PriorModel::isotropic(1, 1.0).unwrap(),
        )
        .unwrap();
        let w = whiten(&p4).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert!(w.noise().is_identity());
        assert!(whiten(&InverseProblem {
            noise: NoiseModel::Diagonal(vec![-1.0]),
            ..p4
        })
        .is_err());
    }

    #[test]
    fn whitening_preserves_potential_and_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (p, a) = random_linear(&mut rng, 6, 2, true);
            let w = whiten(&p).unwrap();
            for _ in 0..5 {
                let u: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (a0, a1) = (potential(&p, &u).unwrap(), potential(&w, &u).unwrap());
                assert!((a0 - a1).abs() <= 1e-12 * a0.max(1.0));
            }
            let gamma_inv_sqrt = DMatrix::from_diagonal(&DVector::from_vec(match p.noise() {
                NoiseModel::Diagonal(s) => s.iter().map(|v| 1.0 / libm::sqrt(*v)).collect(),
                _ => unreachable!(),
            }));
            let u0 = tikhonov_solution(&p, &a).unwrap();
            let u1 = tikhonov_solution(&w, &(gamma_inv_sqrt * &a)).unwrap();
            for (x, y) in u0.iter().zip(u1.iter()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tikhonov_examples() {
        let u =
            tikhonov_solution(&identity_problem(vec![2.0], 1.0), &DMatrix::identity(1, 1)).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        let p = identity_problem(vec![0.5, -0.25], 1e-12);
        let u = tikhonov_solution(&p, &DMatrix::identity(2, 2)).unwrap();
        assert!(((u[0] - 0.5).powi(2) + (u[1] + 0.25).powi(2)).sqrt() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, a) = random_linear(&mut rng, 10, 2, true);
        let u = tikhonov_solution(&p, &a).unwrap();
        let g = linear_potential_gradient(&p, &a, &u).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
    }

    #[test]
    fn potential_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p, _) = random_linear(&mut rng, 5, 2, false);
        for _ in 0..50 {
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert!(potential(&p, &u).unwrap() >= 0.0);
        }
    }

    #[test]
    fn noise_restriction_respects_blocks() {
        let n = NoiseModel::Blocks(vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3) * 2.0]);
        assert_eq!(n.restrict(2, 5).unwrap().dim(), 3);
        assert!(n.restrict(1, 5).is_err());
        assert_eq!(
            NoiseModel::Diagonal(vec![1.0, 2.0, 3.0])
                .restrict(1, 3)
                .unwrap(),
            NoiseModel::Diagonal(vec![2.0, 3.0])
        );
    }
}
