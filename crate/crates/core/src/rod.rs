//! Discrete Cosserat rod with one clamped end.
//!
//! Nodes carry mass, position and velocity; elements carry a director frame
//! `Q` (rows `d1, d2, d3` in lab coordinates, so `Q` maps lab to local
//! coordinates), a local angular velocity `ω` and a rest length. The clamp
//! fixes node 0 and acts on element 0 through a fixed boundary frame placed
//! half an element before it.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::error::{config_err, ForwardError, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RodConfig {
    /// Rest length `L` [m].
    pub rest_length: f64,
    /// Cross-section radius [m].
    pub radius: f64,
    pub n_elements: usize,
    /// Volumetric density [kg/m³].
    pub density: f64,
    /// Young's modulus [Pa].
    pub youngs_modulus: f64,
    /// Shear modulus [Pa].
    pub shear_modulus: f64,
    pub shear_correction: f64,
    /// Force on the free end [N].
    pub tip_force: [f64; 3],
    /// Gravitational acceleration [N/kg].
    pub gravity: [f64; 3],
    /// Velocity damping rate ν [1/s].
    pub damping: f64,
    /// Requested time step [s]; solves use the smaller of this and the stability bound.
    pub dt: f64,
    pub t_end: f64,
    /// Direction of the undeformed rod from the clamp.
    pub axis: [f64; 3],
    /// Position of the clamped end [m].
    pub origin: [f64; 3],
    /// Smallest accepted `L / r`.
    pub min_slenderness: f64,
}

impl Default for RodConfig {
    fn default() -> Self {
        let youngs_modulus = 2.0e6;
        Self {
            rest_length: 0.3,
            radius: 0.015,
            n_elements: 12,
            density: 1000.0,
            youngs_modulus,
            shear_modulus: youngs_modulus / 3.0,
            shear_correction: 4.0 / 3.0,
            tip_force: [0.0, 1.6, 0.0],
            gravity: [0.0, -9.81, 0.0],
            damping: 26.0,
            dt: 1.5e-4,
            t_end: 1.0,
            axis: [1.0, 0.0, 0.0],
            origin: [0.0, 0.0, 0.0],
            min_slenderness: 20.0,
        }
    }
}

impl RodConfig {
    pub fn element_length(&self) -> f64 {
        self.rest_length / self.n_elements as f64
    }

    /// `0.3 · (L/n) · sqrt(ρ/E)`.
    pub fn stability_bound(&self) -> f64 {
        0.3 * self.element_length() * libm::sqrt(self.density / self.youngs_modulus)
    }

    /// Step actually used: the requested step, the stability bound and the
    /// rotational bound `0.3 · 2r · sqrt(ρ/E)`, shrunk to divide `t_end` evenly.
    pub fn effective_dt(&self) -> (f64, usize) {
        let rot = 0.3 * 2.0 * self.radius * libm::sqrt(self.density / self.youngs_modulus);
        let h = self.dt.min(self.stability_bound()).min(rot);
        let steps = libm::ceil(self.t_end / h).max(1.0) as usize;
        (self.t_end / steps as f64, steps)
    }

    fn check_geometry(&self) -> Result<()> {
        if self.n_elements < 4 {
            return Err(config_err!(
                "rod needs at least 4 elements, got {}",
                self.n_elements
            ));
        }
        if !(self.rest_length > 0.0) || !(self.radius > 0.0) {
            return Err(config_err!("rod length and radius must be positive"));
        }
        if self.rest_length / self.radius < self.min_slenderness {
            return Err(config_err!(
                "rod is not slender: L/r = {} is below {}",
                self.rest_length / self.radius,
                self.min_slenderness
            ));
        }
        let a = Vector3::from(self.axis);
        if !(a.norm() > 0.0) {
            return Err(config_err!("rod axis must be nonzero"));
        }
        Ok(())
    }

    /// Full validation, including the step bound.
    pub fn validate(&self) -> Result<()> {
        self.check_geometry()?;
        self.check_material()?;
        if !(self.dt > 0.0) || self.dt > self.stability_bound() {
            return Err(config_err!(
                "rod time step {} exceeds the stability bound {}",
                self.dt,
                self.stability_bound()
            ));
        }
        Ok(())
    }

    fn check_material(&self) -> Result<()> {
        let positive = [
            self.density,
            self.youngs_modulus,
            self.shear_modulus,
            self.shear_correction,
            self.t_end,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(config_err!(
                "rod density, moduli, shear correction and t_end must be positive"
            ));
        }
        if !(self.damping >= 0.0) {
            return Err(config_err!("rod damping must be nonnegative"));
        }
        let all = self
            .tip_force
            .iter()
            .chain(&self.gravity)
            .chain(&self.origin);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(config_err!("rod loads must be finite"));
        }
        Ok(())
    }

    /// The same rod with another density and Young's modulus; the shear
    /// modulus follows `E` at a fixed Poisson ratio.
    pub fn with_material(&self, density: f64, youngs_modulus: f64) -> Self {
        let mut c = self.clone();
        c.shear_modulus = self.shear_modulus * youngs_modulus / self.youngs_modulus;
        c.density = density;
        c.youngs_modulus = youngs_modulus;
        c
    }
}

/// Cross-section and stiffness data.
#[derive(Debug, Clone, PartialEq)]
pub struct RodStiffness {
    /// Diagonal of `B = diag(E I1, E I2, G I3)` [N·m²].
    pub bending: Vector3<f64>,
    /// Diagonal of `S = diag(α_c G A, α_c G A, E A)` [N].
    pub shear: Vector3<f64>,
    pub area: f64,
    pub second_moments: Vector3<f64>,
    /// Mass per unit length `ρ A` [kg/m].
    pub line_density: f64,
}

impl RodStiffness {
    pub fn from_config(cfg: &RodConfig) -> Self {
        let r = cfg.radius;
        let area = core::f64::consts::PI * r * r;
        let i1 = area * r * r / 4.0;
        let second_moments = Vector3::new(i1, i1, 2.0 * i1);
        let (e, g) = (cfg.youngs_modulus, cfg.shear_modulus);
        Self {
            bending: Vector3::new(e * i1, e * i1, g * 2.0 * i1),
            shear: Vector3::new(
                cfg.shear_correction * g * area,
                cfg.shear_correction * g * area,
                e * area,
            ),
            area,
            second_moments,
            line_density: cfg.density * area,
        }
    }

    /// Bending stiffness at stretch `e`, `B / e²`.
    pub fn bending_at(&self, e: f64) -> Vector3<f64> {
        self.bending / (e * e)
    }

    /// Shear stiffness at stretch `e`, `S / e`.
    pub fn shear_at(&self, e: f64) -> Vector3<f64> {
        self.shear / e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodState {
    pub node_positions: Vec<Vector3<f64>>,
    pub node_velocities: Vec<Vector3<f64>>,
    pub directors: Vec<Matrix3<f64>>,
    pub angular_velocities: Vec<Vector3<f64>>,
    /// Fixed frame of the clamp.
    pub clamp_frame: Matrix3<f64>,
    pub rest_element_length: f64,
    pub time: f64,
    pub steps: usize,
}

fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `exp([φ]×)` by Rodrigues' formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = phi.norm_squared();
    let th = libm::sqrt(th2);
    let (a, b) = if th < 1e-4 {
        (
            1.0 - th2 / 6.0 + th2 * th2 / 120.0,
            0.5 - th2 / 24.0 + th2 * th2 / 720.0,
        )
    } else {
        (libm::sin(th) / th, (1.0 - libm::cos(th)) / th2)
    };
    let k = hat(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `R`, the inverse of [`so3_exp`] for angles below π.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sn = s.norm();
    let th = libm::atan2(sn, c);
    if sn < 1e-6 && c < 0.0 {
        // Near π the skew part vanishes; recover the axis from the symmetric part.
        let m = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
        let (mut best, mut col) = (0usize, 0.0);
        for k in 0..3 {
            if m[(k, k)] > col {
                col = m[(k, k)];
                best = k;
            }
        }
        let mut axis = m.column(best).into_owned();
        axis /= axis.norm();
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
        return axis * th;
    }
    let f = if th < 1e-4 {
        1.0 + th * th / 6.0 + 7.0 * th * th * th * th / 360.0
    } else {
        th / libm::sin(th)
    };
    s * f
}

/// Coefficient of `[φ]×²` in the inverse left Jacobian of SO(3).
fn jacobian_c2(th: f64) -> f64 {
    if th < 1e-3 {
        let t2 = th * th;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (th * th) - (1.0 + libm::cos(th)) / (2.0 * th * libm::sin(th))
    }
}

fn frame_for_axis(axis: &Vector3<f64>) -> Matrix3<f64> {
    let d3 = axis / axis.norm();
    let helper = if d3.z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let mut d1 = helper - d3 * helper.dot(&d3);
    d1 /= d1.norm();
    let d2 = d3.cross(&d1);
    Matrix3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()])
}

/// Straight rod at rest with uniform node spacing and aligned directors.
pub fn build_rod(cfg: &RodConfig) -> Result<RodState> {
    cfg.check_geometry()?;
    let n = cfg.n_elements;
    let h = cfg.element_length();
    let axis = Vector3::from(cfg.axis);
    let dir = axis / axis.norm();
    let origin = Vector3::from(cfg.origin);
    let q = frame_for_axis(&axis);
    Ok(RodState {
        node_positions: (0..=n).map(|i| origin + dir * (h * i as f64)).collect(),
        node_velocities: alloc::vec![Vector3::zeros(); n + 1],
        directors: alloc::vec![q; n],
        angular_velocities: alloc::vec![Vector3::zeros(); n],
        clamp_frame: q,
        rest_element_length: h,
        time: 0.0,
        steps: 0,
    })
}

impl RodState {
    pub fn n_elements(&self) -> usize {
        self.directors.len()
    }

    pub fn tip(&self) -> Vector3<f64> {
        *self.node_positions.last().unwrap()
    }

    fn tangent(&self, e: usize) -> Vector3<f64> {
        self.node_positions[e + 1] - self.node_positions[e]
    }

    /// Stretch `e = l/l̂` per element.
    pub fn stretch(&self) -> Vec<f64> {
        (0..self.n_elements())
            .map(|e| self.tangent(e).norm() / self.rest_element_length)
            .collect()
    }

    /// Shear/stretch strain `σ = Q t / l̂ - e3` per element, in local coordinates.
    pub fn shear_strain(&self) -> Vec<Vector3<f64>> {
        (0..self.n_elements())
            .map(|e| self.directors[e] * self.tangent(e) / self.rest_element_length - Vector3::z())
            .collect()
    }

    /// Curvature `κ = -log(Q_{k+1} Q_kᵀ)^∨ / l̂` at the interior Voronoi regions.
    pub fn curvature(&self) -> Vec<Vector3<f64>> {
        self.directors
            .windows(2)
            .map(|w| -so3_log(&(w[1] * w[0].transpose())) / self.rest_element_length)
            .collect()
    }

    /// Centerline length.
    pub fn length(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.tangent(e).norm()).sum()
    }

    /// Largest `‖QᵀQ - Id‖_F` over the elements.
    pub fn orthonormality_defect(&self) -> f64 {
        self.directors
            .iter()
            .map(|q| (q.transpose() * q - Matrix3::identity()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.node_positions
            .iter()
            .chain(&self.node_velocities)
            .chain(&self.angular_velocities)
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self
                .directors
                .iter()
                .all(|q| q.iter().all(|x| x.is_finite()))
    }

    /// `(s, x, y, z)` per node, with `s` the reference arc length.
    pub fn snapshot(&self) -> Vec<[f64; 4]> {
        self.node_positions
            .iter()
            .enumerate()
            .map(|(i, p)| [i as f64 * self.rest_element_length, p.x, p.y, p.z])
            .collect()
    }
}

fn node_masses(stiff: &RodStiffness, n: usize, h: f64) -> Vec<f64> {
    let m = stiff.line_density * h;
    (0..=n)
        .map(|i| if i == 0 || i == n { 0.5 * m } else { m })
        .collect()
}

fn element_inertia(stiff: &RodStiffness, cfg: &RodConfig, h: f64) -> Vector3<f64> {
    stiff.second_moments * (cfg.density * h)
}

/// Kinetic energy, translational plus rotational.
pub fn kinetic_energy(state: &RodState, stiff: &RodStiffness, cfg: &RodConfig) -> f64 {
    let h = state.rest_element_length;
    let masses = node_masses(stiff, state.n_elements(), h);
    let j = element_inertia(stiff, cfg, h);
    let lin: f64 = state
        .node_velocities
        .iter()
        .zip(&masses)
        .map(|(v, m)| 0.5 * m * v.norm_squared())
        .sum();
    let rot: f64 = state
        .angular_velocities
        .iter()
        .map(|w| 0.5 * w.component_mul(&j).dot(w))
        .sum();
    lin + rot
}

/// Elastic energy `Σ ½ l̂ σᵀSσ + Σ ½ D̂ κᵀBκ`, the clamp region included.
pub fn elastic_energy(state: &RodState, stiff: &RodStiffness) -> f64 {
    let h = state.rest_element_length;
    let shear: f64 = state
        .shear_strain()
        .iter()
        .map(|s| 0.5 * h * s.component_mul(&stiff.shear).dot(s))
        .sum();
    let mut bend = 0.0;
    let mut add =
        |th: Vector3<f64>, d: f64| bend += 0.5 * th.component_mul(&stiff.bending).dot(&th) / d;
    add(
        so3_log(&(state.directors[0] * state.clamp_frame.transpose())),
        0.5 * h,
    );
    for w in state.directors.windows(2) {
        add(so3_log(&(w[1] * w[0].transpose())), h);
    }
    shear + bend
}

/// Kinetic plus elastic energy.
pub fn energy(state: &RodState, stiff: &RodStiffness, cfg: &RodConfig) -> f64 {
    kinetic_energy(state, stiff, cfg) + elastic_energy(state, stiff)
}

/// Reusable buffers and constants of a solve.
struct Stepper {
    masses: Vec<f64>,
    inertia: Vector3<f64>,
    forces: Vec<Vector3<f64>>,
    torques: Vec<Vector3<f64>>,
    gravity: Vector3<f64>,
    tip_force: Vector3<f64>,
}

impl Stepper {
    fn new(state: &RodState, stiff: &RodStiffness, cfg: &RodConfig) -> Self {
        let n = state.n_elements();
        let h = state.rest_element_length;
        Self {
            masses: node_masses(stiff, n, h),
            inertia: element_inertia(stiff, cfg, h),
            forces: alloc::vec![Vector3::zeros(); n + 1],
            torques: alloc::vec![Vector3::zeros(); n],
            gravity: Vector3::from(cfg.gravity),
            tip_force: Vector3::from(cfg.tip_force),
        }
    }

    /// Bending torques on the frames left and right of a Voronoi region.
    fn bending_pair(
        q_left: &Matrix3<f64>,
        q_right: &Matrix3<f64>,
        b: &Vector3<f64>,
        d: f64,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let th = -so3_log(&(q_right * q_left.transpose()));
        let m = b.component_mul(&th) / d;
        let c2 = jacobian_c2(th.norm());
        let half = th.cross(&m) * 0.5;
        let second = th.cross(&th.cross(&m)) * c2;
        (m + half + second, -m + half - second)
    }

    fn compute(&mut self, s: &RodState, stiff: &RodStiffness) {
        let n = s.n_elements();
        let h = s.rest_element_length;
        for (f, m) in self.forces.iter_mut().zip(&self.masses) {
            *f = self.gravity * *m;
        }
        self.forces[n] += self.tip_force;
        for e in 0..n {
            let t = s.node_positions[e + 1] - s.node_positions[e];
            let q = &s.directors[e];
            let qt = q * t;
            let sigma = qt / h - Vector3::z();
            let n_local = stiff.shear.component_mul(&sigma);
            let n_lab = q.transpose() * n_local;
            self.forces[e] += n_lab;
            self.forces[e + 1] -= n_lab;
            self.torques[e] = qt.cross(&n_local);
        }
        let (_, right) =
            Self::bending_pair(&s.clamp_frame, &s.directors[0], &stiff.bending, 0.5 * h);
        self.torques[0] += right;
        for k in 0..n - 1 {
            let (left, right) =
                Self::bending_pair(&s.directors[k], &s.directors[k + 1], &stiff.bending, h);
            self.torques[k] += left;
            self.torques[k + 1] += right;
        }
    }

    fn drift(s: &mut RodState, dt: f64) {
        for (x, v) in s.node_positions.iter_mut().zip(&s.node_velocities).skip(1) {
            *x += v * dt;
        }
        for (q, w) in s.directors.iter_mut().zip(&s.angular_velocities) {
            *q = so3_exp(&(w * -dt)) * *q;
        }
    }

    fn step(&mut self, s: &mut RodState, stiff: &RodStiffness, dt: f64, damping: f64) {
        Self::drift(s, 0.5 * dt);
        self.compute(s, stiff);
        let decay = libm::exp(-damping * dt);
        for i in 1..s.node_velocities.len() {
            let v = &mut s.node_velocities[i];
            *v = (*v + self.forces[i] * (dt / self.masses[i])) * decay;
        }
        for (w, tau) in s.angular_velocities.iter_mut().zip(&self.torques) {
            let jw = w.component_mul(&self.inertia);
            let rhs = tau + jw.cross(w);
            *w = (*w + rhs.component_div(&self.inertia) * dt) * decay;
        }
        Self::drift(s, 0.5 * dt);
        s.time += dt;
        s.steps += 1;
    }
}

fn diverged(s: &RodState, scale: f64) -> bool {
    !s.is_finite() || s.node_positions.iter().any(|x| x.norm() > scale)
}

/// One position-Verlet step of length `dt`.
pub fn step(
    state: &RodState,
    stiff: &RodStiffness,
    cfg: &RodConfig,
    dt: f64,
) -> core::result::Result<RodState, ForwardError> {
    let mut s = state.clone();
    let mut st = Stepper::new(&s, stiff, cfg);
    st.step(&mut s, stiff, dt, cfg.damping);
    if diverged(&s, divergence_scale(cfg)) {
        return Err(ForwardError::Diverged { step: s.steps });
    }
    Ok(s)
}

fn divergence_scale(cfg: &RodConfig) -> f64 {
    Vector3::from(cfg.origin).norm() + 100.0 * cfg.rest_length
}

/// Outcome of a rod solve with its energy record.
#[derive(Debug, Clone, PartialEq)]
pub struct RodSolution {
    pub state: RodState,
    pub peak_kinetic: f64,
    pub final_kinetic: f64,
    pub dt: f64,
}

/// Runs `cfg` from rest to `t_end`, calling `observe` every `every` steps.
pub fn simulate(
    cfg: &RodConfig,
    every: usize,
    mut observe: impl FnMut(&RodState, &RodStiffness),
) -> core::result::Result<RodSolution, ForwardError> {
    cfg.check_geometry()
        .map_err(|e| ForwardError::Domain(alloc::format!("{e}")))?;
    cfg.check_material()
        .map_err(|e| ForwardError::Domain(alloc::format!("{e}")))?;
    let stiff = RodStiffness::from_config(cfg);
    let mut s = build_rod(cfg).map_err(|e| ForwardError::Domain(alloc::format!("{e}")))?;
    let (dt, steps) = cfg.effective_dt();
    let mut st = Stepper::new(&s, &stiff, cfg);
    let scale = divergence_scale(cfg);
    let mut peak = 0.0f64;
    let check = 32;
    for k in 1..=steps {
        st.step(&mut s, &stiff, dt, cfg.damping);
        if k % check == 0 || k == steps {
            if diverged(&s, scale) {
                return Err(ForwardError::Diverged { step: k });
            }
            peak = peak.max(kinetic_energy(&s, &stiff, cfg));
        }
        if every > 0 && k % every == 0 {
            observe(&s, &stiff);
        }
    }
    let final_kinetic = kinetic_energy(&s, &stiff, cfg);
    Ok(RodSolution {
        state: s,
        peak_kinetic: peak,
        final_kinetic,
        dt,
    })
}

/// The rod with density `u[0]` and Young's modulus `u[1]`, integrated to `t_end`.
pub fn solve_rod(u: &[f64], cfg: &RodConfig) -> core::result::Result<RodState, ForwardError> {
    if u.len() != 2 {
        return Err(ForwardError::Domain(alloc::format!(
            "expected (density, modulus), got {} values",
            u.len()
        )));
    }
    if !(u[0] > 0.0) || !(u[1] > 0.0) || !u[0].is_finite() || !u[1].is_finite() {
        return Err(ForwardError::Domain(alloc::format!(
            "density and modulus must be positive, got {:?}",
            u
        )));
    }
    simulate(&cfg.with_material(u[0], u[1]), 0, |_, _| {}).map(|sol| sol.state)
}
