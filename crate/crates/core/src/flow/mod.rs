//! Continuous-time systems `x' = X(x, mu)` with an invariant hypersurface.
//!
//! Flows are integrated with fixed-step RK4, optionally together with the
//! variational equation `Phi' = D_x X(phi(t)) Phi`. A time-`t` map wraps the
//! flow as a [`MapFamily`] so the discrete machinery applies unchanged.

mod gronwall;
mod conditions;

pub use gronwall::{
    gronwall_bounds, gronwall_table, write_gronwall_csv, GronwallBounds, GronwallParams,
    GronwallRow, PrintedReading,
};
pub use conditions::{
    check_flow_conditions, find_flow_mu_star, gronwall_domination, verify_invariance_across_t,
    FlowCondition, FlowConditionVerdict, InvarianceAcrossT, FlowCheckConfig, FlowVerdict,
    DEFAULT_TIMES,
};

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynsys::{spectral_norm, MapFamily, TUBE_SLACK};
use crate::error::{Error, Result};
use crate::geometry::{ReferenceManifold, TubularPoint};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;
const FIELD_FD_STEP: f64 = 1e-6;
const COMPONENT_FD_STEP: f64 = 1e-5;

/// A family of vector fields tangent to a reference manifold.
///
/// Evaluators must be pure and callable from several threads.
pub trait VectorField: Send + Sync {
    fn name(&self) -> String;

    fn manifold(&self) -> &ReferenceManifold;

    fn ambient_dim(&self) -> usize {
        self.manifold().ambient_dim()
    }

    fn mu_range(&self) -> (f64, f64);

    fn tube_radius(&self) -> f64;

    /// Writes `X(x, mu)` into `out`.
    fn eval(&self, x: &[f64], mu: f64, out: &mut [f64]);

    /// Writes the row-major Jacobian `D_x X` into `out`; returns false if the
    /// field has no closed form, in which case central differences are used.
    fn jacobian(&self, _x: &[f64], _mu: f64, _out: &mut [f64]) -> bool {
        false
    }
}

/// `x' = (mu r - r^3) x / |x| + Omega x` around the unit sphere, `r = |x| - 1`.
///
/// `Omega` is skew, so the tangential motion is a rigid rotation and the
/// radial motion is the scalar pitchfork `r' = mu r - r^3`.
#[derive(Clone, Debug)]
pub struct ModelField {
    manifold: ReferenceManifold,
    omega: DMatrix<f64>,
    alpha: f64,
    mu_bound: f64,
}

impl ModelField {
    /// Unit-speed rotation of the circle.
    pub fn planar() -> Self {
        Self {
            manifold: ReferenceManifold::circle(),
            omega: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            alpha: crate::geometry::DEFAULT_ALPHA,
            mu_bound: crate::dynsys::CANONICAL_MU_BOUND,
        }
    }

    /// Unit-speed rotation of the sphere about the third axis.
    pub fn spatial() -> Self {
        Self {
            manifold: ReferenceManifold::sphere(),
            omega: DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            alpha: crate::geometry::DEFAULT_ALPHA,
            mu_bound: crate::dynsys::CANONICAL_MU_BOUND,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Closed-form radial offset at time `t` from `r0`.
    pub fn radial_solution(mu: f64, r0: f64, t: f64) -> f64 {
        if r0 == 0.0 {
            return 0.0;
        }
        let inv_sq = if mu == 0.0 {
            1.0 / (r0 * r0) + 2.0 * t
        } else {
            (1.0 / (r0 * r0) - 1.0 / mu) * (-2.0 * mu * t).exp() + 1.0 / mu
        };
        r0.signum() / inv_sq.sqrt()
    }
}

impl VectorField for ModelField {
    fn name(&self) -> String {
        format!("model-field(R^{})", self.ambient_dim())
    }

    fn manifold(&self) -> &ReferenceManifold {
        &self.manifold
    }

    fn mu_range(&self) -> (f64, f64) {
        (-self.mu_bound, self.mu_bound)
    }

    fn tube_radius(&self) -> f64 {
        self.alpha
    }

    fn eval(&self, x: &[f64], mu: f64, out: &mut [f64]) {
        let m = x.len();
        let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rho - 1.0;
        let a = (mu * r - r * r * r) / rho;
        for i in 0..m {
            let mut rot = 0.0;
            for j in 0..m {
                rot += self.omega[(i, j)] * x[j];
            }
            out[i] = a * x[i] + rot;
        }
    }

    fn jacobian(&self, x: &[f64], mu: f64, out: &mut [f64]) -> bool {
        let m = x.len();
        let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rho - 1.0;
        let a = mu * r - r * r * r;
        let da = mu - 3.0 * r * r;
        // D[a(rho) x / rho] = (a / rho) I + (da - a / rho) x x^T / rho^2
        let k = (da - a / rho) / (rho * rho);
        for i in 0..m {
            for j in 0..m {
                let id = if i == j { a / rho } else { 0.0 };
                out[i * m + j] = id + k * x[i] * x[j] + self.omega[(i, j)];
            }
        }
        true
    }
}

/// A field given by closures.
#[derive(Clone)]
pub struct ClosureField {
    name: String,
    manifold: ReferenceManifold,
    mu_range: (f64, f64),
    alpha: f64,
    eval: Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>,
}

impl fmt::Debug for ClosureField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosureField({})", self.name)
    }
}

impl ClosureField {
    pub fn new<F>(
        name: impl Into<String>,
        manifold: ReferenceManifold,
        mu_range: (f64, f64),
        alpha: f64,
        eval: F,
    ) -> Self
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            manifold,
            mu_range,
            alpha,
            eval: Arc::new(eval),
        }
    }
}

impl VectorField for ClosureField {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn manifold(&self) -> &ReferenceManifold {
        &self.manifold
    }

    fn mu_range(&self) -> (f64, f64) {
        self.mu_range
    }

    fn tube_radius(&self) -> f64 {
        self.alpha
    }

    fn eval(&self, x: &[f64], mu: f64, out: &mut [f64]) {
        (self.eval)(x, mu, out)
    }
}

/// Row-major Jacobian of the field, from its closed form or central differences.
fn field_jacobian(field: &dyn VectorField, x: &[f64], mu: f64, out: &mut [f64], work: &mut [f64]) {
    if field.jacobian(x, mu, out) {
        return;
    }
    let m = x.len();
    let (xp, rest) = work.split_at_mut(m);
    let (fp, fm) = rest.split_at_mut(m);
    xp.copy_from_slice(x);
    for j in 0..m {
        let h = FIELD_FD_STEP * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        field.eval(xp, mu, fp);
        xp[j] = x[j] - h;
        field.eval(xp, mu, &mut fm[..m]);
        xp[j] = x[j];
        for i in 0..m {
            out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Fixed-step RK4 settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { step: DEFAULT_STEP }
    }
}

fn step_count(t: f64, h: f64) -> usize {
    ((t.abs() / h).ceil() as usize).max(1)
}

/// Classical RK4 on `state` over `steps` steps of size `dt`; `after` runs after every step.
fn rk4<F, C>(state: &mut [f64], dt: f64, steps: usize, mut rhs: F, mut after: C) -> Result<()>
where
    F: FnMut(&[f64], &mut [f64]),
    C: FnMut(&[f64]) -> Result<()>,
{
    let n = state.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        rhs(state, &mut k1);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * dt * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * dt * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = state[i] + dt * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..n {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        after(state)?;
    }
    Ok(())
}

/// Rejects forward trajectories that start in the tube and leave it.
fn tube_guard<'a>(
    field: &'a dyn VectorField,
    x0: &DVector<f64>,
    t: f64,
    m: usize,
) -> Result<impl FnMut(&[f64]) -> Result<()> + 'a> {
    let alpha = field.tube_radius();
    let man = field.manifold();
    let active = t > 0.0 && man.signed_distance(x0)?.abs() <= alpha + TUBE_SLACK;
    let sphere = man.is_unit_sphere();
    Ok(move |state: &[f64]| {
        if !active {
            return Ok(());
        }
        let x = &state[..m];
        let r = if sphere {
            x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0
        } else {
            man.signed_distance(&DVector::from_column_slice(x))?
        };
        if r.abs() > alpha + TUBE_SLACK {
            return Err(Error::LeftTube { r, alpha });
        }
        Ok(())
    })
}

/// `phi(t, x0, mu)`. Forward trajectories starting in the tube must stay there; backward ones are not confined.
pub fn integrate_flow(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    mu: f64,
    t: f64,
    config: &IntegratorConfig,
) -> Result<DVector<f64>> {
    let m = check_dim(field, x0)?;
    let mut state: Vec<f64> = x0.iter().copied().collect();
    if t == 0.0 {
        return Ok(x0.clone());
    }
    let steps = step_count(t, config.step);
    rk4(
        &mut state,
        t / steps as f64,
        steps,
        |x, out| field.eval(x, mu, out),
        tube_guard(field, x0, t, m)?,
    )?;
    Ok(DVector::from_vec(state))
}

fn check_dim(field: &dyn VectorField, x: &DVector<f64>) -> Result<usize> {
    let m = field.ambient_dim();
    if x.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: x.len(),
        });
    }
    Ok(m)
}

/// `phi(t, x0, mu)` and `D_x phi(t, x0, mu)` from the variational equation.
pub fn flow_with_jacobian(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    mu: f64,
    t: f64,
    config: &IntegratorConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = check_dim(field, x0)?;
    if t == 0.0 {
        return Ok((x0.clone(), DMatrix::identity(m, m)));
    }
    let mut state = vec![0.0; m + m * m];
    state[..m].copy_from_slice(x0.as_slice());
    for i in 0..m {
        state[m + i * m + i] = 1.0;
    }
    let mut jac = vec![0.0; m * m];
    let mut work = vec![0.0; 3 * m];
    let steps = step_count(t, config.step);
    rk4(
        &mut state,
        t / steps as f64,
        steps,
        |s, out| {
            let (x, phi) = s.split_at(m);
            field.eval(x, mu, &mut out[..m]);
            field_jacobian(field, x, mu, &mut jac, &mut work);
            for i in 0..m {
                for j in 0..m {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += jac[i * m + k] * phi[k * m + j];
                    }
                    out[m + i * m + j] = acc;
                }
            }
        },
        tube_guard(field, x0, t, m)?,
    )?;
    let x = DVector::from_column_slice(&state[..m]);
    let phi = DMatrix::from_row_slice(m, m, &state[m..]);
    Ok((x, phi))
}

/// `D_x phi(t, x0, mu)`, with `Phi(0) = I`.
pub fn variational_jacobian(
    field: &dyn VectorField,
    mu: f64,
    x0: &DVector<f64>,
    t: f64,
    config: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    flow_with_jacobian(field, x0, mu, t, config).map(|(_, j)| j)
}

/// Step-halving error estimate `|phi_h - phi_{h/2}| / 15` for RK4.
pub fn richardson_error(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    mu: f64,
    t: f64,
    config: &IntegratorConfig,
) -> Result<f64> {
    let coarse = integrate_flow(field, x0, mu, t, config)?;
    let half = IntegratorConfig {
        step: 0.5 * config.step,
    };
    let fine = integrate_flow(field, x0, mu, t, &half)?;
    Ok((coarse - fine).norm() / 15.0)
}

/// Samples `phi(t_k, x0)` at `t_k = k t / samples`.
pub fn sample_trajectory(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    mu: f64,
    t: f64,
    samples: usize,
    config: &IntegratorConfig,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let samples = samples.max(1);
    let dt = t / samples as f64;
    let mut out = Vec::with_capacity(samples + 1);
    let mut x = x0.clone();
    out.push((0.0, x.clone()));
    for k in 1..=samples {
        x = integrate_flow(field, &x, mu, dt, config)?;
        out.push((k as f64 * dt, x.clone()));
    }
    Ok(out)
}

/// Writes `t, x1..xm, r, y1..ym` rows.
pub fn write_trajectory_csv<W: Write>(
    w: W,
    manifold: &ReferenceManifold,
    samples: &[(f64, DVector<f64>)],
) -> Result<()> {
    let fail = |e: csv::Error| Error::InvalidInput(format!("csv output failed: {e}"));
    let m = manifold.ambient_dim();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|k| format!("x{k}")));
    header.push("r".into());
    header.extend((1..=m).map(|k| format!("y{k}")));
    out.write_record(&header).map_err(fail)?;
    for (t, x) in samples {
        let p = manifold.project(x)?;
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.push(p.r.to_string());
        row.extend(p.y.iter().map(|v| v.to_string()));
        out.write_record(&row).map_err(fail)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Tubular split of the field at a point: normal rate `R`, tangential rate `Y`
/// (in the tangent frame at `y`) and their derivative blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldComponents {
    pub r_rate: f64,
    pub y_rate: DVector<f64>,
    pub drr: f64,
    pub dyr: DMatrix<f64>,
    pub dry: DMatrix<f64>,
    pub dyy: DMatrix<f64>,
}

impl FieldComponents {
    pub fn dyr_norm(&self) -> f64 {
        spectral_norm(&self.dyr)
    }

    pub fn dry_norm(&self) -> f64 {
        spectral_norm(&self.dry)
    }

    pub fn dyy_norm(&self) -> f64 {
        spectral_norm(&self.dyy)
    }
}

/// `(r', y')` at `x`, with `y'` as an ambient tangent vector.
pub fn tubular_rates(
    field: &dyn VectorField,
    x: &DVector<f64>,
    mu: f64,
) -> Result<(f64, DVector<f64>)> {
    let man = field.manifold();
    let mut v = DVector::zeros(x.len());
    field.eval(x.as_slice(), mu, v.as_mut_slice());
    if man.is_unit_sphere() {
        let rho = x.norm();
        let n = x / rho;
        let rr = v.dot(&n);
        return Ok((rr, (&v - &n * rr) / rho));
    }
    let h = COMPONENT_FD_STEP / v.norm().max(1.0);
    let plus = man.project(&(x + &v * h))?;
    let minus = man.project(&(x - &v * h))?;
    Ok(((plus.r - minus.r) / (2.0 * h), (plus.y - minus.y) / (2.0 * h)))
}

/// Derivative blocks of `(R, Y)` at `p` by central differences in tubular coordinates.
pub fn field_components(
    field: &dyn VectorField,
    p: &TubularPoint,
    mu: f64,
) -> Result<FieldComponents> {
    let man = field.manifold();
    let e = man.tangent_frame(&p.y);
    let k = e.ncols();
    let h = COMPONENT_FD_STEP;
    let at = |r: f64, y: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (rr, yr) = tubular_rates(field, &man.embed(&TubularPoint::new(r, y.clone())), mu)?;
        Ok((rr, e.transpose() * yr))
    };
    let (r_rate, y_rate) = at(p.r, &p.y)?;
    let (rp, yp) = at(p.r + h, &p.y)?;
    let (rm, ym) = at(p.r - h, &p.y)?;
    let drr = (rp - rm) / (2.0 * h);
    let dry = DMatrix::from_column_slice(k, 1, ((yp - ym) / (2.0 * h)).as_slice());
    let mut dyr = DMatrix::zeros(1, k);
    let mut dyy = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = e.column(j) * h;
        let yp = man.retract(&p.y, &step)?;
        let ym = man.retract(&p.y, &(-step))?;
        // the retraction is not an exact chart; scale by the realised base displacement
        let span = (e.transpose() * (&yp - &ym))[j];
        let (rp, vp) = at(p.r, &yp)?;
        let (rm, vm) = at(p.r, &ym)?;
        dyr[(0, j)] = (rp - rm) / span;
        dyy.set_column(j, &((vp - vm) / span));
    }
    Ok(FieldComponents {
        r_rate,
        y_rate,
        drr,
        dyr,
        dry,
        dyy,
    })
}

/// The time-`t` map `x -> phi(t, x, mu)` as a discrete family; its inverse integrates backwards.
#[derive(Clone)]
pub struct TimeTMap {
    field: Arc<dyn VectorField>,
    t: f64,
    config: IntegratorConfig,
}

impl fmt::Debug for TimeTMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TimeTMap({}, t = {})", self.field.name(), self.t)
    }
}

impl TimeTMap {
    pub fn new(field: Arc<dyn VectorField>, t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!("time must be positive, got {t}")));
        }
        if !(1.0..=2.0).contains(&t) {
            log::debug!("time-{t} map is outside [1, 2]; fine for diagnostics");
        }
        Ok(Self {
            field,
            t,
            config: IntegratorConfig::default(),
        })
    }

    pub fn with_config(mut self, config: IntegratorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }
}

impl MapFamily for TimeTMap {
    fn name(&self) -> String {
        format!("time-{} map of {}", self.t, self.field.name())
    }

    fn manifold(&self) -> &ReferenceManifold {
        self.field.manifold()
    }

    fn mu_range(&self) -> (f64, f64) {
        self.field.mu_range()
    }

    fn tube_radius(&self) -> f64 {
        self.field.tube_radius()
    }

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        integrate_flow(self.field.as_ref(), x, mu, self.t, &self.config)
    }

    fn inverse_support(&self) -> crate::dynsys::InverseSupport {
        crate::dynsys::InverseSupport::Analytic
    }

    fn analytic_inverse(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DVector<f64>>> {
        Some(integrate_flow(self.field.as_ref(), x, mu, -self.t, &self.config))
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DMatrix<f64>>> {
        Some(variational_jacobian(self.field.as_ref(), mu, x, self.t, &self.config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{apply_inverse, fd_jacobian, split_components};

    fn at(r: f64, angle: f64) -> DVector<f64> {
        DVector::from_column_slice(&[(1.0 + r) * angle.cos(), (1.0 + r) * angle.sin()])
    }

    #[test]
    fn radial_motion_matches_closed_form() {
        let f = ModelField::planar();
        let x = integrate_flow(&f, &at(0.1, 0.3), 0.02, 50.0, &IntegratorConfig::default()).unwrap();
        let r = x.norm() - 1.0;
        let exact = (0.02 / (1.0 + (0.02 / 0.01 - 1.0) * (-2.0 * 0.02 * 50.0f64).exp())).sqrt();
        assert!((r - exact).abs() <= 1e-6);
        assert!((r - ModelField::radial_solution(0.02, 0.1, 50.0)).abs() < 1e-10);
        // the angle advances at unit speed
        let angle = x[1].atan2(x[0]);
        let expected = (0.3 + 50.0f64).rem_euclid(std::f64::consts::TAU);
        assert!((angle.rem_euclid(std::f64::consts::TAU) - expected).abs() < 1e-9);
    }

    #[test]
    fn manifold_is_invariant() {
        let f = ModelField::spatial();
        let x0 = DVector::from_column_slice(&[0.6, 0.0, 0.8]);
        for t in [1.0, 5.0, 25.0] {
            let x = integrate_flow(&f, &x0, 0.02, t, &IntegratorConfig::default()).unwrap();
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attraction_before_threshold_is_monotone() {
        let f = ModelField::planar();
        let traj =
            sample_trajectory(&f, &at(0.1, 0.0), -0.02, 40.0, 40, &IntegratorConfig::default()).unwrap();
        let radii: Vec<f64> = traj.iter().map(|(_, x)| x.norm() - 1.0).collect();
        assert!(radii.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn linear_field_gives_matrix_exponential() {
        let f = ClosureField::new("linear", ReferenceManifold::circle(), (-1.0, 1.0), 10.0, |x, _, out| {
            out[0] = -2.0 * x[0];
            out[1] = 0.1 * x[1];
        });
        let j = variational_jacobian(&f, 0.0, &at(0.0, 0.5), 1.0, &IntegratorConfig::default()).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[(-2.0f64).exp(), 0.0, 0.0, 0.1f64.exp()]);
        assert!((j - exact).amax() < 1e-9);
        let j0 = variational_jacobian(&f, 0.0, &at(0.0, 0.5), 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(j0, DMatrix::identity(2, 2));
    }

    #[test]
    fn variational_matches_differences() {
        let f = ModelField::spatial();
        let cfg = IntegratorConfig::default();
        let x0 = DVector::from_column_slice(&[0.7, 0.5, 0.6]);
        let j = variational_jacobian(&f, 0.02, &x0, 1.0, &cfg).unwrap();
        let d = fd_jacobian(|x| integrate_flow(&f, x, 0.02, 1.0, &cfg), &x0, 1e-5).unwrap();
        assert!((&j - &d).amax() / j.amax() < 1e-6);
    }

    #[test]
    fn radial_entry_on_manifold() {
        let f = ModelField::planar();
        for mu in [0.02, -0.02] {
            let x0 = at(0.0, 1.1);
            let j = variational_jacobian(&f, mu, &x0, 1.0, &IntegratorConfig::default()).unwrap();
            let x1 = integrate_flow(&f, &x0, mu, 1.0, &IntegratorConfig::default()).unwrap();
            let radial = (x1.transpose() * &j * &x0)[(0, 0)] / x1.norm();
            assert!((radial - mu.exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn time_map_components_and_group_property() {
        let field: Arc<dyn VectorField> = Arc::new(ModelField::planar());
        let one = TimeTMap::new(field.clone(), 1.0).unwrap();
        let two = TimeTMap::new(field, 2.0).unwrap();
        for mu in [0.02, -0.02] {
            let c = split_components(&one, &TubularPoint::on_manifold(at(0.0, 0.4)), mu).unwrap();
            assert!((c.drf - mu.exp()).abs() < 1e-10);
        }
        let x = at(0.12, 2.0);
        let composed = one.forward(&one.forward(&x, 0.02).unwrap(), 0.02).unwrap();
        assert!((composed - two.forward(&x, 0.02).unwrap()).norm() < 1e-12);
        let back = apply_inverse(&one, &one.forward(&x, 0.02).unwrap(), 0.02).unwrap();
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn richardson_estimate_is_tiny_for_smooth_fields() {
        let f = ModelField::planar();
        let e = richardson_error(&f, &at(0.15, 0.0), 0.02, 2.0, &IntegratorConfig::default()).unwrap();
        assert!(e < 1e-12);
    }

    #[test]
    fn leaving_the_tube_is_an_error() {
        let f = ModelField::planar().with_alpha(0.05);
        let err = integrate_flow(&f, &at(0.04, 0.0), 0.02, 20.0, &IntegratorConfig::default()).unwrap_err();
        assert!(matches!(err, Error::LeftTube { .. }));
    }

    #[test]
    fn model_field_components() {
        let f = ModelField::planar();
        for r in [-0.15, 0.0, 0.1] {
            let c = field_components(&f, &TubularPoint::new(r, at(0.0, 0.7)), 0.02).unwrap();
            assert!((c.drr - (0.02 - 3.0 * r * r)).abs() < 1e-8, "r = {r}");
            assert!((c.r_rate - (0.02 * r - r * r * r)).abs() < 1e-14);
            assert!(c.dyr_norm() < 1e-8 && c.dry_norm() < 1e-8 && c.dyy_norm() < 1e-8);
            assert!((c.y_rate[0].abs() - 1.0).abs() < 1e-12);
        }
        let s = ModelField::spatial();
        let y = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        assert!(field_components(&s, &TubularPoint::on_manifold(y), 0.02).unwrap().dyy_norm() > 0.5);
    }
}
