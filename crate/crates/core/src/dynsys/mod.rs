//! Discrete map families `F_mu` near an invariant hypersurface, split into a
//! normal component `f` and a base component `g`, together with their inverses.

mod canonical;
mod wrappers;

pub use canonical::{CanonicalFamily, SigmaProfile, CANONICAL_MU_BOUND};
pub use wrappers::{ClosureFamily, Compose, SideReversing};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldMesh, ReferenceManifold, TubularPoint};

/// Default central-difference step for Jacobian blocks.
pub const FD_STEP: f64 = 1e-5;
/// Slack when checking that an image stays in the tube.
pub const TUBE_SLACK: f64 = 1e-12;

const NEWTON_TOL: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseSupport {
    Analytic,
    Numeric,
    None,
}

/// A one-parameter family of diffeomorphisms leaving a reference manifold invariant.
///
/// Evaluators must be pure; they may be called from several threads at once.
pub trait MapFamily: Send + Sync {
    fn name(&self) -> String;

    fn manifold(&self) -> &ReferenceManifold;

    fn ambient_dim(&self) -> usize {
        self.manifold().ambient_dim()
    }

    /// Admissible parameter values, bounds included.
    fn mu_range(&self) -> (f64, f64);

    /// Radius `alpha` of the tube the family is declared on.
    fn tube_radius(&self) -> f64;

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>>;

    fn inverse_support(&self) -> InverseSupport {
        InverseSupport::Numeric
    }

    /// Closed-form inverse, if the family has one.
    fn analytic_inverse(&self, _x: &DVector<f64>, _mu: f64) -> Option<Result<DVector<f64>>> {
        None
    }

    /// Whether [`MapFamily::jacobian`] returns a value.
    fn has_jacobian(&self) -> bool {
        false
    }

    /// Closed-form ambient Jacobian, if the family has one.
    fn jacobian(&self, _x: &DVector<f64>, _mu: f64) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Closed-form component split with blocks, if the family has one.
    fn analytic_components(&self, _p: &TubularPoint, _mu: f64) -> Option<Result<ComponentEval>> {
        None
    }

    fn analytic_inverse_components(
        &self,
        _p: &TubularPoint,
        _mu: f64,
    ) -> Option<Result<ComponentEval>> {
        None
    }
}

/// Values and Jacobian blocks of a map written as `(r, y) -> (f, g)`.
///
/// Tangent blocks use the manifold's orthonormal frame at `y` (input) and at
/// `g` (output).
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentEval {
    pub f: f64,
    pub g: DVector<f64>,
    pub drf: f64,
    pub dyf: DVector<f64>,
    pub drg: DVector<f64>,
    pub dyg: DMatrix<f64>,
}

impl ComponentEval {
    pub fn dyf_norm(&self) -> f64 {
        self.dyf.norm()
    }

    pub fn drg_norm(&self) -> f64 {
        self.drg.norm()
    }

    pub fn dyg_norm(&self) -> f64 {
        spectral_norm(&self.dyg)
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (0, _) | (_, 0) => 0.0,
        (1, _) | (_, 1) => m.norm(),
        _ => m.singular_values().max(),
    }
}

/// Image of `x`, or of its preimage when `inverse` is set.
pub fn apply(family: &dyn MapFamily, x: &DVector<f64>, mu: f64, inverse: bool) -> Result<DVector<f64>> {
    if inverse {
        apply_inverse(family, x, mu)
    } else {
        family.forward(x, mu)
    }
}

/// `F_mu^{-1}(x)`: closed form if available, otherwise damped Newton from `x`.
pub fn apply_inverse(family: &dyn MapFamily, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    if let Some(res) = family.analytic_inverse(x, mu) {
        return res;
    }
    match family.inverse_support() {
        InverseSupport::None | InverseSupport::Analytic => Err(Error::NoInverseProvided),
        InverseSupport::Numeric => numeric_inverse(family, x, mu),
    }
}

/// Solves `F_mu(z) = x` by damped Newton with the forward Jacobian, starting at `z = x`.
pub fn numeric_inverse(family: &dyn MapFamily, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let mut z = x.clone();
    let mut residual = family.forward(&z, mu)? - x;
    let mut trace = vec![residual.norm()];
    for _ in 0..NEWTON_MAX_ITER {
        if residual.norm() <= NEWTON_TOL {
            return Ok(z);
        }
        let jac = full_jacobian(family, &z, mu)?;
        let step = jac
            .lu()
            .solve(&residual)
            .ok_or_else(|| Error::NewtonDivergence { trace: trace.clone() })?;
        let mut damping = 1.0;
        loop {
            let candidate = &z - &step * damping;
            if let Ok(image) = family.forward(&candidate, mu) {
                let r = image - x;
                if r.norm() < residual.norm() || damping < 1e-4 {
                    z = candidate;
                    residual = r;
                    break;
                }
            }
            damping *= 0.5;
            if damping < 1e-8 {
                return Err(Error::NewtonDivergence { trace });
            }
        }
        trace.push(residual.norm());
    }
    if residual.norm() <= NEWTON_TOL {
        Ok(z)
    } else {
        Err(Error::NewtonDivergence { trace })
    }
}

/// Ambient Jacobian: closed form if available, otherwise central differences.
pub fn full_jacobian(family: &dyn MapFamily, x: &DVector<f64>, mu: f64) -> Result<DMatrix<f64>> {
    if let Some(j) = family.jacobian(x, mu) {
        return j;
    }
    fd_jacobian(|v| family.forward(v, mu), x, FD_STEP)
}

fn inverse_jacobian(family: &dyn MapFamily, x: &DVector<f64>, mu: f64) -> Result<DMatrix<f64>> {
    if family.has_jacobian() {
        let pre = apply_inverse(family, x, mu)?;
        let j = full_jacobian(family, &pre, mu)?;
        return j.try_inverse().ok_or_else(|| {
            Error::InvalidInput("forward Jacobian is singular; map is not a diffeomorphism".into())
        });
    }
    fd_jacobian(|v| apply_inverse(family, v, mu), x, FD_STEP)
}

pub fn fd_jacobian<F>(map: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let m = x.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut xp = x.clone();
    for k in 0..m {
        xp[k] = x[k] + h;
        let plus = map(&xp)?;
        xp[k] = x[k] - h;
        let minus = map(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// `(f, g)` for the forward map, without derivative blocks.
pub fn split(family: &dyn MapFamily, p: &TubularPoint, mu: f64) -> Result<TubularPoint> {
    let m = family.manifold();
    let image = m.project(&family.forward(&m.embed(p), mu)?)?;
    let alpha = family.tube_radius();
    if image.r.abs() > alpha + TUBE_SLACK {
        return Err(Error::LeftTube { r: image.r, alpha });
    }
    Ok(image)
}

/// `(f_hat, g_hat)` for the inverse map, without derivative blocks.
///
/// Preimages are not required to stay in the tube.
pub fn split_inverse(family: &dyn MapFamily, p: &TubularPoint, mu: f64) -> Result<TubularPoint> {
    let m = family.manifold();
    m.project(&apply_inverse(family, &m.embed(p), mu)?)
}

/// Component split of `F_mu` at `p` with Jacobian blocks.
///
/// Blocks come from the family's closed form when present, from the ambient
/// Jacobian on unit spheres, and from central differences otherwise.
pub fn split_components(family: &dyn MapFamily, p: &TubularPoint, mu: f64) -> Result<ComponentEval> {
    let eval = match family.analytic_components(p, mu) {
        Some(res) => res?,
        None => {
            let man = family.manifold();
            if man.is_unit_sphere() && family.has_jacobian() {
                let x = man.embed(p);
                let z = family.forward(&x, mu)?;
                let j = full_jacobian(family, &x, mu)?;
                chain_blocks(man, p, &z, &j)?
            } else {
                fd_components(|x| family.forward(x, mu), man, p, FD_STEP)?
            }
        }
    };
    let alpha = family.tube_radius();
    if eval.f.abs() > alpha + TUBE_SLACK {
        return Err(Error::LeftTube { r: eval.f, alpha });
    }
    Ok(eval)
}

/// Component split of `F_mu^{-1}` at `p` with Jacobian blocks.
pub fn inverse_components(
    family: &dyn MapFamily,
    p: &TubularPoint,
    mu: f64,
) -> Result<ComponentEval> {
    if let Some(res) = family.analytic_inverse_components(p, mu) {
        return res;
    }
    let man = family.manifold();
    if man.is_unit_sphere() && family.has_jacobian() {
        let x = man.embed(p);
        let z = apply_inverse(family, &x, mu)?;
        let j = inverse_jacobian(family, &x, mu)?;
        chain_blocks(man, p, &z, &j)
    } else {
        fd_components(|x| apply_inverse(family, x, mu), man, p, FD_STEP)
    }
}

/// Component blocks by central differences in tubular coordinates, step `h`.
pub fn split_components_fd(
    family: &dyn MapFamily,
    p: &TubularPoint,
    mu: f64,
    h: f64,
) -> Result<ComponentEval> {
    fd_components(|x| family.forward(x, mu), family.manifold(), p, h)
}

pub fn inverse_components_fd(
    family: &dyn MapFamily,
    p: &TubularPoint,
    mu: f64,
    h: f64,
) -> Result<ComponentEval> {
    fd_components(|x| apply_inverse(family, x, mu), family.manifold(), p, h)
}

/// Blocks of `x -> z` on a unit sphere from the ambient Jacobian `j` at `x = (1 + r) y`.
fn chain_blocks(
    man: &ReferenceManifold,
    p: &TubularPoint,
    z: &DVector<f64>,
    j: &DMatrix<f64>,
) -> Result<ComponentEval> {
    let image = man.project(z)?;
    let rho = image.r + 1.0;
    let zhat = &image.y;
    let n_in = &p.y;
    let e_in = man.tangent_frame(&p.y);
    let e_out = man.tangent_frame(zhat);
    let jn = j * n_in;
    let je = j * &e_in * (1.0 + p.r);
    Ok(ComponentEval {
        f: image.r,
        g: image.y.clone(),
        drf: zhat.dot(&jn),
        dyf: (zhat.transpose() * &je).transpose(),
        drg: e_out.transpose() * &jn / rho,
        dyg: e_out.transpose() * &je / rho,
    })
}

fn fd_components<F>(
    map: F,
    man: &ReferenceManifold,
    p: &TubularPoint,
    h: f64,
) -> Result<ComponentEval>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let eval = |q: &TubularPoint| -> Result<TubularPoint> { man.project(&map(&man.embed(q))?) };
    let base = eval(p)?;
    let e_in = man.tangent_frame(&p.y);
    let e_out = man.tangent_frame(&base.y);
    let k = man.intrinsic_dim();

    let rp = eval(&TubularPoint::new(p.r + h, p.y.clone()))?;
    let rm = eval(&TubularPoint::new(p.r - h, p.y.clone()))?;
    let drf = (rp.r - rm.r) / (2.0 * h);
    let drg = e_out.transpose() * (&rp.y - &rm.y) / (2.0 * h);

    let mut dyf = DVector::zeros(k);
    let mut dyg = DMatrix::zeros(k, k);
    for i in 0..k {
        let e = e_in.column(i).into_owned();
        let yp = man.retract(&p.y, &(&e * h))?;
        let ym = man.retract(&p.y, &(&e * -h))?;
        let ip = eval(&TubularPoint::new(p.r, yp.clone()))?;
        let im = eval(&TubularPoint::new(p.r, ym.clone()))?;
        // retraction moves by slightly less than h; use the true tangent displacement
        let step = e_in.column(i).dot(&(&yp - &ym));
        dyf[i] = (ip.r - im.r) / step;
        dyg.set_column(i, &(e_out.transpose() * (&ip.y - &im.y) / step));
    }
    Ok(ComponentEval {
        f: base.r,
        g: base.y,
        drf,
        dyf,
        drg,
        dyg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideBehavior {
    SidePreserving,
    SideReversing,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SideClassification {
    pub behavior: SideBehavior,
    pub samples: usize,
    pub kept_side: usize,
    pub switched_side: usize,
    /// For a mixed outcome, a sample `(x, F(x))` that disagrees with the majority.
    pub counterexample: Option<(DVector<f64>, DVector<f64>)>,
}

/// Maps random points of the inner half-tube and records which side their images land on.
pub fn classify_side_behavior(
    family: &dyn MapFamily,
    mu: f64,
    samples: usize,
) -> Result<SideClassification> {
    if samples == 0 {
        return Err(Error::InvalidInput("side classification needs at least one sample".into()));
    }
    let man = family.manifold();
    let alpha = family.tube_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001 ^ samples as u64);
    let (mut kept, mut switched) = (0usize, 0usize);
    let (mut kept_example, mut switched_example) = (None, None);
    for _ in 0..samples {
        let u = random_unit(&mut rng, man.ambient_dim());
        let y = man.chart_to_manifold(&u);
        let r = -alpha * rng.random_range(1e-3..=1.0);
        let x = man.embed(&TubularPoint::new(r, y));
        let fx = family.forward(&x, mu)?;
        if man.signed_distance(&fx)? > 0.0 {
            switched += 1;
            switched_example.get_or_insert((x, fx));
        } else {
            kept += 1;
            kept_example.get_or_insert((x, fx));
        }
    }
    let behavior = match (kept, switched) {
        (_, 0) => SideBehavior::SidePreserving,
        (0, _) => SideBehavior::SideReversing,
        _ => SideBehavior::Mixed,
    };
    let counterexample = match behavior {
        SideBehavior::Mixed if kept >= switched => switched_example,
        SideBehavior::Mixed => kept_example,
        _ => None,
    };
    Ok(SideClassification {
        behavior,
        samples,
        kept_side: kept,
        switched_side: switched,
        counterexample,
    })
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, m: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Largest distance from `M` of an image of a mesh node.
pub fn invariance_defect(family: &dyn MapFamily, mesh: &ManifoldMesh, mu: f64) -> Result<f64> {
    let man = family.manifold();
    let mut worst: f64 = 0.0;
    for y in mesh.nodes() {
        let d = man.signed_distance(&family.forward(y, mu)?)?.abs();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Largest `|F^{-1}(F(x)) - x|` over `samples` random tube points.
pub fn inverse_defect(family: &dyn MapFamily, mu: f64, samples: usize, seed: u64) -> Result<f64> {
    let man = family.manifold();
    let alpha = family.tube_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let y = man.chart_to_manifold(&random_unit(&mut rng, man.ambient_dim()));
        let r = rng.random_range(-alpha..=alpha);
        let x = man.embed(&TubularPoint::new(r, y));
        let back = apply_inverse(family, &family.forward(&x, mu)?, mu)?;
        worst = worst.max((back - x).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, ParamSurface};
    use std::sync::Arc;

    fn rot2(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    fn canonical2() -> CanonicalFamily {
        CanonicalFamily::new(rot2(0.5)).unwrap()
    }

    fn at(theta: f64) -> DVector<f64> {
        DVector::from_column_slice(&[theta.cos(), theta.sin()])
    }

    #[test]
    fn split_on_manifold_is_rotation() {
        let f = canonical2();
        let y = at(0.3);
        let c = split_components(&f, &TubularPoint::on_manifold(y.clone()), 0.0).unwrap();
        assert!(c.f.abs() < 1e-15);
        assert!((&c.g - at(0.8)).norm() < 1e-15);
    }

    #[test]
    fn branch_radius_is_preserved() {
        let f = canonical2();
        let r = (1.0f64 / 50.0).sqrt();
        let c = split(&f, &TubularPoint::new(r, at(1.0)), 0.02).unwrap();
        assert!((c.r - r).abs() < 1e-15);
    }

    #[test]
    fn radial_derivative_on_manifold() {
        let f = canonical2();
        let c = split_components(&f, &TubularPoint::on_manifold(at(2.0)), 1.0 / 25.0).unwrap();
        assert!((c.drf - 1.04).abs() < 1e-14);
    }

    #[test]
    fn inverse_blocks_of_canonical() {
        let f = canonical2();
        let c = inverse_components(&f, &TubularPoint::new(0.1, at(0.7)), 0.01).unwrap();
        assert!((c.f - 0.1).abs() < 1e-14);
        assert!((&c.g - at(0.2)).norm() < 1e-14);
        assert_eq!(c.drg.norm(), 0.0);
        assert!((c.dyg_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn finite_differences_match_closed_form() {
        let h = f64::EPSILON.cbrt();
        for family in [
            Box::new(canonical2()) as Box<dyn MapFamily>,
            Box::new(SideReversing::new(Arc::new(canonical2()))),
        ] {
            for (r, th, mu) in [(0.1, 0.2, 0.02), (-0.17, 2.5, -0.03), (0.0, 4.0, 0.04)] {
                let p = TubularPoint::new(r, at(th));
                let a = split_components(family.as_ref(), &p, mu).unwrap();
                let d = split_components_fd(family.as_ref(), &p, mu, h).unwrap();
                assert!((a.drf - d.drf).abs() <= 1e-6 * a.drf.abs().max(1.0));
                assert!((&a.dyf - &d.dyf).norm() <= 1e-6);
                assert!((&a.drg - &d.drg).norm() <= 1e-6);
                assert!((&a.dyg - &d.dyg).norm() <= 1e-6 * a.dyg.norm());
                let ai = inverse_components(family.as_ref(), &p, mu).unwrap();
                let di = inverse_components_fd(family.as_ref(), &p, mu, h).unwrap();
                assert!((ai.drf - di.drf).abs() <= 1e-6 * ai.drf.abs().max(1.0));
                assert!((&ai.dyg - &di.dyg).norm() <= 1e-6 * ai.dyg.norm());
            }
        }
    }

    #[test]
    fn invariance_forces_zero_tangential_normal_block() {
        let closure = ClosureFamily::new(
            "twist",
            ReferenceManifold::circle(),
            (-0.1, 0.1),
            0.2,
            |x: &DVector<f64>, mu: f64| {
                let rho = x.norm();
                let th = x[1].atan2(x[0]) + 0.3 + 0.1 * (rho - 1.0);
                let s = 1.0 + (1.0 + mu) * (rho - 1.0);
                Ok(DVector::from_column_slice(&[s * th.cos(), s * th.sin()]))
            },
        );
        for th in [0.1, 1.4, 3.0] {
            let c = split_components(&closure, &TubularPoint::on_manifold(at(th)), 0.02).unwrap();
            assert!(c.f.abs() < 1e-14);
            assert!(c.dyf.norm() <= 1e-8);
            assert!((c.drf - 1.02).abs() < 1e-8);
        }
        let back = apply_inverse(&closure, &at(0.3).scale(1.1), 0.02).unwrap();
        let fwd = closure.forward(&back, 0.02).unwrap();
        assert!((fwd - at(0.3).scale(1.1)).norm() < 1e-10);
    }

    #[test]
    fn side_classification() {
        let f = Arc::new(canonical2());
        let c = classify_side_behavior(f.as_ref(), 0.02, 200).unwrap();
        assert_eq!(c.behavior, SideBehavior::SidePreserving);
        let g = SideReversing::new(f.clone());
        assert_eq!(
            classify_side_behavior(&g, 0.02, 200).unwrap().behavior,
            SideBehavior::SideReversing
        );
        let gg = Compose::new(Arc::new(g.clone()), Arc::new(g));
        assert_eq!(
            classify_side_behavior(&gg, 0.02, 200).unwrap().behavior,
            SideBehavior::SidePreserving
        );
        let id = ClosureFamily::new("identity", ReferenceManifold::sphere(), (-1.0, 1.0), 0.2, |x, _| {
            Ok(x.clone())
        });
        assert_eq!(
            classify_side_behavior(&id, 0.0, 50).unwrap().behavior,
            SideBehavior::SidePreserving
        );
        let mixed = ClosureFamily::new("fold", ReferenceManifold::circle(), (-1.0, 1.0), 0.2, |x, _| {
            let rho = x.norm();
            let r = rho - 1.0;
            let r2 = if x[1] > 0.0 { r } else { -r };
            Ok(x * ((1.0 + r2) / rho))
        });
        let c = classify_side_behavior(&mixed, 0.0, 100).unwrap();
        assert_eq!(c.behavior, SideBehavior::Mixed);
        assert!(c.counterexample.is_some());
        assert_eq!(c.kept_side + c.switched_side, 100);
        assert!(c.kept_side > 0 && c.switched_side > 0);
    }

    #[test]
    fn invariance_and_inverse_consistency() {
        let mesh = build_mesh(&ReferenceManifold::circle(), 64).unwrap();
        for mu in [-0.04, 0.0, 0.02, 0.04] {
            let f = canonical2();
            assert!(invariance_defect(&f, &mesh, mu).unwrap() <= 1e-10);
            assert!(inverse_defect(&f, mu, 200, 7).unwrap() <= 1e-9);
            let g = SideReversing::new(Arc::new(f));
            assert!(invariance_defect(&g, &mesh, mu).unwrap() <= 1e-10);
            assert!(inverse_defect(&g, mu, 200, 7).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn parameterized_manifold_components() {
        let surface = ParamSurface::new(2, |u| DVector::from_column_slice(&[1.3 * u[0], u[1]])).unwrap();
        let man = ReferenceManifold::parameterized(surface);
        let fam = ClosureFamily::new("scaled-ellipse", man.clone(), (-0.1, 0.1), 0.2, {
            let man = man.clone();
            move |x, mu| {
                let p = man.project(x)?;
                let r = p.r * (1.0 + mu);
                Ok(man.embed(&TubularPoint::new(r, p.y)))
            }
        });
        let y = man.chart_to_manifold(&DVector::from_column_slice(&[0.6, 0.8]));
        let c = split_components(&fam, &TubularPoint::new(0.05, y.clone()), 0.02).unwrap();
        assert!((c.f - 0.051).abs() < 1e-8);
        assert!((c.drf - 1.02).abs() < 1e-5);
        assert!((c.dyg_norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn leaving_the_tube_is_reported() {
        let f = ClosureFamily::new("push", ReferenceManifold::circle(), (-1.0, 1.0), 0.2, |x, _| {
            Ok(x * ((x.norm() + 0.5 * (x.norm() - 1.0)) / x.norm()))
        });
        let err = split(&f, &TubularPoint::new(0.19, at(0.0)), 0.0).unwrap_err();
        assert!(matches!(err, Error::LeftTube { .. }));
    }
}
