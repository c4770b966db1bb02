use nalgebra::{DMatrix, DVector, Rotation3, Unit, Vector3};

use super::{ComponentEval, InverseSupport, MapFamily};
use crate::error::{Error, Result};
use crate::geometry::{ReferenceManifold, TubularPoint, DEFAULT_ALPHA};

const CORE_LO: f64 = 0.8;
const CORE_HI: f64 = 1.2;
const BLEND_WIDTH: f64 = 0.1;
const PLATEAU_STEP: f64 = 0.05;

/// Largest `|mu|` for which the radial profile keeps `s sigma(s)` increasing.
pub const CANONICAL_MU_BOUND: f64 = 1.0 / 25.0;

/// Radial gain `sigma_mu(s)`: the cubic `1 - (s-1)^3 + mu (s-1)` on `[0.8, 1.2]`,
/// joined by C¹ Hermite blends over `[0.7, 0.8]` and `[1.2, 1.3]` to constants
/// `0.05` above and below the core end values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaProfile {
    pub mu: f64,
}

/// Result of solving `s sigma(s) = t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialInverse {
    pub s: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

fn hermite(t: f64, p0: f64, m0: f64, p1: f64, m1: f64) -> (f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    let value = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
        + (t3 - 2.0 * t2 + t) * m0
        + (-2.0 * t3 + 3.0 * t2) * p1
        + (t3 - t2) * m1;
    let slope = (6.0 * t2 - 6.0 * t) * p0
        + (3.0 * t2 - 4.0 * t + 1.0) * m0
        + (-6.0 * t2 + 6.0 * t) * p1
        + (3.0 * t2 - 2.0 * t) * m1;
    (value, slope)
}

impl SigmaProfile {
    pub fn new(mu: f64) -> Self {
        Self { mu }
    }

    fn core(&self, s: f64) -> (f64, f64) {
        let u = s - 1.0;
        (1.0 - u * u * u + self.mu * u, -3.0 * u * u + self.mu)
    }

    /// `(sigma(s), sigma'(s))`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let (lo, lo_slope) = self.core(CORE_LO);
        let (hi, hi_slope) = self.core(CORE_HI);
        if s < CORE_LO - BLEND_WIDTH {
            (lo + PLATEAU_STEP, 0.0)
        } else if s < CORE_LO {
            let t = (s - CORE_LO + BLEND_WIDTH) / BLEND_WIDTH;
            let (v, d) = hermite(t, lo + PLATEAU_STEP, 0.0, lo, lo_slope * BLEND_WIDTH);
            (v, d / BLEND_WIDTH)
        } else if s <= CORE_HI {
            self.core(s)
        } else if s < CORE_HI + BLEND_WIDTH {
            let t = (s - CORE_HI) / BLEND_WIDTH;
            let (v, d) = hermite(t, hi, hi_slope * BLEND_WIDTH, hi - PLATEAU_STEP, 0.0);
            (v, d / BLEND_WIDTH)
        } else {
            (hi - PLATEAU_STEP, 0.0)
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    pub fn derivative(&self, s: f64) -> f64 {
        self.eval(s).1
    }

    /// `s sigma(s)`, the radius of the image of a point at radius `s`.
    pub fn radial_map(&self, s: f64) -> f64 {
        s * self.value(s)
    }

    /// `d/ds (s sigma(s)) = sigma(s) + s sigma'(s)`.
    pub fn radial_gain(&self, s: f64) -> f64 {
        let (v, d) = self.eval(s);
        v + s * d
    }

    /// Solves `s sigma(s) = t` by Newton from `s = t`.
    pub fn invert(&self, t: f64) -> Result<RadialInverse> {
        let mut s = t;
        let mut trace = Vec::new();
        for it in 0..60 {
            let res = self.radial_map(s) - t;
            trace.push(res.abs());
            if res.abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
                return Ok(RadialInverse {
                    s,
                    iterations: it,
                    trace,
                });
            }
            let gain = self.radial_gain(s);
            if !(gain > 0.0) {
                return Err(Error::NewtonDivergence { trace });
            }
            let next = (s - res / gain).max(0.0);
            if (next - s).abs() <= f64::EPSILON * s.abs() {
                return Ok(RadialInverse {
                    s: next,
                    iterations: it + 1,
                    trace,
                });
            }
            s = next;
        }
        Err(Error::NewtonDivergence { trace })
    }
}

/// `F_mu(x) = sigma_mu(|x|) A x` around the unit sphere, `A` a rotation.
#[derive(Clone, Debug)]
pub struct CanonicalFamily {
    rotation: DMatrix<f64>,
    manifold: ReferenceManifold,
    alpha: f64,
}

impl CanonicalFamily {
    pub fn new(rotation: DMatrix<f64>) -> Result<Self> {
        let n = rotation.nrows();
        if n < 2 || rotation.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "rotation must be square of size >= 2, got {}x{}",
                rotation.nrows(),
                rotation.ncols()
            )));
        }
        let orthogonality = (rotation.transpose() * &rotation - DMatrix::identity(n, n)).norm();
        let determinant = rotation.determinant();
        if orthogonality > 1e-12 || (determinant - 1.0).abs() > 1e-12 {
            return Err(Error::NotRotation {
                orthogonality,
                determinant,
            });
        }
        Ok(Self {
            rotation,
            manifold: ReferenceManifold::unit_sphere(n)?,
            alpha: DEFAULT_ALPHA,
        })
    }

    /// Planar family with rotation by `angle` radians.
    pub fn planar(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(DMatrix::from_row_slice(2, 2, &[c, -s, s, c])).expect("planar rotation")
    }

    /// Family in `R^3` rotating by `angle` radians about `axis`.
    pub fn spatial(axis: [f64; 3], angle: f64) -> Result<Self> {
        let v = Vector3::from(axis);
        if v.norm() == 0.0 {
            return Err(Error::InvalidInput("rotation axis must be non-zero".into()));
        }
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(v), angle);
        Self::new(DMatrix::from_iterator(3, 3, r.matrix().iter().copied()))
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }
}

impl MapFamily for CanonicalFamily {
    fn name(&self) -> String {
        format!("canonical(m={})", self.rotation.nrows())
    }

    fn manifold(&self) -> &ReferenceManifold {
        &self.manifold
    }

    fn mu_range(&self) -> (f64, f64) {
        (-CANONICAL_MU_BOUND, CANONICAL_MU_BOUND)
    }

    fn tube_radius(&self) -> f64 {
        self.alpha
    }

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        let rho = x.norm();
        Ok(&self.rotation * x * SigmaProfile::new(mu).value(rho))
    }

    fn inverse_support(&self) -> InverseSupport {
        InverseSupport::Analytic
    }

    fn analytic_inverse(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DVector<f64>>> {
        let t = x.norm();
        if t == 0.0 {
            return Some(Ok(x.clone()));
        }
        Some(
            SigmaProfile::new(mu)
                .invert(t)
                .map(|inv| self.rotation.tr_mul(x) * (inv.s / t)),
        )
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DMatrix<f64>>> {
        let rho = x.norm();
        let (v, d) = SigmaProfile::new(mu).eval(rho);
        let mut j = &self.rotation * v;
        if rho > 0.0 {
            j += (&self.rotation * x) * x.transpose() * (d / rho);
        }
        Some(Ok(j))
    }

    fn analytic_components(&self, p: &TubularPoint, mu: f64) -> Option<Result<ComponentEval>> {
        let sigma = SigmaProfile::new(mu);
        let s = 1.0 + p.r;
        let g = &self.rotation * &p.y;
        let e_in = self.manifold.tangent_frame(&p.y);
        let e_out = self.manifold.tangent_frame(&g);
        let k = self.manifold.intrinsic_dim();
        Some(Ok(ComponentEval {
            f: sigma.radial_map(s) - 1.0,
            drf: sigma.radial_gain(s),
            dyf: DVector::zeros(k),
            drg: DVector::zeros(k),
            dyg: e_out.transpose() * &self.rotation * e_in,
            g,
        }))
    }

    fn analytic_inverse_components(
        &self,
        p: &TubularPoint,
        mu: f64,
    ) -> Option<Result<ComponentEval>> {
        let sigma = SigmaProfile::new(mu);
        let inv = match sigma.invert(1.0 + p.r) {
            Ok(inv) => inv,
            Err(e) => return Some(Err(e)),
        };
        let g = self.rotation.tr_mul(&p.y);
        let e_in = self.manifold.tangent_frame(&p.y);
        let e_out = self.manifold.tangent_frame(&g);
        let k = self.manifold.intrinsic_dim();
        Some(Ok(ComponentEval {
            f: inv.s - 1.0,
            drf: 1.0 / sigma.radial_gain(inv.s),
            dyf: DVector::zeros(k),
            drg: DVector::zeros(k),
            dyg: e_out.transpose() * self.rotation.transpose() * e_in,
            g,
        }))
    }
}
