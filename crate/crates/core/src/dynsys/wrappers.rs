use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{apply_inverse, full_jacobian, ComponentEval, InverseSupport, MapFamily};
use crate::error::Result;
use crate::geometry::{ReferenceManifold, TubularPoint};

/// `G_mu = R o F_mu`, where `R` swaps the two sides of `M`: `(r, y) -> (-r, y)`.
///
/// On the unit sphere `R(x) = ((2 - |x|) / |x|) x`.
#[derive(Clone)]
pub struct SideReversing {
    inner: Arc<dyn MapFamily>,
}

impl fmt::Debug for SideReversing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SideReversing({})", self.inner.name())
    }
}

impl SideReversing {
    pub fn new(inner: Arc<dyn MapFamily>) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &Arc<dyn MapFamily> {
        &self.inner
    }

    fn reflect(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let man = self.inner.manifold();
        let p = man.project(x)?;
        Ok(man.embed(&TubularPoint::new(-p.r, p.y)))
    }
}

/// Jacobian of `x -> ((2 - |x|) / |x|) x`.
fn reflection_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    let rho = x.norm();
    let m = x.len();
    DMatrix::identity(m, m) * (2.0 / rho - 1.0) - x * x.transpose() * (2.0 / (rho * rho * rho))
}

impl MapFamily for SideReversing {
    fn name(&self) -> String {
        format!("reversed({})", self.inner.name())
    }

    fn manifold(&self) -> &ReferenceManifold {
        self.inner.manifold()
    }

    fn mu_range(&self) -> (f64, f64) {
        self.inner.mu_range()
    }

    fn tube_radius(&self) -> f64 {
        self.inner.tube_radius()
    }

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        self.reflect(&self.inner.forward(x, mu)?)
    }

    fn inverse_support(&self) -> InverseSupport {
        self.inner.inverse_support()
    }

    fn analytic_inverse(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DVector<f64>>> {
        // R is an involution, so G^{-1} = F^{-1} o R
        Some(self.reflect(x).and_then(|rx| apply_inverse(self.inner.as_ref(), &rx, mu)))
    }

    fn has_jacobian(&self) -> bool {
        self.inner.has_jacobian() && self.manifold().is_unit_sphere()
    }

    fn jacobian(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DMatrix<f64>>> {
        if !self.has_jacobian() {
            return None;
        }
        Some((|| {
            let fx = self.inner.forward(x, mu)?;
            let j = full_jacobian(self.inner.as_ref(), x, mu)?;
            Ok(reflection_jacobian(&fx) * j)
        })())
    }

    fn analytic_components(&self, p: &TubularPoint, mu: f64) -> Option<Result<ComponentEval>> {
        self.inner.analytic_components(p, mu).map(|res| {
            res.map(|mut c| {
                c.f = -c.f;
                c.drf = -c.drf;
                c.dyf = -c.dyf;
                c
            })
        })
    }

    fn analytic_inverse_components(
        &self,
        p: &TubularPoint,
        mu: f64,
    ) -> Option<Result<ComponentEval>> {
        let flipped = TubularPoint::new(-p.r, p.y.clone());
        self.inner
            .analytic_inverse_components(&flipped, mu)
            .map(|res| {
                res.map(|mut c| {
                    c.drf = -c.drf;
                    c.drg = -c.drg;
                    c
                })
            })
    }
}

/// `x -> second(first(x))`.
#[derive(Clone)]
pub struct Compose {
    first: Arc<dyn MapFamily>,
    second: Arc<dyn MapFamily>,
}

impl fmt::Debug for Compose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Compose({}, {})", self.first.name(), self.second.name())
    }
}

impl Compose {
    pub fn new(first: Arc<dyn MapFamily>, second: Arc<dyn MapFamily>) -> Self {
        Self { first, second }
    }
}

impl MapFamily for Compose {
    fn name(&self) -> String {
        format!("{} then {}", self.first.name(), self.second.name())
    }

    fn manifold(&self) -> &ReferenceManifold {
        self.first.manifold()
    }

    fn mu_range(&self) -> (f64, f64) {
        let (a, b) = self.first.mu_range();
        let (c, d) = self.second.mu_range();
        (a.max(c), b.min(d))
    }

    fn tube_radius(&self) -> f64 {
        self.first.tube_radius().min(self.second.tube_radius())
    }

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        self.second.forward(&self.first.forward(x, mu)?, mu)
    }

    fn inverse_support(&self) -> InverseSupport {
        match (self.first.inverse_support(), self.second.inverse_support()) {
            (InverseSupport::None, _) | (_, InverseSupport::None) => InverseSupport::None,
            (InverseSupport::Analytic, InverseSupport::Analytic) => InverseSupport::Analytic,
            _ => InverseSupport::Numeric,
        }
    }

    fn analytic_inverse(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DVector<f64>>> {
        Some(
            apply_inverse(self.second.as_ref(), x, mu)
                .and_then(|z| apply_inverse(self.first.as_ref(), &z, mu)),
        )
    }

    fn has_jacobian(&self) -> bool {
        self.first.has_jacobian() && self.second.has_jacobian()
    }

    fn jacobian(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DMatrix<f64>>> {
        if !self.has_jacobian() {
            return None;
        }
        Some((|| {
            let j1 = full_jacobian(self.first.as_ref(), x, mu)?;
            let z = self.first.forward(x, mu)?;
            let j2 = full_jacobian(self.second.as_ref(), &z, mu)?;
            Ok(j2 * j1)
        })())
    }
}

type PointMap = dyn Fn(&DVector<f64>, f64) -> Result<DVector<f64>> + Send + Sync;
type MatrixMap = dyn Fn(&DVector<f64>, f64) -> Result<DMatrix<f64>> + Send + Sync;

/// A family assembled from user callbacks.
#[derive(Clone)]
pub struct ClosureFamily {
    name: String,
    manifold: ReferenceManifold,
    mu_range: (f64, f64),
    alpha: f64,
    forward: Arc<PointMap>,
    inverse: Option<Arc<PointMap>>,
    jacobian: Option<Arc<MatrixMap>>,
    numeric_inverse: bool,
}

impl fmt::Debug for ClosureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureFamily")
            .field("name", &self.name)
            .field("manifold", &self.manifold)
            .field("mu_range", &self.mu_range)
            .field("alpha", &self.alpha)
            .field("inverse", &self.inverse.is_some())
            .field("jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl ClosureFamily {
    pub fn new<F>(
        name: impl Into<String>,
        manifold: ReferenceManifold,
        mu_range: (f64, f64),
        alpha: f64,
        forward: F,
    ) -> Self
    where
        F: Fn(&DVector<f64>, f64) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            manifold,
            mu_range,
            alpha,
            forward: Arc::new(forward),
            inverse: None,
            jacobian: None,
            numeric_inverse: true,
        }
    }

    pub fn with_inverse<F>(mut self, inverse: F) -> Self
    where
        F: Fn(&DVector<f64>, f64) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    pub fn with_jacobian<F>(mut self, jacobian: F) -> Self
    where
        F: Fn(&DVector<f64>, f64) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Refuse to invert numerically when no inverse callback is given.
    pub fn without_numeric_inverse(mut self) -> Self {
        self.numeric_inverse = false;
        self
    }
}

impl MapFamily for ClosureFamily {
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

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        (self.forward)(x, mu)
    }

    fn inverse_support(&self) -> InverseSupport {
        match (&self.inverse, self.numeric_inverse) {
            (Some(_), _) => InverseSupport::Analytic,
            (None, true) => InverseSupport::Numeric,
            (None, false) => InverseSupport::None,
        }
    }

    fn analytic_inverse(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DVector<f64>>> {
        self.inverse.as_ref().map(|inv| inv(x, mu))
    }

    fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    fn jacobian(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DMatrix<f64>>> {
        self.jacobian.as_ref().map(|j| j(x, mu))
    }
}
