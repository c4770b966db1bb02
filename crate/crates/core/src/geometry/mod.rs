//! Reference manifolds, tubular-neighbourhood coordinates and meshes.
//!
//! A point `x` near a codimension-1 manifold `M` is written as `(r, y)` where
//! `y` is the closest point of `M` and `r` the signed distance along the
//! outward normal (positive on the unbounded side). The built-in manifolds are
//! unit spheres centred at the origin; anything else goes through a
//! [`ParamSurface`] with a numeric projection.

mod interp;
mod mesh;
mod param;

pub use interp::PeriodicSpline;
pub use mesh::{
    build_mesh, icosphere, Interpolant, InterpolationScheme, Location, ManifoldMesh, MeshFile,
};
pub use param::ParamSurface;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default outer tube radius.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// A compact, connected, boundaryless hypersurface of `R^m`.
#[derive(Clone)]
pub enum ReferenceManifold {
    /// The unit sphere `S^{m-1}` in `R^m` (the unit circle for `m = 2`).
    UnitSphere { ambient_dim: usize },
    /// A user surface given by an embedding of the unit sphere.
    Parameterized(Arc<ParamSurface>),
}

impl fmt::Debug for ReferenceManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnitSphere { ambient_dim } => write!(f, "UnitSphere(R^{ambient_dim})"),
            Self::Parameterized(p) => write!(f, "Parameterized(R^{})", p.ambient_dim()),
        }
    }
}

/// A point in tubular coordinates: signed normal offset `r` and base point `y` on `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TubularPoint {
    pub r: f64,
    pub y: DVector<f64>,
}

impl TubularPoint {
    pub fn new(r: f64, y: DVector<f64>) -> Self {
        Self { r, y }
    }

    pub fn on_manifold(y: DVector<f64>) -> Self {
        Self { r: 0.0, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Both,
    Outer,
    Inner,
}

/// A shell `{ inner_cut <= d(x, M) <= alpha }`, optionally restricted to one side of `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubularRegion {
    pub alpha: f64,
    pub inner_cut: f64,
    pub side: Side,
}

impl TubularRegion {
    pub fn new(alpha: f64, inner_cut: f64, side: Side) -> Result<Self> {
        if !(alpha > 0.0) || !(inner_cut >= 0.0) || inner_cut >= alpha {
            return Err(Error::InvalidInput(format!(
                "tubular region needs 0 <= inner_cut < alpha, got inner_cut = {inner_cut}, alpha = {alpha}"
            )));
        }
        Ok(Self { alpha, inner_cut, side })
    }

    /// The full tube `N(alpha)`.
    pub fn tube(alpha: f64) -> Result<Self> {
        Self::new(alpha, 0.0, Side::Both)
    }

    /// The two-sided shell `{ chi <= d <= alpha }`.
    pub fn shell(chi: f64, alpha: f64) -> Result<Self> {
        Self::new(alpha, chi, Side::Both)
    }

    /// Whether an offset lies in the region, up to `tol`.
    pub fn contains(&self, r: f64, tol: f64) -> bool {
        let d = r.abs();
        let in_band = d >= self.inner_cut - tol && d <= self.alpha + tol;
        let side_ok = match self.side {
            Side::Both => true,
            Side::Outer => r >= -tol,
            Side::Inner => r <= tol,
        };
        in_band && side_ok
    }

    /// Closed offset intervals making up the region.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        let (a, c) = (self.alpha, self.inner_cut);
        match (self.side, c > 0.0) {
            (Side::Both, false) => vec![(-a, a)],
            (Side::Both, true) => vec![(-a, -c), (c, a)],
            (Side::Outer, _) => vec![(c, a)],
            (Side::Inner, _) => vec![(-a, -c)],
        }
    }

    /// Offsets sampled with `intervals` equal steps per component, endpoints included.
    ///
    /// Doubling `intervals` gives a superset of the previous samples.
    pub fn radial_samples(&self, intervals: usize) -> Vec<f64> {
        let n = intervals.max(1);
        let mut out = Vec::with_capacity(self.intervals().len() * (n + 1));
        for (lo, hi) in self.intervals() {
            for k in 0..=n {
                let t = k as f64 / n as f64;
                out.push(if k == n { hi } else { lo + t * (hi - lo) });
            }
        }
        out
    }
}

impl ReferenceManifold {
    pub fn circle() -> Self {
        Self::UnitSphere { ambient_dim: 2 }
    }

    pub fn sphere() -> Self {
        Self::UnitSphere { ambient_dim: 3 }
    }

    pub fn unit_sphere(ambient_dim: usize) -> Result<Self> {
        if ambient_dim < 2 {
            return Err(Error::UnsupportedManifold(format!(
                "ambient dimension {ambient_dim} < 2"
            )));
        }
        Ok(Self::UnitSphere { ambient_dim })
    }

    pub fn parameterized(surface: ParamSurface) -> Self {
        Self::Parameterized(Arc::new(surface))
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Self::UnitSphere { ambient_dim } => *ambient_dim,
            Self::Parameterized(p) => p.ambient_dim(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.ambient_dim() - 1
    }

    pub fn is_unit_sphere(&self) -> bool {
        matches!(self, Self::UnitSphere { .. })
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Closest-point projection with signed offset.
    pub fn project(&self, x: &DVector<f64>) -> Result<TubularPoint> {
        self.check_dim(x)?;
        match self {
            Self::UnitSphere { .. } => {
                let rho = x.norm();
                if !(rho > f64::MIN_POSITIVE) || !rho.is_finite() {
                    return Err(Error::AmbiguousProjection {
                        point: x.iter().copied().collect(),
                    });
                }
                Ok(TubularPoint::new(rho - 1.0, x / rho))
            }
            Self::Parameterized(p) => p.project(x).map(|(r, y, _)| TubularPoint::new(r, y)),
        }
    }

    /// Projection that rejects points farther than `alpha` from `M`.
    pub fn project_within(&self, x: &DVector<f64>, alpha: f64) -> Result<TubularPoint> {
        let p = self.project(x)?;
        if p.r.abs() > alpha {
            return Err(Error::OutsideTube { r: p.r, alpha });
        }
        Ok(p)
    }

    /// `y + r n(y)`.
    pub fn embed(&self, p: &TubularPoint) -> DVector<f64> {
        match self {
            Self::UnitSphere { .. } => &p.y * (1.0 + p.r),
            Self::Parameterized(_) => &p.y + self.normal(&p.y) * p.r,
        }
    }

    pub fn embed_within(&self, p: &TubularPoint, alpha: f64) -> Result<DVector<f64>> {
        if p.r.abs() > alpha {
            return Err(Error::OutsideTube { r: p.r, alpha });
        }
        Ok(self.embed(p))
    }

    pub fn signed_distance(&self, x: &DVector<f64>) -> Result<f64> {
        self.project(x).map(|p| p.r)
    }

    /// Outward unit normal at a base point.
    pub fn normal(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::UnitSphere { .. } => y.normalize(),
            Self::Parameterized(p) => p.normal_at_point(y),
        }
    }

    /// Orthonormal tangent frame at `y`, one column per tangent direction.
    pub fn tangent_frame(&self, y: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Self::UnitSphere { .. } => sphere_frame(&y.normalize()),
            Self::Parameterized(p) => p.frame_at_point(y),
        }
    }

    /// Moves from `y` by the ambient tangent vector `v` and returns to `M`.
    pub fn retract(&self, y: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::UnitSphere { .. } => Ok((y + v).normalize()),
            Self::Parameterized(_) => self.project(&(y + v)).map(|p| p.y),
        }
    }

    /// Point of the parameter domain (unit sphere) that `y` corresponds to.
    pub fn chart_point(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::UnitSphere { .. } => Ok(y.normalize()),
            Self::Parameterized(p) => p.project(y).map(|(_, _, u)| u),
        }
    }

    /// Image of a parameter-domain point.
    pub fn chart_to_manifold(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::UnitSphere { .. } => u.normalize(),
            Self::Parameterized(p) => p.eval(u),
        }
    }
}

/// Orthonormal tangent frame of the unit sphere at the unit vector `y`.
///
/// `m = 2` uses `(-y2, y1)`. `m = 3` projects `e_z` away from the poles and
/// `e_x` near them. Higher dimensions run Gram-Schmidt on the coordinate axes.
pub(crate) fn sphere_frame(y: &DVector<f64>) -> DMatrix<f64> {
    let m = y.len();
    match m {
        2 => DMatrix::from_column_slice(2, 1, &[-y[1], y[0]]),
        3 => {
            let axis = if y[2].abs() < 0.9 {
                DVector::from_column_slice(&[0.0, 0.0, 1.0])
            } else {
                DVector::from_column_slice(&[1.0, 0.0, 0.0])
            };
            let e1 = (&axis - y * axis.dot(y)).normalize();
            let e2 = cross3(y, &e1);
            DMatrix::from_columns(&[e1, e2])
        }
        _ => {
            let skip = y.iamax();
            let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
            for k in (0..m).filter(|&k| k != skip) {
                let mut v = DVector::zeros(m);
                v[k] = 1.0;
                v -= y * y[k];
                for c in &cols {
                    let d = c.dot(&v);
                    v -= c * d;
                }
                cols.push(v.normalize());
            }
            DMatrix::from_columns(&cols)
        }
    }
}

pub(crate) fn cross3(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_column_slice(&[
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn project_circle_outer_point() {
        let p = ReferenceManifold::circle().project(&v(&[0.66, 0.88])).unwrap();
        assert!((p.r - 0.1).abs() < 1e-15);
        assert!((&p.y - v(&[0.6, 0.8])).norm() < 1e-15);
    }

    #[test]
    fn project_point_on_manifold() {
        let p = ReferenceManifold::circle().project(&v(&[0.0, 1.0])).unwrap();
        assert_eq!(p.r, 0.0);
        assert_eq!(p.y, v(&[0.0, 1.0]));
    }

    #[test]
    fn project_sphere_inner_point() {
        let p = ReferenceManifold::sphere().project(&v(&[0.0, 0.0, 0.9])).unwrap();
        assert!((p.r + 0.1).abs() < 1e-15);
        assert_eq!(p.y, v(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn origin_is_ambiguous() {
        let err = ReferenceManifold::sphere().project(&v(&[0.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::AmbiguousProjection { .. }));
    }

    #[test]
    fn project_within_rejects_far_points() {
        let err = ReferenceManifold::circle()
            .project_within(&v(&[1.5, 0.0]), 0.2)
            .unwrap_err();
        assert!(matches!(err, Error::OutsideTube { .. }));
    }

    #[test]
    fn embed_examples() {
        let m = ReferenceManifold::circle();
        let x = m.embed(&TubularPoint::new(0.1, v(&[0.6, 0.8])));
        assert!((x - v(&[0.66, 0.88])).norm() < 1e-15);
        let y = v(&[0.6, 0.8]);
        assert_eq!(m.embed(&TubularPoint::on_manifold(y.clone())), y);
        let x = m.embed(&TubularPoint::new(-0.2, v(&[1.0, 0.0])));
        assert!((x - v(&[0.8, 0.0])).norm() < 1e-15);
        assert!(matches!(
            m.embed_within(&TubularPoint::new(0.3, v(&[1.0, 0.0])), 0.2),
            Err(Error::OutsideTube { .. })
        ));
    }

    #[test]
    fn frames_are_orthonormal_and_tangent() {
        for y in [v(&[0.0, 0.0, 1.0]), v(&[0.6, 0.0, 0.8]), v(&[1.0, 0.0, 0.0])] {
            let e = sphere_frame(&y);
            let g = e.transpose() * &e;
            assert!((g - DMatrix::identity(2, 2)).norm() < 1e-14);
            assert!((e.transpose() * &y).norm() < 1e-14);
        }
        let y = v(&[0.5, 0.5, 0.5, 0.5]);
        let e = sphere_frame(&y);
        assert_eq!(e.ncols(), 3);
        assert!((e.transpose() * &e - DMatrix::identity(3, 3)).norm() < 1e-14);
        assert!((e.transpose() * &y).norm() < 1e-14);
    }

    #[test]
    fn region_samples_are_nested() {
        let k = TubularRegion::shell(0.15, 0.2).unwrap();
        let coarse = k.radial_samples(32);
        let fine = k.radial_samples(64);
        for r in coarse {
            assert!(fine.iter().any(|&s| (s - r).abs() < 1e-15));
        }
        let tube = TubularRegion::tube(0.2).unwrap();
        assert!(tube.radial_samples(64).contains(&0.0));
        assert!(TubularRegion::new(0.2, 0.2, Side::Both).is_err());
    }

    proptest! {
        #[test]
        fn embed_project_round_trip(
            r in -0.2f64..0.2,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            c in -3.0f64..3.0,
        ) {
            let circle = ReferenceManifold::circle();
            let y = v(&[a.cos(), a.sin()]);
            let p = circle.project(&circle.embed(&TubularPoint::new(r, y.clone()))).unwrap();
            prop_assert!((p.r - r).abs() <= 1e-10);
            prop_assert!((p.y - y).norm() <= 1e-10);

            let sphere = ReferenceManifold::sphere();
            let d = v(&[a, b, c]);
            prop_assume!(d.norm() > 1e-3);
            let y = d.normalize();
            let x = sphere.embed(&TubularPoint::new(r, y.clone()));
            let p = sphere.project(&x).unwrap();
            prop_assert!((p.r - r).abs() <= 1e-10);
            prop_assert!((p.y - y).norm() <= 1e-10);
            // r > 0 iff |x| > 1
            prop_assert_eq!(p.r > 0.0, x.norm() > 1.0);
        }
    }
}
