use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::mesh::icosphere;
use super::sphere_frame;
use crate::error::{Error, Result};

type Embedding = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

const PROJECTION_TOL: f64 = 1e-12;
const PROJECTION_MAX_ITER: usize = 50;
const JAC_STEP: f64 = 1e-6;
const HESS_STEP: f64 = 1e-4;

/// A closed hypersurface given as a smooth embedding of the unit sphere `S^{m-1}`.
///
/// Closest points are found by damped Newton on `|phi(u) - x|^2` over the
/// sphere, seeded from a coarse sampling. The outward side is fixed from the
/// chart orientation and checked with a ray-casting parity test.
pub struct ParamSurface {
    dim: usize,
    embedding: Arc<Embedding>,
    flip: bool,
    seeds: Vec<(DVector<f64>, DVector<f64>)>,
}

impl fmt::Debug for ParamSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamSurface")
            .field("dim", &self.dim)
            .field("seeds", &self.seeds.len())
            .field("flip", &self.flip)
            .finish()
    }
}

impl ParamSurface {
    /// Builds the surface and fixes its orientation. Only `m = 2, 3` can be checked.
    pub fn new<F>(dim: usize, embedding: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let seed_params: Vec<DVector<f64>> = match dim {
            2 => (0..128)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / 128.0;
                    DVector::from_column_slice(&[t.cos(), t.sin()])
                })
                .collect(),
            3 => icosphere(3).0.iter().map(|p| DVector::from_column_slice(p)).collect(),
            _ => {
                return Err(Error::UnsupportedManifold(format!(
                    "parameterized surfaces need m = 2 or m = 3 (m = {dim})"
                )))
            }
        };
        let embedding: Arc<Embedding> = Arc::new(embedding);
        let mut seeds = Vec::with_capacity(seed_params.len());
        for u in seed_params {
            let p = embedding(&u);
            if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "embedding returned {} finite-checked coordinates, expected {dim}",
                    p.len()
                )));
            }
            seeds.push((u, p));
        }
        let mut surface = Self {
            dim,
            embedding,
            flip: false,
            seeds,
        };
        surface.flip = !surface.orientation_is_outward()?;
        if surface.flip {
            log::debug!("chart orientation points inward; flipping the normal");
        }
        Ok(surface)
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    /// Embedding evaluated at `u / |u|`.
    pub fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.embedding)(&u.normalize())
    }

    /// Derivative of the embedding along the sphere frame at `u`, `m x (m-1)`.
    fn chart_jacobian(&self, u: &DVector<f64>, frame: &DMatrix<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.dim, self.dim - 1);
        for k in 0..self.dim - 1 {
            let e = frame.column(k).into_owned();
            let plus = self.eval(&(u + &e * JAC_STEP));
            let minus = self.eval(&(u - &e * JAC_STEP));
            jac.set_column(k, &((plus - minus) / (2.0 * JAC_STEP)));
        }
        jac
    }

    /// Unit normal at chart point `u`, oriented outward.
    fn normal_at_param(&self, u: &DVector<f64>) -> DVector<f64> {
        let frame = sphere_frame(u);
        let jac = self.chart_jacobian(u, &frame);
        let n = generalized_cross(&jac);
        let chart_sign = {
            let mut m = DMatrix::zeros(self.dim, self.dim);
            m.set_column(0, u);
            m.view_mut((0, 1), (self.dim, self.dim - 1)).copy_from(&frame);
            m.determinant().signum()
        };
        // generalized_cross gives det[n | J] > 0
        let n = n.normalize() * chart_sign;
        if self.flip {
            -n
        } else {
            n
        }
    }

    /// Closest point of the surface: `(signed offset, point, chart point)`.
    pub fn project(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let (seed, _) = self
            .seeds
            .iter()
            .map(|(u, p)| (u, (p - x).norm_squared()))
            .fold((&self.seeds[0].0, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            });
        let mut u = seed.clone();
        let objective = |u: &DVector<f64>| 0.5 * (self.eval(u) - x).norm_squared();
        let mut trace = Vec::new();
        let mut converged = false;
        for _ in 0..PROJECTION_MAX_ITER {
            let frame = sphere_frame(&u);
            let local = |w: &DVector<f64>| objective(&(&u + &frame * w));
            let k = self.dim - 1;
            let jac = self.chart_jacobian(&u, &frame);
            let grad = jac.transpose() * (self.eval(&u) - x);
            let mut hess = DMatrix::zeros(k, k);
            let f0 = local(&DVector::zeros(k));
            for i in 0..k {
                for j in 0..=i {
                    let mut ei = DVector::zeros(k);
                    ei[i] = HESS_STEP;
                    let mut ej = DVector::zeros(k);
                    ej[j] = HESS_STEP;
                    let h = if i == j {
                        (local(&ei) - 2.0 * f0 + local(&(-&ei))) / (HESS_STEP * HESS_STEP)
                    } else {
                        (local(&(&ei + &ej)) - local(&(&ei - &ej)) - local(&(&ej - &ei))
                            + local(&(-&ei - &ej)))
                            / (4.0 * HESS_STEP * HESS_STEP)
                    };
                    hess[(i, j)] = h;
                    hess[(j, i)] = h;
                }
            }
            trace.push(grad.norm());
            let step = match hess.clone().cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => -(jac.transpose() * &jac)
                    .try_inverse()
                    .ok_or_else(|| Error::NewtonDivergence { trace: trace.clone() })?
                    * &grad,
            };
            let mut scale = 1.0;
            let mut next = (&u + &frame * &step * scale).normalize();
            while objective(&next) > f0 && scale > 1e-6 {
                scale *= 0.5;
                next = (&u + &frame * &step * scale).normalize();
            }
            let moved = (&next - &u).norm();
            u = next;
            if moved <= PROJECTION_TOL || grad.norm() <= 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged && trace.last().copied().unwrap_or(f64::INFINITY) > 1e-9 {
            return Err(Error::NewtonDivergence { trace });
        }
        let y = self.eval(&u);
        let n = self.normal_at_param(&u);
        let r = (x - &y).dot(&n);
        Ok((r, y, u))
    }

    pub fn normal_at_point(&self, y: &DVector<f64>) -> DVector<f64> {
        match self.project(y) {
            Ok((_, _, u)) => self.normal_at_param(&u),
            Err(_) => DVector::from_element(self.dim, f64::NAN),
        }
    }

    /// Orthonormal tangent frame at a surface point.
    pub fn frame_at_point(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let u = match self.project(y) {
            Ok((_, _, u)) => u,
            Err(_) => return DMatrix::from_element(self.dim, self.dim - 1, f64::NAN),
        };
        let jac = self.chart_jacobian(&u, &sphere_frame(&u));
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.dim - 1);
        for k in 0..self.dim - 1 {
            let mut v = jac.column(k).into_owned();
            for c in &cols {
                let d = c.dot(&v);
                v -= c * d;
            }
            cols.push(v.normalize());
        }
        DMatrix::from_columns(&cols)
    }

    /// Ray-casting parity from a point just off the surface along the chart normal.
    fn orientation_is_outward(&self) -> Result<bool> {
        let (u, p) = &self.seeds[0];
        let n = {
            let frame = sphere_frame(u);
            let jac = self.chart_jacobian(u, &frame);
            let mut m = DMatrix::zeros(self.dim, self.dim);
            m.set_column(0, u);
            m.view_mut((0, 1), (self.dim, self.dim - 1)).copy_from(&frame);
            generalized_cross(&jac).normalize() * m.determinant().signum()
        };
        let scale = self
            .seeds
            .iter()
            .map(|(_, q)| (q - p).norm())
            .fold(0.0, f64::max);
        let origin = p + &n * (1e-6 * scale);
        let crossings = match self.dim {
            2 => {
                let pts: Vec<&DVector<f64>> = self.seeds.iter().map(|(_, q)| q).collect();
                (0..pts.len())
                    .filter(|&i| {
                        let a = pts[i];
                        let b = pts[(i + 1) % pts.len()];
                        ray_hits_segment(&origin, &n, a, b)
                    })
                    .count()
            }
            _ => {
                let (params, faces) = icosphere(3);
                let pts: Vec<DVector<f64>> = params
                    .iter()
                    .map(|q| self.eval(&DVector::from_column_slice(q)))
                    .collect();
                faces
                    .iter()
                    .filter(|f| ray_hits_triangle(&origin, &n, &pts[f[0]], &pts[f[1]], &pts[f[2]]))
                    .count()
            }
        };
        Ok(crossings % 2 == 0)
    }
}

/// Vector orthogonal to the columns of an `m x (m-1)` matrix with `det[n | J] > 0`.
fn generalized_cross(jac: &DMatrix<f64>) -> DVector<f64> {
    let m = jac.nrows();
    let mut n = DVector::zeros(m);
    for i in 0..m {
        let minor = jac.clone().remove_row(i);
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        n[i] = sign * minor.determinant();
    }
    n
}

fn ray_hits_segment(o: &DVector<f64>, d: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> bool {
    let e = b - a;
    let denom = d[0] * (-e[1]) - d[1] * (-e[0]);
    if denom.abs() < 1e-300 {
        return false;
    }
    let rhs = a - o;
    let t = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / denom;
    let s = (d[0] * rhs[1] - d[1] * rhs[0]) / denom;
    t > 0.0 && (0.0..1.0).contains(&s)
}

fn ray_hits_triangle(
    o: &DVector<f64>,
    d: &DVector<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let p = super::cross3(d, &e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return false;
    }
    let s = o - a;
    let u = s.dot(&p) / det;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = super::cross3(&s, &e1);
    let v = d.dot(&q) / det;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) / det > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, ReferenceManifold, TubularPoint};

    fn ellipse(reversed: bool) -> ParamSurface {
        ParamSurface::new(2, move |u| {
            let v = if reversed { -u[1] } else { u[1] };
            DVector::from_column_slice(&[1.5 * u[0], 0.8 * v])
        })
        .unwrap()
    }

    #[test]
    fn ellipse_projection_and_orientation() {
        for reversed in [false, true] {
            let m = ReferenceManifold::parameterized(ellipse(reversed));
            let y = DVector::from_column_slice(&[1.5, 0.0]);
            let p = m.project(&DVector::from_column_slice(&[1.6, 0.0])).unwrap();
            assert!((p.r - 0.1).abs() < 1e-9, "r = {}", p.r);
            assert!((&p.y - &y).norm() < 1e-9);
            let p = m.project(&DVector::from_column_slice(&[0.0, 0.7])).unwrap();
            assert!((p.r + 0.1).abs() < 1e-9);
            let n = m.normal(&y);
            assert!((n[0] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn ellipse_round_trip() {
        let m = ReferenceManifold::parameterized(ellipse(false));
        for k in 0..24 {
            let t = 0.3 + k as f64 * 0.26;
            let y = m.chart_to_manifold(&DVector::from_column_slice(&[t.cos(), t.sin()]));
            for r in [-0.15, 0.0, 0.12] {
                let p = m.project(&m.embed(&TubularPoint::new(r, y.clone()))).unwrap();
                assert!((p.r - r).abs() < 1e-8);
                assert!((&p.y - &y).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn ellipsoid_mesh_is_closed() {
        let s = ParamSurface::new(3, |u| DVector::from_column_slice(&[u[0], 1.2 * u[1], 0.9 * u[2]]))
            .unwrap();
        let m = ReferenceManifold::parameterized(s);
        let mesh = build_mesh(&m, 42).unwrap();
        assert!(mesh.is_closed());
        let p = m.project(&DVector::from_column_slice(&[0.0, 0.0, 1.0])).unwrap();
        assert!((p.r - 0.1).abs() < 1e-9);
        let frame = m.tangent_frame(&p.y);
        assert!((frame.transpose() * &frame - DMatrix::identity(2, 2)).norm() < 1e-8);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(matches!(
            ParamSurface::new(4, |u| u.clone()),
            Err(Error::UnsupportedManifold(_))
        ));
    }
}
