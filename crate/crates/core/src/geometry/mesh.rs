use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::interp::PeriodicSpline;
use super::ReferenceManifold;
use crate::error::{Error, Result};

pub const MIN_POLYGON_NODES: usize = 8;
pub const MIN_ICOSPHERE_NODES: usize = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolationScheme {
    PeriodicCubic,
    BarycentricLinear,
}

impl InterpolationScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PeriodicCubic => "periodic-cubic",
            Self::BarycentricLinear => "barycentric-linear",
        }
    }
}

#[derive(Clone, Debug)]
enum Topology {
    /// Closed polygon in node order; `angles` are the chart angles, strictly increasing.
    Polygon { angles: Vec<f64> },
    Triangles {
        faces: Vec<[usize; 3]>,
        vertex_faces: Vec<Vec<usize>>,
        params: Vec<[f64; 3]>,
    },
}

/// Where a point of `M` falls on the mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location {
    Angle(f64),
    Face { face: usize, weights: [f64; 3] },
}

/// Interpolation data for node values on a particular mesh.
#[derive(Clone, Debug)]
pub enum Interpolant {
    Spline(PeriodicSpline),
    Linear,
}

/// Closed discretisation of a reference manifold.
#[derive(Clone, Debug)]
pub struct ManifoldMesh {
    manifold: ReferenceManifold,
    nodes: Vec<DVector<f64>>,
    params: Vec<DVector<f64>>,
    topology: Topology,
}

/// JSON layout of an exported mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub nodes: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faces: Option<Vec<[usize; 3]>>,
    pub scheme: InterpolationScheme,
}

/// Builds a closed mesh: uniform angles for `m = 2`, a subdivided icosahedron for `m = 3`.
///
/// For the icosphere the smallest subdivision level with at least `resolution`
/// vertices is used (`10 * 4^s + 2` vertices).
pub fn build_mesh(manifold: &ReferenceManifold, resolution: usize) -> Result<ManifoldMesh> {
    match manifold.ambient_dim() {
        2 => {
            if resolution < MIN_POLYGON_NODES {
                return Err(Error::ResolutionTooSmall {
                    requested: resolution,
                    minimum: MIN_POLYGON_NODES,
                });
            }
            let angles: Vec<f64> = (0..resolution)
                .map(|k| TAU * k as f64 / resolution as f64)
                .collect();
            let params: Vec<DVector<f64>> = angles
                .iter()
                .map(|t| DVector::from_column_slice(&[t.cos(), t.sin()]))
                .collect();
            let nodes = params.iter().map(|u| manifold.chart_to_manifold(u)).collect();
            Ok(ManifoldMesh {
                manifold: manifold.clone(),
                nodes,
                params,
                topology: Topology::Polygon { angles },
            })
        }
        3 => {
            if resolution < MIN_ICOSPHERE_NODES {
                return Err(Error::ResolutionTooSmall {
                    requested: resolution,
                    minimum: MIN_ICOSPHERE_NODES,
                });
            }
            let mut level = 1;
            while 10 * 4usize.pow(level) + 2 < resolution {
                level += 1;
            }
            let (verts, faces) = icosphere(level);
            ManifoldMesh::from_triangles(manifold, verts, faces)
        }
        m => Err(Error::UnsupportedManifold(format!(
            "meshes are available for m = 2 and m = 3 only (m = {m})"
        ))),
    }
}

/// Unit icosphere after `subdivisions` rounds of midpoint subdivision, faces oriented outward.
pub fn icosphere(subdivisions: u32) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut verts: Vec<[f64; 3]> = raw.iter().map(|v| normalize3(*v)).collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(normalize3([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl ManifoldMesh {
    fn from_triangles(
        manifold: &ReferenceManifold,
        params3: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let params: Vec<DVector<f64>> = params3
            .iter()
            .map(|p| DVector::from_column_slice(p))
            .collect();
        let nodes = params.iter().map(|u| manifold.chart_to_manifold(u)).collect();
        let mut vertex_faces = vec![Vec::new(); params3.len()];
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                if v >= params3.len() {
                    return Err(Error::InvalidMesh(format!("face {f} references vertex {v}")));
                }
                vertex_faces[v].push(f);
            }
        }
        let mesh = Self {
            manifold: manifold.clone(),
            nodes,
            params,
            topology: Topology::Triangles {
                faces,
                vertex_faces,
                params: params3,
            },
        };
        if !mesh.is_closed() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary edges; every edge must be shared by exactly two faces",
                mesh.boundary_edges().len()
            )));
        }
        Ok(mesh)
    }

    pub fn manifold(&self) -> &ReferenceManifold {
        &self.manifold
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    /// Chart points (on the unit sphere) of the nodes.
    pub fn params(&self) -> &[DVector<f64>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.manifold.ambient_dim()
    }

    pub fn scheme(&self) -> InterpolationScheme {
        match self.topology {
            Topology::Polygon { .. } => InterpolationScheme::PeriodicCubic,
            Topology::Triangles { .. } => InterpolationScheme::BarycentricLinear,
        }
    }

    pub fn faces(&self) -> Option<&[[usize; 3]]> {
        match &self.topology {
            Topology::Triangles { faces, .. } => Some(faces),
            Topology::Polygon { .. } => None,
        }
    }

    /// Chart angles of the polygon nodes (`m = 2` only).
    pub fn angles(&self) -> Option<&[f64]> {
        match &self.topology {
            Topology::Polygon { angles } => Some(angles),
            Topology::Triangles { .. } => None,
        }
    }

    /// Unique undirected edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        match &self.topology {
            Topology::Polygon { angles } => {
                let n = angles.len();
                (0..n).map(|i| (i, (i + 1) % n)).collect()
            }
            Topology::Triangles { faces, .. } => {
                let mut edges: Vec<(usize, usize)> = faces
                    .iter()
                    .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
                    .map(|(a, b)| (a.min(b), a.max(b)))
                    .collect();
                edges.sort_unstable();
                edges.dedup();
                edges
            }
        }
    }

    /// Edges not shared by exactly two faces (or, for a polygon, nodes of degree != 2).
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        match &self.topology {
            Topology::Polygon { .. } => Vec::new(),
            Topology::Triangles { faces, .. } => {
                let mut count: HashMap<(usize, usize), usize> = HashMap::new();
                for f in faces {
                    for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                        *count.entry((a.min(b), a.max(b))).or_default() += 1;
                    }
                }
                let mut bad: Vec<_> = count
                    .into_iter()
                    .filter(|&(_, c)| c != 2)
                    .map(|(e, _)| e)
                    .collect();
                bad.sort_unstable();
                bad
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_edges().is_empty()
    }

    /// Flags a nested subset of roughly a quarter (sphere) or half (circle) of the nodes.
    ///
    /// For generated meshes this is exactly the next coarser mesh, so sampling
    /// on the subset is a refinement-halving of sampling on all nodes.
    pub fn coarse_nodes(&self) -> Vec<bool> {
        let n = self.len();
        match &self.topology {
            Topology::Polygon { .. } => (0..n).map(|i| i % 2 == 0).collect(),
            Topology::Triangles { .. } => {
                let coarse = if n >= 42 && (n - 2) % 40 == 0 { (n - 2) / 4 + 2 } else { n.div_ceil(2) };
                (0..n).map(|i| i < coarse).collect()
            }
        }
    }

    /// Largest edge chord length.
    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .into_iter()
            .map(|(a, b)| (&self.nodes[a] - &self.nodes[b]).norm())
            .fold(0.0, f64::max)
    }

    /// Locates a point of `M` on the mesh.
    pub fn locate(&self, y: &DVector<f64>) -> Result<Location> {
        let u = self.manifold.chart_point(y)?;
        self.locate_param(&u)
    }

    /// Locates a chart point (unit vector) on the mesh.
    pub fn locate_param(&self, u: &DVector<f64>) -> Result<Location> {
        match &self.topology {
            Topology::Polygon { .. } => Ok(Location::Angle(u[1].atan2(u[0]))),
            Topology::Triangles {
                faces,
                vertex_faces,
                params,
            } => {
                let q = [u[0], u[1], u[2]];
                let nearest = params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, dot(*p, q)))
                    .fold((0, f64::NEG_INFINITY), |best, cur| {
                        if cur.1 > best.1 {
                            cur
                        } else {
                            best
                        }
                    })
                    .0;
                let candidates = vertex_faces[nearest].iter().copied().chain(0..faces.len());
                for f in candidates {
                    if let Some(weights) = face_weights(params, faces[f], q) {
                        return Ok(Location::Face { face: f, weights });
                    }
                }
                Err(Error::InterpolationOutOfRange(q.to_vec()))
            }
        }
    }

    /// Prepares interpolation of node values.
    pub fn interpolant(&self, values: &[f64]) -> Result<Interpolant> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        match &self.topology {
            Topology::Polygon { angles } => Ok(Interpolant::Spline(PeriodicSpline::new(
                angles.clone(),
                TAU,
                values.to_vec(),
            )?)),
            Topology::Triangles { .. } => Ok(Interpolant::Linear),
        }
    }

    /// Evaluates the interpolated function at a located point.
    pub fn evaluate(&self, values: &[f64], interp: &Interpolant, loc: Location) -> f64 {
        match (interp, loc) {
            (Interpolant::Spline(s), Location::Angle(t)) => s.eval(t),
            (Interpolant::Linear, Location::Face { face, weights }) => {
                let f = self.faces().expect("triangle mesh")[face];
                weights[0] * values[f[0]] + weights[1] * values[f[1]] + weights[2] * values[f[2]]
            }
            _ => unreachable!("interpolant and location come from the same mesh"),
        }
    }

    pub fn to_file(&self) -> MeshFile {
        let nodes = self.nodes.iter().map(|n| n.iter().copied().collect()).collect();
        match &self.topology {
            Topology::Polygon { angles } => {
                let n = angles.len();
                MeshFile {
                    nodes,
                    edges: Some((0..n).map(|i| [i, (i + 1) % n]).collect()),
                    faces: None,
                    scheme: InterpolationScheme::PeriodicCubic,
                }
            }
            Topology::Triangles { faces, .. } => MeshFile {
                nodes,
                edges: None,
                faces: Some(faces.clone()),
                scheme: InterpolationScheme::BarycentricLinear,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("mesh serialises")
    }

    pub fn from_json(manifold: &ReferenceManifold, json: &str) -> Result<Self> {
        let file: MeshFile =
            serde_json::from_str(json).map_err(|e| Error::InvalidMesh(e.to_string()))?;
        Self::from_file(manifold, &file)
    }

    /// Rebuilds a mesh from its file form, checking that nodes lie on `M` and that it is closed.
    pub fn from_file(manifold: &ReferenceManifold, file: &MeshFile) -> Result<Self> {
        let m = manifold.ambient_dim();
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for (i, n) in file.nodes.iter().enumerate() {
            if n.len() != m {
                return Err(Error::InvalidMesh(format!("node {i} has dimension {}", n.len())));
            }
            let y = DVector::from_column_slice(n);
            let tol = match manifold {
                ReferenceManifold::UnitSphere { .. } => 1e-12,
                ReferenceManifold::Parameterized(_) => 1e-9,
            };
            let p = manifold.project(&y)?;
            if p.r.abs() > tol * y.norm().max(1.0) {
                return Err(Error::InvalidMesh(format!("node {i} is off the manifold by {}", p.r)));
            }
            nodes.push(y);
        }
        let params = nodes
            .iter()
            .map(|y| manifold.chart_point(y))
            .collect::<Result<Vec<_>>>()?;
        match (m, file.scheme) {
            (2, InterpolationScheme::PeriodicCubic) => {
                let edges = file
                    .edges
                    .as_ref()
                    .ok_or_else(|| Error::InvalidMesh("polygon mesh needs edges".into()))?;
                let order = polygon_cycle(nodes.len(), edges)?;
                let mut order = order;
                let mut angles = unwrapped_angles(&params, &order);
                if angles[1] < angles[0] {
                    order[1..].reverse();
                    angles = unwrapped_angles(&params, &order);
                }
                let monotone = angles.windows(2).all(|w| w[1] > w[0]);
                if !monotone || angles[angles.len() - 1] >= angles[0] + TAU {
                    return Err(Error::InvalidMesh(
                        "polygon does not wind once around the manifold".into(),
                    ));
                }
                Ok(Self {
                    manifold: manifold.clone(),
                    nodes: order.iter().map(|&i| nodes[i].clone()).collect(),
                    params: order.iter().map(|&i| params[i].clone()).collect(),
                    topology: Topology::Polygon { angles },
                })
            }
            (3, InterpolationScheme::BarycentricLinear) => {
                let faces = file
                    .faces
                    .clone()
                    .ok_or_else(|| Error::InvalidMesh("triangle mesh needs faces".into()))?;
                let params3 = params.iter().map(|u| [u[0], u[1], u[2]]).collect();
                let mut mesh = Self::from_triangles(manifold, params3, faces)?;
                mesh.nodes = nodes;
                Ok(mesh)
            }
            (m, s) => Err(Error::InvalidMesh(format!(
                "scheme {} does not fit ambient dimension {m}",
                s.as_str()
            ))),
        }
    }
}

fn unwrapped_angles(params: &[DVector<f64>], order: &[usize]) -> Vec<f64> {
    let mut angles: Vec<f64> = Vec::with_capacity(order.len());
    for &i in order {
        let a = params[i][1].atan2(params[i][0]);
        let a = match angles.last() {
            None => a,
            Some(&prev) => prev + (a - prev + PI).rem_euclid(TAU) - PI,
        };
        angles.push(a);
    }
    angles
}

/// Orders the nodes of a polygon along its single cycle.
fn polygon_cycle(n: usize, edges: &[[usize; 2]]) -> Result<Vec<usize>> {
    if n < 3 || edges.len() != n {
        return Err(Error::InvalidMesh(format!(
            "closed polygon needs as many edges as nodes ({} nodes, {} edges)",
            n,
            edges.len()
        )));
    }
    let mut adj = vec![Vec::with_capacity(2); n];
    for &[a, b] in edges {
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidMesh(format!("bad edge [{a}, {b}]")));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    if let Some(i) = adj.iter().position(|a| a.len() != 2) {
        return Err(Error::InvalidMesh(format!(
            "node {i} has degree {}; polygon has a boundary",
            adj[i].len()
        )));
    }
    let mut order = vec![0];
    let (mut prev, mut cur) = (0, adj[0][0]);
    while cur != 0 {
        order.push(cur);
        let next = if adj[cur][0] == prev { adj[cur][1] } else { adj[cur][0] };
        prev = cur;
        cur = next;
        if order.len() > n {
            break;
        }
    }
    if order.len() != n {
        return Err(Error::InvalidMesh("edges form more than one cycle".into()));
    }
    Ok(order)
}

fn face_weights(params: &[[f64; 3]], face: [usize; 3], q: [f64; 3]) -> Option<[f64; 3]> {
    let (a, b, c) = (params[face[0]], params[face[1]], params[face[2]]);
    let n = cross(sub3(b, a), sub3(c, a));
    let denom = dot(n, q);
    if denom <= 0.0 {
        return None;
    }
    let t = dot(n, a) / denom;
    let p = [q[0] * t, q[1] * t, q[2] * t];
    let nn = dot(n, n);
    let wa = dot(cross(sub3(b, p), sub3(c, p)), n) / nn;
    let wb = dot(cross(sub3(c, p), sub3(a, p)), n) / nn;
    let wc = 1.0 - wa - wb;
    const EPS: f64 = -1e-12;
    (wa >= EPS && wb >= EPS && wc >= EPS).then_some([wa, wb, wc])
}
