//! Invariant graphs over the reference manifold.
//!
//! A candidate manifold is a function `psi` on the mesh nodes; its graph is
//! `{ (psi(y), y) }` in tubular coordinates. The operator
//!
//! ```text
//! (T psi)(z) = f(psi(w), w),   w = g_hat(psi(z), z)
//! ```
//!
//! pulls each node back by the inverse map, reads `psi` there and pushes the
//! result forward again. Fixed points are invariant graphs.

mod report;
mod solver;

pub use report::{
    assemble_bifurcation_report, equicontinuity_probe, solve_branches, BifurcationReport,
    BranchConfig, BranchSolution, BranchSummary, Diffeomorphy, ModulusRow, ReportEntry, Stability,
    StabilityLabels, EQUICONTINUITY_SCALES,
};
pub use solver::{
    solve_fixed_point, solve_paired_fixed_point, FixedPointRun, IterationRecord, SolverConfig,
};

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{split, split_inverse, MapFamily};
use crate::error::{Error, Result};
use crate::geometry::{Interpolant, ManifoldMesh, TubularPoint, TubularRegion};

/// Which side of `M` a graph lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(&self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    pub fn opposite(&self) -> Branch {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        }
    }
}

/// Node values of a graph together with their interpolant.
#[derive(Clone, Debug)]
pub struct GraphFunction {
    mesh: Arc<ManifoldMesh>,
    values: Vec<f64>,
    branch: Branch,
    interp: Interpolant,
}

impl GraphFunction {
    /// Rejects values on the wrong side of `M`.
    pub fn new(mesh: Arc<ManifoldMesh>, values: Vec<f64>, branch: Branch) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(branch.sign() * **v >= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "{} branch has value {v} at node {i}",
                branch.as_str()
            )));
        }
        let interp = mesh.interpolant(&values)?;
        Ok(Self {
            mesh,
            values,
            branch,
            interp,
        })
    }

    pub fn constant(mesh: Arc<ManifoldMesh>, value: f64, branch: Branch) -> Result<Self> {
        let n = mesh.len();
        Self::new(mesh, vec![value; n], branch)
    }

    /// Values from a function of the node position.
    pub fn from_fn<F: Fn(&DVector<f64>) -> f64>(
        mesh: Arc<ManifoldMesh>,
        branch: Branch,
        f: F,
    ) -> Result<Self> {
        let values = mesh.nodes().iter().map(f).collect();
        Self::new(mesh, values, branch)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.mesh.clone(), values, self.branch)
    }

    pub fn mesh(&self) -> &Arc<ManifoldMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// Interpolated value at a point of `M`.
    pub fn eval_at(&self, y: &DVector<f64>) -> Result<f64> {
        let loc = self.mesh.locate(y)?;
        Ok(self.mesh.evaluate(&self.values, &self.interp, loc))
    }

    /// Ambient points `(psi(y_i), y_i)`.
    pub fn embedded_nodes(&self) -> Vec<DVector<f64>> {
        let man = self.mesh.manifold();
        self.mesh
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(y, &v)| man.embed(&TubularPoint::new(v, y.clone())))
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `max - min` of the node values.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        hi - lo
    }

    /// Largest node deviation from `target`.
    pub fn max_deviation_from(&self, target: f64) -> f64 {
        self.values.iter().map(|v| (v - target).abs()).fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &GraphFunction) -> f64 {
        sup_diff(&self.values, &other.values)
    }

    /// Checks the sign, Lipschitz and containment requirements of the solution space.
    pub fn membership(&self, region: &TubularRegion, tol: f64) -> Membership {
        let sign_ok = self.values.iter().all(|v| self.branch.sign() * v >= 0.0);
        let lipschitz = lipschitz_estimate(self);
        let contained = self.values.iter().all(|&v| region.contains(v, tol));
        Membership {
            sign_ok,
            lipschitz,
            lipschitz_ok: lipschitz <= 1.0 + tol,
            contained,
        }
    }

    /// Writes `node, y_1..y_m, value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let m = self.mesh.ambient_dim();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["node".to_string()];
        header.extend((1..=m).map(|k| format!("y{k}")));
        header.push("value".into());
        out.write_record(&header).map_err(csv_error)?;
        for (i, (y, v)) in self.mesh.nodes().iter().zip(&self.values).enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(y.iter().map(|c| c.to_string()));
            row.push(v.to_string());
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn to_export(&self) -> GraphExport {
        GraphExport {
            branch: self.branch,
            nodes: self
                .mesh
                .nodes()
                .iter()
                .map(|y| y.iter().copied().collect())
                .collect(),
            values: self.values.clone(),
        }
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv output failed: {e}"))
}

/// Serializable form of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub branch: Branch,
    pub nodes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub sign_ok: bool,
    pub lipschitz: f64,
    pub lipschitz_ok: bool,
    pub contained: bool,
}

impl Membership {
    pub fn holds(&self) -> bool {
        self.sign_ok && self.lipschitz_ok && self.contained
    }
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Node values of `z -> f(lookup(w), w)` with `w = g_hat(source(z), z)`.
fn pull_push(
    family: &dyn MapFamily,
    mu: f64,
    source: &GraphFunction,
    lookup: &GraphFunction,
) -> Result<Vec<f64>> {
    source
        .mesh
        .nodes()
        .par_iter()
        .zip(source.values.par_iter())
        .map(|(z, &v)| {
            let pre = split_inverse(family, &TubularPoint::new(v, z.clone()), mu)?;
            let r = lookup.eval_at(&pre.y)?;
            Ok(split(family, &TubularPoint::new(r, pre.y), mu)?.r)
        })
        .collect()
}

/// One application of the graph transform to a graph that `F_mu` maps to its own side.
pub fn graph_transform_apply(
    psi: &GraphFunction,
    family: &dyn MapFamily,
    mu: f64,
) -> Result<GraphFunction> {
    let values = pull_push(family, mu, psi, psi)?;
    GraphFunction::new(psi.mesh.clone(), values, psi.branch)
        .map_err(|_| Error::BranchCollapse { iteration: 1 })
}

/// Graph transform for a side-reversing map acting on the pair `(psi_plus, psi_minus)`.
///
/// The preimage of the plus graph lies on the minus side, so the new plus
/// graph reads the old minus graph and vice versa.
pub fn paired_transform_apply(
    plus: &GraphFunction,
    minus: &GraphFunction,
    family: &dyn MapFamily,
    mu: f64,
) -> Result<(GraphFunction, GraphFunction)> {
    let new_plus = pull_push(family, mu, plus, minus)?;
    let new_minus = pull_push(family, mu, minus, plus)?;
    let collapse = |_| Error::BranchCollapse { iteration: 1 };
    Ok((
        GraphFunction::new(plus.mesh.clone(), new_plus, plus.branch).map_err(collapse)?,
        GraphFunction::new(minus.mesh.clone(), new_minus, minus.branch).map_err(collapse)?,
    ))
}

/// Largest difference quotient of `psi` over mesh edges, distances measured by chord.
pub fn lipschitz_estimate(psi: &GraphFunction) -> f64 {
    let nodes = psi.mesh.nodes();
    psi.mesh
        .edges()
        .into_iter()
        .map(|(a, b)| {
            let d = (&nodes[a] - &nodes[b]).norm();
            (psi.values[a] - psi.values[b]).abs() / d
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{CanonicalFamily, SigmaProfile};
    use crate::geometry::{build_mesh, ReferenceManifold};

    fn circle(n: usize) -> Arc<ManifoldMesh> {
        Arc::new(build_mesh(&ReferenceManifold::circle(), n).unwrap())
    }

    #[test]
    fn branch_radius_is_a_fixed_point() {
        let f = CanonicalFamily::planar(0.7);
        let mu: f64 = 1.0 / 50.0;
        let psi = GraphFunction::constant(circle(64), mu.sqrt(), Branch::Plus).unwrap();
        let out = graph_transform_apply(&psi, &f, mu).unwrap();
        assert!(out.max_deviation_from(mu.sqrt()) < 1e-14);
    }

    #[test]
    fn zero_graph_is_fixed() {
        let f = CanonicalFamily::planar(0.7);
        let psi = GraphFunction::constant(circle(32), 0.0, Branch::Plus).unwrap();
        let out = graph_transform_apply(&psi, &f, 0.03).unwrap();
        assert!(out.max_deviation_from(0.0) < 1e-15);
    }

    #[test]
    fn constants_follow_the_radial_map() {
        let f = CanonicalFamily::planar(1.3);
        let mu: f64 = 1.0 / 50.0;
        let sigma = SigmaProfile::new(mu);
        for c in [0.05, 0.12, 0.18] {
            let psi = GraphFunction::constant(circle(48), c, Branch::Plus).unwrap();
            let out = graph_transform_apply(&psi, &f, mu).unwrap();
            let expected = (c + 1.0) * sigma.value(c + 1.0) - 1.0;
            assert!(out.max_deviation_from(expected) < 1e-14, "c = {c}");
        }
    }

    #[test]
    fn lipschitz_of_constants_and_sine() {
        let mesh = circle(256);
        let c = GraphFunction::constant(mesh.clone(), 0.1, Branch::Plus).unwrap();
        assert_eq!(lipschitz_estimate(&c), 0.0);
        let s = GraphFunction::from_fn(mesh, Branch::Plus, |y| 0.1 + 0.01 * y[1].atan2(y[0]).sin())
            .unwrap();
        assert!((lipschitz_estimate(&s) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn sign_is_enforced() {
        let mesh = circle(16);
        assert!(GraphFunction::constant(mesh.clone(), -0.1, Branch::Plus).is_err());
        assert!(GraphFunction::constant(mesh, 0.1, Branch::Minus).is_err());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let psi = GraphFunction::constant(circle(8), 0.1, Branch::Plus).unwrap();
        let mut buf = Vec::new();
        psi.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("node,y1,y2,value\n0,1,0,0.1\n"));
    }
}
