use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{solve_fixed_point, solve_paired_fixed_point, FixedPointRun, SolverConfig};
use super::{Branch, GraphFunction, Membership};
use crate::dynsys::{classify_side_behavior, split, split_components, MapFamily, SideBehavior};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, ManifoldMesh, TubularPoint, TubularRegion};
use crate::hypotheses::{
    choose_chi, default_mesh_resolution, estimate_norms, find_mu_star, inf_radial_gain_on_manifold,
    MuStarBracket, HypothesesConfig,
};

/// Chord scales for the equicontinuity table: `2^-3 .. 2^-8`.
pub const EQUICONTINUITY_SCALES: [f64; 6] = [0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub hypotheses: HypothesesConfig,
    pub solver: SolverConfig,
    /// Iterations per stability probe.
    pub probe_steps: usize,
    /// Number of mesh nodes probes start from.
    pub probe_nodes: usize,
    /// Initial distance of probe points from a branch.
    pub probe_offset: f64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            hypotheses: HypothesesConfig::default(),
            solver: SolverConfig::default(),
            probe_steps: 200,
            probe_nodes: 16,
            probe_offset: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Attracting,
    Repelling,
    Indeterminate,
}

impl Stability {
    fn from_gain(lo: f64, hi: f64) -> Self {
        if hi < 1.0 {
            Stability::Attracting
        } else if lo > 1.0 {
            Stability::Repelling
        } else {
            Stability::Indeterminate
        }
    }
}

/// Stability of `M` and of both branches, from `|D_r f|` and from iterating nearby points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityLabels {
    pub manifold: Stability,
    pub plus: Stability,
    pub minus: Stability,
    pub manifold_probe: Stability,
    pub plus_probe: Stability,
    pub minus_probe: Stability,
    /// `inf |D_r f(0, y)|`.
    pub manifold_gain: f64,
    /// `sup |D_r f|` along each branch.
    pub plus_gain: f64,
    pub minus_gain: f64,
}

/// Bi-Lipschitz bounds of `y -> (phi(y), y)` on node pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diffeomorphy {
    pub injective: bool,
    pub lower: f64,
    pub upper: f64,
}

/// Both bifurcated branches at one parameter value with their diagnostics.
#[derive(Clone, Debug)]
pub struct BranchSolution {
    pub mu: f64,
    pub side: SideBehavior,
    pub chi: f64,
    pub c_star: f64,
    pub plus: GraphFunction,
    pub minus: GraphFunction,
    pub plus_run: FixedPointRun,
    pub minus_run: FixedPointRun,
    /// Largest `|f(phi(y), y) - phi(g(phi(y), y))|` for each branch, read on the
    /// branch the image lands on.
    pub invariance_defect: [f64; 2],
    /// For side-reversing maps: node-image deviation of `F(plus)` from `minus` and back.
    pub swap_deviation: Option<f64>,
    /// For side-reversing maps: deviation of `F(F(branch))` from the branch.
    pub double_step_deviation: Option<f64>,
    pub stability: StabilityLabels,
    pub membership: [Membership; 2],
    pub diffeomorphy: [Diffeomorphy; 2],
    /// Plus values all positive and minus values all negative.
    pub sign_separated: bool,
}

/// The serializable part of a [`BranchSolution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub mu: f64,
    pub side: SideBehavior,
    pub chi: f64,
    pub c_star: f64,
    pub plus_mean: f64,
    pub plus_spread: f64,
    pub minus_mean: f64,
    pub minus_spread: f64,
    pub plus_run: FixedPointRun,
    pub minus_run: FixedPointRun,
    pub invariance_defect: [f64; 2],
    pub swap_deviation: Option<f64>,
    pub double_step_deviation: Option<f64>,
    pub stability: StabilityLabels,
    pub membership: [Membership; 2],
    pub diffeomorphy: [Diffeomorphy; 2],
    pub sign_separated: bool,
}

impl BranchSolution {
    pub fn branch(&self, b: Branch) -> &GraphFunction {
        match b {
            Branch::Plus => &self.plus,
            Branch::Minus => &self.minus,
        }
    }

    pub fn summary(&self) -> BranchSummary {
        BranchSummary {
            mu: self.mu,
            side: self.side,
            chi: self.chi,
            c_star: self.c_star,
            plus_mean: self.plus.mean(),
            plus_spread: self.plus.spread(),
            minus_mean: self.minus.mean(),
            minus_spread: self.minus.spread(),
            plus_run: self.plus_run.clone(),
            minus_run: self.minus_run.clone(),
            invariance_defect: self.invariance_defect,
            swap_deviation: self.swap_deviation,
            double_step_deviation: self.double_step_deviation,
            stability: self.stability,
            membership: self.membership,
            diffeomorphy: self.diffeomorphy,
            sign_separated: self.sign_separated,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReportEntry {
    pub mu: f64,
    pub solution: Option<BranchSolution>,
    pub verdict: String,
}

#[derive(Clone, Debug)]
pub struct BifurcationReport {
    pub family: String,
    pub mu_star_bracket: Option<MuStarBracket>,
    pub entries: Vec<ReportEntry>,
}

impl BifurcationReport {
    /// Entries where both branches were found.
    pub fn branches(&self) -> impl Iterator<Item = &BranchSolution> {
        self.entries.iter().filter_map(|e| e.solution.as_ref())
    }
}

/// Solves for both branches at `mu`.
///
/// Fails with [`Error::NoBifurcation`] when `M` is not normally repelling or
/// the map mixes the two sides.
pub fn solve_branches(
    family: &dyn MapFamily,
    mu: f64,
    mesh: Arc<ManifoldMesh>,
    config: &BranchConfig,
) -> Result<BranchSolution> {
    let (gain, _) = inf_radial_gain_on_manifold(family, mu, &mesh)?;
    if !(gain > 1.0) {
        return Err(Error::NoBifurcation {
            mu,
            reason: format!("M is not normally repelling: inf |D_r f(0, y)| = {gain} <= 1"),
        });
    }
    let side = classify_side_behavior(family, mu, config.hypotheses.side_samples)?.behavior;
    if side == SideBehavior::Mixed {
        return Err(Error::NoBifurcation {
            mu,
            reason: "the map sends points of one side to both sides of M".into(),
        });
    }
    let alpha = family.tube_radius();
    let chi = choose_chi(family, mu, config.hypotheses.mu_star, &config.hypotheses, &mesh)?;
    let shell = TubularRegion::shell(chi, alpha)?;
    let norms = estimate_norms(family, mu, &shell, &mesh, config.hypotheses.radial_intervals)?;
    let c_star = norms.constants.c_star;
    let solver = SolverConfig {
        c_star: config.solver.c_star.or(Some(c_star)),
        shell: config.solver.shell.or(Some(shell)),
        ..config.solver.clone()
    };
    let start = 0.5 * (chi + alpha);
    let plus0 = GraphFunction::constant(mesh.clone(), start, Branch::Plus)?;
    let minus0 = GraphFunction::constant(mesh.clone(), -start, Branch::Minus)?;

    let (plus, minus, plus_run, minus_run) = match side {
        SideBehavior::SideReversing => {
            let (p, m, run) = solve_paired_fixed_point(&plus0, &minus0, family, mu, &solver)?;
            (p, m, run.clone(), run)
        }
        _ => {
            let (a, b) = rayon::join(
                || solve_fixed_point(&plus0, family, mu, &solver),
                || solve_fixed_point(&minus0, family, mu, &solver),
            );
            let (p, pr) = a?;
            let (m, mr) = b?;
            (p, m, pr, mr)
        }
    };

    let reversing = side == SideBehavior::SideReversing;
    let invariance_defect = [
        graph_defect(family, mu, &plus, if reversing { &minus } else { &plus }, 1)?,
        graph_defect(family, mu, &minus, if reversing { &plus } else { &minus }, 1)?,
    ];
    let (swap_deviation, double_step_deviation) = if reversing {
        let double = graph_defect(family, mu, &plus, &plus, 2)?
            .max(graph_defect(family, mu, &minus, &minus, 2)?);
        (Some(invariance_defect[0].max(invariance_defect[1])), Some(double))
    } else {
        (None, None)
    };
    let stability = stability_labels(family, mu, &plus, &minus, gain, config)?;
    let tol = 1e-9;
    let sign_separated = plus.values().iter().all(|v| *v > 0.0) && minus.values().iter().all(|v| *v < 0.0);
    Ok(BranchSolution {
        mu,
        side,
        chi,
        c_star,
        membership: [plus.membership(&shell, tol), minus.membership(&shell, tol)],
        diffeomorphy: [diffeomorphy(&plus), diffeomorphy(&minus)],
        plus,
        minus,
        plus_run,
        minus_run,
        invariance_defect,
        swap_deviation,
        double_step_deviation,
        stability,
        sign_separated,
    })
}

/// Solves branches over a parameter grid; values without a bifurcation get an explanatory entry.
pub fn assemble_bifurcation_report(
    family: &dyn MapFamily,
    mus: &[f64],
    config: &BranchConfig,
) -> Result<BifurcationReport> {
    let resolution = config
        .hypotheses
        .mesh_resolution
        .unwrap_or_else(|| default_mesh_resolution(family.ambient_dim()));
    let mesh = Arc::new(build_mesh(family.manifold(), resolution)?);
    let mu_star_bracket = match find_mu_star(family, family.mu_range(), &mesh) {
        Ok(b) => Some(b),
        Err(Error::NoCrossing { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut entries = Vec::with_capacity(mus.len());
    for &mu in mus {
        match solve_branches(family, mu, mesh.clone(), config) {
            Ok(sol) => entries.push(ReportEntry {
                mu,
                verdict: format!(
                    "branches at mean offsets {:.9} and {:.9}",
                    sol.plus.mean(),
                    sol.minus.mean()
                ),
                solution: Some(sol),
            }),
            Err(Error::NoBifurcation { reason, .. }) => entries.push(ReportEntry {
                mu,
                solution: None,
                verdict: reason,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(BifurcationReport {
        family: family.name(),
        mu_star_bracket,
        entries,
    })
}

/// Largest `|f^k(from(y), y) - to(g^k(from(y), y))|` over the nodes, `k = steps`.
fn graph_defect(
    family: &dyn MapFamily,
    mu: f64,
    from: &GraphFunction,
    to: &GraphFunction,
    steps: usize,
) -> Result<f64> {
    let defects: Vec<Result<f64>> = from
        .mesh()
        .nodes()
        .par_iter()
        .zip(from.values().par_iter())
        .map(|(y, &v)| {
            let mut p = TubularPoint::new(v, y.clone());
            for _ in 0..steps {
                p = split(family, &p, mu)?;
            }
            Ok((p.r - to.eval_at(&p.y)?).abs())
        })
        .collect();
    defects.into_iter().try_fold(0.0, |m, d| Ok(f64::max(m, d?)))
}

fn probe_nodes(mesh: &ManifoldMesh, count: usize) -> Vec<usize> {
    let n = mesh.len();
    let count = count.clamp(1, n);
    (0..count).map(|k| k * n / count).collect()
}

/// Iterates points starting near a graph and compares final and initial distances.
///
/// `distance` measures how far a tubular point is from the object probed.
fn probe<D>(
    family: &dyn MapFamily,
    mu: f64,
    starts: Vec<TubularPoint>,
    steps: usize,
    distance: D,
) -> Result<Stability>
where
    D: Fn(&TubularPoint) -> Result<f64> + Sync,
{
    let outcomes: Vec<Result<Stability>> = starts
        .into_par_iter()
        .map(|mut p| {
            let d0 = distance(&p)?;
            for _ in 0..steps {
                p = match split(family, &p, mu) {
                    Ok(q) => q,
                    Err(Error::LeftTube { .. }) => return Ok(Stability::Repelling),
                    Err(e) => return Err(e),
                };
            }
            let d1 = distance(&p)?;
            Ok(if d1 < 0.5 * d0 {
                Stability::Attracting
            } else if d1 > 2.0 * d0 {
                Stability::Repelling
            } else {
                Stability::Indeterminate
            })
        })
        .collect();
    let mut label = None;
    for o in outcomes {
        let o = o?;
        match label {
            None => label = Some(o),
            Some(l) if l != o => return Ok(Stability::Indeterminate),
            _ => {}
        }
    }
    Ok(label.unwrap_or(Stability::Indeterminate))
}

fn stability_labels(
    family: &dyn MapFamily,
    mu: f64,
    plus: &GraphFunction,
    minus: &GraphFunction,
    manifold_gain: f64,
    config: &BranchConfig,
) -> Result<StabilityLabels> {
    let gain_range = |psi: &GraphFunction| -> Result<(f64, f64)> {
        let gains: Vec<Result<f64>> = psi
            .mesh()
            .nodes()
            .par_iter()
            .zip(psi.values().par_iter())
            .map(|(y, &v)| Ok(split_components(family, &TubularPoint::new(v, y.clone()), mu)?.drf.abs()))
            .collect();
        gains.into_iter().try_fold((f64::INFINITY, 0.0f64), |(lo, hi), g| {
            let g = g?;
            Ok((lo.min(g), hi.max(g)))
        })
    };
    let (plus_lo, plus_hi) = gain_range(plus)?;
    let (minus_lo, minus_hi) = gain_range(minus)?;

    let mesh = plus.mesh();
    let nodes = probe_nodes(mesh, config.probe_nodes);
    let to_branches = |p: &TubularPoint| -> Result<f64> {
        let target = if p.r >= 0.0 { plus } else { minus };
        Ok((p.r - target.eval_at(&p.y)?).abs())
    };
    let around = |psi: &GraphFunction| -> Vec<TubularPoint> {
        let dir = psi.branch().sign();
        nodes
            .iter()
            .flat_map(|&i| {
                let y = &mesh.nodes()[i];
                let v = psi.values()[i];
                // one start on each side of the branch, both on the branch's side of M
                [v + config.probe_offset * dir, v - 0.5 * config.probe_offset * dir]
                    .map(|r| TubularPoint::new(r, y.clone()))
            })
            .collect()
    };
    let plus_probe = probe(family, mu, around(plus), config.probe_steps, to_branches)?;
    let minus_probe = probe(family, mu, around(minus), config.probe_steps, to_branches)?;
    let near_manifold: Vec<TubularPoint> = nodes
        .iter()
        .flat_map(|&i| [1e-6, -1e-6].map(|r| TubularPoint::new(r, mesh.nodes()[i].clone())))
        .collect();
    let manifold_probe = probe(family, mu, near_manifold, 10 * config.probe_steps, |p| Ok(p.r.abs()))?;
    Ok(StabilityLabels {
        manifold: Stability::from_gain(manifold_gain, manifold_gain),
        plus: Stability::from_gain(plus_lo, plus_hi),
        minus: Stability::from_gain(minus_lo, minus_hi),
        manifold_probe,
        plus_probe,
        minus_probe,
        manifold_gain,
        plus_gain: plus_hi,
        minus_gain: minus_hi,
    })
}

/// Ratio bounds of `|H(y_i) - H(y_j)| / |y_i - y_j|` over all node pairs, `H(y) = (phi(y), y)`.
fn diffeomorphy(psi: &GraphFunction) -> Diffeomorphy {
    let nodes = psi.mesh().nodes();
    let lifted = psi.embedded_nodes();
    let (lower, upper) = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for j in i + 1..nodes.len() {
                let q = (&lifted[i] - &lifted[j]).norm() / (&nodes[i] - &nodes[j]).norm();
                lo = lo.min(q);
                hi = hi.max(q);
            }
            (lo, hi)
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    Diffeomorphy {
        injective: lower > 0.0,
        lower,
        upper,
    }
}

/// One line of the equicontinuity table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub iteration: usize,
    pub delta: f64,
    /// `max |D psi_n(y_i) - D psi_n(y_j)|` over node pairs with chord `<= delta`.
    pub modulus: f64,
}

/// Tabulates the oscillation of the tangential derivative of every retained iterate.
///
/// Derivatives are least-squares gradients over edge neighbours, expressed
/// as ambient vectors so they can be compared between nodes. Paired runs
/// store both graphs back to back; the modulus is the larger of the two.
pub fn equicontinuity_probe(run: &FixedPointRun, mesh: &ManifoldMesh) -> Vec<ModulusRow> {
    let n = mesh.len();
    let nodes = mesh.nodes();
    let mut neighbours = vec![Vec::new(); n];
    for (a, b) in mesh.edges() {
        neighbours[a].push(b);
        neighbours[b].push(a);
    }
    let frames: Vec<DMatrix<f64>> = nodes.iter().map(|y| mesh.manifold().tangent_frame(y)).collect();
    let pairs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, (&nodes[i] - &nodes[j]).norm()))
        .filter(|p| p.2 <= EQUICONTINUITY_SCALES[0])
        .collect();

    let gradients = |values: &[f64]| -> Vec<DVector<f64>> {
        (0..n)
            .map(|i| {
                let e = &frames[i];
                let k = e.ncols();
                let mut normal = DMatrix::<f64>::zeros(k, k);
                let mut rhs = DVector::<f64>::zeros(k);
                for &j in &neighbours[i] {
                    let d = e.transpose() * (&nodes[j] - &nodes[i]);
                    normal += &d * d.transpose();
                    rhs += &d * (values[j] - values[i]);
                }
                let g = normal.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k));
                e * g
            })
            .collect()
    };

    let pairs = &pairs;
    run.snapshots
        .par_iter()
        .enumerate()
        .flat_map_iter(|(it, snap)| {
            let grads: Vec<Vec<DVector<f64>>> = snap.chunks(n).map(|c| gradients(c)).collect();
            EQUICONTINUITY_SCALES.iter().map(move |&delta| {
                let modulus = pairs
                    .iter()
                    .filter(|p| p.2 <= delta)
                    .flat_map(|&(i, j, _)| grads.iter().map(move |g| (&g[i] - &g[j]).norm()))
                    .fold(0.0, f64::max);
                ModulusRow {
                    iteration: it + 1,
                    delta,
                    modulus,
                }
            })
            .collect::<Vec<_>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{CanonicalFamily, SideReversing};
    use crate::geometry::ReferenceManifold;

    fn circle(n: usize) -> Arc<ManifoldMesh> {
        Arc::new(build_mesh(&ReferenceManifold::circle(), n).unwrap())
    }

    #[test]
    fn canonical_branches_and_labels() {
        let f = CanonicalFamily::planar(0.9);
        let sol = solve_branches(&f, 0.02, circle(128), &BranchConfig::default()).unwrap();
        let root = 0.02f64.sqrt();
        assert!(sol.plus.max_deviation_from(root) < 1e-10);
        assert!(sol.minus.max_deviation_from(-root) < 1e-10);
        assert!(sol.sign_separated);
        assert_eq!(sol.stability.manifold, Stability::Repelling);
        assert_eq!(sol.stability.manifold_probe, Stability::Repelling);
        for s in [sol.stability.plus, sol.stability.minus, sol.stability.plus_probe, sol.stability.minus_probe] {
            assert_eq!(s, Stability::Attracting);
        }
        assert!(sol.membership.iter().all(|m| m.holds()));
        assert!(sol.diffeomorphy.iter().all(|d| d.injective && d.upper < 1.2));
        let bound = sol.plus_run.error_bound.unwrap();
        assert!(sol.invariance_defect[0] <= 10.0 * bound);
    }

    #[test]
    fn reversing_branches_swap() {
        let g = SideReversing::new(Arc::new(CanonicalFamily::planar(0.9)));
        let sol = solve_branches(&g, 0.02, circle(128), &BranchConfig::default()).unwrap();
        assert_eq!(sol.side, SideBehavior::SideReversing);
        assert!(sol.swap_deviation.unwrap() < 1e-9);
        assert!(sol.double_step_deviation.unwrap() < 1e-9);
        assert!(sol.plus.max_deviation_from(0.02f64.sqrt()) < 1e-10);
        assert_eq!(sol.stability.plus_probe, Stability::Attracting);
    }

    #[test]
    fn report_skips_values_before_the_threshold() {
        let f = CanonicalFamily::planar(0.9);
        let cfg = BranchConfig {
            hypotheses: HypothesesConfig {
                mesh_resolution: Some(64),
                ..Default::default()
            },
            ..Default::default()
        };
        let rep = assemble_bifurcation_report(&f, &[-0.02, 0.0, 0.01, 0.04], &cfg).unwrap();
        assert!(rep.mu_star_bracket.unwrap().contains(0.0));
        assert!(rep.entries[0].solution.is_none() && rep.entries[1].solution.is_none());
        assert!(rep.entries[1].verdict.contains("not normally repelling"));
        let radii: Vec<f64> = rep.branches().map(|s| s.plus.mean()).collect();
        assert!((radii[0] - 0.1).abs() < 1e-10 && (radii[1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn constant_iterates_have_flat_derivatives() {
        let f = CanonicalFamily::planar(0.9);
        let mesh = circle(64);
        let psi0 = GraphFunction::constant(mesh.clone(), 0.175, Branch::Plus).unwrap();
        let cfg = SolverConfig {
            keep_snapshots: true,
            ..Default::default()
        };
        let (_, run) = solve_fixed_point(&psi0, &f, 0.02, &cfg).unwrap();
        let table = equicontinuity_probe(&run, &mesh);
        assert_eq!(table.len(), run.snapshots.len() * EQUICONTINUITY_SCALES.len());
        assert!(table.iter().all(|r| r.modulus <= 1e-8));
    }

    #[test]
    fn oscillation_decays_along_iterates() {
        let f = CanonicalFamily::planar(0.9);
        let mesh = circle(128);
        let psi0 =
            GraphFunction::from_fn(mesh.clone(), Branch::Plus, |y| 0.17 + 0.01 * y[1].atan2(y[0]).sin())
                .unwrap();
        let cfg = SolverConfig {
            keep_snapshots: true,
            anderson_depth: 0,
            max_iter: 40,
            ..Default::default()
        };
        let (_, run) = solve_fixed_point(&psi0, &f, 0.04, &cfg).unwrap();
        let table = equicontinuity_probe(&run, &mesh);
        for &delta in &EQUICONTINUITY_SCALES[..2] {
            let series: Vec<f64> = table.iter().filter(|r| r.delta == delta).map(|r| r.modulus).collect();
            assert!(series[0] > 0.0);
            for w in series[5..].windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "delta {delta}: {w:?}");
            }
        }
        // below the node spacing no pairs remain
        let smallest = EQUICONTINUITY_SCALES[5];
        assert!(table.iter().filter(|r| r.delta == smallest).all(|r| r.modulus == 0.0));
    }
}
