//! Sampled verification of the derivative-norm hypotheses that force a
//! pitchfork bifurcation, and location of the threshold `mu*`.

mod norms;

pub use norms::{
    estimate_norms, Constants, NormReport, NormWitnesses, Norms, SamplingGrid, Witness,
    DEFAULT_RADIAL_INTERVALS, MIN_RADIAL_INTERVALS,
};

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{classify_side_behavior, split, split_components, MapFamily, SideBehavior};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, ManifoldMesh, TubularPoint, TubularRegion};

/// Tolerance for the container check `F(K) ⊆ K`.
pub const CONTAINMENT_TOL: f64 = 1e-9;
/// Bisection stops once the threshold bracket is this narrow.
pub const MU_STAR_WIDTH: f64 = 1e-10;

/// The hypotheses of the discrete bifurcation theorem, named by what they control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// The map never mixes the two sides of `M`.
    SideBehavior,
    /// `sup |D_r f| < 1` on the whole tube before the bifurcation.
    AttractingBefore,
    /// `inf |D_r f(0, y)| > 1` after the threshold.
    RepellingAfter,
    /// `sup |D_r f| < 1` on the annulus `alpha1 <= d <= alpha`.
    AnnulusContracting,
    /// `F(K) ⊆ K` and `sup_K |D_r f| < 1`.
    ShellTrapping,
    /// `c* < 1`.
    GraphContraction,
    /// `(Drf + Dyf)(Drg_hat + Dyg_hat) <= 1`.
    LipschitzProduct,
    /// `sigma < 1`.
    DerivativeBound,
}

impl Condition {
    pub const ALL: [Condition; 8] = [
        Condition::SideBehavior,
        Condition::AttractingBefore,
        Condition::RepellingAfter,
        Condition::AnnulusContracting,
        Condition::ShellTrapping,
        Condition::GraphContraction,
        Condition::LipschitzProduct,
        Condition::DerivativeBound,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SideBehavior => "side-behavior",
            Self::AttractingBefore => "attracting-before",
            Self::RepellingAfter => "repelling-after",
            Self::AnnulusContracting => "annulus-contracting",
            Self::ShellTrapping => "shell-trapping",
            Self::GraphContraction => "graph-contraction",
            Self::LipschitzProduct => "lipschitz-product",
            Self::DerivativeBound => "derivative-bound",
        }
    }

    /// Whether the condition is asserted at `mu`, given the threshold.
    pub fn applies(&self, mu: f64, mu_star: f64) -> bool {
        match self {
            Self::SideBehavior => true,
            Self::AttractingBefore => mu < 0.0,
            Self::AnnulusContracting => mu >= 0.0,
            _ => mu > mu_star,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown condition {s:?}")))
    }
}

/// How the inner radius `chi(mu)` of the trapping shell is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum ChiPolicy {
    /// `chi = alpha1 * clamp(4 (mu - mu*) / (a - mu*), 0, 1)`.
    Linear,
    /// A fixed inner radius.
    Fixed(f64),
    /// Largest `chi` on a 64-step grid over `[0, alpha1]` for which the sampled
    /// shell is trapping and `sup_K |D_r f| < 1`.
    Auto,
}

impl Default for ChiPolicy {
    fn default() -> Self {
        ChiPolicy::Auto
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub condition: Condition,
    pub applicable: bool,
    pub holds: bool,
    pub margin: f64,
    pub witness: Option<Witness>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisVerdict {
    pub mu: f64,
    pub mu_star: Option<f64>,
    pub side: SideBehavior,
    pub chi: f64,
    pub shell: TubularRegion,
    pub conditions: Vec<ConditionVerdict>,
    /// Conjunction over the requested conditions.
    pub overall: bool,
    pub norms: Option<NormReport>,
}

impl HypothesisVerdict {
    pub fn get(&self, c: Condition) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|v| v.condition == c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesesConfig {
    pub alpha1: f64,
    pub chi: ChiPolicy,
    /// Threshold; located by bisection over the family's range when absent.
    pub mu_star: Option<f64>,
    pub radial_intervals: usize,
    pub mesh_resolution: Option<usize>,
    pub side_samples: usize,
    /// Conditions to decide on; defaults to those that apply at each `mu`.
    pub requested: Option<Vec<Condition>>,
}

impl Default for HypothesesConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.15,
            chi: ChiPolicy::Auto,
            mu_star: None,
            radial_intervals: DEFAULT_RADIAL_INTERVALS,
            mesh_resolution: None,
            side_samples: 200,
            requested: None,
        }
    }
}

/// Default node count for hypothesis sampling.
pub fn default_mesh_resolution(ambient_dim: usize) -> usize {
    if ambient_dim == 2 {
        256
    } else {
        162
    }
}

fn witness_at(r: f64, y: &nalgebra::DVector<f64>, value: f64) -> Witness {
    Witness {
        r,
        y: y.iter().copied().collect(),
        value,
    }
}

/// Evaluates the hypotheses at every `mu` in `mus`.
pub fn check_hypotheses(
    family: &dyn MapFamily,
    mus: &[f64],
    config: &HypothesesConfig,
) -> Result<Vec<HypothesisVerdict>> {
    let (lo, hi) = family.mu_range();
    if let Some(mu) = mus.iter().find(|m| !(**m >= lo && **m <= hi)) {
        return Err(Error::InvalidInput(format!(
            "mu = {mu} is outside the family's range [{lo}, {hi}]"
        )));
    }
    let alpha = family.tube_radius();
    if !(config.alpha1 > 0.0 && config.alpha1 < alpha) {
        return Err(Error::InvalidInput(format!(
            "alpha1 must lie in (0, {alpha}), got {}",
            config.alpha1
        )));
    }
    let mesh = build_mesh(
        family.manifold(),
        config
            .mesh_resolution
            .unwrap_or_else(|| default_mesh_resolution(family.ambient_dim())),
    )?;
    let mu_star = match config.mu_star {
        Some(m) => Some(m),
        None => match find_mu_star(family, (lo, hi), &mesh) {
            Ok(b) => Some(0.5 * (b.lo + b.hi)),
            Err(Error::NoCrossing { .. }) => None,
            Err(e) => return Err(e),
        },
    };
    mus.iter()
        .map(|&mu| check_at(family, mu, mu_star, config, &mesh))
        .collect()
}

fn check_at(
    family: &dyn MapFamily,
    mu: f64,
    mu_star: Option<f64>,
    config: &HypothesesConfig,
    mesh: &ManifoldMesh,
) -> Result<HypothesisVerdict> {
    let alpha = family.tube_radius();
    let threshold = mu_star.unwrap_or(0.0);
    let requested: Vec<Condition> = match &config.requested {
        Some(list) => list.clone(),
        None => Condition::ALL
            .into_iter()
            .filter(|c| c.applies(mu, threshold))
            .collect(),
    };
    let wants = |c: Condition| requested.contains(&c);
    let applicable = |c: Condition| c.applies(mu, threshold);
    let mut conditions = Vec::new();

    let side = classify_side_behavior(family, mu, config.side_samples)?;
    if wants(Condition::SideBehavior) {
        let holds = side.behavior != SideBehavior::Mixed;
        conditions.push(ConditionVerdict {
            condition: Condition::SideBehavior,
            applicable: true,
            holds,
            margin: if holds {
                1.0
            } else {
                -(side.kept_side.min(side.switched_side) as f64) / side.samples as f64
            },
            witness: side
                .counterexample
                .as_ref()
                .map(|(x, _)| witness_at(f64::NAN, x, f64::NAN)),
            detail: format!(
                "{:?}: {} of {} inner samples stayed inside",
                side.behavior, side.kept_side, side.samples
            ),
        });
    }

    let radial_sup = |region: TubularRegion| -> Result<(f64, Witness)> {
        let rep = estimate_norms(family, mu, &region, mesh, config.radial_intervals)?;
        Ok((rep.norms.drf, rep.witnesses.drf))
    };

    if wants(Condition::AttractingBefore) {
        let (sup, w) = radial_sup(TubularRegion::tube(alpha)?)?;
        conditions.push(ConditionVerdict {
            condition: Condition::AttractingBefore,
            applicable: applicable(Condition::AttractingBefore),
            holds: sup < 1.0,
            margin: 1.0 - sup,
            witness: Some(w),
            detail: format!("sup |D_r f| over the tube = {sup:.12}"),
        });
    }

    if wants(Condition::RepellingAfter) {
        let (inf, w) = inf_radial_gain_on_manifold(family, mu, mesh)?;
        conditions.push(ConditionVerdict {
            condition: Condition::RepellingAfter,
            applicable: applicable(Condition::RepellingAfter),
            holds: inf > 1.0,
            margin: inf - 1.0,
            witness: Some(w),
            detail: format!("inf |D_r f(0, y)| = {inf:.12}"),
        });
    }

    if wants(Condition::AnnulusContracting) {
        let (sup, w) = radial_sup(TubularRegion::shell(config.alpha1, alpha)?)?;
        conditions.push(ConditionVerdict {
            condition: Condition::AnnulusContracting,
            applicable: applicable(Condition::AnnulusContracting),
            holds: sup < 1.0,
            margin: 1.0 - sup,
            witness: Some(w),
            detail: format!(
                "sup |D_r f| over {} <= d <= {alpha} = {sup:.12}",
                config.alpha1
            ),
        });
    }

    let chi = choose_chi(family, mu, mu_star, config, mesh)?;
    let shell = TubularRegion::shell(chi, alpha)?;
    let needs_norms = [
        Condition::ShellTrapping,
        Condition::GraphContraction,
        Condition::LipschitzProduct,
        Condition::DerivativeBound,
    ]
    .iter()
    .any(|c| wants(*c));
    let norms = if needs_norms {
        Some(estimate_norms(family, mu, &shell, mesh, config.radial_intervals)?)
    } else {
        None
    };

    if wants(Condition::ShellTrapping) {
        let rep = norms.as_ref().expect("norms computed");
        let trap = shell_containment(family, mu, &shell, mesh, config.radial_intervals)?;
        let c = rep.constants.c;
        let holds = trap.margin >= -CONTAINMENT_TOL && c < 1.0;
        conditions.push(ConditionVerdict {
            condition: Condition::ShellTrapping,
            applicable: applicable(Condition::ShellTrapping),
            holds,
            margin: trap.margin.min(1.0 - c),
            witness: Some(trap.witness.clone()),
            detail: format!(
                "worst image offset {:.12} from r = {:.6} (shell {chi:.6} <= d <= {alpha}); c = {c:.12}",
                trap.image_r, trap.witness.r
            ),
        });
    }

    if let Some(rep) = norms.as_ref() {
        let k = &rep.constants;
        let w = Some(rep.witnesses.drf.clone());
        if wants(Condition::GraphContraction) {
            conditions.push(ConditionVerdict {
                condition: Condition::GraphContraction,
                applicable: applicable(Condition::GraphContraction),
                holds: k.c_star < 1.0,
                margin: 1.0 - k.c_star,
                witness: w.clone(),
                detail: format!("c* = {:.12}", k.c_star),
            });
        }
        if wants(Condition::LipschitzProduct) {
            conditions.push(ConditionVerdict {
                condition: Condition::LipschitzProduct,
                applicable: applicable(Condition::LipschitzProduct),
                holds: k.lipschitz_product <= 1.0 + 1e-12,
                margin: 1.0 - k.lipschitz_product,
                witness: w.clone(),
                detail: format!("(Drf + Dyf)(Drg_hat + Dyg_hat) = {:.12}", k.lipschitz_product),
            });
        }
        if wants(Condition::DerivativeBound) {
            conditions.push(ConditionVerdict {
                condition: Condition::DerivativeBound,
                applicable: applicable(Condition::DerivativeBound),
                holds: k.sigma < 1.0,
                margin: 1.0 - k.sigma,
                witness: w,
                detail: format!("sigma = {:.12}", k.sigma),
            });
        }
    }

    let overall = conditions.iter().all(|v| v.holds);
    Ok(HypothesisVerdict {
        mu,
        mu_star,
        side: side.behavior,
        chi,
        shell,
        conditions,
        overall,
        norms,
    })
}

/// `inf_y |D_r f(0, y)|` over the mesh nodes.
pub fn inf_radial_gain_on_manifold(
    family: &dyn MapFamily,
    mu: f64,
    mesh: &ManifoldMesh,
) -> Result<(f64, Witness)> {
    let values: Vec<Result<f64>> = mesh
        .nodes()
        .par_iter()
        .map(|y| split_components(family, &TubularPoint::on_manifold(y.clone()), mu).map(|c| c.drf.abs()))
        .collect();
    let mut best = (f64::INFINITY, 0);
    for (i, v) in values.into_iter().enumerate() {
        let v = v?;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok((best.0, witness_at(0.0, &mesh.nodes()[best.1], best.0)))
}

/// Outcome of mapping the samples of a shell.
#[derive(Clone, Debug, PartialEq)]
pub struct Containment {
    /// Smallest signed distance of an image inside the shell (negative: escaped).
    pub margin: f64,
    pub image_r: f64,
    pub witness: Witness,
}

/// Maps the radial-grid samples of `shell` (boundary and interior) and
/// measures how far their images stay inside.
pub fn shell_containment(
    family: &dyn MapFamily,
    mu: f64,
    shell: &TubularRegion,
    mesh: &ManifoldMesh,
    radial_intervals: usize,
) -> Result<Containment> {
    let radii = shell.radial_samples(radial_intervals);
    let per_node: Vec<Result<Vec<(f64, f64, f64)>>> = mesh
        .nodes()
        .par_iter()
        .map(|y| {
            radii
                .iter()
                .map(|&r| {
                    let image = split(family, &TubularPoint::new(r, y.clone()), mu)?;
                    Ok((shell_margin(shell, image.r), r, image.r))
                })
                .collect()
        })
        .collect();
    let mut worst = (f64::INFINITY, 0.0, 0.0, 0);
    for (node, rows) in per_node.into_iter().enumerate() {
        for (m, r, fr) in rows? {
            if m < worst.0 {
                worst = (m, r, fr, node);
            }
        }
    }
    Ok(Containment {
        margin: worst.0,
        image_r: worst.2,
        witness: witness_at(worst.1, &mesh.nodes()[worst.3], worst.2),
    })
}

fn shell_margin(shell: &TubularRegion, r: f64) -> f64 {
    let d = r.abs();
    let band = (d - shell.inner_cut).min(shell.alpha - d);
    match shell.side {
        crate::geometry::Side::Both => band,
        crate::geometry::Side::Outer => band.min(r),
        crate::geometry::Side::Inner => band.min(-r),
    }
}

/// Applies the policy to get `chi(mu)`.
pub fn choose_chi(
    family: &dyn MapFamily,
    mu: f64,
    mu_star: Option<f64>,
    config: &HypothesesConfig,
    mesh: &ManifoldMesh,
) -> Result<f64> {
    let alpha1 = config.alpha1;
    match config.chi {
        ChiPolicy::Fixed(chi) => {
            if !(0.0..=alpha1).contains(&chi) {
                return Err(Error::InvalidInput(format!(
                    "chi = {chi} must lie in [0, alpha1 = {alpha1}]"
                )));
            }
            Ok(chi)
        }
        ChiPolicy::Linear => {
            let star = mu_star.unwrap_or(0.0);
            let a = family.mu_range().1;
            Ok(alpha1 * (4.0 * (mu - star) / (a - star)).clamp(0.0, 1.0))
        }
        ChiPolicy::Auto => auto_chi(family, mu, alpha1, mesh),
    }
}

const AUTO_CHI_STEPS: usize = 64;
const AUTO_CHI_OUTER_INTERVALS: usize = 16;

/// Largest grid value `chi = alpha1 k / 64` whose shell is sampled-trapping with `c < 1`.
///
/// Every candidate shell is a union of precomputed radial rows, so the map
/// is evaluated once per sample rather than once per candidate.
fn auto_chi(family: &dyn MapFamily, mu: f64, alpha1: f64, mesh: &ManifoldMesh) -> Result<f64> {
    let alpha = family.tube_radius();
    let mut levels: Vec<f64> = (0..=AUTO_CHI_STEPS)
        .map(|k| alpha1 * k as f64 / AUTO_CHI_STEPS as f64)
        .collect();
    levels.extend(
        (1..=AUTO_CHI_OUTER_INTERVALS)
            .map(|j| alpha1 + (alpha - alpha1) * j as f64 / AUTO_CHI_OUTER_INTERVALS as f64),
    );
    let mut radii: Vec<f64> = levels.iter().flat_map(|&d| [d, -d]).collect();
    radii.dedup();
    // rows[i] = (|r|, worst |f|-excursion data: min |f|, max |f|, max |D_r f|)
    let rows: Vec<Result<(f64, f64, f64, f64)>> = radii
        .par_iter()
        .map(|&r| {
            let mut min_f = f64::INFINITY;
            let mut max_f: f64 = 0.0;
            let mut max_d: f64 = 0.0;
            for y in mesh.nodes() {
                let c = split_components(family, &TubularPoint::new(r, y.clone()), mu)?;
                min_f = min_f.min(c.f.abs());
                max_f = max_f.max(c.f.abs());
                max_d = max_d.max(c.drf.abs());
            }
            Ok((r.abs(), min_f, max_f, max_d))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    for k in (0..=AUTO_CHI_STEPS).rev() {
        let chi = levels[k];
        let inside: Vec<&(f64, f64, f64, f64)> =
            rows.iter().filter(|row| row.0 >= chi - 1e-15).collect();
        let trapped = inside
            .iter()
            .all(|row| row.1 >= chi - CONTAINMENT_TOL && row.2 <= alpha + CONTAINMENT_TOL);
        let c = inside.iter().map(|row| row.3).fold(0.0, f64::max);
        if trapped && c < 1.0 {
            return Ok(chi);
        }
    }
    log::warn!("no trapping shell found for mu = {mu}; using chi = 0");
    Ok(0.0)
}

/// Bracket of the threshold where `inf_y |D_r f(0, y)|` crosses 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuStarBracket {
    pub lo: f64,
    pub hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub iterations: usize,
}

impl MuStarBracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, mu: f64) -> bool {
        self.lo <= mu && mu <= self.hi
    }
}

/// Bisects `q(mu) = inf_y |D_r f(0, y)| - 1` on `interval` down to width `1e-10`.
///
/// Values with `q <= 0` count as not repelling, so the bracket keeps the
/// last non-repelling parameter on one side and the first repelling one on
/// the other.
pub fn find_mu_star(
    family: &dyn MapFamily,
    interval: (f64, f64),
    mesh: &ManifoldMesh,
) -> Result<MuStarBracket> {
    let q = |mu: f64| -> Result<f64> { Ok(inf_radial_gain_on_manifold(family, mu, mesh)?.0) };
    let (mut lo, mut hi) = interval;
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("empty interval [{lo}, {hi}]")));
    }
    let (mut q_lo, mut q_hi) = (q(lo)?, q(hi)?);
    let repelling = |v: f64| v > 1.0;
    if repelling(q_lo) == repelling(q_hi) {
        return Err(Error::NoCrossing {
            lo,
            hi,
            q_lo,
            q_hi,
        });
    }
    let mut iterations = 0;
    while hi - lo > MU_STAR_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let q_mid = q(mid)?;
        if repelling(q_mid) == repelling(q_lo) {
            lo = mid;
            q_lo = q_mid;
        } else {
            hi = mid;
            q_hi = q_mid;
        }
        iterations += 1;
    }
    Ok(MuStarBracket {
        lo,
        hi,
        q_lo,
        q_hi,
        iterations,
    })
}

/// Result of checking the single combined estimate on a report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedEstimate {
    pub value: f64,
    pub holds: bool,
    pub margin: f64,
    /// Whether the three separate estimates hold on the same report.
    pub separate_estimates_hold: bool,
    /// `holds` implies `separate_estimates_hold`.
    pub consistent: bool,
}

/// The combined estimate `Drf Drg_hat + (Drf + Dyf)(1 + Drg_hat) < 1`, which
/// implies the graph-contraction, Lipschitz-product and derivative bounds.
pub fn check_combined_estimate(report: &NormReport) -> CombinedEstimate {
    let k = Constants::from_norms(&report.norms);
    let holds = k.combined < 1.0;
    let separate = k.c_star < 1.0 && k.lipschitz_product <= 1.0 && k.sigma < 1.0;
    CombinedEstimate {
        value: k.combined,
        holds,
        margin: 1.0 - k.combined,
        separate_estimates_hold: separate,
        consistent: !holds || separate,
    }
}

/// Basin condition near `M` and strict trapping of the shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinVerdict {
    pub mu: f64,
    pub chi: f64,
    pub side: SideBehavior,
    /// Points with `0 < |r| <= chi` move strictly away from `M`.
    pub escapes_near_manifold: bool,
    /// Smallest `|f| / |r| - 1` over the samples, sign-adjusted for reversing maps.
    pub escape_margin: f64,
    pub escape_witness: Witness,
    /// `F(K) ⊆ K` with `chi > 0`.
    pub shell_trapping: bool,
    pub trapping_margin: f64,
    pub holds: bool,
}

/// Checks `f(r, y) > r` on `(0, chi]` and `f(r, y) < r` on `[-chi, 0)` for
/// side-preserving maps. Side-reversing maps must send `r` to the opposite
/// side with `|f| > |r|`.
pub fn check_basin(
    family: &dyn MapFamily,
    mu: f64,
    chi: f64,
    mesh: &ManifoldMesh,
    radial_intervals: usize,
) -> Result<BasinVerdict> {
    let alpha = family.tube_radius();
    if !(chi > 0.0 && chi < alpha) {
        return Err(Error::InvalidInput(format!("chi must lie in (0, {alpha}), got {chi}")));
    }
    let side = classify_side_behavior(family, mu, 100)?.behavior;
    let n = radial_intervals.max(1);
    let radii: Vec<f64> = (1..=n)
        .flat_map(|k| {
            let r = chi * k as f64 / n as f64;
            [r, -r]
        })
        .collect();
    let per_node: Vec<Result<Vec<(f64, f64, f64)>>> = mesh
        .nodes()
        .par_iter()
        .map(|y| {
            radii
                .iter()
                .map(|&r| {
                    let f = split(family, &TubularPoint::new(r, y.clone()), mu)?.r;
                    let ratio = f / r;
                    let m = match side {
                        SideBehavior::SideReversing => -ratio - 1.0,
                        _ => ratio - 1.0,
                    };
                    Ok((m, r, f))
                })
                .collect()
        })
        .collect();
    let mut worst = (f64::INFINITY, 0.0, 0.0, 0);
    for (node, rows) in per_node.into_iter().enumerate() {
        for (m, r, f) in rows? {
            if m < worst.0 {
                worst = (m, r, f, node);
            }
        }
    }
    let shell = TubularRegion::shell(chi, alpha)?;
    let trap = shell_containment(family, mu, &shell, mesh, radial_intervals)?;
    let escapes = worst.0 > 0.0 && side != SideBehavior::Mixed;
    let trapping = trap.margin >= -CONTAINMENT_TOL;
    Ok(BasinVerdict {
        mu,
        chi,
        side,
        escapes_near_manifold: escapes,
        escape_margin: worst.0,
        escape_witness: witness_at(worst.1, &mesh.nodes()[worst.3], worst.2),
        shell_trapping: trapping,
        trapping_margin: trap.margin,
        holds: escapes && trapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{CanonicalFamily, ClosureFamily, SideReversing};
    use crate::geometry::ReferenceManifold;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn fixed_k() -> HypothesesConfig {
        HypothesesConfig {
            chi: ChiPolicy::Fixed(0.15),
            mesh_resolution: Some(64),
            ..Default::default()
        }
    }

    #[test]
    fn attracting_before_the_threshold() {
        let f = CanonicalFamily::planar(0.3);
        let v = check_hypotheses(&f, &[-0.04, -0.02], &fixed_k()).unwrap();
        for verdict in &v {
            let c = verdict.get(Condition::AttractingBefore).unwrap();
            assert!(c.holds && c.margin > 0.0);
            assert!(verdict.overall);
        }
    }

    #[test]
    fn repelling_after_the_threshold() {
        let f = CanonicalFamily::planar(0.3);
        let v = &check_hypotheses(&f, &[0.02], &fixed_k()).unwrap()[0];
        let c = v.get(Condition::RepellingAfter).unwrap();
        assert!(c.holds);
        assert!((c.margin - 0.02).abs() < 1e-14);
    }

    #[test]
    fn fixed_shell_at_one_fiftieth_is_not_trapping() {
        // f(0.15) = 1.15 sigma(1.15) - 1 = 0.14956875 < 0.15, so the shell leaks inward
        let f = CanonicalFamily::planar(0.3);
        let v = &check_hypotheses(&f, &[0.02], &fixed_k()).unwrap()[0];
        let trap = v.get(Condition::ShellTrapping).unwrap();
        assert!(!trap.holds);
        let w = trap.witness.as_ref().unwrap();
        assert!((w.r.abs() - 0.15).abs() < 1e-12);
        for c in [
            Condition::SideBehavior,
            Condition::RepellingAfter,
            Condition::AnnulusContracting,
            Condition::GraphContraction,
            Condition::LipschitzProduct,
            Condition::DerivativeBound,
        ] {
            assert!(v.get(c).unwrap().holds, "{c}");
        }
        let cstar = v.norms.as_ref().unwrap().constants.c_star;
        assert!((cstar - 0.96).abs() < 1e-12);
    }

    #[test]
    fn fixed_shell_at_one_twentyfifth_holds() {
        let f = CanonicalFamily::planar(0.3);
        let v = &check_hypotheses(&f, &[0.04], &fixed_k()).unwrap()[0];
        assert!(v.overall, "{:#?}", v.conditions);
    }

    #[test]
    fn auto_chi_gives_a_trapping_shell() {
        let f = CanonicalFamily::planar(0.3);
        let cfg = HypothesesConfig {
            mesh_resolution: Some(64),
            ..Default::default()
        };
        for mu in [0.01, 0.02, 0.04] {
            let v = &check_hypotheses(&f, &[mu], &cfg).unwrap()[0];
            assert!(v.overall, "mu {mu}: {:#?}", v.conditions);
            assert!(v.chi > 0.0 && v.chi <= f64::sqrt(mu) + 1e-12);
        }
    }

    #[test]
    fn requested_repelling_fails_before_threshold() {
        let f = CanonicalFamily::planar(0.3);
        let cfg = HypothesesConfig {
            requested: Some(vec![Condition::RepellingAfter]),
            ..fixed_k()
        };
        let v = &check_hypotheses(&f, &[-0.02], &cfg).unwrap()[0];
        assert!(!v.overall);
        assert!(!v.get(Condition::RepellingAfter).unwrap().applicable);
    }

    #[test]
    fn reversing_family_satisfies_the_same_estimates() {
        let g = SideReversing::new(Arc::new(CanonicalFamily::planar(0.3)));
        let v = &check_hypotheses(&g, &[0.04], &fixed_k()).unwrap()[0];
        assert_eq!(v.side, SideBehavior::SideReversing);
        assert!(v.overall, "{:#?}", v.conditions);
    }

    #[test]
    fn threshold_of_canonical_family() {
        let f = CanonicalFamily::planar(0.3);
        for n in [16, 64, 256] {
            let mesh = build_mesh(f.manifold(), n).unwrap();
            let b = find_mu_star(&f, (-0.04, 0.04), &mesh).unwrap();
            assert!(b.width() <= 1e-10);
            assert!(b.contains(0.0));
        }
        let mesh = build_mesh(f.manifold(), 16).unwrap();
        assert!(matches!(
            find_mu_star(&f, (0.01, 0.04), &mesh),
            Err(Error::NoCrossing { .. })
        ));
    }

    #[test]
    fn threshold_of_shifted_family() {
        let fam = ClosureFamily::new("shifted", ReferenceManifold::circle(), (0.0, 1.0), 0.2, |x, mu| {
            let rho = x.norm();
            let r = rho - 1.0;
            let r_new = (1.0 + (mu - 0.3)) * r;
            Ok(x * ((1.0 + r_new) / rho))
        })
        .with_jacobian(|x, mu| {
            let rho = x.norm();
            let k = 1.0 + (mu - 0.3);
            let s = (1.0 + k * (rho - 1.0)) / rho;
            let ds = (k * rho - (1.0 + k * (rho - 1.0))) / (rho * rho);
            let m = x.len();
            Ok(nalgebra::DMatrix::identity(m, m) * s + x * x.transpose() * (ds / rho))
        });
        let mesh = build_mesh(fam.manifold(), 16).unwrap();
        let b = find_mu_star(&fam, (0.0, 1.0), &mesh).unwrap();
        assert!((0.5 * (b.lo + b.hi) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn combined_estimate() {
        let k = TubularRegion::shell(0.15, 0.2).unwrap();
        let rep = NormReport::from_norms(
            k,
            0.0,
            Norms {
                drf: 0.5,
                dyf: 0.3,
                drg_hat: 0.5,
                ..Default::default()
            },
        );
        let c = check_combined_estimate(&rep);
        assert!((c.value - 1.45).abs() < 1e-15 && !c.holds && c.consistent);
        let c = check_combined_estimate(&NormReport::from_norms(k, 0.0, Norms::default()));
        assert!(c.holds && c.value == 0.0 && c.consistent);

        let f = CanonicalFamily::planar(0.3);
        let mesh = build_mesh(f.manifold(), 64).unwrap();
        let rep = estimate_norms(&f, 0.02, &k, &mesh, 64).unwrap();
        let c = check_combined_estimate(&rep);
        assert!(c.holds && c.consistent);
        assert!((c.value - rep.norms.drf).abs() < 1e-12);
    }

    #[test]
    fn basin_condition() {
        let f = CanonicalFamily::planar(0.3);
        let mesh = build_mesh(f.manifold(), 32).unwrap();
        let v = check_basin(&f, 0.02, 0.1, &mesh, 20).unwrap();
        assert!(v.escapes_near_manifold && v.shell_trapping && v.holds);
        let p = split(&f, &TubularPoint::new(0.05, DVector::from_column_slice(&[1.0, 0.0])), 0.02)
            .unwrap();
        assert!((p.r - (1.05 * 1.000875 - 1.0)).abs() < 1e-14);
        let p = split(&f, &TubularPoint::new(-0.05, DVector::from_column_slice(&[1.0, 0.0])), 0.02)
            .unwrap();
        assert!(p.r < -0.05);
        let v = check_basin(&f, -0.02, 0.1, &mesh, 20).unwrap();
        assert!(!v.escapes_near_manifold && !v.holds);

        let g = SideReversing::new(Arc::new(f));
        let v = check_basin(&g, 0.02, 0.1, &mesh, 20).unwrap();
        assert_eq!(v.side, SideBehavior::SideReversing);
        assert!(v.holds);
    }
}
