//! Sampled verification of the continuous-time bifurcation hypotheses.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gronwall::{GronwallBounds, GronwallParams};
use super::{field_components, flow_with_jacobian, integrate_flow, tubular_rates, IntegratorConfig, VectorField};
use crate::dynsys::spectral_norm;
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, ManifoldMesh, TubularPoint, TubularRegion};
use crate::graphtransform::GraphFunction;
use crate::hypotheses::{default_mesh_resolution, MuStarBracket, Witness, MU_STAR_WIDTH};

/// Times at which the comparison estimates are evaluated.
pub const DEFAULT_TIMES: [f64; 3] = [1.0, 1.5, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowCondition {
    /// The field points into the tube on its boundary.
    Inward,
    /// `D_r R < 0` on the tube before the bifurcation.
    AttractingBefore,
    /// `D_r R(0, y) > 0` after the threshold.
    RepellingAfter,
    /// `D_r R <= -2s < 0` on the annulus and the field points into it.
    AnnulusDecay,
    /// The comparison bounds satisfy the three estimates for the time-`t` map.
    ComparisonEstimates,
}

impl FlowCondition {
    pub const ALL: [FlowCondition; 5] = [
        FlowCondition::Inward,
        FlowCondition::AttractingBefore,
        FlowCondition::RepellingAfter,
        FlowCondition::AnnulusDecay,
        FlowCondition::ComparisonEstimates,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Inward => "inward",
            Self::AttractingBefore => "attracting-before",
            Self::RepellingAfter => "repelling-after",
            Self::AnnulusDecay => "annulus-decay",
            Self::ComparisonEstimates => "comparison-estimates",
        }
    }

    pub fn applies(&self, mu: f64, mu_star: f64) -> bool {
        match self {
            Self::Inward => true,
            Self::AttractingBefore => mu < 0.0,
            _ => mu > mu_star,
        }
    }
}

impl fmt::Display for FlowCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FlowCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown flow condition {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConditionVerdict {
    pub condition: FlowCondition,
    pub applicable: bool,
    pub holds: bool,
    pub margin: f64,
    pub witness: Option<Witness>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckConfig {
    /// Inner radius of the annulus.
    pub alpha1: f64,
    pub mu_star: Option<f64>,
    pub mesh_resolution: Option<usize>,
    pub radial_intervals: usize,
    pub times: Vec<f64>,
    pub integrator: IntegratorConfig,
    pub requested: Option<Vec<FlowCondition>>,
}

impl Default for FlowCheckConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.1,
            mu_star: None,
            mesh_resolution: None,
            radial_intervals: 16,
            times: DEFAULT_TIMES.to_vec(),
            integrator: IntegratorConfig::default(),
            requested: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowVerdict {
    pub mu: f64,
    pub mu_star: Option<f64>,
    /// Constants fitted on the annulus, when it decays.
    pub params: Option<GronwallParams>,
    pub ineq_ok: bool,
    /// `(t, margins)` of the three comparison estimates.
    pub estimate_margins: Vec<(f64, [f64; 3])>,
    pub conditions: Vec<FlowConditionVerdict>,
    pub overall: bool,
}

impl FlowVerdict {
    pub fn get(&self, c: FlowCondition) -> Option<&FlowConditionVerdict> {
        self.conditions.iter().find(|v| v.condition == c)
    }
}

fn witness(r: f64, y: &DVector<f64>, value: f64) -> Witness {
    Witness {
        r,
        y: y.iter().copied().collect(),
        value,
    }
}

/// Extremum of `value` over `(r, y)` samples: the largest when `max`, else the smallest.
fn extremum<F>(mesh: &ManifoldMesh, radii: &[f64], max: bool, value: F) -> Result<(f64, Witness)>
where
    F: Fn(f64, &DVector<f64>) -> Result<f64> + Sync,
{
    let pairs: Vec<(f64, usize)> = radii
        .iter()
        .flat_map(|&r| (0..mesh.nodes().len()).map(move |i| (r, i)))
        .collect();
    let values: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(r, i)| value(r, &mesh.nodes()[i]))
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (k, v) in values.into_iter().enumerate() {
        let v = v?;
        let better = match best {
            None => true,
            Some((b, _)) => (max && v > b) || (!max && v < b),
        };
        if better {
            best = Some((v, k));
        }
    }
    let (v, k) = best.ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    let (r, i) = pairs[k];
    Ok((v, witness(r, &mesh.nodes()[i], v)))
}

fn radial_rate(field: &dyn VectorField, r: f64, y: &DVector<f64>, mu: f64) -> Result<f64> {
    let x = field.manifold().embed(&TubularPoint::new(r, y.clone()));
    Ok(tubular_rates(field, &x, mu)?.0)
}

/// `inf_y D_r R(0, y)` over the mesh nodes.
fn inf_normal_rate(field: &dyn VectorField, mu: f64, mesh: &ManifoldMesh) -> Result<(f64, Witness)> {
    extremum(mesh, &[0.0], false, |r, y| {
        Ok(field_components(field, &TubularPoint::new(r, y.clone()), mu)?.drr)
    })
}

/// Bisects the sign change of `inf_y D_r R(0, y)` on `interval`.
pub fn find_flow_mu_star(
    field: &dyn VectorField,
    interval: (f64, f64),
    mesh: &ManifoldMesh,
) -> Result<MuStarBracket> {
    let q = |mu: f64| -> Result<f64> { Ok(inf_normal_rate(field, mu, mesh)?.0) };
    let (mut lo, mut hi) = interval;
    if !(lo < hi) {
        return Err(Error::InvalidInput(format!("empty interval [{lo}, {hi}]")));
    }
    let (mut q_lo, mut q_hi) = (q(lo)?, q(hi)?);
    if (q_lo > 0.0) == (q_hi > 0.0) {
        return Err(Error::NoCrossing { lo, hi, q_lo, q_hi });
    }
    let mut iterations = 0;
    while hi - lo > MU_STAR_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let q_mid = q(mid)?;
        if (q_mid > 0.0) == (q_lo > 0.0) {
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

struct AnnulusFit {
    max_drr: f64,
    drr_witness: Witness,
    sigma: f64,
    nu: f64,
}

fn fit_annulus(field: &dyn VectorField, mu: f64, mesh: &ManifoldMesh, radii: &[f64]) -> Result<AnnulusFit> {
    let pairs: Vec<(f64, &DVector<f64>)> = radii
        .iter()
        .flat_map(|&r| mesh.nodes().iter().map(move |y| (r, y)))
        .collect();
    let comps: Vec<Result<(f64, f64, f64)>> = pairs
        .par_iter()
        .map(|(r, y)| {
            let c = field_components(field, &TubularPoint::new(*r, (*y).clone()), mu)?;
            Ok((c.drr, c.dyr_norm().max(c.dry_norm()), c.dyy_norm()))
        })
        .collect();
    let mut fit = AnnulusFit {
        max_drr: f64::NEG_INFINITY,
        drr_witness: witness(0.0, pairs[0].1, f64::NAN),
        sigma: 0.0,
        nu: 0.0,
    };
    for (k, c) in comps.into_iter().enumerate() {
        let (drr, sigma, nu) = c?;
        if drr > fit.max_drr {
            fit.max_drr = drr;
            fit.drr_witness = witness(pairs[k].0, pairs[k].1, drr);
        }
        fit.sigma = fit.sigma.max(sigma);
        fit.nu = fit.nu.max(nu);
    }
    Ok(fit)
}

/// Evaluates the continuous-time hypotheses at every `mu` in `mus`.
pub fn check_flow_conditions(
    field: &dyn VectorField,
    mus: &[f64],
    config: &FlowCheckConfig,
) -> Result<Vec<FlowVerdict>> {
    let (lo, hi) = field.mu_range();
    if let Some(mu) = mus.iter().find(|m| !(**m >= lo && **m <= hi)) {
        return Err(Error::InvalidInput(format!(
            "mu = {mu} is outside the field's range [{lo}, {hi}]"
        )));
    }
    let alpha = field.tube_radius();
    if !(config.alpha1 > 0.0 && config.alpha1 < alpha) {
        return Err(Error::InvalidInput(format!(
            "annulus inner radius {} must lie in (0, {alpha})",
            config.alpha1
        )));
    }
    let resolution = config
        .mesh_resolution
        .unwrap_or_else(|| default_mesh_resolution(field.ambient_dim()));
    let mesh = build_mesh(field.manifold(), resolution)?;
    let mu_star = match config.mu_star {
        Some(v) => Some(v),
        None => match find_flow_mu_star(field, (lo, hi), &mesh) {
            Ok(b) => Some(b.hi),
            Err(Error::NoCrossing { .. }) => {
                log::warn!("no sign change of the normal rate on [{lo}, {hi}]; using threshold 0");
                None
            }
            Err(e) => return Err(e),
        },
    };
    let tube = TubularRegion::tube(alpha)?.radial_samples(config.radial_intervals);
    let annulus = TubularRegion::shell(config.alpha1, alpha)?.radial_samples(config.radial_intervals);
    mus.iter()
        .map(|&mu| verdict_at(field, mu, mu_star, config, &mesh, &tube, &annulus))
        .collect()
}

fn verdict_at(
    field: &dyn VectorField,
    mu: f64,
    mu_star: Option<f64>,
    config: &FlowCheckConfig,
    mesh: &ManifoldMesh,
    tube: &[f64],
    annulus: &[f64],
) -> Result<FlowVerdict> {
    let alpha = field.tube_radius();
    let threshold = mu_star.unwrap_or(0.0);
    let requested: Vec<FlowCondition> = match &config.requested {
        Some(list) => list.clone(),
        None => FlowCondition::ALL
            .into_iter()
            .filter(|c| c.applies(mu, threshold))
            .collect(),
    };

    // inward pointing at |r| = alpha
    let (inward, inward_w) = extremum(mesh, &[alpha, -alpha], false, |r, y| {
        Ok(-r.signum() * radial_rate(field, r, y, mu)?)
    })?;
    // pointing away from M at |r| = alpha1
    let (outward, outward_w) = extremum(mesh, &[config.alpha1, -config.alpha1], false, |r, y| {
        Ok(r.signum() * radial_rate(field, r, y, mu)?)
    })?;
    let fit = fit_annulus(field, mu, mesh, annulus)?;
    let s = -fit.max_drr / 2.0;
    let params = (s > 0.0).then(|| GronwallParams::new(s, fit.sigma, fit.nu));
    let ineq_ok = params.is_some_and(|p| p.satisfies_ineq());
    let estimate_margins: Vec<(f64, [f64; 3])> = match params {
        Some(p) => {
            let b = GronwallBounds::new_unchecked(p);
            config.times.iter().map(|&t| (t, b.estimate_margins(t))).collect()
        }
        None => Vec::new(),
    };

    let mut conditions = Vec::new();
    for c in FlowCondition::ALL {
        let applicable = c.applies(mu, threshold);
        let (margin, witness, detail, holds) = match c {
            FlowCondition::Inward => (
                inward,
                Some(inward_w.clone()),
                format!("min inward normal speed on |r| = {alpha}: {inward:.6e}"),
                inward > 0.0,
            ),
            FlowCondition::AttractingBefore => {
                let (sup, w) = extremum(mesh, tube, true, |r, y| {
                    Ok(field_components(field, &TubularPoint::new(r, y.clone()), mu)?.drr)
                })?;
                (-sup, Some(w), format!("sup D_r R on the tube: {sup:.6e}"), sup < 0.0)
            }
            FlowCondition::RepellingAfter => {
                let (inf, w) = inf_normal_rate(field, mu, mesh)?;
                (inf, Some(w), format!("inf D_r R(0, y): {inf:.6e}"), inf > 0.0)
            }
            FlowCondition::AnnulusDecay => {
                let margin = s.min(inward).min(outward);
                let w = if s <= outward.min(inward) {
                    fit.drr_witness.clone()
                } else if outward <= inward {
                    outward_w.clone()
                } else {
                    inward_w.clone()
                };
                (
                    margin,
                    Some(w),
                    format!(
                        "s = {s:.6e}, sigma = {:.3e}, nu = {:.3e}, min outward speed on |r| = {}: {outward:.6e}",
                        fit.sigma, fit.nu, config.alpha1
                    ),
                    margin > 0.0,
                )
            }
            FlowCondition::ComparisonEstimates => match params {
                None => (s, None, "annulus does not decay".into(), false),
                Some(p) if !ineq_ok => {
                    let worst = p.sigma.max(p.nu).max(p.sigma * p.sigma).max(p.nu * p.nu);
                    (
                        p.s / 4.0 - worst,
                        None,
                        format!("parameter inequality fails: s / 4 = {:.3e}, worst = {worst:.3e}", p.s / 4.0),
                        false,
                    )
                }
                Some(_) => {
                    let mut worst = f64::INFINITY;
                    let mut ok = !estimate_margins.is_empty();
                    for (_, m) in &estimate_margins {
                        worst = worst.min(m[0]).min(m[1]).min(m[2]);
                        ok &= m[0] > 0.0 && m[1] >= 0.0 && m[2] > 0.0;
                    }
                    (worst, None, format!("min estimate margin over {:?}: {worst:.6e}", config.times), ok)
                }
            },
        };
        conditions.push(FlowConditionVerdict {
            condition: c,
            applicable,
            holds,
            margin,
            witness,
            detail,
        });
    }
    let overall = requested
        .iter()
        .all(|c| conditions.iter().any(|v| v.condition == *c && v.holds));
    Ok(FlowVerdict {
        mu,
        mu_star,
        params,
        ineq_ok,
        estimate_margins,
        conditions,
        overall,
    })
}

fn tubular_frame(field: &dyn VectorField, x: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let man = field.manifold();
    if !man.is_unit_sphere() {
        return Err(Error::UnsupportedManifold(
            "tubular variational blocks need a round sphere".into(),
        ));
    }
    let rho = x.norm();
    let n = x / rho;
    let e = man.tangent_frame(&n);
    let m = x.len();
    // rows map dx to (dr, dy); columns map (dr, dy) to dx
    let mut to = DMatrix::zeros(m, m);
    let mut from = DMatrix::zeros(m, m);
    to.set_row(0, &n.transpose());
    from.set_column(0, &n);
    for k in 0..e.ncols() {
        to.set_row(k + 1, &(e.column(k).transpose() / rho));
        from.set_column(k + 1, &(e.column(k) * rho));
    }
    Ok((to, from))
}

/// Norms of the tubular blocks `[D_r r, D_y r, D_r y, D_y y]` of `D phi(t)` at `x0`.
pub fn variational_blocks(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    mu: f64,
    t: f64,
    config: &IntegratorConfig,
) -> Result<[f64; 4]> {
    let (x, j) = flow_with_jacobian(field, x0, mu, t, config)?;
    let (_, from) = tubular_frame(field, x0)?;
    let (to, _) = tubular_frame(field, &x)?;
    let phi = to * j * from;
    let m = phi.nrows();
    Ok([
        phi[(0, 0)].abs(),
        spectral_norm(&phi.view((0, 1), (1, m - 1)).into_owned()),
        spectral_norm(&phi.view((1, 0), (m - 1, 1)).into_owned()),
        spectral_norm(&phi.view((1, 1), (m - 1, m - 1)).into_owned()),
    ])
}

/// Largest excess of a variational block norm over its comparison bound.
pub fn gronwall_domination(
    field: &dyn VectorField,
    mu: f64,
    bounds: &GronwallBounds,
    starts: &[DVector<f64>],
    times: &[f64],
    config: &IntegratorConfig,
) -> Result<f64> {
    let excess: Vec<Result<f64>> = starts
        .par_iter()
        .map(|x0| {
            let mut worst = f64::NEG_INFINITY;
            for &t in times {
                let blocks = variational_blocks(field, x0, mu, t, config)?;
                let bound = bounds.bound(t);
                for i in 0..4 {
                    worst = worst.max(blocks[i] - bound[i]);
                }
            }
            Ok(worst)
        })
        .collect();
    excess
        .into_iter()
        .try_fold(f64::NEG_INFINITY, |m, v| Ok(m.max(v?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceAcrossT {
    /// `(t, sup deviation)` per time.
    pub rows: Vec<(f64, f64)>,
    pub max: f64,
}

/// Flows the nodes of both branch graphs for each `t` and measures how far the images land from the graphs.
pub fn verify_invariance_across_t(
    field: &dyn VectorField,
    mu: f64,
    plus: &GraphFunction,
    minus: &GraphFunction,
    times: &[f64],
    config: &IntegratorConfig,
) -> Result<InvarianceAcrossT> {
    let man = field.manifold();
    let starts: Vec<DVector<f64>> = plus.embedded_nodes().into_iter().chain(minus.embedded_nodes()).collect();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let devs: Vec<Result<f64>> = starts
            .par_iter()
            .map(|x0| {
                let x = integrate_flow(field, x0, mu, t, config)?;
                let p = man.project(&x)?;
                let graph = if p.r >= 0.0 { plus } else { minus };
                Ok((p.r - graph.eval_at(&p.y)?).abs())
            })
            .collect();
        let worst = devs.into_iter().try_fold(0.0f64, |m, v| Ok::<_, Error>(m.max(v?)))?;
        rows.push((t, worst));
    }
    let max = rows.iter().fold(0.0f64, |m, r| m.max(r.1));
    Ok(InvarianceAcrossT { rows, max })
}
