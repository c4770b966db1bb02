use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{csv_error, pull_push, sup_diff, GraphFunction};
use crate::dynsys::MapFamily;
use crate::error::{Error, Result};
use crate::geometry::TubularRegion;

/// Ratios are only recorded when consecutive iterates differ by at least this much.
const RATIO_FLOOR: f64 = 1e-11;
const NOT_CONTRACTING_RUN: usize = 10;
const MAX_ANDERSON_COEFF: f64 = 1e4;
/// Offsets below this many tolerances are indistinguishable from `M` itself.
const COLLAPSE_FACTOR: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once `sup |T psi - psi| <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of past residuals mixed into each step; 0 is plain iteration.
    pub anderson_depth: usize,
    /// Contraction constant used for the error bound.
    pub c_star: Option<f64>,
    /// Shell the iterates must stay in; extrapolated steps leaving it are rejected.
    pub shell: Option<TubularRegion>,
    pub keep_snapshots: bool,
    /// Bound on the rounding error of one evaluation of the operator.
    pub evaluation_error: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 500,
            anderson_depth: 5,
            c_star: None,
            shell: None,
            keep_snapshots: false,
            evaluation_error: 64.0 * f64::EPSILON,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup |T psi_n - psi_n|`.
    pub sup_change: f64,
    /// `|T psi_n - T psi_{n-1}| / |psi_n - psi_{n-1}|`, the contraction seen on consecutive iterates.
    pub ratio: Option<f64>,
    /// Whether `psi_n` came from an extrapolated step.
    pub accelerated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRun {
    /// Number of operator applications.
    pub iterates: usize,
    pub history: Vec<IterationRecord>,
    pub c_star_used: Option<f64>,
    /// `(c* |T psi - psi| + e) / (1 - c*)` for the returned graph, `e` the evaluation error.
    pub error_bound: Option<f64>,
    pub certified: bool,
    pub converged: bool,
    pub max_ratio: Option<f64>,
    #[serde(skip)]
    pub snapshots: Vec<Vec<f64>>,
}

impl FixedPointRun {
    pub fn final_change(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.sup_change)
    }

    /// Writes `iteration, sup_change, ratio` rows; missing ratios are empty.
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "sup_change", "ratio"])
            .map_err(csv_error)?;
        for h in &self.history {
            out.write_record([
                h.iteration.to_string(),
                h.sup_change.to_string(),
                h.ratio.map(|r| r.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Iterates the graph transform from `psi0` to its fixed point.
///
/// The returned graph is always a plain image `T psi_n`, so the error bound
/// applies to it directly.
pub fn solve_fixed_point(
    psi0: &GraphFunction,
    family: &dyn MapFamily,
    mu: f64,
    config: &SolverConfig,
) -> Result<(GraphFunction, FixedPointRun)> {
    let signs = vec![psi0.branch().sign(); psi0.values().len()];
    let op = |x: &[f64]| -> Result<Vec<f64>> {
        let psi = psi0.with_values(x.to_vec())?;
        pull_push(family, mu, &psi, &psi)
    };
    let (x, run) = iterate(psi0.values().to_vec(), &signs, bounds(family, config), op, config)?;
    Ok((psi0.with_values(x)?, run))
}

/// Iterates the paired transform of a side-reversing map.
pub fn solve_paired_fixed_point(
    plus0: &GraphFunction,
    minus0: &GraphFunction,
    family: &dyn MapFamily,
    mu: f64,
    config: &SolverConfig,
) -> Result<(GraphFunction, GraphFunction, FixedPointRun)> {
    let n = plus0.values().len();
    let mut signs = vec![plus0.branch().sign(); n];
    signs.extend(std::iter::repeat_n(minus0.branch().sign(), minus0.values().len()));
    let op = |x: &[f64]| -> Result<Vec<f64>> {
        let plus = plus0.with_values(x[..n].to_vec())?;
        let minus = minus0.with_values(x[n..].to_vec())?;
        let mut out = pull_push(family, mu, &plus, &minus)?;
        out.extend(pull_push(family, mu, &minus, &plus)?);
        Ok(out)
    };
    let mut x0 = plus0.values().to_vec();
    x0.extend_from_slice(minus0.values());
    let (x, run) = iterate(x0, &signs, bounds(family, config), op, config)?;
    Ok((
        plus0.with_values(x[..n].to_vec())?,
        minus0.with_values(x[n..].to_vec())?,
        run,
    ))
}

fn bounds(family: &dyn MapFamily, config: &SolverConfig) -> (f64, f64) {
    match &config.shell {
        Some(k) => (k.inner_cut, k.alpha),
        None => (0.0, family.tube_radius()),
    }
}

fn iterate<F>(
    x0: Vec<f64>,
    signs: &[f64],
    (lo, hi): (f64, f64),
    op: F,
    config: &SolverConfig,
) -> Result<(Vec<f64>, FixedPointRun)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let inside = |v: &[f64]| {
        v.iter()
            .zip(signs)
            .all(|(x, s)| s * x >= lo - 1e-12 && s * x <= hi + 1e-12)
    };
    if !inside(&x0) {
        log::warn!("initial graph is not inside the shell [{lo}, {hi}]");
    }
    let mut x = x0;
    let mut accelerated = false;
    let mut xs: VecDeque<Vec<f64>> = VecDeque::new();
    let mut gs: VecDeque<Vec<f64>> = VecDeque::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut expanding = 0usize;
    let mut last_change = f64::INFINITY;

    for n in 1..=config.max_iter {
        if config.keep_snapshots {
            snapshots.push(x.clone());
        }
        let fx = op(&x)?;
        // values within the tolerance of M count as having reached it
        if fx.iter().zip(signs).any(|(v, s)| !(s * v > COLLAPSE_FACTOR * config.tol)) {
            return Err(Error::BranchCollapse { iteration: n });
        }
        let g: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let change = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let ratio = prev.as_ref().and_then(|(xp, fxp)| {
            let denom = sup_diff(&x, xp);
            (denom >= RATIO_FLOOR).then(|| sup_diff(&fx, fxp) / denom)
        });
        if let Some(q) = ratio {
            if q >= 1.0 {
                expanding += 1;
                if expanding >= NOT_CONTRACTING_RUN {
                    return Err(Error::NotContracting {
                        consecutive: expanding,
                        ratio: q,
                    });
                }
            } else {
                expanding = 0;
            }
        }
        history.push(IterationRecord {
            iteration: n,
            sup_change: change,
            ratio,
            accelerated,
        });
        if change <= config.tol {
            return Ok((fx, finish(history, snapshots, config, true)));
        }

        // a step that made the residual worse discards the mixing history
        if accelerated && change > last_change {
            xs.clear();
            gs.clear();
        }
        xs.push_back(x.clone());
        gs.push_back(g.clone());
        while xs.len() > config.anderson_depth + 1 {
            xs.pop_front();
            gs.pop_front();
        }
        let candidate = if config.anderson_depth > 0 && xs.len() >= 2 {
            anderson_step(&xs, &gs).filter(|c| inside(c))
        } else {
            None
        };
        if candidate.is_none() && xs.len() >= 2 {
            xs.drain(..xs.len() - 1);
            gs.drain(..gs.len() - 1);
        }
        accelerated = candidate.is_some();
        last_change = change;
        prev = Some((x, fx.clone()));
        x = candidate.unwrap_or(fx);
    }
    // one more plain step so the returned graph is an image
    let fx = op(&x)?;
    let change = sup_diff(&fx, &x);
    history.push(IterationRecord {
        iteration: config.max_iter + 1,
        sup_change: change,
        ratio: None,
        accelerated,
    });
    let mut run = finish(history, snapshots, config, false);
    run.iterates = config.max_iter + 1;
    Ok((fx, run))
}

/// Type-II Anderson mixing of the stored iterates and residuals.
fn anderson_step(xs: &VecDeque<Vec<f64>>, gs: &VecDeque<Vec<f64>>) -> Option<Vec<f64>> {
    let k = xs.len() - 1;
    let n = xs[0].len();
    let dg = DMatrix::from_fn(n, k, |i, j| gs[j + 1][i] - gs[j][i]);
    let dx = DMatrix::from_fn(n, k, |i, j| xs[j + 1][i] - xs[j][i]);
    let g = DVector::from_column_slice(&gs[k]);
    let svd = dg.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    let gamma = svd.solve(&g, 1e-12 * smax).ok()?;
    if gamma.amax() > MAX_ANDERSON_COEFF || gamma.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let step = (dx + dg) * gamma;
    Some((0..n).map(|i| xs[k][i] + g[i] - step[i]).collect())
}

fn finish(
    history: Vec<IterationRecord>,
    snapshots: Vec<Vec<f64>>,
    config: &SolverConfig,
    converged: bool,
) -> FixedPointRun {
    let change = history.last().map_or(f64::NAN, |h| h.sup_change);
    let max_ratio = history
        .iter()
        .filter_map(|h| h.ratio)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    let (certified, error_bound) = match config.c_star {
        Some(c) if c < 1.0 => (
            true,
            Some((c * change + config.evaluation_error) / (1.0 - c)),
        ),
        _ => (false, None),
    };
    if !certified {
        log::warn!(
            "fixed point is uncertified: c* = {:?}, largest observed ratio {:?}",
            config.c_star,
            max_ratio
        );
    }
    FixedPointRun {
        iterates: history.len(),
        history,
        c_star_used: config.c_star,
        error_bound,
        certified,
        converged,
        max_ratio,
        snapshots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::CanonicalFamily;
    use crate::geometry::{build_mesh, ManifoldMesh, ReferenceManifold};
    use crate::graphtransform::Branch;
    use std::sync::Arc;

    fn circle(n: usize) -> Arc<ManifoldMesh> {
        Arc::new(build_mesh(&ReferenceManifold::circle(), n).unwrap())
    }

    #[test]
    fn recovers_outer_branch() {
        let f = CanonicalFamily::planar(0.5);
        let psi0 = GraphFunction::constant(circle(256), 0.175, Branch::Plus).unwrap();
        let cfg = SolverConfig {
            c_star: Some(0.983),
            ..Default::default()
        };
        let (phi, run) = solve_fixed_point(&psi0, &f, 0.01, &cfg).unwrap();
        assert!(run.converged && run.certified);
        assert!(run.iterates <= 500);
        assert!(phi.max_deviation_from(0.1) <= 1e-10);
        let bound = run.error_bound.unwrap();
        assert!(bound <= 1e-10);
        assert!(phi.max_deviation_from(0.1) <= bound);
    }

    #[test]
    fn recovers_inner_branch() {
        let f = CanonicalFamily::planar(0.5);
        let psi0 = GraphFunction::constant(circle(256), -0.175, Branch::Minus).unwrap();
        let (phi, run) = solve_fixed_point(&psi0, &f, 0.02, &SolverConfig::default()).unwrap();
        assert!(run.converged && !run.certified);
        assert!(phi.max_deviation_from(-(0.02f64).sqrt()) <= 1e-10);
    }

    #[test]
    fn plain_iteration_ratio_matches_radial_slope() {
        let f = CanonicalFamily::planar(0.5);
        let psi0 = GraphFunction::constant(circle(32), 0.175, Branch::Plus).unwrap();
        let cfg = SolverConfig {
            anderson_depth: 0,
            max_iter: 3000,
            ..Default::default()
        };
        let (phi, run) = solve_fixed_point(&psi0, &f, 0.04, &cfg).unwrap();
        assert!(run.converged);
        assert!(phi.max_deviation_from(0.2) <= 1e-10);
        // slope of the radial map at the branch: 1 + mu - 3u^2 + 2 mu u - 4u^3 with u = sqrt(mu)
        let u: f64 = 0.2;
        let slope = 1.0 + 0.04 - 3.0 * u * u + 2.0 * 0.04 * u - 4.0 * u * u * u;
        let late = run.history.iter().rev().find_map(|h| h.ratio).unwrap();
        assert!((late - slope).abs() < 1e-3, "{late} vs {slope}");
    }

    #[test]
    fn collapse_is_reported() {
        // before the bifurcation every positive graph is pulled onto M
        let f = CanonicalFamily::planar(0.5);
        let psi0 = GraphFunction::constant(circle(16), 0.1, Branch::Plus).unwrap();
        let cfg = SolverConfig {
            anderson_depth: 0,
            max_iter: 100_000,
            ..Default::default()
        };
        let err = solve_fixed_point(&psi0, &f, -0.04, &cfg).unwrap_err();
        assert!(matches!(err, Error::BranchCollapse { .. }), "{err}");
    }

    #[test]
    fn expansion_is_reported() {
        let f = crate::dynsys::ClosureFamily::new(
            "expanding",
            ReferenceManifold::circle(),
            (0.0, 1.0),
            0.2,
            |x, _| {
                let rho = x.norm();
                Ok(x * ((1.0 + 1.5 * (rho - 1.0)) / rho))
            },
        )
        .with_inverse(|x, _| {
            let rho = x.norm();
            Ok(x * ((1.0 + (rho - 1.0) / 1.5) / rho))
        });
        let psi0 = GraphFunction::constant(circle(16), 1e-6, Branch::Plus).unwrap();
        let cfg = SolverConfig {
            anderson_depth: 0,
            ..Default::default()
        };
        let err = solve_fixed_point(&psi0, &f, 0.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::NotContracting { consecutive: 10, .. }), "{err}");
    }

    #[test]
    fn history_csv() {
        let f = CanonicalFamily::planar(0.5);
        let psi0 = GraphFunction::constant(circle(16), 0.15, Branch::Plus).unwrap();
        let (_, run) = solve_fixed_point(&psi0, &f, 0.02, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        run.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), run.history.len() + 1);
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }
}
