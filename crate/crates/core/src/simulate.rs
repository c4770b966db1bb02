//! Orbits of a map family, for checking attraction and repulsion directly.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{random_unit, MapFamily};
use crate::error::{Error, Result};
use crate::geometry::{ReferenceManifold, TubularPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub n: usize,
    pub x: Vec<f64>,
    /// Signed distance from `M`.
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<OrbitPoint>,
    /// Why the orbit stopped early, if it did.
    pub stopped: Option<String>,
}

impl Trajectory {
    pub fn radii(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.r).collect()
    }

    pub fn last_r(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.r)
    }

    /// `|r_n|` strictly decreasing until it falls below `floor`.
    pub fn decreases_to(&self, floor: f64) -> bool {
        let radii = self.radii();
        let end = radii.iter().position(|r| r.abs() < floor);
        match end {
            Some(k) => radii[..=k].windows(2).all(|w| w[1].abs() < w[0].abs()),
            None => false,
        }
    }

    /// First index with `|r_n| >= level`.
    pub fn escape_index(&self, level: f64) -> Option<usize> {
        self.points.iter().position(|p| p.r.abs() >= level)
    }
}

/// Iterates `F_mu` from `x0`. Leaving the tube ends the orbit and is recorded, not raised.
pub fn iterate_orbit(
    family: &dyn MapFamily,
    mu: f64,
    x0: &DVector<f64>,
    iterations: usize,
) -> Result<Trajectory> {
    let man = family.manifold();
    let alpha = family.tube_radius();
    let mut x = x0.clone();
    let mut points = Vec::with_capacity(iterations + 1);
    let mut stopped = None;
    for n in 0..=iterations {
        let r = man.signed_distance(&x)?;
        points.push(OrbitPoint {
            n,
            x: x.iter().copied().collect(),
            r,
        });
        if r.abs() > alpha + crate::dynsys::TUBE_SLACK {
            let e = Error::LeftTube { r, alpha };
            log::warn!("orbit from {:?} stopped at step {n}: {e}", x0.as_slice());
            stopped = Some(e.to_string());
            break;
        }
        if n < iterations {
            x = family.forward(&x, mu)?;
        }
    }
    Ok(Trajectory { points, stopped })
}

/// Orbits from several starts, computed in parallel; output order follows `starts`.
pub fn simulate(
    family: &dyn MapFamily,
    mu: f64,
    starts: &[DVector<f64>],
    iterations: usize,
) -> Result<Vec<Trajectory>> {
    starts
        .par_iter()
        .map(|x0| iterate_orbit(family, mu, x0, iterations))
        .collect()
}

/// `count` points at each offset in `radii`, with base points drawn from `seed`.
pub fn seeded_starts(
    manifold: &ReferenceManifold,
    radii: &[f64],
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(radii.len() * count);
    for &r in radii {
        for _ in 0..count {
            let u = random_unit(&mut rng, manifold.ambient_dim());
            let y = manifold.chart_to_manifold(&u);
            out.push(manifold.embed(&TubularPoint::new(r, y)));
        }
    }
    out
}

/// Writes `trajectory, n, x1..xm, r` rows.
pub fn write_trajectories_csv<W: Write>(w: W, trajectories: &[Trajectory]) -> Result<()> {
    let m = trajectories
        .iter()
        .find_map(|t| t.points.first().map(|p| p.x.len()))
        .unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["trajectory".to_string(), "n".to_string()];
    header.extend((1..=m).map(|k| format!("x{k}")));
    header.push("r".into());
    let fail = |e: csv::Error| Error::InvalidInput(format!("csv output failed: {e}"));
    out.write_record(&header).map_err(fail)?;
    for (k, t) in trajectories.iter().enumerate() {
        for p in &t.points {
            let mut row = vec![k.to_string(), p.n.to_string()];
            row.extend(p.x.iter().map(|v| v.to_string()));
            row.push(p.r.to_string());
            out.write_record(&row).map_err(fail)?;
        }
    }
    out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::CanonicalFamily;

    fn start(r: f64) -> DVector<f64> {
        DVector::from_column_slice(&[(1.0 + r) * 0.6, (1.0 + r) * 0.8])
    }

    #[test]
    fn attraction_before_threshold() {
        let f = CanonicalFamily::planar(0.4);
        for r0 in [0.18, -0.18] {
            let t = iterate_orbit(&f, -0.02, &start(r0), 2000).unwrap();
            assert!(t.decreases_to(1e-8), "r0 = {r0}");
        }
    }

    #[test]
    fn branches_attract_after_threshold() {
        let f = CanonicalFamily::planar(0.4);
        let root = 0.02f64.sqrt();
        let out = iterate_orbit(&f, 0.02, &start(0.05), 3000).unwrap();
        assert!((out.last_r() - root).abs() < 1e-8);
        let inn = iterate_orbit(&f, 0.02, &start(-0.05), 3000).unwrap();
        assert!((inn.last_r() + root).abs() < 1e-8);
        let near = iterate_orbit(&f, 0.02, &start(1e-3), 500).unwrap();
        assert!(near.escape_index(1e-2).is_some());
    }

    #[test]
    fn leaving_the_tube_stops_the_orbit() {
        let f = CanonicalFamily::planar(0.4).with_alpha(0.05);
        let t = iterate_orbit(&f, 0.02, &start(0.04), 500).unwrap();
        assert!(t.stopped.is_some());
    }

    #[test]
    fn seeded_starts_are_reproducible() {
        let m = ReferenceManifold::sphere();
        let a = seeded_starts(&m, &[0.1, -0.1], 3, 7);
        let b = seeded_starts(&m, &[0.1, -0.1], 3, 7);
        assert_eq!(a, b);
        assert!((m.signed_distance(&a[4]).unwrap() + 0.1).abs() < 1e-14);
    }
}
