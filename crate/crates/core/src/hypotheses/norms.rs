use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynsys::{inverse_components, split_components, MapFamily};
use crate::error::{Error, Result};
use crate::geometry::{ManifoldMesh, TubularPoint, TubularRegion};

/// Default number of radial intervals per shell component.
pub const DEFAULT_RADIAL_INTERVALS: usize = 64;
/// Smallest radial resolution accepted by the norm estimator.
pub const MIN_RADIAL_INTERVALS: usize = 8;

/// A sample location `(r, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub r: f64,
    pub y: Vec<f64>,
    pub value: f64,
}

/// Sampled sup-norms of the derivative blocks of `F` and of `F^{-1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub drf: f64,
    pub dyf: f64,
    pub drg_hat: f64,
    pub dyg_hat: f64,
    pub dyg: f64,
    pub drg: f64,
}

impl Norms {
    fn as_array(&self) -> [f64; 6] {
        [self.drf, self.dyf, self.drg_hat, self.dyg_hat, self.dyg, self.drg]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self {
            drf: a[0],
            dyf: a[1],
            drg_hat: a[2],
            dyg_hat: a[3],
            dyg: a[4],
            drg: a[5],
        }
    }

    pub fn minus(&self, other: &Norms) -> Norms {
        let (a, b) = (self.as_array(), other.as_array());
        Self::from_array(std::array::from_fn(|i| a[i] - b[i]))
    }
}

/// Constants assembled from [`Norms`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Radial contraction rate `|D_r f|` over the region.
    pub c: f64,
    /// Graph-transform contraction constant `Drf (1 + Drg_hat) + Dyf`.
    pub c_star: f64,
    /// `(Drf + Dyf)(Drg_hat + Dyg_hat)`; must not exceed 1 for the Lipschitz bound to propagate.
    pub lipschitz_product: f64,
    /// Derivative-equicontinuity constant `Drf (2 Drg_hat + Dyg_hat) + Dyf Drg_hat`.
    pub sigma: f64,
    /// Single combined estimate `Drf Drg_hat + (Drf + Dyf)(1 + Drg_hat)`.
    pub combined: f64,
}

impl Constants {
    pub fn from_norms(n: &Norms) -> Self {
        Self {
            c: n.drf,
            c_star: n.drf * (1.0 + n.drg_hat) + n.dyf,
            lipschitz_product: (n.drf + n.dyf) * (n.drg_hat + n.dyg_hat),
            sigma: n.drf * (2.0 * n.drg_hat + n.dyg_hat) + n.dyf * n.drg_hat,
            combined: n.drf * n.drg_hat + (n.drf + n.dyf) * (1.0 + n.drg_hat),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormWitnesses {
    pub drf: Witness,
    pub dyf: Witness,
    pub drg_hat: Witness,
    pub dyg_hat: Witness,
    pub dyg: Witness,
    pub drg: Witness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub radial_intervals: usize,
    pub mesh_nodes: usize,
    pub samples: usize,
}

/// Sampled sup-norms over a tubular region, with the same quantities on a
/// nested half-resolution grid as a refinement diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub region: TubularRegion,
    pub mu: f64,
    pub norms: Norms,
    pub constants: Constants,
    pub witnesses: NormWitnesses,
    pub grid: SamplingGrid,
    pub half_grid: Norms,
    /// `norms - half_grid`; never negative because the grids are nested.
    pub refinement: Norms,
}

impl NormReport {
    /// Builds a report from given norms (no sampling); witnesses are empty.
    pub fn from_norms(region: TubularRegion, mu: f64, norms: Norms) -> Self {
        let w = Witness {
            r: f64::NAN,
            y: Vec::new(),
            value: f64::NAN,
        };
        Self {
            region,
            mu,
            norms,
            constants: Constants::from_norms(&norms),
            witnesses: NormWitnesses {
                drf: w.clone(),
                dyf: w.clone(),
                drg_hat: w.clone(),
                dyg_hat: w.clone(),
                dyg: w.clone(),
                drg: w,
            },
            grid: SamplingGrid {
                radial_intervals: 0,
                mesh_nodes: 0,
                samples: 0,
            },
            half_grid: norms,
            refinement: Norms::default(),
        }
    }
}

/// One evaluated sample: position and the six block norms.
#[derive(Clone, Debug)]
pub(crate) struct BlockSample {
    pub node: usize,
    pub r: f64,
    pub coarse: bool,
    pub values: [f64; 6],
}

/// Radial sample offsets of `region` and whether each lies on the half grid.
pub(crate) fn radial_grid(region: &TubularRegion, intervals: usize) -> Vec<(f64, bool)> {
    let fine = region.radial_samples(intervals);
    let per = intervals + 1;
    fine.into_iter()
        .enumerate()
        .map(|(i, r)| (r, (i % per) % 2 == 0))
        .collect()
}

/// Evaluates forward and inverse blocks at every `(r, node)`; parallel over nodes.
pub(crate) fn sample_blocks(
    family: &dyn MapFamily,
    mu: f64,
    radii: &[(f64, bool)],
    mesh: &ManifoldMesh,
) -> Result<Vec<BlockSample>> {
    let coarse_nodes = mesh.coarse_nodes();
    let per_node: Vec<Result<Vec<BlockSample>>> = mesh
        .nodes()
        .par_iter()
        .enumerate()
        .map(|(node, y)| {
            radii
                .iter()
                .map(|&(r, coarse_r)| {
                    let p = TubularPoint::new(r, y.clone());
                    let fwd = split_components(family, &p, mu)?;
                    let inv = inverse_components(family, &p, mu)?;
                    Ok(BlockSample {
                        node,
                        r,
                        coarse: coarse_r && coarse_nodes[node],
                        values: [
                            fwd.drf.abs(),
                            fwd.dyf_norm(),
                            inv.drg_norm(),
                            inv.dyg_norm(),
                            fwd.dyg_norm(),
                            fwd.drg_norm(),
                        ],
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(radii.len() * mesh.len());
    for chunk in per_node {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Sampled sup-norms of the blocks over `region`.
///
/// Samples are `radial_intervals` equal steps per shell component times the
/// mesh nodes. The maximum is order-independent; ties keep the first sample
/// in node-major order so witnesses are deterministic too.
pub fn estimate_norms(
    family: &dyn MapFamily,
    mu: f64,
    region: &TubularRegion,
    mesh: &ManifoldMesh,
    radial_intervals: usize,
) -> Result<NormReport> {
    if radial_intervals < MIN_RADIAL_INTERVALS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_RADIAL_INTERVALS} radial intervals, got {radial_intervals}"
        )));
    }
    let alpha = family.tube_radius();
    if region.alpha > alpha + 1e-15 {
        return Err(Error::InvalidInput(format!(
            "region radius {} exceeds the tube radius {alpha}",
            region.alpha
        )));
    }
    let radii = radial_grid(region, radial_intervals);
    let samples = sample_blocks(family, mu, &radii, mesh)?;
    let mut fine = [0.0f64; 6];
    let mut half = [0.0f64; 6];
    let mut best: [Option<&BlockSample>; 6] = [None; 6];
    for s in &samples {
        for k in 0..6 {
            if best[k].is_none() || s.values[k] > fine[k] {
                fine[k] = s.values[k];
                best[k] = Some(s);
            }
            if s.coarse {
                half[k] = half[k].max(s.values[k]);
            }
        }
    }
    let witness = |k: usize| -> Witness {
        let s = best[k].expect("at least one sample");
        Witness {
            r: s.r,
            y: mesh.nodes()[s.node].iter().copied().collect(),
            value: s.values[k],
        }
    };
    let norms = Norms::from_array(fine);
    let half_grid = Norms::from_array(half);
    Ok(NormReport {
        region: *region,
        mu,
        norms,
        constants: Constants::from_norms(&norms),
        witnesses: NormWitnesses {
            drf: witness(0),
            dyf: witness(1),
            drg_hat: witness(2),
            dyg_hat: witness(3),
            dyg: witness(4),
            drg: witness(5),
        },
        grid: SamplingGrid {
            radial_intervals,
            mesh_nodes: mesh.len(),
            samples: samples.len(),
        },
        half_grid,
        refinement: norms.minus(&half_grid),
    })
}
