//! JSON problem definitions.
//!
//! Unknown keys are rejected everywhere so that typos fail loudly.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use pitchfork::dynsys::{CanonicalFamily, MapFamily, SideReversing};
use pitchfork::flow::{IntegratorConfig, ModelField, TimeTMap, VectorField, DEFAULT_STEP};
use pitchfork::geometry::DEFAULT_ALPHA;
use pitchfork::graphtransform::{BranchConfig, SolverConfig};
use pitchfork::hypotheses::{ChiPolicy, Condition, HypothesesConfig, MIN_RADIAL_INTERVALS};

use crate::plugin::PluginFamily;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub family: FamilySpec,
    #[serde(default)]
    pub mu: Option<MuSpec>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub chi: Option<ChiPolicy>,
    #[serde(default)]
    pub mu_star: Option<f64>,
    #[serde(default)]
    pub mesh_resolution: Option<usize>,
    #[serde(default)]
    pub radial_intervals: Option<usize>,
    /// Conditions decided by `check`; defaults to those that apply at each parameter.
    #[serde(default)]
    pub conditions: Option<Vec<Condition>>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub gronwall: Option<GronwallSpec>,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    Canonical {
        #[serde(default = "default_dim")]
        ambient_dim: usize,
        #[serde(default)]
        rotation: RotationSpec,
    },
    CanonicalReversing {
        #[serde(default = "default_dim")]
        ambient_dim: usize,
        #[serde(default)]
        rotation: RotationSpec,
    },
    FlowModel {
        #[serde(default = "default_dim")]
        ambient_dim: usize,
        /// Time of the map handed to the discrete pipeline.
        #[serde(default = "default_time")]
        time: f64,
    },
    Plugin {
        /// Program and arguments; a relative program path is resolved against the spec file.
        command: Vec<String>,
        ambient_dim: usize,
        mu_range: (f64, f64),
        #[serde(default)]
        inverse: bool,
        #[serde(default)]
        jacobian: bool,
    },
}

fn default_dim() -> usize {
    2
}

fn default_time() -> f64 {
    1.0
}

/// Rotation applied after the radial map: an angle in the plane, an axis and
/// angle in space, or an explicit matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSpec {
    #[serde(default)]
    pub angle: Option<f64>,
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum MuSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl MuSpec {
    /// The parameter values; ranges include `stop` when it lies on the grid.
    pub fn values(&self) -> Result<Vec<f64>> {
        let out = match self {
            MuSpec::List(v) => v.clone(),
            MuSpec::Range { start, stop, step } => {
                if !(*step > 0.0) || !step.is_finite() {
                    bail!("mu range step must be positive, got {step}");
                }
                if stop < start {
                    Vec::new()
                } else {
                    let n = ((stop - start) / step + 1e-9).floor() as usize;
                    (0..=n).map(|k| start + k as f64 * step).collect()
                }
            }
        };
        if out.is_empty() {
            bail!("the mu list is empty");
        }
        if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
            bail!("mu value {bad} is not finite");
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_depth")]
    pub anderson_depth: usize,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    500
}

fn default_depth() -> usize {
    5
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            anderson_depth: default_depth(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    /// Signed offsets of the start points.
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    /// Seeded base points per offset.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Explicit ambient start points, used in addition to the seeded ones.
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_radii() -> Vec<f64> {
    vec![0.18, -0.18, 0.05, -0.05, 1e-3, -1e-3]
}

fn default_count() -> usize {
    1
}

fn default_iterations() -> usize {
    2000
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            radii: default_radii(),
            count: default_count(),
            starts: Vec::new(),
            iterations: default_iterations(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallSpec {
    pub params: Vec<GronwallEntry>,
    #[serde(default = "default_gronwall_times")]
    pub times: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallEntry {
    pub s: f64,
    pub sigma: f64,
    pub nu: f64,
}

fn default_gronwall_times() -> Vec<f64> {
    vec![1.0, 1.5, 2.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    /// Inner radius of the annulus for the continuous-time checks.
    #[serde(default = "default_flow_alpha1")]
    pub alpha1: f64,
    #[serde(default = "default_gronwall_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_invariance_times")]
    pub invariance_times: Vec<f64>,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_flow_alpha1() -> f64 {
    0.1
}

fn default_invariance_times() -> Vec<f64> {
    vec![0.37, 1.0, 1.5, 2.0]
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            alpha1: default_flow_alpha1(),
            times: default_gronwall_times(),
            invariance_times: default_invariance_times(),
            step: default_step(),
        }
    }
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_str(text).context("malformed problem spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read spec {}", path.display()))?;
        Ok((Self::from_json(&text)?, text))
    }

    fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                bail!("alpha must lie in (0, 1), got {a}");
            }
        }
        if let Some(r) = self.radial_intervals {
            if r < MIN_RADIAL_INTERVALS {
                bail!("radial_intervals {r} is below the minimum {MIN_RADIAL_INTERVALS}");
            }
        }
        if !(self.flow.step > 0.0) {
            bail!("flow step must be positive");
        }
        Ok(())
    }

    /// Parameter values, checked against the family's range.
    pub fn mus(&self, family: &dyn MapFamily) -> Result<Vec<f64>> {
        let mus = self
            .mu
            .as_ref()
            .ok_or_else(|| anyhow!("the spec has no `mu` field"))?
            .values()?;
        let (lo, hi) = family.mu_range();
        if let Some(bad) = mus.iter().find(|m| !(**m >= lo && **m <= hi)) {
            bail!("mu = {bad} lies outside the family's range [{lo}, {hi}]");
        }
        Ok(mus)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(DEFAULT_ALPHA)
    }

    pub fn hypotheses(&self) -> HypothesesConfig {
        let d = HypothesesConfig::default();
        HypothesesConfig {
            alpha1: self.alpha1.unwrap_or(d.alpha1),
            chi: self.chi.unwrap_or(d.chi),
            mu_star: self.mu_star,
            radial_intervals: self.radial_intervals.unwrap_or(d.radial_intervals),
            mesh_resolution: self.mesh_resolution,
            requested: self.conditions.clone(),
            ..d
        }
    }

    pub fn branch_config(&self) -> BranchConfig {
        BranchConfig {
            hypotheses: self.hypotheses(),
            solver: SolverConfig {
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
                anderson_depth: self.solver.anderson_depth,
                ..SolverConfig::default()
            },
            ..BranchConfig::default()
        }
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            step: self.flow.step,
        }
    }

    /// The vector field of a `flow-model` spec.
    pub fn field(&self) -> Result<Arc<dyn VectorField>> {
        match &self.family {
            FamilySpec::FlowModel { ambient_dim, .. } => {
                let field = match ambient_dim {
                    2 => ModelField::planar(),
                    3 => ModelField::spatial(),
                    m => bail!("the model flow exists for ambient dimension 2 or 3, not {m}"),
                };
                Ok(Arc::new(field.with_alpha(self.alpha())))
            }
            _ => bail!("this command needs a flow-model family"),
        }
    }

    /// Builds the map family; `base` is the directory plugin paths are resolved against.
    pub fn family(&self, base: &Path) -> Result<Arc<dyn MapFamily>> {
        let alpha = self.alpha();
        Ok(match &self.family {
            FamilySpec::Canonical {
                ambient_dim,
                rotation,
            } => Arc::new(canonical(*ambient_dim, rotation)?.with_alpha(alpha)),
            FamilySpec::CanonicalReversing {
                ambient_dim,
                rotation,
            } => Arc::new(SideReversing::new(Arc::new(
                canonical(*ambient_dim, rotation)?.with_alpha(alpha),
            ))),
            FamilySpec::FlowModel { time, .. } => Arc::new(
                TimeTMap::new(self.field()?, *time)?.with_config(self.integrator()),
            ),
            FamilySpec::Plugin {
                command,
                ambient_dim,
                mu_range,
                inverse,
                jacobian,
            } => {
                let (program, args) = command
                    .split_first()
                    .ok_or_else(|| anyhow!("plugin command is empty"))?;
                let path = Path::new(program);
                let program = if path.is_relative() && base.join(path).exists() {
                    base.join(path)
                } else {
                    path.to_path_buf()
                };
                Arc::new(PluginFamily::spawn(
                    &program,
                    args,
                    *ambient_dim,
                    *mu_range,
                    alpha,
                    *inverse,
                    *jacobian,
                )?)
            }
        })
    }
}

fn canonical(m: usize, rotation: &RotationSpec) -> Result<CanonicalFamily> {
    if let Some(rows) = &rotation.matrix {
        if rows.len() != m || rows.iter().any(|r| r.len() != m) {
            bail!("rotation matrix must be {m} x {m}");
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        return Ok(CanonicalFamily::new(DMatrix::from_row_slice(m, m, &flat))?);
    }
    let angle = rotation.angle.unwrap_or(0.0);
    match m {
        2 => {
            if rotation.axis.is_some() {
                bail!("a planar rotation takes no axis");
            }
            Ok(CanonicalFamily::planar(angle))
        }
        3 => Ok(CanonicalFamily::spatial(rotation.axis.unwrap_or([0.0, 0.0, 1.0]), angle)?),
        _ => {
            if rotation.angle.is_some() || rotation.axis.is_some() {
                bail!("in dimension {m} give the rotation as a matrix");
            }
            Ok(CanonicalFamily::new(DMatrix::identity(m, m))?)
        }
    }
}
