//! A map family served by a subprocess over JSON lines.
//!
//! Each request is one line `{"op": "forward" | "inverse" | "jacobian", "x": [...], "mu": m}`.
//! The reply is one line `{"x": [...]}`, `{"jacobian": [[...], ...]}` or `{"error": "..."}`.
//! The manifold is the unit sphere of the declared ambient dimension.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use pitchfork::dynsys::{InverseSupport, MapFamily};
use pitchfork::geometry::ReferenceManifold;
use pitchfork::{Error, Result};

#[derive(Serialize)]
struct Request<'a> {
    op: &'a str,
    x: &'a [f64],
    mu: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reply {
    #[serde(default)]
    x: Option<Vec<f64>>,
    #[serde(default)]
    jacobian: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct PluginFamily {
    name: String,
    manifold: ReferenceManifold,
    mu_range: (f64, f64),
    alpha: f64,
    inverse: bool,
    jacobian: bool,
    pipe: Mutex<Pipe>,
}

impl std::fmt::Debug for PluginFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PluginFamily({})", self.name)
    }
}

fn plugin_error(msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("plugin: {msg}"))
}

impl PluginFamily {
    pub fn spawn(
        program: &Path,
        args: &[String],
        ambient_dim: usize,
        mu_range: (f64, f64),
        alpha: f64,
        inverse: bool,
        jacobian: bool,
    ) -> Result<Self> {
        let manifold = ReferenceManifold::unit_sphere(ambient_dim)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| plugin_error(format!("cannot start {}: {e}", program.display())))?;
        let stdin = child.stdin.take().ok_or_else(|| plugin_error("no stdin"))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| plugin_error("no stdout"))?);
        Ok(Self {
            name: format!("plugin({})", program.display()),
            manifold,
            mu_range,
            alpha,
            inverse,
            jacobian,
            pipe: Mutex::new(Pipe {
                child,
                stdin,
                stdout,
            }),
        })
    }

    fn call(&self, op: &str, x: &DVector<f64>, mu: f64) -> Result<Reply> {
        let line = serde_json::to_string(&Request {
            op,
            x: x.as_slice(),
            mu,
        })
        .map_err(plugin_error)?;
        let mut pipe = self.pipe.lock().map_err(|_| plugin_error("pipe lock poisoned"))?;
        writeln!(pipe.stdin, "{line}").map_err(plugin_error)?;
        pipe.stdin.flush().map_err(plugin_error)?;
        let mut reply = String::new();
        if pipe.stdout.read_line(&mut reply).map_err(plugin_error)? == 0 {
            return Err(plugin_error("process closed its output"));
        }
        drop(pipe);
        let reply: Reply = serde_json::from_str(&reply).map_err(plugin_error)?;
        if let Some(e) = reply.error {
            return Err(plugin_error(e));
        }
        Ok(reply)
    }

    fn point(&self, op: &str, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        let v = self
            .call(op, x, mu)?
            .x
            .ok_or_else(|| plugin_error(format!("{op} reply has no `x`")))?;
        if v.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: v.len(),
            });
        }
        Ok(DVector::from_vec(v))
    }
}

impl Drop for PluginFamily {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

impl MapFamily for PluginFamily {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn manifold(&self) -> &ReferenceManifold {
        &self.manifold
    }

    fn mu_range(&self) -> (f64, f64) {
        self.mu_range
    }

    fn tube_radius(&self) -> f64 {
        self.alpha
    }

    fn forward(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        self.point("forward", x, mu)
    }

    fn inverse_support(&self) -> InverseSupport {
        if self.inverse {
            InverseSupport::Analytic
        } else {
            InverseSupport::Numeric
        }
    }

    fn analytic_inverse(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DVector<f64>>> {
        self.inverse.then(|| self.point("inverse", x, mu))
    }

    fn has_jacobian(&self) -> bool {
        self.jacobian
    }

    fn jacobian(&self, x: &DVector<f64>, mu: f64) -> Option<Result<DMatrix<f64>>> {
        if !self.jacobian {
            return None;
        }
        Some((|| {
            let rows = self
                .call("jacobian", x, mu)?
                .jacobian
                .ok_or_else(|| plugin_error("jacobian reply has no `jacobian`"))?;
            let m = x.len();
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(plugin_error(format!("jacobian must be {m} x {m}")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Ok(DMatrix::from_row_slice(m, m, &flat))
        })())
    }
}
