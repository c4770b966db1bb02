//! The subcommands. Each returns its exit code; hard errors propagate.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, Result};
use nalgebra::DVector;
use serde::Serialize;

use pitchfork::dynsys::MapFamily;
use pitchfork::flow::{
    check_flow_conditions, gronwall_table, verify_invariance_across_t, write_gronwall_csv, GronwallParams,
    InvarianceAcrossT, FlowCheckConfig, TimeTMap,
};
use pitchfork::geometry::{build_mesh, ManifoldMesh};
use pitchfork::graphtransform::{
    assemble_bifurcation_report, solve_branches, BranchSolution, BranchSummary,
};
use pitchfork::hypotheses::{check_hypotheses, default_mesh_resolution};
use pitchfork::simulate::{seeded_starts, simulate, write_trajectories_csv, Trajectory};
use pitchfork::Error;

use crate::manifest::OutputDir;
use crate::spec::{FamilySpec, ProblemSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONDITION_FAILED: i32 = 2;
pub const EXIT_NO_BRANCHES: i32 = 3;

pub struct Context {
    pub spec: ProblemSpec,
    /// Directory of the spec file.
    pub base: PathBuf,
    pub seed: u64,
    pub out: OutputDir,
}

impl Context {
    fn family(&self) -> Result<Arc<dyn MapFamily>> {
        self.spec.family(&self.base)
    }

    fn mesh(&self, family: &dyn MapFamily) -> Result<Arc<ManifoldMesh>> {
        let n = self
            .spec
            .mesh_resolution
            .unwrap_or_else(|| default_mesh_resolution(family.ambient_dim()));
        Ok(Arc::new(build_mesh(family.manifold(), n)?))
    }
}

/// Failures of the branch solver that mean "no branches here" rather than a broken run.
fn is_branch_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NoBifurcation { .. } | Error::NotContracting { .. } | Error::BranchCollapse { .. }
    )
}

fn mu_tag(mu: f64) -> String {
    format!("mu{mu}")
}

pub fn check(ctx: &mut Context) -> Result<i32> {
    let family = ctx.family()?;
    let mus = ctx.spec.mus(family.as_ref())?;
    let verdicts = check_hypotheses(family.as_ref(), &mus, &ctx.spec.hypotheses())?;
    ctx.out.write_json("check.json", &verdicts)?;
    for v in &verdicts {
        let failed: Vec<String> = v
            .conditions
            .iter()
            .filter(|c| !c.holds && (c.applicable || ctx.spec.conditions.is_some()))
            .map(|c| c.condition.to_string())
            .collect();
        if v.overall {
            println!("mu = {}: all requested conditions hold (chi = {:.6})", v.mu, v.chi);
        } else {
            println!("mu = {}: fails {}", v.mu, failed.join(", "));
        }
    }
    Ok(if verdicts.iter().all(|v| v.overall) {
        EXIT_OK
    } else {
        EXIT_CONDITION_FAILED
    })
}

fn write_solution(out: &mut OutputDir, prefix: &str, sol: &BranchSolution) -> Result<()> {
    let tag = mu_tag(sol.mu);
    out.write(&format!("{prefix}plus_{tag}.csv"), |w| Ok(sol.plus.write_csv(w)?))?;
    out.write(&format!("{prefix}minus_{tag}.csv"), |w| Ok(sol.minus.write_csv(w)?))?;
    out.write(&format!("{prefix}run_plus_{tag}.csv"), |w| {
        Ok(sol.plus_run.write_history_csv(w)?)
    })?;
    out.write(&format!("{prefix}run_minus_{tag}.csv"), |w| {
        Ok(sol.minus_run.write_history_csv(w)?)
    })?;
    Ok(())
}

fn print_solution(sol: &BranchSolution) {
    println!("mu = {} ({:?}, chi = {:.6}, c* = {:.6})", sol.mu, sol.side, sol.chi, sol.c_star);
    for (name, g, run) in [
        ("plus", &sol.plus, &sol.plus_run),
        ("minus", &sol.minus, &sol.minus_run),
    ] {
        println!(
            "  {name} branch: mean offset {:.6}, spread {:.3e}, {} iterations, error bound {}",
            g.mean(),
            g.spread(),
            run.iterates,
            run.error_bound.map_or("n/a".into(), |b| format!("{b:.3e}")),
        );
    }
    if let Some(d) = sol.swap_deviation {
        println!("  image of the plus branch vs minus branch: {d:.3e}");
    }
    if let Some(d) = sol.double_step_deviation {
        println!("  two-step invariance of each branch: {d:.3e}");
    }
}

pub fn solve(ctx: &mut Context) -> Result<i32> {
    let family = ctx.family()?;
    let mus = ctx.spec.mus(family.as_ref())?;
    let mesh = ctx.mesh(family.as_ref())?;
    let config = ctx.spec.branch_config();
    let mut summaries: Vec<BranchSummary> = Vec::new();
    let mut code = EXIT_OK;
    for &mu in &mus {
        match solve_branches(family.as_ref(), mu, mesh.clone(), &config) {
            Ok(sol) => {
                write_solution(&mut ctx.out, "", &sol)?;
                print_solution(&sol);
                summaries.push(sol.summary());
            }
            Err(e) if is_branch_failure(&e) => {
                eprintln!("mu = {mu}: {e}");
                code = EXIT_NO_BRANCHES;
            }
            Err(e) => return Err(e.into()),
        }
    }
    ctx.out.write_json("solve.json", &summaries)?;
    Ok(code)
}

#[derive(Serialize)]
struct OrbitSummary {
    mu: f64,
    trajectory: usize,
    r0: f64,
    final_r: f64,
    steps: usize,
    stopped: Option<String>,
}

pub fn run_simulate(ctx: &mut Context) -> Result<i32> {
    let family = ctx.family()?;
    let mus = ctx.spec.mus(family.as_ref())?;
    let sim = &ctx.spec.simulate;
    let m = family.ambient_dim();
    let mut starts = seeded_starts(family.manifold(), &sim.radii, sim.count, ctx.seed);
    for s in &sim.starts {
        if s.len() != m {
            return Err(anyhow!("start point {s:?} must have {m} coordinates"));
        }
        starts.push(DVector::from_column_slice(s));
    }
    let mut summary = Vec::new();
    for &mu in &mus {
        let orbits: Vec<Trajectory> = simulate(family.as_ref(), mu, &starts, sim.iterations)?;
        ctx.out
            .write(&format!("trajectories_{}.csv", mu_tag(mu)), |w| {
                Ok(write_trajectories_csv(w, &orbits)?)
            })?;
        for (k, t) in orbits.iter().enumerate() {
            let r0 = t.points.first().map_or(f64::NAN, |p| p.r);
            println!(
                "mu = {mu}, start {k}: r0 = {r0:+.6}, r_final = {:+.6e} after {} steps{}",
                t.last_r(),
                t.points.len() - 1,
                t.stopped.as_deref().map(|s| format!(" ({s})")).unwrap_or_default()
            );
            summary.push(OrbitSummary {
                mu,
                trajectory: k,
                r0,
                final_r: t.last_r(),
                steps: t.points.len() - 1,
                stopped: t.stopped.clone(),
            });
        }
    }
    ctx.out.write_json("simulate.json", &summary)?;
    Ok(EXIT_OK)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn scan(ctx: &mut Context) -> Result<i32> {
    let family = ctx.family()?;
    let mus = ctx.spec.mus(family.as_ref())?;
    let report = assemble_bifurcation_report(family.as_ref(), &mus, &ctx.spec.branch_config())?;
    let bracket = report.mu_star_bracket;
    match bracket {
        Some(b) => println!("threshold bracket [{:.3e}, {:.3e}]", b.lo, b.hi),
        None => println!("no threshold crossing in the family's range"),
    }
    ctx.out.write("scan.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "mu",
            "branches",
            "plus_mean",
            "minus_mean",
            "plus_spread",
            "minus_spread",
            "manifold_stability",
            "plus_stability",
            "minus_stability",
            "mu_star_lo",
            "mu_star_hi",
            "verdict",
        ])?;
        for e in &report.entries {
            let s = e.solution.as_ref();
            let label = |f: fn(&BranchSolution) -> String| s.map(f).unwrap_or_default();
            out.write_record([
                e.mu.to_string(),
                s.is_some().to_string(),
                opt(s.map(|s| s.plus.mean())),
                opt(s.map(|s| s.minus.mean())),
                opt(s.map(|s| s.plus.spread())),
                opt(s.map(|s| s.minus.spread())),
                label(|s| format!("{:?}", s.stability.manifold).to_lowercase()),
                label(|s| format!("{:?}", s.stability.plus).to_lowercase()),
                label(|s| format!("{:?}", s.stability.minus).to_lowercase()),
                opt(bracket.map(|b| b.lo)),
                opt(bracket.map(|b| b.hi)),
                e.verdict.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    })?;
    let count = report.branches().count();
    println!("{count} of {} parameter values carry branches", report.entries.len());
    Ok(EXIT_OK)
}

pub fn gronwall(ctx: &mut Context) -> Result<i32> {
    let g = ctx
        .spec
        .gronwall
        .as_ref()
        .ok_or_else(|| anyhow!("the spec has no `gronwall` section"))?;
    if g.params.is_empty() || g.times.is_empty() {
        return Err(anyhow!("the gronwall section needs parameters and times"));
    }
    let params: Vec<GronwallParams> = g
        .params
        .iter()
        .map(|p| GronwallParams::new(p.s, p.sigma, p.nu))
        .collect();
    let rows = gronwall_table(&params, &g.times);
    ctx.out.write("gronwall.csv", |w| Ok(write_gronwall_csv(w, &rows)?))?;
    for r in &rows {
        println!(
            "s = {}, sigma = {}, nu = {}, t = {}: E = [{:.6e}, {:.6e}, {:.6e}, {:.6e}]{}",
            r.s,
            r.sigma,
            r.nu,
            r.t,
            r.reference[0],
            r.reference[1],
            r.reference[2],
            r.reference[3],
            if r.ineq_ok { "" } else { " (violates the parameter inequality)" }
        );
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FlowBranch {
    summary: BranchSummary,
    invariance: InvarianceAcrossT,
}

pub fn flow_solve(ctx: &mut Context) -> Result<i32> {
    let time = match ctx.spec.family {
        FamilySpec::FlowModel { time, .. } => time,
        _ => return Err(anyhow!("flow-solve needs a flow-model family")),
    };
    let field = ctx.spec.field()?;
    let map = TimeTMap::new(field.clone(), time)?.with_config(ctx.spec.integrator());
    let mus = ctx.spec.mus(&map)?;
    let config = FlowCheckConfig {
        alpha1: ctx.spec.flow.alpha1,
        mu_star: ctx.spec.mu_star,
        mesh_resolution: ctx.spec.mesh_resolution,
        radial_intervals: ctx.spec.radial_intervals.unwrap_or(16),
        times: ctx.spec.flow.times.clone(),
        integrator: ctx.spec.integrator(),
        requested: None,
    };
    let verdicts = check_flow_conditions(field.as_ref(), &mus, &config)?;
    ctx.out.write_json("flow_check.json", &verdicts)?;
    let mesh = ctx.mesh(&map)?;
    let mut branches = Vec::new();
    let mut code = EXIT_OK;
    for v in &verdicts {
        let failed: Vec<String> = v
            .conditions
            .iter()
            .filter(|c| c.applicable && !c.holds)
            .map(|c| c.condition.to_string())
            .collect();
        if failed.is_empty() {
            println!("mu = {}: continuous-time conditions hold", v.mu);
        } else {
            println!("mu = {}: fails {}", v.mu, failed.join(", "));
            code = EXIT_CONDITION_FAILED;
        }
        if !(v.mu > v.mu_star.unwrap_or(0.0)) {
            continue;
        }
        let mut branch_config = ctx.spec.branch_config();
        branch_config.hypotheses.mu_star = v.mu_star;
        match solve_branches(&map, v.mu, mesh.clone(), &branch_config) {
            Ok(sol) => {
                write_solution(&mut ctx.out, "flow_", &sol)?;
                print_solution(&sol);
                let invariance = verify_invariance_across_t(
                    field.as_ref(),
                    v.mu,
                    &sol.plus,
                    &sol.minus,
                    &ctx.spec.flow.invariance_times,
                    &ctx.spec.integrator(),
                )?;
                println!("  invariance across flow times: {:.3e}", invariance.max);
                branches.push(FlowBranch {
                    summary: sol.summary(),
                    invariance,
                });
            }
            Err(e) if is_branch_failure(&e) => {
                eprintln!("mu = {}: {e}", v.mu);
                code = EXIT_NO_BRANCHES;
            }
            Err(e) => return Err(e.into()),
        }
    }
    ctx.out.write_json("flow_solve.json", &branches)?;
    ctx.out.write("flow_invariance.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["mu", "t", "deviation"])?;
        for b in &branches {
            for (t, d) in &b.invariance.rows {
                out.write_record([b.summary.mu.to_string(), t.to_string(), d.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    })?;
    Ok(code)
}

/// Flushes stdout so progress lines interleave sensibly with stderr.
pub fn flush() {
    let _ = std::io::stdout().flush();
}
