use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use proptest::prelude::*;

use pitchfork::dynsys::{CanonicalFamily, MapFamily};
use pitchfork::geometry::{build_mesh, ManifoldMesh, ReferenceManifold, TubularPoint, TubularRegion};
use pitchfork::graphtransform::{
    graph_transform_apply, lipschitz_estimate, solve_branches, Branch, BranchConfig, GraphFunction,
};
use pitchfork::hypotheses::{choose_chi, estimate_norms, HypothesesConfig};

const MU: f64 = 0.02;

struct Setup {
    family: CanonicalFamily,
    mesh: Arc<ManifoldMesh>,
    shell: TubularRegion,
    c_star: f64,
}

fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let family = CanonicalFamily::planar(0.4);
        let mesh = Arc::new(build_mesh(family.manifold(), 64).unwrap());
        let chi = choose_chi(&family, MU, Some(0.0), &HypothesesConfig::default(), &mesh).unwrap();
        let shell = TubularRegion::shell(chi, family.tube_radius()).unwrap();
        let c_star = estimate_norms(&family, MU, &shell, &mesh, 64).unwrap().constants.c_star;
        Setup {
            family,
            mesh,
            shell,
            c_star,
        }
    })
}

/// A smooth graph with values in `[lo, hi]` and arc-Lipschitz constant `slope`.
fn wave(mesh: &Arc<ManifoldMesh>, lo: f64, hi: f64, level: f64, slope: f64, k: f64, phase: f64, branch: Branch) -> GraphFunction {
    let mid = lo + level * (hi - lo);
    let room = (mid - lo).min(hi - mid);
    let amp = (slope / k).min(room);
    GraphFunction::from_fn(mesh.clone(), branch, |y| {
        let theta = y[1].atan2(y[0]);
        branch.sign() * (mid + amp * (k * theta + phase).sin())
    })
    .unwrap()
}

fn branch_of(plus: bool) -> Branch {
    if plus {
        Branch::Plus
    } else {
        Branch::Minus
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_preserves_the_graph_space(
        level in 0.0f64..1.0,
        slope in 0.0f64..0.9,
        k in 1u32..4,
        phase in 0.0f64..6.3,
        plus in any::<bool>(),
    ) {
        let s = setup();
        let (lo, hi) = (s.shell.inner_cut, s.shell.alpha);
        let psi = wave(&s.mesh, lo, hi, level, slope, k as f64, phase, branch_of(plus));
        prop_assume!(psi.membership(&s.shell, 1e-12).holds());
        let image = graph_transform_apply(&psi, &s.family, MU).unwrap();
        let m = image.membership(&s.shell, 1e-9);
        prop_assert!(m.sign_ok && m.contained, "{m:?}");
        prop_assert!(m.lipschitz <= 1.0 + 1e-9, "{m:?}");
    }

    #[test]
    fn operator_contracts_at_rate_c_star(
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        slope in 0.0f64..0.9,
        k in 1u32..4,
        phase in 0.0f64..6.3,
        plus in any::<bool>(),
    ) {
        let s = setup();
        let (lo, hi) = (s.shell.inner_cut, s.shell.alpha);
        let branch = branch_of(plus);
        let p = wave(&s.mesh, lo, hi, a, slope, k as f64, phase, branch);
        let q = wave(&s.mesh, lo, hi, b, 0.5 * slope, k as f64 + 1.0, -phase, branch);
        let before = p.sup_distance(&q);
        prop_assume!(before > 1e-6);
        let after = graph_transform_apply(&p, &s.family, MU)
            .unwrap()
            .sup_distance(&graph_transform_apply(&q, &s.family, MU).unwrap());
        prop_assert!(after <= (s.c_star + 0.01) * before, "{after} vs {before}, c* = {}", s.c_star);
    }

    #[test]
    fn round_trip_through_tubular_coordinates(
        r in -0.2f64..0.2,
        u in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let d = DVector::from_vec(u);
        prop_assume!(d.norm() > 1e-3);
        let man = ReferenceManifold::unit_sphere(4).unwrap();
        let y = d.normalize();
        let p = man.project(&man.embed(&TubularPoint::new(r, y.clone()))).unwrap();
        prop_assert!((p.r - r).abs() <= 1e-10);
        prop_assert!((p.y - y).norm() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn converged_branches_are_one_lipschitz(mu in 0.004f64..0.04, angle in 0.1f64..3.0) {
        let family = CanonicalFamily::planar(angle);
        let mesh = Arc::new(build_mesh(family.manifold(), 64).unwrap());
        let config = BranchConfig {
            hypotheses: HypothesesConfig { mu_star: Some(0.0), ..Default::default() },
            ..Default::default()
        };
        let sol = solve_branches(&family, mu, mesh, &config).unwrap();
        for g in [&sol.plus, &sol.minus] {
            prop_assert!(lipschitz_estimate(g) <= 1.0);
            prop_assert!((g.values()[0].abs() - mu.sqrt()).abs() <= 1e-8);
        }
    }
}

#[test]
fn spatial_operator_preserves_the_graph_space() {
    let family = CanonicalFamily::spatial([1.0, 2.0, 2.0], 0.7).unwrap();
    let mesh = Arc::new(build_mesh(family.manifold(), 162).unwrap());
    let chi = choose_chi(&family, MU, Some(0.0), &HypothesesConfig::default(), &mesh).unwrap();
    let shell = TubularRegion::shell(chi, family.tube_radius()).unwrap();
    let mid = 0.5 * (chi + shell.alpha);
    let psi = GraphFunction::from_fn(mesh, Branch::Plus, |y| mid + 0.2 * (shell.alpha - chi) * y[2]).unwrap();
    assert!(psi.membership(&shell, 1e-12).holds());
    let image = graph_transform_apply(&psi, &family, MU).unwrap();
    assert!(image.membership(&shell, 1e-9).holds());
}
