use std::sync::Arc;

use pitchfork::dynsys::MapFamily;
use pitchfork::flow::{verify_invariance_across_t, IntegratorConfig, ModelField, TimeTMap, VectorField};
use pitchfork::geometry::build_mesh;
use pitchfork::graphtransform::{solve_branches, BranchConfig};
use pitchfork::hypotheses::{check_hypotheses, HypothesesConfig};

#[test]
fn time_one_map_runs_the_discrete_pipeline() {
    let field: Arc<dyn VectorField> = Arc::new(ModelField::planar());
    let map = TimeTMap::new(field.clone(), 1.0).unwrap();
    let hyp = HypothesesConfig {
        mesh_resolution: Some(32),
        radial_intervals: 16,
        mu_star: Some(0.0),
        ..Default::default()
    };
    let v = check_hypotheses(&map, &[-0.02, 0.02], &hyp).unwrap();
    assert!(v[0].overall && v[1].overall);

    let mesh = Arc::new(build_mesh(map.manifold(), 32).unwrap());
    let cfg = BranchConfig {
        hypotheses: hyp,
        ..Default::default()
    };
    let sol = solve_branches(&map, 0.02, mesh, &cfg).unwrap();
    let root = 0.02f64.sqrt();
    assert!(sol.plus.max_deviation_from(root) <= 1e-7);
    assert!(sol.minus.max_deviation_from(-root) <= 1e-7);
    assert!(sol.plus_run.max_ratio.unwrap_or(0.0) <= sol.c_star + 0.01);
    let inv = verify_invariance_across_t(
        field.as_ref(),
        0.02,
        &sol.plus,
        &sol.minus,
        &[0.37, 1.0, 1.5, 2.0],
        &IntegratorConfig::default(),
    )
    .unwrap();
    assert!(inv.max <= 1e-6);
}

#[test]
fn time_one_map_is_contracting_before_threshold() {
    let field: Arc<dyn VectorField> = Arc::new(ModelField::planar());
    let map = TimeTMap::new(field, 1.0).unwrap();
    let mesh = Arc::new(build_mesh(map.manifold(), 16).unwrap());
    let err = solve_branches(&map, -0.02, mesh, &BranchConfig::default()).unwrap_err();
    assert!(matches!(err, pitchfork::Error::NoBifurcation { .. }));
}
