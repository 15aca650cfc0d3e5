mod common;

use invclass_core::SolverKind;

const TOL: f64 = 1e-9;

#[test]
fn projections_hold_at_every_update() {
    for budget in [0.05, 1.0, 50.0] {
        let prob = common::sweep_sized_problem(budget);
        assert_eq!(prob.num_samples(), 60);
        for kind in SolverKind::ALL {
            let (worst, updates) = common::projection_breach(kind, &prob, 10, 4);
            assert!(updates >= 10, "{kind}: only {updates} updates observed");
            assert!(worst <= TOL, "{kind} at budget {budget}: breach {worst:e}");
        }
    }
}
