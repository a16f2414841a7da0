use elastoplast::control::{synthesize_exact_control, verify_control};
use elastoplast::{DriftModel, SolverConfig, State};
use proptest::prelude::*;

fn start() -> impl Strategy<Value = State> {
    let z = prop_oneof![Just(1.0), Just(-1.0), -1.0..=1.0];
    (-3.0..=3.0, z).prop_map(|(y, z)| State::new(y, z))
}

fn target() -> impl Strategy<Value = State> {
    let y = prop_oneof![-3.0..=-0.1, 0.1..=3.0];
    (y, -0.9..0.9).prop_map(|(y, z)| State::new(y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_are_continuous_and_admissible(x0 in start(), xt in target(), t in 0.5..8.0) {
        let model = DriftModel::canonical();
        let sched = synthesize_exact_control(x0, xt, t, &model).unwrap();
        prop_assert!((sched.total() - t).abs() < 1e-12);
        for r in sched.junction_residuals() {
            prop_assert!(r <= 1e-9, "junction residual {r}");
        }
        let h = t / 20_000.0;
        let (rep, traj) = verify_control(x0, &sched, xt, &model, &SolverConfig::new(h, t).unwrap()).unwrap();
        prop_assert_eq!(rep.max_constraint_violation, 0.0);
        prop_assert!(traj.states.iter().all(|s| s.z.abs() <= 1.0));
        // planned states follow the closed form, the simulation tracks it
        let planned = sched.state_at(t).unwrap();
        prop_assert!(planned.distance(&xt) < 1e-9, "planned end {planned}");
    }
}
