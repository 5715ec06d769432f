use formation_core::dynamics::{cw_stm, step_rk4, BodyParams, OrbitParams, RigidBodyModel, RigidBodyState, Wrench};
use formation_core::math::{quat_from_axis_angle, quat_norm, Mat3, Vec3};
use nalgebra::Vector6;
use proptest::prelude::*;

fn model_with_n(n: f64) -> RigidBodyModel {
    let orbit = OrbitParams::earth(6_778_000.0).unwrap();
    RigidBodyModel::new(
        OrbitParams { n, ..orbit },
        BodyParams::new(17.8, Mat3::identity() * 0.315).unwrap(),
    )
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(1000) })]

    #[test]
    fn unforced_rk4_matches_cw_transition(
        n in 1e-5f64..0.002,
        dt in 0.01f64..1.0,
        p in vec3(100.0),
        v in vec3(0.5),
    ) {
        let s = RigidBodyState { p_h: p, v_h: v, ..Default::default() };
        let next = step_rk4(&s, &Wrench::zero(), &model_with_n(n), dt).unwrap();
        let x0 = Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z);
        let expected = cw_stm(n, dt) * x0;
        let got = Vector6::new(next.p_h.x, next.p_h.y, next.p_h.z, next.v_h.x, next.v_h.y, next.v_h.z);
        prop_assert!((got - expected).norm() <= 1e-6 * expected.norm().max(1e-12));
    }

    #[test]
    fn torque_free_rotation_keeps_energy_and_unit_norm(
        axis in vec3(1.0).prop_filter("nonzero axis", |a| a.norm() > 1e-3),
        angle in -3.0f64..3.0,
        w in vec3(0.5),
    ) {
        let inertia = Mat3::new(0.30, 0.01, 0.0, 0.01, 0.40, -0.02, 0.0, -0.02, 0.50);
        let orbit = OrbitParams::earth(6_778_000.0).unwrap();
        let model = RigidBodyModel::new(orbit, BodyParams::new(17.8, inertia).unwrap());
        let energy = |s: &RigidBodyState| 0.5 * s.omega_b.dot(&(inertia * s.omega_b));
        let mut s = RigidBodyState { q_hb: quat_from_axis_angle(&axis, angle), omega_b: w, ..Default::default() };
        let e0 = energy(&s);
        for _ in 0..1000 {
            s = step_rk4(&s, &Wrench::zero(), &model, 0.01).unwrap();
            prop_assert!((quat_norm(&s.q_hb) - 1.0).abs() < 1e-9);
        }
        prop_assert!((energy(&s) - e0).abs() <= 1e-6 * e0.max(1e-12));
    }

    #[test]
    fn translation_ignores_attitude_without_force(
        p in vec3(10.0),
        v in vec3(0.1),
        axis in vec3(1.0).prop_filter("nonzero axis", |a| a.norm() > 1e-3),
        angle in -3.0f64..3.0,
    ) {
        let m = model_with_n(1.1e-3);
        let a = RigidBodyState { p_h: p, v_h: v, ..Default::default() };
        let b = RigidBodyState { q_hb: quat_from_axis_angle(&axis, angle), ..a };
        let na = step_rk4(&a, &Wrench::zero(), &m, 0.2).unwrap();
        let nb = step_rk4(&b, &Wrench::zero(), &m, 0.2).unwrap();
        prop_assert_eq!(na.p_h, nb.p_h);
        prop_assert_eq!(na.v_h, nb.v_h);
    }
}

#[test]
fn rk4_rejects_bad_inputs() {
    let m = model_with_n(1e-3);
    let s = RigidBodyState::default();
    assert!(step_rk4(&s, &Wrench::zero(), &m, 0.0).is_err());
    let skewed = RigidBodyState { q_hb: s.q_hb * 1.1, ..s };
    assert!(step_rk4(&skewed, &Wrench::zero(), &m, 0.1).is_err());
}
