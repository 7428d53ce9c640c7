use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use retsim_core::geometry::{normal_frame, rotation_exp, rotation_log, Polygon, RigidTransform};
use retsim_core::operator::{triangle_path, TremorModel};
use retsim_core::phantom::{PhantomConfig, TissueModel};

fn xy_in_disc() -> impl Strategy<Value = Vector2<f64>> {
    (0.0f64..4.5e-3, 0.0f64..std::f64::consts::TAU).prop_map(|(r, a)| Vector2::new(r * a.cos(), r * a.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rotation_log_inverts_exp(w in proptest::array::uniform3(-1.0f64..1.0)) {
        let w = Vector3::from(w);
        prop_assume!(w.norm() < 3.0);
        prop_assert!((rotation_log(&rotation_exp(&w)).unwrap() - w).norm() < 1e-9);
    }

    #[test]
    fn transform_times_inverse_is_identity(
        w in proptest::array::uniform3(-1.0f64..1.0),
        t in proptest::array::uniform3(-1.0f64..1.0),
        p in proptest::array::uniform3(-1.0f64..1.0),
    ) {
        let tf = RigidTransform::new(rotation_exp(&Vector3::from(w)), Vector3::from(t)).unwrap();
        let p = Vector3::from(p);
        let back = tf.inverse().transform_point(&tf.transform_point(&p));
        prop_assert!((back - p).norm() < 1e-12);
        let id = tf.compose(&tf.inverse());
        prop_assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn normal_frame_has_the_normal_as_third_row(n in proptest::array::uniform3(-1.0f64..1.0)) {
        let n = Vector3::from(n);
        prop_assume!(n.norm() > 1e-3);
        let r = normal_frame(&n).unwrap();
        prop_assert!((r * r.transpose() - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((r.row(2).transpose() - n.normalize()).norm() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_distance_along_the_normal(xy in xy_in_disc(), d in -300e-6f64..3e-3) {
        let tissue = TissueModel::from_config(&PhantomConfig::default()).unwrap();
        let foot = Vector3::new(xy.x, xy.y, tissue.surface_height(&xy, 0.0).unwrap());
        let n = tissue.surface_normal(&xy, 0.0).unwrap();
        prop_assert!((n.norm() - 1.0).abs() < 1e-12);
        prop_assert!(n.z > 0.0);
        let got = tissue.probe_distance(&(foot + n * d), 0.0).unwrap();
        prop_assert!((got - d).abs() < 1e-9, "{} vs {}", got, d);
    }

    #[test]
    fn patient_motion_stays_within_its_amplitude(t in 0.0f64..600.0, seed in any::<u64>()) {
        let cfg = PhantomConfig { patient_motion: true, seed, ..PhantomConfig::default() };
        let tissue = TissueModel::from_config(&cfg).unwrap();
        prop_assert!(tissue.patient_offset(t).abs() <= cfg.patient_amplitude_m + 1e-15);
    }

    #[test]
    fn tremor_is_bounded(t in 0.0f64..100.0, seed in any::<u64>(), amp in 0.0f64..1e-4) {
        let tremor = TremorModel::new(amp, (8.0, 12.0), seed).unwrap();
        let s = tremor.sample(t);
        prop_assert!(s.amax() <= amp * (1.0 + 1e-12));
    }

    #[test]
    fn triangle_path_is_closed_with_even_stops(side in 1e-3f64..6e-3, stops in 1usize..6) {
        let path = triangle_path(side, stops).unwrap();
        prop_assert_eq!(path.len(), 3 * stops + 1);
        prop_assert_eq!(path[0], path[path.len() - 1]);
        let length: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        prop_assert!((length - 3.0 * side).abs() < 1e-12);
        let step = side / stops as f64;
        for w in path.windows(2) {
            prop_assert!(((w[1] - w[0]).norm() - step).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_polygon_contains_the_original(side in 1e-4f64..1e-2, k in 1.0f64..2.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let tri = Polygon::equilateral(Vector2::zeros(), side).unwrap();
        let vs = tri.vertices();
        // a point inside the triangle by barycentric mixing
        let (a, b) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
        let p = vs[0] + (vs[1] - vs[0]) * a + (vs[2] - vs[0]) * b;
        prop_assert!(tri.scaled(k).contains(&(p * 0.999)));
    }
}

#[test]
fn triangle_inscribed_in_the_opening() {
    let tissue = TissueModel::from_config(&PhantomConfig::default()).unwrap();
    let tri = Polygon::equilateral(Vector2::zeros(), 6e-3).unwrap();
    assert!(tri.scaled(1.2).max_radius() < tissue.disc_radius());
}
