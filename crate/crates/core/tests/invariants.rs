use proptest::prelude::*;

use psvh_core::datagen::rotate_pose;
use psvh_core::geometry::{
    euler_to_rotation, pose_rotation_error, pose_to_transform, project_point, rotation_angle_quaternion,
    rotation_error, rotation_to_euler, translation_error, Vec3,
};
use psvh_core::psvh::psvh_forward;
use psvh_core::refine::{carve_refine, probability_maps, rnet_forward, RefinerConfig, RefinerParams};
use psvh_core::silhouette::{box_blur, dilate, erode, read_pgm, write_pgm};
use psvh_core::voxelgrid::{iou, read_grid, voxel_center, write_grid};
use psvh_core::{CameraIntrinsics, Pose, SilhouetteMap, VoxelGrid};

fn angle() -> impl Strategy<Value = f64> {
    -std::f64::consts::PI..std::f64::consts::PI
}

fn pose() -> impl Strategy<Value = Pose> {
    (angle(), -1.5f64..1.5, angle(), -6.0f64..6.0, -6.0f64..6.0, 2.2f64..3.2)
        .prop_map(|(a, b, c, tu, tv, tz)| Pose::new([a, b, c], tu, tv, tz))
}

fn grid(dim: usize) -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(0.0f64..=1.0, dim * dim * dim).prop_map(move |v| VoxelGrid::from_values(dim, v).unwrap())
}

/// Values that survive the f32 grid format unchanged.
fn f32_grid(dim: usize) -> impl Strategy<Value = VoxelGrid> {
    prop::collection::vec(0.0f32..=1.0, dim * dim * dim)
        .prop_map(move |v| VoxelGrid::from_values(dim, v.into_iter().map(f64::from).collect()).unwrap())
}

fn image(w: usize, h: usize) -> impl Strategy<Value = SilhouetteMap> {
    prop::collection::vec(0.0f64..=1.0, w * h).prop_map(move |v| SilhouetteMap::from_values(w, h, v).unwrap())
}

fn k16() -> CameraIntrinsics {
    CameraIntrinsics::centered(20.0, 16, 16).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn euler_angles_round_trip_to_the_same_rotation(a in angle(), b in -1.5f64..1.5, c in angle()) {
        let r = euler_to_rotation(a, b, c);
        let t = rotation_to_euler(&r);
        let r2 = euler_to_rotation(t[0], t[1], t[2]);
        prop_assert!((r - r2).abs().max() < 1e-9);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_error_agrees_with_quaternion_angle(p in pose(), q in pose()) {
        let (r1, r2) = (p.rotation(), q.rotation());
        let e = rotation_error(&r1, &r2);
        prop_assert!((0.0..=180.0).contains(&e));
        prop_assert!((e - rotation_error(&r2, &r1)).abs() < 1e-9);
        // acos loses precision near 0 and 180 degrees.
        prop_assert!((e - rotation_angle_quaternion(&r1, &r2)).abs() < 1e-5);
    }

    #[test]
    fn rotate_pose_moves_by_exactly_the_requested_angle(p in pose(), a in 0.0f64..170.0, seed in any::<u64>()) {
        let q = rotate_pose(&p, a, seed);
        prop_assert!((pose_rotation_error(&p, &q) - a).abs() < 1e-5);
        prop_assert_eq!((q.tu, q.tv, q.tz), (p.tu, p.tv, p.tz));
    }

    #[test]
    fn projection_inverts_along_the_pixel_ray(p in pose(), x in -0.5f64..0.5, y in -0.5f64..0.5, z in -0.5f64..0.5) {
        let k = CameraIntrinsics::default();
        let t = pose_to_transform(&p, &k).unwrap();
        let pt = Vec3::new(x, y, z);
        let pr = project_point(&k, &t, &pt).unwrap();
        let back = t.inverse_apply(&(k.ray(pr.u, pr.v) * pr.depth));
        prop_assert!((back - pt).norm() < 1e-9);
    }

    #[test]
    fn metric_translation_round_trips(p in pose()) {
        let k = CameraIntrinsics::default();
        let q = Pose::with_translation(p.theta, &p.translation(&k), &k).unwrap();
        prop_assert!(translation_error(&q.translation(&k), &p.translation(&k)).unwrap() < 1e-12);
        prop_assert!((q.tu - p.tu).abs() < 1e-9 && (q.tv - p.tv).abs() < 1e-9);
    }

    #[test]
    fn hull_is_a_probability_and_monotone_in_the_silhouette(
        s in image(16, 16), extra in image(16, 16), p in pose()
    ) {
        let k = k16();
        let h1 = psvh_forward(&s, &p, &k, 6).unwrap();
        let bigger = SilhouetteMap::from_values(
            16, 16, s.values().iter().zip(extra.values()).map(|(a, b)| a.max(*b)).collect()
        ).unwrap();
        let h2 = psvh_forward(&bigger, &p, &k, 6).unwrap();
        for (a, b) in h1.hull.values().iter().zip(h2.hull.values()) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!(*a <= *b + 1e-15);
        }
        prop_assert_eq!(h1.off_image, h2.off_image);
    }

    #[test]
    fn constant_silhouette_gives_a_constant_hull_inside_the_frame(c in 0.0f64..=1.0, p in pose()) {
        let k = k16();
        let s = SilhouetteMap::filled(16, 16, c).unwrap();
        let out = psvh_forward(&s, &p, &k, 5).unwrap();
        let t = pose_to_transform(&p, &k).unwrap();
        let mut inside = 0;
        for i in 0..5 {
            for j in 0..5 {
                for l in 0..5 {
                    let pr = project_point(&k, &t, &voxel_center([i, j, l], 5).unwrap()).unwrap();
                    let h = out.hull.get(i, j, l);
                    if pr.u >= 0.0 && pr.u <= 15.0 && pr.v >= 0.0 && pr.v <= 15.0 {
                        inside += 1;
                        prop_assert!((h - c).abs() < 1e-12);
                    } else if pr.u < -1.0 || pr.u > 16.0 || pr.v < -1.0 || pr.v > 16.0 {
                        prop_assert_eq!(h, 0.0);
                    }
                }
            }
        }
        prop_assert!(inside + out.off_image >= 125);
    }

    #[test]
    fn morphology_brackets_the_image(s in image(12, 9), r in 0usize..3) {
        let (d, e, b) = (dilate(&s, r), erode(&s, r), box_blur(&s, r));
        for i in 0..s.values().len() {
            let v = s.values()[i];
            prop_assert!(e.values()[i] <= v && v <= d.values()[i]);
            prop_assert!(e.values()[i] <= b.values()[i] + 1e-12 && b.values()[i] <= d.values()[i] + 1e-12);
        }
    }

    #[test]
    fn carving_never_adds_occupancy(v in grid(4), h in grid(4), tau in 0.05f64..1.0) {
        let c = carve_refine(&v, &h, tau).unwrap();
        for ((c, v), h) in c.values().iter().zip(v.values()).zip(h.values()) {
            prop_assert!(*c <= *v);
            if *h >= tau {
                prop_assert_eq!(c, v);
            }
        }
        let ones = VoxelGrid::filled(4, 1.0).unwrap();
        prop_assert_eq!(carve_refine(&v, &ones, tau).unwrap(), v);
    }

    #[test]
    fn probability_maps_partition_disagreement(v in grid(3), h in grid(3)) {
        let (a, b) = probability_maps(&v, &h).unwrap();
        for i in 0..v.len() {
            let (x, y) = (v.values()[i], h.values()[i]);
            prop_assert!((a.values()[i] - b.values()[i] - (x - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_is_a_symmetric_similarity(a in grid(4), b in grid(4), tau in 0.05f64..0.95) {
        let ab = iou(&a, &b, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, iou(&b, &a, tau).unwrap());
        prop_assert_eq!(iou(&a, &a, tau).unwrap(), 1.0);
    }

    #[test]
    fn untrained_refiner_is_the_identity(v in grid(4), h in grid(4)) {
        let params = RefinerParams::init(&RefinerConfig::default()).unwrap();
        let eps = params.residual_eps;
        let out = rnet_forward(&params, &v, &h).unwrap();
        for (o, x) in out.values().iter().zip(v.values()) {
            prop_assert!((o - x.clamp(eps, 1.0 - eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn grids_round_trip_bit_exactly(v in f32_grid(5)) {
        let mut buf = Vec::new();
        write_grid(&mut buf, &v).unwrap();
        prop_assert_eq!(read_grid(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn pgm_round_trips_quantized_images(s in image(10, 8)) {
        let q = s.quantized();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &q).unwrap();
        let back = read_pgm(buf.as_slice()).unwrap();
        for (a, b) in back.values().iter().zip(s.values()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        prop_assert_eq!(back, q);
    }
}
