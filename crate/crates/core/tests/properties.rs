use nimap_core::geometry::{se3_exp, se3_log};
use nimap_core::io::{decode_pgm16, encode_pgm16, format_trajectory, parse_trajectory, DEPTH_SCALE};
use nimap_core::octree::{morton_decode, morton_encode, trilinear_weights};
use nimap_core::renderer::{composite, render_uncertainty};
use nimap_core::{DepthImage, GridConfig, OctreeFeatureGrid, Pose, RunConfig, Twist, Vec3};
use proptest::prelude::*;
use std::path::Path;

fn occupancies(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 0..=max)
}

proptest! {
    #[test]
    fn compositing_weights_are_a_sub_partition(o in occupancies(16)) {
        let d: Vec<f64> = (0..o.len()).map(|i| 1.0 + i as f64).collect();
        let c = composite(&d, &o, &vec![[0.5; 3]; o.len()]).unwrap();
        prop_assert!(c.weights.iter().all(|w| *w >= 0.0));
        prop_assert!(c.weights.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn raising_an_occupancy_never_raises_later_weights(o in occupancies(12), k in 0usize..12, bump in 0.0f64..1.0) {
        prop_assume!(k < o.len());
        let d: Vec<f64> = (0..o.len()).map(|i| i as f64).collect();
        let cols = vec![[0.0; 3]; o.len()];
        let before = composite(&d, &o, &cols).unwrap();
        let mut o2 = o.clone();
        o2[k] += (1.0 - o2[k]) * bump;
        let after = composite(&d, &o2, &cols).unwrap();
        for j in k + 1..o.len() {
            prop_assert!(after.weights[j] <= before.weights[j] + 1e-15);
        }
    }

    #[test]
    fn uncertainty_is_a_bernoulli_variance(o in occupancies(32)) {
        let u = render_uncertainty(&o);
        prop_assert!((0.0..=0.25).contains(&u));
        if o.is_empty() {
            prop_assert_eq!(u, 0.25);
        }
    }

    #[test]
    fn morton_round_trip(x in 0u32..(1 << 21), y in 0u32..(1 << 21), z in 0u32..(1 << 21)) {
        prop_assert_eq!(morton_decode(morton_encode(x, y, z).unwrap()), (x, y, z));
    }

    #[test]
    fn trilinear_weights_sum_to_one(f in prop::array::uniform3(0.0f64..=1.0)) {
        let w = trilinear_weights(f);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn se3_log_inverts_exp(v in prop::array::uniform6(-1.0f64..1.0)) {
        let xi = Twist::from_column_slice(&v);
        let back = se3_log(&se3_exp(&xi)).unwrap();
        prop_assert!((back - xi).norm() < 1e-9);
    }

    #[test]
    fn between_undoes_compose(a in prop::array::uniform6(-2.0f64..2.0), b in prop::array::uniform6(-2.0f64..2.0)) {
        let pa = se3_exp(&Twist::from_column_slice(&a));
        let pb = se3_exp(&Twist::from_column_slice(&b));
        let rel = Pose::between(&pa, &pa.compose(&pb));
        prop_assert!((rel.translation - pb.translation).norm() < 1e-12);
        prop_assert!((rel.rotation - pb.rotation).norm() < 1e-12);
    }

    #[test]
    fn depth_pgm_quantization_is_bounded(d in prop::collection::vec(0.01f64..6.0, 1..64)) {
        let img = DepthImage { width: d.len() as u32, height: 1, data: d.clone() };
        let back = decode_pgm16(&encode_pgm16(&img, DEPTH_SCALE), Path::new("d.pgm")).unwrap();
        for (a, b) in d.iter().zip(&back.data) {
            prop_assert!((a - b).abs() <= 0.5 * DEPTH_SCALE + 1e-12);
        }
    }

    #[test]
    fn trajectory_text_round_trip(v in prop::collection::vec(prop::array::uniform6(-3.0f64..3.0), 1..10)) {
        let recs: Vec<(f64, Pose)> = v.iter().enumerate()
            .map(|(i, x)| (i as f64 * 0.1, se3_exp(&Twist::from_column_slice(x))))
            .collect();
        let back = parse_trajectory(&format_trajectory(&recs), Path::new("t.txt")).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for ((_, a), (_, b)) in recs.iter().zip(&back) {
            prop_assert!((a.translation - b.translation).norm() < 1e-8);
            prop_assert!(Pose::between(a, b).rotation_angle() < 1e-8);
        }
    }

    #[test]
    fn octree_node_count_is_bounded_by_path_length(pts in prop::collection::vec(prop::array::uniform3(-1.9f64..1.9), 1..60)) {
        let mut cfg = GridConfig::centered(4.0, 6, 2);
        cfg.active_levels = vec![5, 6];
        let mut grid = OctreeFeatureGrid::new(cfg).unwrap();
        let points: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
        grid.insert_points(&points);
        prop_assert!(grid.node_count() <= points.len() * 7);
        for p in &points {
            prop_assert!(grid.leaf_allocated(p));
            let (_, rec) = grid.interpolate(p).unwrap();
            for level in &rec.levels {
                prop_assert!((level.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn config_documents_round_trip() {
    for path in ["../../configs/desk_room.toml", "../../configs/unit_sphere.toml"] {
        let cfg = RunConfig::load(Path::new(path)).unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
