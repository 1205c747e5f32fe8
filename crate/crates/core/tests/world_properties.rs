use fuselocate::world::{build_floor, generate_path, place_aps, ApLayout, CorridorSpec, MotionProfile, RadioRanges};
use proptest::prelude::*;

fn spec(w: f64, h: f64) -> CorridorSpec {
    CorridorSpec {
        outer_width: w,
        outer_height: h,
        corridor_width: 2.0,
        wall_thickness: 0.2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn straight_samples_follow_the_speed(
        w in 8.0f64..16.0,
        h in 8.0f64..16.0,
        cruise in 0.2f64..1.5,
        accel in 0.2f64..2.0,
        dt in prop::sample::select(vec![0.01, 0.02, 0.05]),
    ) {
        let spec = spec(w, h);
        let grid = build_floor(&spec, 0.05).unwrap();
        let profile = MotionProfile { cruise_speed: cruise, accel_limit: accel, ..MotionProfile::default() };
        let path = generate_path(&grid, &spec.centerline(), &profile, dt).unwrap();
        for s in path.windows(2) {
            if s[0].omega != 0.0 || s[1].omega != 0.0 {
                continue;
            }
            let (c, sn) = (s[0].pose.theta.cos(), s[0].pose.theta.sin());
            let vx = (s[1].pose.x - s[0].pose.x) / dt;
            let vy = (s[1].pose.y - s[0].pose.y) / dt;
            prop_assert!((vx - s[0].v * c).abs() <= accel * dt + 1e-9, "{vx} vs {}", s[0].v * c);
            prop_assert!((vy - s[0].v * sn).abs() <= accel * dt + 1e-9);
        }
        let (first, last) = (path.first().unwrap(), path.last().unwrap());
        let step = cruise * dt + 1e-9;
        prop_assert!(first.pose.position().distance(last.pose.position()) <= step);
    }

    #[test]
    fn world_generation_is_a_function_of_the_seed(seed in any::<u64>(), count in 1usize..40) {
        let grid = build_floor(&spec(12.4, 12.4), 0.05).unwrap();
        for layout in [ApLayout::Perimeter, ApLayout::UniformRandom] {
            let a = place_aps(&grid, count, layout, &RadioRanges::default(), seed).unwrap();
            let b = place_aps(&grid, count, layout, &RadioRanges::default(), seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), count);
            for (i, ap) in a.iter().enumerate() {
                prop_assert_eq!(ap.id, i);
                prop_assert!((1.5..=6.0).contains(&ap.path_loss_exponent));
            }
        }
    }
}
