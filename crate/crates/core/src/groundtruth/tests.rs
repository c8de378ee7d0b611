use super::*;

fn ann(w: usize, h: usize, pts: &[(f64, f64)]) -> HeadAnnotations {
    HeadAnnotations::new(w, h, pts.to_vec()).unwrap()
}

fn peak(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::MIN, f64::max)
}

#[test]
fn single_centered_head_sums_to_one() {
    let m = gen_density_fixed(&ann(100, 100, &[(50.0, 50.0)]), &KernelParams::default());
    assert!((m.count() - 1.0).abs() < 1e-6);
    assert!(m.values.iter().all(|&v| v >= 0.0));
}

#[test]
fn coincident_heads_superpose() {
    let p = KernelParams::default();
    let one = gen_density_fixed(&ann(40, 40, &[(20.2, 19.8)]), &p);
    let two = gen_density_fixed(&ann(40, 40, &[(20.2, 19.8), (20.2, 19.8)]), &p);
    assert!((two.count() - 2.0).abs() < 1e-12);
    assert_eq!(peak(&two.values), 2.0 * peak(&one.values));
}

#[test]
fn corner_head_is_renormalized() {
    let p = KernelParams::default();
    // Mass of the untruncated discrete kernel that falls inside the image
    // when centred on pixel (0, 0): only offsets 0..=7 on each axis.
    let g: Vec<f64> = (-7i32..=7).map(|d| (-(d * d) as f64 / 32.0).exp()).collect();
    let full: f64 = g.iter().sum();
    let kept: f64 = g[7..].iter().sum();
    let truncated = (kept / full).powi(2);
    assert!(truncated < 0.5, "truncated mass {truncated}");
    let m = gen_density_fixed(&ann(30, 30, &[(0.0, 0.0)]), &p);
    assert!((m.count() - 1.0).abs() < 1e-6);
}

#[test]
fn rounding_is_half_up_and_clamped() {
    let a = ann(10, 10, &[(2.5, 3.49), (9.9, 9.5)]);
    assert_eq!(a.pixel(0), (3, 3));
    assert_eq!(a.pixel(1), (9, 9));
}

#[test]
fn out_of_bounds_points_rejected() {
    assert!(HeadAnnotations::new(10, 10, vec![(10.0, 0.0)]).is_err());
    assert!(HeadAnnotations::new(10, 10, vec![(0.0, -1e-9)]).is_err());
    assert!(HeadAnnotations::new(10, 10, vec![(f64::INFINITY, 0.0)]).is_err());
}

#[test]
fn knn_examples() {
    let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (-10.0, 0.0), (30.0, 30.0)];
    assert_eq!(knn_mean_distance(&pts, 0, 3), Some(10.0));
    assert_eq!(adaptive_sigma(10.0, 0.3).0, 3.0);
    let line = [(0.0, 0.0), (3.0, 0.0), (10.0, 0.0)];
    assert_eq!(knn_mean_distance(&line, 1, 1), Some(3.0));
    // k larger than the neighbour count averages all of them.
    assert_eq!(knn_mean_distance(&line, 0, 5), Some(6.5));
    assert_eq!(knn_mean_distance(&[(1.0, 1.0)], 0, 3), None);
}

#[test]
fn adaptive_window_growth_and_clamp() {
    assert_eq!(adaptive_sigma(10.0, 0.3), (3.0, 19));
    assert_eq!(adaptive_sigma(0.1, 0.3), (0.5, 5));
    assert_eq!(adaptive_sigma(1000.0, 0.3), (25.0, 151));
}

#[test]
fn adaptive_far_pair_conserves_count() {
    let m = gen_density_adaptive(&ann(200, 200, &[(20.0, 20.0), (180.0, 180.0)]), &KernelParams::adaptive());
    assert!((m.count() - 2.0).abs() < 1e-6);
    let fixed = gen_density_fixed(&ann(200, 200, &[(20.0, 20.0)]), &KernelParams::default());
    assert!(peak(&m.values) < peak(&fixed.values) / 10.0);
}

#[test]
fn adaptive_dense_cluster_is_sharp() {
    let pts: Vec<(f64, f64)> = (0..5).flat_map(|i| (0..5).map(move |j| (20.0 + 2.0 * i as f64, 20.0 + 2.0 * j as f64))).collect();
    // The central head has four neighbours at distance 2.
    assert_eq!(knn_mean_distance(&pts, 12, 3), Some(2.0));
    let (sigma, window) = adaptive_sigma(2.0, 0.3);
    assert!((sigma - 0.6).abs() < 1e-12);
    assert_eq!(window, 5);
    let m = gen_density_adaptive(&ann(60, 60, &pts), &KernelParams::adaptive());
    assert!((m.count() - 25.0).abs() < 1e-6);
}

#[test]
fn adaptive_single_point_falls_back() {
    let a = ann(50, 50, &[(25.0, 25.0)]);
    let p = KernelParams::adaptive();
    assert_eq!(gen_density_adaptive(&a, &p).values, gen_density_fixed(&a, &p).values);
}

#[test]
fn flip_is_bit_exact_for_pixel_centres() {
    let a = ann(37, 21, &[(0.0, 3.0), (5.0, 20.0), (36.0, 10.0), (18.0, 0.0), (2.0, 2.0)]);
    for p in [KernelParams::default(), KernelParams::adaptive()] {
        let m = gen_density(&a, &p);
        let f = gen_density(&a.flip_horizontal(), &p);
        for y in 0..21 {
            for x in 0..37 {
                assert_eq!(f.values[y * 37 + x].to_bits(), m.values[y * 37 + 36 - x].to_bits());
            }
        }
    }
}

#[test]
fn superposition() {
    let p = KernelParams::default();
    let a = [(3.0, 4.0), (10.0, 10.0)];
    let b = [(11.0, 9.0), (0.0, 0.0), (19.0, 19.0)];
    let both: Vec<_> = a.iter().chain(&b).cloned().collect();
    let da = gen_density_fixed(&ann(20, 20, &a), &p);
    let db = gen_density_fixed(&ann(20, 20, &b), &p);
    let dab = gen_density_fixed(&ann(20, 20, &both), &p);
    for i in 0..400 {
        assert!((dab.values[i] - (da.values[i] + db.values[i])).abs() < 1e-15);
    }
}

fn discrete_reinforcement_peak() -> f64 {
    let z: f64 = (-15i32..=15).map(|d| (-(d * d) as f64 / 128.0).exp()).sum();
    1.0 / (z * z)
}

#[test]
fn reinforcement_peak_and_far_field() {
    let p = KernelParams::reinforcement();
    let a = ann(120, 120, &[(30.0, 30.0)]);
    let blur = blur_unnormalized(&a, &p);
    let pk = discrete_reinforcement_peak();
    assert!((blur[30 * 120 + 30] - pk).abs() < 1e-15);
    // Close to the continuous value 1 / (2 pi 64).
    let continuous = 1.0 / (2.0 * std::f64::consts::PI * 64.0);
    assert!((pk - continuous).abs() / continuous < 0.15);
    let m = gen_reinforcement(&a, &p, REINFORCEMENT_THRESHOLD).unwrap();
    assert_eq!(m.values[30 * 120 + 30], 1.0);
    assert_eq!(m.values[119 * 120 + 119], 0.0);
    assert!(m.values.iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn reinforcement_footprint_is_a_disk() {
    let p = KernelParams::reinforcement();
    let m = gen_reinforcement(&ann(101, 101, &[(50.0, 50.0)]), &p, REINFORCEMENT_THRESHOLD).unwrap();
    // exp(-r^2 / 128) * peak = th
    let r2 = 128.0 * (discrete_reinforcement_peak() / REINFORCEMENT_THRESHOLD).ln();
    let mut expected = 0;
    for dy in -15i32..=15 {
        for dx in -15i32..=15 {
            if ((dx * dx + dy * dy) as f64) <= r2 {
                expected += 1;
            }
        }
    }
    assert_eq!(m.foreground(), expected);
    let radius = (m.foreground() as f64 / std::f64::consts::PI).sqrt();
    assert!((10.0..12.5).contains(&radius), "radius {radius}");
}

#[test]
fn reinforcement_empty_and_threshold_monotone() {
    let p = KernelParams::reinforcement();
    assert_eq!(gen_reinforcement(&ann(20, 20, &[]), &p, 0.001).unwrap().foreground(), 0);
    let a = ann(64, 64, &[(5.0, 5.0), (40.0, 30.0), (44.0, 33.0)]);
    let mut last = usize::MAX;
    for th in [1e-5, 1e-4, 1e-3, 2e-3, 5e-3] {
        let m = gen_reinforcement(&a, &p, th).unwrap();
        assert!(m.foreground() <= last);
        last = m.foreground();
    }
    assert!(gen_reinforcement(&a, &p, 0.0).is_err());
}

#[test]
fn downsample_examples() {
    let mut values = vec![0.0; 16];
    values[5] = 1.0;
    let m = DensityMap {
        height: 4,
        width: 4,
        values,
        sigma: 4.0,
        window: 15,
        adaptive: false,
    };
    assert_eq!(m.downsample_2x().unwrap().values, vec![1.0, 0.0, 0.0, 0.0]);
    let odd = DensityMap { height: 3, width: 4, values: vec![0.0; 12], ..m.clone() };
    assert!(odd.downsample_2x().is_err());
}

#[test]
fn sum_pool_exact_on_dyadic_values() {
    // Dyadic rationals with bounded exponents add without rounding.
    let values: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 / 64.0).collect();
    let pooled = sum_pool_2x(8, 8, &values).unwrap();
    assert_eq!(count_from_density(&pooled), count_from_density(&values));
}

#[test]
fn max_pool_keeps_binary() {
    let p = KernelParams::reinforcement();
    let m = gen_reinforcement(&ann(64, 48, &[(10.0, 10.0), (50.0, 40.0)]), &p, 0.001).unwrap();
    let d = m.downsample_2x().unwrap();
    assert_eq!((d.height, d.width), (24, 32));
    assert!(d.values.iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(d.foreground() > 0);
}

#[test]
fn counts_survive_half_resolution() {
    let pts: Vec<(f64, f64)> = (0..37).map(|i| ((i * 13 % 61) as f64 + 0.3, (i * 7 % 47) as f64 + 0.6)).collect();
    let m = gen_density_fixed(&ann(64, 48, &pts), &KernelParams::default());
    assert!((m.count() - 37.0).abs() < 1e-3);
    assert!((m.downsample_2x().unwrap().count() - 37.0).abs() < 1e-3);
    assert_eq!(count_from_density(&[0.0; 9]), 0.0);
}

#[test]
fn params_validation() {
    assert!(KernelParams::default().validate().is_ok());
    assert!(KernelParams { window: 14, ..Default::default() }.validate().is_err());
    assert!(KernelParams { window: 1, ..Default::default() }.validate().is_err());
    assert!(KernelParams { sigma: 0.0, ..Default::default() }.validate().is_err());
    assert!(KernelParams { k_neighbors: 0, ..Default::default() }.validate().is_err());
}
