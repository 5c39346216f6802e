//! K-means against exhaustive 2-partition enumeration on small instances.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use velostat::cluster::{fit_points, Dataset, KmeansConfig};

/// Global minimum of the k = 2 objective over every non-trivial bipartition.
fn brute_force_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dims = points[0].len();
    let mut best = f64::INFINITY;
    // Fix point 0 in the first block to skip mirrored partitions.
    for mask in 0u32..(1 << (n - 1)) {
        let in_second = |i: usize| i > 0 && (mask >> (i - 1)) & 1 == 1;
        let mut cost = 0.0;
        let mut nonempty = true;
        for block in [false, true] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| in_second(i) == block).map(|i| &points[i]).collect();
            if members.is_empty() {
                nonempty = false;
                break;
            }
            for d in 0..dims {
                let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>();
            }
        }
        if nonempty {
            best = best.min(cost);
        }
    }
    best
}

fn instance(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(2..=8);
    let dims = rng.random_range(1..=2);
    (0..n).map(|_| (0..dims).map(|_| rng.random_range(-10.0..10.0)).collect()).collect()
}

#[test]
fn brute_force_oracle_on_hand_instances() {
    assert_eq!(brute_force_two_means(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]), 1.0);
    assert_eq!(brute_force_two_means(&[vec![0.0], vec![2.0], vec![4.0]]), 2.0);
}

#[test]
fn twenty_restarts_reach_the_global_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2016);
    for case in 0..300 {
        let points = instance(&mut rng);
        let optimum = brute_force_two_means(&points);
        let config = KmeansConfig::new(2).with_seed(case).with_restarts(20);
        let (model, traces) = fit_points(points.clone(), &config).unwrap();
        assert!(
            (model.inertia - optimum).abs() <= 1e-9,
            "case {case}: inertia {} vs optimum {optimum} for {points:?}",
            model.inertia
        );
        let data = Dataset::from_points(points).unwrap();
        assert!((model.recompute_inertia(&data) - model.inertia).abs() <= 1e-9);
        for t in traces {
            assert!(t.inertia_history.windows(2).all(|w| w[1] <= w[0]), "case {case}: {:?}", t.inertia_history);
        }
    }
}

#[test]
fn permuting_inputs_keeps_the_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let points = instance(&mut rng);
        let config = KmeansConfig::new(2).with_seed(case);
        let (a, _) = fit_points(points.clone(), &config).unwrap();
        let mut perm: Vec<usize> = (0..points.len()).collect();
        perm.reverse();
        perm.rotate_left(case as usize % points.len());
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let (b, _) = fit_points(shuffled, &config).unwrap();
        assert_eq!(a.inertia, b.inertia);
        // b.assignments[j] labels points[perm[j]].
        for (j, &i) in perm.iter().enumerate() {
            for (l, &m) in perm.iter().enumerate() {
                assert_eq!(a.assignments[i] == a.assignments[m], b.assignments[j] == b.assignments[l]);
            }
        }
    }
}

#[test]
fn identical_config_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.random_range(0.0..30.0)).collect()).collect();
    let config = KmeansConfig::new(4).with_seed(77);
    let (a, _) = fit_points(points.clone(), &config).unwrap();
    let (b, _) = fit_points(points, &config).unwrap();
    assert_eq!(a.to_text(), b.to_text());
}
