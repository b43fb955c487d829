use fedsift::svdd::{client_distances, update_radii, DistanceReport, SvddState};
use fedsift::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ten_distances_at_nu_point_four() {
    let report = DistanceReport {
        per_class: vec![(1..=10).map(f64::from).collect()],
    };
    assert_eq!(update_radii(&report, 0.4, &[0.0]), vec![6.0]);
}

#[test]
fn exceedance_stays_within_nu() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..100 {
        let k = rng.random_range(1..5);
        let nu = rng.random_range(0.05..0.95);
        let per_class: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let n = rng.random_range(1..60);
                (0..n).map(|_| rng.random_range(0.0..10.0)).collect()
            })
            .collect();
        let report = DistanceReport { per_class };
        let radii = update_radii(&report, nu, &vec![0.0; k]);
        for (c, d) in report.per_class.iter().enumerate() {
            let n = d.len() as f64;
            let outside = d.iter().filter(|&&x| x > radii[c]).count() as f64 / n;
            assert!(
                outside <= nu + 1.0 / n,
                "trial {trial} class {c}: {outside} > {nu} + 1/{n}"
            );
        }
    }
}

#[test]
fn merge_order_does_not_change_radii() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let centroids = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 2.0]];
    let mut reports: Vec<DistanceReport<f64>> = (0..6)
        .map(|_| {
            let n = rng.random_range(1..20);
            let z = Matrix::from_vec(
                n,
                2,
                (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let r = client_distances(&z, &y, &centroids).unwrap();
            assert_eq!(r.total(), n);
            r
        })
        .collect();
    let radii = |reports: &[DistanceReport<f64>]| {
        let mut merged = DistanceReport::empty(3);
        reports.iter().for_each(|r| merged.merge(r));
        update_radii(&merged, 0.4, &[9.0; 3])
    };
    let first = radii(&reports);
    for _ in 0..5 {
        reports.shuffle(&mut rng);
        assert_eq!(radii(&reports), first);
    }
}

#[test]
fn activation_freezes_centroids_at_target_round() {
    let z = Matrix::from_vec(4, 1, vec![0.0, 2.0, 10.0, 14.0]).unwrap();
    let y = [0, 0, 1, 1];
    let mut state = SvddState::<f64>::new(0.4, 3);
    assert!(!state.maybe_activate(2, &z, &y, 2).unwrap());
    assert!(state.maybe_activate(3, &z, &y, 2).unwrap());
    assert_eq!(state.centroids, vec![vec![1.0], vec![12.0]]);
    let moved = Matrix::from_vec(4, 1, vec![5.0; 4]).unwrap();
    state.maybe_activate(4, &moved, &y, 2).unwrap();
    assert_eq!(state.centroids, vec![vec![1.0], vec![12.0]]);
}
