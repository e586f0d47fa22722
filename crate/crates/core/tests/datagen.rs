use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_dre::datagen::{
    cholesky, contaminate, make_sparse_difference, outlier_count, total_size, DiagonalPair, GaussianSpec, Label,
    OutlierModel, Placement, Rounding,
};
use robust_dre::features::{FeatureMap, ThetaConvention};

fn placement() -> impl Strategy<Value = Placement> {
    prop_oneof![
        Just(Placement::OffDiagonalDisjoint),
        Just(Placement::Diagonal(DiagonalPair::Bounded)),
        Just(Placement::Diagonal(DiagonalPair::Unbounded)),
    ]
}

fn design_args() -> impl Strategy<Value = (usize, usize, f64, Placement, u64)> {
    (2usize..25, placement(), any::<u64>(), 0.05..0.95f64, any::<bool>()).prop_flat_map(|(m, pl, seed, mag, neg)| {
        let kmax = match pl {
            Placement::OffDiagonalDisjoint => m / 2,
            Placement::Diagonal(_) => m,
        };
        let mag = if neg { -mag } else { mag };
        (Just(m), 0..=kmax, Just(mag), Just(pl), Just(seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn designs_are_pd_and_support_consistent((m, k, mag, pl, seed) in design_args()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = make_sparse_difference(m, k, mag, pl, &mut rng).unwrap();
        prop_assert!(cholesky(design.lambda_p.view()).is_ok());
        prop_assert!(cholesky(design.lambda_q.view()).is_ok());
        prop_assert_eq!(design.support.len(), k);
        let map = FeatureMap::new(m).unwrap();
        for conv in [ThetaConvention::Direct, ThetaConvention::SumSplit] {
            let theta = map.theta_from_matrix(design.difference().view(), conv).unwrap();
            prop_assert_eq!(&theta.support(), &design.support);
        }
        match pl {
            Placement::OffDiagonalDisjoint => {
                let mut used = BTreeSet::new();
                for &t in &design.support {
                    let (i, j) = map.pair(t);
                    prop_assert!(i != j);
                    prop_assert!(used.insert(i) && used.insert(j), "pairs share an index");
                    prop_assert_eq!(design.lambda_q[(i, j)], mag);
                }
                prop_assert_eq!(&design.lambda_p, &Array2::<f64>::eye(m));
            }
            Placement::Diagonal(pair) => {
                let (lp, lq) = pair.precisions();
                for i in 0..m {
                    let active = design.support.contains(&map.index(i, i));
                    prop_assert_eq!(design.lambda_p[(i, i)], if active { lp } else { 1.0 });
                    prop_assert_eq!(design.lambda_q[(i, i)], if active { lq } else { 1.0 });
                }
            }
        }
    }

    #[test]
    fn generation_is_a_function_of_the_seed((m, k, mag, pl, seed) in design_args(), n in 1usize..30) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = make_sparse_difference(m, k, mag, pl, &mut rng).unwrap();
            let x = GaussianSpec::new(d.lambda_q.clone()).unwrap().sample(n, &mut rng);
            (d.support, x)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn contamination_keeps_counts(n_star in 1usize..200, pct in prop::sample::select(vec![0u32, 10, 20, 25, 50]), seed in any::<u64>()) {
        let eps = pct as f64 / 100.0;
        let Ok(n) = total_size(n_star, eps, Rounding::Strict) else {
            return Ok(());
        };
        let m = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = GaussianSpec::new(Array2::eye(m)).unwrap().sample(n, &mut rng);
        let outliers = OutlierModel::isotropic(m, 100.0, 1.0).unwrap();
        let ds = contaminate(clean.view(), eps, &outliers, Rounding::Strict, &mut rng).unwrap();
        prop_assert_eq!(ds.len(), n);
        prop_assert_eq!(ds.n_inlier(), n_star);
        prop_assert_eq!(ds.n_outlier(), outlier_count(eps, n, Rounding::Strict).unwrap());
        prop_assert_eq!(ds.n_inlier() + ds.n_outlier(), n);
    }
}

#[test]
fn outliers_sit_near_their_mean_and_inliers_are_kept() {
    let (m, n) = (5, 500);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clean = GaussianSpec::new(Array2::eye(m)).unwrap().sample(n, &mut rng);
    let outliers = OutlierModel::isotropic(m, 100.0, 1.0).unwrap();
    let ds = contaminate(clean.view(), 0.2, &outliers, Rounding::Strict, &mut rng).unwrap();
    assert_eq!(ds.n_outlier(), 100);
    for row in ds.outliers() {
        assert!(row.iter().all(|v| (90.0..=110.0).contains(v)));
    }
    // inlier rows are the first n - εn clean rows, in some order
    let mut kept: Vec<Vec<u64>> = ds
        .samples
        .rows()
        .into_iter()
        .zip(&ds.labels)
        .filter(|(_, l)| **l == Label::Inlier)
        .map(|(r, _)| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut expected: Vec<Vec<u64>> = clean
        .rows()
        .into_iter()
        .take(400)
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    kept.sort();
    expected.sort();
    assert_eq!(kept, expected);
}

#[test]
fn rounding_mode_is_explicit() {
    assert!(outlier_count(0.2, 101, Rounding::Strict).is_err());
    assert_eq!(outlier_count(0.2, 101, Rounding::Round).unwrap(), 20);
    assert!(total_size(1001, 0.2, Rounding::Strict).is_err());
    assert_eq!(total_size(1000, 0.2, Rounding::Strict).unwrap(), 1250);
}
