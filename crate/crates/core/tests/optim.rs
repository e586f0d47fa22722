use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robust_dre::experiments::{run_grid, ExperimentConfig};
use robust_dre::features::{FeatureMap, ParamVector};
use robust_dre::model::{gradient, objective, Method, ObjectiveSpec, PrecomputedFeatures};
use robust_dre::optim::{fit, kkt_residual, l1_norm, SolverConfig};
use robust_dre::weights::WeightFn;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, m: usize, sd: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |(_, j)| sd[j] * rng.sample::<f64, _>(StandardNormal))
}

fn penalized(spec: &ObjectiveSpec<f64>, f: &PrecomputedFeatures<f64>, th: &ParamVector<f64>, lambda: f64) -> f64 {
    objective(spec, f, th).unwrap() + lambda * l1_norm(th.values().view())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_are_monotone_kkt_and_structurally_sparse(seed in any::<u64>(), lambda in 0.005..0.3f64, m in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sd = vec![1.0; m];
        sd[0] = 1.4;
        let p = gaussian(&mut rng, 120, m, &sd);
        let q = gaussian(&mut rng, 120, m, &vec![1.0; m]);
        let spec = ObjectiveSpec::weighted(WeightFn::quartic_decay_for_dim(m), FeatureMap::new(m).unwrap());
        let f = PrecomputedFeatures::new(&spec, p.view(), q.view()).unwrap();
        let res = fit(&spec, &f, &SolverConfig::with_lambda(lambda)).unwrap();
        prop_assert!(res.converged);
        for w in res.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        let g = gradient(&spec, &f, &res.theta_hat).unwrap();
        prop_assert!(kkt_residual(res.theta_hat.values().view(), g.view(), lambda) <= 1e-5);
        for (&th, &gt) in res.theta_hat.values().iter().zip(g.iter()) {
            if th == 0.0 {
                prop_assert!(th.to_bits() == 0 || th.to_bits() == (-0.0f64).to_bits());
                prop_assert!(gt.abs() <= lambda + 1e-5);
            } else {
                // a nonzero coordinate sits on the subgradient boundary
                prop_assert!((gt + lambda * th.signum()).abs() <= 1e-5);
            }
        }
        let zero = ParamVector::zeros(spec.dim());
        prop_assert!(res.objective() <= penalized(&spec, &f, &zero, lambda) + 1e-12);
        prop_assert!((res.objective() - penalized(&spec, &f, &res.theta_hat, lambda)).abs() <= 1e-10);
    }
}

// A constant weight of amplitude 2 doubles the smooth loss exactly.
#[test]
fn doubling_loss_and_lambda_keeps_argmin_against_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = 2;
    let p = gaussian(&mut rng, 200, m, &[1.3, 0.9]);
    let q = gaussian(&mut rng, 200, m, &[1.0, 1.0]);
    let map = FeatureMap::new(m).unwrap();
    let lambda = 0.05;
    let one = ObjectiveSpec::weighted(WeightFn::constant(1.0).unwrap(), map.clone());
    let two = ObjectiveSpec::weighted(WeightFn::constant(2.0).unwrap(), map);
    let f1 = PrecomputedFeatures::new(&one, p.view(), q.view()).unwrap();
    let f2 = PrecomputedFeatures::new(&two, p.view(), q.view()).unwrap();
    let r1 = fit(&one, &f1, &SolverConfig::with_lambda(lambda)).unwrap();
    let r2 = fit(&two, &f2, &SolverConfig::with_lambda(2.0 * lambda)).unwrap();
    assert!(r1.converged && r2.converged);
    for (a, b) in r1.theta_hat.values().iter().zip(r2.theta_hat.values().iter()) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
    assert_eq!(r1.theta_hat.support(), r2.theta_hat.support());

    let mut best1 = f64::INFINITY;
    let mut best2 = f64::INFINITY;
    let grid: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                let th = ParamVector::new(Array1::from(vec![a, b, c]));
                best1 = best1.min(penalized(&one, &f1, &th, lambda));
                best2 = best2.min(penalized(&two, &f2, &th, 2.0 * lambda));
            }
        }
    }
    assert!(r1.objective() <= best1 + 1e-6);
    assert!(r2.objective() <= best2 + 1e-6);
}

// Same loss, but halving the amplitude at fixed lambda shrinks the support.
#[test]
fn smaller_amplitude_acts_as_stronger_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = 4;
    let p = gaussian(&mut rng, 300, m, &[1.5, 1.0, 1.0, 1.0]);
    let q = gaussian(&mut rng, 300, m, &[1.0; 4]);
    let map = FeatureMap::new(m).unwrap();
    let l1_at = |amp: f64| {
        let spec = ObjectiveSpec::weighted(WeightFn::quartic_decay(20.0 * m as f64, amp).unwrap(), map.clone());
        let f = PrecomputedFeatures::new(&spec, p.view(), q.view()).unwrap();
        let r = fit(&spec, &f, &SolverConfig::with_lambda(0.02)).unwrap();
        assert!(r.converged);
        l1_norm(r.theta_hat.values().view())
    };
    assert!(l1_at(0.5) < l1_at(1.0));
}

#[test]
fn clean_error_shrinks_with_sample_size() {
    let cfg = ExperimentConfig {
        methods: vec![Method::ConventionalDre, Method::WeightedDre],
        dims: vec![6],
        n_grid: vec![1000, 2000, 4000, 8000],
        k: 2,
        eps: vec![0.0],
        repetitions: 30,
        master_seed: 17,
        ..ExperimentConfig::robustness()
    };
    let grid = run_grid(&cfg, None).unwrap();
    for method in [Method::ConventionalDre, Method::WeightedDre] {
        let l2: Vec<f64> = grid
            .cells
            .iter()
            .filter(|c| c.method == method)
            .map(|c| c.median_l2)
            .collect();
        assert_eq!(l2.len(), 4);
        for w in l2.windows(2) {
            assert!(w[1] < w[0], "{method:?}: {l2:?}");
        }
    }
}
