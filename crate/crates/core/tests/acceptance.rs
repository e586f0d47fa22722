//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and fails
//! on `FAIL`.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_dre::datagen::{Label, LabeledDataset};
use robust_dre::diagnostics::{assumption_audit, leverage_stats, ThetaBox};
use robust_dre::experiments::{run_grid, write_results_csv, CellResult, ExperimentConfig, GridOutcome};
use robust_dre::features::{FeatureMap, ParamVector};
use robust_dre::model::{fisher_info, gradient, hessian, objective, Method, ObjectiveSpec, PrecomputedFeatures};
use robust_dre::optim::{fit, SolverConfig};
use robust_dre::weights::WeightFn;

fn verdict(id: u32, name: &str, pass: bool, detail: &str, start: Instant) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id} [{name}]: {status} ({detail}; {:.1}s)",
        start.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn normal(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random small instance over both methods and both weight kinds.
fn random_instance(rng: &mut ChaCha8Rng, i: usize) -> (ObjectiveSpec<f64>, PrecomputedFeatures<f64>, ParamVector<f64>) {
    let m = rng.random_range(1..=5);
    let map = FeatureMap::new(m).unwrap();
    let n_p = rng.random_range(2..=50);
    let n_q = rng.random_range(2..=50);
    let p = normal(rng, n_p, m, 1.0);
    let q = normal(rng, n_q, m, 1.2);
    let spec = match i % 3 {
        0 => ObjectiveSpec::conventional(map.clone()),
        1 => ObjectiveSpec::weighted(WeightFn::quartic_decay_for_dim(m), map.clone()),
        _ => ObjectiveSpec::weighted(WeightFn::constant(rng.random_range(0.2..2.0)).unwrap(), map.clone()),
    };
    let f = PrecomputedFeatures::new(&spec, p.view(), q.view()).unwrap();
    let theta: Vec<f64> = (0..map.dim()).map(|_| rng.random_range(-0.5..=0.5)).collect();
    (spec, f, ParamVector::from(theta))
}

fn shifted(theta: &ParamVector<f64>, t: usize, h: f64) -> ParamVector<f64> {
    let mut v = theta.values().clone();
    v[t] += h;
    ParamVector::new(v)
}

#[test]
fn criterion_1_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let step = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (spec, f, theta) = random_instance(&mut rng, i);
        let g = gradient(&spec, &f, &theta).unwrap();
        for t in 0..theta.len() {
            let up = objective(&spec, &f, &shifted(&theta, t, step)).unwrap();
            let dn = objective(&spec, &f, &shifted(&theta, t, -step)).unwrap();
            worst = worst.max((g[t] - (up - dn) / (2.0 * step)).abs());
        }
    }
    verdict(1, "gradient", worst <= 1e-6, &format!("max abs error {worst:.3e} <= 1e-6 over 50 instances"), start);
}

#[test]
fn criterion_2_hessian_matches_gradient_differences_and_is_psd() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for i in 0..50 {
        let (spec, f, theta) = random_instance(&mut rng, i);
        let h = hessian(&spec, &f, &theta).unwrap();
        let d = theta.len();
        for t in 0..d {
            let up = gradient(&spec, &f, &shifted(&theta, t, step)).unwrap();
            let dn = gradient(&spec, &f, &shifted(&theta, t, -step)).unwrap();
            for s in 0..d {
                worst = worst.max((h[(s, t)] - (up[s] - dn[s]) / (2.0 * step)).abs());
            }
        }
        let mat = DMatrix::from_fn(d, d, |a, b| h[(a, b)]);
        let e = SymmetricEigen::new(mat).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(e);
    }
    let pass = worst <= 1e-5 && min_eig >= -1e-8;
    verdict(
        2,
        "hessian",
        pass,
        &format!("max abs error {worst:.3e} <= 1e-5, min eigenvalue {min_eig:.3e} >= -1e-8"),
        start,
    );
}

#[test]
fn criterion_3_solver_beats_grid_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let lambda = 0.05;
    let grid: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_kkt = 0.0f64;
    let mut all_converged = true;
    for i in 0..20 {
        let map = FeatureMap::new(2).unwrap();
        let p = normal(&mut rng, 200, 2, 1.0);
        let scale = rng.random_range(0.8..1.3);
        let q = normal(&mut rng, 200, 2, scale);
        let spec = if i % 2 == 0 {
            ObjectiveSpec::conventional(map)
        } else {
            ObjectiveSpec::weighted(WeightFn::quartic_decay_for_dim(2), map)
        };
        let f = PrecomputedFeatures::new(&spec, p.view(), q.view()).unwrap();
        let res = fit(&spec, &f, &SolverConfig::with_lambda(lambda)).unwrap();
        all_converged &= res.converged;
        let penalized = |th: &ParamVector<f64>| {
            objective(&spec, &f, th).unwrap() + lambda * th.values().iter().map(|v| v.abs()).sum::<f64>()
        };
        let mut best = f64::INFINITY;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    best = best.min(penalized(&ParamVector::from(vec![a, b, c])));
                }
            }
        }
        worst_gap = worst_gap.max(penalized(&res.theta_hat) - best);
        let g = gradient(&spec, &f, &res.theta_hat).unwrap();
        for (t, &th) in res.theta_hat.values().iter().enumerate() {
            let r = if th != 0.0 {
                (g[t] + lambda * th.signum()).abs()
            } else {
                (g[t].abs() - lambda).max(0.0)
            };
            worst_kkt = worst_kkt.max(r);
        }
    }
    let pass = worst_gap <= 1e-6 && worst_kkt <= 1e-5 && all_converged;
    verdict(
        3,
        "solver optimality",
        pass,
        &format!("max F(fit) - grid min {worst_gap:.3e} <= 1e-6, max KKT violation {worst_kkt:.3e} <= 1e-5, all converged {all_converged}"),
        start,
    );
}

fn rate(grid: &GridOutcome, scenario: &str, method: Method, n_star: usize, eps: f64) -> f64 {
    row(grid, scenario, method, n_star, eps).success_rate
}

fn row<'a>(grid: &'a GridOutcome, scenario: &str, method: Method, n_star: usize, eps: f64) -> &'a CellResult {
    grid.cells
        .iter()
        .find(|c| c.scenario == scenario && c.method == method && c.n_star == n_star && c.eps == eps)
        .unwrap_or_else(|| panic!("missing cell {scenario} {method:?} {n_star} {eps}"))
}

fn print_grid(grid: &GridOutcome) {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &grid.cells).unwrap();
    print!("{}", String::from_utf8(buf).unwrap());
}

const N_GRID: [usize; 4] = [1000, 2000, 4000, 8000];

#[test]
fn criterion_4_robustness_trend() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        dims: vec![20],
        n_grid: N_GRID.to_vec(),
        eps: vec![0.0, 0.2],
        repetitions: 50,
        master_seed: 4,
        ..ExperimentConfig::robustness()
    };
    let grid = run_grid(&cfg, None).unwrap();
    print_grid(&grid);
    let s = "robustness";
    let (dre, wdre) = (Method::ConventionalDre, Method::WeightedDre);
    let a = N_GRID.iter().all(|&n| rate(&grid, s, dre, n, 0.2) <= 0.05);
    let lo = rate(&grid, s, wdre, 1000, 0.2);
    let hi = rate(&grid, s, wdre, 8000, 0.2);
    let b = hi - lo >= 0.3 && hi >= 0.7;
    let c = N_GRID.iter().all(|&n| {
        rate(&grid, s, dre, n, 0.0) + 0.1 >= rate(&grid, s, wdre, n, 0.0)
            && rate(&grid, s, wdre, n, 0.0) + 0.1 >= rate(&grid, s, wdre, n, 0.2)
    });
    let dre_cont: Vec<f64> = N_GRID.iter().map(|&n| rate(&grid, s, dre, n, 0.2)).collect();
    verdict(
        4,
        "robustness trend",
        a && b && c,
        &format!(
            "(a) dre/contaminated rates {dre_cont:?} <= 0.05: {a}; (b) wdre/contaminated {lo:.2} -> {hi:.2}: {b}; (c) ordering within 0.1: {c}"
        ),
        start,
    );
}

#[test]
fn criterion_5_unboundedness_trend() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        dims: vec![20],
        n_grid: N_GRID.to_vec(),
        repetitions: 50,
        master_seed: 5,
        ..ExperimentConfig::unboundedness()
    };
    let grid = run_grid(&cfg, None).unwrap();
    print_grid(&grid);
    let (b, u) = ("unboundedness-bounded", "unboundedness-unbounded");
    let dre_u = rate(&grid, u, Method::ConventionalDre, 8000, 0.0);
    let wdre_u = rate(&grid, u, Method::WeightedDre, 8000, 0.0);
    let wdre_b = rate(&grid, b, Method::WeightedDre, 8000, 0.0);
    let gap = wdre_u - dre_u >= 0.3;
    let similar = (wdre_b - wdre_u).abs() <= 0.15;
    verdict(
        5,
        "unboundedness trend",
        gap && similar,
        &format!(
            "n*=8000: dre/unbounded {dre_u:.2} vs wdre/unbounded {wdre_u:.2} (gap >= 0.3: {gap}); wdre bounded {wdre_b:.2} vs unbounded (within 0.15: {similar})"
        ),
        start,
    );
}

#[test]
fn criterion_6_error_rate_scaling() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        methods: vec![Method::WeightedDre],
        dims: vec![20],
        n_grid: N_GRID.to_vec(),
        eps: vec![0.0],
        repetitions: 30,
        master_seed: 6,
        ..ExperimentConfig::robustness()
    };
    let grid = run_grid(&cfg, None).unwrap();
    print_grid(&grid);
    let med: Vec<f64> = N_GRID
        .iter()
        .map(|&n| row(&grid, "robustness", Method::WeightedDre, n, 0.0).median_l2)
        .collect();
    let monotone = med.windows(2).all(|w| w[1] <= w[0]);
    let ratios = [med[0] / med[2], med[1] / med[3]];
    let in_band = ratios.iter().all(|r| (1.5..=2.7).contains(r));
    verdict(
        6,
        "error scaling",
        monotone && in_band,
        &format!("median l2 {med:.4?} non-increasing: {monotone}; error(n*)/error(4n*) {ratios:.3?} in [1.5, 2.7]: {in_band}"),
        start,
    );
}

#[test]
fn criterion_7_byte_identical_at_any_thread_count() {
    let start = Instant::now();
    let robust = ExperimentConfig {
        dims: vec![4, 6],
        n_grid: vec![100, 200],
        k: 2,
        eps: vec![0.0, 0.2],
        repetitions: 4,
        master_seed: 77,
        ..ExperimentConfig::robustness()
    };
    let unbounded = ExperimentConfig {
        dims: vec![4],
        n_grid: vec![100, 200],
        k: 2,
        repetitions: 4,
        master_seed: 78,
        ..ExperimentConfig::unboundedness()
    };
    let mut identical = true;
    let mut rows = 0;
    for cfg in [robust, unbounded] {
        let bytes: Vec<Vec<u8>> = [1, 4, 8]
            .iter()
            .map(|&t| {
                let g = run_grid(&cfg, Some(t)).unwrap();
                let mut buf = Vec::new();
                g.write_csv(&mut buf).unwrap();
                buf
            })
            .collect();
        rows += bytes[0].iter().filter(|&&b| b == b'\n').count() - 1;
        identical &= bytes.windows(2).all(|w| w[0] == w[1]);
    }
    verdict(7, "determinism", identical, &format!("{rows} rows byte-identical at 1, 4 and 8 threads: {identical}"), start);
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Naive oracle for the leverage statistics: all box corners, linear domain.
fn naive_leverage(
    p: &LabeledDataset,
    q: &LabeledDataset,
    w: &WeightFn<f64>,
    map: &FeatureMap,
    lo: f64,
    hi: f64,
    support: &[usize],
) -> [f64; 6] {
    let d = map.dim();
    let mut nu = [0.0f64; 6];
    for x in p.outliers() {
        let x = x.to_vec();
        let h = map.eval(&x).unwrap();
        let wx = w.eval(&x).unwrap();
        nu[0] = nu[0].max(wx);
        for t in 0..d {
            nu[2] = nu[2].max(wx * h[t].abs());
        }
    }
    for x in q.outliers() {
        let x = x.to_vec();
        let h = map.eval(&x).unwrap();
        let wx = w.eval(&x).unwrap();
        for corner in 0..(1usize << d) {
            let lin: f64 = (0..d).map(|t| if corner >> t & 1 == 1 { hi } else { lo } * h[t]).sum();
            let r = lin.exp() * wx;
            nu[1] = nu[1].max(r);
            for t in 0..d {
                nu[3] = nu[3].max(r * h[t].abs());
                for s in 0..d {
                    nu[4] = nu[4].max(r * (h[t] * h[s]).abs());
                    for &a in support {
                        for &b in support {
                            nu[5] = nu[5].max(r * (h[t] * h[a] * h[b]).abs());
                        }
                    }
                }
            }
        }
    }
    nu
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
        for j in 0..n {
            m.swap((c, j), (p, j));
            inv.swap((c, j), (p, j));
        }
        let piv = m[(c, c)];
        for j in 0..n {
            m[(c, j)] /= piv;
            inv[(c, j)] /= piv;
        }
        for i in 0..n {
            if i != c {
                let f = m[(i, c)];
                for j in 0..n {
                    m[(i, j)] -= f * m[(c, j)];
                    inv[(i, j)] -= f * inv[(c, j)];
                }
            }
        }
    }
    inv
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

fn labeled_mix(rng: &mut ChaCha8Rng, n: usize, m: usize, out_frac: f64, shift: f64) -> LabeledDataset {
    let mut x = normal(rng, n, m, 1.0);
    let mut labels = Vec::with_capacity(n);
    for mut r in x.rows_mut() {
        if rng.random::<f64>() < out_frac {
            r.mapv_inplace(|v| v + shift);
            labels.push(Label::Outlier);
        } else {
            labels.push(Label::Inlier);
        }
    }
    LabeledDataset::new(x, labels).unwrap()
}

#[test]
fn criterion_8_diagnostics_match_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_nu = 0.0f64;
    let mut worst_audit = 0.0f64;
    for i in 0..12 {
        let m = 2 + i % 3;
        let map = FeatureMap::new(m).unwrap();
        let d = map.dim();
        let (n_p, n_q) = (rng.random_range(20..=100), rng.random_range(20..=100));
        let p = labeled_mix(&mut rng, n_p, m, 0.2, 1.5);
        let q = labeled_mix(&mut rng, n_q, m, 0.2, 1.5);
        let k = rng.random_range(1..=d.min(5));
        let mut idx: Vec<usize> = (0..d).collect();
        for j in 0..k {
            let r = rng.random_range(j..d);
            idx.swap(j, r);
        }
        let mut support = idx[..k].to_vec();
        support.sort_unstable();
        let w = if i % 2 == 0 { WeightFn::quartic_decay_for_dim(m) } else { WeightFn::unit() };
        let (lo, hi) = (-0.3, 0.2);
        let report = leverage_stats(&p, &q, &w, &map, &ThetaBox::uniform(d, lo, hi).unwrap(), &support).unwrap();
        let fast = [report.nu1, report.nu2, report.nu3, report.nu4, report.nu5, report.nu6];
        let slow = naive_leverage(&p, &q, &w, &map, lo, hi, &support);
        for (a, b) in fast.iter().zip(&slow) {
            worst_nu = worst_nu.max(rel_err(*a, *b));
        }
        worst_nu = worst_nu.max(rel_err(report.nu, slow.iter().copied().fold(0.0, f64::max)));

        let spec = if i % 2 == 0 {
            ObjectiveSpec::weighted(w, map.clone())
        } else {
            ObjectiveSpec::conventional(map.clone())
        };
        let f = PrecomputedFeatures::new(&spec, p.samples.view(), q.samples.view()).unwrap();
        let theta: Vec<f64> = (0..d).map(|t| if support.contains(&t) { rng.random_range(-0.2..0.2) } else { 0.0 }).collect();
        let theta = ParamVector::from(theta);
        let audit = assumption_audit(&spec, &f, &theta, &support).unwrap();

        let info = fisher_info(&spec, &f, &theta).unwrap();
        let inactive: Vec<usize> = (0..d).filter(|t| !support.contains(t)).collect();
        let iss = Array2::from_shape_fn((k, k), |(a, b)| info[(support[a], support[b])]);
        let isc = Array2::from_shape_fn((inactive.len(), k), |(a, b)| info[(inactive[a], support[b])]);
        let prod = isc.dot(&invert(&iss));
        let inc = prod
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let min_eig = jacobi_eigenvalues(&iss).into_iter().fold(f64::INFINITY, f64::min);
        let mut max_ratio = 0.0f64;
        let mut w_sum = 0.0;
        for x in p.samples.rows() {
            let x = x.to_vec();
            let wx = spec.weight().eval(&x).unwrap();
            w_sum += wx;
            max_ratio = max_ratio.max(theta.dot(&map.eval(&x).unwrap()).exp() * wx);
        }
        for x in q.samples.rows() {
            let x = x.to_vec();
            let wx = spec.weight().eval(&x).unwrap();
            max_ratio = max_ratio.max(theta.dot(&map.eval(&x).unwrap()).exp() * wx);
        }
        let kappa = w_sum / p.len() as f64;
        for (a, b) in [
            (audit.incoherence.unwrap(), inc),
            (audit.min_eig_ss, min_eig),
            (audit.max_weighted_ratio, max_ratio),
            (audit.kappa_hat, kappa),
            (audit.alpha_implied.unwrap(), 1.0 - inc),
        ] {
            worst_audit = worst_audit.max(rel_err(a, b));
        }
    }
    let pass = worst_nu <= 1e-8 && worst_audit <= 1e-8;
    verdict(
        8,
        "diagnostics oracles",
        pass,
        &format!("max rel error: leverage {worst_nu:.3e}, audit {worst_audit:.3e} (<= 1e-8)"),
        start,
    );
}
