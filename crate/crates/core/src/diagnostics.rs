//! Sample-level audits of the quantities the recovery guarantees depend on.
//!
//! Leverage statistics measure how much weighted influence the labelled
//! outliers can exert. Every value is carried in the log domain as well,
//! because well-chosen weights push the linear values to exact zero.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datagen::{cholesky_with_floor, LabeledDataset};
use crate::features::{FeatureMap, ParamVector};
use crate::model::{fisher_info, submatrix, ObjectiveSpec, PrecomputedFeatures};
use crate::weights::WeightFn;
use crate::{Error, Real, Result};

/// Relative pivot floor below which `Î_SS` counts as singular.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// The parameter set `Θ` as a coordinate-wise interval box.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBox {
    lo: Array1<f64>,
    hi: Array1<f64>,
}

impl ThetaBox {
    pub fn new(lo: Array1<f64>, hi: Array1<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "theta box upper bounds",
                expected: lo.len(),
                found: hi.len(),
            });
        }
        for (&l, &h) in lo.iter().zip(hi.iter()) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidParameter(format!("invalid theta box interval [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^d`.
    pub fn uniform(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(Array1::from_elem(d, lo), Array1::from_elem(d, hi))
    }

    /// The default box `[-1, 1]^d`.
    pub fn unit(d: usize) -> Self {
        Self {
            lo: Array1::from_elem(d, -1.0),
            hi: Array1::from_elem(d, 1.0),
        }
    }

    /// The single point `{θ}`.
    pub fn point(theta: &ParamVector<f64>) -> Self {
        Self {
            lo: theta.values().clone(),
            hi: theta.values().clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Array1<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &Array1<f64> {
        &self.hi
    }

    /// `max_{θ∈Θ} θᵀh`, attained coordinate-wise at a box corner.
    pub fn max_linear(&self, h: &[f64]) -> f64 {
        h.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .map(|(&ht, (&l, &u))| (l * ht).max(u * ht))
            .sum()
    }
}

/// Outlier leverage statistics `ν₁, ..., ν₆`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageReport {
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    pub nu5: f64,
    pub nu6: f64,
    pub nu: f64,
    /// `max(ε_p, ε_q)` from the label counts.
    pub eps: f64,
    pub k: usize,
    /// `k^{3/2} ε ν`.
    pub k_eps_nu: f64,
    pub log_nu1: f64,
    pub log_nu2: f64,
    pub log_nu3: f64,
    pub log_nu4: f64,
    pub log_nu5: f64,
    pub log_nu6: f64,
    pub log_nu: f64,
    pub log_k_eps_nu: f64,
    pub n_outlier_reference: usize,
    pub n_outlier_target: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn log_abs_max(h: &[f64]) -> f64 {
    h.iter().map(|v| v.abs().ln()).fold(f64::NEG_INFINITY, f64::max)
}

fn outlier_rows(ds: &LabeledDataset) -> impl Iterator<Item = Vec<f64>> + '_ {
    ds.outliers().map(|r| r.to_vec())
}

/// Computes `ν₁, ..., ν₆` over the labelled outliers of both sides.
///
/// `ν₁, ν₃` range over reference outliers, the rest over target outliers
/// with the maximum over `Θ` taken exactly on the box. `support` is the
/// active set used by `ν₆` and for `k`.
pub fn leverage_stats(
    reference: &LabeledDataset,
    target: &LabeledDataset,
    weight: &WeightFn<f64>,
    map: &FeatureMap,
    theta_box: &ThetaBox,
    support: &[usize],
) -> Result<LeverageReport> {
    let d = map.dim();
    for ds in [reference, target] {
        if ds.dim() != map.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "leverage input",
                expected: map.input_dim(),
                found: ds.dim(),
            });
        }
    }
    if theta_box.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "theta box",
            expected: d,
            found: theta_box.dim(),
        });
    }
    if let Some(&t) = support.iter().find(|&&t| t >= d) {
        return Err(Error::InvalidParameter(format!("support index {t} out of range for d = {d}")));
    }

    let ninf = f64::NEG_INFINITY;
    let mut log_nu = [ninf; 6];
    let mut h = vec![0.0; d];
    for x in outlier_rows(reference) {
        map.eval_into(&x, &mut h)?;
        let lw = weight.log_eval(&x)?;
        log_nu[0] = log_nu[0].max(lw);
        log_nu[2] = log_nu[2].max(lw + log_abs_max(&h));
    }
    for x in outlier_rows(target) {
        map.eval_into(&x, &mut h)?;
        let b = theta_box.max_linear(&h) + weight.log_eval(&x)?;
        let lh = log_abs_max(&h);
        let ls = support.iter().map(|&t| h[t].abs().ln()).fold(ninf, f64::max);
        log_nu[1] = log_nu[1].max(b);
        log_nu[3] = log_nu[3].max(b + lh);
        log_nu[4] = log_nu[4].max(b + 2.0 * lh);
        log_nu[5] = log_nu[5].max(b + lh + 2.0 * ls);
    }
    // -inf + inf can appear only if a feature is both zero and unbounded
    for v in log_nu.iter_mut() {
        if v.is_nan() {
            *v = ninf;
        }
    }

    let frac = |ds: &LabeledDataset| {
        if ds.is_empty() {
            0.0
        } else {
            ds.n_outlier() as f64 / ds.len() as f64
        }
    };
    let eps = frac(reference).max(frac(target));
    let k = support.len();
    let lmax = log_nu.iter().copied().fold(ninf, f64::max);
    let log_k_eps_nu = 1.5 * (k as f64).ln() + eps.ln() + lmax;
    let log_k_eps_nu = if log_k_eps_nu.is_nan() { ninf } else { log_k_eps_nu };

    let unlabeled = !reference.has_labels() || !target.has_labels();
    let (n_p, n_q) = (reference.n_outlier(), target.n_outlier());
    let note = if unlabeled {
        Some("samples lack inlier/outlier labels; only rows labelled outlier were used".to_string())
    } else if n_p + n_q == 0 {
        Some("no labelled outliers".to_string())
    } else {
        None
    };
    Ok(LeverageReport {
        nu1: log_nu[0].exp(),
        nu2: log_nu[1].exp(),
        nu3: log_nu[2].exp(),
        nu4: log_nu[3].exp(),
        nu5: log_nu[4].exp(),
        nu6: log_nu[5].exp(),
        nu: lmax.exp(),
        eps,
        k,
        k_eps_nu: log_k_eps_nu.exp(),
        log_nu1: log_nu[0],
        log_nu2: log_nu[1],
        log_nu3: log_nu[2],
        log_nu4: log_nu[3],
        log_nu5: log_nu[4],
        log_nu6: log_nu[5],
        log_nu: lmax,
        log_k_eps_nu,
        n_outlier_reference: n_p,
        n_outlier_target: n_q,
        note,
    })
}

/// Sample-level surrogates of the curvature, incoherence and boundedness
/// conditions, evaluated at a given parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub d: usize,
    pub k: usize,
    /// Smallest eigenvalue of `Î_SS`.
    #[serde(rename = "min_eig_SS")]
    pub min_eig_ss: f64,
    /// `‖Î_{S^cS} Î_SS⁻¹‖_∞`, `None` when `Î_SS` is numerically singular.
    pub incoherence: Option<f64>,
    /// `1 - incoherence`.
    pub alpha_implied: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incoherence_note: Option<String>,
    /// `max exp(θᵀh(x)) w(x)` over both samples.
    pub max_weighted_ratio: f64,
    pub log_max_weighted_ratio: f64,
    pub kappa_hat: f64,
    /// Third-order smoothness is not materialized.
    pub smoothness: String,
}

/// `‖Y‖_∞`: the maximum absolute row sum.
pub fn inf_norm(y: ArrayView2<f64>) -> f64 {
    y.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Solves `A Y = B` for symmetric positive-definite `A`, or `None` when a
/// Cholesky pivot falls below `PIVOT_FLOOR` times the largest diagonal entry.
pub fn spd_solve(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let scale = a.diag().iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let l = cholesky_with_floor(a, PIVOT_FLOOR * scale.max(f64::MIN_POSITIVE)).ok()?;
    let mut y = b.to_owned();
    for mut col in y.columns_mut() {
        for i in 0..n {
            let mut v = col[i];
            for k in 0..i {
                v -= l[(i, k)] * col[k];
            }
            col[i] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = col[i];
            for k in (i + 1)..n {
                v -= l[(k, i)] * col[k];
            }
            col[i] = v / l[(i, i)];
        }
    }
    Some(y)
}

/// Incoherence `‖I_{S^cS} I_SS⁻¹‖_∞` of a symmetric matrix, via
/// `I_SS Y = I_{SS^c}` and the row sums of `Yᵀ`.
pub fn incoherence(info: ArrayView2<f64>, support: &[usize]) -> Option<f64> {
    let d = info.nrows();
    let inactive: Vec<usize> = (0..d).filter(|t| !support.contains(t)).collect();
    if inactive.is_empty() {
        return Some(0.0);
    }
    let iss = submatrix(info, support, support);
    let isc = submatrix(info, support, &inactive);
    let y = spd_solve(iss.view(), isc.view())?;
    Some(inf_norm(y.t()))
}

pub fn assumption_audit(
    spec: &ObjectiveSpec<f64>,
    features: &PrecomputedFeatures<f64>,
    theta_star: &ParamVector<f64>,
    support: &[usize],
) -> Result<AssumptionReport> {
    let d = spec.dim();
    if support.is_empty() {
        return Err(Error::InvalidParameter("assumption audit needs a non-empty support".into()));
    }
    let mut sorted = support.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != support.len() || sorted.last().is_some_and(|&t| t >= d) {
        return Err(Error::InvalidParameter(format!(
            "support must hold distinct indices below d = {d}"
        )));
    }
    let info = fisher_info(spec, features, theta_star)?;
    let iss = submatrix(info.view(), &sorted, &sorted);
    let min_eig_ss = min_eigenvalue(iss.view());
    let inc = incoherence(info.view(), &sorted);
    let incoherence_note = inc
        .is_none()
        .then(|| format!("I_SS is numerically singular (Cholesky pivot below {PIVOT_FLOOR:e} relative)"));

    let th = theta_star.values().view();
    let lmax = features
        .reference_scores(th)
        .iter()
        .chain(features.target_scores(th).iter())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AssumptionReport {
        d,
        k: sorted.len(),
        min_eig_ss,
        incoherence: inc,
        alpha_implied: inc.map(|v| 1.0 - v),
        incoherence_note,
        max_weighted_ratio: lmax.exp(),
        log_max_weighted_ratio: lmax,
        kappa_hat: features.kappa_hat(),
        smoothness: "not-audited".into(),
    })
}

/// Structural comparison of an estimate with the true support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub exact_recovery: bool,
    /// Exact recovery with matching signs; needs `θ*`.
    pub signed_recovery: Option<bool>,
    /// `‖θ̂ - θ*‖₂`; needs `θ*`.
    pub l2_error: Option<f64>,
}

pub fn support_metrics<T: Real>(
    theta_hat: &ParamVector<T>,
    true_support: &[usize],
    theta_star: Option<&ParamVector<T>>,
) -> Result<SupportMetrics> {
    let mut truth = true_support.to_vec();
    truth.sort_unstable();
    truth.dedup();
    let exact = theta_hat.support() == truth;
    let (signed, l2) = match theta_star {
        None => (None, None),
        Some(star) => {
            if star.len() != theta_hat.len() {
                return Err(Error::DimensionMismatch {
                    what: "true parameter",
                    expected: theta_hat.len(),
                    found: star.len(),
                });
            }
            let (a, b) = (theta_hat.values(), star.values());
            let signs = truth.iter().all(|&t| a[t].signum() == b[t].signum() && b[t] != T::zero());
            let l2: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(&x, &y)| {
                    let e = (x - y).to_f64_lossy();
                    e * e
                })
                .sum::<f64>()
                .sqrt();
            (Some(exact && signs), Some(l2))
        }
    };
    Ok(SupportMetrics {
        exact_recovery: exact,
        signed_recovery: signed,
        l2_error: l2,
    })
}
