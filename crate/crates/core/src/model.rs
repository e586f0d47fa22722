//! Conventional and weighted UKL objectives with analytic derivatives.
//!
//! With reference samples `x^p`, target samples `x^q`, weight `w` and scores
//! `a_n = θᵀh(x^q_n) + log w(x^q_n)`:
//!
//! ```text
//! κ̂    = Ê_p[w]
//! L(θ) = -θᵀ Ê_p[h w] + κ̂ log Ê_q[exp(θᵀh) w]
//! ∇L   = -Ê_p[h w] + κ̂ Σ_n s_n h(x^q_n),        s = softmax(a)
//! ∇²L  =  κ̂ Σ_n s_n (h_n - μ)(h_n - μ)ᵀ,         μ = Σ_n s_n h_n
//! ```
//!
//! Conventional DRE is the special case `w ≡ 1`, where `κ̂ = 1`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::features::{FeatureMap, ParamVector};
use crate::weights::WeightFn;
use crate::{Error, Real, Result};

/// Default upper bound on `d` for materializing `d x d` matrices.
pub const DEFAULT_HESSIAN_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Conventional DRE (`w ≡ 1`).
    #[serde(rename = "dre")]
    ConventionalDre,
    /// Weighted DRE.
    #[serde(rename = "wdre")]
    WeightedDre,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ConventionalDre => "dre",
            Method::WeightedDre => "wdre",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dre" => Ok(Method::ConventionalDre),
            "wdre" => Ok(Method::WeightedDre),
            other => Err(Error::InvalidParameter(format!(
                "unknown method `{other}` (expected dre or wdre)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveSpec<T> {
    method: Method,
    weight: WeightFn<T>,
    feature_map: FeatureMap,
    hessian_limit: usize,
}

impl<T: Real> ObjectiveSpec<T> {
    /// Builds a spec; conventional DRE ignores `weight` and uses `w ≡ 1`.
    pub fn new(method: Method, weight: WeightFn<T>, feature_map: FeatureMap) -> Self {
        let weight = match method {
            Method::ConventionalDre => WeightFn::unit(),
            Method::WeightedDre => weight,
        };
        Self {
            method,
            weight,
            feature_map,
            hessian_limit: DEFAULT_HESSIAN_LIMIT,
        }
    }

    pub fn conventional(feature_map: FeatureMap) -> Self {
        Self::new(Method::ConventionalDre, WeightFn::unit(), feature_map)
    }

    pub fn weighted(weight: WeightFn<T>, feature_map: FeatureMap) -> Self {
        Self::new(Method::WeightedDre, weight, feature_map)
    }

    pub fn with_hessian_limit(mut self, limit: usize) -> Self {
        self.hessian_limit = limit;
        self
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn weight(&self) -> &WeightFn<T> {
        &self.weight
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    pub fn hessian_limit(&self) -> usize {
        self.hessian_limit
    }
}

/// Feature matrices and per-sample log-weights, computed once per fit.
///
/// Features are stored feature-major (`d x n`) so that the score and
/// gradient passes walk contiguous memory.
#[derive(Debug, Clone)]
pub struct PrecomputedFeatures<T> {
    fp: Array2<T>,
    fq: Array2<T>,
    logw_p: Array1<T>,
    logw_q: Array1<T>,
    hw_p_mean: Array1<T>,
    kappa_hat: T,
}

impl<T: Real> PrecomputedFeatures<T> {
    /// `reference` and `target` are `n x m` sample matrices.
    pub fn new(spec: &ObjectiveSpec<T>, reference: ArrayView2<T>, target: ArrayView2<T>) -> Result<Self> {
        if reference.nrows() == 0 {
            return Err(Error::EmptyDataset("reference"));
        }
        if target.nrows() == 0 {
            return Err(Error::EmptyDataset("target"));
        }
        let map = spec.feature_map();
        let fp = map.eval_columns(reference)?;
        let fq = map.eval_columns(target)?;
        let logw = |x: ArrayView2<T>| -> Result<Array1<T>> {
            x.rows()
                .into_iter()
                .map(|row| spec.weight().log_eval(&row.to_vec()))
                .collect::<Result<Vec<_>>>()
                .map(Array1::from)
        };
        let logw_p = logw(reference)?;
        let logw_q = logw(target)?;

        let n_p = T::from_usize_lossy(reference.nrows());
        let w_p = logw_p.mapv(T::exp);
        let kappa_hat = w_p.sum() / n_p;
        if !(kappa_hat > T::zero()) || !kappa_hat.is_finite() {
            return Err(Error::DegenerateWeight("reference set"));
        }
        let hw_p_mean = fp.dot(&w_p) / n_p;
        if !logw_q.iter().any(|v| v.is_finite()) {
            return Err(Error::DegenerateWeight("target set"));
        }
        Ok(Self {
            fp,
            fq,
            logw_p,
            logw_q,
            hw_p_mean,
            kappa_hat,
        })
    }

    pub fn dim(&self) -> usize {
        self.fp.nrows()
    }

    pub fn n_reference(&self) -> usize {
        self.fp.ncols()
    }

    pub fn n_target(&self) -> usize {
        self.fq.ncols()
    }

    /// Reference features as an `n_p x d` view.
    pub fn hp(&self) -> ArrayView2<'_, T> {
        self.fp.t()
    }

    /// Target features as an `n_q x d` view.
    pub fn hq(&self) -> ArrayView2<'_, T> {
        self.fq.t()
    }

    pub fn logw_p(&self) -> ArrayView1<'_, T> {
        self.logw_p.view()
    }

    pub fn logw_q(&self) -> ArrayView1<'_, T> {
        self.logw_q.view()
    }

    /// `Ê_p[h(X) w(X)]`.
    pub fn hw_p_mean(&self) -> ArrayView1<'_, T> {
        self.hw_p_mean.view()
    }

    /// `Ê_p[w(X)]`.
    pub fn kappa_hat(&self) -> T {
        self.kappa_hat
    }

    fn check(&self, spec: &ObjectiveSpec<T>, theta: &ParamVector<T>) -> Result<()> {
        if self.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                what: "precomputed features",
                expected: spec.dim(),
                found: self.dim(),
            });
        }
        spec.feature_map().check_theta(theta)
    }

    /// Target scores `a_n = θᵀh(x^q_n) + log w(x^q_n)`.
    pub fn target_scores(&self, theta: ArrayView1<T>) -> Array1<T> {
        scores(&self.fq, &self.logw_q, theta)
    }

    /// `θᵀh(x^q_n)` without the log-weight.
    pub fn target_linear(&self, theta: ArrayView1<T>) -> Array1<T> {
        let mut lin = Array1::zeros(self.n_target());
        for (t, &th) in theta.iter().enumerate() {
            if th != T::zero() {
                lin.scaled_add(th, &self.fq.row(t));
            }
        }
        lin
    }

    /// Adds the target log-weights to a linear score vector.
    pub fn scores_from_linear(&self, lin: ArrayView1<T>) -> Array1<T> {
        &lin + &self.logw_q
    }

    /// Reference scores `θᵀh(x^p_n) + log w(x^p_n)`.
    pub fn reference_scores(&self, theta: ArrayView1<T>) -> Array1<T> {
        scores(&self.fp, &self.logw_p, theta)
    }

    /// `L(θ)` from precomputed target scores.
    pub fn value_from_scores(&self, theta: ArrayView1<T>, a: ArrayView1<T>) -> Result<T> {
        let lme = log_mean_exp(a)?;
        Ok(self.kappa_hat * lme - theta.dot(&self.hw_p_mean))
    }

    /// `∇L(θ)` from precomputed target scores.
    pub fn gradient_from_scores(&self, a: ArrayView1<T>) -> Result<Array1<T>> {
        let s = softmax(a)?;
        let mut g = self.fq.dot(&s);
        g.zip_mut_with(&self.hw_p_mean, |gi, &hp| *gi = self.kappa_hat * *gi - hp);
        Ok(g)
    }
}

fn scores<T: Real>(f: &Array2<T>, logw: &Array1<T>, theta: ArrayView1<T>) -> Array1<T> {
    let mut a = logw.clone();
    for (t, &th) in theta.iter().enumerate() {
        if th != T::zero() {
            a.scaled_add(th, &f.row(t));
        }
    }
    a
}

/// `max(a)` together with `log Σ exp(a - max)`.
fn lse_parts<T: Real>(a: ArrayView1<T>) -> Result<(T, T)> {
    let max = a.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(Error::DegenerateWeight("target set"));
    }
    if max == T::infinity() {
        return Ok((max, T::zero()));
    }
    let sum: T = a.iter().map(|&v| (v - max).exp()).sum();
    Ok((max, sum.ln()))
}

/// `log((1/n) Σ exp(a_n))`, stable against overflow and underflow.
pub fn log_mean_exp<T: Real>(a: ArrayView1<T>) -> Result<T> {
    if a.is_empty() {
        return Err(Error::EmptyDataset("target"));
    }
    let (max, lsum) = lse_parts(a)?;
    Ok(max + lsum - T::from_usize_lossy(a.len()).ln())
}

/// `exp(a_n) / Σ exp(a)`.
pub fn softmax<T: Real>(a: ArrayView1<T>) -> Result<Array1<T>> {
    let (max, _) = lse_parts(a)?;
    if !max.is_finite() {
        return Err(Error::NonFinite("target scores"));
    }
    let mut s = a.mapv(|v| (v - max).exp());
    let total = s.sum();
    s /= total;
    Ok(s)
}

/// `Ĉ = κ̂ / Ê_q[exp(θᵀh) w]`.
pub fn normalizing_term<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    theta: &ParamVector<T>,
) -> Result<T> {
    Ok(log_normalizing_term(spec, features, theta)?.exp())
}

/// `log Ĉ`, finite whenever at least one target score is finite.
pub fn log_normalizing_term<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    theta: &ParamVector<T>,
) -> Result<T> {
    features.check(spec, theta)?;
    let a = features.target_scores(theta.values().view());
    Ok(features.kappa_hat().ln() - log_mean_exp(a.view())?)
}

pub fn objective<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    theta: &ParamVector<T>,
) -> Result<T> {
    features.check(spec, theta)?;
    let th = theta.values().view();
    let a = features.target_scores(th);
    features.value_from_scores(th, a.view())
}

pub fn gradient<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    theta: &ParamVector<T>,
) -> Result<Array1<T>> {
    features.check(spec, theta)?;
    let a = features.target_scores(theta.values().view());
    features.gradient_from_scores(a.view())
}

pub fn hessian<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    theta: &ParamVector<T>,
) -> Result<Array2<T>> {
    features.check(spec, theta)?;
    let d = spec.dim();
    if d > spec.hessian_limit() {
        return Err(Error::HessianTooLarge {
            d,
            limit: spec.hessian_limit(),
        });
    }
    let a = features.target_scores(theta.values().view());
    let s = softmax(a.view())?;
    let mu = features.fq.dot(&s);
    let root_s = s.mapv(T::sqrt);
    let mut centered = features.fq.clone();
    for (mut row, &m) in centered.axis_iter_mut(Axis(0)).zip(mu.iter()) {
        row.zip_mut_with(&root_s, |v, &r| *v = (*v - m) * r);
    }
    let mut h = centered.dot(&centered.t());
    let kappa = features.kappa_hat();
    for i in 0..d {
        for j in i..d {
            let v = kappa * h[(i, j)];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// The weighted Fisher information `Î(θ) = ∇²L(θ)`.
pub fn fisher_info<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    theta: &ParamVector<T>,
) -> Result<Array2<T>> {
    hessian(spec, features, theta)
}

/// Rows `rows` and columns `cols` of a square matrix.
pub fn submatrix<T: Real>(m: ArrayView2<T>, rows: &[usize], cols: &[usize]) -> Array2<T> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[(rows[i], cols[j])])
}
