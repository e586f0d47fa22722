//! Synthetic reference/target data: zero-mean Gaussians parameterized by
//! precision matrices, sparse precision differences, and Huber-style
//! contamination with a shifted Gaussian outlier component.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureMap, ParamVector, ThetaConvention};
use crate::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    cholesky_with_floor(a, 0.0)
}

/// Cholesky factorization that fails once a pivot drops to `floor` or below.
pub(crate) fn cholesky_with_floor(a: ArrayView2<f64>, floor: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "cholesky input",
            expected: n,
            found: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > floor) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

fn check_square_symmetric(a: ArrayView2<f64>, what: &'static str) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            found: a.ncols(),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if a[(i, j)] != a[(j, i)] {
                return Err(Error::Asymmetric { i, j });
            }
        }
    }
    Ok(())
}

/// `N(0, Λ⁻¹)` for a symmetric positive-definite precision `Λ`.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    precision: Array2<f64>,
    chol: Array2<f64>,
}

impl GaussianSpec {
    pub fn new(precision: Array2<f64>) -> Result<Self> {
        check_square_symmetric(precision.view(), "precision matrix")?;
        let chol = cholesky(precision.view())?;
        Ok(Self { precision, chol })
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn precision(&self) -> &Array2<f64> {
        &self.precision
    }

    /// Draws `n` rows: `x = L⁻ᵀ z` with `z ~ N(0, I)` and `Λ = L Lᵀ`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let m = self.dim();
        let mut out = Array2::<f64>::zeros((n, m));
        let mut z = vec![0.0; m];
        for mut row in out.rows_mut() {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            // back substitution on Lᵀ x = z
            for i in (0..m).rev() {
                let mut v = z[i];
                for k in (i + 1)..m {
                    v -= self.chol[(k, i)] * row[k];
                }
                row[i] = v / self.chol[(i, i)];
            }
        }
        out
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(spec: &GaussianSpec, n: usize, rng: &mut R) -> Array2<f64> {
    spec.sample(n, rng)
}

/// Active-set pair for the diagonal design, as `(Λ_p)_ii, (Λ_q)_ii`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalPair {
    /// `(0.8, 0.4)`: the density ratio is bounded.
    Bounded,
    /// `(0.4, 0.8)`: the density ratio is unbounded.
    Unbounded,
}

impl DiagonalPair {
    pub fn precisions(&self) -> (f64, f64) {
        match self {
            DiagonalPair::Bounded => (0.8, 0.4),
            DiagonalPair::Unbounded => (0.4, 0.8),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DiagonalPair::Bounded => "bounded",
            DiagonalPair::Unbounded => "unbounded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// `Λ_p = I`, `Λ_q = I` plus `magnitude` at `k` off-diagonal pairs
    /// that share no row or column.
    OffDiagonalDisjoint,
    /// Diagonal precisions with `k` active entries set to the given pair
    /// and the rest set to 1.
    Diagonal(DiagonalPair),
}

/// Two precision matrices whose difference is sparse.
#[derive(Debug, Clone)]
pub struct SparseDifference {
    pub lambda_p: Array2<f64>,
    pub lambda_q: Array2<f64>,
    /// Active feature indices, ascending.
    pub support: Vec<usize>,
}

impl SparseDifference {
    /// `Λ_q - Λ_p`.
    pub fn difference(&self) -> Array2<f64> {
        &self.lambda_q - &self.lambda_p
    }

    /// The true parameter `θ*` under the given convention.
    pub fn theta_star(&self, map: &FeatureMap, convention: ThetaConvention) -> Result<ParamVector<f64>> {
        map.theta_from_matrix(self.difference().view(), convention)
    }
}

pub fn make_sparse_difference<R: Rng + ?Sized>(
    m: usize,
    k: usize,
    magnitude: f64,
    placement: Placement,
    rng: &mut R,
) -> Result<SparseDifference> {
    let map = FeatureMap::new(m)?;
    let mut lambda_p = Array2::<f64>::eye(m);
    let mut lambda_q = Array2::<f64>::eye(m);
    let mut support = Vec::with_capacity(k);
    match placement {
        Placement::OffDiagonalDisjoint => {
            if 2 * k > m {
                return Err(Error::InfeasibleDesign(format!(
                    "{k} disjoint off-diagonal pairs need m >= {}, got m = {m}",
                    2 * k
                )));
            }
            if !(magnitude.abs() < 1.0) || magnitude == 0.0 {
                return Err(Error::InfeasibleDesign(format!(
                    "off-diagonal magnitude must satisfy 0 < |magnitude| < 1, got {magnitude}"
                )));
            }
            let mut used = vec![false; m];
            while support.len() < k {
                let i = rng.random_range(0..m);
                let j = rng.random_range(0..m);
                if i == j || used[i] || used[j] {
                    continue;
                }
                used[i] = true;
                used[j] = true;
                lambda_q[(i, j)] += magnitude;
                lambda_q[(j, i)] += magnitude;
                support.push(map.index(i, j));
            }
        }
        Placement::Diagonal(pair) => {
            if k > m {
                return Err(Error::InfeasibleDesign(format!(
                    "{k} diagonal entries need m >= {k}, got m = {m}"
                )));
            }
            let (pp, pq) = pair.precisions();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(rng);
            for &i in &idx[..k] {
                lambda_p[(i, i)] = pp;
                lambda_q[(i, i)] = pq;
                support.push(map.index(i, i));
            }
        }
    }
    support.sort_unstable();
    cholesky(lambda_p.view())?;
    cholesky(lambda_q.view())?;
    Ok(SparseDifference {
        lambda_p,
        lambda_q,
        support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Inlier,
    Outlier,
    Unknown,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Inlier => "inlier",
            Label::Outlier => "outlier",
            Label::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inlier" => Ok(Label::Inlier),
            "outlier" => Ok(Label::Outlier),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Samples with per-row provenance. The estimators never read labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Array2<f64>,
    pub labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new(samples: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != samples.nrows() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: samples.nrows(),
                found: labels.len(),
            });
        }
        Ok(Self { samples, labels })
    }

    pub fn unlabeled(samples: Array2<f64>) -> Self {
        let labels = vec![Label::Unknown; samples.nrows()];
        Self { samples, labels }
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn n_outlier(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Outlier).count()
    }

    pub fn n_inlier(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Inlier).count()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().all(|l| *l != Label::Unknown)
    }

    /// Rows labelled as outliers.
    pub fn outliers(&self) -> impl Iterator<Item = ArrayView1<'_, f64>> {
        self.samples
            .rows()
            .into_iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == Label::Outlier)
            .map(|(r, _)| r)
    }
}

/// Whether a non-integral `ε n` is an error or gets rounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    Strict,
    Round,
}

fn integral(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() <= 1e-9 * x.abs().max(1.0) && r >= 0.0).then_some(r as usize)
}

/// `ε n` as an integer, or an error under strict rounding.
pub fn outlier_count(eps: f64, n: usize, rounding: Rounding) -> Result<usize> {
    check_eps(eps)?;
    let raw = eps * n as f64;
    match (integral(raw), rounding) {
        (Some(c), _) => Ok(c),
        (None, Rounding::Round) => Ok(raw.round() as usize),
        (None, Rounding::Strict) => Err(Error::NonIntegralContamination { eps, n: n as f64 }),
    }
}

/// Total dataset size `n = n* / (1 - ε)` holding `n*` inliers.
pub fn total_size(n_star: usize, eps: f64, rounding: Rounding) -> Result<usize> {
    check_eps(eps)?;
    let raw = n_star as f64 / (1.0 - eps);
    let n = match (integral(raw), rounding) {
        (Some(n), _) => n,
        (None, Rounding::Round) => raw.round() as usize,
        (None, Rounding::Strict) => return Err(Error::NonIntegralContamination { eps, n: raw }),
    };
    outlier_count(eps, n, rounding)?;
    Ok(n)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!(
            "contamination ratio must lie in [0, 1), got {eps}"
        )));
    }
    Ok(())
}

/// Outlier component `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct OutlierModel {
    mean: Array1<f64>,
    chol: Array2<f64>,
}

impl OutlierModel {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        check_square_symmetric(cov.view(), "outlier covariance")?;
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "outlier covariance",
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let chol = cholesky(cov.view())?;
        Ok(Self { mean, chol })
    }

    /// `N(value * 1_m, scale * I_m)`; `(100, 1)` is the default design.
    pub fn isotropic(m: usize, value: f64, scale: f64) -> Result<Self> {
        Self::new(Array1::from_elem(m, value), Array2::eye(m) * scale)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let m = self.dim();
        let mut out = Array2::<f64>::zeros((n, m));
        let mut z = vec![0.0; m];
        for mut row in out.rows_mut() {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..m {
                let mut v = self.mean[i];
                for k in 0..=i {
                    v += self.chol[(i, k)] * z[k];
                }
                row[i] = v;
            }
        }
        out
    }
}

/// Contamination ratios for both sides plus the shared outlier model.
#[derive(Debug, Clone)]
pub struct ContaminationSpec {
    pub eps_p: f64,
    pub eps_q: f64,
    pub outliers: OutlierModel,
}

impl ContaminationSpec {
    pub fn new(eps_p: f64, eps_q: f64, outliers: OutlierModel) -> Result<Self> {
        check_eps(eps_p)?;
        check_eps(eps_q)?;
        Ok(Self {
            eps_p,
            eps_q,
            outliers,
        })
    }
}

/// Replaces `ε n` rows of `clean` by outlier draws and shuffles the rows.
///
/// The first `n - ε n` rows of `clean` are kept as inliers.
pub fn contaminate<R: Rng + ?Sized>(
    clean: ArrayView2<f64>,
    eps: f64,
    outliers: &OutlierModel,
    rounding: Rounding,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let (n, m) = clean.dim();
    if outliers.dim() != m {
        return Err(Error::DimensionMismatch {
            what: "outlier model",
            expected: m,
            found: outliers.dim(),
        });
    }
    let n_out = outlier_count(eps, n, rounding)?;
    let n_in = n - n_out;
    let bad = outliers.sample(n_out, rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut samples = Array2::<f64>::zeros((n, m));
    let mut labels = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        if src < n_in {
            samples.row_mut(dst).assign(&clean.row(src));
            labels.push(Label::Inlier);
        } else {
            samples.row_mut(dst).assign(&bad.row(src - n_in));
            labels.push(Label::Outlier);
        }
    }
    Ok(LabeledDataset { samples, labels })
}
