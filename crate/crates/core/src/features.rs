//! Quadratic monomial features `h(x) = (x_i x_j)_{i <= j}` and the mapping
//! between symmetric `m x m` parameter matrices and length-`d` vectors.
//!
//! Feature indices enumerate the upper triangle row by row:
//! `(0,0), (0,1), ..., (0,m-1), (1,1), ..., (m-1,m-1)`. All indices in this
//! module are zero-based.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Number of quadratic features for input dimension `m`: `(m² + m) / 2`.
pub fn feature_dim(m: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidParameter("input dimension m must be >= 1".into()));
    }
    Ok(m * (m + 1) / 2)
}

/// The quadratic feature transform for a fixed input dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    m: usize,
    pairs: Vec<(usize, usize)>,
}

impl FeatureMap {
    pub fn new(m: usize) -> Result<Self> {
        let d = feature_dim(m)?;
        let mut pairs = Vec::with_capacity(d);
        for i in 0..m {
            for j in i..m {
                pairs.push((i, j));
            }
        }
        Ok(Self { m, pairs })
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// The `(i, j)` pair with `i <= j` behind feature `t`.
    pub fn pair(&self, t: usize) -> (usize, usize) {
        self.pairs[t]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Feature index of the unordered pair `{i, j}`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j < self.m);
        // row i starts after sum_{r<i} (m - r) entries
        i * self.m - i * i.saturating_sub(1) / 2 + (j - i)
    }

    /// Evaluates `h(x)`.
    pub fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Evaluates `h(x)` into a caller-provided buffer of length `d`.
    pub fn eval_into<T: Real>(&self, x: &[T], out: &mut [T]) -> Result<()> {
        if x.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "feature input",
                expected: self.m,
                found: x.len(),
            });
        }
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature output",
                expected: self.dim(),
                found: out.len(),
            });
        }
        let mut t = 0;
        for i in 0..self.m {
            let xi = x[i];
            for &xj in &x[i..] {
                out[t] = xi * xj;
                t += 1;
            }
        }
        Ok(())
    }

    /// Evaluates the features of every row of `samples` (n x m) into a
    /// feature-major `d x n` matrix: row `t` holds `h_t` over all samples.
    pub fn eval_columns<T: Real>(&self, samples: ArrayView2<T>) -> Result<Array2<T>> {
        let (n, m) = samples.dim();
        if m != self.m {
            return Err(Error::DimensionMismatch {
                what: "sample columns",
                expected: self.m,
                found: m,
            });
        }
        let mut out = Array2::zeros((self.dim(), n));
        for (t, &(i, j)) in self.pairs.iter().enumerate() {
            let xi = samples.column(i);
            let xj = samples.column(j);
            let mut row = out.row_mut(t);
            ndarray::Zip::from(&mut row)
                .and(&xi)
                .and(&xj)
                .for_each(|o, &a, &b| *o = a * b);
        }
        Ok(out)
    }

    /// Packs a symmetric matrix into a parameter vector.
    pub fn theta_from_matrix<T: Real>(
        &self,
        matrix: ArrayView2<T>,
        convention: ThetaConvention,
    ) -> Result<ParamVector<T>> {
        check_symmetric(matrix, self.m)?;
        let half = T::lit(0.5);
        let theta = self
            .pairs
            .iter()
            .map(|&(i, j)| match convention {
                ThetaConvention::Direct => matrix[(i, j)],
                ThetaConvention::SumSplit if i == j => matrix[(i, i)] * half,
                ThetaConvention::SumSplit => matrix[(i, j)],
            })
            .collect();
        Ok(ParamVector::new(theta))
    }

    /// Expands a parameter vector back into a symmetric matrix; inverse of
    /// [`FeatureMap::theta_from_matrix`] under the same convention.
    pub fn matrix_from_theta<T: Real>(
        &self,
        theta: &ParamVector<T>,
        convention: ThetaConvention,
    ) -> Result<Array2<T>> {
        self.check_theta(theta)?;
        let two = T::lit(2.0);
        let mut out = Array2::zeros((self.m, self.m));
        for (t, &(i, j)) in self.pairs.iter().enumerate() {
            let v = theta.values()[t];
            if i == j {
                out[(i, i)] = match convention {
                    ThetaConvention::Direct => v,
                    ThetaConvention::SumSplit => v * two,
                };
            } else {
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_theta<T: Real>(&self, theta: &ParamVector<T>) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: self.dim(),
                found: theta.len(),
            });
        }
        Ok(())
    }
}

fn check_symmetric<T: Real>(matrix: ArrayView2<T>, m: usize) -> Result<()> {
    if matrix.dim() != (m, m) {
        return Err(Error::DimensionMismatch {
            what: "parameter matrix",
            expected: m,
            found: if matrix.nrows() != m { matrix.nrows() } else { matrix.ncols() },
        });
    }
    let tol = T::epsilon() * T::lit(16.0);
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
            let scale = a.abs().max(b.abs()).max(T::one());
            if (a - b).abs() > tol * scale {
                return Err(Error::Asymmetric { i, j });
            }
        }
    }
    Ok(())
}

/// How a symmetric matrix `Θ` maps to the vector `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaConvention {
    /// `θ_t = Θ_ij` for every `i <= j`.
    #[default]
    Direct,
    /// `θ_t = Θ_ij` off the diagonal and `Θ_ii / 2` on it, so that
    /// `θᵀh(x) = ½ xᵀΘx` exactly.
    SumSplit,
}

/// A parameter vector over a [`FeatureMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    theta: Array1<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(theta: Array1<T>) -> Self {
        Self { theta }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(Array1::zeros(d))
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn values(&self) -> &Array1<T> {
        &self.theta
    }

    pub fn into_values(self) -> Array1<T> {
        self.theta
    }

    /// Indices of the strictly nonzero coordinates, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.theta
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(t, _)| t)
            .collect()
    }

    /// `θᵀh` for a feature vector `h`.
    pub fn dot(&self, h: &[T]) -> T {
        self.theta.iter().zip(h).map(|(&a, &b)| a * b).sum()
    }
}

impl<T: Real> From<Array1<T>> for ParamVector<T> {
    fn from(v: Array1<T>) -> Self {
        Self::new(v)
    }
}

impl<T: Real> From<Vec<T>> for ParamVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self::new(Array1::from(v))
    }
}
