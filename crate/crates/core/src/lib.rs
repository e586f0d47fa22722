//! Robust, sparse density ratio estimation.
//!
//! The density ratio `r(x) = p(x) / q(x)` is modelled as `C * exp(θᵀh(x))`
//! with quadratic monomial features `h`. Two estimators share one code path:
//!
//! - conventional DRE, which minimizes the empirical unnormalized
//!   Kullback-Leibler (UKL) objective;
//! - weighted DRE, which inserts a strictly positive weight `w(x)` as the
//!   base measure of the divergence, so that outliers with tiny weight have
//!   tiny influence and `r(x) w(x)` stays bounded even when `r` does not.
//!
//! Both are fit with an L1 penalty by accelerated proximal gradient
//! ([`optim::fit`]). Everything objective-related is evaluated in the log
//! domain, because `exp(θᵀh(x))` at a far outlier overflows any float type.
//!
//! The numerical core ([`features`], [`weights`], [`model`], [`optim`]) is
//! generic over the scalar type through [`Real`]; `f64` aliases are exported
//! at the crate root. Data generation, diagnostics and experiments work in
//! `f64`.
//!
//! ```
//! use robust_dre::{features::FeatureMap, weights::WeightFn};
//!
//! let map = FeatureMap::new(2).unwrap();
//! assert_eq!(map.eval(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0, 4.0]);
//!
//! let w = WeightFn::quartic_decay_for_dim(1);
//! assert!((w.eval(&[1.0]).unwrap() - (-1.0f64 / 20.0).exp()).abs() < 1e-15);
//! ```

pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod features;
pub mod io;
pub mod model;
pub mod optim;
pub mod weights;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Parameter vector in double precision.
pub type ParamVectorF64 = features::ParamVector<f64>;
/// Parameter vector in single precision.
pub type ParamVectorF32 = features::ParamVector<f32>;
/// Weight function in double precision.
pub type WeightFnF64 = weights::WeightFn<f64>;
/// Objective specification in double precision.
pub type ObjectiveSpecF64 = model::ObjectiveSpec<f64>;
/// Precomputed feature matrices in double precision.
pub type PrecomputedF64 = model::PrecomputedFeatures<f64>;
/// Solver configuration in double precision.
pub type SolverConfigF64 = optim::SolverConfig<f64>;
/// Fit result in double precision.
pub type FitResultF64 = optim::FitResult<f64>;
/// Fit result in single precision.
pub type FitResultF32 = optim::FitResult<f32>;
