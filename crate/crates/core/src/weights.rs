//! Strictly positive weight functions.
//!
//! Objective code only ever consumes [`WeightFn::log_eval`]: at the far
//! outliers used in the experiments the weight underflows to zero while
//! `exp(θᵀh(x))` overflows, and only their sum in the log domain is finite.

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    /// `w(x) = a`.
    Constant,
    /// `w(x) = a * exp(-‖x‖₄⁴ / c)`.
    QuarticDecay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFn<T> {
    kind: WeightKind,
    scale: T,
    amplitude: T,
}

impl<T: Real> WeightFn<T> {
    pub fn constant(amplitude: T) -> Result<Self> {
        check_positive(amplitude, "weight amplitude")?;
        Ok(Self {
            kind: WeightKind::Constant,
            scale: T::one(),
            amplitude,
        })
    }

    /// The constant weight `w ≡ 1` used by conventional DRE.
    pub fn unit() -> Self {
        Self {
            kind: WeightKind::Constant,
            scale: T::one(),
            amplitude: T::one(),
        }
    }

    pub fn quartic_decay(scale: T, amplitude: T) -> Result<Self> {
        check_positive(scale, "weight scale")?;
        check_positive(amplitude, "weight amplitude")?;
        Ok(Self {
            kind: WeightKind::QuarticDecay,
            scale,
            amplitude,
        })
    }

    /// `exp(-‖x‖₄⁴ / 20m)`, the default weight for inputs of dimension `m`.
    pub fn quartic_decay_for_dim(m: usize) -> Self {
        Self {
            kind: WeightKind::QuarticDecay,
            scale: T::lit(20.0) * T::from_usize_lossy(m),
            amplitude: T::one(),
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Upper bound of the weight.
    pub fn amplitude(&self) -> T {
        self.amplitude
    }

    pub fn is_unit_constant(&self) -> bool {
        self.kind == WeightKind::Constant && self.amplitude == T::one()
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        Ok(self.log_eval(x)?.exp())
    }

    /// `log w(x)`, computed without exponentiating.
    pub fn log_eval(&self, x: &[T]) -> Result<T> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight input"));
        }
        let log_a = self.amplitude.ln();
        Ok(match self.kind {
            WeightKind::Constant => log_a,
            WeightKind::QuarticDecay => {
                let q: T = x.iter().map(|&v| (v * v) * (v * v)).sum();
                log_a - q / self.scale
            }
        })
    }
}

fn check_positive<T: Real>(v: T, what: &str) -> Result<()> {
    if !(v.is_finite() && v > T::zero()) {
        return Err(Error::InvalidParameter(format!("{what} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Serializable weight description, as it appears in configuration files.
///
/// A missing `scale` resolves to `20 m` for quartic decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub kind: WeightKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            kind: WeightKind::QuarticDecay,
            scale: None,
            amplitude: 1.0,
        }
    }
}

impl WeightSpec {
    pub fn resolve<T: Real>(&self, m: usize) -> Result<WeightFn<T>> {
        match self.kind {
            WeightKind::Constant => WeightFn::constant(T::lit(self.amplitude)),
            WeightKind::QuarticDecay => {
                let scale = self.scale.unwrap_or(20.0 * m as f64);
                WeightFn::quartic_decay(T::lit(scale), T::lit(self.amplitude))
            }
        }
    }

    /// The same spec with the dimension-dependent default made explicit.
    pub fn materialized(&self, m: usize) -> Self {
        let mut out = *self;
        if self.kind == WeightKind::QuarticDecay && out.scale.is_none() {
            out.scale = Some(20.0 * m as f64);
        }
        out
    }
}
