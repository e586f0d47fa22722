//! L1-penalized minimization by accelerated proximal gradient.
//!
//! Minimizes `F(θ) = L(θ) + λ‖θ‖₁` starting from `θ = 0`, with backtracking
//! on the step size and either function-value restart of the momentum
//! (`restart = true`) or the monotone FISTA update. Accepted iterates never
//! increase `F`. Every zero coordinate of the result is produced by the
//! soft-thresholding prox and is therefore an exact zero.
//!
//! The solver stops once the relative decrease of `F` stays below `tol` for
//! [`STALL_WINDOW`] consecutive iterations *and* the subgradient optimality
//! condition holds to `kkt_tol`; otherwise it runs to `max_iter` and reports
//! `converged = false`.

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::features::ParamVector;
use crate::model::{ObjectiveSpec, PrecomputedFeatures};
use crate::{Error, Real, Result};

/// Consecutive low-progress iterations before optimality is checked.
pub const STALL_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig<T> {
    pub lambda: T,
    pub max_iter: usize,
    pub tol: T,
    pub backtrack_shrink: T,
    pub initial_step: T,
    pub restart: bool,
    /// Absolute tolerance on the optimality residual.
    pub kkt_tol: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::zero(),
            max_iter: 5000,
            tol: T::lit(1e-8),
            backtrack_shrink: T::lit(0.5),
            initial_step: T::one(),
            restart: true,
            kkt_tol: T::lit(1e-5),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn with_lambda(lambda: T) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.tol > T::zero() && self.tol < T::one()) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if !(self.backtrack_shrink > T::zero() && self.backtrack_shrink < T::one()) {
            return bad(format!("backtrack_shrink must lie in (0, 1), got {}", self.backtrack_shrink));
        }
        if !(self.initial_step > T::zero() && self.initial_step.is_finite()) {
            return bad(format!("initial_step must be positive, got {}", self.initial_step));
        }
        if !(self.kkt_tol > T::zero()) {
            return bad(format!("kkt_tol must be positive, got {}", self.kkt_tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub theta_hat: ParamVector<T>,
    /// Penalized objective after every accepted iteration, starting at `θ = 0`.
    pub objective_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_used: T,
    /// Optimality residual at `theta_hat`, see [`kkt_residual`].
    pub kkt_residual: T,
    /// Smooth part `L(θ̂)`.
    pub loss: T,
}

impl<T: Real> FitResult<T> {
    /// Penalized objective at `theta_hat`.
    pub fn objective(&self) -> T {
        *self.objective_trace.last().expect("trace starts with the initial value")
    }
}

/// `sign(v) * max(|v| - t, 0)`, with exact zeros where `|v| <= t`.
pub fn soft_threshold<T: Real>(v: ArrayView1<T>, t: T) -> Array1<T> {
    v.mapv(|x| shrink(x, t))
}

#[inline]
fn shrink<T: Real>(x: T, t: T) -> T {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        T::zero()
    }
}

pub fn l1_norm<T: Real>(v: ArrayView1<T>) -> T {
    v.iter().map(|x| x.abs()).sum()
}

/// Subgradient optimality residual of `L + λ‖·‖₁` at `θ` with gradient `g`:
/// the largest of `|g_t + λ sign(θ_t)|` over nonzero coordinates and
/// `max(|g_t| - λ, 0)` over zero coordinates.
pub fn kkt_residual<T: Real>(theta: ArrayView1<T>, grad: ArrayView1<T>, lambda: T) -> T {
    theta
        .iter()
        .zip(grad.iter())
        .map(|(&th, &g)| {
            if th > T::zero() {
                (g + lambda).abs()
            } else if th < T::zero() {
                (g - lambda).abs()
            } else {
                (g.abs() - lambda).max(T::zero())
            }
        })
        .fold(T::zero(), T::max)
}

/// `λ₀ sqrt(ln d / n)`.
pub fn lambda_schedule<T: Real>(lambda0: T, d: T, n: usize) -> Result<T> {
    if !(d >= T::lit(2.0)) {
        return Err(Error::InvalidParameter(format!(
            "lambda schedule needs d >= 2, got {d}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("lambda schedule needs n >= 1".into()));
    }
    if !(lambda0 > T::zero()) {
        return Err(Error::InvalidParameter(format!("lambda0 must be positive, got {lambda0}")));
    }
    Ok(lambda0 * (d.ln() / T::from_usize_lossy(n)).sqrt())
}

/// One backtracked proximal gradient step from `y`.
#[derive(Debug, Clone)]
pub struct ProxStep<T> {
    pub point: Array1<T>,
    /// `θᵀh(x^q_n)` at `point`.
    pub linear: Array1<T>,
    /// Smooth objective at `point`.
    pub value: T,
    /// Accepted step size.
    pub step: T,
}

/// Slack added to the sufficient-decrease test to absorb rounding in `L`.
pub fn decrease_slack<T: Real>(value: T) -> T {
    T::epsilon() * T::lit(64.0) * value.abs().max(T::one())
}

/// Shrinks `step` until `z = prox(y - step * grad)` satisfies
/// `L(z) <= L(y) + gradᵀ(z - y) + ‖z - y‖² / (2 step)`.
///
/// Returns `None` if the step underflows before the condition holds.
pub fn backtracking_prox_step<T: Real>(
    features: &PrecomputedFeatures<T>,
    y: ArrayView1<T>,
    value_y: T,
    grad_y: ArrayView1<T>,
    mut step: T,
    lambda: T,
    shrink_factor: T,
) -> Result<Option<ProxStep<T>>> {
    let min_step = T::min_positive_value() / T::epsilon();
    loop {
        let thresh = step * lambda;
        let mut z = Array1::zeros(y.len());
        Zip::from(&mut z)
            .and(&y)
            .and(&grad_y)
            .for_each(|z, &yi, &gi| *z = shrink(yi - step * gi, thresh));
        let linear = features.target_linear(z.view());
        let a = features.scores_from_linear(linear.view());
        let value = features.value_from_scores(z.view(), a.view())?;
        let mut lin_term = T::zero();
        let mut sq = T::zero();
        for ((&zi, &yi), &gi) in z.iter().zip(y.iter()).zip(grad_y.iter()) {
            let diff = zi - yi;
            lin_term += gi * diff;
            sq += diff * diff;
        }
        let bound = value_y + lin_term + sq / (T::lit(2.0) * step);
        if value.is_finite() && value <= bound + decrease_slack(value_y) {
            return Ok(Some(ProxStep {
                point: z,
                linear,
                value,
                step,
            }));
        }
        step = step * shrink_factor;
        if step < min_step {
            return Ok(None);
        }
    }
}

/// Fits `θ̂ = argmin L(θ) + λ‖θ‖₁`.
pub fn fit<T: Real>(
    spec: &ObjectiveSpec<T>,
    features: &PrecomputedFeatures<T>,
    cfg: &SolverConfig<T>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    if features.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            what: "precomputed features",
            expected: spec.dim(),
            found: features.dim(),
        });
    }
    Solver::new(features, cfg)?.run()
}

/// Builds the feature matrices for `reference` and `target` (`n x m`) and fits.
pub fn fit_samples<T: Real>(
    spec: &ObjectiveSpec<T>,
    reference: ArrayView2<T>,
    target: ArrayView2<T>,
    cfg: &SolverConfig<T>,
) -> Result<FitResult<T>> {
    let features = PrecomputedFeatures::new(spec, reference, target)?;
    fit(spec, &features, cfg)
}

/// An iterate with its cached target linear scores and objective values.
#[derive(Clone)]
struct Iterate<T> {
    theta: Array1<T>,
    linear: Array1<T>,
    smooth: T,
    penalized: T,
}

struct Solver<'a, T> {
    features: &'a PrecomputedFeatures<T>,
    cfg: &'a SolverConfig<T>,
}

impl<'a, T: Real> Solver<'a, T> {
    fn new(features: &'a PrecomputedFeatures<T>, cfg: &'a SolverConfig<T>) -> Result<Self> {
        Ok(Self { features, cfg })
    }

    fn iterate(&self, theta: Array1<T>, linear: Array1<T>, smooth: T) -> Iterate<T> {
        let penalized = smooth + self.cfg.lambda * l1_norm(theta.view());
        Iterate {
            theta,
            linear,
            smooth,
            penalized,
        }
    }

    fn gradient(&self, linear: ArrayView1<T>) -> Result<Array1<T>> {
        let a = self.features.scores_from_linear(linear);
        self.features.gradient_from_scores(a.view())
    }

    fn smooth_value(&self, theta: ArrayView1<T>, linear: ArrayView1<T>) -> Result<T> {
        let a = self.features.scores_from_linear(linear);
        self.features.value_from_scores(theta, a.view())
    }

    /// Affine combination `Σ c_i v_i` with `Σ c_i = 1`.
    fn combine(parts: &[(T, &Array1<T>)]) -> Array1<T> {
        let mut out = parts[0].1 * parts[0].0;
        for &(c, v) in &parts[1..] {
            if c != T::zero() {
                out.scaled_add(c, v);
            }
        }
        out
    }

    fn run(&self) -> Result<FitResult<T>> {
        let cfg = self.cfg;
        let lambda = cfg.lambda;
        let d = self.features.dim();

        let theta0 = Array1::zeros(d);
        let lin0 = Array1::zeros(self.features.n_target());
        let f0 = self.smooth_value(theta0.view(), lin0.view())?;
        let mut x = self.iterate(theta0, lin0, f0);

        // extrapolated point
        let mut y_theta = x.theta.clone();
        let mut y_lin = x.linear.clone();
        let mut y_val = x.smooth;
        let mut y_grad = self.gradient(y_lin.view())?;
        let mut y_is_x = true;

        let mut momentum = T::one();
        let mut step = cfg.initial_step;
        let mut trace = vec![x.penalized];
        let mut stall = 0usize;
        let mut converged = false;
        let mut iterations = 0usize;

        while iterations < cfg.max_iter {
            iterations += 1;
            let prox = backtracking_prox_step(
                self.features,
                y_theta.view(),
                y_val,
                y_grad.view(),
                step,
                lambda,
                cfg.backtrack_shrink,
            )?;
            let Some(prox) = prox else {
                // step underflow: no further progress is representable
                break;
            };
            step = prox.step;
            let z = self.iterate(prox.point, prox.linear, prox.value);

            let previous = x.penalized;
            let improved = z.penalized <= x.penalized;
            if !improved && cfg.restart && !y_is_x {
                momentum = T::one();
                y_theta = x.theta.clone();
                y_lin = x.linear.clone();
                y_val = x.smooth;
                y_grad = self.gradient(y_lin.view())?;
                y_is_x = true;
                continue;
            }

            let next_momentum =
                (T::one() + (T::one() + T::lit(4.0) * momentum * momentum).sqrt()) / T::lit(2.0);
            if improved {
                // y = x + beta (x - x_prev)
                let beta = (momentum - T::one()) / next_momentum;
                let old = std::mem::replace(&mut x, z);
                y_theta = Self::combine(&[(T::one() + beta, &x.theta), (-beta, &old.theta)]);
                y_lin = Self::combine(&[(T::one() + beta, &x.linear), (-beta, &old.linear)]);
            } else if cfg.restart {
                // the prox step from x itself did not decrease F: rounding floor
                y_theta = x.theta.clone();
                y_lin = x.linear.clone();
            } else {
                // monotone FISTA keeps x and steers the momentum through z
                let c = momentum / next_momentum;
                y_theta = Self::combine(&[(T::one() - c, &x.theta), (c, &z.theta)]);
                y_lin = Self::combine(&[(T::one() - c, &x.linear), (c, &z.linear)]);
            }
            momentum = next_momentum;
            y_is_x = y_theta == x.theta;
            y_val = if y_is_x {
                x.smooth
            } else {
                self.smooth_value(y_theta.view(), y_lin.view())?
            };
            if !y_val.is_finite() {
                momentum = T::one();
                y_theta = x.theta.clone();
                y_lin = x.linear.clone();
                y_val = x.smooth;
                y_is_x = true;
            }
            y_grad = self.gradient(y_lin.view())?;
            trace.push(x.penalized);

            let decrease = previous - x.penalized;
            if decrease <= cfg.tol * previous.abs().max(T::min_positive_value()) {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= STALL_WINDOW {
                let g = self.gradient(x.linear.view())?;
                if kkt_residual(x.theta.view(), g.view(), lambda) <= cfg.kkt_tol {
                    converged = true;
                    break;
                }
                stall = 0;
            }
        }

        let grad = self.gradient(x.linear.view())?;
        let residual = kkt_residual(x.theta.view(), grad.view(), lambda);
        converged |= residual <= cfg.kkt_tol;
        Ok(FitResult {
            theta_hat: ParamVector::new(x.theta),
            objective_trace: trace,
            iterations,
            converged,
            lambda_used: lambda,
            kkt_residual: residual,
            loss: x.smooth,
        })
    }
}
