//! Automatic gamma estimation and relighting.
//!
//! The exponent is chosen so the relit illumination has a prescribed mean
//! (0.5 by default): `F(γ) = mean(L^γ) − target` is solved by Newton's
//! method, with bisection on the clamp interval as a fallback.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_grid, Error, Result};
use crate::image::{ColorImage, ScalarField};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaParams<T> {
    /// Desired mean of `L^γ`.
    pub target: T,
    pub gamma_init: T,
    pub max_newton_iters: usize,
    /// Threshold on `|F(γ)|`.
    pub tol: T,
    pub gamma_min: T,
    pub gamma_max: T,
    /// Floor applied to `L` before taking logarithms.
    pub l_floor: T,
}

impl<T: Real> Default for GammaParams<T> {
    fn default() -> Self {
        Self {
            target: T::lit(0.5),
            gamma_init: T::one(),
            max_newton_iters: 50,
            tol: T::lit(1e-6),
            gamma_min: T::lit(0.05),
            gamma_max: T::lit(20.0),
            l_floor: T::lit(1e-4),
        }
    }
}

impl<T: Real> GammaParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > T::zero() && self.target < T::one()) {
            return Err(Error::InvalidParameter(format!("gamma target {} not in (0,1)", self.target)));
        }
        if !(self.gamma_min > T::zero() && self.gamma_min < self.gamma_max) || !self.gamma_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gamma clamp [{}, {}] must satisfy 0 < min < max",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(self.tol > T::zero()) || !(self.l_floor > T::zero() && self.l_floor < T::one()) {
            return Err(Error::InvalidParameter("gamma tol and l_floor must be positive".into()));
        }
        if !(self.gamma_init > T::zero()) {
            return Err(Error::InvalidParameter("gamma_init must be positive".into()));
        }
        Ok(())
    }
}

/// How the returned exponent was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaStatus {
    /// Newton converged inside the clamp interval.
    Newton,
    /// Newton failed; bisection located the root.
    Bisection,
    /// The root lies below `gamma_min` (field already brighter than target).
    ClampedLow,
    /// The root lies above `gamma_max`.
    ClampedHigh,
    /// Every pixel is fully lit; no root exists and `γ = 1` is returned.
    FullyLit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEstimate<T> {
    pub gamma: T,
    pub status: GammaStatus,
    pub iterations: usize,
    /// `F(γ)` at the returned exponent.
    pub residual: T,
}

impl<T: Real> GammaEstimate<T> {
    /// True when the root was found inside the clamp interval.
    pub fn is_interior(&self) -> bool {
        matches!(self.status, GammaStatus::Newton | GammaStatus::Bisection)
    }
}

struct Objective<T> {
    values: Vec<T>,
    logs: Vec<T>,
    target: T,
}

impl<T: Real> Objective<T> {
    fn new(l: &[T], params: &GammaParams<T>) -> Self {
        let values: Vec<T> = l.iter().map(|&v| v.max(params.l_floor).min(T::one())).collect();
        let logs = values.iter().map(|v| v.ln()).collect();
        Self {
            values,
            logs,
            target: params.target,
        }
    }

    fn m(&self) -> T {
        T::from_count(self.values.len())
    }

    /// `(F(γ), F′(γ))`, summed left to right.
    fn eval(&self, gamma: T) -> (T, T) {
        let mut f = T::zero();
        let mut df = T::zero();
        for (&v, &lv) in self.values.iter().zip(&self.logs) {
            let p = v.powf(gamma);
            f += p;
            df += p * lv;
        }
        (f / self.m() - self.target, df / self.m())
    }

    fn f(&self, gamma: T) -> T {
        self.eval(gamma).0
    }
}

/// Finds `γ` with `mean(L^γ) = target`.
///
/// `L` is floored at `l_floor` (and capped at 1) first. When the root lies
/// outside `[gamma_min, gamma_max]` the nearer bound is returned and the
/// status says so.
pub fn auto_gamma<T: Real>(l: &ScalarField<T>, params: &GammaParams<T>) -> Result<GammaEstimate<T>> {
    params.validate()?;
    auto_gamma_slice(l.as_slice(), params)
}

pub(crate) fn auto_gamma_slice<T: Real>(l: &[T], params: &GammaParams<T>) -> Result<GammaEstimate<T>> {
    if l.is_empty() {
        return Err(Error::InvalidParameter("empty illumination".into()));
    }
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite illumination".into()));
    }
    let obj = Objective::new(l, params);
    if obj.logs.iter().all(|&lv| lv == T::zero()) {
        return Ok(GammaEstimate {
            gamma: T::one(),
            status: GammaStatus::FullyLit,
            iterations: 0,
            residual: T::one() - params.target,
        });
    }

    // F is decreasing in γ.
    let (lo, hi) = (params.gamma_min, params.gamma_max);
    let f_lo = obj.f(lo);
    if f_lo <= T::zero() {
        return Ok(GammaEstimate {
            gamma: lo,
            status: if f_lo.abs() < params.tol { GammaStatus::Newton } else { GammaStatus::ClampedLow },
            iterations: 0,
            residual: f_lo,
        });
    }
    let f_hi = obj.f(hi);
    if f_hi >= T::zero() {
        return Ok(GammaEstimate {
            gamma: hi,
            status: if f_hi.abs() < params.tol { GammaStatus::Newton } else { GammaStatus::ClampedHigh },
            iterations: 0,
            residual: f_hi,
        });
    }

    // Newton runs until the step is negligible, not merely until |F| < tol,
    // so the root is accurate in γ even where F is flat.
    let tiny = T::lit(1e-12);
    let step_tol = |g: T| T::lit(1e-13) * g.max(T::one());
    let mut gamma = params.gamma_init.max(lo).min(hi);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_newton_iters {
        let (f, df) = obj.eval(gamma);
        if f == T::zero() {
            converged = true;
            break;
        }
        if df.abs() < tiny {
            break;
        }
        let next = gamma - f / df;
        iterations += 1;
        if !next.is_finite() || next < lo || next > hi {
            break;
        }
        let step = (next - gamma).abs();
        gamma = next;
        if step <= step_tol(gamma) {
            converged = true;
            break;
        }
    }
    let f = obj.f(gamma);
    if f.abs() < params.tol && (converged || iterations == params.max_newton_iters) {
        return Ok(GammaEstimate {
            gamma,
            status: GammaStatus::Newton,
            iterations,
            residual: f,
        });
    }

    let (root, steps) = bisect(|g| obj.f(g), lo, hi);
    Ok(GammaEstimate {
        gamma: root,
        status: GammaStatus::Bisection,
        iterations: iterations + steps,
        residual: obj.f(root),
    })
}

/// Bisection for a decreasing `f` with `f(lo) > 0 > f(hi)`, down to a
/// relative bracket width of about 1e-13.
fn bisect<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T) -> (T, usize) {
    let two = T::lit(2.0);
    let mut steps = 0;
    loop {
        let mid = (lo + hi) / two;
        steps += 1;
        if hi - lo <= T::lit(1e-13) * hi.max(T::one()) || mid <= lo || mid >= hi || steps >= 200 {
            return (mid, steps);
        }
        let fm = f(mid);
        if fm == T::zero() {
            return (mid, steps);
        }
        if fm > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Relit image `L^γ ∘ R`, clamped to `[0, 1]`.
pub fn enhance<T: Real>(r: &ColorImage<T>, l: &ScalarField<T>, gamma: T) -> Result<ColorImage<T>> {
    ensure_same_grid("enhance", r.dims(), l.dims())?;
    let lit: Vec<T> = l.as_slice().iter().map(|&v| v.max(T::zero()).powf(gamma)).collect();
    let mut out = r.clone();
    for c in 0..r.channels() {
        for (o, &g) in out.channel_mut(c).iter_mut().zip(&lit) {
            *o = (*o * g).max(T::zero()).min(T::one());
        }
    }
    Ok(out)
}

/// Relit illumination `L^γ`.
pub fn relight<T: Real>(l: &ScalarField<T>, gamma: T) -> ScalarField<T> {
    l.map(|v| v.max(T::zero()).powf(gamma))
}
