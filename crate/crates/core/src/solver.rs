//! Primal-dual solver for the nonlocal Retinex energy.
//!
//! Each iteration runs, in order:
//!
//! 1. dual ascent on `p` (NLTV of `R`, projected on the `α`-ball per pixel),
//! 2. dual ascent on `q` (gradient fidelity, closed-form prox),
//! 3. dual ascent on `o` (TV of `L`, projected on the `β`-ball per pixel),
//! 4. the exact proximal step in `R`, clamp to `[0,1]`, extrapolation,
//! 5. the exact proximal step in `L`, clamp to `L ≥ max_k Ĩ_k`, extrapolation,
//! 6. the exact minimizer in `N`.
//!
//! The coupling `R∘L` is handled block-wise: each primal block solves its
//! quadratic with the other blocks frozen at their latest values.

use std::borrow::Cow;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_grid, Error, Result};
use crate::image::{ColorImage, GradField, ScalarField};
use crate::operators::{
    div_scalar, grad, grad_scalar, nl_div_into, nlgf_adjoint, NLField, NLGradFidField,
    StackedOperator,
};
use crate::scalar::{norm2, Real};
use crate::weights::{NLGradWeights, NLWeights, Stencil};

/// Form of the gradient-fidelity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientFidelity {
    /// Gradient-patch weights `ŵ`.
    #[default]
    Nonlocal,
    /// Kronecker weights: `(μ/2)‖∇R − ∇Î‖²`.
    Local,
    /// Term dropped (`μ = 0`).
    Off,
}

/// Prior on the illumination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IllumPrior {
    /// `(β/2)‖∇L‖_{2,1}`, dualized.
    #[default]
    Tv,
    /// `(β/2)‖∇L‖²`, taken as an explicit gradient step inside the L-update.
    Tikhonov,
}

/// Prior on the reflectance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReflPrior {
    /// Nonlocal TV over the intensity weights.
    #[default]
    Nltv,
    /// Local isotropic TV.
    Tv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams<T> {
    pub alpha: T,
    pub beta: T,
    pub lambda: T,
    pub mu: T,
    /// Primal step; `None` picks `0.99/‖K‖`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<T>,
    /// Dual step; `None` picks `0.99/‖K‖`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<T>,
    pub max_iters: usize,
    /// Stop once the relative change of `R̃` and `L̃` drops below this.
    pub rel_tol: T,
    /// Offset in `R⁰ = Ĩ / (L⁰ + ε)`.
    pub epsilon: T,
    /// Power-method iterations for `‖K‖`.
    pub norm_iters: usize,
    pub seed: u64,
    pub noise_term: bool,
    pub gradient_fidelity: GradientFidelity,
    pub illum_prior: IllumPrior,
    pub refl_prior: ReflPrior,
}

impl<T: Real> Default for SolverParams<T> {
    fn default() -> Self {
        Self {
            // tuned with the grid-search helper on the bundled pairs
            alpha: T::lit(0.002),
            beta: T::lit(0.1),
            lambda: T::lit(2.0),
            mu: T::lit(0.01),
            tau: None,
            sigma: None,
            max_iters: 200,
            rel_tol: T::lit(1e-4),
            epsilon: T::lit(1e-3),
            norm_iters: 20,
            seed: 0,
            noise_term: true,
            gradient_fidelity: GradientFidelity::Nonlocal,
            illum_prior: IllumPrior::Tv,
            refl_prior: ReflPrior::Nltv,
        }
    }
}

impl<T: Real> SolverParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("lambda", self.lambda)?;
        positive("epsilon", self.epsilon)?;
        if self.gradient_fidelity != GradientFidelity::Off {
            positive("mu", self.mu)?;
        }
        if let Some(t) = self.tau {
            positive("tau", t)?;
        }
        if let Some(s) = self.sigma {
            positive("sigma", s)?;
        }
        if !(self.rel_tol >= T::zero()) {
            return Err(Error::InvalidParameter("rel_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Primal, extrapolated and dual variables of one solve.
#[derive(Debug, Clone)]
pub struct DecompositionState<T> {
    /// Latest unclamped reflectance update.
    pub r: ColorImage<T>,
    /// Reflectance clamped to `[0, 1]`.
    pub r_tilde: ColorImage<T>,
    pub r_bar: ColorImage<T>,
    /// Latest unclamped illumination update.
    pub l: ScalarField<T>,
    /// Illumination clamped to `L ≥ max_k Ĩ_k`.
    pub l_tilde: ScalarField<T>,
    pub l_bar: ScalarField<T>,
    pub n: ColorImage<T>,
    pub p: NLField<T>,
    /// Absent when the fidelity term is off.
    pub q: Option<NLGradFidField<T>>,
    /// One-channel gradient-shaped dual of the illumination TV.
    pub o: GradField<T>,
    pub iter: usize,
}

/// The five energy terms, evaluated at the clamped iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyTerms<T> {
    pub data: T,
    pub reflectance: T,
    pub illumination: T,
    pub noise: T,
    pub fidelity: T,
}

impl<T: Real> EnergyTerms<T> {
    pub fn total(&self) -> T {
        self.data + self.reflectance + self.illumination + self.noise + self.fidelity
    }
}

/// One row of the solver trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub energy: f64,
    pub rel_change: f64,
    /// Largest excess of a dual slice norm over its ball radius.
    pub max_dual_violation: f64,
    /// Count of clamped samples outside their constraint set.
    pub primal_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub initial_energy: f64,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub tau: f64,
    pub sigma: f64,
    pub operator_norm: f64,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(self.initial_energy, |r| r.energy)
    }

    /// Writes the trace as CSV: `iter,energy,rel_change,max_dual_violation`.
    /// Row 0 is the initial state.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "iter,energy,rel_change,max_dual_violation")?;
        writeln!(out, "0,{:e},,0", self.initial_energy)?;
        for r in &self.records {
            writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.energy, r.rel_change, r.max_dual_violation)?;
        }
        Ok(())
    }
}

/// Result of [`Problem::solve`].
#[derive(Debug, Clone)]
pub struct Decomposition<T> {
    pub reflectance: ColorImage<T>,
    pub illumination: ScalarField<T>,
    pub noise: ColorImage<T>,
    pub diagnostics: Diagnostics,
}

/// The energy instance: observation, guide gradient, weights and parameters,
/// plus the resolved step sizes.
#[derive(Debug, Clone)]
pub struct Problem<'a, T: Real> {
    observed: &'a ColorImage<T>,
    observed_max: ScalarField<T>,
    guide_grad: GradField<T>,
    refl: Cow<'a, NLWeights<T>>,
    fid: Option<Cow<'a, NLGradWeights<T>>>,
    /// Per `(c, t, i)`: `Σ_o ŵ`, `Σ_o ŵ ∇Î_j`, `Σ_o ŵ (∇Î_j)²`.
    fid_moments: Vec<[T; 3]>,
    params: SolverParams<T>,
    tau: T,
    sigma: T,
    operator_norm: T,
}

impl<'a, T: Real> Problem<'a, T> {
    /// Sets up the energy for observation `Ĩ` and guide `Î`. The ablation
    /// flags in `params` may replace `w` by the local TV stencil and `ŵ` by
    /// Kronecker weights.
    pub fn new(
        observed: &'a ColorImage<T>,
        guide: &ColorImage<T>,
        w: &'a NLWeights<T>,
        w_hat: &'a NLGradWeights<T>,
        params: SolverParams<T>,
    ) -> Result<Self> {
        params.validate()?;
        ensure_same_grid("guide", observed.dims(), guide.dims())?;
        if guide.channels() != observed.channels() {
            return Err(Error::DimensionMismatch("guide channel count".into()));
        }
        let (width, height) = observed.dims();
        let refl = match params.refl_prior {
            ReflPrior::Nltv => {
                ensure_same_grid("intensity weights", observed.dims(), w.dims())?;
                Cow::Borrowed(w)
            }
            ReflPrior::Tv => Cow::Owned(NLWeights::local(width, height)),
        };
        let fid = match params.gradient_fidelity {
            GradientFidelity::Nonlocal => {
                ensure_same_grid("gradient weights", observed.dims(), w_hat.dims())?;
                Some(Cow::Borrowed(w_hat))
            }
            GradientFidelity::Local => Some(Cow::Owned(NLGradWeights::local(width, height))),
            GradientFidelity::Off => None,
        };
        let operator_norm = StackedOperator {
            reflectance: refl.as_ref(),
            fidelity: fid.as_deref(),
            illumination: params.illum_prior == IllumPrior::Tv,
        }
        .norm_estimate(observed.channels(), params.norm_iters, params.seed);
        let auto = T::lit(0.99) / operator_norm.max(T::lit(1e-12));
        let tau = params.tau.unwrap_or(auto);
        let sigma = params.sigma.unwrap_or(auto);
        let guide_grad = grad(guide);
        let fid_moments = fid
            .as_deref()
            .map(|wh| fidelity_moments(&guide_grad, wh))
            .unwrap_or_default();
        Ok(Self {
            observed,
            observed_max: observed.channel_max(),
            guide_grad,
            refl,
            fid,
            fid_moments,
            params,
            tau,
            sigma,
            operator_norm,
        })
    }

    pub fn params(&self) -> &SolverParams<T> {
        &self.params
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Power-method estimate of the stacked operator norm.
    pub fn operator_norm(&self) -> T {
        self.operator_norm
    }

    pub fn reflectance_weights(&self) -> &NLWeights<T> {
        &self.refl
    }

    pub fn fidelity_weights(&self) -> Option<&NLGradWeights<T>> {
        self.fid.as_deref()
    }

    pub fn guide_grad(&self) -> &GradField<T> {
        &self.guide_grad
    }

    /// `L⁰ = max_k Ĩ_k`, `R⁰ = Ĩ/(L⁰+ε)` clamped, `N⁰ = 0`, zero duals.
    pub fn init_state(&self) -> DecompositionState<T> {
        let img = self.observed;
        let (w, h, c, m) = (img.width(), img.height(), img.channels(), img.pixels());
        let l0 = self.observed_max.clone();
        let mut r0 = img.clone();
        for k in 0..c {
            for (v, &l) in r0.channel_mut(k).iter_mut().zip(l0.as_slice()) {
                *v = (*v / (l + self.params.epsilon)).max(T::zero()).min(T::one());
            }
        }
        DecompositionState {
            r: r0.clone(),
            r_tilde: r0.clone(),
            r_bar: r0,
            l: l0.clone(),
            l_tilde: l0.clone(),
            l_bar: l0,
            n: ColorImage::zeros(w, h, c),
            p: NLField::zeros(c, m, self.refl.len()),
            q: self.fid.as_ref().map(|f| NLGradFidField::zeros(c, m, f.len())),
            o: GradField::zeros(w, h, 1),
            iter: 0,
        }
    }

    /// `p ← P_α(p + σ ∇_w R̄)`, projecting each pixel's `(channel, offset)`
    /// slice onto the 2-norm ball of radius `α`.
    pub fn dual_step_p(&self, state: &mut DecompositionState<T>) {
        let w: &Stencil<T> = self.refl.stencil();
        let (m, k) = (w.pixels(), w.len());
        let channels = state.p.channels();
        let sigma = self.sigma;
        let r_bar = &state.r_bar;
        // accumulate
        state
            .p
            .as_mut_slice()
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(ci, row)| {
                let (c, i) = (ci / m, ci % m);
                let plane = r_bar.channel(c);
                let ui = plane[i];
                let sw = w.sqrt_row(i);
                for (o, v) in row.iter_mut().enumerate() {
                    if let Some(j) = w.neighbor(i, o) {
                        *v += sigma * sw[o] * (ui - plane[j]);
                    }
                }
            });
        project_nl_field(&mut state.p, self.params.alpha, channels);
    }

    /// `q ← μ (q + σ F(∇R̄, ∇Î)) / (μ + σ)` elementwise.
    pub fn dual_step_q(&self, state: &mut DecompositionState<T>) {
        let (Some(wh), Some(q)) = (self.fid.as_deref(), state.q.as_mut()) else {
            return;
        };
        let g = grad(&state.r_bar);
        let (m, k) = (wh.pixels(), wh.len());
        let (mu, sigma) = (self.params.mu, self.sigma);
        let scale = mu / (mu + sigma);
        let guide = &self.guide_grad;
        q.as_mut_slice()
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(n, row)| {
                let i = n % m;
                let ct = n / m;
                let (c, t) = (ct / 2, ct % 2);
                let stencil = wh.direction(t);
                let gr = g.component(c, t)[i];
                let gg = guide.component(c, t);
                let sw = stencil.sqrt_row(i);
                for (o, v) in row.iter_mut().enumerate() {
                    let fwd = match stencil.neighbor(i, o) {
                        Some(j) => sw[o] * (gr - gg[j]),
                        None => T::zero(),
                    };
                    *v = scale * (*v + sigma * fwd);
                }
            });
    }

    /// `o ← P_β(o + σ ∇L̄)` per pixel. No-op under the Tikhonov prior.
    pub fn dual_step_o(&self, state: &mut DecompositionState<T>) {
        if self.params.illum_prior != IllumPrior::Tv {
            return;
        }
        let g = grad_scalar(&state.l_bar);
        let sigma = self.sigma;
        let beta = self.params.beta;
        let m = g.pixels();
        let data = state.o.as_mut_slice();
        let gd = g.as_slice();
        for i in 0..m {
            let a = data[i] + sigma * gd[i];
            let b = data[m + i] + sigma * gd[m + i];
            let norm = (a * a + b * b).sqrt();
            let s = beta / norm.max(beta);
            data[i] = a * s;
            data[m + i] = b * s;
        }
    }

    /// Proximal centre of the R-step: `R̃ⁿ + τ div_w p + τ d̂iv_ŵ q`.
    pub fn reflectance_center(&self, state: &DecompositionState<T>) -> ColorImage<T> {
        let img = self.observed;
        let mut v = ColorImage::zeros(img.width(), img.height(), img.channels());
        nl_div_into(&state.p, self.refl.stencil(), &mut v);
        if let (Some(wh), Some(q)) = (self.fid.as_deref(), state.q.as_ref()) {
            let extra = nlgf_adjoint(q, wh).expect("dual sized by init_state");
            for (a, &b) in v.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                *a += b;
            }
        }
        let tau = self.tau;
        for (a, &r) in v.as_mut_slice().iter_mut().zip(state.r_tilde.as_slice()) {
            *a = r + tau * *a;
        }
        v
    }

    /// Exact minimizer of `½‖R∘L + N − Ĩ‖² + (1/2τ)‖R − v‖²` with `L`, `N`
    /// frozen, then clamp and extrapolation.
    pub fn primal_step_r(&self, state: &mut DecompositionState<T>) {
        let v = self.reflectance_center(state);
        let tau = self.tau;
        let img = self.observed;
        let m = img.pixels();
        let l = state.l_tilde.as_slice();
        let mut r = v;
        for (idx, x) in r.as_mut_slice().iter_mut().enumerate() {
            let i = idx % m;
            let li = l[i];
            let resid = state.n.as_slice()[idx] - img.as_slice()[idx];
            *x = (*x - tau * li * resid) / (T::one() + tau * li * li);
        }
        let two = T::lit(2.0);
        let mut r_bar = state.r_bar.clone();
        for ((bar, &new), old) in r_bar
            .as_mut_slice()
            .iter_mut()
            .zip(r.as_slice())
            .zip(state.r_tilde.as_mut_slice())
        {
            let clamped = new.max(T::zero()).min(T::one());
            *bar = two * clamped - *old;
            *old = clamped;
        }
        state.r = r;
        state.r_bar = r_bar;
    }

    /// Proximal centre of the L-step: `L̃ⁿ + τ div o` (TV) or
    /// `L̃ⁿ + τβ div ∇L̃ⁿ` (Tikhonov).
    pub fn illumination_center(&self, state: &DecompositionState<T>) -> ScalarField<T> {
        let tau = self.tau;
        let d = match self.params.illum_prior {
            IllumPrior::Tv => div_scalar(&state.o).expect("one-channel dual"),
            IllumPrior::Tikhonov => {
                let beta = self.params.beta;
                div_scalar(&grad_scalar(&state.l_tilde))
                    .expect("one channel")
                    .map(|v| beta * v)
            }
        };
        let mut out = state.l_tilde.clone();
        for (a, &b) in out.as_mut_slice().iter_mut().zip(d.as_slice()) {
            *a += tau * b;
        }
        out
    }

    /// Exact minimizer of `½‖R∘L + N − Ĩ‖² + (1/2τ)‖L − v‖²` with `R` (the
    /// fresh clamped iterate) and `N` frozen, then clamp and extrapolation.
    pub fn primal_step_l(&self, state: &mut DecompositionState<T>) {
        let v = self.illumination_center(state);
        let tau = self.tau;
        let img = self.observed;
        let (c, m) = (img.channels(), img.pixels());
        let r = state.r_tilde.as_slice();
        let n = state.n.as_slice();
        let obs = img.as_slice();
        let mut l = v;
        for (i, x) in l.as_mut_slice().iter_mut().enumerate() {
            let mut cross = T::zero();
            let mut sq = T::zero();
            for k in 0..c {
                let idx = k * m + i;
                cross += r[idx] * (n[idx] - obs[idx]);
                sq += r[idx] * r[idx];
            }
            *x = (*x - tau * cross) / (T::one() + tau * sq);
        }
        let two = T::lit(2.0);
        let floor = self.observed_max.as_slice();
        let bar = state.l_bar.as_mut_slice();
        let tilde = state.l_tilde.as_mut_slice();
        for i in 0..m {
            let clamped = l.as_slice()[i].max(floor[i]);
            bar[i] = two * clamped - tilde[i];
            tilde[i] = clamped;
        }
        state.l = l;
    }

    /// `N = (Ĩ − L̃∘R̃)/(1 + λ)`; keeps `N = 0` when the noise term is off.
    pub fn update_n(&self, state: &mut DecompositionState<T>) {
        if !self.params.noise_term {
            return;
        }
        let img = self.observed;
        let m = img.pixels();
        let denom = T::one() + self.params.lambda;
        let l = state.l_tilde.as_slice();
        let r = state.r_tilde.as_slice();
        for (idx, v) in state.n.as_mut_slice().iter_mut().enumerate() {
            *v = (img.as_slice()[idx] - l[idx % m] * r[idx]) / denom;
        }
    }

    /// Energy terms at `(R̃, L̃, N)`.
    pub fn energy_terms(&self, state: &DecompositionState<T>) -> EnergyTerms<T> {
        self.energy_terms_at(&state.r_tilde, &state.l_tilde, &state.n)
    }

    pub fn energy(&self, state: &DecompositionState<T>) -> T {
        self.energy_terms(state).total()
    }

    /// Energy terms at arbitrary `(R, L, N)`.
    pub fn energy_terms_at(&self, r: &ColorImage<T>, l: &ScalarField<T>, n: &ColorImage<T>) -> EnergyTerms<T> {
        let p = &self.params;
        let half = T::lit(0.5);
        let img = self.observed;
        let m = img.pixels();

        let data = half
            * img
                .as_slice()
                .iter()
                .enumerate()
                .map(|(idx, &obs)| {
                    let d = r.as_slice()[idx] * l.as_slice()[idx % m] + n.as_slice()[idx] - obs;
                    d * d
                })
                .fold(T::zero(), |a, v| a + v);

        let w = self.refl.stencil();
        let per_pixel: Vec<T> = (0..m)
            .into_par_iter()
            .map(|i| {
                let sw = w.sqrt_row(i);
                let mut s = T::zero();
                for c in 0..r.channels() {
                    let plane = r.channel(c);
                    for (o, &q) in sw.iter().enumerate() {
                        if let Some(j) = w.neighbor(i, o) {
                            let d = q * (plane[i] - plane[j]);
                            s += d * d;
                        }
                    }
                }
                s.sqrt()
            })
            .collect();
        let reflectance = p.alpha * per_pixel.iter().fold(T::zero(), |a, &v| a + v);

        let gl = grad_scalar(l);
        let (gx, gy) = (gl.component(0, 0), gl.component(0, 1));
        let illumination = match p.illum_prior {
            IllumPrior::Tv => {
                half * p.beta
                    * gx.iter()
                        .zip(gy)
                        .fold(T::zero(), |a, (&x, &y)| a + (x * x + y * y).sqrt())
            }
            IllumPrior::Tikhonov => {
                half * p.beta * gx.iter().zip(gy).fold(T::zero(), |a, (&x, &y)| a + x * x + y * y)
            }
        };

        let noise = if p.noise_term {
            half * p.lambda * n.as_slice().iter().fold(T::zero(), |a, &v| a + v * v)
        } else {
            T::zero()
        };

        let fidelity = if self.fid.is_some() {
            // Σ_o ŵ (g − ĝ_j)² = S g² − 2 A g + B, exact up to rounding
            let g = grad(r);
            let sum = g
                .as_slice()
                .iter()
                .zip(&self.fid_moments)
                .fold(T::zero(), |acc, (&g, &[s, a, b])| acc + (s * g * g - T::lit(2.0) * a * g + b).max(T::zero()));
            half * p.mu * sum
        } else {
            T::zero()
        };

        EnergyTerms {
            data,
            reflectance,
            illumination,
            noise,
            fidelity,
        }
    }

    /// Largest excess of a dual slice norm over its radius.
    pub fn max_dual_violation(&self, state: &DecompositionState<T>) -> T {
        let alpha = self.params.alpha;
        let mut worst = T::zero();
        for i in 0..state.p.pixels() {
            worst = worst.max(state.p.pixel_norm(i) - alpha);
        }
        let m = state.o.pixels();
        let od = state.o.as_slice();
        for i in 0..m {
            let n = (od[i] * od[i] + od[m + i] * od[m + i]).sqrt();
            worst = worst.max(n - self.params.beta);
        }
        worst
    }

    /// Samples of `R̃` outside `[0,1]` plus pixels of `L̃` below `max_k Ĩ`.
    pub fn primal_violations(&self, state: &DecompositionState<T>) -> usize {
        let r = state
            .r_tilde
            .as_slice()
            .iter()
            .filter(|&&v| !(v >= T::zero() && v <= T::one()))
            .count();
        let l = state
            .l_tilde
            .as_slice()
            .iter()
            .zip(self.observed_max.as_slice())
            .filter(|(&l, &f)| !(l >= f))
            .count();
        r + l
    }

    /// One full iteration in the order p, q, o, R, L, N.
    pub fn iterate(&self, state: &mut DecompositionState<T>) -> Result<()> {
        self.dual_step_p(state);
        self.dual_step_q(state);
        self.dual_step_o(state);
        self.primal_step_r(state);
        self.primal_step_l(state);
        self.update_n(state);
        state.iter += 1;
        let it = state.iter;
        let check = |ok: bool, field: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Divergence { iteration: it, field })
            }
        };
        check(state.r.is_finite(), "R")?;
        check(state.l.as_slice().iter().all(|v| v.is_finite()), "L")?;
        check(state.n.is_finite(), "N")?;
        check(state.p.as_slice().iter().all(|v| v.is_finite()), "p")?;
        check(state.o.as_slice().iter().all(|v| v.is_finite()), "o")?;
        if let Some(q) = &state.q {
            check(q.as_slice().iter().all(|v| v.is_finite()), "q")?;
        }
        Ok(())
    }

    /// Runs the iteration from [`Problem::init_state`] until `max_iters` or
    /// the relative change of `(R̃, L̃)` drops below `rel_tol`.
    pub fn solve(&self) -> Result<Decomposition<T>> {
        self.solve_with(|_, _| {})
    }

    /// [`Problem::solve`] with a callback invoked after every iteration.
    pub fn solve_with(
        &self,
        mut observe: impl FnMut(&DecompositionState<T>, &IterationRecord),
    ) -> Result<Decomposition<T>> {
        let mut state = self.init_state();
        let initial_energy = self.energy(&state).to_f64_lossy();
        let mut records = Vec::with_capacity(self.params.max_iters);
        let mut converged = false;
        let tiny = T::lit(1e-300_f64.max(f64::from(f32::MIN_POSITIVE)));
        for _ in 0..self.params.max_iters {
            let r_prev = state.r_tilde.clone();
            let l_prev = state.l_tilde.clone();
            self.iterate(&mut state)?;
            let dr = relative_change(r_prev.as_slice(), state.r_tilde.as_slice(), tiny);
            let dl = relative_change(l_prev.as_slice(), state.l_tilde.as_slice(), tiny);
            let rel = dr.max(dl);
            let record = IterationRecord {
                iter: state.iter,
                energy: self.energy(&state).to_f64_lossy(),
                rel_change: rel.to_f64_lossy(),
                max_dual_violation: self.max_dual_violation(&state).max(T::zero()).to_f64_lossy(),
                primal_violations: self.primal_violations(&state),
            };
            observe(&state, &record);
            records.push(record);
            if rel < self.params.rel_tol {
                converged = true;
                break;
            }
        }
        Ok(Decomposition {
            reflectance: state.r_tilde,
            illumination: state.l_tilde,
            noise: state.n,
            diagnostics: Diagnostics {
                initial_energy,
                records,
                converged,
                tau: self.tau.to_f64_lossy(),
                sigma: self.sigma.to_f64_lossy(),
                operator_norm: self.operator_norm.to_f64_lossy(),
            },
        })
    }
}

fn fidelity_moments<T: Real>(guide_grad: &GradField<T>, wh: &NLGradWeights<T>) -> Vec<[T; 3]> {
    let m = guide_grad.pixels();
    (0..guide_grad.channels() * 2 * m)
        .into_par_iter()
        .map(|n| {
            let (i, ct) = (n % m, n / m);
            let (c, t) = (ct / 2, ct % 2);
            let stencil = wh.direction(t);
            let gg = guide_grad.component(c, t);
            let mut out = [T::zero(); 3];
            for (o, &w) in stencil.row(i).iter().enumerate() {
                out[0] += w;
                if let Some(j) = stencil.neighbor(i, o) {
                    out[1] += w * gg[j];
                    out[2] += w * gg[j] * gg[j];
                }
            }
            out
        })
        .collect()
}

fn relative_change<T: Real>(prev: &[T], next: &[T], tiny: T) -> T {
    let diff = prev
        .iter()
        .zip(next)
        .fold(T::zero(), |a, (&x, &y)| a + (y - x) * (y - x))
        .sqrt();
    diff / norm2(prev).max(tiny)
}

/// Scales each pixel's `(channel, offset)` slice onto the `radius`-ball.
fn project_nl_field<T: Real>(p: &mut NLField<T>, radius: T, channels: usize) {
    let m = p.pixels();
    let scales: Vec<T> = (0..m)
        .into_par_iter()
        .map(|i| radius / p.pixel_norm(i).max(radius))
        .collect();
    let k = p.stencil_len();
    p.as_mut_slice()
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(ci, row)| {
            let s = scales[ci % m];
            if s < T::one() {
                for v in row.iter_mut() {
                    *v *= s;
                }
            }
        });
    debug_assert_eq!(p.channels(), channels);
}
