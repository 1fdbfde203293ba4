//! Linear operators of the decomposition energy.
//!
//! Sign convention: every divergence here is the *negative adjoint* of its
//! gradient, `⟨∇u, p⟩ = −⟨u, div p⟩`. That holds for the local pair
//! ([`grad`]/[`div`]), the nonlocal pair ([`nl_grad`]/[`nl_div`]) and the
//! gradient-fidelity pair ([`nlgf_forward`] composed with [`grad`], against
//! [`nlgf_adjoint`]). With it, the primal updates read as descent steps
//! `x + τ·div(dual)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure_same_grid, Error, Result};
use crate::image::{ColorImage, GradField, ScalarField};
use crate::scalar::{dot, norm2, Real};
use crate::weights::{NLGradWeights, NLWeights, Stencil};

/// Nonlocal gradient of a `C x M` image: `C x M x K` values, laid out
/// `[channel][pixel][offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NLField<T> {
    channels: usize,
    pixels: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Real> NLField<T> {
    pub fn zeros(channels: usize, pixels: usize, k: usize) -> Self {
        Self {
            channels,
            pixels,
            k,
            data: vec![T::zero(); channels * pixels * k],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.pixels
    }

    /// Stencil size `K`.
    #[inline]
    pub fn stencil_len(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, o: usize) -> T {
        self.data[(c * self.pixels + i) * self.k + o]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, o: usize, v: T) {
        self.data[(c * self.pixels + i) * self.k + o] = v;
    }

    /// Entries of channel `c` at pixel `i`, one per offset.
    pub fn entries(&self, c: usize, i: usize) -> &[T] {
        let start = (c * self.pixels + i) * self.k;
        &self.data[start..start + self.k]
    }

    pub fn entries_mut(&mut self, c: usize, i: usize) -> &mut [T] {
        let start = (c * self.pixels + i) * self.k;
        &mut self.data[start..start + self.k]
    }

    /// 2-norm of the slice over channels and offsets at pixel `i`.
    pub fn pixel_norm(&self, i: usize) -> T {
        (0..self.channels)
            .map(|c| self.entries(c, i).iter().fold(T::zero(), |a, &v| a + v * v))
            .fold(T::zero(), |a, v| a + v)
            .sqrt()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Gradient-fidelity field: `C x M x K̂ x 2` values, laid out
/// `[channel][direction][pixel][offset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NLGradFidField<T> {
    channels: usize,
    pixels: usize,
    k: usize,
    data: Vec<T>,
}

impl<T: Real> NLGradFidField<T> {
    pub fn zeros(channels: usize, pixels: usize, k: usize) -> Self {
        Self {
            channels,
            pixels,
            k,
            data: vec![T::zero(); channels * 2 * pixels * k],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.pixels
    }

    #[inline]
    pub fn stencil_len(&self) -> usize {
        self.k
    }

    #[inline]
    fn index(&self, c: usize, i: usize, o: usize, t: usize) -> usize {
        ((c * 2 + t) * self.pixels + i) * self.k + o
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, o: usize, t: usize) -> T {
        self.data[self.index(c, i, o, t)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, o: usize, t: usize, v: T) {
        let n = self.index(c, i, o, t);
        self.data[n] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

fn grad_planes<T: Real>(width: usize, height: usize, planes: &[T], out: &mut [T]) {
    let m = width * height;
    out.par_chunks_mut(2 * m)
        .zip(planes.par_chunks(m))
        .for_each(|(g, u)| {
            let (gx, gy) = g.split_at_mut(m);
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    gx[i] = if x + 1 < width { u[i + 1] - u[i] } else { T::zero() };
                    gy[i] = if y + 1 < height { u[i + width] - u[i] } else { T::zero() };
                }
            }
        });
}

fn div_planes<T: Real>(width: usize, height: usize, field: &[T], out: &mut [T]) {
    let m = width * height;
    out.par_chunks_mut(m)
        .zip(field.par_chunks(2 * m))
        .for_each(|(d, g)| {
            let (gx, gy) = g.split_at(m);
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    let mut v = T::zero();
                    if x + 1 < width {
                        v += gx[i];
                    }
                    if x > 0 {
                        v -= gx[i - 1];
                    }
                    if y + 1 < height {
                        v += gy[i];
                    }
                    if y > 0 {
                        v -= gy[i - width];
                    }
                    d[i] = v;
                }
            }
        });
}

/// Forward differences with Neumann boundary (zero on the last column/row).
pub fn grad<T: Real>(u: &ColorImage<T>) -> GradField<T> {
    let mut g = GradField::zeros(u.width(), u.height(), u.channels());
    grad_planes(u.width(), u.height(), u.as_slice(), g.as_mut_slice());
    g
}

/// [`grad`] of a single-channel field.
pub fn grad_scalar<T: Real>(u: &ScalarField<T>) -> GradField<T> {
    let mut g = GradField::zeros(u.width(), u.height(), 1);
    grad_planes(u.width(), u.height(), u.as_slice(), g.as_mut_slice());
    g
}

/// Backward-difference divergence, `div = −grad*`.
pub fn div<T: Real>(p: &GradField<T>) -> ColorImage<T> {
    let mut out = ColorImage::zeros(p.width(), p.height(), p.channels());
    div_planes(p.width(), p.height(), p.as_slice(), out.as_mut_slice());
    out
}

/// [`div`] of a single-channel gradient field.
pub fn div_scalar<T: Real>(p: &GradField<T>) -> Result<ScalarField<T>> {
    if p.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "scalar divergence of a {}-channel field",
            p.channels()
        )));
    }
    let mut out = vec![T::zero(); p.pixels()];
    div_planes(p.width(), p.height(), p.as_slice(), &mut out);
    ScalarField::from_vec(p.width(), p.height(), out)
}

/// `(∇_w u)_{c,i,o} = √w_{i,o} (u_{c,i} − u_{c,j})` with `j` the pixel at
/// offset `o` from `i` (zero when `j` is outside the image).
pub fn nl_grad<T: Real>(u: &ColorImage<T>, w: &NLWeights<T>) -> Result<NLField<T>> {
    ensure_same_grid("nl_grad", u.dims(), w.dims())?;
    let (m, k) = (u.pixels(), w.len());
    let mut out = NLField::zeros(u.channels(), m, k);
    nl_grad_into(u, w.stencil(), &mut out);
    Ok(out)
}

pub(crate) fn nl_grad_into<T: Real>(u: &ColorImage<T>, w: &Stencil<T>, out: &mut NLField<T>) {
    let (m, k) = (u.pixels(), w.len());
    out.data
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(ci, row)| {
            let (c, i) = (ci / m, ci % m);
            let plane = u.channel(c);
            let ui = plane[i];
            let sw = w.sqrt_row(i);
            for (o, slot) in row.iter_mut().enumerate() {
                *slot = match w.neighbor(i, o) {
                    Some(j) => sw[o] * (ui - plane[j]),
                    None => T::zero(),
                };
            }
        });
}

/// Negative adjoint of [`nl_grad`]:
/// `(div_w p)_{c,i} = −Σ_o (√w_{i,o} p_{c,i,o} − √w_{s,o} p_{c,s,o})` where
/// `s` is the pixel whose offset `o` lands on `i`.
pub fn nl_div<T: Real>(p: &NLField<T>, w: &NLWeights<T>) -> Result<ColorImage<T>> {
    if p.pixels() != w.pixels() || p.stencil_len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "nl_div: field {}x{} vs weights {}x{}",
            p.pixels(),
            p.stencil_len(),
            w.pixels(),
            w.len()
        )));
    }
    let (width, height) = w.dims();
    let mut out = ColorImage::zeros(width, height, p.channels());
    nl_div_into(p, w.stencil(), &mut out);
    Ok(out)
}

pub(crate) fn nl_div_into<T: Real>(p: &NLField<T>, w: &Stencil<T>, out: &mut ColorImage<T>) {
    let m = p.pixels();
    out.as_mut_slice()
        .par_iter_mut()
        .enumerate()
        .for_each(|(ci, slot)| {
            let (c, i) = (ci / m, ci % m);
            let sw = w.sqrt_row(i);
            let own = p.entries(c, i);
            let mut v = T::zero();
            for o in 0..sw.len() {
                v += sw[o] * own[o];
                if let Some(s) = w.source(i, o) {
                    v -= w.sqrt_weight(s, o) * p.get(c, s, o);
                }
            }
            *slot = -v;
        });
}

/// Gradient-fidelity map
/// `√ŵ_{i,o,t} ((∇R)_{c,i,t} − (∇Î)_{c,j,t})`, affine in `∇R`.
pub fn nlgf_forward<T: Real>(
    grad_r: &GradField<T>,
    grad_guide: &GradField<T>,
    w: &NLGradWeights<T>,
) -> Result<NLGradFidField<T>> {
    ensure_same_grid("nlgf_forward", grad_r.dims(), grad_guide.dims())?;
    if grad_r.channels() != grad_guide.channels() {
        return Err(Error::DimensionMismatch("nlgf_forward: channel counts differ".into()));
    }
    ensure_same_grid("nlgf_forward weights", grad_r.dims(), w.dims())?;
    let mut out = NLGradFidField::zeros(grad_r.channels(), grad_r.pixels(), w.len());
    nlgf_forward_into(grad_r, Some(grad_guide), w, &mut out);
    Ok(out)
}

/// Linear part of [`nlgf_forward`] (guide gradient taken as zero).
pub fn nlgf_linear<T: Real>(grad_r: &GradField<T>, w: &NLGradWeights<T>) -> Result<NLGradFidField<T>> {
    ensure_same_grid("nlgf_linear", grad_r.dims(), w.dims())?;
    let mut out = NLGradFidField::zeros(grad_r.channels(), grad_r.pixels(), w.len());
    nlgf_forward_into(grad_r, None, w, &mut out);
    Ok(out)
}

pub(crate) fn nlgf_forward_into<T: Real>(
    grad_r: &GradField<T>,
    grad_guide: Option<&GradField<T>>,
    w: &NLGradWeights<T>,
    out: &mut NLGradFidField<T>,
) {
    let (m, k) = (grad_r.pixels(), w.len());
    out.data
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(n, row)| {
            let i = n % m;
            let ct = n / m;
            let (c, t) = (ct / 2, ct % 2);
            let stencil = w.direction(t);
            let gr = grad_r.component(c, t)[i];
            let sw = stencil.sqrt_row(i);
            match grad_guide {
                Some(g) => {
                    let gg = g.component(c, t);
                    for (o, slot) in row.iter_mut().enumerate() {
                        *slot = match stencil.neighbor(i, o) {
                            Some(j) => sw[o] * (gr - gg[j]),
                            None => T::zero(),
                        };
                    }
                }
                None => {
                    for (o, slot) in row.iter_mut().enumerate() {
                        *slot = sw[o] * gr;
                    }
                }
            }
        });
}

/// Negative adjoint of `nlgf_linear ∘ grad`: collapses the offsets,
/// `v_{c,i,t} = Σ_o √ŵ_{i,o,t} q_{c,i,o,t}`, then takes [`div`] of `v`.
pub fn nlgf_adjoint<T: Real>(q: &NLGradFidField<T>, w: &NLGradWeights<T>) -> Result<ColorImage<T>> {
    if q.pixels() != w.pixels() || q.stencil_len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "nlgf_adjoint: field {}x{} vs weights {}x{}",
            q.pixels(),
            q.stencil_len(),
            w.pixels(),
            w.len()
        )));
    }
    Ok(div(&nlgf_collapse(q, w)))
}

/// `v_{c,i,t} = Σ_o √ŵ_{i,o,t} q_{c,i,o,t}`.
pub(crate) fn nlgf_collapse<T: Real>(q: &NLGradFidField<T>, w: &NLGradWeights<T>) -> GradField<T> {
    let (width, height) = w.dims();
    let (m, k) = (q.pixels(), q.stencil_len());
    let mut v = GradField::zeros(width, height, q.channels());
    v.as_mut_slice()
        .par_iter_mut()
        .enumerate()
        .for_each(|(n, slot)| {
            let i = n % m;
            let t = (n / m) % 2;
            let sw = w.direction(t).sqrt_row(i);
            *slot = dot(sw, &q.data[n * k..(n + 1) * k]);
        });
    v
}

/// Stacked linear operator acting on `(R, L)`:
/// `K(R, L) = (∇_w R, F(∇R), ∇L)` where `F` is the linear part of the
/// gradient-fidelity map. Blocks can be switched off to match the active
/// energy terms.
#[derive(Debug, Clone, Copy)]
pub struct StackedOperator<'a, T> {
    pub reflectance: &'a NLWeights<T>,
    pub fidelity: Option<&'a NLGradWeights<T>>,
    pub illumination: bool,
}

impl<'a, T: Real> StackedOperator<'a, T> {
    /// `K*K` applied to `(R, L)`, streamed pixel by pixel. `fid_rows` holds
    /// `Σ_o ŵ_{i,o,t}` per direction: the linear fidelity map copies `∇R`
    /// into every offset, so its normal operator only rescales `∇R`.
    fn normal(&self, r: &ColorImage<T>, l: &ScalarField<T>, fid_rows: Option<&[Vec<T>; 2]>) -> (ColorImage<T>, ScalarField<T>) {
        let w = self.reflectance.stencil();
        let (m, k) = (w.pixels(), w.len());
        let mut out_r = ColorImage::zeros(r.width(), r.height(), r.channels());
        out_r
            .as_mut_slice()
            .par_iter_mut()
            .enumerate()
            .for_each(|(ci, slot)| {
                let (c, i) = (ci / m, ci % m);
                let u = r.channel(c);
                let ui = u[i];
                let row = w.row(i);
                let mut v = T::zero();
                for o in 0..k {
                    if let Some(j) = w.neighbor(i, o) {
                        v += row[o] * (ui - u[j]);
                    }
                    if let Some(s) = w.source(i, o) {
                        v += w.weight(s, o) * (ui - u[s]);
                    }
                }
                *slot = v;
            });
        if let Some(rows) = fid_rows {
            let mut g = grad(r);
            for c in 0..r.channels() {
                for (t, scale) in rows.iter().enumerate() {
                    for (v, &s) in g.component_mut(c, t).iter_mut().zip(scale) {
                        *v *= s;
                    }
                }
            }
            for (o, b) in out_r.as_mut_slice().iter_mut().zip(div(&g).as_slice()) {
                *o -= *b;
            }
        }
        let out_l = if self.illumination {
            div_scalar(&grad_scalar(l)).expect("scalar").map(|v| -v)
        } else {
            ScalarField::filled(l.width(), l.height(), T::zero())
        };
        (out_r, out_l)
    }

    /// Power-method estimate of `‖K‖` from a seeded random start.
    pub fn norm_estimate(&self, channels: usize, iterations: usize, seed: u64) -> T {
        let (width, height) = self.reflectance.dims();
        let fid_rows = self.fidelity.map(|wh| {
            [0, 1].map(|t| {
                let d = wh.direction(t);
                (0..d.pixels()).map(|i| d.row(i).iter().fold(T::zero(), |a, &v| a + v)).collect::<Vec<T>>()
            })
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = ColorImage::from_fn(width, height, channels, |_, _, _| {
            T::lit(rng.random::<f64>() - 0.5)
        });
        let mut l = ScalarField::from_vec(
            width,
            height,
            (0..width * height).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect(),
        )
        .expect("sized");
        let mut estimate = T::zero();
        for _ in 0..iterations.max(1) {
            let n = (norm2(r.as_slice()).powi(2) + norm2(l.as_slice()).powi(2)).sqrt();
            if n == T::zero() {
                return T::zero();
            }
            let inv = T::one() / n;
            r = r.map(|v| v * inv);
            l = l.map(|v| v * inv);
            let (nr, nl) = self.normal(&r, &l, fid_rows.as_ref());
            // Rayleigh quotient of K*K at the unit vector
            estimate = (dot(r.as_slice(), nr.as_slice()) + dot(l.as_slice(), nl.as_slice())).max(T::zero()).sqrt();
            r = nr;
            l = nl;
        }
        estimate
    }
}
