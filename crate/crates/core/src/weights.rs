//! Nonlocal weight stencils.
//!
//! A [`Stencil`] stores, for every pixel `i`, one weight per window offset.
//! Offsets that leave the image carry weight zero, so every pixel row has the
//! same length `K` and the operator loops never branch on the window shape.
//!
//! Two families are built here: intensity-patch weights for the nonlocal TV
//! prior on the reflectance ([`build_intensity_weights`]) and per-direction
//! gradient-patch weights for the gradient fidelity term
//! ([`build_gradient_weights`]).

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorImage, GradField};
use crate::scalar::Real;

/// Window offset `(dx, dy)`.
pub type Offset = (isize, isize);

/// Offsets of the `(2r+1) x (2r+1)` window, row-major (`dy` outer).
pub fn window_offsets(radius: usize) -> Vec<Offset> {
    let r = radius as isize;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect()
}

/// Half-sample symmetric reflection of `p` into `0..n`.
#[inline]
pub fn mirror_index(p: isize, n: usize) -> usize {
    let n = n as isize;
    let r = p.rem_euclid(2 * n);
    (if r >= n { 2 * n - 1 - r } else { r }) as usize
}

#[inline]
fn shifted(x: usize, y: usize, (dx, dy): Offset, width: usize, height: usize) -> Option<usize> {
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
        None
    } else {
        Some(ny as usize * width + nx as usize)
    }
}

/// Per-pixel weights over a fixed list of offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil<T> {
    width: usize,
    height: usize,
    offsets: Vec<Offset>,
    weights: Vec<T>,
    sqrt_weights: Vec<T>,
    /// `[pixel][offset]` neighbour and reverse-neighbour indices,
    /// [`NONE`] where the offset leaves the image.
    targets: Vec<u32>,
    sources: Vec<u32>,
}

const NONE: u32 = u32::MAX;

fn index_tables(width: usize, height: usize, offsets: &[Offset]) -> (Vec<u32>, Vec<u32>) {
    let k = offsets.len();
    let mut targets = vec![NONE; width * height * k];
    let mut sources = vec![NONE; width * height * k];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            for (o, &(dx, dy)) in offsets.iter().enumerate() {
                if let Some(j) = shifted(x, y, (dx, dy), width, height) {
                    targets[i * k + o] = j as u32;
                }
                if let Some(s) = shifted(x, y, (-dx, -dy), width, height) {
                    sources[i * k + o] = s as u32;
                }
            }
        }
    }
    (targets, sources)
}

impl<T: Real> Stencil<T> {
    fn assemble(width: usize, height: usize, offsets: Vec<Offset>, weights: Vec<T>) -> Self {
        assert!(width * height < NONE as usize, "image too large for stencil indices");
        let sqrt_weights = weights.iter().map(|w| w.sqrt()).collect();
        let (targets, sources) = index_tables(width, height, &offsets);
        Self {
            width,
            height,
            offsets,
            weights,
            sqrt_weights,
            targets,
            sources,
        }
    }

    /// Wraps `weights` laid out `[pixel][offset]`. Weights must be finite,
    /// non-negative, and zero wherever the offset leaves the image.
    pub fn new(width: usize, height: usize, offsets: Vec<Offset>, weights: Vec<T>) -> Result<Self> {
        let k = offsets.len();
        if k == 0 || weights.len() != width * height * k {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {width}x{height} pixels and {k} offsets",
                weights.len()
            )));
        }
        for i in 0..width * height {
            let (x, y) = (i % width, i / width);
            for (o, &off) in offsets.iter().enumerate() {
                let w = weights[i * k + o];
                if !w.is_finite() || w < T::zero() {
                    return Err(Error::InvalidParameter(format!(
                        "weight {w} at pixel {i}, offset {off:?}"
                    )));
                }
                if shifted(x, y, off, width, height).is_none() && w != T::zero() {
                    return Err(Error::InvalidParameter(format!(
                        "nonzero weight leaves the image at pixel {i}, offset {off:?}"
                    )));
                }
            }
        }
        Ok(Self::assemble(width, height, offsets, weights))
    }

    /// Unit weights on the `+x` and `+y` neighbours: the nonlocal gradient
    /// over this stencil is the (negated) forward-difference gradient.
    pub fn forward_differences(width: usize, height: usize) -> Self {
        let offsets = vec![(1, 0), (0, 1)];
        let mut weights = vec![T::zero(); width * height * 2];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                for (o, &off) in offsets.iter().enumerate() {
                    if shifted(x, y, off, width, height).is_some() {
                        weights[i * 2 + o] = T::one();
                    }
                }
            }
        }
        Self::new(width, height, offsets, weights).expect("valid by construction")
    }

    /// Single unit weight on the pixel itself.
    pub fn identity(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![(0, 0)], vec![T::one(); width * height])
            .expect("valid by construction")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Stencil size `K`.
    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    #[inline]
    pub fn weight(&self, i: usize, o: usize) -> T {
        self.weights[i * self.offsets.len() + o]
    }

    #[inline]
    pub fn sqrt_weight(&self, i: usize, o: usize) -> T {
        self.sqrt_weights[i * self.offsets.len() + o]
    }

    /// Weights of pixel `i`, one per offset.
    pub fn row(&self, i: usize) -> &[T] {
        let k = self.offsets.len();
        &self.weights[i * k..(i + 1) * k]
    }

    pub(crate) fn sqrt_row(&self, i: usize) -> &[T] {
        let k = self.offsets.len();
        &self.sqrt_weights[i * k..(i + 1) * k]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    /// Pixel reached from `i` through offset `o`, if inside the image.
    #[inline]
    pub fn neighbor(&self, i: usize, o: usize) -> Option<usize> {
        let j = self.targets[i * self.offsets.len() + o];
        (j != NONE).then_some(j as usize)
    }

    /// Pixel `s` with `neighbor(s, o) == Some(i)`, if inside the image.
    #[inline]
    pub fn source(&self, i: usize, o: usize) -> Option<usize> {
        let s = self.sources[i * self.offsets.len() + o];
        (s != NONE).then_some(s as usize)
    }
}

/// Intensity-patch weights for the nonlocal TV prior.
#[derive(Debug, Clone, PartialEq)]
pub struct NLWeights<T> {
    stencil: Stencil<T>,
    normalizers: Vec<T>,
}

impl<T: Real> NLWeights<T> {
    pub fn from_stencil(stencil: Stencil<T>, normalizers: Vec<T>) -> Result<Self> {
        if normalizers.len() != stencil.pixels() {
            return Err(Error::DimensionMismatch("normalizer count".into()));
        }
        Ok(Self {
            stencil,
            normalizers,
        })
    }

    /// Local TV stencil (see [`Stencil::forward_differences`]).
    pub fn local(width: usize, height: usize) -> Self {
        Self {
            stencil: Stencil::forward_differences(width, height),
            normalizers: vec![T::one(); width * height],
        }
    }

    pub fn stencil(&self) -> &Stencil<T> {
        &self.stencil
    }

    /// Normalizing factor `Γ_i` of each pixel.
    pub fn normalizers(&self) -> &[T] {
        &self.normalizers
    }
}

impl<T> std::ops::Deref for NLWeights<T> {
    type Target = Stencil<T>;
    fn deref(&self) -> &Stencil<T> {
        &self.stencil
    }
}

/// Gradient-patch weights, one stencil per gradient direction. Both
/// directions share the same offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct NLGradWeights<T> {
    directions: [Stencil<T>; 2],
    normalizers: [Vec<T>; 2],
}

impl<T: Real> NLGradWeights<T> {
    pub fn from_stencils(directions: [Stencil<T>; 2], normalizers: [Vec<T>; 2]) -> Result<Self> {
        let [a, b] = &directions;
        if a.dims() != b.dims() || a.offsets() != b.offsets() {
            return Err(Error::DimensionMismatch("direction stencils differ".into()));
        }
        if normalizers.iter().any(|n| n.len() != a.pixels()) {
            return Err(Error::DimensionMismatch("normalizer count".into()));
        }
        Ok(Self {
            directions,
            normalizers,
        })
    }

    /// Kronecker weights: the fidelity term degenerates to `‖∇R − ∇Î‖²`.
    pub fn local(width: usize, height: usize) -> Self {
        Self {
            directions: [Stencil::identity(width, height), Stencil::identity(width, height)],
            normalizers: [vec![T::one(); width * height], vec![T::one(); width * height]],
        }
    }

    #[inline]
    pub fn direction(&self, t: usize) -> &Stencil<T> {
        &self.directions[t]
    }

    pub fn normalizers(&self, t: usize) -> &[T] {
        &self.normalizers[t]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.directions[0].len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.directions[0].is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.directions[0].dims()
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.directions[0].pixels()
    }
}

/// Which image the intensity weights are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSource {
    /// The color-corrected observation.
    #[default]
    Corrected,
    /// The denoised color-corrected observation.
    Denoised,
}

/// Search/patch radii and filtering parameters of both weight families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightParams<T> {
    /// Search radius of the intensity weights.
    pub nu: usize,
    /// Patch radius of the intensity weights.
    pub kappa: usize,
    pub h_spt: T,
    pub h_sim: T,
    /// Search radius of the gradient weights.
    pub nu_hat: usize,
    /// Patch radius of the gradient weights.
    pub kappa_hat: usize,
    pub h_sim_hat: T,
    pub source: WeightSource,
}

impl<T: Real> Default for WeightParams<T> {
    fn default() -> Self {
        Self {
            nu: 5,
            kappa: 1,
            h_spt: T::lit(7.0),
            h_sim: T::lit(0.1),
            nu_hat: 5,
            kappa_hat: 1,
            h_sim_hat: T::lit(0.05),
            source: WeightSource::Corrected,
        }
    }
}

impl<T: Real> WeightParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 || self.nu_hat == 0 {
            return Err(Error::InvalidParameter("search radii must be >= 1".into()));
        }
        for (name, v) in [("h_spt", self.h_spt), ("h_sim", self.h_sim), ("h_sim_hat", self.h_sim_hat)] {
            // h_spt = inf disables the spatial term
            if !(v > T::zero()) || v.is_nan() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Checks the search windows fit inside a `width x height` image.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        for r in [self.nu, self.nu_hat] {
            let window = 2 * r + 1;
            if window > width.min(height) {
                return Err(Error::WindowTooLarge {
                    width,
                    height,
                    window,
                });
            }
        }
        Ok(())
    }
}

/// Samples of a planar `C x M` buffer, mirror-extended by `pad` pixels.
struct Padded<'a, T> {
    width: usize,
    height: usize,
    channels: usize,
    pad: usize,
    stride: usize,
    rows: usize,
    data: Vec<T>,
    _src: std::marker::PhantomData<&'a T>,
}

impl<'a, T: Real> Padded<'a, T> {
    fn new(img: &'a ColorImage<T>, pad: usize) -> Self {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let stride = w + 2 * pad;
        let rows = h + 2 * pad;
        let mut data = Vec::with_capacity(stride * rows * c);
        for k in 0..c {
            for py in 0..rows {
                let y = mirror_index(py as isize - pad as isize, h);
                for px in 0..stride {
                    let x = mirror_index(px as isize - pad as isize, w);
                    data.push(img.at(k, x, y));
                }
            }
        }
        Self {
            width: w,
            height: h,
            channels: c,
            pad,
            stride,
            rows,
            data,
            _src: std::marker::PhantomData,
        }
    }

    /// Patch distance between pixels `i` and `j`, both inside the image.
    #[inline]
    fn distance(&self, i: usize, j: usize, kappa: usize) -> T {
        let (xi, yi) = (i % self.width, i / self.width);
        let (xj, yj) = (j % self.width, j / self.width);
        let plane = self.stride * self.rows;
        let (pi, pj) = (self.pad + xi - kappa, self.pad + xj - kappa);
        let (qi, qj) = (self.pad + yi - kappa, self.pad + yj - kappa);
        let mut total = T::zero();
        for zy in 0..=2 * kappa {
            let ri = (qi + zy) * self.stride + pi;
            let rj = (qj + zy) * self.stride + pj;
            for zx in 0..=2 * kappa {
                let mut s = T::zero();
                for k in 0..self.channels {
                    let d = self.data[k * plane + ri + zx] - self.data[k * plane + rj + zx];
                    s += d * d;
                }
                total += s;
            }
        }
        debug_assert!(self.height > 0);
        total
    }
}

/// Squared Euclidean distance between the `(2κ+1)²` patches of `a` around
/// pixel `i` and of `b` around pixel `j`, summed over channels. Samples
/// outside the image are mirror-extended.
pub fn patch_distance<T: Real>(a: &ColorImage<T>, b: &ColorImage<T>, i: usize, j: usize, kappa: usize) -> T {
    assert_eq!(a.dims(), b.dims(), "patch_distance on different grids");
    assert_eq!(a.channels(), b.channels(), "patch_distance channel mismatch");
    let (w, h) = a.dims();
    let k = kappa as isize;
    let (xi, yi) = ((i % w) as isize, (i / w) as isize);
    let (xj, yj) = ((j % w) as isize, (j / w) as isize);
    let mut total = T::zero();
    for zy in -k..=k {
        for zx in -k..=k {
            let (ax, ay) = (mirror_index(xi + zx, w), mirror_index(yi + zy, h));
            let (bx, by) = (mirror_index(xj + zx, w), mirror_index(yj + zy, h));
            let mut s = T::zero();
            for c in 0..a.channels() {
                let d = a.at(c, ax, ay) - b.at(c, bx, by);
                s += d * d;
            }
            total += s;
        }
    }
    total
}

/// How the centre weight of each window is set before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SelfWeight {
    /// Maximum of the other in-window raw weights.
    MaxOfNeighbors,
    /// The plain kernel value at zero distance.
    Kernel,
}

/// Raw square-window weights from a kernel `raw(i, j, offset)` evaluated for
/// every in-image `j != i`, with the centre set per `self_weight`.
fn raw_window<T, F>(width: usize, height: usize, radius: usize, self_weight: SelfWeight, raw: F) -> (Vec<Offset>, Vec<T>)
where
    T: Real,
    F: Fn(usize, usize, Offset) -> T + Sync,
{
    let offsets = window_offsets(radius);
    let k = offsets.len();
    let center = k / 2;
    let mut weights = vec![T::zero(); width * height * k];
    weights.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let (x, y) = (i % width, i / width);
        let mut max_other = T::zero();
        for (o, &off) in offsets.iter().enumerate() {
            if o == center {
                continue;
            }
            if let Some(j) = shifted(x, y, off, width, height) {
                let w = raw(i, j, off);
                row[o] = w;
                max_other = max_other.max(w);
            }
        }
        row[center] = match self_weight {
            SelfWeight::Kernel => raw(i, i, (0, 0)),
            SelfWeight::MaxOfNeighbors if max_other > T::zero() => max_other,
            // isolated pixel, or every neighbour underflowed
            SelfWeight::MaxOfNeighbors => T::one(),
        };
    });
    (offsets, weights)
}

/// Divides each row by its sum `Γ_i` (accumulated in offset order).
fn normalize_rows<T: Real>(width: usize, height: usize, offsets: Vec<Offset>, mut weights: Vec<T>) -> (Stencil<T>, Vec<T>) {
    let k = offsets.len();
    let mut normalizers = vec![T::zero(); width * height];
    weights
        .par_chunks_mut(k)
        .zip(normalizers.par_iter_mut())
        .for_each(|(row, gamma)| {
            let sum = row.iter().fold(T::zero(), |acc, &w| acc + w);
            for w in row.iter_mut() {
                *w /= sum;
            }
            *gamma = sum;
        });
    (Stencil::assemble(width, height, offsets, weights), normalizers)
}

fn build_window<T, F>(width: usize, height: usize, radius: usize, self_weight: SelfWeight, raw: F) -> (Stencil<T>, Vec<T>)
where
    T: Real,
    F: Fn(usize, usize, Offset) -> T + Sync,
{
    let (offsets, weights) = raw_window(width, height, radius, self_weight, raw);
    normalize_rows(width, height, offsets, weights)
}

fn intensity_kernel<'a, T: Real>(padded: &'a Padded<'a, T>, params: &'a WeightParams<T>) -> impl Fn(usize, usize, Offset) -> T + Sync + 'a {
    let hspt2 = params.h_spt * params.h_spt;
    let hsim2 = params.h_sim * params.h_sim;
    move |i, j, (dx, dy)| {
        let spatial = T::from_count((dx * dx + dy * dy) as usize);
        let d = padded.distance(i, j, params.kappa);
        (-(spatial / hspt2) - d / hsim2).exp()
    }
}

/// Intensity weights before normalization, laid out `[pixel][offset]` over
/// [`window_offsets`]`(nu)`.
pub fn raw_intensity_weights<T: Real>(guide: &ColorImage<T>, params: &WeightParams<T>) -> Vec<T> {
    let padded = Padded::new(guide, params.kappa);
    raw_window(
        guide.width(),
        guide.height(),
        params.nu,
        SelfWeight::MaxOfNeighbors,
        intensity_kernel(&padded, params),
    )
    .1
}

/// Intensity-patch weights:
/// `w_ij ∝ exp(−|i−j|²/h_spt² − d(i,j)/h_sim²)` on the search window,
/// centre weight set to the largest neighbour weight, rows normalized to 1.
pub fn build_intensity_weights<T: Real>(guide: &ColorImage<T>, params: &WeightParams<T>) -> NLWeights<T> {
    let padded = Padded::new(guide, params.kappa);
    let (stencil, normalizers) = build_window(
        guide.width(),
        guide.height(),
        params.nu,
        SelfWeight::MaxOfNeighbors,
        intensity_kernel(&padded, params),
    );
    NLWeights {
        stencil,
        normalizers,
    }
}

/// Gradient-patch weights, one family per direction `t`:
/// `ŵ_ijt ∝ exp(−d_t(i,j)/ĥ_sim²)` with patch distances taken on component
/// `t` of the guide gradient.
pub fn build_gradient_weights<T: Real>(guide_grad: &GradField<T>, params: &WeightParams<T>) -> NLGradWeights<T> {
    let hsim2 = params.h_sim_hat * params.h_sim_hat;
    let build = |t: usize| {
        let component = guide_grad.direction_image(t);
        let padded = Padded::new(&component, params.kappa_hat);
        build_window(
            guide_grad.width(),
            guide_grad.height(),
            params.nu_hat,
            SelfWeight::MaxOfNeighbors,
            |i, j, _| (-(padded.distance(i, j, params.kappa_hat) / hsim2)).exp(),
        )
    };
    let (s0, n0) = build(0);
    let (s1, n1) = build(1);
    NLGradWeights {
        directions: [s0, s1],
        normalizers: [n0, n1],
    }
}

/// Plain patch-similarity weights `exp(−d/h²)` with the centre at kernel
/// value 1, as used by nonlocal-means averaging.
pub(crate) fn build_similarity_weights<T: Real>(img: &ColorImage<T>, radius: usize, kappa: usize, h: T) -> Stencil<T> {
    let padded = Padded::new(img, kappa);
    let h2 = h * h;
    build_window(img.width(), img.height(), radius, SelfWeight::Kernel, |i, j, _| {
        if i == j {
            T::one()
        } else {
            (-(padded.distance(i, j, kappa) / h2)).exp()
        }
    })
    .0
}

const MAGIC: &[u8; 4] = b"NLW1";

/// Writes weight tables in the `NLW1` binary layout: magic, then
/// little-endian `u32` width, height, offset count, direction count and
/// scalar byte width, the offsets as `i32` pairs, then per direction the raw
/// weights (`[pixel][offset]`) followed by the normalizers.
pub fn write_weights<T: Real, W: Write>(out: &mut W, directions: &[(&Stencil<T>, &[T])]) -> Result<()> {
    let first = directions
        .first()
        .ok_or_else(|| Error::WeightFormat("no stencil to write".into()))?
        .0;
    let bytes = std::mem::size_of::<T>() as u32;
    out.write_all(MAGIC)?;
    for v in [
        first.width() as u32,
        first.height() as u32,
        first.len() as u32,
        directions.len() as u32,
        bytes,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    for &(dx, dy) in first.offsets() {
        out.write_all(&(dx as i32).to_le_bytes())?;
        out.write_all(&(dy as i32).to_le_bytes())?;
    }
    let put = |out: &mut W, v: T| -> std::io::Result<()> {
        if bytes == 4 {
            out.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())
        } else {
            out.write_all(&v.to_f64_lossy().to_le_bytes())
        }
    };
    for (stencil, normalizers) in directions {
        if stencil.dims() != first.dims() || stencil.offsets() != first.offsets() {
            return Err(Error::WeightFormat("stencils of one table must share a layout".into()));
        }
        for &w in stencil.as_slice() {
            put(out, w)?;
        }
        for &g in normalizers.iter() {
            put(out, g)?;
        }
    }
    Ok(())
}

/// Reads an `NLW1` table back; returns one `(stencil, normalizers)` pair per
/// direction.
pub fn read_weights<T: Real, R: Read>(input: &mut R) -> Result<Vec<(Stencil<T>, Vec<T>)>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::WeightFormat(format!("bad magic {magic:?}")));
    }
    let mut u32s = [0u32; 5];
    for v in u32s.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [width, height, k, dirs, bytes] = u32s.map(|v| v as usize);
    if bytes != 4 && bytes != 8 {
        return Err(Error::WeightFormat(format!("scalar width {bytes}")));
    }
    if width == 0 || height == 0 || k == 0 || dirs == 0 {
        return Err(Error::WeightFormat("empty table".into()));
    }
    let mut offsets = Vec::with_capacity(k);
    for _ in 0..k {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        let dx = i32::from_le_bytes(b[..4].try_into().unwrap()) as isize;
        let dy = i32::from_le_bytes(b[4..].try_into().unwrap()) as isize;
        offsets.push((dx, dy));
    }
    let mut take = |n: usize| -> Result<Vec<T>> {
        let mut buf = vec![0u8; n * bytes];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(bytes)
            .map(|c| {
                if bytes == 4 {
                    T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                } else {
                    T::lit(f64::from_le_bytes(c.try_into().unwrap()))
                }
            })
            .collect())
    };
    let m = width * height;
    let mut tables = Vec::with_capacity(dirs);
    for _ in 0..dirs {
        let weights = take(m * k)?;
        let normalizers = take(m)?;
        tables.push((Stencil::new(width, height, offsets.clone(), weights)?, normalizers));
    }
    Ok(tables)
}

impl<T: Real> NLWeights<T> {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        write_weights(out, &[(&self.stencil, &self.normalizers)])
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut tables = read_weights(input)?;
        if tables.len() != 1 {
            return Err(Error::WeightFormat(format!("expected 1 direction, found {}", tables.len())));
        }
        let (stencil, normalizers) = tables.pop().unwrap();
        Self::from_stencil(stencil, normalizers)
    }
}

impl<T: Real> NLGradWeights<T> {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        write_weights(
            out,
            &[
                (&self.directions[0], &self.normalizers[0]),
                (&self.directions[1], &self.normalizers[1]),
            ],
        )
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let tables = read_weights(input)?;
        let [(s0, n0), (s1, n1)]: [(Stencil<T>, Vec<T>); 2] = tables
            .try_into()
            .map_err(|t: Vec<_>| Error::WeightFormat(format!("expected 2 directions, found {}", t.len())))?;
        Self::from_stencils([s0, s1], [n0, n1])
    }
}
