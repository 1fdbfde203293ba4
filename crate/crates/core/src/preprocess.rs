//! Reference images consumed by the energy: the color-corrected observation
//! and the denoised, gamma-normalized guide.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::{auto_gamma_slice, GammaEstimate, GammaParams};
use crate::image::ColorImage;
use crate::scalar::Real;
use crate::weights::build_similarity_weights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorCorrectionParams<T> {
    /// Proportional factor of the channel compensation.
    pub vartheta: T,
}

impl<T: Real> Default for ColorCorrectionParams<T> {
    fn default() -> Self {
        Self { vartheta: T::lit(0.5) }
    }
}

impl<T: Real> ColorCorrectionParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.vartheta >= T::zero()) || !self.vartheta.is_finite() {
            return Err(Error::InvalidParameter(format!("vartheta must be >= 0, got {}", self.vartheta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuideParams<T> {
    /// Filtering parameter `h` of the nonlocal-means denoiser.
    pub denoise_strength: T,
    pub search_radius: usize,
    pub patch_radius: usize,
    /// Mean each guide channel is gamma-adjusted to.
    pub target_mean: T,
}

impl<T: Real> Default for GuideParams<T> {
    fn default() -> Self {
        Self {
            denoise_strength: T::lit(0.15),
            search_radius: 3,
            patch_radius: 1,
            target_mean: T::lit(0.5),
        }
    }
}

impl<T: Real> GuideParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.denoise_strength > T::zero()) || !self.denoise_strength.is_finite() {
            return Err(Error::InvalidParameter("denoise_strength must be positive".into()));
        }
        if !(self.target_mean > T::zero() && self.target_mean < T::one()) {
            return Err(Error::InvalidParameter("target_mean must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Arithmetic mean of every channel.
pub fn channel_means<T: Real>(img: &ColorImage<T>) -> Vec<T> {
    let m = T::from_count(img.pixels());
    (0..img.channels())
        .map(|c| img.channel(c).iter().copied().sum::<T>() / m)
        .collect()
}

/// Index of the channel whose mean is closest to 0.5 (lowest index on ties).
pub fn reference_channel<T: Real>(means: &[T]) -> usize {
    let half = T::lit(0.5);
    let mut best = 0;
    for (k, &m) in means.iter().enumerate().skip(1) {
        if (m - half).abs() < (means[best] - half).abs() {
            best = k;
        }
    }
    best
}

/// Proportional channel compensation: every channel other than the
/// reference `n` gets `I_k + ϑ (M_n − M_k)(1 − I_k) I_n`, then the result is
/// clamped to `[0, 1]`. Single-channel images pass through unchanged.
pub fn color_correct<T: Real>(img: &ColorImage<T>, params: &ColorCorrectionParams<T>) -> ColorImage<T> {
    if img.channels() < 2 {
        return img.clone();
    }
    let means = channel_means(img);
    let n = reference_channel(&means);
    let reference = img.channel(n).to_vec();
    let mut out = img.clone();
    for k in (0..img.channels()).filter(|&k| k != n) {
        let shift = params.vartheta * (means[n] - means[k]);
        for (v, &r) in out.channel_mut(k).iter_mut().zip(&reference) {
            let corrected = *v + shift * (T::one() - *v) * r;
            *v = corrected.max(T::zero()).min(T::one());
        }
    }
    out
}

/// Nonlocal-means denoiser: each pixel becomes the patch-similarity-weighted
/// average of its search window (centre weight 1).
pub fn denoise<T: Real>(img: &ColorImage<T>, params: &GuideParams<T>) -> ColorImage<T> {
    let w = build_similarity_weights(img, params.search_radius, params.patch_radius, params.denoise_strength);
    let m = img.pixels();
    let mut out = ColorImage::zeros(img.width(), img.height(), img.channels());
    out.as_mut_slice()
        .par_iter_mut()
        .enumerate()
        .for_each(|(ci, slot)| {
            let (c, i) = (ci / m, ci % m);
            let plane = img.channel(c);
            let row = w.row(i);
            let mut acc = T::zero();
            for (o, &wt) in row.iter().enumerate() {
                if let Some(j) = w.neighbor(i, o) {
                    acc += wt * plane[j];
                }
            }
            *slot = acc.max(T::zero()).min(T::one());
        });
    out
}

/// Guide image: [`denoise`] followed by a per-channel automatic gamma that
/// brings each channel mean to `target_mean`. Returns the guide and the
/// per-channel gamma estimates.
pub fn build_guide<T: Real>(
    img_tilde: &ColorImage<T>,
    params: &GuideParams<T>,
) -> Result<(ColorImage<T>, Vec<GammaEstimate<T>>)> {
    params.validate()?;
    let denoised = denoise(img_tilde, params);
    let gamma_params = GammaParams {
        target: params.target_mean,
        ..GammaParams::default()
    };
    let mut out = denoised.clone();
    let mut estimates = Vec::with_capacity(img_tilde.channels());
    for c in 0..img_tilde.channels() {
        let est = auto_gamma_slice(denoised.channel(c), &gamma_params)?;
        for v in out.channel_mut(c).iter_mut() {
            *v = v.max(gamma_params.l_floor).min(T::one()).powf(est.gamma);
        }
        estimates.push(est);
    }
    Ok((out, estimates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn pixel(values: &[f64]) -> ColorImage<f64> {
        ColorImage::from_planar(1, 1, values.len(), values.to_vec()).unwrap()
    }

    fn variance(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn means() {
        assert!(channel_means(&ColorImage::<f64>::filled(3, 2, 3, 0.3)).iter().all(|&m| (m - 0.3).abs() < 1e-15));
        assert_eq!(channel_means(&pixel(&[0.1, 0.4, 0.9])), vec![0.1, 0.4, 0.9]);
        let two = ColorImage::<f64>::from_planar(2, 1, 1, vec![0.2, 0.4]).unwrap();
        assert!((channel_means(&two)[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn reference_channel_ties_pick_lowest_index() {
        assert_eq!(reference_channel(&[0.1, 0.4, 0.9]), 1);
        assert_eq!(reference_channel(&[0.4, 0.6, 0.4]), 0);
        assert_eq!(reference_channel(&[0.9, 0.6, 0.4]), 1);
    }

    #[test]
    fn color_correct_hand_values() {
        let out = color_correct(&pixel(&[0.1, 0.4, 0.9]), &ColorCorrectionParams { vartheta: 0.5 });
        assert!((out.get(0, 0) - 0.154).abs() < 1e-12);
        assert_eq!(out.get(1, 0), 0.4);
        assert!((out.get(2, 0) - 0.89).abs() < 1e-12);
    }

    #[test]
    fn color_correct_identity_cases() {
        let img = pixel(&[0.1, 0.4, 0.9]);
        assert_eq!(color_correct(&img, &ColorCorrectionParams { vartheta: 0.0 }), img);
        let gray = ColorImage::<f64>::from_fn(3, 3, 3, |_, x, y| (x + y) as f64 / 4.0);
        assert_eq!(color_correct(&gray, &ColorCorrectionParams { vartheta: 0.9 }), gray);
        let single = ColorImage::<f64>::filled(2, 2, 1, 0.1);
        assert_eq!(color_correct(&single, &ColorCorrectionParams::default()), single);
    }

    #[test]
    fn denoise_fixes_constants() {
        let img = ColorImage::<f64>::filled(9, 9, 3, 0.37);
        let out = denoise(&img, &GuideParams::default());
        assert!(out.max_abs_diff(&img) < 1e-15);
    }

    #[test]
    fn denoise_reduces_variance() {
        let normal = Normal::new(0.0, 0.05).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy = ColorImage::from_fn(16, 16, 1, |_, _, _| 0.5 + normal.sample(&mut rng));
            let out = denoise(&noisy, &GuideParams::default());
            assert!(variance(out.as_slice()) < variance(noisy.as_slice()));
        }
    }

    #[test]
    fn denoise_vanishing_strength_is_identity() {
        let normal = Normal::new(0.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = ColorImage::from_fn(12, 12, 3, |_, _, _| (0.5_f64 + normal.sample(&mut rng)).clamp(0.0, 1.0));
        let params = GuideParams {
            denoise_strength: 1e-4,
            ..GuideParams::default()
        };
        assert!(denoise(&noisy, &params).max_abs_diff(&noisy) < 1e-3);
    }

    #[test]
    fn guide_constant_channels() {
        let img = ColorImage::<f64>::from_fn(6, 6, 2, |c, _, _| if c == 0 { 0.25 } else { 0.5 });
        let (guide, gammas) = build_guide(&img, &GuideParams::default()).unwrap();
        assert!((gammas[0].gamma - 0.5).abs() < 1e-9);
        assert!((gammas[1].gamma - 1.0).abs() < 1e-9);
        assert!(guide.channel(0).iter().all(|&v| (v - 0.5).abs() < 1e-9));
        assert!(guide.channel(1).iter().all(|&v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn guide_two_pixel_channel() {
        // pixels far apart in value: the denoiser leaves them (almost) alone
        let img = ColorImage::<f64>::from_planar(2, 1, 1, vec![0.25, 0.64]).unwrap();
        let params = GuideParams {
            denoise_strength: 1e-3,
            patch_radius: 0,
            ..GuideParams::default()
        };
        let (guide, gammas) = build_guide(&img, &params).unwrap();
        // bisection oracle for (0.25^γ + 0.64^γ)/2 = 0.5
        let f = |g: f64| (0.25f64.powf(g) + 0.64f64.powf(g)) / 2.0 - 0.5;
        let (mut lo, mut hi) = (0.05, 20.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 { lo = mid } else { hi = mid }
        }
        assert!((gammas[0].gamma - lo).abs() < 1e-6);
        let mean = (guide.get(0, 0) + guide.get(0, 1)) / 2.0;
        assert!((mean - 0.5).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn color_correct_properties(
            data in prop::collection::vec(0.0f64..=1.0, 27),
            vartheta in 0.0f64..=1.0,
        ) {
            let img = ColorImage::from_planar(3, 3, 3, data).unwrap();
            let means = channel_means(&img);
            let n = reference_channel(&means);
            let out = color_correct(&img, &ColorCorrectionParams { vartheta });
            prop_assert_eq!(out.channel(n), img.channel(n));
            // the unclamped formula never exceeds 1; only the low side needs the clamp
            for k in 0..3 {
                for i in 0..9 {
                    let v = img.get(k, i);
                    let raw = v + vartheta * (means[n] - means[k]) * (1.0 - v) * img.get(n, i);
                    prop_assert!(raw <= 1.0 + 1e-12);
                    prop_assert_eq!(out.get(k, i), raw.clamp(0.0, 1.0));
                    prop_assert!((0.0..=1.0).contains(&out.get(k, i)));
                }
            }
        }

        #[test]
        fn guide_means_hit_target(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = ColorImage::from_fn(8, 8, 3, |_, _, _| 0.05 + 0.4 * rng.random::<f64>());
            let (guide, gammas) = build_guide(&img, &GuideParams::default()).unwrap();
            for (c, m) in channel_means(&guide).into_iter().enumerate() {
                if gammas[c].is_interior() {
                    prop_assert!((m - 0.5).abs() < 1e-3);
                }
            }
        }
    }
}
