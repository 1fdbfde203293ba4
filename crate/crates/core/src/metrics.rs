//! Full-reference quality metrics: PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ColorImage;
use crate::scalar::Real;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM stabilizing constants for unit dynamic range.
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// How color images are reduced for SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsimColor {
    /// BT.601 luma of RGB inputs.
    #[default]
    Luma,
    /// Mean of the per-channel SSIM values.
    PerChannelMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Arithmetic mean of a set of reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            psnr_db: reports.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        })
    }
}

fn check_dims<T: Real>(a: &ColorImage<T>, b: &ColorImage<T>) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean squared error over every sample.
pub fn mse<T: Real>(a: &ColorImage<T>, b: &ColorImage<T>) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / a.as_slice().len() as f64)
}

/// Peak signal-to-noise ratio for unit peak, `10 log10(1 / MSE)`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr<T: Real>(a: &ColorImage<T>, b: &ColorImage<T>) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP_DB))
}

/// Normalized 2-D Gaussian window, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|n| {
            let (x, y) = ((n % size) as f64 - c, (n / size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Plane of `f64` samples used by the SSIM kernels.
struct Plane<'a> {
    width: usize,
    height: usize,
    data: &'a [f64],
}

/// SSIM index of every fully contained window position, row-major over the
/// `(W−10) x (H−10)` valid grid.
fn ssim_plane_map(a: &Plane, b: &Plane, window: &[f64], size: usize) -> Vec<f64> {
    let c1 = (SSIM_K1).powi(2);
    let c2 = (SSIM_K2).powi(2);
    let (ow, oh) = (a.width + 1 - size, a.height + 1 - size);
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..size {
                let row = (oy + wy) * a.width + ox;
                for wx in 0..size {
                    let g = window[wy * size + wx];
                    let (x, y) = (a.data[row + wx], b.data[row + wx]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            out.push(num / den);
        }
    }
    out
}

fn luma<T: Real>(img: &ColorImage<T>) -> Vec<f64> {
    if img.channels() != 3 {
        return img.channel(0).iter().map(|v| v.to_f64_lossy()).collect();
    }
    (0..img.pixels())
        .map(|i| {
            0.299 * img.get(0, i).to_f64_lossy()
                + 0.587 * img.get(1, i).to_f64_lossy()
                + 0.114 * img.get(2, i).to_f64_lossy()
        })
        .collect()
}

/// Per-window SSIM values. With [`SsimColor::Luma`] one map is returned;
/// with [`SsimColor::PerChannelMean`] one map per channel.
pub fn ssim_maps<T: Real>(a: &ColorImage<T>, b: &ColorImage<T>, color: SsimColor) -> Result<Vec<Vec<f64>>> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let window = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let planes: Vec<(Vec<f64>, Vec<f64>)> = match (color, a.channels()) {
        (SsimColor::Luma, 1 | 3) => vec![(luma(a), luma(b))],
        _ => (0..a.channels())
            .map(|c| {
                (
                    a.channel(c).iter().map(|v| v.to_f64_lossy()).collect(),
                    b.channel(c).iter().map(|v| v.to_f64_lossy()).collect(),
                )
            })
            .collect(),
    };
    Ok(planes
        .iter()
        .map(|(pa, pb)| {
            ssim_plane_map(
                &Plane { width: w, height: h, data: pa },
                &Plane { width: w, height: h, data: pb },
                &window,
                SSIM_WINDOW,
            )
        })
        .collect())
}

/// Mean SSIM over all valid 11x11 Gaussian windows.
pub fn ssim<T: Real>(a: &ColorImage<T>, b: &ColorImage<T>, color: SsimColor) -> Result<f64> {
    let maps = ssim_maps(a, b, color)?;
    let per_plane: Vec<f64> = maps
        .iter()
        .map(|m| m.iter().sum::<f64>() / m.len() as f64)
        .collect();
    Ok(per_plane.iter().sum::<f64>() / per_plane.len() as f64)
}

/// PSNR and SSIM of `test` against `reference`.
pub fn evaluate<T: Real>(test: &ColorImage<T>, reference: &ColorImage<T>, color: SsimColor) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(test, reference)?,
        ssim: ssim(test, reference, color)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> ColorImage<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ColorImage::from_fn(w, h, c, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn psnr_closed_forms() {
        let a = ColorImage::<f64>::filled(4, 4, 3, 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = ColorImage::<f64>::filled(4, 4, 3, 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = ColorImage::<f64>::filled(4, 4, 3, 0.5);
        assert!((psnr(&a, &c).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
        assert!((psnr(&a, &c).unwrap() - 6.0206).abs() < 1e-4);
        assert!(psnr(&a, &ColorImage::filled(4, 3, 3, 0.0)).is_err());
    }

    #[test]
    fn psnr_symmetric() {
        let (a, b) = (random(6, 5, 3, 1), random(6, 5, 3, 2));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random(16, 14, 3, 3);
        for color in [SsimColor::Luma, SsimColor::PerChannelMean] {
            assert!((ssim(&a, &a, color).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_anticorrelated_binary_is_negative() {
        let a = ColorImage::<f64>::from_fn(16, 16, 1, |_, x, y| ((x + y) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b, SsimColor::Luma).unwrap() < 0.0);
    }

    #[test]
    fn ssim_constant_offset_is_pure_luminance() {
        let a = random(13, 12, 1, 4).map(|v| 0.2 + 0.5 * v);
        let b = a.map(|v| v + 0.1);
        let maps = ssim_maps(&a, &b, SsimColor::Luma).unwrap();
        let g = gaussian_window(11, 1.5);
        let c1 = 0.01f64.powi(2);
        for (n, &value) in maps[0].iter().enumerate() {
            let (ox, oy) = (n % 3, n / 3);
            let mut mu = 0.0;
            for wy in 0..11 {
                for wx in 0..11 {
                    mu += g[wy * 11 + wx] * a.at(0, ox + wx, oy + wy);
                }
            }
            let mb = mu + 0.1;
            let lum = (2.0 * mu * mb + c1) / (mu * mu + mb * mb + c1);
            assert!((value - lum).abs() < 1e-10, "{value} vs {lum}");
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random(10, 20, 1, 5);
        assert!(matches!(ssim(&a, &a, SsimColor::Luma), Err(Error::WindowTooLarge { .. })));
    }

    #[test]
    fn ssim_bounded_and_flip_invariant() {
        for seed in 0..5 {
            let (a, b) = (random(15, 13, 3, seed), random(15, 13, 3, seed + 10));
            let s = ssim(&a, &b, SsimColor::Luma).unwrap();
            assert!((-1.0..=1.0).contains(&s));
            let sf = ssim(&a.flip_horizontal(), &b.flip_horizontal(), SsimColor::Luma).unwrap();
            assert!((s - sf).abs() < 1e-12);
            let p = psnr(&a, &b).unwrap();
            let pf = psnr(&a.flip_horizontal(), &b.flip_horizontal()).unwrap();
            assert!((p - pf).abs() < 1e-12);
        }
    }

    #[test]
    fn report_mean() {
        let r = MetricReport::mean(&[
            MetricReport { psnr_db: 20.0, ssim: 0.5 },
            MetricReport { psnr_db: 30.0, ssim: 0.7 },
        ])
        .unwrap();
        assert_eq!(r.psnr_db, 25.0);
        assert!((r.ssim - 0.6).abs() < 1e-15);
        assert!(MetricReport::mean(&[]).is_none());
    }
}
