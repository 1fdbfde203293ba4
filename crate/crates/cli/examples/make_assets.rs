//! Regenerates the bundled synthetic low/high pairs.
//!
//! ```text
//! cargo run -p nlretinex-cli --example make_assets -- assets/lol
//! ```
//!
//! Each pair shares a procedural reflectance `R` and a smooth dark
//! illumination `L`. The "low" image is `R∘L` plus Gaussian noise; the
//! "high" image is `R∘L^γ` with `γ` chosen so that `mean(L^γ) = 0.5`, i.e.
//! the same scene under a brighter version of the same light. Both are
//! quantized to 8 bits. Everything is seeded, so the output is reproducible.

use std::f64::consts::PI;
use std::path::PathBuf;

use nlretinex::{auto_gamma, save_image, BitDepth, ColorImage, GammaParams, ScalarField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SIZE: usize = 64;

fn tiles(c: usize, x: usize, y: usize) -> f64 {
    // brick wall: offset rows, mortar lines, two alternating brick colors
    let row = y / 8;
    let shift = if row % 2 == 0 { 0 } else { 6 };
    let col = (x + shift) / 12;
    let mortar = y % 8 == 0 || (x + shift) % 12 == 0;
    let palette = [[0.72, 0.38, 0.28], [0.62, 0.30, 0.22], [0.80, 0.52, 0.36]];
    if mortar {
        [0.85, 0.83, 0.78][c]
    } else {
        palette[(row * 5 + col) % 3][c]
    }
}

fn shapes(c: usize, x: usize, y: usize) -> f64 {
    let (fx, fy) = (x as f64 / SIZE as f64, y as f64 / SIZE as f64);
    let background = [0.35 + 0.3 * fx, 0.55 + 0.2 * fy, 0.75 - 0.2 * fx][c];
    let disk = |cx: f64, cy: f64, r: f64| (fx - cx).powi(2) + (fy - cy).powi(2) < r * r;
    if disk(0.3, 0.3, 0.17) {
        [0.9, 0.8, 0.2][c]
    } else if disk(0.7, 0.65, 0.2) {
        [0.2, 0.6, 0.35][c]
    } else if (0.15..0.45).contains(&fx) && (0.62..0.88).contains(&fy) {
        [0.85, 0.25, 0.3][c]
    } else {
        background
    }
}

fn stripes(c: usize, x: usize, y: usize) -> f64 {
    let (fx, fy) = (x as f64, y as f64);
    let v = if x < SIZE / 2 {
        0.5 + 0.35 * (2.0 * PI * fx / 7.0).sin()
    } else if y < SIZE / 2 {
        0.5 + 0.35 * (2.0 * PI * fy / 6.0).sin()
    } else {
        0.5 + 0.35 * (2.0 * PI * (fx + fy) / 9.0).sin()
    };
    [v, 0.3 + 0.6 * v * v, 0.9 - 0.6 * v][c]
}

/// Smooth illumination in roughly `[lo, hi]`: a lit corner fading away.
fn illumination(x: usize, y: usize, lo: f64, hi: f64, cx: f64, cy: f64) -> f64 {
    let (fx, fy) = (x as f64 / SIZE as f64 - cx, y as f64 / SIZE as f64 - cy);
    let t = (-(fx * fx + fy * fy) / 0.3).exp();
    lo + (hi - lo) * t
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets/lol".into()));
    std::fs::create_dir_all(root.join("low")).unwrap();
    std::fs::create_dir_all(root.join("high")).unwrap();

    type Scene = fn(usize, usize, usize) -> f64;
    // (scene, illumination range, light centre, noise sigma)
    let scenes: [(Scene, (f64, f64), (f64, f64), f64); 3] = [
        (tiles, (0.06, 0.25), (0.2, 0.2), 0.03),
        (shapes, (0.08, 0.3), (0.8, 0.3), 0.01),
        (stripes, (0.07, 0.28), (0.5, 0.9), 0.01),
    ];
    for (n, (scene, (lo, hi), (cx, cy), sigma)) in scenes.into_iter().enumerate() {
        let r = ColorImage::<f64>::from_fn(SIZE, SIZE, 3, scene);
        let l = ScalarField::from_vec(
            SIZE,
            SIZE,
            (0..SIZE * SIZE).map(|i| illumination(i % SIZE, i / SIZE, lo, hi, cx, cy)).collect(),
        )
        .unwrap();
        let gamma = auto_gamma(&l, &GammaParams::default()).unwrap().gamma;
        let high = ColorImage::from_fn(SIZE, SIZE, 3, |c, x, y| r.at(c, x, y) * l.get(y * SIZE + x).powf(gamma));
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + n as u64);
        let low = ColorImage::from_fn(SIZE, SIZE, 3, |c, x, y| {
            let v = r.at(c, x, y) * l.get(y * SIZE + x) + normal.sample(&mut rng);
            v.clamp(0.0, 1.0)
        });
        let name = format!("{}.png", n + 1);
        save_image(&high, root.join("high").join(&name), BitDepth::Eight).unwrap();
        save_image(&low, root.join("low").join(&name), BitDepth::Eight).unwrap();
    }
}
