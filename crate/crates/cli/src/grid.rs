//! Small exhaustive search over the four energy weights.
//!
//! The shipped defaults are empirical choices for the bundled synthetic
//! pairs, not published values; this helper is how they can be re-tuned on
//! other data.

use std::path::PathBuf;

use nlretinex::metrics::evaluate;
use nlretinex::{load_image, ColorImage, MetricReport};
use serde::{Deserialize, Serialize};

use crate::config::{Params, RunConfig};
use crate::error::CliError;
use crate::pipeline::{collect_inputs, enhance_image, find_ground_truth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub mean: MetricReport,
}

/// Evaluates every combination on the `(input, ground truth)` pairs of
/// `cfg` (inputs matched against `cfg.gt_dir`) and returns the points sorted
/// by decreasing mean PSNR.
pub fn grid_search(cfg: &RunConfig, grid: &Grid) -> Result<Vec<GridPoint>, CliError> {
    cfg.validate()?;
    let gt_dir = cfg
        .gt_dir
        .as_ref()
        .ok_or_else(|| CliError::Config("grid search needs gt_dir".into()))?;
    let mut pairs: Vec<(ColorImage<f64>, ColorImage<f64>)> = Vec::new();
    for input in collect_inputs(&cfg.inputs)? {
        let gt: PathBuf = find_ground_truth(gt_dir, &input)
            .ok_or_else(|| CliError::Config(format!("no ground truth for {}", input.display())))?;
        pairs.push((load_image(&input)?, load_image(&gt)?));
    }
    if pairs.is_empty() {
        return Err(CliError::Config("no input images".into()));
    }
    let base: Params<f64> = cfg.params()?;
    let mut points = Vec::new();
    for &alpha in &grid.alpha {
        for &beta in &grid.beta {
            for &lambda in &grid.lambda {
                for &mu in &grid.mu {
                    let mut p = base.clone();
                    p.solver.alpha = alpha;
                    p.solver.beta = beta;
                    p.solver.lambda = lambda;
                    p.solver.mu = mu;
                    let mut reports = Vec::with_capacity(pairs.len());
                    for (low, gt) in &pairs {
                        let e = enhance_image(low, &p)?;
                        reports.push(evaluate(&e.output, gt, cfg.ssim_color)?);
                    }
                    points.push(GridPoint {
                        alpha,
                        beta,
                        lambda,
                        mu,
                        mean: MetricReport::mean(&reports).expect("pairs is not empty"),
                    });
                }
            }
        }
    }
    points.sort_by(|a, b| b.mean.psnr_db.total_cmp(&a.mean.psnr_db));
    Ok(points)
}
