//! Directory-level PSNR/SSIM evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use nlretinex::metrics::evaluate;
use nlretinex::{load_image, ColorImage, MetricReport, SsimColor};

use crate::error::CliError;
use crate::pipeline::IMAGE_EXTENSIONS;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    /// `(enhanced file, report)` in file-name order.
    pub rows: Vec<(PathBuf, MetricReport)>,
    /// Enhanced files with no ground-truth counterpart.
    pub missing: Vec<PathBuf>,
    pub mean: MetricReport,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Compares every image of `enhanced_dir` with the same-named file of
/// `gt_dir`. Files without a counterpart are skipped with a warning.
pub fn run_metrics(enhanced_dir: &Path, gt_dir: &Path, color: SsimColor) -> Result<MetricsTable, CliError> {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for path in image_files(enhanced_dir)? {
        let gt_path = gt_dir.join(path.file_name().expect("listed files have names"));
        if !gt_path.is_file() {
            warn!("{}: no counterpart in {}", path.display(), gt_dir.display());
            missing.push(path);
            continue;
        }
        let a: ColorImage<f64> = load_image(&path)?;
        let b: ColorImage<f64> = load_image(&gt_path)?;
        rows.push((path, evaluate(&a, &b, color)?));
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
    let mean = MetricReport::mean(&reports).ok_or_else(|| CliError::NoCommonFiles {
        enhanced: enhanced_dir.to_path_buf(),
        gt: gt_dir.to_path_buf(),
    })?;
    Ok(MetricsTable { rows, missing, mean })
}

/// CSV with header `path,psnr_db,ssim`; the last row is the mean.
pub fn write_metrics_csv<W: Write>(
    out: W,
    rows: &[(String, MetricReport)],
    mean: Option<MetricReport>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "psnr_db", "ssim"])?;
    for (path, r) in rows {
        w.write_record([path.clone(), r.psnr_db.to_string(), r.ssim.to_string()])?;
    }
    if let Some(m) = mean {
        w.write_record(["mean".to_string(), m.psnr_db.to_string(), m.ssim.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io("<metrics csv>", e))?;
    Ok(())
}

impl MetricsTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let rows: Vec<(String, MetricReport)> = self
            .rows
            .iter()
            .map(|(p, r)| (p.display().to_string(), *r))
            .collect();
        write_metrics_csv(out, &rows, Some(self.mean))
    }
}
