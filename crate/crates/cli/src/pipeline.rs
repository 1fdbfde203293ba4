//! Single-image pipeline and batch orchestration.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nlretinex::gamma::relight;
use nlretinex::operators::grad;
use nlretinex::preprocess::denoise;
use nlretinex::solver::Diagnostics;
use nlretinex::weights::WeightSource;
use nlretinex::{
    auto_gamma, build_gradient_weights, build_guide, build_intensity_weights, color_correct, enhance, load_image,
    save_image, BitDepth, ColorImage, GammaEstimate, GammaStatus, MetricReport, NLGradWeights, NLWeights, Problem,
    Real, ScalarField,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{Params, Precision, RunConfig, EFFECTIVE_CONFIG};
use crate::error::CliError;

/// Extensions picked up when an input is a directory.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// Everything computed before the relighting step.
#[derive(Debug, Clone)]
pub struct Layers<T> {
    /// Color-corrected observation `Ĩ`.
    pub corrected: ColorImage<T>,
    /// Guide `Î`.
    pub guide: ColorImage<T>,
    pub guide_gammas: Vec<GammaEstimate<T>>,
    pub reflectance: ColorImage<T>,
    pub illumination: ScalarField<T>,
    pub noise: ColorImage<T>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct Enhanced<T> {
    pub layers: Layers<T>,
    pub gamma: GammaEstimate<T>,
    /// `L^γ`.
    pub relit: ScalarField<T>,
    pub output: ColorImage<T>,
}

/// Intensity and gradient weights for an observation, as the solver would
/// use them.
pub fn build_weights<T: Real>(
    corrected: &ColorImage<T>,
    guide: &ColorImage<T>,
    p: &Params<T>,
) -> nlretinex::Result<(NLWeights<T>, NLGradWeights<T>)> {
    p.weights.validate_for(corrected.width(), corrected.height())?;
    let w = match p.weights.source {
        WeightSource::Corrected => build_intensity_weights(corrected, &p.weights),
        WeightSource::Denoised => build_intensity_weights(&denoise(corrected, &p.guide), &p.weights),
    };
    let w_hat = build_gradient_weights(&grad(guide), &p.weights);
    Ok((w, w_hat))
}

/// Color correction, guide, weights and the decomposition solve.
pub fn decompose<T: Real>(img: &ColorImage<T>, p: &Params<T>) -> nlretinex::Result<Layers<T>> {
    let corrected = if p.color_correct {
        p.color.validate()?;
        color_correct(img, &p.color)
    } else {
        img.clone()
    };
    let (guide, guide_gammas) = build_guide(&corrected, &p.guide)?;
    let (w, w_hat) = build_weights(&corrected, &guide, p)?;
    let problem = Problem::new(&corrected, &guide, &w, &w_hat, p.solver.clone())?;
    let d = problem.solve()?;
    Ok(Layers {
        corrected,
        guide,
        guide_gammas,
        reflectance: d.reflectance,
        illumination: d.illumination,
        noise: d.noise,
        diagnostics: d.diagnostics,
    })
}

/// The full pipeline: [`decompose`], automatic gamma, relighting.
pub fn enhance_image<T: Real>(img: &ColorImage<T>, p: &Params<T>) -> nlretinex::Result<Enhanced<T>> {
    let layers = decompose(img, p)?;
    let gamma = auto_gamma(&layers.illumination, &p.gamma)?;
    let relit = relight(&layers.illumination, gamma.gamma);
    let output = enhance(&layers.reflectance, &layers.illumination, gamma.gamma)?;
    Ok(Enhanced {
        layers,
        gamma,
        relit,
        output,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Enhance,
    /// Stop after the decomposition; no gamma, no enhanced output.
    Decompose,
}

/// Per-image outcome of a successful run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageSummary {
    pub gamma: Option<f64>,
    pub gamma_status: Option<GammaStatus>,
    pub iterations: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub metrics: Option<MetricReport>,
    /// Where the main output went (enhanced image or reflectance).
    pub output: PathBuf,
}

#[derive(Debug)]
pub struct ImageResult {
    pub input: PathBuf,
    pub name: String,
    pub outcome: Result<ImageSummary, String>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub images: Vec<ImageResult>,
    /// Mean over images that have metrics.
    pub mean_metrics: Option<MetricReport>,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.images.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// 0 when every image succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures() == 0 {
            0
        } else {
            1
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Expands directories into their image files (sorted by name).
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| CliError::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Ground-truth counterpart: same file name, or same stem with any
/// supported extension.
pub fn find_ground_truth(gt_dir: &Path, input: &Path) -> Option<PathBuf> {
    if let Some(name) = input.file_name() {
        let direct = gt_dir.join(name);
        if direct.is_file() {
            return Some(direct);
        }
    }
    let s = stem(input);
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| gt_dir.join(format!("{s}.{ext}")))
        .find(|p| p.is_file())
}

fn shifted_noise<T: Real>(n: &ColorImage<T>) -> ColorImage<T> {
    n.map(|v| v + T::lit(0.5))
}

fn write_diagnostics(path: &Path, d: &Diagnostics) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    d.write_csv(&mut out).map_err(|e| CliError::io(path, e))
}

fn dump_layers<T: Real>(dir: &Path, name: &str, layers: &Layers<T>) -> Result<(), CliError> {
    let depth = BitDepth::Sixteen;
    let save = |img: &ColorImage<T>, tag: &str| save_image(img, dir.join(format!("{name}_{tag}.png")), depth);
    save(&layers.corrected, "corrected")?;
    save(&layers.guide, "guide")?;
    save(&layers.reflectance, "R")?;
    save(&layers.illumination.to_image(), "L")?;
    // noise is signed; stored offset by +0.5
    save(&shifted_noise(&layers.noise), "N")?;
    Ok(())
}

fn process_typed<T: Real + DeserializeOwned>(
    cfg: &RunConfig,
    input: &Path,
    name: &str,
    mode: Mode,
) -> Result<ImageSummary, CliError> {
    let p: Params<T> = cfg.params()?;
    let img: ColorImage<T> = load_image(input)?;
    let out_dir = &cfg.output_dir;
    let (layers, gamma, output) = match mode {
        Mode::Enhance => {
            let e = enhance_image(&img, &p)?;
            let path = out_dir.join(format!("{name}.png"));
            save_image(&e.output, &path, cfg.output_depth())?;
            if cfg.dump_intermediates {
                save_image(&e.relit.to_image(), out_dir.join(format!("{name}_L_gamma.png")), BitDepth::Sixteen)?;
            }
            (e.layers, Some(e.gamma), (path, Some(e.output)))
        }
        Mode::Decompose => {
            let layers = decompose(&img, &p)?;
            let path = out_dir.join(format!("{name}_R.png"));
            (layers, None, (path, None))
        }
    };
    if cfg.dump_intermediates || mode == Mode::Decompose {
        dump_layers(out_dir, name, &layers)?;
    }
    write_diagnostics(&out_dir.join(format!("{name}_diagnostics.csv")), &layers.diagnostics)?;

    let metrics = match (&cfg.gt_dir, &output.1) {
        (Some(gt_dir), Some(enhanced)) => match find_ground_truth(gt_dir, input) {
            Some(gt_path) => {
                let gt: ColorImage<T> = load_image(&gt_path)?;
                Some(nlretinex::metrics::evaluate(enhanced, &gt, cfg.ssim_color)?)
            }
            None => {
                warn!("{}: no ground truth in {}", input.display(), gt_dir.display());
                None
            }
        },
        _ => None,
    };
    let d = &layers.diagnostics;
    Ok(ImageSummary {
        gamma: gamma.map(|g| g.gamma.to_f64_lossy()),
        gamma_status: gamma.map(|g| g.status),
        iterations: d.iterations(),
        converged: d.converged,
        initial_energy: d.initial_energy,
        final_energy: d.final_energy(),
        metrics,
        output: output.0,
    })
}

/// Runs the batch described by `cfg`. Per-image failures are recorded and
/// do not stop the batch; configuration problems abort before any work.
pub fn run_pipeline(cfg: &RunConfig, mode: Mode) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let inputs = collect_inputs(&cfg.inputs)?;
    if inputs.is_empty() {
        return Err(CliError::Config("no input images".into()));
    }
    if let Some(gt) = &cfg.gt_dir {
        if !gt.is_dir() {
            return Err(CliError::Config(format!("gt_dir {} is not a directory", gt.display())));
        }
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let effective = cfg.output_dir.join(EFFECTIVE_CONFIG);
    fs::write(&effective, cfg.to_toml_string()?).map_err(|e| CliError::io(&effective, e))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    let images: Vec<ImageResult> = pool.install(|| {
        inputs
            .par_iter()
            .map(|input| {
                let name = stem(input);
                info!("processing {}", input.display());
                let outcome = match cfg.precision {
                    Precision::F32 => process_typed::<f32>(cfg, input, &name, mode),
                    Precision::F64 => process_typed::<f64>(cfg, input, &name, mode),
                }
                .map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    warn!("{}: {e}", input.display());
                }
                ImageResult {
                    input: input.clone(),
                    name,
                    outcome,
                }
            })
            .collect()
    });

    let reports: Vec<MetricReport> = images
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().and_then(|s| s.metrics))
        .collect();
    let summary = RunSummary {
        mean_metrics: MetricReport::mean(&reports),
        images,
    };
    write_summary(&cfg.output_dir.join("summary.csv"), &summary)?;
    if cfg.gt_dir.is_some() {
        let rows: Vec<(String, MetricReport)> = summary
            .images
            .iter()
            .filter_map(|r| {
                let m = r.outcome.as_ref().ok()?.metrics?;
                Some((r.input.display().to_string(), m))
            })
            .collect();
        let path = cfg.output_dir.join("metrics.csv");
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        crate::metrics::write_metrics_csv(file, &rows, summary.mean_metrics)?;
    }
    Ok(summary)
}

fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "input",
        "status",
        "gamma",
        "gamma_status",
        "iterations",
        "converged",
        "initial_energy",
        "final_energy",
        "psnr_db",
        "ssim",
    ])?;
    for r in &summary.images {
        let input = r.input.display().to_string();
        match &r.outcome {
            Ok(s) => {
                let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([
                    input,
                    "ok".into(),
                    opt(s.gamma),
                    s.gamma_status.map(|g| format!("{g:?}")).unwrap_or_default(),
                    s.iterations.to_string(),
                    s.converged.to_string(),
                    s.initial_energy.to_string(),
                    s.final_energy.to_string(),
                    opt(s.metrics.map(|m| m.psnr_db)),
                    opt(s.metrics.map(|m| m.ssim)),
                ])?;
            }
            Err(e) => {
                let mut row = vec![input, format!("error: {e}")];
                row.resize(10, String::new());
                w.write_record(row)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Computes both weight tables for one input and writes them in the NLW1
/// format as `<stem>_w.nlw` and `<stem>_w_hat.nlw`.
pub fn weights_dump(cfg: &RunConfig, input: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    cfg.validate()?;
    let p: Params<f64> = cfg.params()?;
    let img: ColorImage<f64> = load_image(input)?;
    let corrected = if p.color_correct {
        color_correct(&img, &p.color)
    } else {
        img
    };
    let (guide, _) = build_guide(&corrected, &p.guide)?;
    let (w, w_hat) = build_weights(&corrected, &guide, &p)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let name = stem(input);
    let pw = cfg.output_dir.join(format!("{name}_w.nlw"));
    let ph = cfg.output_dir.join(format!("{name}_w_hat.nlw"));
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| CliError::io(p, e));
    w.write_to(&mut open(&pw)?)?;
    w_hat.write_to(&mut open(&ph)?)?;
    Ok((pw, ph))
}
