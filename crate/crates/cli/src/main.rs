use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlretinex::{GradientFidelity, IllumPrior, ReflPrior, SsimColor};
use nlretinex_cli::config::parse_override;
use nlretinex_cli::grid::{grid_search, Grid};
use nlretinex_cli::pipeline::weights_dump;
use nlretinex_cli::{run_metrics, run_pipeline, CliError, Mode, Precision, RunConfig};

#[derive(Parser)]
#[command(name = "nlretinex", version, about = "Low-light enhancement by nonlocal Retinex decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose, relight and save enhanced images.
    Enhance(RunArgs),
    /// Decompose only; writes R, L, N and the guide images.
    Decompose(RunArgs),
    /// PSNR/SSIM of every image in a directory against a ground-truth directory.
    Metrics {
        enhanced_dir: PathBuf,
        gt_dir: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "luma")]
        ssim_color: SsimColorArg,
    },
    /// Write the weight tables of one image in NLW1 format.
    WeightsDump(RunArgs),
    /// Exhaustive search over alpha, beta, lambda, mu against ground truth.
    GridSearch {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.002, 0.01, 0.05])]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0])]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05])]
        mus: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SsimColorArg {
    Luma,
    PerChannelMean,
}

impl SsimColorArg {
    fn name(self) -> &'static str {
        match self {
            SsimColorArg::Luma => "luma",
            SsimColorArg::PerChannelMean => "per-channel-mean",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FidelityArg {
    Nonlocal,
    Local,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum IllumArg {
    Tv,
    Tikhonov,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReflArg {
    Nltv,
    Tv,
}

#[derive(Args)]
struct RunArgs {
    /// Input images or directories.
    inputs: Vec<PathBuf>,
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Ground-truth directory; enables metrics.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    #[arg(long)]
    dump_intermediates: bool,
    #[arg(long)]
    no_noise_term: bool,
    #[arg(long, value_enum)]
    gradient_fidelity: Option<FidelityArg>,
    #[arg(long, value_enum)]
    illum_prior: Option<IllumArg>,
    #[arg(long, value_enum)]
    refl_prior: Option<ReflArg>,
    #[arg(long)]
    no_color_correct: bool,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    #[arg(long, env = "NLRETINEX_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Any configuration key, e.g. `--set weights.nu=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    sets: Vec<(String, toml::Value)>,
}

fn enum_value<T: serde::Serialize>(v: T) -> toml::Value {
    toml::Value::try_from(v).expect("unit variants serialize to strings")
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, toml::Value)> {
        use toml::Value;
        let mut o: Vec<(String, Value)> = Vec::new();
        let mut push = |k: &str, v: Value| o.push((k.to_string(), v));
        if !self.inputs.is_empty() {
            let items = self
                .inputs
                .iter()
                .map(|p| Value::String(p.to_string_lossy().into_owned()))
                .collect();
            push("inputs", Value::Array(items));
        }
        if let Some(p) = &self.output_dir {
            push("output_dir", Value::String(p.to_string_lossy().into_owned()));
        }
        if let Some(p) = &self.gt_dir {
            push("gt_dir", Value::String(p.to_string_lossy().into_owned()));
        }
        if self.dump_intermediates {
            push("dump_intermediates", Value::Boolean(true));
        }
        if self.no_noise_term {
            push("solver.noise_term", Value::Boolean(false));
        }
        if let Some(f) = self.gradient_fidelity {
            let f = match f {
                FidelityArg::Nonlocal => GradientFidelity::Nonlocal,
                FidelityArg::Local => GradientFidelity::Local,
                FidelityArg::Off => GradientFidelity::Off,
            };
            push("solver.gradient_fidelity", enum_value(f));
        }
        if let Some(p) = self.illum_prior {
            let p = match p {
                IllumArg::Tv => IllumPrior::Tv,
                IllumArg::Tikhonov => IllumPrior::Tikhonov,
            };
            push("solver.illum_prior", enum_value(p));
        }
        if let Some(p) = self.refl_prior {
            let p = match p {
                ReflArg::Nltv => ReflPrior::Nltv,
                ReflArg::Tv => ReflPrior::Tv,
            };
            push("solver.refl_prior", enum_value(p));
        }
        if self.no_color_correct {
            push("color_correct", Value::Boolean(false));
        }
        if let Some(p) = self.precision {
            push("precision", enum_value(p));
        }
        if let Some(n) = self.threads {
            push("threads", Value::Integer(n as i64));
        }
        if let Some(s) = self.seed {
            push("seed", Value::Integer(s as i64));
        }
        for (k, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda), ("mu", self.mu)] {
            if let Some(v) = v {
                push(&format!("solver.{k}"), Value::Float(v));
            }
        }
        if let Some(n) = self.max_iters {
            push("solver.max_iters", Value::Integer(n as i64));
        }
        o.extend(self.sets.iter().cloned());
        o
    }

    fn config(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

fn run_batch(args: &RunArgs, mode: Mode) -> Result<i32, CliError> {
    let cfg = args.config()?;
    let summary = run_pipeline(&cfg, mode)?;
    for r in &summary.images {
        match &r.outcome {
            Ok(s) => {
                let mut line = format!(
                    "{}: iterations={} energy {:.6e} -> {:.6e}",
                    r.name, s.iterations, s.initial_energy, s.final_energy
                );
                if let (Some(g), Some(status)) = (s.gamma, s.gamma_status) {
                    line += &format!(" gamma={g:.4} ({status:?})");
                }
                if let Some(m) = s.metrics {
                    line += &format!(" psnr={:.3} ssim={:.4}", m.psnr_db, m.ssim);
                }
                println!("{line}");
            }
            Err(e) => println!("{}: FAILED {e}", r.name),
        }
    }
    if let Some(m) = summary.mean_metrics {
        println!("mean: psnr={:.3} ssim={:.4}", m.psnr_db, m.ssim);
    }
    Ok(summary.exit_code())
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Enhance(args) => run_batch(&args, Mode::Enhance),
        Command::Decompose(args) => run_batch(&args, Mode::Decompose),
        Command::Metrics {
            enhanced_dir,
            gt_dir,
            out,
            ssim_color,
        } => {
            let color: SsimColor = toml::Value::String(ssim_color.name().into())
                .try_into()
                .expect("variant names match");
            let table = run_metrics(&enhanced_dir, &gt_dir, color)?;
            for p in &table.missing {
                eprintln!("warning: {} has no counterpart in {}", p.display(), gt_dir.display());
            }
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                    table.write_csv(file)?;
                }
                None => table.write_csv(std::io::stdout())?,
            }
            Ok(0)
        }
        Command::WeightsDump(args) => {
            let cfg = args.config()?;
            let mut failed = 0;
            for input in &cfg.inputs {
                match weights_dump(&cfg, input) {
                    Ok((a, b)) => println!("{} {}", a.display(), b.display()),
                    Err(e @ CliError::Config(_)) => return Err(e),
                    Err(e) => {
                        eprintln!("{}: {e}", input.display());
                        failed += 1;
                    }
                }
            }
            if cfg.inputs.is_empty() {
                return Err(CliError::Config("no input images".into()));
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
        Command::GridSearch {
            run,
            alphas,
            betas,
            lambdas,
            mus,
        } => {
            let cfg = run.config()?;
            let grid = Grid {
                alpha: alphas,
                beta: betas,
                lambda: lambdas,
                mu: mus,
            };
            println!("alpha,beta,lambda,mu,psnr_db,ssim");
            for p in grid_search(&cfg, &grid)? {
                println!("{},{},{},{},{},{}", p.alpha, p.beta, p.lambda, p.mu, p.mean.psnr_db, p.mean.ssim);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
