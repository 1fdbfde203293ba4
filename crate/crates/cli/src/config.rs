//! Run configuration. Values come from built-in defaults, then an optional
//! TOML file, then command-line overrides, in that order of precedence.

use std::fs;
use std::path::{Path, PathBuf};

use nlretinex::{ColorCorrectionParams, GammaParams, GuideParams, Real, SolverParams, SsimColor, WeightParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// File name of the effective configuration written next to the outputs.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Image files or directories of images.
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    /// Ground-truth directory; files are matched by name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_dir: Option<PathBuf>,
    pub dump_intermediates: bool,
    pub color_correct: bool,
    pub precision: Precision,
    /// Worker threads; unset uses every core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Seed of every stochastic step (the operator-norm power iteration).
    pub seed: u64,
    /// Bit depth of the enhanced output (8 or 16). Dumps are always 16-bit.
    pub output_bits: u8,
    pub ssim_color: SsimColor,
    pub color: ColorCorrectionParams<f64>,
    pub guide: GuideParams<f64>,
    pub weights: WeightParams<f64>,
    pub solver: SolverParams<f64>,
    pub gamma: GammaParams<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            output_dir: PathBuf::from("out"),
            gt_dir: None,
            dump_intermediates: false,
            color_correct: true,
            precision: Precision::F64,
            threads: None,
            seed: 0,
            output_bits: 8,
            ssim_color: SsimColor::Luma,
            color: ColorCorrectionParams::default(),
            guide: GuideParams::default(),
            weights: WeightParams::default(),
            solver: SolverParams::default(),
            gamma: GammaParams::default(),
        }
    }
}

/// Module parameters instantiated at one scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub color_correct: bool,
    pub color: ColorCorrectionParams<T>,
    pub guide: GuideParams<T>,
    pub weights: WeightParams<T>,
    pub solver: SolverParams<T>,
    pub gamma: GammaParams<T>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self {
            color_correct: true,
            color: ColorCorrectionParams::default(),
            guide: GuideParams::default(),
            weights: WeightParams::default(),
            solver: SolverParams::default(),
            gamma: GammaParams::default(),
        }
    }
}

fn recast<A: Serialize, B: DeserializeOwned>(value: &A) -> Result<B, CliError> {
    let conv = |e: &dyn std::fmt::Display| CliError::Config(format!("parameter conversion: {e}"));
    toml::Value::try_from(value)
        .map_err(|e| conv(&e))?
        .try_into()
        .map_err(|e| conv(&e))
}

impl RunConfig {
    /// Builds the configuration from an optional TOML file and `key=value`
    /// overrides (dotted keys, values in TOML syntax; bare words are
    /// taken as strings). Relative paths inside the file are resolved
    /// against the file's directory.
    pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let mut table: toml::Table =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                rebase_paths(&mut table, base);
                table
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut table, key, value.clone())?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(e.to_string()))?;
        cfg.solver.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.solver.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks every parameter group.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: nlretinex::Error| CliError::Config(e.to_string());
        self.color.validate().map_err(wrap)?;
        self.guide.validate().map_err(wrap)?;
        self.weights.validate().map_err(wrap)?;
        self.solver.validate().map_err(wrap)?;
        self.gamma.validate().map_err(wrap)?;
        if !matches!(self.output_bits, 8 | 16) {
            return Err(CliError::Config(format!("output_bits must be 8 or 16, got {}", self.output_bits)));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn params<T: Real + DeserializeOwned>(&self) -> Result<Params<T>, CliError> {
        Ok(Params {
            color_correct: self.color_correct,
            color: recast(&self.color)?,
            guide: recast(&self.guide)?,
            weights: recast(&self.weights)?,
            solver: recast(&self.solver)?,
            gamma: recast(&self.gamma)?,
        })
    }

    pub fn output_depth(&self) -> nlretinex::BitDepth {
        if self.output_bits == 16 {
            nlretinex::BitDepth::Sixteen
        } else {
            nlretinex::BitDepth::Eight
        }
    }
}

/// Parses `key=value`; the value is read as TOML and falls back to a string.
pub fn parse_override(arg: &str) -> Result<(String, toml::Value), String> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{arg}`"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(format!("empty key in `{arg}`"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn rebase_paths(table: &mut toml::Table, base: &Path) {
    let rebase = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    };
    for key in ["output_dir", "gt_dir"] {
        if let Some(v) = table.get_mut(key) {
            rebase(v);
        }
    }
    if let Some(toml::Value::Array(items)) = table.get_mut("inputs") {
        items.iter_mut().for_each(rebase);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn override_parsing() {
        assert_eq!(parse_override("solver.alpha=0.2").unwrap().1, toml::Value::Float(0.2));
        assert_eq!(parse_override("solver.max_iters = 7").unwrap().1, toml::Value::Integer(7));
        assert_eq!(parse_override("precision=f32").unwrap().1, toml::Value::String("f32".into()));
        assert_eq!(parse_override("dump_intermediates=true").unwrap().1, toml::Value::Boolean(true));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("=1").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "output_dir = \"res\"\n[solver]\nalpha = 0.3\nbeta = 0.4\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &[parse_override("solver.beta=0.7").unwrap()]).unwrap();
        assert_eq!(cfg.solver.alpha, 0.3);
        assert_eq!(cfg.solver.beta, 0.7);
        assert_eq!(cfg.solver.lambda, SolverParams::<f64>::default().lambda);
        assert_eq!(cfg.output_dir, dir.path().join("res"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[solver]\nalpah = 1.0\n").is_err());
        assert!(RunConfig::load(None, &[parse_override("bogus=1").unwrap()]).is_err());
        assert!(RunConfig::load(None, &[parse_override("seed.x=1").unwrap()]).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.output_bits = 12;
        assert!(cfg.validate().is_err());
        cfg.output_bits = 16;
        cfg.solver.alpha = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_precision_params() {
        let cfg = RunConfig::load(None, &[parse_override("solver.alpha=0.125").unwrap()]).unwrap();
        let p: Params<f32> = cfg.params().unwrap();
        assert_eq!(p.solver.alpha, 0.125f32);
        assert_eq!(p.weights.nu, 5);
    }

    #[test]
    fn seed_flows_into_solver() {
        let cfg = RunConfig::load(None, &[parse_override("seed=42").unwrap()]).unwrap();
        assert_eq!(cfg.solver.seed, 42);
    }
}
