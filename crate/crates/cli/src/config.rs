//! Run configuration: a TOML file with one section per command plus a shared
//! `[process]` section, adjusted by `--set section.key=value` overrides.
//!
//! ```toml
//! [process]
//! name = "lemma3"
//!
//! [gen-data]
//! count = 1000
//! seed = 7
//! output = "data.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use attrib_core::synthetic::SyntheticProcess;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub process: Option<ProcessSection>,
    #[serde(default, rename = "gen-data")]
    pub gen_data: Option<GenDataSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub explain: Option<ExplainSection>,
    #[serde(default)]
    pub evaluate: Option<EvaluateSection>,
    #[serde(default, rename = "demo-leakage")]
    pub demo_leakage: Option<DemoSection>,
}

/// A synthetic process by name, with optional parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProcessSection {
    pub name: String,
    /// `linear-gaussian` weights and bias.
    pub weights: Option<Vec<f64>>,
    pub bias: Option<f64>,
    /// `dummy-feature` rates `P(x_i = 1)` and `P(y = 1 | x1)`.
    pub x_rates: Option<[f64; 2]>,
    pub y_rates: Option<[f64; 2]>,
}

impl ProcessSection {
    pub fn build(&self) -> Result<SyntheticProcess, CliError> {
        let p = match self.name.as_str() {
            "linear-gaussian" if self.weights.is_some() || self.bias.is_some() => {
                let default = SyntheticProcess::by_name("linear-gaussian")?;
                let SyntheticProcess::LinearGaussian(lg) = default else { unreachable!() };
                SyntheticProcess::linear_gaussian(
                    self.weights.clone().unwrap_or(lg.weights),
                    self.bias.unwrap_or(lg.bias),
                )?
            }
            "dummy-feature" if self.x_rates.is_some() || self.y_rates.is_some() => {
                SyntheticProcess::dummy_feature(
                    self.x_rates.unwrap_or([0.5, 0.5]),
                    self.y_rates.unwrap_or([0.2, 0.8]),
                )?
            }
            name => {
                if self.weights.is_some() || self.bias.is_some() || self.x_rates.is_some() || self.y_rates.is_some() {
                    return Err(CliError::Usage(format!("process {name:?} takes no parameters")));
                }
                SyntheticProcess::by_name(name).map_err(|e| CliError::Usage(e.to_string()))?
            }
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenDataSection {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    /// `model`, `surrogate`, `fastshap`, `fastshap-kl` or `real-x`.
    pub target: String,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Training-log CSV; defaults to `<output>.log.csv`.
    pub log: Option<PathBuf>,
    #[serde(default = "default_arch")]
    pub arch: String,
    pub hidden: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub l2_penalty: f64,
    /// Surrogate masking distribution.
    #[serde(default = "default_sampler")]
    pub sampler: String,
    /// Conditional model for explainer targets: a surrogate weight file, or
    /// `oracle` for the `[process]` section's exact conditionals.
    pub conditional: Option<String>,
    #[serde(default = "default_subsets")]
    pub subsets_per_instance: usize,
    #[serde(default = "default_subset_mode")]
    pub subset_mode: String,
    #[serde(default)]
    pub lambda: f64,
    /// `real-x-lambda` trains once per preset value into tagged outputs.
    pub sweep: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExplainSection {
    pub method: String,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// `none`, `true-label` or `predicted`.
    #[serde(default = "default_class_source")]
    pub class_source: String,
    /// Prediction-model weight file (shap, smoothgrad, intgrad, predicted classes).
    pub model: Option<PathBuf>,
    /// Surrogate weight file or `oracle`.
    pub conditional: Option<String>,
    /// Amortized explainer weight file.
    pub explainer: Option<PathBuf>,
    /// Subset samples (kernel methods, LIME) or gradient samples/steps.
    pub num_samples: Option<usize>,
    #[serde(default = "default_kernel_width")]
    pub kernel_width: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// IntGrad reference input; zero by default.
    pub baseline: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// `subset-samples` or `gradient-samples`: one tagged output per preset
    /// value of `num-samples`.
    pub sweep: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateSection {
    pub attributions: PathBuf,
    pub dataset: PathBuf,
    /// Surrogate weight file or `oracle`.
    pub conditional: String,
    pub grid: Option<Vec<f64>>,
    /// `signed` or `absolute`.
    #[serde(default = "default_ranking")]
    pub ranking: String,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub seed: u64,
    pub curve_output: PathBuf,
    pub report_output: PathBuf,
    pub plot_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DemoSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Training-set size for the surrogate-backed rows; 0 skips them.
    #[serde(default = "default_surrogate_samples")]
    pub surrogate_samples: usize,
    #[serde(default = "default_surrogate_epochs")]
    pub surrogate_epochs: usize,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    pub output: Option<PathBuf>,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            seed: 0,
            test_size: default_test_size(),
            surrogate_samples: default_surrogate_samples(),
            surrogate_epochs: default_surrogate_epochs(),
            resamples: default_resamples(),
            output: None,
        }
    }
}

fn default_arch() -> String {
    "tanh-mlp".into()
}
fn default_lr() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    32
}
fn default_sampler() -> String {
    "uniform-cardinality".into()
}
fn default_subsets() -> usize {
    32
}
fn default_subset_mode() -> String {
    "sampled".into()
}
fn default_class_source() -> String {
    "none".into()
}
fn default_kernel_width() -> f64 {
    0.75
}
fn default_ridge() -> f64 {
    1e-3
}
fn default_noise() -> f64 {
    0.1
}
fn default_ranking() -> String {
    "signed".into()
}
fn default_resamples() -> usize {
    attrib_core::evaluation::DEFAULT_RESAMPLES
}
fn default_test_size() -> usize {
    2000
}
fn default_surrogate_samples() -> usize {
    20_000
}
fn default_surrogate_epochs() -> usize {
    60
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `section.key=value` (or `key=value`, meaning `default_section`).
pub fn apply_override(table: &mut Table, arg: &str, default_section: &str) -> Result<(), CliError> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {arg:?} is not key=value")))?;
    let (section, key) = match path.split_once('.') {
        Some((s, k)) => (s.trim(), k.trim()),
        None => (default_section, path.trim()),
    };
    if key.is_empty() || section.is_empty() {
        return Err(CliError::Usage(format!("override {arg:?} has an empty key")));
    }
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = entry else {
        return Err(CliError::Usage(format!("{section:?} is not a section")));
    };
    sec.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String], default_section: &str) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o, default_section)?;
    }
    RunConfig::deserialize(table).map_err(|e| CliError::Usage(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed_and_sectioned() {
        let cfg = load(
            None,
            &[
                "count=12".into(),
                "output=out.csv".into(),
                "process.name=lemma3".into(),
                "gen-data.seed=4".into(),
            ],
            "gen-data",
        )
        .unwrap();
        let g = cfg.gen_data.unwrap();
        assert_eq!((g.count, g.seed), (12, 4));
        assert_eq!(g.output, PathBuf::from("out.csv"));
        assert_eq!(cfg.process.unwrap().name, "lemma3");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load(None, &["gen-data.cuont=3".into()], "gen-data").is_err());
        assert!(load(None, &["bogus.x=1".into()], "gen-data").is_err());
        assert!(load(None, &["no-equals".into()], "gen-data").is_err());
    }

    #[test]
    fn file_and_arrays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[process]\nname = \"linear-gaussian\"\nweights = [1.0, 2.0]\n\n[gen-data]\ncount = 3\noutput = \"x\"\n",
        )
        .unwrap();
        let cfg = load(Some(&path), &["process.bias=0.5".into()], "gen-data").unwrap();
        let proc = cfg.process.unwrap().build().unwrap();
        assert_eq!(proc.dim(), 2);
        let bad = ProcessSection { name: "lemma9".into(), weights: None, bias: None, x_rates: None, y_rates: None };
        assert!(matches!(bad.build(), Err(CliError::Usage(_))));
    }
}
