//! Named hyperparameter grids for `sweep = "<preset>"`.

use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Subset budgets for the kernel methods and LIME.
pub const SUBSET_SAMPLES: [usize; 5] = [512, 1024, 2048, 4096, 8192];
/// SmoothGrad noise draws or IntGrad steps.
pub const GRADIENT_SAMPLES: [usize; 5] = [64, 128, 256, 512, 1024];
/// REAL-X selection penalties.
pub const REAL_X_LAMBDA: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

pub const EXPLAIN_PRESETS: [&str; 2] = ["subset-samples", "gradient-samples"];
pub const TRAIN_PRESETS: [&str; 1] = ["real-x-lambda"];

pub fn explain_grid(name: &str) -> Result<&'static [usize], CliError> {
    match name {
        "subset-samples" => Ok(&SUBSET_SAMPLES),
        "gradient-samples" => Ok(&GRADIENT_SAMPLES),
        other => Err(CliError::Usage(format!("unknown explain sweep {other:?} ({})", EXPLAIN_PRESETS.join(", ")))),
    }
}

pub fn train_grid(name: &str) -> Result<&'static [f64], CliError> {
    match name {
        "real-x-lambda" => Ok(&REAL_X_LAMBDA),
        other => Err(CliError::Usage(format!("unknown train sweep {other:?} ({})", TRAIN_PRESETS.join(", ")))),
    }
}

/// `out/a.csv` with tag `512` becomes `out/a-512.csv`.
pub fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{tag}"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_go_before_the_extension() {
        assert_eq!(tagged(Path::new("out/a.csv"), "512"), PathBuf::from("out/a-512.csv"));
        assert_eq!(tagged(Path::new("w"), "0.001"), PathBuf::from("w-0.001"));
    }

    #[test]
    fn unknown_presets_are_usage_errors() {
        assert_eq!(explain_grid("subset-samples").unwrap()[4], 8192);
        assert!(matches!(explain_grid("nope"), Err(CliError::Usage(_))));
        assert!(matches!(train_grid("subset-samples"), Err(CliError::Usage(_))));
    }
}
