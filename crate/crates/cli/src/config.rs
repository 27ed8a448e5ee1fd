//! TOML experiment configurations.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use czkit::SignedMeasure;

use crate::CliError;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// A path to a measure file, or the measure written inline.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MeasureSpec {
    File(PathBuf),
    Inline(toml::Value),
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub dimension: Option<usize>,
    #[serde(rename = "box")]
    pub bounds: Option<BoxSpec>,
    #[serde(default)]
    pub resolutions: Vec<usize>,
    pub kernel: Option<String>,
    pub measure: Option<MeasureSpec>,
    #[serde(default)]
    pub heights: Vec<f64>,
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub theta: Option<f64>,
    pub exclusion_min: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Outputs,
}

impl ExperimentConfig {
    /// Parses the file and resolves relative paths against its directory.
    /// A referenced measure file must exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {}", e.message())))?;
        if let Some(MeasureSpec::File(p)) = &mut c.measure {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::Parse(format!("measure file {} does not exist", p.display())));
            }
        }
        for p in [&mut c.output.report, &mut c.output.csv, &mut c.output.plot].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn measure(&self) -> Result<Option<SignedMeasure>, CliError> {
        match &self.measure {
            None => Ok(None),
            Some(MeasureSpec::File(p)) => read_measure(p).map(Some),
            Some(MeasureSpec::Inline(v)) => {
                let json = serde_json::to_value(v).map_err(|e| CliError::Parse(e.to_string()))?;
                SignedMeasure::from_json(&json)
                    .map(Some)
                    .map_err(|e| CliError::Parse(format!("inline measure: {e}")))
            }
        }
    }
}

pub fn read_measure(path: &Path) -> Result<SignedMeasure, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    SignedMeasure::from_json_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_a_parse_error() {
        let e = ExperimentConfig::parse("", Path::new(".")).unwrap_err();
        assert!(matches!(e, CliError::Parse(ref m) if m.contains("scenario")), "{e:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("scenario = \"x\"\nresolution = [1]\n", Path::new(".")).is_err());
    }

    #[test]
    fn inline_measure_and_schedules() {
        let c = ExperimentConfig::parse(
            r#"
scenario = "dirac"
dimension = 2
resolutions = [32, 64]
seed = 7
box = { lo = [0.0, 0.0], hi = [1.0, 1.0] }
measure = { dim = 2, atoms = [{ x = [0.5, 0.5], w = 1.0 }] }
"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.resolutions, vec![32, 64]);
        let mu = c.measure().unwrap().unwrap();
        assert_eq!(mu.atoms().len(), 1);
    }

    #[test]
    fn missing_measure_file_is_refused() {
        let e = ExperimentConfig::parse("scenario = \"x\"\nmeasure = \"no/such/file.json\"\n", Path::new("/tmp")).unwrap_err();
        assert!(matches!(e, CliError::Parse(_)));
    }
}
