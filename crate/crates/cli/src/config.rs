//! Experiment configuration: a TOML file with `dataset`, `threat_model`, `train`,
//! `attacks` and `eval` sections plus dot-path overrides from the command line.

use std::path::{Path, PathBuf};

use adt_core::attacks::AttackSpec;
use adt_core::data::SyntheticKind;
use adt_core::dist::ThreatModel;
use adt_core::train::TrainSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub threat_model: ThreatConfig,
    pub train: TrainSpec,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_attacks() -> Vec<AttackSpec> {
    vec![AttackSpec::fgsm(), AttackSpec::pgd(20)]
}

/// Exactly one of `synthetic`, `csv` or `idx` must be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxConfig>,
}

fn default_test_fraction() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    800
}
fn default_noise() -> f64 {
    0.1
}

/// Numeric columns with one integer label column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: PathBuf,
    /// Column index of the label; `None` means the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<usize>,
    #[serde(default = "default_true")]
    pub header: bool,
    /// Min-max scale each feature column into `[0, 1]`; otherwise values must already lie there.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreatConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Valid input range, applied after the ball projection when `clip_to_box` is set.
    #[serde(default = "default_box")]
    pub pixel_box: (f64, f64),
    #[serde(default = "default_true")]
    pub clip_to_box: bool,
}

fn default_epsilon() -> f64 {
    8.0 / 255.0
}
fn default_box() -> (f64, f64) {
    (0.0, 1.0)
}

impl Default for ThreatConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            pixel_box: default_box(),
            clip_to_box: true,
        }
    }
}

impl ThreatConfig {
    pub fn model(&self) -> ThreatModel {
        ThreatModel {
            epsilon: self.epsilon,
            pixel_box: self.clip_to_box.then_some(self.pixel_box),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate only the first this-many test examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_examples: Option<usize>,
    #[serde(default)]
    pub hessian: bool,
    #[serde(default = "default_points")]
    pub hessian_points: usize,
    #[serde(default = "default_hessian_iters")]
    pub hessian_iters: usize,
    #[serde(default = "default_hessian_tol")]
    pub hessian_tol: f64,
    #[serde(default)]
    pub landscape: bool,
    #[serde(default = "default_resolution")]
    pub landscape_resolution: usize,
    /// Test example the loss surface is drawn around.
    #[serde(default)]
    pub landscape_index: usize,
    #[serde(default)]
    pub diversity: bool,
    #[serde(default = "default_diversity_points")]
    pub diversity_points: usize,
    #[serde(default = "default_diversity_samples")]
    pub diversity_samples: usize,
}

fn default_points() -> usize {
    50
}
fn default_hessian_iters() -> usize {
    100
}
fn default_hessian_tol() -> f64 {
    1e-6
}
fn default_resolution() -> usize {
    41
}
fn default_diversity_points() -> usize {
    10
}
fn default_diversity_samples() -> usize {
    20
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_examples: None,
            hessian: false,
            hessian_points: default_points(),
            hessian_iters: default_hessian_iters(),
            hessian_tol: default_hessian_tol(),
            landscape: false,
            landscape_resolution: default_resolution(),
            landscape_index: 0,
            diversity: false,
            diversity_points: default_diversity_points(),
            diversity_samples: default_diversity_samples(),
        }
    }
}

impl ExperimentConfig {
    /// Bound checks; the error names the offending field by its dot path.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        let d = &self.dataset;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return fail("dataset.test_fraction must lie in (0, 1)".into());
        }
        let sources = [d.synthetic.is_some(), d.csv.is_some(), d.idx.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return fail(
                "dataset needs exactly one of [dataset.synthetic], [dataset.csv], [dataset.idx]"
                    .into(),
            );
        }
        if let Some(s) = &d.synthetic {
            if s.n < 2 {
                return fail("dataset.synthetic.n must be at least 2".into());
            }
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return fail("dataset.synthetic.noise must be nonnegative".into());
            }
        }
        let tm = &self.threat_model;
        if !(tm.epsilon > 0.0 && tm.epsilon.is_finite()) {
            return fail(format!(
                "threat_model.epsilon must be positive, got {}",
                tm.epsilon
            ));
        }
        let (lo, hi) = tm.pixel_box;
        if !(lo < hi) {
            return fail("threat_model.pixel_box needs lo < hi".into());
        }
        self.train.validate("train").map_err(CliError::Config)?;
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate(&format!("attacks.{i}"))
                .map_err(CliError::Config)?;
            if a.name.is_empty() || a.name.contains(',') {
                return fail(format!(
                    "attacks.{i}.name must be nonempty and free of commas"
                ));
            }
            if self.attacks[..i].iter().any(|b| b.name == a.name) {
                return fail(format!("attacks.{i}.name `{}` is used twice", a.name));
            }
        }
        let e = &self.eval;
        if e.max_examples == Some(0) {
            return fail("eval.max_examples must be at least 1".into());
        }
        if e.hessian_points == 0 || e.hessian_iters == 0 || !(e.hessian_tol > 0.0) {
            return fail(
                "eval.hessian_points, eval.hessian_iters and eval.hessian_tol must be positive"
                    .into(),
            );
        }
        if e.landscape_resolution < 3 {
            return fail("eval.landscape_resolution must be at least 3".into());
        }
        if e.diversity_points == 0 || e.diversity_samples < 2 {
            return fail(
                "eval.diversity_points must be positive and eval.diversity_samples at least 2"
                    .into(),
            );
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Joins relative dataset paths onto `base` and checks that they exist.
    fn resolve_paths(&mut self, base: &Path) -> Result<(), CliError> {
        let fix = |p: &mut PathBuf, field: &str| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{field}: no such file {}",
                    p.display()
                )))
            }
        };
        if let Some(c) = &mut self.dataset.csv {
            fix(&mut c.path, "dataset.csv.path")?;
        }
        if let Some(i) = &mut self.dataset.idx {
            fix(&mut i.images, "dataset.idx.images")?;
            fix(&mut i.labels, "dataset.idx.labels")?;
        }
        Ok(())
    }
}

/// Parses and validates config text, applying `key=value` overrides first.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| describe(text, &e, true))?
    } else {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| describe(text, &e, true))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let patched = toml::to_string(&table).expect("table serializes");
        toml::from_str(&patched).map_err(|e| describe(&patched, &e, false))?
    };
    config.validate()?;
    Ok(config)
}

/// Reads `path`, applies overrides, validates, and resolves dataset paths against the
/// config file's directory.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config = parse_config(&text, overrides)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new("")))?;
    Ok(config)
}

/// Sets a dot-path such as `train.inner.lambda` or `attacks.1.steps`. The value is read
/// as a TOML literal when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(CliError::Config(format!(
            "override `{assignment}` is not key=value"
        )));
    };
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "override key `{key}` has an empty segment"
        )));
    }
    let (last, path) = parts.split_last().expect("nonempty split");
    let mut cur = table;
    let mut walked = String::new();
    for (i, p) in path.iter().enumerate() {
        if !walked.is_empty() {
            walked.push('.');
        }
        walked.push_str(p);
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match next {
            toml::Value::Table(t) => t,
            toml::Value::Array(items) => {
                let Some(idx) = path.get(i + 1).and_then(|s| s.parse::<usize>().ok()) else {
                    return Err(CliError::Config(format!(
                        "override `{key}`: `{walked}` is a list, index it by number"
                    )));
                };
                return set_in_array(items, idx, &path[i + 2..], last, value, key);
            }
            _ => {
                return Err(CliError::Config(format!(
                    "override `{key}`: `{walked}` is not a section"
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn set_in_array(
    items: &mut [toml::Value],
    idx: usize,
    rest: &[&str],
    last: &str,
    value: toml::Value,
    key: &str,
) -> Result<(), CliError> {
    let Some(toml::Value::Table(t)) = items.get_mut(idx) else {
        return Err(CliError::Config(format!(
            "override `{key}`: no list entry {idx}"
        )));
    };
    if rest.is_empty() {
        t.insert(last.to_string(), value);
        return Ok(());
    }
    let mut nested = rest.join(".");
    nested.push('.');
    nested.push_str(last);
    let raw = value.to_string();
    apply_override(t, &format!("{nested}={raw}"))
}

/// Turns a TOML/serde error into a config error with its line (when `text` is what the
/// user wrote), the enclosing section, and for unknown keys the nearest accepted key.
fn describe(text: &str, err: &toml::de::Error, show_line: bool) -> CliError {
    let msg = err.message().trim();
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let section = line.and_then(|l| {
        text.lines()
            .take(l)
            .filter_map(|t| {
                let t = t.trim();
                t.starts_with('[')
                    .then(|| t.trim_matches(|c| c == '[' || c == ']').to_string())
            })
            .last()
    });
    let mut out = String::new();
    if let Some(l) = line.filter(|_| show_line) {
        out.push_str(&format!("line {l}: "));
    }
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        let unknown = rest.split('`').next().unwrap_or_default();
        let known: Vec<&str> = rest.split('`').skip(2).step_by(2).collect();
        let field = match &section {
            Some(s) => format!("{s}.{unknown}"),
            None => unknown.to_string(),
        };
        out.push_str(&format!("unknown key `{field}`"));
        if let Some(best) = known.iter().min_by_key(|k| strsim::levenshtein(unknown, k)) {
            out.push_str(&format!("; did you mean `{best}`?"));
        }
        return CliError::Config(out);
    }
    if let Some(s) = &section {
        out.push_str(&format!("in [{s}]: "));
    }
    out.push_str(msg);
    CliError::Config(out)
}
