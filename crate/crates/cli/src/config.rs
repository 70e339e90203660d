use std::path::{Path, PathBuf};

use dirichlet_lab::refine::{CapacityTarget, RefinementFamily, StudyThresholds};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub operator: OperatorSpec,
    pub measure: MeasureSpec,
    pub nonlinearity: NonlinearitySpec,
    pub solver: SolverSpec,
    pub kato: KatoSpec,
    pub audit: AuditSpec,
    pub capacity: CapacitySpec,
    pub mc: McSpec,
    pub study: StudySpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKindSpec {
    Grid,
    Fractional,
    MatrixFile,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSpec {
    pub kind: OperatorKindSpec,
    pub dim: usize,
    pub n: usize,
    /// Defaults to `1/(n+1)`.
    pub h: Option<f64>,
    pub alpha: f64,
    pub file: Option<PathBuf>,
    pub edge_prob: f64,
    pub seed: u64,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self { kind: OperatorKindSpec::Grid, dim: 1, n: 8, h: None, alpha: 0.5, file: None, edge_prob: 0.3, seed: 0 }
    }
}

/// Either sparse atoms `"i:mass, j:mass"` or a density against `m`; neither
/// means the zero measure.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSpec {
    pub atoms: Option<String>,
    pub density: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityKindSpec {
    Zero,
    Power,
    Exponential,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKindSpec,
    pub c: f64,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        Self { kind: NonlinearityKindSpec::Zero, c: 1.0, p: 2.0, c1: 1.0, c2: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Truncation levels for `reduce`; the default schedule when absent.
    pub schedule: Option<Vec<f64>>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { tol: None, max_iter: 10_000, schedule: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoSpec {
    R1,
    One,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KatoSpec {
    /// `positive-part`, `absolute-value` or `shifted-positive-part:c`.
    pub maps: Vec<String>,
    pub rho: RhoSpec,
    /// Count the total-variation form of the convex-image bound towards the
    /// exit status.
    pub total_variation_bound: bool,
}

impl Default for KatoSpec {
    fn default() -> Self {
        Self {
            maps: vec!["positive-part".into(), "absolute-value".into(), "shifted-positive-part:0.1".into()],
            rho: RhoSpec::R1,
            total_variation_bound: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSpec {
    /// Further sparse measures solved and audited next to the main one.
    pub measures: Vec<String>,
    pub rho: RhoSpec,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self { measures: vec![], rho: RhoSpec::R1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitySpec {
    pub set: Vec<usize>,
    /// For `cap-scaling` the default is the conjugate of `study.p`.
    pub p: Option<f64>,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub oracle: bool,
    pub oracle_resolution: f64,
}

impl Default for CapacitySpec {
    fn default() -> Self {
        Self { set: vec![0], p: None, gap_tol: 1e-6, max_iter: 100_000, oracle: false, oracle_resolution: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub paths: usize,
    pub seed: u64,
    pub start: usize,
}

impl Default for McSpec {
    fn default() -> Self {
        Self { paths: 100_000, seed: 20_240_917, start: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySpec {
    pub family: RefinementFamily,
    pub p: f64,
    pub c: f64,
    pub target: CapacityTarget,
    pub thresholds: StudyThresholds,
    /// Verdict (`collapse`, `null-capacity-limit`, ...) the run must
    /// reproduce to exit with status 0.
    pub expect: Option<String>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            family: RefinementFamily::default(),
            p: 3.0,
            c: 1.0,
            target: CapacityTarget::DiracNode,
            thresholds: StudyThresholds::default(),
            expect: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Any of `json`, `csv`, `dat`.
    pub formats: Vec<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec!["json".into(), "csv".into(), "dat".into()] }
    }
}

impl OutputSpec {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// Parses `text`, applies `key=value` overrides (values in TOML syntax, bare
/// words taken as strings) and deserializes.
pub fn load(text: &str, origin: &str, overrides: &[String]) -> Result<ExperimentConfig, String> {
    let base: ExperimentConfig = toml::from_str(text).map_err(|e| format!("{origin}: {e}"))?;
    if overrides.is_empty() {
        return Ok(base);
    }
    let mut table: toml::Table = text.parse().map_err(|e| format!("{origin}: {e}"))?;
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| format!("override {item:?} is not key=value"))?;
        let value = parse_value(raw.trim());
        set_dotted(&mut table, key.trim(), value).map_err(|e| format!("override {item:?}: {e}"))?;
    }
    let merged = toml::to_string(&table).map_err(|e| e.to_string())?;
    toml::from_str(&merged).map_err(|e| format!("{origin} with overrides: {e}"))
}

pub fn load_file(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, String> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            load(&text, &p.display().to_string(), overrides)
        }
        None => load("", "<defaults>", overrides),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key {key:?}"));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(format!("{part} is not a table")),
        };
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_overrides() {
        let cfg = load("operator.kind = \"fractional\"\noperator.n = 16\nsolver.tol = 1e-12\n", "t", &[
            "operator.alpha=0.25".into(),
            "measure.atoms=0:1, 3:2".into(),
        ])
        .unwrap();
        assert_eq!(cfg.operator.kind, OperatorKindSpec::Fractional);
        assert_eq!(cfg.operator.n, 16);
        assert_eq!(cfg.operator.alpha, 0.25);
        assert_eq!(cfg.solver.tol, Some(1e-12));
        assert_eq!(cfg.measure.atoms.as_deref(), Some("0:1, 3:2"));
    }

    #[test]
    fn unknown_key_is_reported_with_location() {
        let err = load("[solver]\ntol = 1e-9\nmax_iters = 3\n", "cfg.toml", &[]).unwrap_err();
        assert!(err.contains("max_iters"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn full_precision_numbers() {
        let cfg = load("operator.h = 0.1000000000000000055511151231257827\n", "t", &[]).unwrap();
        assert_eq!(cfg.operator.h, Some(0.1));
    }

    #[test]
    fn partial_study_tables() {
        let cfg = load("study.expect = \"collapse\"\nstudy.family.levels = [7, 15]\n", "t", &[]).unwrap();
        assert_eq!(cfg.study.expect.as_deref(), Some("collapse"));
        assert_eq!(cfg.study.family.levels, vec![7, 15]);
        assert_eq!(cfg.study.family.alpha, 0.25);
    }
}
