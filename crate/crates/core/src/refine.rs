//! Grid-refinement studies on `(0,1)^d` with a Dirac source.
//!
//! Studies run in `f64`; levels are solved in order and failures are kept as
//! rows so a partial table is still reported.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::capacity::{cap_ap, CapacityOptions};
use crate::error::{invalid, Result};
use crate::measure::SignedMeasure;
use crate::nonlinearity::Nonlinearity;
use crate::operator::{build_grid_operator, check_transient, fractional_power, validate_dirichlet, DirichletOperator};
use crate::solver::{solve_semilinear, SolverOptions};

/// `p' = p / (p - 1)`.
pub fn conjugate_exponent(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `d / (d - 2α)` when `d > 2α`. Used to choose study parameters only.
pub fn critical_exponent(dim: usize, alpha: f64) -> Option<f64> {
    let d = dim as f64;
    (d > 2.0 * alpha).then(|| d / (d - 2.0 * alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementFamily {
    pub dim: usize,
    /// Fractional exponent applied to the grid Laplacian; 1 keeps the grid.
    pub alpha: f64,
    /// Nodes per side at each level; mesh `h = 1/(n+1)`.
    pub levels: Vec<usize>,
    /// Coordinate of the Dirac along every axis.
    pub dirac_site: f64,
    pub mass: f64,
}

impl Default for RefinementFamily {
    fn default() -> Self {
        Self { dim: 1, alpha: 0.25, levels: vec![63, 127, 255, 511, 1023], dirac_site: 0.5, mass: 1.0 }
    }
}

impl RefinementFamily {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {}", self.dim));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.levels.is_empty() || self.levels[0] == 0 || self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("levels must be positive and strictly increasing");
        }
        if !(self.dirac_site > 0.0 && self.dirac_site < 1.0) {
            return invalid(format!("dirac site must lie in (0, 1), got {}", self.dirac_site));
        }
        if !self.mass.is_finite() {
            return invalid("mass must be finite");
        }
        Ok(())
    }

    pub fn mesh(&self, n: usize) -> f64 {
        1.0 / (n as f64 + 1.0)
    }

    /// Validated, transient operator at level `n`.
    pub fn operator(&self, n: usize) -> Result<DirichletOperator<f64>> {
        let grid = build_grid_operator(self.dim, n, self.mesh(n))?;
        let op = if self.alpha < 1.0 { fractional_power(&grid, self.alpha)? } else { grid };
        validate_dirichlet(&op).into_result()?;
        let verdict = check_transient(&op);
        if !verdict.transient {
            return Err(crate::error::LabError::Transience(verdict.reason));
        }
        Ok(op)
    }

    /// Node index along one axis nearest to coordinate `x`.
    fn axis_index(&self, n: usize, x: f64) -> usize {
        let i = (x / self.mesh(n) - 1.0).round();
        i.clamp(0.0, (n - 1) as f64) as usize
    }

    fn flatten(&self, n: usize, coords: &[usize]) -> usize {
        coords.iter().enumerate().map(|(d, c)| c * n.pow(d as u32)).sum()
    }

    pub fn dirac_node(&self, n: usize) -> usize {
        let c = self.axis_index(n, self.dirac_site);
        self.flatten(n, &vec![c; self.dim])
    }

    pub fn dirac(&self, op: &DirichletOperator<f64>, n: usize) -> Result<SignedMeasure<f64>> {
        SignedMeasure::dirac(op.space(), self.dirac_node(n), self.mass)
    }

    /// Nodes at `site ± distance` along the first axis that lie inside the
    /// domain.
    pub fn probe_nodes(&self, n: usize, distance: f64) -> Vec<usize> {
        let c = self.axis_index(n, self.dirac_site);
        [self.dirac_site - distance, self.dirac_site + distance]
            .into_iter()
            .filter(|x| *x > 0.0 && *x < 1.0)
            .map(|x| {
                let mut coords = vec![c; self.dim];
                coords[0] = self.axis_index(n, x);
                self.flatten(n, &coords)
            })
            .collect()
    }
}

/// Verdict thresholds, pinned against coarse runs of the default family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyThresholds {
    pub probe_distance: f64,
    /// Collapse needs the finest probe value below this fraction of the
    /// coarsest.
    pub collapse_ratio: f64,
    /// Persistence needs the three finest probe values within this relative
    /// spread.
    pub persist_tol: f64,
    /// Fitted log-log slope above which capacity is taken to vanish.
    pub null_slope: f64,
    /// Floor, relative to the Dirac mass, added to the extrapolation spread
    /// when comparing the extrapolated retained mass with 0 or the mass.
    pub extrapolation_floor: f64,
}

impl Default for StudyThresholds {
    fn default() -> Self {
        Self { probe_distance: 0.25, collapse_ratio: 0.75, persist_tol: 0.1, null_slope: 0.1, extrapolation_floor: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub h: f64,
    pub n: usize,
    pub sup_u: Option<f64>,
    pub probes: Vec<f64>,
    /// `Σ |f(x,u(x))| m(x)`.
    pub absorbed: Option<f64>,
    pub retained: Option<f64>,
    /// `|Σ ((-Au) - f(u)) m - μ(E)|`.
    pub balance_error: Option<f64>,
    pub cap: Option<f64>,
    pub runtime_s: f64,
    pub failure: Option<String>,
}

impl StudyRow {
    fn empty(h: f64, n: usize) -> Self {
        Self {
            h,
            n,
            sup_u: None,
            probes: vec![],
            absorbed: None,
            retained: None,
            balance_error: None,
            cap: None,
            runtime_s: 0.0,
            failure: None,
        }
    }

    pub fn probe_min(&self) -> Option<f64> {
        self.probes.iter().copied().reduce(f64::min)
    }

    pub fn probe_max(&self) -> Option<f64> {
        self.probes.iter().copied().reduce(f64::max)
    }
}

/// One CSV line: `h,n,sup_u,probe_min,probe_max,absorbed,retained,cap,runtime_s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub h: f64,
    pub n: usize,
    pub sup_u: Option<f64>,
    pub probe_min: Option<f64>,
    pub probe_max: Option<f64>,
    pub absorbed: Option<f64>,
    pub retained: Option<f64>,
    pub cap: Option<f64>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    SupU,
    ProbeMax,
    Absorbed,
    Retained,
    Cap,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::SupU => "sup_u",
            Column::ProbeMax => "probe_max",
            Column::Absorbed => "absorbed",
            Column::Retained => "retained",
            Column::Cap => "cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.failure.is_none())
    }

    /// Rows for CSV output; `zero_runtime` blanks timings for byte-stable
    /// artifacts.
    pub fn csv_rows(&self, zero_runtime: bool) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|r| CsvRow {
                h: r.h,
                n: r.n,
                sup_u: r.sup_u,
                probe_min: r.probe_min(),
                probe_max: r.probe_max(),
                absorbed: r.absorbed,
                retained: r.retained,
                cap: r.cap,
                runtime_s: if zero_runtime { 0.0 } else { r.runtime_s },
            })
            .collect()
    }

    /// `(h, value)` pairs of one column, skipping missing values.
    pub fn curve(&self, column: Column) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| {
                let v = match column {
                    Column::SupU => r.sup_u,
                    Column::ProbeMax => r.probe_max(),
                    Column::Absorbed => r.absorbed,
                    Column::Retained => r.retained,
                    Column::Cap => r.cap,
                };
                v.map(|v| (r.h, v))
            })
            .collect()
    }

    /// Two-column whitespace-separated text of a curve.
    pub fn curve_dat(&self, column: Column) -> String {
        let mut out = format!("# h {}\n", column.name());
        for (h, v) in self.curve(column) {
            out.push_str(&format!("{h:.17e} {v:.17e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollapseVerdict {
    Collapse,
    Persist,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseStudy {
    pub p: f64,
    pub c: f64,
    pub table: StudyTable,
    pub verdict: CollapseVerdict,
    pub thresholds: StudyThresholds,
}

/// Probe series verdict: strictly decreasing with the finest value below
/// `collapse_ratio` of the coarsest is a collapse; the three finest values
/// within `persist_tol` relative spread is persistence.
pub fn collapse_verdict(series: &[f64], thresholds: &StudyThresholds) -> CollapseVerdict {
    if series.len() < 2 {
        return CollapseVerdict::Inconclusive;
    }
    let decreasing = series.windows(2).all(|w| w[1] < w[0]);
    let (first, last) = (series[0], series[series.len() - 1]);
    if decreasing && first > 0.0 && last < thresholds.collapse_ratio * first {
        return CollapseVerdict::Collapse;
    }
    if series.len() >= 3 {
        let tail = &series[series.len() - 3..];
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = hi.abs().max(lo.abs());
        if scale > 0.0 && (hi - lo) / scale <= thresholds.persist_tol {
            return CollapseVerdict::Persist;
        }
    }
    CollapseVerdict::Inconclusive
}

fn semilinear_row(
    family: &RefinementFamily,
    n: usize,
    f: &Nonlinearity<f64>,
    thresholds: &StudyThresholds,
    opts: &SolverOptions<f64>,
) -> StudyRow {
    let start = Instant::now();
    let h = family.mesh(n);
    let mut row = StudyRow::empty(h, n);
    let outcome = (|| -> Result<()> {
        let op = family.operator(n)?;
        let mu = family.dirac(&op, n)?;
        let report = solve_semilinear(&op, f, &mu, opts)?;
        let u = &report.u;
        let w = op.weights();
        let fu = f.eval_vec(u);
        let absorbed = fu.iter().zip(w.iter()).map(|(v, m)| v.abs() * m).sum::<f64>();
        let au = op.matrix() * u;
        let balance = (-&au - &fu).component_mul(w).sum() - mu.total_mass();
        row.sup_u = Some(u.amax());
        row.probes = family.probe_nodes(n, thresholds.probe_distance).into_iter().map(|i| u[i]).collect();
        row.absorbed = Some(absorbed);
        row.retained = Some(family.mass - absorbed);
        row.balance_error = Some(balance.abs());
        Ok(())
    })();
    if let Err(e) = outcome {
        row.failure = Some(e.to_string());
    }
    row.runtime_s = start.elapsed().as_secs_f64();
    row
}

/// Solves `-Au = -c·u^p + mass·δ` at every level.
pub fn collapse_study(
    family: &RefinementFamily,
    p: f64,
    c: f64,
    thresholds: &StudyThresholds,
    opts: &SolverOptions<f64>,
) -> Result<CollapseStudy> {
    family.validate()?;
    let f = if c == 0.0 { Nonlinearity::zero() } else { Nonlinearity::power(c, p)? };
    if !(p > 1.0) {
        return invalid(format!("exponent must exceed 1, got {p}"));
    }
    let rows: Vec<StudyRow> = family.levels.iter().map(|&n| semilinear_row(family, n, &f, thresholds, opts)).collect();
    let table = StudyTable { rows };
    let verdict = if table.is_complete() {
        let series: Vec<f64> = table.rows.iter().filter_map(StudyRow::probe_max).collect();
        if series.len() == table.rows.len() {
            collapse_verdict(&series, thresholds)
        } else {
            CollapseVerdict::Inconclusive
        }
    } else {
        CollapseVerdict::Inconclusive
    };
    Ok(CollapseStudy { p, c, table, verdict, thresholds: thresholds.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityTarget {
    DiracNode,
    WholeSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityVerdict {
    NullCapacityLimit,
    PositiveCapacityLimit,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityScaling {
    pub p: f64,
    pub target: CapacityTarget,
    pub table: StudyTable,
    /// Least-squares slope of `log cap` against `log h`.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub verdict: CapacityVerdict,
}

/// Least-squares line through `(log x, log y)`; `None` with fewer than two
/// positive points.
pub fn fit_loglog(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let logs: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if logs.len() < 2 {
        return None;
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// `Cap_{A,p}` of the Dirac node (or of the whole grid) at every level.
pub fn capacity_scaling_study(
    family: &RefinementFamily,
    p: f64,
    target: CapacityTarget,
    thresholds: &StudyThresholds,
    opts: &CapacityOptions,
) -> Result<CapacityScaling> {
    family.validate()?;
    if !(p > 1.0) {
        return invalid(format!("exponent must exceed 1, got {p}"));
    }
    let mut rows = Vec::with_capacity(family.levels.len());
    for &n in &family.levels {
        let start = Instant::now();
        let mut row = StudyRow::empty(family.mesh(n), n);
        let outcome = (|| -> Result<f64> {
            let op = family.operator(n)?;
            let set: Vec<usize> = match target {
                CapacityTarget::DiracNode => vec![family.dirac_node(n)],
                CapacityTarget::WholeSpace => (0..op.len()).collect(),
            };
            Ok(cap_ap(&op, &set, p, opts)?.value)
        })();
        match outcome {
            Ok(v) => row.cap = Some(v),
            Err(e) => row.failure = Some(e.to_string()),
        }
        row.runtime_s = start.elapsed().as_secs_f64();
        rows.push(row);
    }
    let table = StudyTable { rows };
    let fit = fit_loglog(&table.curve(Column::Cap));
    let verdict = match fit {
        Some((slope, _)) if table.is_complete() => {
            let caps: Vec<f64> = table.rows.iter().filter_map(|r| r.cap).collect();
            let decreasing = caps.windows(2).all(|w| w[1] < w[0]);
            if decreasing && slope > thresholds.null_slope {
                CapacityVerdict::NullCapacityLimit
            } else {
                CapacityVerdict::PositiveCapacityLimit
            }
        }
        _ => CapacityVerdict::Inconclusive,
    };
    Ok(CapacityScaling { p, target, table, slope: fit.map(|f| f.0), intercept: fit.map(|f| f.1), verdict })
}

/// Collapse in the semilinear study must go with a vanishing capacity at the
/// conjugate exponent, and persistence with a positive one.
pub fn verdicts_consistent(collapse: CollapseVerdict, capacity: CapacityVerdict) -> bool {
    matches!(
        (collapse, capacity),
        (CollapseVerdict::Collapse, CapacityVerdict::NullCapacityLimit)
            | (CollapseVerdict::Persist, CapacityVerdict::PositiveCapacityLimit)
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducedMass {
    pub h: Vec<f64>,
    pub retained: Vec<f64>,
    /// Limit of the retained mass as `h → 0`.
    pub extrapolated: Option<f64>,
    /// Spread between the extrapolations of the two finest level triples.
    pub residual: Option<f64>,
    pub consistent_with_zero: bool,
    pub consistent_with_full_mass: bool,
    pub note: String,
}

/// Aitken extrapolation of three successive values; falls back to the last
/// value when the differences do not contract.
fn aitken(a: f64, b: f64, c: f64) -> f64 {
    let (d1, d2) = (b - a, c - b);
    let denom = d2 - d1;
    if d1 == 0.0 || d2 == 0.0 || denom == 0.0 || (d2 / d1) <= 0.0 || (d2 / d1) >= 1.0 {
        return c;
    }
    c - d2 * d2 / denom
}

/// Extrapolates a retained-mass sequence on successively refined levels.
///
/// The estimate is the Aitken value of the three finest levels; the
/// residual is the spread of the Aitken values over all level triples.
pub fn extrapolate_retained(h: &[f64], retained: &[f64], mass: f64, floor: f64) -> ReducedMass {
    let k = retained.len();
    let triples: Vec<f64> = retained.windows(3).map(|w| aitken(w[0], w[1], w[2])).collect();
    let (extrapolated, residual) = match triples.last() {
        None => (retained.last().copied(), None),
        Some(&last) => {
            let hi = triples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = triples.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = if triples.len() > 1 { hi - lo } else { (last - retained[k - 1]).abs() };
            (Some(last), Some(spread))
        }
    };
    let tol = residual.unwrap_or(0.0) + floor * mass.abs() + 1e-12;
    let consistent_with_zero = extrapolated.map(|e| e.abs() <= tol).unwrap_or(false);
    let consistent_with_full_mass = extrapolated.map(|e| (e - mass).abs() <= tol).unwrap_or(false);
    ReducedMass {
        h: h.to_vec(),
        retained: retained.to_vec(),
        extrapolated,
        residual,
        consistent_with_zero,
        consistent_with_full_mass,
        note: "artifact-level diagnostic: retained = mass - absorbed is the killed flux of the discrete solution; \
               it is not a discrete definition of the reduced measure"
            .into(),
    }
}

/// Retained-mass sequence of the collapse study and its extrapolation.
pub fn reduced_mass_estimate(
    family: &RefinementFamily,
    p: f64,
    c: f64,
    thresholds: &StudyThresholds,
    opts: &SolverOptions<f64>,
) -> Result<(ReducedMass, CollapseStudy)> {
    let study = collapse_study(family, p, c, thresholds, opts)?;
    let rows: Vec<&StudyRow> = study.table.rows.iter().filter(|r| r.retained.is_some()).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let retained: Vec<f64> = rows.iter().filter_map(|r| r.retained).collect();
    Ok((extrapolate_retained(&h, &retained, family.mass, thresholds.extrapolation_floor), study))
}

/// Doubling the Dirac mass gives a pointwise larger solution at level `n`.
pub fn mass_monotonicity(family: &RefinementFamily, n: usize, p: f64, c: f64, opts: &SolverOptions<f64>) -> Result<bool> {
    family.validate()?;
    let op = family.operator(n)?;
    let f = if c == 0.0 { Nonlinearity::zero() } else { Nonlinearity::power(c, p)? };
    let mu = family.dirac(&op, n)?;
    let u1 = solve_semilinear(&op, &f, &mu, opts)?.u;
    let u2 = solve_semilinear(&op, &f, &mu.scale(2.0), opts)?.u;
    let slack = 1e-9 * (1.0 + u2.amax());
    Ok(u1.iter().zip(u2.iter()).all(|(a, b)| *a <= *b + slack))
}

/// The solution at one level, for plotting or further checks.
pub fn level_solution(family: &RefinementFamily, n: usize, p: f64, c: f64, opts: &SolverOptions<f64>) -> Result<DVector<f64>> {
    let op = family.operator(n)?;
    let f = if c == 0.0 { Nonlinearity::zero() } else { Nonlinearity::power(c, p)? };
    Ok(solve_semilinear(&op, &f, &family.dirac(&op, n)?, opts)?.u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RefinementFamily {
        RefinementFamily { levels: vec![7, 15, 31], ..Default::default() }
    }

    #[test]
    fn dirac_and_probes_land_on_nodes() {
        let fam = RefinementFamily::default();
        for &n in &fam.levels {
            let h = fam.mesh(n);
            let b = fam.dirac_node(n);
            assert_eq!(((b + 1) as f64) * h, 0.5);
            let probes = fam.probe_nodes(n, 0.25);
            assert_eq!(probes.len(), 2);
            assert_eq!(((probes[0] + 1) as f64) * h, 0.25);
            assert_eq!(((probes[1] + 1) as f64) * h, 0.75);
        }
    }

    #[test]
    fn zero_coefficient_retains_mass() {
        let study = collapse_study(&small(), 3.0, 0.0, &StudyThresholds::default(), &SolverOptions::default()).unwrap();
        for row in &study.table.rows {
            assert_eq!(row.absorbed, Some(0.0));
            assert_eq!(row.retained, Some(1.0));
            assert!(row.balance_error.unwrap() < 1e-6);
        }
        let (rm, _) = reduced_mass_estimate(&small(), 3.0, 0.0, &StudyThresholds::default(), &SolverOptions::default()).unwrap();
        assert_eq!(rm.extrapolated, Some(1.0));
        assert!(rm.consistent_with_full_mass);
    }

    #[test]
    fn negative_dirac_is_not_absorbed() {
        let fam = RefinementFamily { mass: -1.0, ..small() };
        let study = collapse_study(&fam, 3.0, 1.0, &StudyThresholds::default(), &SolverOptions::default()).unwrap();
        for row in &study.table.rows {
            assert_eq!(row.retained, Some(-1.0));
            assert!(row.sup_u.unwrap() > 0.0);
        }
    }

    #[test]
    fn verdict_rules() {
        let t = StudyThresholds::default();
        assert_eq!(collapse_verdict(&[1.0, 0.8, 0.6, 0.5], &t), CollapseVerdict::Collapse);
        assert_eq!(collapse_verdict(&[1.0, 0.99, 0.98, 0.97], &t), CollapseVerdict::Persist);
        assert_eq!(collapse_verdict(&[1.0, 0.5, 0.9, 0.3], &t), CollapseVerdict::Inconclusive);
        assert!(verdicts_consistent(CollapseVerdict::Collapse, CapacityVerdict::NullCapacityLimit));
        assert!(!verdicts_consistent(CollapseVerdict::Persist, CapacityVerdict::NullCapacityLimit));
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|h: &f64| (*h, 3.0 * h.powf(0.25))).collect();
        let (slope, intercept) = fit_loglog(&pts).unwrap();
        assert!((slope - 0.25).abs() < 1e-12);
        assert!((intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_of_geometric_sequence() {
        let r: Vec<f64> = (0..5).map(|k| 0.2 + 0.5 * 0.8f64.powi(k)).collect();
        let rm = extrapolate_retained(&[1.0; 5], &r, 1.0, 0.01);
        assert!((rm.extrapolated.unwrap() - 0.2).abs() < 1e-12);
        assert!(!rm.consistent_with_zero);
    }

    #[test]
    fn csv_rows_and_curves() {
        let study = collapse_study(&small(), 3.0, 1.0, &StudyThresholds::default(), &SolverOptions::default()).unwrap();
        let rows = study.table.csv_rows(true);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.runtime_s == 0.0 && r.cap.is_none()));
        let dat = study.table.curve_dat(Column::ProbeMax);
        assert_eq!(dat.lines().count(), 4);
        assert!(mass_monotonicity(&small(), 15, 3.0, 1.0, &SolverOptions::default()).unwrap());
    }

    #[test]
    fn rejects_bad_family() {
        let bad = RefinementFamily { levels: vec![15, 7], ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(RefinementFamily { dirac_site: 1.0, ..Default::default() }.validate().is_err());
        assert_eq!(critical_exponent(1, 0.25), Some(2.0));
        assert_eq!(conjugate_exponent(3.0), 1.5);
    }
}
