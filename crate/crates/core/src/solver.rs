//! Semilinear solves `u = R(f_u·m) + Rμ` and the truncation scheme for
//! reduced measures.

use nalgebra::{Cholesky, DVector};
use serde::Serialize;

use crate::audit::Audit;
use crate::error::{LabError, Result};
use crate::measure::SignedMeasure;
use crate::nonlinearity::Nonlinearity;
use crate::operator::DirichletOperator;
use crate::scalar::{sup_norm, Scalar};

#[derive(Debug, Clone)]
pub struct SolverOptions<T: Scalar> {
    /// Absolute tolerance on the fixed-point residual; `None` means
    /// `1e-10·(1 + ‖Rμ‖_∞)`.
    pub tol: Option<T>,
    pub max_iter: usize,
    /// Damping of the Picard warm start.
    pub picard_theta: T,
    /// Residual (relative to `1 + ‖Rμ‖_∞`) below which Newton takes over.
    pub newton_switch: T,
    /// Cap on Picard sweeps before Newton takes over regardless.
    pub picard_max: usize,
    pub initial: Option<DVector<T>>,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 10_000,
            picard_theta: T::lit(0.5),
            newton_switch: T::lit(1e-3),
            picard_max: 50,
            initial: None,
        }
    }
}

impl<T: Scalar> SolverOptions<T> {
    pub fn default_tol(rmu_sup: T) -> T {
        let rel = T::lit(1e-10).max(T::default_epsilon() * T::lit(256.0));
        rel * (T::one() + rmu_sup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Linear,
    Picard,
    Newton,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub method: Method,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T: Scalar> {
    pub u: DVector<T>,
    /// `‖u - R(f_u·m) - Rμ‖_∞`.
    pub residual_inf: T,
    pub tol: T,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub audit: Audit,
}

#[derive(Serialize)]
struct SolveReportDocument<'a> {
    u: Vec<f64>,
    residual_inf: f64,
    iterations: usize,
    method: Vec<&'a TraceEntry>,
    audit: &'a Audit,
}

impl<T: Scalar> SolveReport<T> {
    /// Serializable view `{u[], residual_inf, iterations, method, audit}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        let doc = SolveReportDocument {
            u: self.u.iter().map(|v| v.as_f64()).collect(),
            residual_inf: self.residual_inf.as_f64(),
            iterations: self.iterations,
            method: self.trace.iter().collect(),
            audit: &self.audit,
        };
        serde_json::to_value(doc).expect("report serializes")
    }
}

/// `‖u - R(f_u·m) - Rμ‖_∞` for a candidate `u`.
pub fn fixed_point_residual<T: Scalar>(
    op: &DirichletOperator<T>,
    f: &Nonlinearity<T>,
    mu: &SignedMeasure<T>,
    u: &DVector<T>,
) -> Result<T> {
    let rmu = op.potential_atoms(mu.atoms())?;
    fixed_point_residual_with(op, f, &rmu, u)
}

fn fixed_point_residual_with<T: Scalar>(
    op: &DirichletOperator<T>,
    f: &Nonlinearity<T>,
    rmu: &DVector<T>,
    u: &DVector<T>,
) -> Result<T> {
    let image = op.potential_fn(&f.eval_vec(u))? + rmu;
    Ok(sup_norm((u - image).as_slice()))
}

/// Convex energy whose critical point is the solution:
/// `J(u) = ½E(u,u) - Σ F(x,u(x)) m(x) - Σ u(x) μ({x})`.
fn energy_functional<T: Scalar>(
    op: &DirichletOperator<T>,
    f: &Nonlinearity<T>,
    atoms: &DVector<T>,
    u: &DVector<T>,
) -> T {
    let au = op.matrix() * u;
    let w = op.weights();
    let half = T::lit(0.5);
    let mut j = T::zero();
    for i in 0..u.len() {
        j += -half * au[i] * u[i] * w[i] - f.antiderivative(i, u[i]) * w[i] - u[i] * atoms[i];
    }
    j
}

/// Solves `-Au = f(·,u) + μ` (with `μ` read through its density).
///
/// Damped Picard sweeps warm-start a semismooth Newton iteration that is
/// globalized by backtracking on the convex energy.
pub fn solve_semilinear<T: Scalar>(
    op: &DirichletOperator<T>,
    f: &Nonlinearity<T>,
    mu: &SignedMeasure<T>,
    opts: &SolverOptions<T>,
) -> Result<SolveReport<T>> {
    mu.check_space(op.space())?;
    let f = f.prepared();
    let rmu = op.potential_atoms(mu.atoms())?;
    let scale = T::one() + sup_norm(rmu.as_slice());
    let tol = opts.tol.unwrap_or_else(|| SolverOptions::default_tol(sup_norm(rmu.as_slice())));
    let mut trace = Vec::new();

    if f.is_zero() {
        let residual = fixed_point_residual_with(op, &f, &rmu, &rmu)?;
        trace.push(TraceEntry { method: Method::Linear, residual: residual.as_f64() });
        return Ok(SolveReport { u: rmu, residual_inf: residual, tol, iterations: 0, trace, audit: Audit::default() });
    }

    let mut u = match &opts.initial {
        Some(u0) => {
            op.check_len(u0, "initial iterate")?;
            u0.clone()
        }
        None => rmu.clone(),
    };
    let mut residual = fixed_point_residual_with(op, &f, &rmu, &u)?;
    let mut best = (residual, u.clone());
    let mut iterations = 0;

    // Picard warm start
    let theta = opts.picard_theta;
    let mut sweeps = 0;
    while residual > tol && residual > opts.newton_switch * scale && sweeps < opts.picard_max && iterations < opts.max_iter {
        let image = op.potential_fn(&f.eval_vec(&u))? + &rmu;
        let candidate = &u * (T::one() - theta) + image * theta;
        let cand_res = fixed_point_residual_with(op, &f, &rmu, &candidate)?;
        iterations += 1;
        sweeps += 1;
        if !(cand_res < residual) {
            break;
        }
        u = candidate;
        residual = cand_res;
        trace.push(TraceEntry { method: Method::Picard, residual: residual.as_f64() });
        if residual < best.0 {
            best = (residual, u.clone());
        }
    }

    let n = op.len();
    let w = op.weights();
    let sqrt_m = w.map(|x| x.sqrt());
    let sym = op.symmetrized();
    let density = mu.atoms().component_div(w);
    let mut stalls = 0;
    while residual > tol && iterations < opts.max_iter {
        iterations += 1;
        let fu = f.eval_vec(&u);
        // differential residual r = -Au - f_u - dμ/dm
        let r = -(op.matrix() * &u) - &fu - &density;
        let mut p = -sym.clone();
        for i in 0..n {
            p[(i, i)] -= f.slope(i, u[i]);
        }
        let chol = Cholesky::new(p).ok_or_else(|| LabError::Numerical("Newton matrix lost definiteness".into()))?;
        let delta = chol.solve(&(-&r).component_mul(&sqrt_m)).component_div(&sqrt_m);
        let grad_dot = r.component_mul(w).dot(&delta);

        let j0 = energy_functional(op, &f, mu.atoms(), &u);
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &u + &delta * step;
            let cand_res = fixed_point_residual_with(op, &f, &rmu, &candidate)?;
            let j1 = energy_functional(op, &f, mu.atoms(), &candidate);
            if cand_res < residual || j1 <= j0 + T::lit(1e-4) * step * grad_dot {
                accepted = Some((candidate, cand_res));
                break;
            }
            step *= T::lit(0.5);
        }
        match accepted {
            Some((candidate, cand_res)) => {
                if !(cand_res < residual) {
                    stalls += 1;
                } else {
                    stalls = 0;
                }
                u = candidate;
                residual = cand_res;
            }
            None => stalls += 1,
        }
        trace.push(TraceEntry { method: Method::Newton, residual: residual.as_f64() });
        if residual < best.0 {
            best = (residual, u.clone());
        }
        if stalls >= 8 {
            break;
        }
    }

    if best.0 <= tol {
        return Ok(SolveReport {
            u: best.1,
            residual_inf: best.0,
            tol,
            iterations,
            trace,
            audit: Audit::default(),
        });
    }
    Err(LabError::Convergence {
        iterations,
        residual: best.0.as_f64(),
        best: best.1.iter().map(|v| v.as_f64()).collect(),
    })
}

/// Outcome of the truncation scheme `f_n = f ∨ (-n)`.
#[derive(Debug, Clone)]
pub struct TruncationResult<T: Scalar> {
    pub levels: Vec<T>,
    pub iterates: Vec<DVector<T>>,
    pub u_star: DVector<T>,
    /// `μ* = -Au*·m - f(·,u*)·m`.
    pub mu_star: SignedMeasure<T>,
    /// `‖μ* - μ‖_TV`; vanishes on a finite space.
    pub concentrated_defect: T,
    /// `‖f_n(·,u_n)‖_{L¹(m)}` per level.
    pub integrability_proxy: Vec<T>,
    pub integrability_sup: T,
    pub integrability_stabilized: bool,
    /// `u_n` nonincreasing in `n` within `1e-9·scale`.
    pub monotone: bool,
    /// Last increment `‖u_n - u_{n/2}‖_∞`.
    pub last_increment: T,
    pub converged: bool,
    pub tol_trunc: T,
}

/// Default levels `1, 2, 4, …, 2^K` with `2^K ≥ 10·max|f(x, ‖R|μ|‖_∞)|`.
pub fn default_schedule<T: Scalar>(op: &DirichletOperator<T>, f: &Nonlinearity<T>, mu: &SignedMeasure<T>) -> Result<Vec<T>> {
    let bound = sup_norm(op.potential_atoms(&mu.abs().atoms().clone())?.as_slice());
    let target = T::lit(10.0) * f.prepared().magnitude_at(op.len(), bound);
    let mut levels = vec![T::one()];
    let mut level = T::one();
    while level < target && levels.len() < 64 {
        level *= T::lit(2.0);
        levels.push(level);
    }
    Ok(levels)
}

/// Solves the truncated problems along `schedule` (warm-started) and
/// extracts `u*` and `μ*`.
pub fn truncation_reduce<T: Scalar>(
    op: &DirichletOperator<T>,
    f: &Nonlinearity<T>,
    mu: &SignedMeasure<T>,
    schedule: Option<&[T]>,
    opts: &SolverOptions<T>,
) -> Result<TruncationResult<T>> {
    let levels = match schedule {
        Some(s) => {
            if s.is_empty() || s.windows(2).any(|w| w[1] <= w[0]) || s[0] <= T::zero() {
                return crate::error::invalid("truncation schedule must be positive and increasing");
            }
            s.to_vec()
        }
        None => default_schedule(op, f, mu)?,
    };
    let f = f.prepared();
    let rmu = op.potential_atoms(mu.atoms())?;
    let scale = T::one() + sup_norm(rmu.as_slice());
    let tol_trunc = T::lit(1e-8).max(T::default_epsilon() * T::lit(1e3)) * scale;
    let mono_slack = T::lit(1e-9).max(T::default_epsilon() * T::lit(1e3)) * scale;

    let w = op.weights();
    let mut iterates: Vec<DVector<T>> = Vec::with_capacity(levels.len());
    let mut proxy = Vec::with_capacity(levels.len());
    let mut monotone = true;
    for (k, &level) in levels.iter().enumerate() {
        let fn_ = f.truncated(level);
        let mut local = opts.clone();
        local.initial = iterates.last().cloned();
        let report = solve_semilinear(op, &fn_, mu, &local).map_err(|e| LabError::TruncationFailed {
            level: k,
            partial: iterates.iter().map(|u| u.iter().map(|v| v.as_f64()).collect()).collect(),
            source: Box::new(e),
        })?;
        if let Some(prev) = iterates.last() {
            if report.u.iter().zip(prev.iter()).any(|(a, b)| *a > *b + mono_slack) {
                monotone = false;
            }
        }
        let fu = fn_.eval_vec(&report.u);
        proxy.push(fu.iter().zip(w.iter()).fold(T::zero(), |acc, (a, b)| acc + a.abs() * *b));
        iterates.push(report.u);
    }

    let u_star = iterates.last().cloned().expect("schedule nonempty");
    let last_increment = if iterates.len() >= 2 {
        sup_norm((&iterates[iterates.len() - 1] - &iterates[iterates.len() - 2]).as_slice())
    } else {
        T::zero()
    };
    let au = op.matrix() * &u_star;
    let fu = f.eval_vec(&u_star);
    let star_atoms = DVector::from_fn(u_star.len(), |i, _| (-au[i] - fu[i]) * w[i]);
    let mu_star = mu.map_atoms(|i, _| star_atoms[i]);
    let concentrated_defect = mu_star.minus(mu)?.total_variation();
    let integrability_sup = proxy.iter().fold(T::zero(), |a, b| a.max(*b));
    let integrability_stabilized = match proxy.len() {
        0 | 1 => true,
        k => (proxy[k - 1] - proxy[k - 2]).abs() <= T::lit(1e-6) * (T::one() + proxy[k - 1].abs()),
    };
    Ok(TruncationResult {
        levels,
        iterates,
        u_star,
        mu_star,
        concentrated_defect,
        integrability_proxy: proxy,
        integrability_sup,
        integrability_stabilized,
        monotone,
        last_increment,
        converged: last_increment <= tol_trunc,
        tol_trunc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::build_grid_operator;
    use approx::assert_relative_eq;

    fn scalar() -> DirichletOperator<f64> {
        build_grid_operator(1, 1, 1.0).unwrap()
    }

    /// Root of `u³ + 2u = b` by bisection, independent of the solver.
    fn bisect_cubic(b: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, b.max(1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid * mid + 2.0 * mid > b {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bisection_oracle_values() {
        assert_relative_eq!(bisect_cubic(12.0), 2.0, epsilon = 1e-14);
        assert_relative_eq!(bisect_cubic(3.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn scalar_cubic_instances() {
        let op = scalar();
        let f = Nonlinearity::power(1.0, 3.0).unwrap();
        for (mass, want) in [(12.0, bisect_cubic(12.0)), (3.0, bisect_cubic(3.0))] {
            let mu = SignedMeasure::dirac(op.space(), 0, mass).unwrap();
            let rep = solve_semilinear(&op, &f, &mu, &SolverOptions::default()).unwrap();
            assert_relative_eq!(rep.u[0], want, epsilon = 1e-10);
            assert!(rep.residual_inf <= 1e-10 * 7.0);
        }
    }

    #[test]
    fn zero_nonlinearity_is_linear_solve() {
        let op = build_grid_operator::<f64>(1, 5, 0.2).unwrap();
        let mu = SignedMeasure::parse_sparse(op.space(), "1:2, 3:-1").unwrap();
        let rep = solve_semilinear(&op, &Nonlinearity::zero(), &mu, &SolverOptions::default()).unwrap();
        let rmu = op.potential_atoms(mu.atoms()).unwrap();
        assert_eq!(rep.u, rmu);
        assert_eq!(rep.trace[0].method, Method::Linear);
    }

    #[test]
    fn non_transient_operator_is_rejected() {
        let space = crate::operator::StateSpace::uniform(2, 1.0).unwrap();
        let op = DirichletOperator::new(space, nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
        let mu = SignedMeasure::dirac(op.space(), 0, 1.0).unwrap();
        let err = solve_semilinear(&op, &Nonlinearity::power(1.0, 2.0).unwrap(), &mu, &SolverOptions::default());
        assert!(matches!(err, Err(LabError::Transience(_))));
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let op = build_grid_operator::<f64>(1, 8, 0.1).unwrap();
        let mu = SignedMeasure::dirac(op.space(), 3, 50.0).unwrap();
        let opts = SolverOptions { max_iter: 1, ..Default::default() };
        match solve_semilinear(&op, &Nonlinearity::power(1.0, 3.0).unwrap(), &mu, &opts) {
            Err(LabError::Convergence { best, residual, .. }) => {
                assert_eq!(best.len(), 8);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn scalar_truncation_sequence() {
        let op = scalar();
        let f = Nonlinearity::power(1.0, 3.0).unwrap();
        let mu = SignedMeasure::dirac(op.space(), 0, 12.0).unwrap();
        let res = truncation_reduce(&op, &f, &mu, None, &SolverOptions::default()).unwrap();
        let want = [5.5, 5.0, 4.0, 2.0, 2.0];
        for (u, w) in res.iterates.iter().zip(want.iter()) {
            assert_relative_eq!(u[0], *w, epsilon = 1e-9);
        }
        assert!(res.monotone && res.converged);
        assert_relative_eq!(res.u_star[0], 2.0, epsilon = 1e-9);
        assert!(res.concentrated_defect <= 1e-8 * 12.0);
        // 10·|f(6)| = 2160 needs 2^12
        assert_eq!(res.levels.len(), 13);
    }

    #[test]
    fn bounded_nonlinearity_truncation_is_inactive_past_bound() {
        let op = build_grid_operator::<f64>(1, 4, 0.25).unwrap();
        let f = Nonlinearity::tabulated(vec![1.0, 2.0], vec![-1.5, -3.0]).unwrap();
        let mu = SignedMeasure::parse_sparse(op.space(), "1:4, 2:1").unwrap();
        let sched = [1.0, 2.0, 4.0, 8.0];
        let res = truncation_reduce(&op, &f, &mu, Some(&sched), &SolverOptions::default()).unwrap();
        assert!((&res.iterates[2] - &res.iterates[3]).amax() <= 1e-12);
        assert!(res.monotone);
    }

    #[test]
    fn truncation_with_zero_nonlinearity() {
        let op = build_grid_operator::<f64>(1, 4, 0.25).unwrap();
        let mu = SignedMeasure::parse_sparse(op.space(), "0:1, 3:-2").unwrap();
        let res = truncation_reduce(&op, &Nonlinearity::zero(), &mu, None, &SolverOptions::default()).unwrap();
        let rmu = op.potential_atoms(mu.atoms()).unwrap();
        for u in &res.iterates {
            assert!((u - &rmu).amax() < 1e-14);
        }
        assert!(res.concentrated_defect <= 1e-8 * mu.total_variation());
    }

    #[test]
    fn different_starts_agree() {
        let op = build_grid_operator::<f64>(2, 5, 0.2).unwrap();
        let f = Nonlinearity::power(2.0, 2.0).unwrap();
        let mu = SignedMeasure::parse_sparse(op.space(), "6:3, 12:1, 20:-0.5").unwrap();
        let a = solve_semilinear(&op, &f, &mu, &SolverOptions::default()).unwrap();
        let opts = SolverOptions { initial: Some(DVector::from_element(25, 5.0)), ..Default::default() };
        let b = solve_semilinear(&op, &f, &mu, &opts).unwrap();
        assert!((a.u - b.u).amax() <= 1e-9);
    }

    #[test]
    fn single_precision_solve() {
        let op = build_grid_operator::<f32>(1, 1, 1.0).unwrap();
        let f = Nonlinearity::power(1.0f32, 3.0).unwrap();
        let mu = SignedMeasure::dirac(op.space(), 0, 12.0f32).unwrap();
        let rep = solve_semilinear(&op, &f, &mu, &SolverOptions::default()).unwrap();
        assert!((rep.u[0] - 2.0).abs() < 1e-4);
    }
}
