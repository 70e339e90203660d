//! Audit of the comparison, contraction, a priori, energy and duality
//! estimates on computed solutions.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::measure::SignedMeasure;
use crate::nonlinearity::Nonlinearity;
use crate::operator::{energy, DirichletOperator};
use crate::scalar::{sup_norm, Scalar};
use crate::solver::fixed_point_residual;

/// One named inequality `lhs ≤ rhs` (up to slack).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// The inequality being checked, stated in plain notation.
    pub reference: String,
}

/// Named audit entries, ordered by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Audit {
    pub entries: BTreeMap<String, AuditEntry>,
}

impl Audit {
    pub fn all_pass(&self) -> bool {
        self.entries.values().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries.iter().filter(|(_, e)| !e.pass).map(|(k, _)| k.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.get(name)
    }

    pub fn merge(&mut self, other: Audit) {
        self.entries.extend(other.entries);
    }

    /// Scalar check `lhs ≤ rhs + rel·scale`.
    pub fn record<T: Scalar>(&mut self, name: impl Into<String>, lhs: T, rhs: T, rel: T, scale: T, reference: &str) {
        let pass = lhs <= rhs + rel * scale;
        self.entries.insert(
            name.into(),
            AuditEntry { lhs: lhs.as_f64(), rhs: rhs.as_f64(), pass, reference: reference.to_string() },
        );
    }

    /// Pointwise check `lhs(x) ≤ rhs(x)`; records the state with the largest
    /// excess. The slack is `rel·max(‖lhs‖_∞, ‖rhs‖_∞)`.
    pub fn record_pointwise<T: Scalar>(&mut self, name: impl Into<String>, lhs: &DVector<T>, rhs: &DVector<T>, rel: T, reference: &str) {
        let scale = sup_norm(lhs.as_slice()).max(sup_norm(rhs.as_slice()));
        let worst = (0..lhs.len())
            .max_by(|&a, &b| (lhs[a] - rhs[a]).partial_cmp(&(lhs[b] - rhs[b])).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        let (l, r) = if lhs.is_empty() { (T::zero(), T::zero()) } else { (lhs[worst], rhs[worst]) };
        self.record(name, l, r, rel, scale, reference);
    }
}

pub(crate) fn audit_slack<T: Scalar>() -> T {
    T::lit(1e-9).max(T::default_epsilon() * T::lit(1e4))
}

pub const REF_COMPARISON: &str = "mu1 <= mu2 implies u1 <= u2";
pub const REF_CONTRACTION: &str = "R|f(u1) - f(u2)| <= R|mu1 - mu2| pointwise";
pub const REF_A_PRIORI: &str = "R|f(u)| <= 2R|f(.,0)| + R|mu| pointwise";
pub const REF_RHO_CONTRACTION: &str = "||f(u1) - f(u2)||_{L1(rho m)} <= ||mu1 - mu2||_rho";
pub const REF_RHO_A_PRIORI: &str = "||f(u)||_{L1(rho m)} <= 2||f(.,0)||_{L1(rho m)} + ||mu||_rho";
pub const REF_ENERGY_LINEAR: &str = "E(T_k u, T_k u) <= k ||f(u) m + mu||_TV";
pub const REF_ENERGY_SEMILINEAR: &str = "E(T_k u, T_k u) <= 2k (||f(.,0)||_L1 + ||mu||_TV)";
pub const REF_DUALITY: &str = "(u, eta)_m = (f(u), R eta)_m + (mu, R eta) for bounded eta";

/// Number of random test functions in the duality check.
pub const DUALITY_SAMPLES: usize = 32;
const DUALITY_SEED: u64 = 0x0005_7a3b_acc1_a000;

fn clamp_vec<T: Scalar>(u: &DVector<T>, k: T) -> DVector<T> {
    u.map(|v| v.max(-k).min(k))
}

/// Runs every estimate on verified solutions `pairs[i] = (μ_i, u_i)`.
/// `rho` defaults to `R1`.
pub fn audit_estimates<T: Scalar>(
    op: &DirichletOperator<T>,
    f: &Nonlinearity<T>,
    pairs: &[(SignedMeasure<T>, DVector<T>)],
    rho: Option<&DVector<T>>,
) -> Result<Audit> {
    let f = f.prepared();
    let w = op.weights().clone();
    let rho = match rho {
        Some(r) => {
            op.check_len(r, "rho")?;
            if r.iter().any(|v| *v < T::zero()) {
                return invalid("rho must be nonnegative");
            }
            r.clone()
        }
        None => op.r1()?,
    };
    for (i, (mu, u)) in pairs.iter().enumerate() {
        mu.check_space(op.space())?;
        op.check_len(u, "u")?;
        let rmu = op.potential_atoms(mu.atoms())?;
        let allowed = T::lit(1e-8).max(T::default_epsilon() * T::lit(1e4)) * (T::one() + sup_norm(rmu.as_slice()));
        let res = fixed_point_residual(op, &f, mu, u)?;
        if res > allowed {
            return invalid(format!("pair {i} is not a solution (residual {res:e})"));
        }
    }

    let rel = audit_slack::<T>();
    let mut audit = Audit::default();
    let f0 = DVector::from_fn(op.len(), |x, _| f.eval(x, T::zero()));
    let f0_abs = f0.map(|v| v.abs());
    let r_f0 = op.potential_fn(&f0_abs)?;
    let f0_l1 = f0_abs.dot(&w);
    let f0_rho = f0_abs.component_mul(&rho).dot(&w);
    let fus: Vec<DVector<T>> = pairs.iter().map(|(_, u)| f.eval_vec(u)).collect();

    for (i, (mu, u)) in pairs.iter().enumerate() {
        let fu = &fus[i];
        let fu_abs = fu.map(|v| v.abs());
        let r_mu_abs = op.potential_atoms(mu.abs().atoms())?;

        let lhs = op.potential_fn(&fu_abs)?;
        let rhs = &r_f0 * T::lit(2.0) + &r_mu_abs;
        audit.record_pointwise(format!("a_priori[{i}]"), &lhs, &rhs, rel, REF_A_PRIORI);

        let lhs = fu_abs.component_mul(&rho).dot(&w);
        let rhs = f0_rho * T::lit(2.0) + mu.rho_norm(&rho)?;
        audit.record(format!("rho_a_priori[{i}]"), lhs, rhs, rel, lhs.max(rhs), REF_RHO_A_PRIORI);

        let total = mu.plus(&mu.map_atoms(|x, _| fu[x] * w[x]))?.total_variation();
        let mut ks = vec![T::lit(0.5), T::one()];
        let umax = sup_norm(u.as_slice());
        if umax > T::zero() && !ks.contains(&umax) {
            ks.push(umax);
        }
        for k in ks {
            let tk = clamp_vec(u, k);
            let e = energy(op, &tk, &tk)?;
            let label = format!("{:.6e}", k.as_f64());
            let rhs_lin = k * total;
            audit.record(format!("energy_linear[{i},k={label}]"), e, rhs_lin, rel, e.max(rhs_lin), REF_ENERGY_LINEAR);
            let rhs_semi = T::lit(2.0) * k * (f0_l1 + mu.total_variation());
            audit.record(format!("energy_semilinear[{i},k={label}]"), e, rhs_semi, rel, e.max(rhs_semi), REF_ENERGY_SEMILINEAR);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(DUALITY_SEED);
        let mut worst = T::zero();
        let mut scale = T::zero();
        for _ in 0..DUALITY_SAMPLES {
            let eta = DVector::from_fn(op.len(), |_, _| T::lit(rng.random_range(-1.0..1.0)));
            let r_eta = op.potential_fn(&eta)?;
            let a = u.component_mul(&eta).dot(&w);
            let b = fu.component_mul(&r_eta).dot(&w);
            let c = mu.atoms().dot(&r_eta);
            worst = worst.max((a - b - c).abs());
            scale = scale.max(a.abs()).max(b.abs()).max(c.abs());
        }
        audit.record(format!("duality[{i}]"), worst, T::zero(), rel, scale, REF_DUALITY);
    }

    for i in 0..pairs.len() {
        for j in 0..pairs.len() {
            if i == j {
                continue;
            }
            let (mu_i, u_i) = &pairs[i];
            let (mu_j, u_j) = &pairs[j];
            if mu_i.le(mu_j, T::zero()) {
                let scale = sup_norm(u_i.as_slice()).max(sup_norm(u_j.as_slice()));
                let excess = (u_i - u_j).max();
                audit.record(format!("comparison[{i},{j}]"), excess, T::zero(), rel, scale, REF_COMPARISON);
            }
            if i < j {
                let diff = (&fus[i] - &fus[j]).map(|v| v.abs());
                let lhs = op.potential_fn(&diff)?;
                let dmu = mu_i.minus(mu_j)?;
                let rhs = op.potential_atoms(dmu.abs().atoms())?;
                audit.record_pointwise(format!("contraction[{i},{j}]"), &lhs, &rhs, rel, REF_CONTRACTION);
                let lhs = diff.component_mul(&rho).dot(&w);
                let rhs = dmu.rho_norm(&rho)?;
                audit.record(format!("rho_contraction[{i},{j}]"), lhs, rhs, rel, lhs.max(rhs), REF_RHO_CONTRACTION);
            }
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::build_grid_operator;
    use crate::solver::{solve_semilinear, SolverOptions};
    use approx::assert_relative_eq;

    #[test]
    fn scalar_contraction_example() {
        let op = build_grid_operator::<f64>(1, 1, 1.0).unwrap();
        let f = Nonlinearity::power(1.0, 3.0).unwrap();
        let pairs: Vec<_> = [12.0, 3.0]
            .iter()
            .map(|m| {
                let mu = SignedMeasure::dirac(op.space(), 0, *m).unwrap();
                let u = solve_semilinear(&op, &f, &mu, &SolverOptions::default()).unwrap().u;
                (mu, u)
            })
            .collect();
        let audit = audit_estimates(&op, &f, &pairs, None).unwrap();
        let c = audit.get("contraction[0,1]").unwrap();
        assert_relative_eq!(c.lhs, 3.5, epsilon = 1e-9);
        assert_relative_eq!(c.rhs, 4.5, epsilon = 1e-9);
        assert!(audit.all_pass(), "{:?}", audit.failures());
        assert!(audit.get("comparison[1,0]").is_some());
        assert!(audit.get("comparison[0,1]").is_none());
    }

    #[test]
    fn linear_energy_example() {
        let op = build_grid_operator::<f64>(1, 2, 1.0).unwrap();
        let mu = SignedMeasure::dirac(op.space(), 0, 1.0).unwrap();
        let u = op.potential_atoms(mu.atoms()).unwrap();
        assert_relative_eq!(u[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(u[1], 1.0 / 3.0, epsilon = 1e-14);
        let audit = audit_estimates(&op, &Nonlinearity::zero(), &[(mu, u)], None).unwrap();
        let e = audit.get("energy_linear[0,k=6.666667e-1]").unwrap();
        assert_relative_eq!(e.lhs, 2.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(e.rhs, 2.0 / 3.0, epsilon = 1e-13);
        assert!(e.pass);
    }

    #[test]
    fn zero_nonlinearity_contraction_is_trivial() {
        let op = build_grid_operator::<f64>(1, 3, 0.5).unwrap();
        let a = SignedMeasure::parse_sparse(op.space(), "0:1").unwrap();
        let b = SignedMeasure::parse_sparse(op.space(), "2:1").unwrap();
        let pairs: Vec<_> = [a, b].into_iter().map(|m| { let u = op.potential_atoms(m.atoms()).unwrap(); (m, u) }).collect();
        let audit = audit_estimates(&op, &Nonlinearity::zero(), &pairs, None).unwrap();
        assert_eq!(audit.get("contraction[0,1]").unwrap().lhs, 0.0);
        assert!(audit.all_pass());
    }

    #[test]
    fn rejects_non_solutions() {
        let op = build_grid_operator::<f64>(1, 3, 0.5).unwrap();
        let mu = SignedMeasure::parse_sparse(op.space(), "0:1").unwrap();
        let wrong = DVector::from_element(3, 1.0);
        assert!(audit_estimates(&op, &Nonlinearity::zero(), &[(mu, wrong)], None).is_err());
    }
}
