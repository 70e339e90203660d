use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use super::{symmetrize, DirichletOperator};
use crate::error::{invalid, LabError, Result};
use crate::scalar::{max_abs, sup_norm, Scalar};

/// Resolvent kernel `r_α(x,y) = [(αI - A)^{-1}]_{x,y} / m(y)`.
#[derive(Debug, Clone)]
pub struct ResolventKernel<T: Scalar> {
    pub alpha: T,
    pub entries: DMatrix<T>,
    weights: DVector<T>,
}

impl<T: Scalar> ResolventKernel<T> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    /// `(R_α f)(x) = Σ_y r_α(x,y) f(y) m(y)`.
    pub fn apply_fn(&self, f: &DVector<T>) -> DVector<T> {
        &self.entries * f.component_mul(&self.weights)
    }

    /// `(R_α μ)(x) = Σ_y r_α(x,y) μ({y})`.
    pub fn apply_atoms(&self, atoms: &DVector<T>) -> DVector<T> {
        &self.entries * atoms
    }

    /// Matrix of `R_α` acting on functions.
    pub fn operator_matrix(&self) -> DMatrix<T> {
        let mut out = self.entries.clone();
        for (j, w) in self.weights.iter().enumerate() {
            out.column_mut(j).scale_mut(*w);
        }
        out
    }

    /// `max |r(x,y) - r(y,x)| / max |r|`.
    pub fn symmetry_error(&self) -> T {
        let scale = max_abs(&self.entries);
        if scale == T::zero() {
            return T::zero();
        }
        max_abs(&(&self.entries - self.entries.transpose())) / scale
    }

    pub fn min_entry(&self) -> T {
        self.entries.min()
    }
}

/// Relative error of the resolvent identity `R_α - R_β = (β - α) R_α R_β`,
/// normalized by the largest entry of `R_α - R_β` or of the product term.
pub fn resolvent_identity_error<T: Scalar>(ra: &ResolventKernel<T>, rb: &ResolventKernel<T>) -> T {
    let a = ra.operator_matrix();
    let b = rb.operator_matrix();
    let lhs = &a - &b;
    let rhs = (&a * &b) * (rb.alpha - ra.alpha);
    let scale = max_abs(&lhs).max(max_abs(&rhs));
    if scale == T::zero() {
        return T::zero();
    }
    max_abs(&(lhs - rhs)) / scale
}

/// Builds `r_α`. For `α = 0` the operator must be transient.
pub fn resolvent<T: Scalar>(op: &DirichletOperator<T>, alpha: T) -> Result<ResolventKernel<T>> {
    if alpha < T::zero() || !alpha.is_finite() {
        return invalid(format!("resolvent rate must be nonnegative, got {alpha}"));
    }
    let n = op.len();
    let inverse = if alpha == T::zero() {
        // transience is decided by the cached factor
        let _ = op.green()?;
        let mut p = op.symmetrized();
        p.neg_mut();
        Cholesky::new(p)
            .ok_or_else(|| LabError::Transience("-A is not positive definite".into()))?
            .inverse()
    } else {
        let mut p = op.symmetrized();
        p.neg_mut();
        for i in 0..n {
            p[(i, i)] += alpha;
        }
        Cholesky::new(p)
            .ok_or_else(|| LabError::Numerical(format!("αI - A not positive definite at α = {alpha}")))?
            .inverse()
    };
    let mut c = inverse;
    symmetrize(&mut c);
    let w = op.weights();
    let entries = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (w[i] * w[j]).sqrt());
    Ok(ResolventKernel { alpha, entries, weights: w.clone() })
}

#[derive(Debug, Clone, Serialize)]
pub struct TransienceVerdict<T: Scalar> {
    pub transient: bool,
    /// `R1` when it exists.
    pub r1: Option<Vec<T>>,
    /// Strictly positive `g` with bounded potential.
    pub witness: Option<Vec<T>>,
    pub reason: String,
}

/// Transient iff `-A` is invertible and `R1` is finite and strictly positive.
pub fn check_transient<T: Scalar>(op: &DirichletOperator<T>) -> TransienceVerdict<T> {
    let r1 = match op.r1() {
        Ok(r) => r,
        Err(e) => {
            return TransienceVerdict { transient: false, r1: None, witness: None, reason: e.to_string() }
        }
    };
    if let Some(i) = r1.iter().position(|x| !(*x > T::zero()) || !x.is_finite()) {
        return TransienceVerdict {
            transient: false,
            r1: Some(r1.iter().copied().collect()),
            witness: None,
            reason: format!("R1({i}) = {} is not finite and positive", r1[i]),
        };
    }
    let level = T::one() / (T::from_usize_lossy(op.len()) * sup_norm(r1.as_slice()));
    TransienceVerdict {
        transient: true,
        r1: Some(r1.iter().copied().collect()),
        witness: Some(vec![level; op.len()]),
        reason: "-A invertible with strictly positive R1".into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExcessiveVerdict {
    pub excessive: bool,
    pub nonnegative: bool,
    /// Most negative entry of `-Aρ` (0 if none).
    pub superharmonic_worst: f64,
    /// `(α, passes αR_αρ ≤ ρ, worst excess)` spot checks.
    pub spot_checks: Vec<(f64, bool, f64)>,
}

/// ρ is excessive iff ρ ≥ 0 and `-Aρ ≥ -1e-12·‖A‖·‖ρ‖`.
pub fn check_excessive<T: Scalar>(op: &DirichletOperator<T>, rho: &DVector<T>) -> Result<ExcessiveVerdict> {
    let minus_a_rho = -op.apply(rho)?;
    let scale = op.max_abs_entry() * sup_norm(rho.as_slice());
    let slack = T::lit(1e-12).max(T::default_epsilon() * T::lit(16.0)) * scale;
    let nonnegative = rho.iter().all(|x| *x >= T::zero());
    let lowest = minus_a_rho.min().min(T::zero());
    let excessive = nonnegative && lowest >= -slack;

    let mut spot_checks = Vec::new();
    let spot_slack = T::lit(1e-9).max(T::default_epsilon() * T::lit(1e3)) * sup_norm(rho.as_slice());
    for alpha in [0.1, 1.0, 10.0] {
        let a = T::lit(alpha);
        let kernel = resolvent(op, a)?;
        let smoothed = kernel.apply_fn(rho) * a;
        let excess = (smoothed - rho).max().max(T::zero());
        spot_checks.push((alpha, excess <= spot_slack, excess.as_f64()));
    }
    Ok(ExcessiveVerdict { excessive, nonnegative, superharmonic_worst: (-lowest).as_f64(), spot_checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_grid_operator, fractional_power, StateSpace};
    use approx::assert_relative_eq;

    #[test]
    fn scalar_kernels() {
        let op = build_grid_operator::<f64>(1, 1, 1.0).unwrap();
        assert_relative_eq!(resolvent(&op, 0.0).unwrap().entries[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(resolvent(&op, 1.0).unwrap().entries[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_green_kernel() {
        let op = build_grid_operator::<f64>(1, 2, 1.0).unwrap();
        let k = resolvent(&op, 0.0).unwrap();
        let want = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (g, w) in k.entries.iter().zip(want.iter()) {
            assert_relative_eq!(g, w, epsilon = 1e-14);
        }
    }

    #[test]
    fn weighted_kernel_is_symmetric_and_matches_inverse() {
        let op = build_grid_operator::<f64>(1, 6, 0.3).unwrap();
        let k = resolvent(&op, 0.7).unwrap();
        assert!(k.symmetry_error() < 1e-12);
        assert!(k.min_entry() >= 0.0);
        let f = DVector::from_fn(6, |i, _| (i as f64).sin());
        let via_kernel = k.apply_fn(&f);
        let mut shifted = -op.matrix().clone();
        for i in 0..6 {
            shifted[(i, i)] += 0.7;
        }
        let direct = shifted.lu().solve(&f).unwrap();
        assert!((via_kernel - direct).amax() < 1e-12);
    }

    #[test]
    fn resolvent_identity_small() {
        let op = fractional_power(&build_grid_operator::<f64>(2, 4, 0.2).unwrap(), 0.6).unwrap();
        let ks: Vec<_> = [0.0, 0.1, 1.0, 10.0].iter().map(|a| resolvent(&op, *a).unwrap()).collect();
        for a in &ks {
            for b in &ks {
                assert!(resolvent_identity_error(a, b) < 1e-12);
            }
        }
    }

    #[test]
    fn conservative_chain_is_not_transient() {
        let space = StateSpace::uniform(2, 1.0).unwrap();
        let op = DirichletOperator::new(space, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
        let verdict = check_transient(&op);
        assert!(!verdict.transient);
        assert!(matches!(resolvent(&op, 0.0), Err(LabError::Transience(_))));
        assert!(resolvent(&op, 1.0).is_ok());
    }

    #[test]
    fn grid_and_fractional_are_transient() {
        let op = build_grid_operator::<f64>(1, 5, 1.0).unwrap();
        let v = check_transient(&op);
        assert!(v.transient);
        let g = v.witness.unwrap();
        assert!(g.iter().all(|x| *x > 0.0));
        let frac = fractional_power(&op, 0.4).unwrap();
        assert!(check_transient(&frac).transient);
    }

    #[test]
    fn excessive_functions() {
        let op = build_grid_operator::<f64>(1, 7, 0.125).unwrap();
        let r1 = op.r1().unwrap();
        let v = check_excessive(&op, &r1).unwrap();
        assert!(v.excessive);
        assert!(v.spot_checks.iter().all(|c| c.1));

        let mut bad = r1.clone();
        bad[3] = -0.1;
        assert!(!check_excessive(&op, &bad).unwrap().excessive);

        let bump = DVector::from_fn(7, |i, _| if i == 3 { 1.0 } else { 0.0 });
        assert!(!check_excessive(&op, &bump).unwrap().excessive);
    }
}
