use nalgebra::{Cholesky, DMatrix, DVector};

use super::{energy, DirichletOperator};
use crate::error::{invalid, LabError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct FormCapacityOptions {
    pub max_gradient_steps: usize,
    /// Projected-gradient stop: `‖P∇‖ ≤ rel_tol·‖A‖`.
    pub rel_tol: f64,
}

impl Default for FormCapacityOptions {
    fn default() -> Self {
        Self { max_gradient_steps: 2000, rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct FormCapacity<T: Scalar> {
    pub value: T,
    pub equilibrium: DVector<T>,
    pub gradient_steps: usize,
}

/// `Cap(B) = min { E(u,u) : u ≥ 1 on B }` by projected gradient followed by
/// an active-set polish on the quadratic program.
pub fn form_capacity<T: Scalar>(
    op: &DirichletOperator<T>,
    set: &[usize],
    opts: &FormCapacityOptions,
) -> Result<FormCapacity<T>> {
    let n = op.len();
    if let Some(&bad) = set.iter().find(|&&i| i >= n) {
        return invalid(format!("state {bad} outside a space of {n} states"));
    }
    if set.is_empty() {
        return Ok(FormCapacity { value: T::zero(), equilibrium: DVector::zeros(n), gradient_steps: 0 });
    }
    op.green()?;
    let mut in_set = vec![false; n];
    for &i in set {
        in_set[i] = true;
    }

    // E(u,u) = uᵀQu with Q = M(-A), symmetric.
    let w = op.weights();
    let mut q = -op.matrix().clone();
    for i in 0..n {
        q.row_mut(i).scale_mut(w[i]);
    }
    let lipschitz = q.row_iter().map(|r| r.iter().fold(T::zero(), |a, x| a + x.abs())).fold(T::zero(), |a, x| a.max(x))
        * T::lit(2.0);
    let step = T::one() / lipschitz;
    let stop = T::lit(opts.rel_tol) * op.max_abs_entry();

    let project = |u: &mut DVector<T>| {
        for i in 0..n {
            if in_set[i] && u[i] < T::one() {
                u[i] = T::one();
            }
        }
    };
    let mut u = DVector::from_fn(n, |i, _| if in_set[i] { T::one() } else { T::zero() });
    let mut steps = 0;
    while steps < opts.max_gradient_steps {
        let grad = (&q * &u) * T::lit(2.0);
        let mut projected = u.clone() - &grad * step;
        project(&mut projected);
        let pg = (&projected - &u) / step;
        u = projected;
        steps += 1;
        if pg.amax() <= stop {
            break;
        }
    }

    let mut active: Vec<bool> = (0..n).map(|i| in_set[i] && u[i] <= T::one() + T::lit(1e-9)).collect();
    let slack = T::lit(1e-12).max(T::default_epsilon() * T::lit(64.0)) * op.max_abs_entry();
    for _ in 0..(2 * n + 2) {
        let u_new = solve_with_active(&q, &active)?;
        if let Some(i) = (0..n).find(|&i| in_set[i] && !active[i] && u_new[i] < T::one() - slack) {
            active[i] = true;
            continue;
        }
        let mult = (&q * &u_new) * T::lit(2.0);
        let worst = (0..n).filter(|&i| active[i]).min_by(|&a, &b| mult[a].partial_cmp(&mult[b]).unwrap());
        match worst {
            Some(i) if mult[i] < -slack => {
                active[i] = false;
            }
            _ => {
                let value = energy(op, &u_new, &u_new)?;
                return Ok(FormCapacity { value, equilibrium: u_new, gradient_steps: steps });
            }
        }
    }
    Err(LabError::Numerical("active-set polish did not settle".into()))
}

/// Minimizes `uᵀQu` with `u = 1` on the active set.
fn solve_with_active<T: Scalar>(q: &DMatrix<T>, active: &[bool]) -> Result<DVector<T>> {
    let n = q.nrows();
    let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let mut u = DVector::from_fn(n, |i, _| if active[i] { T::one() } else { T::zero() });
    if free.is_empty() {
        return Ok(u);
    }
    let k = free.len();
    let qff = DMatrix::from_fn(k, k, |a, b| q[(free[a], free[b])]);
    let rhs = DVector::from_fn(k, |a, _| {
        -(0..n).filter(|&j| active[j]).fold(T::zero(), |acc, j| acc + q[(free[a], j)])
    });
    let chol = Cholesky::new(qff).ok_or_else(|| LabError::Transience("free block of M(-A) is singular".into()))?;
    let uf = chol.solve(&rhs);
    for (a, &i) in free.iter().enumerate() {
        u[i] = uf[a];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::build_grid_operator;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_capacity() {
        let op = build_grid_operator::<f64>(1, 1, 1.0).unwrap();
        let cap = form_capacity(&op, &[0], &Default::default()).unwrap();
        assert_relative_eq!(cap.value, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn two_point_capacity() {
        let op = build_grid_operator::<f64>(1, 2, 1.0).unwrap();
        let cap = form_capacity(&op, &[0], &Default::default()).unwrap();
        assert_relative_eq!(cap.value, 1.5, epsilon = 1e-13);
        assert_relative_eq!(cap.equilibrium[0], 1.0, epsilon = 1e-13);
        assert_relative_eq!(cap.equilibrium[1], 0.5, epsilon = 1e-13);
    }

    #[test]
    fn whole_space_capacity_is_energy_of_one() {
        let op = build_grid_operator::<f64>(2, 3, 0.25).unwrap();
        let all: Vec<usize> = (0..op.len()).collect();
        let cap = form_capacity(&op, &all, &Default::default()).unwrap();
        let ones = DVector::from_element(op.len(), 1.0);
        assert_relative_eq!(cap.value, energy(&op, &ones, &ones).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn empty_set_and_out_of_range() {
        let op = build_grid_operator::<f64>(1, 3, 1.0).unwrap();
        assert_eq!(form_capacity(&op, &[], &Default::default()).unwrap().value, 0.0);
        assert!(form_capacity(&op, &[3], &Default::default()).is_err());
    }

    #[test]
    fn equilibrium_is_at_most_one() {
        let op = build_grid_operator::<f64>(1, 9, 0.1).unwrap();
        let cap = form_capacity(&op, &[2, 6], &Default::default()).unwrap();
        assert!(cap.equilibrium.iter().all(|x| *x <= 1.0 + 1e-12 && *x >= 0.0));
        assert_relative_eq!(cap.equilibrium[2], 1.0, epsilon = 1e-12);
    }
}
