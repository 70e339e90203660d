use serde::Serialize;

use super::DirichletOperator;
use crate::error::{LabError, Result};
use crate::scalar::Scalar;

/// Result of one structural check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    /// Largest violation found (0 when nothing is violated).
    pub worst: f64,
    /// Entry or row (as `(row, row)`) where the worst violation occurs.
    pub location: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// First failing check as an error.
    pub fn into_result(self) -> Result<()> {
        match self.checks.into_iter().find(|c| !c.pass) {
            None => Ok(()),
            Some(c) => {
                let (row, col) = c.location.unwrap_or((0, 0));
                Err(LabError::Validation { check: c.name.to_string(), row, col, magnitude: c.worst })
            }
        }
    }
}

struct Worst {
    value: f64,
    at: Option<(usize, usize)>,
}

impl Worst {
    fn new() -> Self {
        Self { value: 0.0, at: None }
    }

    fn offer(&mut self, v: f64, at: (usize, usize)) {
        if v > self.value {
            self.value = v;
            self.at = Some(at);
        }
    }

    fn outcome(self, name: &'static str, tol: f64) -> CheckOutcome {
        CheckOutcome { name, pass: self.value <= tol, worst: self.value, location: self.at }
    }
}

/// Checks m-symmetry, sign pattern, sub-Markov row sums and negative
/// semidefiniteness, each against `tol_dirichlet`.
pub fn validate_dirichlet<T: Scalar>(op: &DirichletOperator<T>) -> ValidationReport {
    let a = op.matrix();
    let m = op.weights();
    let n = op.len();
    let tol = op.tol_dirichlet().as_f64();

    let mut symmetry = Worst::new();
    let mut sign = Worst::new();
    let mut rows = Worst::new();
    for i in 0..n {
        let mut row_sum = T::zero();
        for j in 0..n {
            row_sum += a[(i, j)];
            if i == j {
                continue;
            }
            sign.offer((-a[(i, j)]).as_f64(), (i, j));
            if j > i {
                // compare m(x)A(x,y) with m(y)A(y,x), normalized by the mean weight
                let scale = (m[i] + m[j]) * T::lit(0.5);
                let diff = ((m[i] * a[(i, j)] - m[j] * a[(j, i)]) / scale).abs();
                symmetry.offer(diff.as_f64(), (i, j));
            }
        }
        rows.offer(row_sum.as_f64(), (i, i));
    }

    let semidefinite = match op.spectral() {
        Ok(spec) => {
            let top = spec.max_eigenvalue().as_f64();
            CheckOutcome {
                name: "negative_semidefinite",
                pass: top <= tol,
                worst: top.max(0.0),
                location: None,
            }
        }
        Err(_) => CheckOutcome {
            name: "negative_semidefinite",
            pass: false,
            worst: f64::INFINITY,
            location: None,
        },
    };

    ValidationReport {
        tolerance: tol,
        checks: vec![
            symmetry.outcome("m_symmetry", tol),
            sign.outcome("sign_pattern", tol),
            rows.outcome("sub_markov_row_sums", tol),
            semidefinite,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_grid_operator, fractional_power, StateSpace};
    use nalgebra::DMatrix;

    #[test]
    fn grid_passes() {
        let op = build_grid_operator::<f64>(1, 10, 0.1).unwrap();
        let report = validate_dirichlet(&op);
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn positive_row_sum_is_reported() {
        let space = StateSpace::uniform(2, 1.0).unwrap();
        let op = DirichletOperator::new(space, DMatrix::from_row_slice(2, 2, &[-2.0, 3.0, 3.0, -2.0])).unwrap();
        let report = validate_dirichlet(&op);
        let rows = report.check("sub_markov_row_sums").unwrap();
        assert!(!rows.pass);
        assert_eq!(rows.worst, 1.0);
        assert!(report.check("m_symmetry").unwrap().pass);
        assert!(report.check("sign_pattern").unwrap().pass);
        assert!(report.into_result().is_err());
    }

    #[test]
    fn asymmetric_weights_fail_symmetry() {
        let space = StateSpace::new(vec!["a".into(), "b".into()], vec![1.0, 2.0]).unwrap();
        let op = DirichletOperator::new(space, DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0])).unwrap();
        assert!(!validate_dirichlet(&op).check("m_symmetry").unwrap().pass);
    }

    #[test]
    fn negative_off_diagonal_fails_sign() {
        let space = StateSpace::uniform(2, 1.0).unwrap();
        let op = DirichletOperator::new(space, DMatrix::from_row_slice(2, 2, &[-2.0, -0.5, -0.5, -2.0])).unwrap();
        let report = validate_dirichlet(&op);
        let sign = report.check("sign_pattern").unwrap();
        assert!(!sign.pass);
        assert_eq!(sign.location, Some((0, 1)));
    }

    #[test]
    fn fractional_chain_passes() {
        let op = build_grid_operator::<f64>(1, 2, 1.0).unwrap();
        let half = fractional_power(&op, 0.5).unwrap();
        assert!(validate_dirichlet(&half).all_pass());
    }
}
