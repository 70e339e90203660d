//! Finite-state Dirichlet operators.
//!
//! A [`DirichletOperator`] is a generator matrix `A` on a weighted finite
//! state space that is symmetric with respect to the weights `m`, has
//! nonnegative off-diagonal entries and nonpositive row sums. All spectral
//! work happens on the symmetrized matrix `S = M^{1/2} A M^{-1/2}`.

mod form_capacity;
mod resolvent;
mod validate;

pub use form_capacity::{form_capacity, FormCapacity, FormCapacityOptions};
pub use resolvent::{
    check_excessive, check_transient, resolvent, resolvent_identity_error, ExcessiveVerdict, ResolventKernel,
    TransienceVerdict,
};
pub use validate::{validate_dirichlet, CheckOutcome, ValidationReport};

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, LabError, Result};
use crate::scalar::{max_abs, Scalar};

/// Weighted finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T> {
    labels: Vec<String>,
    weights: DVector<T>,
}

impl<T: Scalar> StateSpace<T> {
    pub fn new(labels: Vec<String>, weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return invalid("state space must have at least one state");
        }
        if labels.len() != weights.len() {
            return invalid(format!("{} labels for {} states", labels.len(), weights.len()));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > T::zero()) || !w.is_finite()) {
            return invalid(format!("weight m({i}) = {} is not positive", weights[i]));
        }
        Ok(Self { labels, weights: DVector::from_vec(weights) })
    }

    /// `n` states labelled `0..n` with a common weight.
    pub fn uniform(n: usize, weight: T) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect(), vec![weight; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    /// Total reference mass `m(E)`.
    pub fn total_mass(&self) -> T {
        self.weights.sum()
    }

    /// Stable identifier derived from the size and the weights.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        for w in self.weights.iter() {
            hasher.update(w.as_f64().to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// How an operator was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Grid,
    Fractional,
    Matrix,
}

/// m-orthonormal eigendecomposition of an operator.
#[derive(Debug, Clone)]
pub struct Spectral<T: Scalar> {
    /// Eigenvalues of `A` (all `<= 0` for a valid operator).
    pub eigenvalues: DVector<T>,
    /// Orthonormal eigenvectors of the symmetrized matrix, one per column.
    pub vectors: DMatrix<T>,
    sqrt_m: DVector<T>,
}

impl<T: Scalar> Spectral<T> {
    /// `φ(A) = M^{-1/2} Q φ(Λ) Qᵀ M^{1/2}`, with the inner factor symmetrized.
    pub fn map(&self, phi: impl Fn(T) -> T) -> DMatrix<T> {
        let n = self.eigenvalues.len();
        let mut scaled = self.vectors.clone();
        for (j, lambda) in self.eigenvalues.iter().enumerate() {
            let s = phi(*lambda);
            scaled.column_mut(j).scale_mut(s);
        }
        let mut inner = &scaled * self.vectors.transpose();
        symmetrize(&mut inner);
        DMatrix::from_fn(n, n, |i, j| inner[(i, j)] * self.sqrt_m[j] / self.sqrt_m[i])
    }

    /// Applies `φ(A)` to a vector without forming the matrix.
    pub fn apply(&self, phi: impl Fn(T) -> T, v: &DVector<T>) -> DVector<T> {
        let w = v.component_mul(&self.sqrt_m);
        let mut coeffs = self.vectors.tr_mul(&w);
        for (c, lambda) in coeffs.iter_mut().zip(self.eigenvalues.iter()) {
            *c *= phi(*lambda);
        }
        (&self.vectors * coeffs).component_div(&self.sqrt_m)
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues.max()
    }
}

/// Zero-order potential operator backed by a Cholesky factor of `-S`.
#[derive(Debug, Clone)]
pub(crate) struct Green<T: Scalar> {
    chol: Cholesky<T, Dyn>,
    sqrt_m: DVector<T>,
}

impl<T: Scalar> Green<T> {
    /// `(Rg)(x) = Σ_y r(x,y) g(y) m(y) = [(-A)^{-1} g](x)`.
    pub(crate) fn apply(&self, g: &DVector<T>) -> DVector<T> {
        let w = g.component_mul(&self.sqrt_m);
        self.chol.solve(&w).component_div(&self.sqrt_m)
    }
}

/// Symmetric sub-Markovian generator on a weighted finite state space.
#[derive(Debug, Clone)]
pub struct DirichletOperator<T: Scalar> {
    space: StateSpace<T>,
    matrix: DMatrix<T>,
    kind: OperatorKind,
    h: Option<T>,
    alpha: Option<T>,
    spectral: OnceLock<std::result::Result<Spectral<T>, String>>,
    green: OnceLock<std::result::Result<Green<T>, String>>,
}

impl<T: Scalar> DirichletOperator<T> {
    /// Wraps a generator matrix. Only shapes are checked here; use
    /// [`validate_dirichlet`] for the structural properties.
    pub fn new(space: StateSpace<T>, matrix: DMatrix<T>) -> Result<Self> {
        Self::with_kind(space, matrix, OperatorKind::Matrix, None, None)
    }

    fn with_kind(
        space: StateSpace<T>,
        matrix: DMatrix<T>,
        kind: OperatorKind,
        h: Option<T>,
        alpha: Option<T>,
    ) -> Result<Self> {
        let n = space.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return invalid(format!(
                "generator is {}x{} but the space has {n} states",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        if matrix.iter().any(|a| !a.is_finite()) {
            return invalid("generator has non-finite entries");
        }
        Ok(Self {
            space,
            matrix,
            kind,
            h,
            alpha,
            spectral: OnceLock::new(),
            green: OnceLock::new(),
        })
    }

    /// Like [`DirichletOperator::new`] but rejects matrices failing validation.
    pub fn new_validated(space: StateSpace<T>, matrix: DMatrix<T>) -> Result<Self> {
        let op = Self::new(space, matrix)?;
        validate_dirichlet(&op).into_result()?;
        Ok(op)
    }

    pub fn space(&self) -> &StateSpace<T> {
        &self.space
    }

    pub fn weights(&self) -> &DVector<T> {
        self.space.weights()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn mesh_size(&self) -> Option<T> {
        self.h
    }

    pub fn alpha(&self) -> Option<T> {
        self.alpha
    }

    pub fn max_abs_entry(&self) -> T {
        max_abs(&self.matrix)
    }

    /// Default Dirichlet tolerance `1e-10·max|A|` (floored for low precision).
    pub fn tol_dirichlet(&self) -> T {
        let rel = T::lit(1e-10).max(T::default_epsilon() * T::lit(64.0));
        rel * self.max_abs_entry()
    }

    /// `Au`.
    pub fn apply(&self, u: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(u, "u")?;
        Ok(&self.matrix * u)
    }

    pub(crate) fn check_len(&self, v: &DVector<T>, name: &str) -> Result<()> {
        if v.len() != self.len() {
            return invalid(format!("{name} has {} entries, the space has {}", v.len(), self.len()));
        }
        Ok(())
    }

    fn sqrt_weights(&self) -> DVector<T> {
        self.weights().map(|w| w.sqrt())
    }

    /// Symmetrized matrix `M^{1/2} A M^{-1/2}`, averaged with its transpose.
    pub fn symmetrized(&self) -> DMatrix<T> {
        let s = self.sqrt_weights();
        let n = self.len();
        let mut sym = DMatrix::from_fn(n, n, |i, j| s[i] * self.matrix[(i, j)] / s[j]);
        symmetrize(&mut sym);
        sym
    }

    /// Cached spectral decomposition.
    pub fn spectral(&self) -> Result<&Spectral<T>> {
        self.spectral
            .get_or_init(|| {
                let sym = self.symmetrized();
                let eig = SymmetricEigen::try_new(sym, T::default_epsilon(), 0)
                    .ok_or_else(|| "symmetric eigendecomposition did not converge".to_string())?;
                Ok(Spectral {
                    eigenvalues: eig.eigenvalues,
                    vectors: eig.eigenvectors,
                    sqrt_m: self.sqrt_weights(),
                })
            })
            .as_ref()
            .map_err(|e| LabError::Numerical(e.clone()))
    }

    pub(crate) fn green(&self) -> Result<&Green<T>> {
        self.green
            .get_or_init(|| {
                let mut p = self.symmetrized();
                p.neg_mut();
                let chol = Cholesky::new(p).ok_or_else(|| "-A is not positive definite".to_string())?;
                let scale = self.max_abs_entry();
                let floor = T::lit(1e-13) * scale;
                let l = chol.l_dirty();
                if let Some(i) = (0..self.len()).find(|&i| l[(i, i)] * l[(i, i)] <= floor) {
                    return Err(format!("-A is numerically singular (pivot {i})"));
                }
                Ok(Green { chol, sqrt_m: self.sqrt_weights() })
            })
            .as_ref()
            .map_err(|e| LabError::Transience(e.clone()))
    }

    /// Zero-order potential of a function: `(Rg)(x) = Σ_y r(x,y) g(y) m(y)`.
    pub fn potential_fn(&self, g: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(g, "g")?;
        Ok(self.green()?.apply(g))
    }

    /// Zero-order potential of atom masses: `(Rμ)(x) = Σ_y r(x,y) μ({y})`.
    pub fn potential_atoms(&self, atoms: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(atoms, "atoms")?;
        Ok(self.green()?.apply(&atoms.component_div(self.weights())))
    }

    /// `R1`, the expected lifetime from each state.
    pub fn r1(&self) -> Result<DVector<T>> {
        self.potential_fn(&DVector::from_element(self.len(), T::one()))
    }

    /// `e^{tA} v` through the spectral decomposition.
    pub fn semigroup_apply(&self, t: T, v: &DVector<T>) -> Result<DVector<T>> {
        self.check_len(v, "v")?;
        Ok(self.spectral()?.apply(|l| (t * l).exp(), v))
    }

    pub fn to_document(&self) -> OperatorDocument<T> {
        OperatorDocument {
            n: self.len(),
            labels: self.space.labels.clone(),
            m: self.weights().iter().copied().collect(),
            a: self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            kind: self.kind,
            h: self.h,
            alpha: self.alpha,
        }
    }

    pub fn from_document(doc: OperatorDocument<T>) -> Result<Self> {
        if doc.m.len() != doc.n || doc.a.len() != doc.n || doc.a.iter().any(|r| r.len() != doc.n) {
            return invalid(format!("document dimensions do not match n = {}", doc.n));
        }
        let space = StateSpace::new(doc.labels, doc.m)?;
        let matrix = DMatrix::from_fn(doc.n, doc.n, |i, j| doc.a[i][j]);
        Self::with_kind(space, matrix, doc.kind, doc.h, doc.alpha)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Serialized operator: dense row-major generator plus provenance fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OperatorDocument<T> {
    pub n: usize,
    pub labels: Vec<String>,
    pub m: Vec<T>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<T>>,
    pub kind: OperatorKind,
    pub h: Option<T>,
    pub alpha: Option<T>,
}

pub(crate) fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Second-difference Laplacian on `n_per_side^dim` interior nodes with
/// absorbing boundary. Weights are the cell volume `h^dim`.
pub fn build_grid_operator<T: Scalar>(dim: usize, n_per_side: usize, h: T) -> Result<DirichletOperator<T>> {
    if !(1..=3).contains(&dim) {
        return invalid(format!("grid dimension must be 1, 2 or 3, got {dim}"));
    }
    if n_per_side == 0 {
        return invalid("grid needs at least one node per side");
    }
    if !(h > T::zero()) || !h.is_finite() {
        return invalid(format!("mesh size must be positive, got {h}"));
    }
    let n = n_per_side.pow(dim as u32);
    let inv_h2 = T::one() / (h * h);
    let mut a = DMatrix::zeros(n, n);
    let stride = |d: usize| n_per_side.pow(d as u32);
    let mut labels = Vec::with_capacity(n);
    for idx in 0..n {
        let coords: Vec<usize> = (0..dim).map(|d| (idx / stride(d)) % n_per_side).collect();
        labels.push(coords.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        a[(idx, idx)] = -T::lit(2.0 * dim as f64) * inv_h2;
        for (d, &c) in coords.iter().enumerate() {
            if c > 0 {
                a[(idx, idx - stride(d))] = inv_h2;
            }
            if c + 1 < n_per_side {
                a[(idx, idx + stride(d))] = inv_h2;
            }
        }
    }
    let cell = (0..dim).fold(T::one(), |acc, _| acc * h);
    let space = StateSpace::new(labels, vec![cell; n])?;
    DirichletOperator::with_kind(space, a, OperatorKind::Grid, Some(h), None)
}

/// Random m-symmetric Dirichlet operator on `n` states.
///
/// Weights lie in `[0.5, 2]`. Conductances in `[0.1, 2]` sit on a path through
/// all states plus each other pair with probability `edge_prob`; killing
/// rates in `[0.1, 1]` sit on state 0 and on each other state with
/// probability 0.3, so the operator is connected and transient.
pub fn random_operator<T: Scalar>(n: usize, edge_prob: f64, seed: u64) -> Result<DirichletOperator<T>> {
    use rand::{Rng, SeedableRng};
    if n == 0 {
        return invalid("random operator needs at least one state");
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return invalid(format!("edge probability must lie in [0, 1], got {edge_prob}"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for y in x + 1..n {
            if y == x + 1 || rng.random_bool(edge_prob) {
                let c = rng.random_range(0.1..2.0);
                w[(x, y)] = c;
                w[(y, x)] = c;
            }
        }
    }
    let kill: Vec<f64> =
        (0..n).map(|x| if x == 0 || rng.random_bool(0.3) { rng.random_range(0.1..1.0) } else { 0.0 }).collect();
    let a = DMatrix::from_fn(n, n, |x, y| {
        if x == y {
            T::lit(-(w.row(x).sum() + kill[x]) / m[x])
        } else {
            T::lit(w[(x, y)] / m[x])
        }
    });
    let labels = (0..n).map(|i| i.to_string()).collect();
    let space = StateSpace::new(labels, m.into_iter().map(T::lit).collect())?;
    DirichletOperator::new(space, a)
}

/// `-(-A)^α` through the m-weighted eigendecomposition.
///
/// Off-diagonal entries are not clamped; an entry below `-tol_dirichlet`
/// yields a validation error naming it.
pub fn fractional_power<T: Scalar>(op: &DirichletOperator<T>, alpha: T) -> Result<DirichletOperator<T>> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return invalid(format!("fractional exponent must lie in (0, 1], got {alpha}"));
    }
    let composed_alpha = Some(op.alpha.unwrap_or(T::one()) * alpha);
    if alpha == T::one() {
        return DirichletOperator::with_kind(
            op.space.clone(),
            op.matrix.clone(),
            op.kind,
            op.h,
            op.alpha,
        );
    }
    let spectral = op.spectral()?;
    let matrix = spectral.map(|lambda| -(-lambda).max(T::zero()).powf(alpha));
    let tol = T::lit(1e-10).max(T::default_epsilon() * T::lit(64.0)) * max_abs(&matrix);
    let n = matrix.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && matrix[(i, j)] < -tol {
                return Err(LabError::Validation {
                    check: "sign pattern of fractional power".into(),
                    row: i,
                    col: j,
                    magnitude: matrix[(i, j)].as_f64(),
                });
            }
        }
    }
    DirichletOperator::with_kind(op.space.clone(), matrix, OperatorKind::Fractional, op.h, composed_alpha)
}

/// `E(u,v) = Σ_x (-Au)(x) v(x) m(x)`.
pub fn energy<T: Scalar>(op: &DirichletOperator<T>, u: &DVector<T>, v: &DVector<T>) -> Result<T> {
    op.check_len(v, "v")?;
    let au = op.apply(u)?;
    Ok(-au.iter().zip(v.iter()).zip(op.weights().iter()).fold(T::zero(), |acc, ((a, b), w)| acc + *a * *b * *w))
}
