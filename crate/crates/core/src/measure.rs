//! Signed measures on a finite state space.
//!
//! Measures are stored as atom masses, not densities: the density against
//! the reference measure is `atoms(x) / m(x)`. On a finite space every
//! measure is bounded and diffuse, so the concentrated part is always zero.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::operator::{ResolventKernel, StateSpace};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure<T: Scalar> {
    space_id: String,
    atoms: DVector<T>,
}

/// Binary and unary operations of the measure lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureOp {
    Plus,
    Minus,
    Max,
    Min,
    Jordan,
}

/// Output of [`measure_algebra`].
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureOpResult<T: Scalar> {
    Single(SignedMeasure<T>),
    Pair(SignedMeasure<T>, SignedMeasure<T>),
}

impl<T: Scalar> SignedMeasure<T> {
    pub fn new(space: &StateSpace<T>, atoms: DVector<T>) -> Result<Self> {
        if atoms.len() != space.len() {
            return invalid(format!("measure has {} atoms, the space has {} states", atoms.len(), space.len()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return invalid("measure has non-finite atoms");
        }
        Ok(Self { space_id: space.id(), atoms })
    }

    pub fn zero(space: &StateSpace<T>) -> Self {
        Self { space_id: space.id(), atoms: DVector::zeros(space.len()) }
    }

    /// Point mass at `state`.
    pub fn dirac(space: &StateSpace<T>, state: usize, mass: T) -> Result<Self> {
        let mut atoms = DVector::zeros(space.len());
        if state >= space.len() {
            return invalid(format!("state {state} outside a space of {} states", space.len()));
        }
        atoms[state] = mass;
        Self::new(space, atoms)
    }

    /// The reference measure itself, `μ = m`.
    pub fn reference(space: &StateSpace<T>) -> Self {
        Self { space_id: space.id(), atoms: space.weights().clone() }
    }

    /// Measure with the given density against `m`.
    pub fn from_density(space: &StateSpace<T>, density: &DVector<T>) -> Result<Self> {
        if density.len() != space.len() {
            return invalid("density length does not match the space");
        }
        Self::new(space, density.component_mul(space.weights()))
    }

    /// Parses the sparse `"index:mass"` form, e.g. `"0:12, 3:-1.5"`.
    pub fn parse_sparse(space: &StateSpace<T>, text: &str) -> Result<Self> {
        let mut atoms = DVector::zeros(space.len());
        for item in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()) {
            let Some((idx, mass)) = item.split_once(':') else {
                return invalid(format!("expected index:mass, got {item:?}"));
            };
            let idx: usize = idx.trim().parse().map_err(|_| crate::error::LabError::InvalidArgument(format!("bad index in {item:?}")))?;
            let mass: f64 = mass.trim().parse().map_err(|_| crate::error::LabError::InvalidArgument(format!("bad mass in {item:?}")))?;
            if idx >= space.len() {
                return invalid(format!("index {idx} outside a space of {} states", space.len()));
            }
            atoms[idx] += T::lit(mass);
        }
        Self::new(space, atoms)
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn atoms(&self) -> &DVector<T> {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Density `atoms / m`.
    pub fn density(&self, space: &StateSpace<T>) -> Result<DVector<T>> {
        self.check_space(space)?;
        Ok(self.atoms.component_div(space.weights()))
    }

    pub fn check_space(&self, space: &StateSpace<T>) -> Result<()> {
        if self.atoms.len() != space.len() || self.space_id != space.id() {
            return invalid("measure lives on a different state space");
        }
        Ok(())
    }

    fn same_space(&self, other: &Self) -> Result<()> {
        if self.space_id != other.space_id || self.atoms.len() != other.atoms.len() {
            return invalid("measures live on different state spaces");
        }
        Ok(())
    }

    fn with_atoms(&self, atoms: DVector<T>) -> Self {
        Self { space_id: self.space_id.clone(), atoms }
    }

    /// Same measure with atoms replaced, keeping the space identity.
    pub fn map_atoms(&self, f: impl Fn(usize, T) -> T) -> Self {
        self.with_atoms(DVector::from_fn(self.atoms.len(), |i, _| f(i, self.atoms[i])))
    }

    pub fn scale(&self, s: T) -> Self {
        self.with_atoms(&self.atoms * s)
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(self.with_atoms(&self.atoms + &other.atoms))
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(self.with_atoms(&self.atoms - &other.atoms))
    }

    /// Lattice join `μ ∨ ν`.
    pub fn join(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(self.with_atoms(self.atoms.zip_map(&other.atoms, |a, b| a.max(b))))
    }

    /// Lattice meet `μ ∧ ν`.
    pub fn meet(&self, other: &Self) -> Result<Self> {
        self.same_space(other)?;
        Ok(self.with_atoms(self.atoms.zip_map(&other.atoms, |a, b| a.min(b))))
    }

    /// `(μ⁺, μ⁻)` with disjoint supports.
    pub fn jordan(&self) -> (Self, Self) {
        let pos = self.atoms.map(|a| a.max(T::zero()));
        let neg = self.atoms.map(|a| (-a).max(T::zero()));
        (self.with_atoms(pos), self.with_atoms(neg))
    }

    pub fn abs(&self) -> Self {
        self.with_atoms(self.atoms.map(|a| a.abs()))
    }

    pub fn total_mass(&self) -> T {
        self.atoms.sum()
    }

    pub fn total_variation(&self) -> T {
        self.atoms.iter().fold(T::zero(), |acc, a| acc + a.abs())
    }

    /// `‖μ‖_ρ = Σ ρ(x)|μ({x})|`.
    pub fn rho_norm(&self, rho: &DVector<T>) -> Result<T> {
        rho_norm(self, rho)
    }

    /// Restriction to a set of states.
    pub fn restrict(&self, set: &[usize]) -> Self {
        let mut atoms = DVector::zeros(self.atoms.len());
        for &i in set {
            if i < atoms.len() {
                atoms[i] = self.atoms[i];
            }
        }
        self.with_atoms(atoms)
    }

    /// `μ ≤ ν` atomwise within `slack`.
    pub fn le(&self, other: &Self, slack: T) -> bool {
        self.atoms.iter().zip(other.atoms.iter()).all(|(a, b)| *a <= *b + slack)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|a| *a >= T::zero())
    }

    /// Indices of nonzero atoms.
    pub fn support(&self) -> Vec<usize> {
        (0..self.atoms.len()).filter(|&i| self.atoms[i] != T::zero()).collect()
    }

    pub fn to_document(&self) -> MeasureDocument<T> {
        MeasureDocument { space_id: self.space_id.clone(), atoms: self.atoms.iter().copied().collect() }
    }

    pub fn from_document(space: &StateSpace<T>, doc: MeasureDocument<T>) -> Result<Self> {
        if doc.space_id != space.id() {
            return invalid(format!("measure belongs to space {} but {} was given", doc.space_id, space.id()));
        }
        Self::new(space, DVector::from_vec(doc.atoms))
    }
}

/// Serialized measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasureDocument<T> {
    pub space_id: String,
    pub atoms: Vec<T>,
}

/// Dispatches a lattice or linear operation. `Jordan` ignores `nu`.
pub fn measure_algebra<T: Scalar>(
    mu: &SignedMeasure<T>,
    nu: &SignedMeasure<T>,
    op: MeasureOp,
) -> Result<MeasureOpResult<T>> {
    Ok(match op {
        MeasureOp::Plus => MeasureOpResult::Single(mu.plus(nu)?),
        MeasureOp::Minus => MeasureOpResult::Single(mu.minus(nu)?),
        MeasureOp::Max => MeasureOpResult::Single(mu.join(nu)?),
        MeasureOp::Min => MeasureOpResult::Single(mu.meet(nu)?),
        MeasureOp::Jordan => {
            let (p, n) = mu.jordan();
            MeasureOpResult::Pair(p, n)
        }
    })
}

/// `(R_α μ)(x) = Σ_y r_α(x,y) μ({y})`.
pub fn potential<T: Scalar>(kernel: &ResolventKernel<T>, mu: &SignedMeasure<T>) -> Result<DVector<T>> {
    if kernel.len() != mu.len() {
        return invalid("kernel and measure have different sizes");
    }
    Ok(kernel.apply_atoms(mu.atoms()))
}

/// `‖μ‖_ρ = Σ_x ρ(x)|μ({x})|` for `ρ ≥ 0`.
pub fn rho_norm<T: Scalar>(mu: &SignedMeasure<T>, rho: &DVector<T>) -> Result<T> {
    if rho.len() != mu.len() {
        return invalid("weight and measure have different sizes");
    }
    if let Some(i) = rho.iter().position(|r| *r < T::zero()) {
        return invalid(format!("weight ρ({i}) is negative"));
    }
    Ok(rho.iter().zip(mu.atoms().iter()).fold(T::zero(), |acc, (r, a)| acc + *r * a.abs()))
}
