//! Nonlinear capacity `Cap_{A,p}` and dual bounds for measures.
//!
//! For `η = R_1 g` with `g ≥ 0` the graph norm is
//! `‖η‖_{V_p} = ‖η - g‖_{p,m} + ‖η‖_{p,m}` since `A_p η = η - g`.
//! The capacity minimizes `‖η‖_{V_p}^p` over such `η` dominating `1_B`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{invalid, LabError, Result};
use crate::measure::SignedMeasure;
use crate::operator::{resolvent, DirichletOperator};
use crate::scalar::Scalar;

fn ser_vec<T: Scalar, S: Serializer>(v: &DVector<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

/// `(Σ m|v|^p)^{1/p}`.
pub fn lp_norm<T: Scalar>(v: &DVector<T>, m: &DVector<T>, p: T) -> T {
    let scale = v.amax();
    if scale == T::zero() {
        return T::zero();
    }
    let s = v.iter().zip(m.iter()).fold(T::zero(), |acc, (x, w)| acc + *w * (x.abs() / scale).powf(p));
    scale * s.powf(T::one() / p)
}

/// Gradient of `lp_norm` at `v`; zero at the origin.
fn lp_norm_gradient<T: Scalar>(v: &DVector<T>, m: &DVector<T>, p: T, norm: T) -> DVector<T> {
    if norm == T::zero() {
        return DVector::zeros(v.len());
    }
    DVector::from_fn(v.len(), |i, _| {
        let x = v[i];
        let mag = m[i] * (x.abs() / norm).powf(p - T::one());
        if x < T::zero() {
            -mag
        } else {
            mag
        }
    })
}

fn check_exponent<T: Scalar>(p: T) -> Result<()> {
    if !(p > T::one()) || !p.is_finite() {
        return invalid(format!("capacity exponent must exceed 1, got {p}"));
    }
    Ok(())
}

/// `R_1` as a matrix on functions together with the pieces of the norm.
struct Problem<T: Scalar> {
    k: DMatrix<T>,
    kt: DMatrix<T>,
    m: DVector<T>,
    p: T,
}

impl<T: Scalar> Problem<T> {
    fn new(op: &DirichletOperator<T>, p: T) -> Result<Self> {
        let k = resolvent(op, T::one())?.operator_matrix();
        let kt = k.transpose();
        Ok(Self { k, kt, m: op.weights().clone(), p })
    }

    fn norm(&self, g: &DVector<T>, kg: &DVector<T>) -> T {
        lp_norm(&(kg - g), &self.m, self.p) + lp_norm(kg, &self.m, self.p)
    }

    /// `∇N(g) - Kᵀπ`.
    fn gradient(&self, g: &DVector<T>, kg: &DVector<T>, pi: Option<&DVector<T>>) -> DVector<T> {
        let c = kg - g;
        let a = lp_norm_gradient(&c, &self.m, self.p, lp_norm(&c, &self.m, self.p));
        let b = lp_norm_gradient(kg, &self.m, self.p, lp_norm(kg, &self.m, self.p));
        let mut z = &a + b;
        if let Some(pi) = pi {
            z -= pi;
        }
        &self.kt * z - a
    }
}

#[derive(Debug, Clone)]
pub struct CapacityOptions {
    /// Budget of objective evaluations across all inner solves.
    pub max_iter: usize,
    /// Target relative primal-dual gap.
    pub gap_tol: f64,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self { max_iter: 100_000, gap_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct CapacityResult<T: Scalar> {
    pub value: T,
    #[serde(serialize_with = "ser_vec")]
    pub g: DVector<T>,
    #[serde(serialize_with = "ser_vec")]
    pub eta: DVector<T>,
    /// `(value - dual^p) / value`, a certified relative optimality gap.
    pub gap: T,
    #[serde(skip)]
    pub dual_bound: T,
    #[serde(skip)]
    pub iterations: usize,
}

/// `‖R_1 g‖_{V_p}` for `g ≥ 0`.
pub fn vp_norm<T: Scalar>(op: &DirichletOperator<T>, g: &DVector<T>, p: T) -> Result<T> {
    check_exponent(p)?;
    op.check_len(g, "g")?;
    let prob = Problem::new(op, p)?;
    let kg = &prob.k * g;
    Ok(prob.norm(g, &kg))
}

/// `Cap_{A,p}(B)`.
///
/// Augmented Lagrangian on the constraints `(R_1 g)(x) ≥ 1, x ∈ B`, with a
/// spectral projected gradient inner solver over `g ≥ 0`. The returned `g`
/// is rescaled so that `min_B R_1 g = 1` exactly. The lower bound comes from
/// a dual-feasible multiplier built from the gradient at `g`.
pub fn cap_ap<T: Scalar>(op: &DirichletOperator<T>, set: &[usize], p: T, opts: &CapacityOptions) -> Result<CapacityResult<T>> {
    check_exponent(p)?;
    let n = op.len();
    if let Some(&bad) = set.iter().find(|&&i| i >= n) {
        return invalid(format!("state {bad} outside a space of {n} states"));
    }
    let mut set = set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() {
        return Ok(CapacityResult {
            value: T::zero(),
            g: DVector::zeros(n),
            eta: DVector::zeros(n),
            gap: T::zero(),
            dual_bound: T::zero(),
            iterations: 0,
        });
    }
    let prob = Problem::new(op, p)?;
    if let Some(&b) = set.iter().find(|&&b| prob.k.row(b).max() <= T::zero()) {
        return Err(LabError::Infeasible(format!("R_1 has a vanishing row at state {b}")));
    }
    if set.len() == 1 {
        return single_state(&prob, set[0], opts);
    }
    AugmentedLagrangian::new(&prob, &set, opts).run()
}

/// Euclidean projection onto `{g ≥ 0, kᵀg = 1}` for `k ≥ 0`, `k ≠ 0`.
fn project_slice<T: Scalar>(z: &DVector<T>, k: &DVector<T>) -> DVector<T> {
    // g(τ) = max(z + τk, 0); kᵀg(τ) is nondecreasing and piecewise linear in τ
    let mut breaks: Vec<(T, usize)> = (0..z.len()).filter(|&i| k[i] > T::zero()).map(|i| (-z[i] / k[i], i)).collect();
    breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let (mut slope, mut offset) = (T::zero(), T::zero());
    let mut tau = T::zero();
    for (j, &(_, i)) in breaks.iter().enumerate() {
        slope += k[i] * k[i];
        offset += k[i] * z[i];
        tau = (T::one() - offset) / slope;
        if breaks.get(j + 1).map(|next| tau <= next.0).unwrap_or(true) {
            break;
        }
    }
    DVector::from_fn(z.len(), |i, _| if k[i] > T::zero() { (z[i] + tau * k[i]).max(T::zero()) } else { z[i].max(T::zero()) })
}

/// `Cap({b})` by spectral projected gradient on `{g ≥ 0, (R_1 g)(b) = 1}`.
fn single_state<T: Scalar>(prob: &Problem<T>, b: usize, opts: &CapacityOptions) -> Result<CapacityResult<T>> {
    let n = prob.k.nrows();
    let k: DVector<T> = prob.k.row(b).transpose();
    let gap_tol = T::lit(opts.gap_tol);
    let certify = |g: &DVector<T>, kg: &DVector<T>, grad: &DVector<T>| -> (T, T) {
        let primal = prob.norm(g, kg) / kg[b];
        let mut nu = T::max_value().unwrap_or(T::one() / T::default_epsilon());
        for y in 0..n {
            if k[y] > T::zero() {
                nu = nu.min(grad[y] / k[y]);
            } else if grad[y] < T::zero() {
                nu = T::zero();
            }
        }
        let dual = nu.max(T::zero()).min(primal);
        let pv = primal.powf(prob.p);
        (pv, ((pv - dual.powf(prob.p)) / pv).max(T::zero()))
    };

    let mut g = project_slice(&DVector::from_element(n, T::one()), &k);
    let mut kg = &prob.k * &g;
    let mut value = prob.norm(&g, &kg);
    let mut grad = prob.gradient(&g, &kg, None);
    let mut evals = 1;
    let mut best = (T::max_value().unwrap_or(T::one()), T::one(), g.clone(), kg.clone());
    let mut history: VecDeque<T> = VecDeque::from([value]);
    let mut step = T::one() / grad.amax().max(T::lit(1e-300));
    let (step_min, step_max) = (T::lit(1e-12), T::lit(1e12));
    let mut iter = 0usize;
    loop {
        let d = project_slice(&(&g - &grad * step), &k) - &g;
        let stationary = d.amax() == T::zero();
        if iter.is_multiple_of(10) || stationary || evals >= opts.max_iter {
            let (pv, gap) = certify(&g, &kg, &grad);
            if gap < best.1 || (gap == best.1 && pv < best.0) {
                best = (pv, gap, g.clone(), kg.clone());
            }
            if gap <= gap_tol || stationary || evals >= opts.max_iter {
                break;
            }
        }
        iter += 1;
        let slope = grad.dot(&d);
        let reference = history.iter().fold(value, |a, v| a.max(*v));
        let mut t = T::one();
        let (trial, trial_kg, trial_value) = loop {
            let trial = &g + &d * t;
            let trial_kg = &prob.k * &trial;
            let v = prob.norm(&trial, &trial_kg);
            evals += 1;
            if v <= reference + T::lit(1e-4) * t * slope || t < T::lit(1e-12) {
                break (trial, trial_kg, v);
            }
            t *= T::lit(0.5);
        };
        let trial_grad = prob.gradient(&trial, &trial_kg, None);
        let s = &trial - &g;
        let y = &trial_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > T::zero() { (s.dot(&s) / sy).clamp(step_min, step_max) } else { step_max.min(step * T::lit(10.0)) };
        g = trial;
        kg = trial_kg;
        value = trial_value;
        grad = trial_grad;
        history.push_back(value);
        if history.len() > 10 {
            history.pop_front();
        }
    }
    let (_, gap, g, kg) = best;
    let scale = T::one() / kg[b];
    let g = g * scale;
    let eta = kg * scale;
    let primal = prob.norm(&g, &eta);
    let value = primal.powf(prob.p);
    Ok(CapacityResult { value, g, eta, gap, dual_bound: value * (T::one() - gap), iterations: evals })
}

struct AugmentedLagrangian<'a, T: Scalar> {
    prob: &'a Problem<T>,
    set: &'a [usize],
    opts: &'a CapacityOptions,
    evals: usize,
}

struct Certificate<T: Scalar> {
    g: DVector<T>,
    eta: DVector<T>,
    primal: T,
    dual: T,
}

impl<'a, T: Scalar> AugmentedLagrangian<'a, T> {
    fn new(prob: &'a Problem<T>, set: &'a [usize], opts: &'a CapacityOptions) -> Self {
        Self { prob, set, opts, evals: 0 }
    }

    fn multiplier_field(&self, kg: &DVector<T>, lambda: &[T], rho: T) -> DVector<T> {
        let mut pi = DVector::zeros(kg.len());
        for (j, &b) in self.set.iter().enumerate() {
            pi[b] = (lambda[j] + rho * (T::one() - kg[b])).max(T::zero());
        }
        pi
    }

    fn lagrangian(&mut self, g: &DVector<T>, lambda: &[T], rho: T) -> (T, DVector<T>, DVector<T>) {
        self.evals += 1;
        let kg = &self.prob.k * g;
        let mut value = self.prob.norm(g, &kg);
        for (j, &b) in self.set.iter().enumerate() {
            let shifted = (lambda[j] + rho * (T::one() - kg[b])).max(T::zero());
            value += (shifted * shifted - lambda[j] * lambda[j]) / (T::lit(2.0) * rho);
        }
        let pi = self.multiplier_field(&kg, lambda, rho);
        let grad = self.prob.gradient(g, &kg, Some(&pi));
        (value, grad, kg)
    }

    /// Nonmonotone spectral projected gradient; returns whether the
    /// projected-gradient norm reached `tol`.
    fn inner(&mut self, g: &mut DVector<T>, lambda: &[T], rho: T, tol: T) -> bool {
        let (mut value, mut grad, _) = self.lagrangian(g, lambda, rho);
        let mut history: VecDeque<T> = VecDeque::from([value]);
        let mut step = T::one() / grad.amax().max(T::lit(1e-300));
        let (step_min, step_max) = (T::lit(1e-12), T::lit(1e12));
        while self.evals < self.opts.max_iter {
            let pg = (g.clone() - &grad).map(|x| x.max(T::zero())) - &*g;
            if pg.amax() <= tol {
                return true;
            }
            let d = (g.clone() - &grad * step).map(|x| x.max(T::zero())) - &*g;
            let slope = grad.dot(&d);
            let reference = history.iter().fold(value, |a, v| a.max(*v));
            let mut t = T::one();
            let (trial, trial_value, trial_grad) = loop {
                let trial = &*g + &d * t;
                let (v, gr, _) = self.lagrangian(&trial, lambda, rho);
                if v <= reference + T::lit(1e-4) * t * slope || t < T::lit(1e-12) {
                    break (trial, v, gr);
                }
                t *= T::lit(0.5);
            };
            let s = &trial - &*g;
            let y = &trial_grad - &grad;
            let sy = s.dot(&y);
            step = if sy > T::zero() { (s.dot(&s) / sy).clamp(step_min, step_max) } else { step_max.min(step * T::lit(10.0)) };
            if s.amax() == T::zero() {
                return pg.amax() <= tol;
            }
            *g = trial;
            value = trial_value;
            grad = trial_grad;
            history.push_back(value);
            if history.len() > 10 {
                history.pop_front();
            }
        }
        false
    }

    /// Rescales to exact feasibility and builds a dual-feasible multiplier
    /// along `lambda`.
    fn certify(&self, g: &DVector<T>, lambda: &[T]) -> Certificate<T> {
        let prob = self.prob;
        let kg = &prob.k * g;
        let low = self.set.iter().fold(T::max_value().unwrap_or(T::one() / T::default_epsilon()), |a, &b| a.min(kg[b]));
        let scale = if low > T::zero() { T::one() / low } else { T::one() };
        let g = g * scale;
        let eta = kg * scale;
        let primal = prob.norm(&g, &eta);

        let mut direction: Vec<T> = lambda.to_vec();
        if direction.iter().all(|l| *l <= T::zero()) {
            // fall back to the constraints that are active
            let tight = T::one() + T::lit(1e-6);
            direction = self.set.iter().map(|&b| if eta[b] <= tight { T::one() } else { T::zero() }).collect();
        }
        let w = prob.gradient(&g, &eta, None);
        let mut pulled = DVector::zeros(g.len());
        for (j, &b) in self.set.iter().enumerate() {
            pulled += prob.kt.column(b) * direction[j];
        }
        let mut t = T::max_value().unwrap_or(T::one() / T::default_epsilon());
        for y in 0..g.len() {
            if pulled[y] > T::zero() {
                t = t.min(w[y] / pulled[y]);
            } else if w[y] < T::zero() {
                t = T::zero();
            }
        }
        let total: T = direction.iter().fold(T::zero(), |a, d| a + *d);
        let dual = (t * total).max(T::zero()).min(primal);
        Certificate { g, eta, primal, dual }
    }

    fn run(mut self) -> Result<CapacityResult<T>> {
        let prob = self.prob;
        let n = prob.k.nrows();
        let ones = DVector::from_element(n, T::one());
        let k1 = &prob.k * &ones;
        let low = self.set.iter().fold(T::max_value().unwrap_or(T::one()), |a, &b| a.min(k1[b]));
        let mut g = ones / low;
        let n0 = prob.norm(&g, &(&prob.k * &g));
        let mut lambda = vec![T::zero(); self.set.len()];
        let mut rho = T::lit(10.0) * n0;
        let grad_scale = prob.gradient(&g, &(&prob.k * &g), None).amax().max(T::lit(1e-300));
        let mut tol = T::lit(1e-3) * grad_scale;
        let tol_floor = T::lit(1e-13).max(T::default_epsilon() * T::lit(100.0)) * grad_scale;
        let gap_tol = T::lit(self.opts.gap_tol);
        let mut prev_violation = T::max_value().unwrap_or(T::one());
        let mut best: Option<Certificate<T>> = None;

        let gap_of = |c: &Certificate<T>| {
            let pv = c.primal.powf(prob.p);
            if pv == T::zero() {
                T::zero()
            } else {
                ((pv - c.dual.powf(prob.p)) / pv).max(T::zero())
            }
        };

        loop {
            let converged = self.inner(&mut g, &lambda, rho, tol);
            let kg = &prob.k * &g;
            let mut violation = T::zero();
            for (j, &b) in self.set.iter().enumerate() {
                let c = T::one() - kg[b];
                violation = violation.max(c);
                lambda[j] = (lambda[j] + rho * c).max(T::zero());
            }
            let cert = self.certify(&g, &lambda);
            let improved = match &best {
                None => true,
                Some(b) => gap_of(&cert) < gap_of(b),
            };
            if improved {
                best = Some(cert);
            }
            let done = best.as_ref().map(|b| gap_of(b) <= gap_tol).unwrap_or(false);
            if done || self.evals >= self.opts.max_iter {
                break;
            }
            if violation > T::lit(0.25) * prev_violation {
                rho *= T::lit(10.0);
            }
            prev_violation = violation.max(T::zero());
            if converged {
                tol = (tol * T::lit(0.1)).max(tol_floor);
            }
        }

        let best = best.expect("at least one outer iteration");
        let gap = gap_of(&best);
        Ok(CapacityResult {
            value: best.primal.powf(prob.p),
            g: best.g,
            eta: best.eta,
            gap,
            dual_bound: best.dual.powf(prob.p),
            iterations: self.evals,
        })
    }
}

/// Exhaustive search over directions `g ∈ [0, 10]^n` for `n ≤ 3`.
///
/// Each grid direction is scaled onto the constraint `min_B R_1 g = 1`.
/// A coarse pass over the box is followed by zooming passes around the best
/// point until the grid spacing reaches `resolution`.
pub fn brute_force_capacity<T: Scalar>(op: &DirichletOperator<T>, set: &[usize], p: T, resolution: T) -> Result<T> {
    check_exponent(p)?;
    let n = op.len();
    if n > 3 {
        return invalid("brute-force capacity is limited to spaces with at most 3 states");
    }
    if set.iter().any(|&b| b >= n) {
        return invalid("set contains a state outside the space");
    }
    if set.is_empty() {
        return Ok(T::zero());
    }
    let prob = Problem::new(op, p)?;
    let per_axis = 41usize;
    let evaluate = |g: &DVector<T>| -> Option<T> {
        let kg = &prob.k * g;
        let low = set.iter().fold(T::max_value()?, |a, &b| a.min(kg[b]));
        if low <= T::zero() {
            return None;
        }
        Some((prob.norm(g, &kg) / low).powf(p))
    };
    let top = T::lit(10.0);
    let mut lo = vec![T::zero(); n];
    let mut hi = vec![top; n];
    let mut best: Option<(T, DVector<T>)> = None;
    loop {
        let spacing: Vec<T> = (0..n).map(|d| (hi[d] - lo[d]) / T::from_usize_lossy(per_axis - 1)).collect();
        let total = per_axis.pow(n as u32);
        for idx in 0..total {
            let g = DVector::from_fn(n, |d, _| {
                let k = (idx / per_axis.pow(d as u32)) % per_axis;
                lo[d] + spacing[d] * T::from_usize_lossy(k)
            });
            if let Some(v) = evaluate(&g) {
                if best.as_ref().map(|(b, _)| v < *b).unwrap_or(true) {
                    best = Some((v, g));
                }
            }
        }
        let Some((_, centre)) = &best else {
            return Err(LabError::Infeasible("no grid direction reaches the set".into()));
        };
        if spacing.iter().all(|s| *s <= resolution) {
            break;
        }
        for d in 0..n {
            let half = spacing[d] * T::lit(2.0);
            lo[d] = (centre[d] - half).max(T::zero());
            hi[d] = (centre[d] + half).min(top);
        }
    }
    Ok(best.map(|(v, _)| v).unwrap_or(T::zero()))
}

#[derive(Debug, Clone)]
pub struct DualEstimateOptions {
    pub starts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for DualEstimateOptions {
    fn default() -> Self {
        Self { starts: 16, max_iter: 2000, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct DualEstimate<T: Scalar> {
    /// Best ratio `(η, μ) / ‖η‖_{V_p}` found; a lower bound on the dual norm.
    pub bound: T,
    #[serde(serialize_with = "ser_vec")]
    pub eta: DVector<T>,
    #[serde(skip)]
    pub g: DVector<T>,
}

/// Lower bound on `sup (η, μ) / ‖η‖_{V_p}` over `η = R_1 g, g ≥ 0`, by
/// normalized projected ascent from seeded random starts.
pub fn vp_dual_estimate<T: Scalar>(
    op: &DirichletOperator<T>,
    mu: &SignedMeasure<T>,
    p: T,
    opts: &DualEstimateOptions,
) -> Result<DualEstimate<T>> {
    check_exponent(p)?;
    mu.check_space(op.space())?;
    if !mu.is_nonnegative() {
        return invalid("dual estimate needs a nonnegative measure");
    }
    let n = op.len();
    if mu.atoms().amax() == T::zero() {
        return Ok(DualEstimate { bound: T::zero(), eta: DVector::zeros(n), g: DVector::zeros(n) });
    }
    let prob = Problem::new(op, p)?;
    let q = &prob.kt * mu.atoms();
    let starts: Vec<(T, DVector<T>)> = (0..opts.starts.max(1))
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let g0 = DVector::from_fn(n, |_, _| T::lit(rng.random_range(0.0..1.0)));
            ascend(&prob, &q, g0, opts.max_iter)
        })
        .collect();
    let (bound, g) = starts
        .into_iter()
        .fold(None, |acc: Option<(T, DVector<T>)>, (r, g)| match acc {
            Some((br, bg)) if br >= r => Some((br, bg)),
            _ => Some((r, g)),
        })
        .expect("at least one start");
    let eta = &prob.k * &g;
    Ok(DualEstimate { bound, eta, g })
}

/// Maximizes `qᵀg` on `{g ≥ 0, N(g) = 1}`; returns the ratio and the point.
fn ascend<T: Scalar>(prob: &Problem<T>, q: &DVector<T>, g0: DVector<T>, max_iter: usize) -> (T, DVector<T>) {
    let normalize = |g: DVector<T>| -> Option<(T, DVector<T>)> {
        let kg = &prob.k * &g;
        let nrm = prob.norm(&g, &kg);
        if nrm <= T::zero() || !nrm.is_finite() {
            return None;
        }
        let g = g / nrm;
        Some((q.dot(&g), g))
    };
    let Some((mut ratio, mut g)) = normalize(g0.map(|x| x.max(T::zero())) + DVector::from_element(q.len(), T::lit(1e-12))) else {
        return (T::zero(), DVector::zeros(q.len()));
    };
    let mut step = T::one() / q.amax();
    let mut stalls = 0;
    for _ in 0..max_iter {
        let kg = &prob.k * &g;
        let grad = q - prob.gradient(&g, &kg, None) * ratio;
        let candidate = (&g + &grad * step).map(|x| x.max(T::zero()));
        match normalize(candidate) {
            Some((r, gn)) if r > ratio => {
                let gain = (r - ratio) / r;
                ratio = r;
                g = gn;
                step *= T::lit(1.5);
                stalls = if gain < T::lit(1e-13) { stalls + 1 } else { 0 };
            }
            _ => {
                step *= T::lit(0.5);
                stalls += 1;
            }
        }
        if stalls > 60 {
            break;
        }
    }
    (ratio, g)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChebyshevCheck {
    pub lambda: f64,
    pub level_set: Vec<usize>,
    pub capacity: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `Cap({u ≥ λ}) ≤ λ^{-p} ‖u‖_{V_p}^p` for `u = R_1 g`.
pub fn chebyshev_check<T: Scalar>(
    op: &DirichletOperator<T>,
    g: &DVector<T>,
    lambda: T,
    p: T,
    opts: &CapacityOptions,
) -> Result<ChebyshevCheck> {
    check_exponent(p)?;
    op.check_len(g, "g")?;
    if g.iter().any(|x| *x < T::zero()) || !(lambda > T::zero()) {
        return invalid("Chebyshev check needs g ≥ 0 and λ > 0");
    }
    let prob = Problem::new(op, p)?;
    let u = &prob.k * g;
    let level_set: Vec<usize> = (0..u.len()).filter(|&i| u[i] >= lambda).collect();
    let bound = (prob.norm(g, &u) / lambda).powf(p);
    let cap = cap_ap(op, &level_set, p, opts)?;
    let pass = cap.value <= bound * (T::one() + T::lit(1e-6));
    Ok(ChebyshevCheck { lambda: lambda.as_f64(), level_set, capacity: cap.value.as_f64(), bound: bound.as_f64(), pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExhaustionStep {
    pub state: usize,
    /// Dual bound of the single atom.
    pub atom_bound: f64,
    /// Dual bound of the measure restricted to the atoms taken so far.
    pub cumulative_bound: f64,
}

/// Exhausts the support of `μ ≥ 0` atom by atom, in decreasing order of the
/// single-atom dual bound.
pub fn exhaustion_diagnostic<T: Scalar>(
    op: &DirichletOperator<T>,
    mu: &SignedMeasure<T>,
    p: T,
    opts: &DualEstimateOptions,
) -> Result<Vec<ExhaustionStep>> {
    let support = mu.support();
    let mut atoms = Vec::with_capacity(support.len());
    for &x in &support {
        let single = mu.restrict(&[x]);
        atoms.push((x, vp_dual_estimate(op, &single, p, opts)?.bound));
    }
    atoms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut taken = Vec::new();
    let mut steps = Vec::with_capacity(atoms.len());
    for (x, bound) in atoms {
        taken.push(x);
        let cumulative = vp_dual_estimate(op, &mu.restrict(&taken), p, opts)?.bound;
        steps.push(ExhaustionStep { state: x, atom_bound: bound.as_f64(), cumulative_bound: cumulative.as_f64() });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_grid_operator, StateSpace};
    use approx::assert_relative_eq;

    fn scalar() -> DirichletOperator<f64> {
        DirichletOperator::new(StateSpace::uniform(1, 1.0).unwrap(), DMatrix::from_element(1, 1, -2.0)).unwrap()
    }

    #[test]
    fn scalar_capacity_is_three_to_the_p() {
        let op = scalar();
        for p in [1.5, 2.0, 3.0] {
            let cap = cap_ap(&op, &[0], p, &CapacityOptions::default()).unwrap();
            assert_relative_eq!(cap.value, 3f64.powf(p), max_relative = 1e-8);
            assert_relative_eq!(cap.g[0], 3.0, max_relative = 1e-12);
            assert!(cap.gap <= 1e-6, "gap {}", cap.gap);
        }
    }

    #[test]
    fn empty_set_and_bad_input() {
        let op = scalar();
        assert_eq!(cap_ap(&op, &[], 2.0, &CapacityOptions::default()).unwrap().value, 0.0);
        assert!(cap_ap(&op, &[0], 1.0, &CapacityOptions::default()).is_err());
        assert!(cap_ap(&op, &[3], 2.0, &CapacityOptions::default()).is_err());
    }

    #[test]
    fn two_point_chain_matches_grid_search() {
        let op = build_grid_operator::<f64>(1, 2, 1.0).unwrap();
        let cap = cap_ap(&op, &[0], 2.0, &CapacityOptions::default()).unwrap();
        let brute = brute_force_capacity(&op, &[0], 2.0, 1e-3).unwrap();
        assert_relative_eq!(cap.value, brute, max_relative = 1e-2);
        assert!(cap.value <= brute * (1.0 + 1e-9));
        assert!(cap.gap <= 1e-6, "gap {}", cap.gap);
        assert!(cap.eta[0] >= 1.0 - 1e-8);
    }

    #[test]
    fn scalar_dual_estimate() {
        let op = scalar();
        let mu = SignedMeasure::dirac(op.space(), 0, 4.0).unwrap();
        let est = vp_dual_estimate(&op, &mu, 2.0, &DualEstimateOptions::default()).unwrap();
        assert_relative_eq!(est.bound, 4.0 / 3.0, max_relative = 1e-10);
        let zero = SignedMeasure::zero(op.space());
        assert_eq!(vp_dual_estimate(&op, &zero, 2.0, &DualEstimateOptions::default()).unwrap().bound, 0.0);
    }

    #[test]
    fn serializes_four_fields() {
        let cap = cap_ap(&scalar(), &[0], 3.0, &CapacityOptions::default()).unwrap();
        let v = serde_json::to_value(&cap).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["eta", "g", "gap", "value"]);
    }
}
