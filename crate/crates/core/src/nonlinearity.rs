//! Monotone absorption terms `f(x, u)`.
//!
//! Every nonlinearity vanishes for `u ≤ 0` and is written as
//! `f(x, y) = w(x)·φ(y)`, optionally truncated from below at `-n`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum NonlinearityKind<T: Scalar> {
    Zero,
    /// `φ(y) = -c·y^p` for `y > 0`.
    Power { c: T, p: T },
    /// `φ(y) = -c1·(e^{c2 y} - 1)` for `y > 0`.
    Exponential { c1: T, c2: T },
    /// Piecewise-linear through `(y_i, f_i)`, constant beyond the last knot.
    /// `(0, 0)` is prepended when the first knot lies right of the origin.
    Tabulated { ys: Vec<T>, fs: Vec<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Nonlinearity<T: Scalar> {
    pub kind: NonlinearityKind<T>,
    /// Per-state multiplier `w(x) ≥ 0`.
    pub multiplier: Option<Vec<T>>,
    /// Truncation level `n` of `f ∨ (-n)`.
    pub truncation: Option<T>,
}

impl<T: Scalar> Nonlinearity<T> {
    pub fn zero() -> Self {
        Self { kind: NonlinearityKind::Zero, multiplier: None, truncation: None }
    }

    /// `f(u) = -c·u^p` for `u ≥ 0`.
    pub fn power(c: T, p: T) -> Result<Self> {
        if c < T::zero() || p <= T::one() {
            return invalid(format!("power nonlinearity needs c ≥ 0 and p > 1, got c = {c}, p = {p}"));
        }
        Ok(Self { kind: NonlinearityKind::Power { c, p }, multiplier: None, truncation: None })
    }

    pub fn exponential(c1: T, c2: T) -> Result<Self> {
        if c1 < T::zero() || c2 < T::zero() {
            return invalid("exponential nonlinearity needs nonnegative coefficients");
        }
        Ok(Self { kind: NonlinearityKind::Exponential { c1, c2 }, multiplier: None, truncation: None })
    }

    /// Raw table; monotonicity is not enforced here (see [`Nonlinearity::prepared`]).
    pub fn tabulated(ys: Vec<T>, fs: Vec<T>) -> Result<Self> {
        if ys.is_empty() || ys.len() != fs.len() {
            return invalid("table needs matching, nonempty abscissae and values");
        }
        if ys[0] < T::zero() || ys.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("table abscissae must be nonnegative and strictly increasing");
        }
        Ok(Self { kind: NonlinearityKind::Tabulated { ys, fs }, multiplier: None, truncation: None })
    }

    pub fn with_multiplier(mut self, w: Vec<T>) -> Result<Self> {
        if w.iter().any(|x| *x < T::zero() || !x.is_finite()) {
            return invalid("multiplier must be finite and nonnegative");
        }
        self.multiplier = Some(w);
        Ok(self)
    }

    /// `f_n = f ∨ (-n)`.
    pub fn truncated(&self, n: T) -> Self {
        let level = match self.truncation {
            Some(t) => t.min(n),
            None => n,
        };
        Self { truncation: Some(level), ..self.clone() }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            NonlinearityKind::Zero => true,
            NonlinearityKind::Power { c, .. } => *c == T::zero(),
            NonlinearityKind::Exponential { c1, c2 } => *c1 == T::zero() || *c2 == T::zero(),
            NonlinearityKind::Tabulated { fs, .. } => fs.iter().all(|f| *f == T::zero()),
        }
    }

    /// Copy suitable for the solvers: tables are monotonized by a cumulative minimum.
    pub fn prepared(&self) -> Self {
        let mut out = self.clone();
        if let NonlinearityKind::Tabulated { fs, .. } = &mut out.kind {
            let mut running = T::zero();
            for f in fs.iter_mut() {
                running = running.min(*f);
                *f = running;
            }
        }
        out
    }

    fn weight(&self, x: usize) -> T {
        match &self.multiplier {
            Some(w) => w.get(x).copied().unwrap_or(T::one()),
            None => T::one(),
        }
    }

    /// Knots including the implicit origin.
    fn knots(ys: &[T], fs: &[T]) -> (Vec<T>, Vec<T>) {
        if ys[0] > T::zero() {
            let mut ky = vec![T::zero()];
            ky.extend_from_slice(ys);
            let mut kf = vec![T::zero()];
            kf.extend_from_slice(fs);
            (ky, kf)
        } else {
            (ys.to_vec(), fs.to_vec())
        }
    }

    /// Untruncated profile `φ(y)`.
    fn profile(&self, y: T) -> T {
        if y <= T::zero() {
            return T::zero();
        }
        match &self.kind {
            NonlinearityKind::Zero => T::zero(),
            NonlinearityKind::Power { c, p } => -*c * y.powf(*p),
            NonlinearityKind::Exponential { c1, c2 } => -*c1 * ((*c2 * y).exp() - T::one()),
            NonlinearityKind::Tabulated { ys, fs } => {
                let (ky, kf) = Self::knots(ys, fs);
                let last = ky.len() - 1;
                if y >= ky[last] {
                    return kf[last];
                }
                let k = ky.partition_point(|v| *v <= y) - 1;
                let t = (y - ky[k]) / (ky[k + 1] - ky[k]);
                kf[k] + t * (kf[k + 1] - kf[k])
            }
        }
    }

    /// Right derivative of `φ`.
    fn profile_slope(&self, y: T) -> T {
        if y < T::zero() {
            return T::zero();
        }
        match &self.kind {
            NonlinearityKind::Zero => T::zero(),
            NonlinearityKind::Power { c, p } => -*c * *p * y.powf(*p - T::one()),
            NonlinearityKind::Exponential { c1, c2 } => -*c1 * *c2 * (*c2 * y).exp(),
            NonlinearityKind::Tabulated { ys, fs } => {
                let (ky, kf) = Self::knots(ys, fs);
                let last = ky.len() - 1;
                if y >= ky[last] {
                    return T::zero();
                }
                let k = ky.partition_point(|v| *v <= y) - 1;
                (kf[k + 1] - kf[k]) / (ky[k + 1] - ky[k])
            }
        }
    }

    /// `Φ(y) = ∫_0^y φ`.
    fn profile_integral(&self, y: T) -> T {
        if y <= T::zero() {
            return T::zero();
        }
        match &self.kind {
            NonlinearityKind::Zero => T::zero(),
            NonlinearityKind::Power { c, p } => -*c * y.powf(*p + T::one()) / (*p + T::one()),
            NonlinearityKind::Exponential { c1, c2 } => {
                if *c2 == T::zero() {
                    T::zero()
                } else {
                    -*c1 * (((*c2 * y).exp() - T::one()) / *c2 - y)
                }
            }
            NonlinearityKind::Tabulated { ys, fs } => {
                let (ky, kf) = Self::knots(ys, fs);
                let half = T::lit(0.5);
                let mut acc = T::zero();
                for k in 0..ky.len() - 1 {
                    if y <= ky[k] {
                        return acc;
                    }
                    let right = y.min(ky[k + 1]);
                    let f_right = self.profile(right);
                    acc += (kf[k] + f_right) * half * (right - ky[k]);
                }
                let last = ky.len() - 1;
                if y > ky[last] {
                    acc += kf[last] * (y - ky[last]);
                }
                acc
            }
        }
    }

    /// Smallest `y` with `w·φ(y) ≤ -n`, or `None` if never reached.
    fn crossing(&self, w: T, n: T) -> Option<T> {
        if w == T::zero() {
            return None;
        }
        let level = n / w;
        match &self.kind {
            NonlinearityKind::Zero => None,
            NonlinearityKind::Power { c, p } => {
                if *c == T::zero() {
                    None
                } else {
                    Some((level / *c).powf(T::one() / *p))
                }
            }
            NonlinearityKind::Exponential { c1, c2 } => {
                if *c1 == T::zero() || *c2 == T::zero() {
                    None
                } else {
                    Some((T::one() + level / *c1).ln() / *c2)
                }
            }
            NonlinearityKind::Tabulated { ys, fs } => {
                let (ky, kf) = Self::knots(ys, fs);
                if kf[0] <= -level {
                    return Some(ky[0]);
                }
                for k in 0..ky.len() - 1 {
                    if kf[k + 1] <= -level {
                        let t = (-level - kf[k]) / (kf[k + 1] - kf[k]);
                        return Some(ky[k] + t * (ky[k + 1] - ky[k]));
                    }
                }
                None
            }
        }
    }

    /// `f(x, y)`.
    pub fn eval(&self, x: usize, y: T) -> T {
        let v = self.weight(x) * self.profile(y);
        match self.truncation {
            Some(n) => v.max(-n),
            None => v,
        }
    }

    /// `f_u = f(·, u(·))`.
    pub fn eval_vec(&self, u: &DVector<T>) -> DVector<T> {
        DVector::from_fn(u.len(), |i, _| self.eval(i, u[i]))
    }

    /// Element of the generalized derivative `∂f/∂y` (right-sided at kinks).
    pub fn slope(&self, x: usize, y: T) -> T {
        if let Some(n) = self.truncation {
            if self.weight(x) * self.profile(y) <= -n {
                return T::zero();
            }
        }
        self.weight(x) * self.profile_slope(y)
    }

    /// `F(x, y) = ∫_0^y f(x, s) ds`, exact for every kind including truncation.
    pub fn antiderivative(&self, x: usize, y: T) -> T {
        let w = self.weight(x);
        match self.truncation.and_then(|n| self.crossing(w, n).map(|c| (n, c))) {
            Some((n, c)) if y > c => w * self.profile_integral(c) - n * (y - c),
            _ => w * self.profile_integral(y),
        }
    }

    /// `sup_{x,y} |f(x,y)|` when finite.
    pub fn bound(&self) -> Option<T> {
        let wmax = self.multiplier.as_ref().map(|w| w.iter().fold(T::zero(), |a, b| a.max(*b))).unwrap_or(T::one());
        let intrinsic = match &self.kind {
            NonlinearityKind::Zero => Some(T::zero()),
            NonlinearityKind::Tabulated { fs, .. } => Some(fs.iter().fold(T::zero(), |a, f| a.max(f.abs())) * wmax),
            _ if self.is_zero() => Some(T::zero()),
            _ => None,
        };
        match (intrinsic, self.truncation) {
            (Some(b), Some(n)) => Some(b.min(n)),
            (Some(b), None) => Some(b),
            (None, Some(n)) => Some(n),
            (None, None) => None,
        }
    }

    /// `max_x |f(x, y)|` over `n_states` states.
    pub fn magnitude_at(&self, n_states: usize, y: T) -> T {
        (0..n_states).fold(T::zero(), |a, x| a.max(self.eval(x, y).abs()))
    }
}

/// Sample points for [`validate_nonlinearity`].
#[derive(Debug, Clone)]
pub struct ProbeSet<T> {
    pub states: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> ProbeSet<T> {
    /// Evenly spaced values on `[lo, hi]` for the given states.
    pub fn linspace(states: Vec<usize>, lo: T, hi: T, count: usize) -> Self {
        let count = count.max(2);
        let step = (hi - lo) / T::from_usize_lossy(count - 1);
        let values = (0..count).map(|k| lo + step * T::from_usize_lossy(k)).collect();
        Self { states, values }
    }
}

/// A pair of probe points violating monotonicity.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityWitness {
    pub state: usize,
    pub y_low: f64,
    pub y_high: f64,
    pub f_low: f64,
    pub f_high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NonlinearityReport {
    pub vanishes_for_nonpositive: bool,
    /// (H1): nonincreasing in `y`.
    pub h1_monotone: bool,
    pub h1_witness: Option<MonotonicityWitness>,
    pub continuous: bool,
    /// Location of the worst jump found by finite differences.
    pub continuity_witness: Option<(usize, f64)>,
    /// (H2), (H3): integrability, automatic on a finite space.
    pub h2_h3: bool,
    /// (H4): uniform bound `|f| ≤ g`.
    pub h4_bounded: bool,
    pub h4_bound: Option<f64>,
    pub probe_max_magnitude: f64,
}

impl NonlinearityReport {
    pub fn admissible(&self) -> bool {
        self.vanishes_for_nonpositive && self.h1_monotone && self.continuous
    }
}

/// Checks the standing assumptions on a probe set.
pub fn validate_nonlinearity<T: Scalar>(f: &Nonlinearity<T>, probe: &ProbeSet<T>) -> Result<NonlinearityReport> {
    if probe.states.is_empty() || probe.values.is_empty() {
        return invalid("probe set must be nonempty");
    }
    let mut ys = probe.values.clone();
    if let NonlinearityKind::Tabulated { ys: knots, .. } = &f.kind {
        ys.extend_from_slice(knots);
    }
    ys.push(T::zero());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ys.dedup();

    let mut vanishes = true;
    let mut witness = None;
    let mut continuity_witness: Option<(usize, f64)> = None;
    let mut worst_jump = T::zero();
    let mut max_mag = T::zero();
    let mono_slack = T::default_epsilon() * T::lit(8.0);
    for &x in &probe.states {
        for y in ys.iter().filter(|y| **y <= T::zero()) {
            if f.eval(x, *y) != T::zero() {
                vanishes = false;
            }
        }
        for v in [-T::one(), -T::lit(1e-3)] {
            if f.eval(x, v) != T::zero() {
                vanishes = false;
            }
        }
        for pair in ys.windows(2) {
            let (a, b) = (f.eval(x, pair[0]), f.eval(x, pair[1]));
            max_mag = max_mag.max(a.abs()).max(b.abs());
            if b > a + mono_slack * (T::one() + a.abs()) && witness.is_none() {
                witness = Some(MonotonicityWitness {
                    state: x,
                    y_low: pair[0].as_f64(),
                    y_high: pair[1].as_f64(),
                    f_low: a.as_f64(),
                    f_high: b.as_f64(),
                });
            }
        }
        for &y in &ys {
            let delta = T::lit(1e-9) * (T::one() + y.abs());
            let fy = f.eval(x, y);
            let jump = (f.eval(x, y + delta) - fy).abs().max((fy - f.eval(x, y - delta)).abs());
            let allowed = T::lit(1e-6) * (T::one() + fy.abs());
            if jump > allowed && jump > worst_jump {
                worst_jump = jump;
                continuity_witness = Some((x, y.as_f64()));
            }
        }
    }
    let bound = f.bound();
    Ok(NonlinearityReport {
        vanishes_for_nonpositive: vanishes,
        h1_monotone: witness.is_none(),
        h1_witness: witness,
        continuous: continuity_witness.is_none(),
        continuity_witness,
        h2_h3: true,
        h4_bounded: bound.is_some(),
        h4_bound: bound.map(|b| b.as_f64()),
        probe_max_magnitude: max_mag.as_f64(),
    })
}
