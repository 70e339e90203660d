//! Monte Carlo simulation of the killed jump process generated by `A`.
//!
//! Every path draws from its own ChaCha8 stream keyed by `(seed, start,
//! path index)`, and paths are reduced in fixed-size chunks merged pairwise,
//! so results do not depend on the thread count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, LabError, Result};
use crate::measure::SignedMeasure;
use crate::nonlinearity::Nonlinearity;
use crate::operator::DirichletOperator;
use crate::scalar::{sup_norm, Scalar};
use crate::solver::fixed_point_residual;

const CHUNK: usize = 1024;
const KILLED: usize = usize::MAX;

/// Jump rates, holding rates and killing rates of the process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSpec {
    /// `(y, q(x,y))` with `q > 0`, per state `x`.
    pub jumps: Vec<Vec<(usize, f64)>>,
    /// `λ(x) = Σ_y q(x,y) + k(x)`.
    pub holding: Vec<f64>,
    pub killing: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<Vec<f64>>,
    #[serde(skip)]
    targets: Vec<Vec<usize>>,
}

impl ChainSpec {
    /// Reads the rates off a transient operator. Off-diagonal entries below
    /// zero (within validation tolerance) are treated as zero.
    pub fn from_operator<T: Scalar>(op: &DirichletOperator<T>) -> Result<Self> {
        let verdict = crate::operator::check_transient(op);
        if !verdict.transient {
            return Err(LabError::Transience(format!("the lifetime may be infinite: {}", verdict.reason)));
        }
        let n = op.len();
        let a = op.matrix();
        let mut jumps = Vec::with_capacity(n);
        let mut holding = Vec::with_capacity(n);
        let mut killing = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for x in 0..n {
            let row: Vec<(usize, f64)> =
                (0..n).filter(|&y| y != x).map(|y| (y, a[(x, y)].as_f64())).filter(|&(_, q)| q > 0.0).collect();
            let out: f64 = row.iter().map(|(_, q)| q).sum();
            let k = (-a[(x, x)].as_f64() - out).max(0.0);
            let mut cum = Vec::with_capacity(row.len() + 1);
            let mut tgt = Vec::with_capacity(row.len() + 1);
            let mut acc = 0.0;
            for &(y, q) in &row {
                acc += q;
                cum.push(acc);
                tgt.push(y);
            }
            if k > 0.0 {
                acc += k;
                cum.push(acc);
                tgt.push(KILLED);
            }
            holding.push(acc);
            killing.push(k);
            jumps.push(row);
            cumulative.push(cum);
            targets.push(tgt);
        }
        if let Some(x) = holding.iter().position(|&l| l <= 0.0) {
            return Err(LabError::Transience(format!("state {x} has no outgoing rate")));
        }
        Ok(Self { jumps, holding, killing, weights: op.weights().iter().map(|w| w.as_f64()).collect(), cumulative, targets })
    }

    pub fn len(&self) -> usize {
        self.holding.len()
    }

    pub fn is_empty(&self) -> bool {
        self.holding.is_empty()
    }

    /// `(Au)(x) = Σ_y q(x,y)(u(y) - u(x)) - k(x)u(x)`.
    pub fn generator_apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|x| self.jumps[x].iter().map(|&(y, q)| q * (u[y] - u[x])).sum::<f64>() - self.killing[x] * u[x])
            .collect()
    }

    /// Runs one path from `x0`, calling `segment(state, start_time, duration)`
    /// for every holding interval. Returns the lifetime.
    fn simulate(&self, x0: usize, rng: &mut ChaCha8Rng, mut segment: impl FnMut(usize, f64, f64)) -> f64 {
        let mut x = x0;
        let mut t = 0.0;
        loop {
            let rate = self.holding[x];
            let e: f64 = rng.sample(Exp1);
            let dt = e / rate;
            segment(x, t, dt);
            t += dt;
            let draw = rng.random::<f64>() * rate;
            let cum = &self.cumulative[x];
            let idx = cum.partition_point(|&c| c <= draw).min(cum.len() - 1);
            let next = self.targets[x][idx];
            if next == KILLED {
                return t;
            }
            x = next;
        }
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.count == 0.0 {
            return b;
        }
        if b.count == 0.0 {
            return a;
        }
        let count = a.count + b.count;
        let delta = b.mean - a.mean;
        Moments { count, mean: a.mean + delta * b.count / count, m2: a.m2 + b.m2 + delta * delta * a.count * b.count / count }
    }

    fn estimate(&self) -> Estimate {
        let stderr = if self.count > 1.0 { (self.m2 / (self.count - 1.0) / self.count).sqrt() } else { 0.0 };
        Estimate { mean: self.mean, stderr }
    }
}

fn merge_pairwise(mut level: Vec<Vec<Moments>>) -> Vec<Moments> {
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => a.iter().zip(b).map(|(x, y)| Moments::merge(*x, *y)).collect(),
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
    }
    level.pop().unwrap_or_default()
}

fn path_rng(seed: u64, start: usize, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((start as u64) << 40) | path as u64);
    rng
}

/// Simulates `paths` paths from `x0`; `observe` fills one observation vector
/// of length `width` per path.
fn run_paths<F>(spec: &ChainSpec, x0: usize, paths: usize, seed: u64, width: usize, observe: F) -> Vec<Moments>
where
    F: Fn(&ChainSpec, &mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let chunks = paths.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); width];
            let mut obs = vec![0.0; width];
            for path in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                obs.iter_mut().for_each(|o| *o = 0.0);
                let mut rng = path_rng(seed, x0, path);
                observe(spec, &mut rng, &mut obs);
                for (m, o) in acc.iter_mut().zip(&obs) {
                    m.push(*o);
                }
            }
            acc
        })
        .collect();
    merge_pairwise(per_chunk)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `(mean - reference) / stderr`; zero when both vanish.
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.mean - reference;
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    }

    pub fn within(&self, reference: f64, sigmas: f64) -> bool {
        self.z_score(reference).abs() <= sigmas
    }
}

/// Per-start-state estimates from one batch of simulations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    pub paths: usize,
    pub seed: u64,
    pub starts: Vec<usize>,
    /// `E_x ζ`.
    pub lifetime: Vec<Estimate>,
    /// `E_x ∫_0^ζ g(X_t) dt`.
    pub functional: Vec<Estimate>,
    /// `occupation[i][y] = E_{x_i} ∫_0^ζ 1_{y}(X_t) dt`.
    pub occupation: Vec<Vec<Estimate>>,
}

fn check_paths(spec: &ChainSpec, x0: usize, paths: usize) -> Result<()> {
    if paths < 100 {
        return invalid(format!("at least 100 paths are required, got {paths}"));
    }
    if x0 >= spec.len() {
        return invalid(format!("start state {x0} outside a space of {} states", spec.len()));
    }
    Ok(())
}

/// Lifetime, `∫ g` and occupation times from each start state.
pub fn path_stats(spec: &ChainSpec, g: &[f64], starts: &[usize], paths: usize, seed: u64) -> Result<PathStats> {
    let n = spec.len();
    if g.len() != n {
        return invalid(format!("g has length {}, expected {n}", g.len()));
    }
    let mut stats = PathStats { paths, seed, starts: starts.to_vec(), lifetime: vec![], functional: vec![], occupation: vec![] };
    for &x0 in starts {
        check_paths(spec, x0, paths)?;
        let moments = run_paths(spec, x0, paths, seed, n + 2, |spec, rng, obs| {
            let life = spec.simulate(x0, rng, |x, _, dt| {
                obs[1] += g[x] * dt;
                obs[2 + x] += dt;
            });
            obs[0] = life;
        });
        stats.lifetime.push(moments[0].estimate());
        stats.functional.push(moments[1].estimate());
        stats.occupation.push(moments[2..].iter().map(Moments::estimate).collect());
    }
    Ok(stats)
}

/// Estimate of `(Rg)(x0) = E_{x0} ∫_0^ζ g(X_t) dt`.
pub fn mc_potential(spec: &ChainSpec, g: &[f64], x0: usize, paths: usize, seed: u64) -> Result<Estimate> {
    check_paths(spec, x0, paths)?;
    if g.len() != spec.len() {
        return invalid(format!("g has length {}, expected {}", g.len(), spec.len()));
    }
    if g.iter().all(|v| *v == 0.0) {
        return Ok(Estimate { mean: 0.0, stderr: 0.0 });
    }
    let moments = run_paths(spec, x0, paths, seed, 1, |spec, rng, obs| {
        spec.simulate(x0, rng, |x, _, dt| obs[0] += g[x] * dt);
    });
    Ok(moments[0].estimate())
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryProbe {
    pub pairs: usize,
    pub within_three_sigma: usize,
    pub max_abs_z: f64,
    /// At least 99% of pairs agree within 3 standard errors.
    pub pass: bool,
}

/// Compares `r(x,y) = occ_x(y)/m(y)` against `r(y,x)` for all pairs.
pub fn kernel_symmetry_probe(stats: &PathStats, spec: &ChainSpec) -> Result<SymmetryProbe> {
    let n = spec.len();
    let index: Vec<Option<usize>> = (0..n).map(|x| stats.starts.iter().position(|&s| s == x)).collect();
    let (mut pairs, mut good, mut worst) = (0usize, 0usize, 0.0f64);
    for x in 0..n {
        for y in x + 1..n {
            let (Some(ix), Some(iy)) = (index[x], index[y]) else { continue };
            let a = stats.occupation[ix][y];
            let b = stats.occupation[iy][x];
            let (ra, sa) = (a.mean / spec.weights[y], a.stderr / spec.weights[y]);
            let (rb, sb) = (b.mean / spec.weights[x], b.stderr / spec.weights[x]);
            let se = (sa * sa + sb * sb).sqrt();
            let z = if se > 0.0 { (ra - rb) / se } else if ra == rb { 0.0 } else { f64::INFINITY };
            pairs += 1;
            if z.abs() <= 3.0 {
                good += 1;
            }
            worst = worst.max(z.abs());
        }
    }
    if pairs == 0 {
        return invalid("symmetry probe needs statistics from at least two start states");
    }
    Ok(SymmetryProbe { pairs, within_three_sigma: good, max_abs_z: worst, pass: good as f64 >= 0.99 * pairs as f64 })
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonCheck {
    pub t: f64,
    /// Sample mean of `u(X_{t∧ζ})`, with `u = 0` after killing. The stderr
    /// is floored at `‖u‖_∞ / paths`.
    pub estimate: Estimate,
    /// `(e^{tA}u)(x0)`.
    pub semigroup: f64,
    pub z_semigroup: f64,
    pub z_zero: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionCheck {
    pub start: usize,
    pub paths: usize,
    pub seed: u64,
    pub u_start: f64,
    /// `E_{x0} ∫_0^ζ (f(·,u) + dμ/dm)(X_t) dt`.
    pub representation: Estimate,
    pub z_representation: f64,
    pub representation_pass: bool,
    pub mean_lifetime: f64,
    pub horizons: Vec<HorizonCheck>,
    /// Agreement with the semigroup at every horizon, and at the last horizon
    /// a mean within 3 standard errors of zero once the finite-horizon
    /// remainder `|e^{TA}u|(x0)` is allowed for.
    pub decay_pass: bool,
    pub notes: Vec<String>,
}

impl SolutionCheck {
    pub fn pass(&self) -> bool {
        self.representation_pass && self.decay_pass
    }
}

#[derive(Debug, Clone)]
pub struct McOptions {
    pub paths: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { paths: 100_000, seed: 20_240_917 }
    }
}

/// Probabilistic representation of a solution of `-Au = f(u) + μ` and the
/// deterministic-horizon decay surrogate.
pub fn mc_solution_check<T: Scalar>(
    op: &DirichletOperator<T>,
    u: &DVector<T>,
    f: &Nonlinearity<T>,
    mu: &SignedMeasure<T>,
    x0: usize,
    opts: &McOptions,
) -> Result<SolutionCheck> {
    op.check_len(u, "u")?;
    mu.check_space(op.space())?;
    let rmu = op.potential_atoms(mu.atoms())?;
    let residual = fixed_point_residual(op, f, mu, u)?;
    let allowed = T::lit(1e-8).max(T::default_epsilon() * T::lit(1e4)) * (T::one() + sup_norm(rmu.as_slice()));
    if residual > allowed {
        return invalid(format!("u does not solve the problem (residual {residual:e})"));
    }
    let spec = ChainSpec::from_operator(op)?;
    check_paths(&spec, x0, opts.paths)?;
    let w = op.weights();
    let integrand: Vec<f64> = (0..op.len()).map(|x| (f.eval(x, u[x]) + mu.atoms()[x] / w[x]).as_f64()).collect();
    let u64v: Vec<f64> = u.iter().map(|v| v.as_f64()).collect();

    let mean_lifetime = op.r1()?[x0].as_f64();
    let big_t = 10.0 * mean_lifetime;
    let times = [big_t / 4.0, big_t / 2.0, big_t];
    let moments = run_paths(&spec, x0, opts.paths, opts.seed, 1 + times.len(), |spec, rng, obs| {
        spec.simulate(x0, rng, |x, t0, dt| {
            obs[0] += integrand[x] * dt;
            for (k, &t) in times.iter().enumerate() {
                if t0 <= t && t < t0 + dt {
                    obs[1 + k] = u64v[x];
                }
            }
        });
    });
    let representation = moments[0].estimate();
    let u_start = u[x0].as_f64();
    let z_representation = representation.z_score(u_start);
    let mut horizons = Vec::with_capacity(times.len());
    let mut decay_pass = true;
    // a horizon no path survives has zero sample variance; one path's
    // contribution is the resolution of the estimate
    let resolution = u64v.iter().fold(0.0f64, |a, v| a.max(v.abs())) / opts.paths as f64;
    for (k, &t) in times.iter().enumerate() {
        let mut estimate = moments[1 + k].estimate();
        estimate.stderr = estimate.stderr.max(resolution);
        let semigroup = op.semigroup_apply(T::lit(t), u)?[x0].as_f64();
        let check = HorizonCheck { t, estimate, semigroup, z_semigroup: estimate.z_score(semigroup), z_zero: estimate.z_score(0.0) };
        decay_pass &= check.z_semigroup.abs() <= 3.0 + 1e-9;
        horizons.push(check);
    }
    if let Some(last) = horizons.last() {
        let abs_remainder = op.semigroup_apply(T::lit(big_t), &u.abs())?[x0].as_f64();
        decay_pass &= last.estimate.mean.abs() <= 3.0 * last.estimate.stderr + abs_remainder;
    }
    let notes = vec![
        "decay is tested at deterministic horizons t∧ζ; this is a surrogate for arbitrary stopping-time sequences, not an equivalent"
            .to_string(),
        "on a finite space the concentrated part vanishes, so the decay target is 0".to_string(),
    ];
    Ok(SolutionCheck {
        start: x0,
        paths: opts.paths,
        seed: opts.seed,
        u_start,
        representation,
        z_representation,
        representation_pass: z_representation.abs() <= 3.0,
        mean_lifetime,
        horizons,
        decay_pass,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_grid_operator, StateSpace};
    use nalgebra::DMatrix;

    fn scalar() -> DirichletOperator<f64> {
        DirichletOperator::new(StateSpace::uniform(1, 1.0).unwrap(), DMatrix::from_element(1, 1, -2.0)).unwrap()
    }

    #[test]
    fn scalar_lifetime() {
        let spec = ChainSpec::from_operator(&scalar()).unwrap();
        assert_eq!(spec.killing, vec![2.0]);
        let est = mc_potential(&spec, &[1.0], 0, 20_000, 7).unwrap();
        assert!(est.within(0.5, 3.0), "{est:?}");
        assert_eq!(mc_potential(&spec, &[0.0], 0, 1000, 7).unwrap(), Estimate { mean: 0.0, stderr: 0.0 });
        assert!(mc_potential(&spec, &[1.0], 0, 10, 7).is_err());
    }

    #[test]
    fn two_point_chain_lifetime() {
        let op = build_grid_operator::<f64>(1, 2, 1.0).unwrap();
        let spec = ChainSpec::from_operator(&op).unwrap();
        assert_eq!(spec.holding, vec![2.0, 2.0]);
        let est = mc_potential(&spec, &[1.0, 1.0], 0, 20_000, 3).unwrap();
        assert!(est.within(1.0, 3.0), "{est:?}");
    }

    #[test]
    fn reproducible_bits() {
        let op = build_grid_operator::<f64>(1, 6, 0.2).unwrap();
        let spec = ChainSpec::from_operator(&op).unwrap();
        let g = vec![1.0, 0.5, 0.0, 2.0, 1.0, 0.25];
        let a = path_stats(&spec, &g, &[0, 3], 3000, 11).unwrap();
        let b = path_stats(&spec, &g, &[0, 3], 3000, 11).unwrap();
        assert_eq!(a, b);
        let c = path_stats(&spec, &g, &[0, 3], 3000, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_recurrent_operator() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let op = DirichletOperator::new(StateSpace::uniform(2, 1.0).unwrap(), a).unwrap();
        assert!(matches!(ChainSpec::from_operator(&op), Err(LabError::Transience(_))));
    }

    #[test]
    fn generator_matches_matrix() {
        let op = build_grid_operator::<f64>(2, 3, 0.5).unwrap();
        let spec = ChainSpec::from_operator(&op).unwrap();
        let u: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let direct = op.matrix() * DVector::from_vec(u.clone());
        for (a, b) in spec.generator_apply(&u).iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_solution_representation() {
        let op = scalar();
        let f = Nonlinearity::power(1.0, 3.0).unwrap();
        let mu = SignedMeasure::dirac(op.space(), 0, 12.0).unwrap();
        let u = DVector::from_element(1, 2.0);
        let check = mc_solution_check(&op, &u, &f, &mu, 0, &McOptions { paths: 20_000, seed: 5 }).unwrap();
        assert!(check.pass(), "{check:?}");
        let bad = DVector::from_element(1, 2.5);
        assert!(mc_solution_check(&op, &bad, &f, &mu, 0, &McOptions { paths: 1000, seed: 5 }).is_err());
    }
}
