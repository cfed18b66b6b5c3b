//! Euler-Maruyama simulation of `dX = b(X,t) dt + √2 dW`, empirical densities
//! and the short-time moment estimators of a diffusion.

use rayon::prelude::*;
use serde::Serialize;

use crate::bridge::{BridgeSolution, TransitionDensity};
use crate::error::{Error, Result};
use crate::grid::{Grid, Profile, TimeGrid};
use crate::kernel::path_rng;
use crate::scalar::{pairwise_sum, Scalar};

/// A drift field `b(x, t)`.
pub trait Drift<S>: Sync {
    fn eval(&self, x: S, t: S) -> S;
}

impl<S, F> Drift<S> for F
where
    F: Fn(S, S) -> S + Sync,
{
    fn eval(&self, x: S, t: S) -> S {
        self(x, t)
    }
}

/// Drift stored on time slices, bilinear in `(x, t)`; clamped outside the
/// grid and the time window.
#[derive(Debug, Clone)]
pub struct SlicedDrift<S> {
    times: Vec<S>,
    slices: Vec<Profile<S>>,
}

impl<S: Scalar> SlicedDrift<S> {
    pub fn new(times: Vec<S>, slices: Vec<Profile<S>>) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::LengthMismatch { len: slices.len(), n: times.len() });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("drift slice times must increase".into()));
        }
        let grid = *slices[0].grid();
        if slices.iter().any(|p| p.grid() != &grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { times, slices })
    }

    pub fn from_solution(sol: &BridgeSolution<S>) -> Result<Self> {
        Self::new(sol.times.clone(), sol.drift.clone())
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }
}

impl<S: Scalar> Drift<S> for SlicedDrift<S> {
    fn eval(&self, x: S, t: S) -> S {
        let m = self.times.len();
        if m == 1 || t <= self.times[0] {
            return self.slices[0].interpolate(x);
        }
        if t >= self.times[m - 1] {
            return self.slices[m - 1].interpolate(x);
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (a, b) = (self.times[k], self.times[k + 1]);
        let u = (t - a) / (b - a);
        let lo = self.slices[k].interpolate(x);
        let hi = self.slices[k + 1].interpolate(x);
        lo + (hi - lo) * u
    }
}

/// Sampling from a piecewise-linear density by exact inversion of its
/// trapezoid CDF.
#[derive(Debug, Clone)]
pub struct InverseCdf<S> {
    grid: Grid<S>,
    values: Vec<S>,
    cumulative: Vec<S>,
}

impl<S: Scalar> InverseCdf<S> {
    pub fn new(rho: &Profile<S>) -> Result<Self> {
        if let Some((index, v)) = rho.values().iter().enumerate().find(|(_, v)| !(**v >= S::zero())) {
            return Err(Error::NegativeValue { index, value: v.as_f64() });
        }
        let grid = *rho.grid();
        let h = grid.spacing();
        let v = rho.values();
        let mut cumulative = Vec::with_capacity(v.len());
        let mut acc = S::zero();
        cumulative.push(acc);
        for i in 0..v.len() - 1 {
            acc += h * (v[i] + v[i + 1]) / S::lit(2.0);
            cumulative.push(acc);
        }
        if !(acc > S::zero()) {
            return Err(Error::NonPositiveMass(acc.as_f64()));
        }
        Ok(Self { grid, values: v.to_vec(), cumulative })
    }

    /// Position whose CDF equals `u ∈ [0, 1)`.
    pub fn sample(&self, u: S) -> S {
        let total = *self.cumulative.last().expect("non-empty");
        let target = u * total;
        let i = self.cumulative.partition_point(|&c| c <= target).clamp(1, self.cumulative.len() - 1) - 1;
        let h = self.grid.spacing();
        let (a, b) = (self.values[i], self.values[i + 1]);
        let r = target - self.cumulative[i];
        // a s + (b - a) s²/(2h) = r on s ∈ [0, h]
        let slope = (b - a) / h;
        let s = if slope.abs() <= S::lit(1e-12) * (a.abs() + b.abs()) / h {
            if a > S::zero() {
                r / a
            } else {
                S::zero()
            }
        } else {
            let disc = (a * a + S::lit(2.0) * slope * r).max(S::zero());
            // numerically stable root of the quadratic
            S::lit(2.0) * r / (a + disc.sqrt())
        };
        self.grid.node(i) + s.max(S::zero()).min(h)
    }
}

/// Time-step guard around a node the exact process never reaches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeGuard<S> {
    pub position: S,
    /// Proposed steps landing within this distance of the node are refined.
    pub delta: S,
    pub max_halvings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig<S> {
    pub n_paths: usize,
    pub dt: S,
    pub seed: u64,
    /// Paths leaving this open interval are absorbed and frozen.
    pub domain: (S, S),
    /// Times at which positions are recorded; spans the simulated window.
    pub record: TimeGrid<S>,
    pub guard: Option<NodeGuard<S>>,
}

/// Recorded positions of every path at the slices of `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<S> {
    pub n_paths: usize,
    pub times: TimeGrid<S>,
    /// Path-major: `positions[p * m + k]`.
    pub positions: Vec<S>,
    pub seed: u64,
    pub n_absorbed: usize,
    /// Slice index at which each path was first recorded as absorbed.
    pub absorbed_at: Vec<Option<usize>>,
    /// Paths whose guarded step failed after all halvings.
    pub n_flagged: usize,
    /// Paths that ended on the other side of the guarded node.
    pub n_crossed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceSummary<S> {
    pub t: S,
    pub mean: S,
    pub var: S,
    pub n_absorbed: usize,
}

impl<S: Scalar> PathEnsemble<S> {
    pub fn n_slices(&self) -> usize {
        self.times.len()
    }

    pub fn position(&self, path: usize, slice: usize) -> S {
        self.positions[path * self.times.len() + slice]
    }

    /// Positions at slice `k` of the paths still alive there.
    pub fn alive_at(&self, k: usize) -> Vec<S> {
        (0..self.n_paths)
            .filter(|&p| self.absorbed_at[p].is_none_or(|a| a > k))
            .map(|p| self.position(p, k))
            .collect()
    }

    pub fn slice_of(&self, t: S) -> Result<usize> {
        self.times.slice_index(t).ok_or_else(|| Error::TimeOutOfWindow {
            t: t.as_f64(),
            t0: self.times.t0().as_f64(),
            t1: self.times.t1().as_f64(),
        })
    }

    /// Mean and unbiased variance of the live paths per slice.
    pub fn summary(&self) -> Vec<SliceSummary<S>> {
        (0..self.n_slices())
            .map(|k| {
                let xs = self.alive_at(k);
                let n_absorbed = self.n_paths - xs.len();
                let (mean, var) = mean_var(&xs);
                SliceSummary { t: self.times.time(k), mean, var, n_absorbed }
            })
            .collect()
    }
}

/// Mean and unbiased variance by pairwise summation.
pub fn mean_var<S: Scalar>(xs: &[S]) -> (S, S) {
    if xs.is_empty() {
        return (S::nan(), S::nan());
    }
    let n = S::lit(xs.len() as f64);
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, S::zero());
    }
    let sq: Vec<S> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    (mean, pairwise_sum(&sq) / (n - S::one()))
}

fn validate_config<S: Scalar>(cfg: &SimulationConfig<S>) -> Result<usize> {
    if !(cfg.dt > S::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", cfg.dt)));
    }
    if cfg.n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    let span = cfg.record.t1() - cfg.record.t0();
    if cfg.dt > span / S::lit(100.0) * S::lit(1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("dt = {} exceeds (t1 - t0)/100", cfg.dt)));
    }
    let per_slice = cfg.record.step() / cfg.dt;
    let steps = per_slice.round();
    if (per_slice - steps).abs() > S::lit(1e-6) * steps || steps < S::one() {
        return Err(Error::InvalidArgument(format!(
            "dt = {} does not divide the recording step {}",
            cfg.dt,
            cfg.record.step()
        )));
    }
    if !(cfg.domain.0 < cfg.domain.1) {
        return Err(Error::InvalidArgument("empty simulation domain".into()));
    }
    Ok(steps.to_usize().unwrap_or(1))
}

/// Simulates paths with initial positions drawn from `rho0` by inverse CDF.
pub fn simulate_paths<S: Scalar, D: Drift<S>>(drift: &D, rho0: &Profile<S>, cfg: &SimulationConfig<S>) -> Result<PathEnsemble<S>> {
    let mass = rho0.integral();
    if (mass - S::one()).abs() > S::lit(1e-6) {
        return Err(Error::InvalidArgument(format!("rho0 integrates to {mass}, expected 1")));
    }
    let inv = InverseCdf::new(rho0)?;
    simulate_with(drift, cfg, |rng| inv.sample(S::unit_uniform(rng)))
}

/// Simulates paths all started at `x0`.
pub fn simulate_from_point<S: Scalar, D: Drift<S>>(drift: &D, x0: S, cfg: &SimulationConfig<S>) -> Result<PathEnsemble<S>> {
    simulate_with(drift, cfg, |_| x0)
}

struct PathState {
    flagged: bool,
}

fn simulate_with<S, D, F>(drift: &D, cfg: &SimulationConfig<S>, start: F) -> Result<PathEnsemble<S>>
where
    S: Scalar,
    D: Drift<S>,
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> S + Sync,
{
    let per_slice = validate_config(cfg)?;
    let m = cfg.record.len();
    let dt = cfg.record.step() / S::lit(per_slice as f64);
    let (lo, hi) = cfg.domain;
    let results: Vec<(Vec<S>, Option<usize>, bool, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut x = start(&mut rng);
            let side = cfg.guard.map(|g| (x - g.position).signum());
            let mut state = PathState { flagged: false };
            let mut rec = Vec::with_capacity(m);
            let mut absorbed = if x > lo && x < hi { None } else { Some(0) };
            rec.push(x);
            for k in 1..m {
                if absorbed.is_none() {
                    let t_start = cfg.record.time(k - 1);
                    for j in 0..per_slice {
                        let t = t_start + S::lit(j as f64) * dt;
                        x = match cfg.guard {
                            Some(g) => guarded_step(drift, x, t, dt, g, 0, &mut rng, &mut state),
                            None => em_step(drift, x, t, dt, &mut rng),
                        };
                        if !(x > lo && x < hi) {
                            absorbed = Some(k);
                            break;
                        }
                    }
                }
                rec.push(x);
            }
            let crossed = match (cfg.guard, side) {
                (Some(g), Some(s)) => absorbed.is_none() && (x - g.position).signum() != s,
                _ => false,
            };
            (rec, absorbed, state.flagged, crossed)
        })
        .collect();
    let n_absorbed = results.iter().filter(|r| r.1.is_some()).count();
    let n_flagged = results.iter().filter(|r| r.2).count();
    let n_crossed = results.iter().filter(|r| r.3).count();
    if n_flagged > 0 {
        log::warn!("{n_flagged} of {} paths exhausted the node guard", cfg.n_paths);
    }
    let absorbed_at = results.iter().map(|r| r.1).collect();
    let positions = results.into_iter().flat_map(|r| r.0).collect();
    Ok(PathEnsemble {
        n_paths: cfg.n_paths,
        times: cfg.record,
        positions,
        seed: cfg.seed,
        n_absorbed,
        absorbed_at,
        n_flagged,
        n_crossed,
    })
}

#[inline]
fn em_step<S: Scalar, D: Drift<S>>(drift: &D, x: S, t: S, dt: S, rng: &mut rand_chacha::ChaCha8Rng) -> S {
    x + drift.eval(x, t) * dt + (S::lit(2.0) * dt).sqrt() * S::standard_normal(rng)
}

/// Advances over `[t, t + dt]`, splitting the interval in halves whenever a
/// proposed step crosses the node or lands within `delta` of it.
#[allow(clippy::too_many_arguments)]
fn guarded_step<S: Scalar, D: Drift<S>>(
    drift: &D,
    x: S,
    t: S,
    dt: S,
    g: NodeGuard<S>,
    depth: u32,
    rng: &mut rand_chacha::ChaCha8Rng,
    state: &mut PathState,
) -> S {
    let y = em_step(drift, x, t, dt, rng);
    let crosses = (x - g.position) * (y - g.position) <= S::zero();
    if !crosses && (y - g.position).abs() >= g.delta {
        return y;
    }
    if depth >= g.max_halvings {
        state.flagged = true;
        return x;
    }
    let half = dt / S::lit(2.0);
    let mid = guarded_step(drift, x, t, half, g, depth + 1, rng, state);
    guarded_step(drift, mid, t + half, half, g, depth + 1, rng, state)
}

/// Linear binning onto `grid` followed by Gaussian smoothing with standard
/// deviation `bandwidth`; `bandwidth <= 0` selects Silverman's rule. The result
/// is normalized.
pub fn empirical_density<S: Scalar>(ens: &PathEnsemble<S>, t: S, grid: &Grid<S>, bandwidth: S) -> Result<Profile<S>> {
    let k = ens.slice_of(t)?;
    let xs = ens.alive_at(k);
    density_from_samples(&xs, grid, bandwidth, t)
}

pub fn density_from_samples<S: Scalar>(xs: &[S], grid: &Grid<S>, bandwidth: S, time: S) -> Result<Profile<S>> {
    let n = grid.len();
    let h = grid.spacing();
    let mut counts = vec![S::zero(); n];
    for &x in xs {
        if !grid.contains(x) {
            continue;
        }
        let (i, s) = grid.locate(x);
        counts[i] += S::one() - s;
        counts[i + 1] += s;
    }
    let total: S = counts.iter().copied().sum();
    if !(total > S::zero()) {
        return Err(Error::NonPositiveMass(0.0));
    }
    let bw = if bandwidth > S::zero() {
        bandwidth
    } else {
        let (_, var) = mean_var(xs);
        S::lit(1.06) * var.sqrt() * S::lit(xs.len() as f64).powf(S::lit(-0.2))
    };
    let w = grid.weights();
    // binned masses as nodal densities
    let raw: Vec<S> = counts.iter().zip(&w).map(|(&c, &w)| c / w).collect();
    let values: Vec<S> = if bw <= h / S::lit(4.0) {
        raw
    } else {
        let reach = (S::lit(8.0) * bw / h).ceil().to_usize().unwrap_or(n);
        let norm = S::one() / (S::lit(2.0) * S::PI()).sqrt() / bw;
        (0..n)
            .into_par_iter()
            .map(|j| {
                let lo = j.saturating_sub(reach);
                let hi = (j + reach).min(n - 1);
                let mut acc = S::zero();
                for i in lo..=hi {
                    if counts[i] == S::zero() {
                        continue;
                    }
                    let d = (grid.node(j) - grid.node(i)) / bw;
                    acc += counts[i] * norm * (-(d * d) / S::lit(2.0)).exp();
                }
                acc
            })
            .collect()
    };
    Profile::new(*grid, values, time)?.normalized()
}

/// Short-time moment estimates at `(x0, s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimates<S> {
    pub x0: S,
    pub s: S,
    pub epsilon: S,
    pub escape_rate: S,
    pub drift_hat: S,
    pub diffusion_hat: S,
    pub escape_rate_se: S,
    pub drift_hat_se: S,
    pub diffusion_hat_se: S,
    /// Increments `t - s` used, in decreasing order.
    pub increments: Vec<S>,
    /// Raw per-increment values before extrapolation.
    pub raw_escape: Vec<S>,
    pub raw_drift: Vec<S>,
    pub raw_diffusion: Vec<S>,
}

/// Intercept of the least-squares line through `(x_k, y_k)` and its standard
/// error (zero with exactly two points).
fn extrapolate_to_zero<S: Scalar>(x: &[S], y: &[S], se: Option<&[S]>) -> (S, S) {
    let n = S::lit(x.len() as f64);
    let mx = x.iter().copied().sum::<S>() / n;
    let my = y.iter().copied().sum::<S>() / n;
    let sxx: S = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: S = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // intercept = Σ c_k y_k with c_k = 1/n - mx (x_k - mx)/sxx
    let coeff: Vec<S> = x.iter().map(|&v| S::one() / n - mx * (v - mx) / sxx).collect();
    let se = match se {
        Some(se) => coeff.iter().zip(se).map(|(&c, &s)| c * c * s * s).sum::<S>().sqrt(),
        None if x.len() > 2 => {
            let rss: S = x.iter().zip(y).map(|(&a, &b)| (b - intercept - slope * a).powi(2)).sum();
            let sigma2 = rss / (n - S::lit(2.0));
            (sigma2 * coeff.iter().map(|&c| c * c).sum::<S>()).sqrt()
        }
        None => S::zero(),
    };
    (intercept, se)
}

fn check_moment_inputs<S: Scalar>(increments: &[S], epsilon: S, h: Option<S>) -> Result<()> {
    if increments.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least three increments, got {}", increments.len())));
    }
    if increments.iter().any(|&d| !(d > S::zero())) {
        return Err(Error::InvalidArgument("increments must be positive".into()));
    }
    if let Some(h) = h {
        if epsilon < S::lit(3.0) * h {
            return Err(Error::InvalidArgument(format!("epsilon = {epsilon} is below three grid spacings ({})", S::lit(3.0) * h)));
        }
    } else if !(epsilon > S::zero()) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    Ok(())
}

/// Moments from transition densities `p(·, s, ·, s + Δ_k)` sharing `s`; `x0`
/// must be a grid node.
pub fn estimate_moments<S: Scalar>(densities: &[TransitionDensity<S>], x0: S, epsilon: S) -> Result<MomentEstimates<S>> {
    let first = densities.first().ok_or_else(|| Error::InvalidArgument("no transition densities".into()))?;
    let grid = *first.grid();
    let s = first.s();
    let increments: Vec<S> = densities.iter().map(|p| p.t() - p.s()).collect();
    check_moment_inputs(&increments, epsilon, Some(grid.spacing()))?;
    if densities.iter().any(|p| p.grid() != &grid || (p.s() - s).abs() > S::lit(1e-12)) {
        return Err(Error::InvalidArgument("densities must share grid and start time".into()));
    }
    let i0 = grid
        .node_index(x0, S::lit(1e-6))
        .ok_or_else(|| Error::InvalidArgument(format!("x0 = {x0} is not a grid node")))?;
    let w = grid.weights();
    let mut raw = (Vec::new(), Vec::new(), Vec::new());
    for (p, &d) in densities.iter().zip(&increments) {
        let row = p.row(i0);
        let (mut esc, mut m1, mut m2) = (S::zero(), S::zero(), S::zero());
        for j in 0..grid.len() {
            let dx = grid.node(j) - x0;
            let mass = w[j] * row[j];
            if dx.abs() > epsilon {
                esc += mass;
            } else {
                m1 += mass * dx;
                m2 += mass * dx * dx;
            }
        }
        raw.0.push(esc / d);
        raw.1.push(m1 / d);
        raw.2.push(m2 / d);
    }
    Ok(build_estimates(x0, s, epsilon, increments, raw, None))
}

/// Moments from ensembles started at `x0` at time `s`; the ensemble's last
/// slice is taken at `s + Δ`.
pub fn estimate_moments_from_ensembles<S: Scalar>(ensembles: &[PathEnsemble<S>], x0: S, epsilon: S) -> Result<MomentEstimates<S>> {
    let first = ensembles.first().ok_or_else(|| Error::InvalidArgument("no ensembles".into()))?;
    let s = first.times.t0();
    let increments: Vec<S> = ensembles.iter().map(|e| e.times.t1() - e.times.t0()).collect();
    check_moment_inputs(&increments, epsilon, None)?;
    let mut raw = (Vec::new(), Vec::new(), Vec::new());
    let mut se = (Vec::new(), Vec::new(), Vec::new());
    for (e, &d) in ensembles.iter().zip(&increments) {
        let last = e.n_slices() - 1;
        let n = S::lit(e.n_paths as f64);
        let mut esc = Vec::with_capacity(e.n_paths);
        let mut a = Vec::with_capacity(e.n_paths);
        let mut b = Vec::with_capacity(e.n_paths);
        for p in 0..e.n_paths {
            let dx = e.position(p, last) - x0;
            let out = e.absorbed_at[p].is_some() || dx.abs() > epsilon;
            esc.push(if out { S::one() } else { S::zero() });
            a.push(if out { S::zero() } else { dx });
            b.push(if out { S::zero() } else { dx * dx });
        }
        for (vals, r, s_) in [(&esc, &mut raw.0, &mut se.0), (&a, &mut raw.1, &mut se.1), (&b, &mut raw.2, &mut se.2)] {
            let (mean, var) = mean_var(vals);
            r.push(mean / d);
            s_.push((var / n).sqrt() / d);
        }
    }
    Ok(build_estimates(x0, s, epsilon, increments, raw, Some(se)))
}

type Triple<S> = (Vec<S>, Vec<S>, Vec<S>);

fn build_estimates<S: Scalar>(x0: S, s: S, epsilon: S, increments: Vec<S>, raw: Triple<S>, se: Option<Triple<S>>) -> MomentEstimates<S> {
    let (e, e_se) = extrapolate_to_zero(&increments, &raw.0, se.as_ref().map(|v| v.0.as_slice()));
    let (b, b_se) = extrapolate_to_zero(&increments, &raw.1, se.as_ref().map(|v| v.1.as_slice()));
    let (d, d_se) = extrapolate_to_zero(&increments, &raw.2, se.as_ref().map(|v| v.2.as_slice()));
    MomentEstimates {
        x0,
        s,
        epsilon,
        escape_rate: e,
        drift_hat: b,
        diffusion_hat: d,
        escape_rate_se: e_se,
        drift_hat_se: b_se,
        diffusion_hat_se: d_se,
        increments,
        raw_escape: raw.0,
        raw_drift: raw.1,
        raw_diffusion: raw.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::transition_density;
    use crate::kernel::assemble_kernel_analytic;
    use crate::potentials::PotentialSpec;

    fn cfg(n_paths: usize, dt: f64, t1: f64, m: usize, seed: u64) -> SimulationConfig<f64> {
        SimulationConfig {
            n_paths,
            dt,
            seed,
            domain: (-50.0, 50.0),
            record: TimeGrid::<f64>::uniform(0.0, t1, m).unwrap(),
            guard: None,
        }
    }

    #[test]
    fn inverse_cdf_reproduces_uniform_and_linear() {
        let g = Grid::<f64>::uniform(0.0, 1.0, 11).unwrap();
        let flat = Profile::constant(g, 0.0, 1.0).unwrap();
        let inv = InverseCdf::new(&flat).unwrap();
        for u in [0.0, 0.123, 0.5, 0.999] {
            assert!((inv.sample(u) - u).abs() < 1e-12);
        }
        // density 2x: CDF x², inverse √u
        let lin = Profile::from_fn(g, 0.0, |x| 2.0 * x).unwrap();
        let inv = InverseCdf::new(&lin).unwrap();
        for u in [0.01, 0.2, 0.64, 0.9] {
            assert!((inv.sample(u) - u.sqrt()).abs() < 1e-12, "{u}");
        }
    }

    #[test]
    fn sliced_drift_is_bilinear() {
        let g = Grid::<f64>::uniform(-1.0, 1.0, 21).unwrap();
        let a = Profile::from_fn(g, 0.0, |x| x).unwrap();
        let b = Profile::from_fn(g, 1.0, |x| 3.0 * x + 1.0).unwrap();
        let d = SlicedDrift::new(vec![0.0, 1.0], vec![a, b]).unwrap();
        assert!((d.eval(0.5, 0.25) - (0.75 * 0.5 + 0.25 * 2.5)).abs() < 1e-14);
        assert!((d.eval(0.5, 2.0) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn free_brownian_variance_and_determinism() {
        let c = cfg(100_000, 1e-2, 1.0, 5, 42);
        let zero = |_: f64, _: f64| 0.0;
        let ens = simulate_from_point(&zero, 0.0, &c).unwrap();
        for s in ens.summary() {
            // var of the sample variance of a normal: 2σ⁴/(n-1)
            let se = (2.0f64).sqrt() * 2.0 * s.t / (1e5f64).sqrt();
            assert!((s.var - 2.0 * s.t).abs() <= 3.0 * se + 1e-15, "{s:?}");
        }
        let again = simulate_from_point(&zero, 0.0, &c).unwrap();
        assert_eq!(ens, again);
        let threads = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = threads.install(|| simulate_from_point(&zero, 0.0, &c).unwrap());
        assert_eq!(ens, serial);
    }

    #[test]
    fn config_rejections() {
        let zero = |_: f64, _: f64| 0.0;
        let g = Grid::<f64>::uniform(-3.0, 3.0, 61).unwrap();
        let rho = Profile::from_fn(g, 0.0, |x: f64| (-x * x).exp()).unwrap();
        assert!(simulate_paths(&zero, &rho, &cfg(10, 1e-2, 1.0, 5, 1)).is_err());
        let rho = rho.normalized().unwrap();
        assert!(simulate_paths(&zero, &rho, &cfg(10, 0.0, 1.0, 5, 1)).is_err());
        assert!(simulate_paths(&zero, &rho, &cfg(10, 0.02, 1.0, 5, 1)).is_err());
        assert!(simulate_paths(&zero, &rho, &cfg(10, 0.003, 1.0, 5, 1)).is_err());
        assert!(simulate_paths(&zero, &rho, &cfg(10, 0.01, 1.0, 5, 1)).is_ok());
    }

    #[test]
    fn absorption_is_recorded() {
        let mut c = cfg(2000, 1e-2, 1.0, 5, 3);
        c.domain = (-0.5, 0.5);
        let zero = |_: f64, _: f64| 0.0;
        let ens = simulate_from_point(&zero, 0.0, &c).unwrap();
        assert!(ens.n_absorbed > 1000);
        let sum = ens.summary();
        assert_eq!(sum[0].n_absorbed, 0);
        assert!(sum.windows(2).all(|w| w[1].n_absorbed >= w[0].n_absorbed));
        assert_eq!(sum[4].n_absorbed, ens.n_absorbed);
    }

    #[test]
    fn degenerate_ensemble_gives_unit_bump() {
        let zero = |_: f64, _: f64| 0.0;
        let mut c = cfg(100, 1e-2, 1.0, 2, 1);
        c.domain = (-10.0, 10.0);
        let mut ens = simulate_from_point(&zero, 0.0, &c).unwrap();
        for p in 0..100 {
            ens.positions[p * 2 + 1] = 0.0;
        }
        let g = Grid::<f64>::uniform(-2.0, 2.0, 81).unwrap();
        let d = empirical_density(&ens, 1.0, &g, 0.1).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-12);
        let peak = d.values().iter().enumerate().fold((0, 0.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
        assert_eq!(peak.0, 40);
        assert!(empirical_density(&ens, 0.37, &g, 0.1).is_err());
    }

    #[test]
    fn free_density_and_moments() {
        let c = cfg(100_000, 1e-2, 1.0, 2, 9);
        let zero = |_: f64, _: f64| 0.0;
        let ens = simulate_from_point(&zero, 0.0, &c).unwrap();
        let g = Grid::<f64>::uniform(-8.0, 8.0, 401).unwrap();
        let d = empirical_density(&ens, 1.0, &g, 0.0).unwrap();
        let exact = Profile::from_fn(g, 1.0, |x| (-x * x / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt()).unwrap();
        assert!(d.l1_distance(&exact).unwrap() < 0.02);

        // heat-kernel transition densities: drift 0, diffusion 2
        let spec = PotentialSpec::free();
        let one = Profile::constant(g, 0.0, 1.0).unwrap();
        let dens: Vec<_> = [0.01, 0.005, 0.0025]
            .iter()
            .map(|&dt| {
                let k = assemble_kernel_analytic(&spec, &g, 0.0, dt).unwrap();
                let th = Profile::new(g, k.apply(one.values()), 0.0).unwrap();
                transition_density(&k, &one, &th).unwrap()
            })
            .collect();
        let m = estimate_moments(&dens, 0.0, 1.0).unwrap();
        assert!(m.drift_hat.abs() < 1e-8);
        assert!((m.diffusion_hat - 2.0).abs() < 0.1);
        assert!(m.raw_escape.windows(2).all(|w| w[1] < w[0]));
        assert!(estimate_moments(&dens[..2], 0.0, 1.0).is_err());
        assert!(estimate_moments(&dens, 0.0, 0.1).is_err());
    }
}
