//! Schrödinger system solver (iterative proportional fitting) and the objects
//! derived from its factor pair: the theta pair, the interpolating density,
//! the Markov transition density and the forward drift.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, Profile, TimeGrid};
use crate::kernel::{assemble_kernel_pde_padded_sides, KernelMatrix};
use crate::potentials::PotentialSpec;
use crate::scalar::Scalar;

/// Relative floor below which marginal tails are clipped before solving.
pub const POSITIVITY_FLOOR: f64 = 1e-14;

/// Default row-sum tolerance of [`transition_density`]: ten times a quadrature
/// tolerance of `1e-5`.
pub const DEFAULT_ROW_TOL: f64 = 1e-4;

/// Boundary marginals, the end-to-end kernel and, optionally, the kernel pair
/// `K(0, t_k)`, `K(t_k, T)` for every slice of a time grid.
#[derive(Debug, Clone)]
pub struct BridgeProblem<S> {
    rho0: Profile<S>,
    rho_t: Profile<S>,
    kernel: KernelMatrix<S>,
    times: TimeGrid<S>,
    /// `K(0, t_k)`; `None` at `k = 0` (identity).
    from_start: Vec<Option<KernelMatrix<S>>>,
    /// `K(t_k, T)`; `None` at the last slice (identity).
    to_end: Vec<Option<KernelMatrix<S>>>,
}

impl<S: Scalar> BridgeProblem<S> {
    /// Problem with only the two endpoint slices.
    pub fn new(rho0: Profile<S>, rho_t: Profile<S>, kernel: KernelMatrix<S>) -> Result<Self> {
        let times = TimeGrid::uniform(kernel.s(), kernel.t(), 2)?;
        let from_start = vec![None, Some(kernel.clone())];
        let to_end = vec![Some(kernel.clone()), None];
        Self::with_slices(rho0, rho_t, kernel, times, from_start, to_end)
    }

    /// Problem with explicit slice kernels. Entries at the first and last slice
    /// may be `None`; every interior slice needs both kernels.
    pub fn with_slices(
        rho0: Profile<S>,
        rho_t: Profile<S>,
        kernel: KernelMatrix<S>,
        times: TimeGrid<S>,
        from_start: Vec<Option<KernelMatrix<S>>>,
        to_end: Vec<Option<KernelMatrix<S>>>,
    ) -> Result<Self> {
        let grid = *kernel.grid();
        if rho0.grid() != &grid || rho_t.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        // short-time kernels underflow far off the diagonal; a positive
        // diagonal keeps every scaling denominator positive
        if let Some(i) = (0..kernel.n()).find(|&i| !(kernel.get(i, i) > S::zero())) {
            return Err(Error::KernelNotPositive(kernel.get(i, i).as_f64()));
        }
        for (name, p) in [("rho0", &rho0), ("rhoT", &rho_t)] {
            let mass = p.integral();
            if (mass - S::one()).abs() > S::lit(1e-6) {
                return Err(Error::InvalidArgument(format!("{name} integrates to {mass}, expected 1")));
            }
        }
        let close = |a: S, b: S| (a - b).abs() <= S::lit(1e-9) * (S::one() + b.abs());
        if !close(times.t0(), kernel.s()) || !close(times.t1(), kernel.t()) {
            return Err(Error::TimeChain(format!(
                "time grid [{}, {}] does not match kernel [{}, {}]",
                times.t0(),
                times.t1(),
                kernel.s(),
                kernel.t()
            )));
        }
        let m = times.len();
        if from_start.len() != m || to_end.len() != m {
            return Err(Error::LengthMismatch { len: from_start.len().min(to_end.len()), n: m });
        }
        for k in 0..m {
            let t = times.time(k);
            match &from_start[k] {
                Some(kk) if !(close(kk.s(), times.t0()) && close(kk.t(), t)) || kk.grid() != &grid => {
                    return Err(Error::TimeChain(format!("slice {k}: K(0,t) spans [{}, {}]", kk.s(), kk.t())))
                }
                None if k > 0 => return Err(Error::MissingSlice(t.as_f64())),
                _ => {}
            }
            match &to_end[k] {
                Some(kk) if !(close(kk.s(), t) && close(kk.t(), times.t1())) || kk.grid() != &grid => {
                    return Err(Error::TimeChain(format!("slice {k}: K(t,T) spans [{}, {}]", kk.s(), kk.t())))
                }
                None if k + 1 < m => return Err(Error::MissingSlice(t.as_f64())),
                _ => {}
            }
        }
        Ok(Self { rho0, rho_t, kernel, times, from_start, to_end })
    }

    /// Assembles every slice kernel by Crank-Nicolson propagation with about
    /// `opts.steps_per_unit` steps per unit time (more if stiffness demands).
    pub fn assemble_pde(
        spec: &PotentialSpec<S>,
        rho0: Profile<S>,
        rho_t: Profile<S>,
        times: TimeGrid<S>,
        opts: PdeOptions,
    ) -> Result<Self> {
        let grid = *rho0.grid();
        let (t0, t1) = (times.t0(), times.t1());
        let m = times.len();
        let jobs: Vec<(S, S)> = (1..m)
            .map(|k| (t0, times.time(k)))
            .chain((1..m - 1).map(|k| (times.time(k), t1)))
            .collect();
        let mut kernels = jobs
            .iter()
            .map(|&(a, b)| pde_kernel_auto(spec, &grid, a, b, opts))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut from_start = vec![None];
        for _ in 1..m {
            from_start.push(kernels.next());
        }
        let mut to_end: Vec<Option<KernelMatrix<S>>> = Vec::with_capacity(m);
        let full = from_start[m - 1].clone().expect("end-to-end kernel assembled");
        to_end.push(Some(full.clone()));
        for _ in 1..m - 1 {
            to_end.push(kernels.next());
        }
        to_end.push(None);
        Self::with_slices(rho0, rho_t, full, times, from_start, to_end)
    }

    pub fn rho0(&self) -> &Profile<S> {
        &self.rho0
    }

    pub fn rho_t(&self) -> &Profile<S> {
        &self.rho_t
    }

    pub fn kernel(&self) -> &KernelMatrix<S> {
        &self.kernel
    }

    pub fn times(&self) -> &TimeGrid<S> {
        &self.times
    }

    pub fn grid(&self) -> &Grid<S> {
        self.kernel.grid()
    }

    /// `K(0, t_k)`, or `None` at the first slice.
    pub fn kernel_from_start(&self, k: usize) -> Option<&KernelMatrix<S>> {
        self.from_start.get(k).and_then(Option::as_ref)
    }

    /// `K(t_k, T)`, or `None` at the last slice.
    pub fn kernel_to_end(&self, k: usize) -> Option<&KernelMatrix<S>> {
        self.to_end.get(k).and_then(Option::as_ref)
    }
}

/// Resolution of per-slice kernel assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdeOptions {
    pub steps_per_unit: usize,
    /// Nodes added beyond each padded grid end during propagation.
    pub pad: usize,
    pub pad_lower: bool,
    pub pad_upper: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self { steps_per_unit: 400, pad: 50, pad_lower: true, pad_upper: true }
    }
}

impl PdeOptions {
    /// Options for a half-line component whose node sits at the lower end
    /// (`node_below`) or the upper end of its grid.
    pub fn for_component(self, node_below: bool) -> Self {
        Self { pad_lower: !node_below, pad_upper: node_below, ..self }
    }

    fn pads(&self) -> (usize, usize) {
        (if self.pad_lower { self.pad } else { 0 }, if self.pad_upper { self.pad } else { 0 })
    }
}

/// Crank-Nicolson kernel over `[s, t]` with step count scaled to the duration
/// and raised to satisfy the stiffness bound when needed.
pub fn pde_kernel_auto<S: Scalar>(
    spec: &PotentialSpec<S>,
    grid: &Grid<S>,
    s: S,
    t: S,
    opts: PdeOptions,
) -> Result<KernelMatrix<S>> {
    let n = ((t - s) * S::lit(opts.steps_per_unit as f64)).ceil().to_usize().unwrap_or(1).max(8);
    let (lo, hi) = opts.pads();
    match assemble_kernel_pde_padded_sides(spec, grid, s, t, n, lo, hi) {
        Err(Error::StiffnessBound { required, .. }) => {
            assemble_kernel_pde_padded_sides(spec, grid, s, t, required.max(n), lo, hi)
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<S> {
    pub tol: S,
    pub max_iter: usize,
}

impl<S: Scalar> Default for SolveOptions<S> {
    fn default() -> Self {
        Self { tol: S::lit(1e-10), max_iter: 10_000 }
    }
}

/// Factor pair with the slice quantities built from it.
#[derive(Debug, Clone)]
pub struct BridgeSolution<S> {
    pub f: Profile<S>,
    pub g: Profile<S>,
    pub times: Vec<S>,
    pub theta: Vec<Profile<S>>,
    pub theta_star: Vec<Profile<S>>,
    pub rho: Vec<Profile<S>>,
    pub drift: Vec<Profile<S>>,
    pub marginal_residual: S,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<S>,
}

impl<S: Scalar> BridgeSolution<S> {
    /// Builds every slice quantity from a given factor pair. Used by the
    /// solver and to check gauge covariance.
    pub fn from_factors(prob: &BridgeProblem<S>, f: Profile<S>, g: Profile<S>) -> Result<Self> {
        let (theta, theta_star) = propagate_theta(prob, &f, &g)?;
        let rho = theta
            .iter()
            .zip(&theta_star)
            .map(|(a, b)| a.zip_map(b, |x, y| x * y))
            .collect::<Result<Vec<_>>>()?;
        let drift = drift_field(&theta)?;
        let residual = marginal_residual(prob, &f, &g);
        Ok(Self {
            f,
            g,
            times: prob.times.times(),
            theta,
            theta_star,
            rho,
            drift,
            marginal_residual: residual,
            iterations: 0,
            converged: true,
            residual_history: Vec::new(),
        })
    }

    /// Factorized joint density `m[i][j] = f_i K[i][j] g_j`.
    pub fn joint_density(&self, kernel: &KernelMatrix<S>) -> Vec<S> {
        let n = kernel.n();
        let (f, g) = (self.f.values(), self.g.values());
        (0..n * n).map(|ij| f[ij / n] * kernel.get(ij / n, ij % n) * g[ij % n]).collect()
    }

    pub fn slice_index(&self, t: S) -> Option<usize> {
        let tol = S::lit(1e-9) * (S::one() + t.abs());
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// `p(t_a → t_b)` between two slices using the problem's kernels. Only
    /// pairs that start at 0 or end at T have kernels available. The earlier
    /// θ is recomputed through the same kernel, see
    /// [`transition_density_consistent`].
    pub fn transition(&self, prob: &BridgeProblem<S>, a: usize, b: usize) -> Result<TransitionDensity<S>> {
        let last = self.times.len() - 1;
        if a >= b || b > last {
            return Err(Error::InvalidArgument(format!("need slice indices a < b <= {last}, got {a}, {b}")));
        }
        let kernel = if a == 0 {
            prob.kernel_from_start(b)
        } else if b == last {
            prob.kernel_to_end(a)
        } else {
            None
        };
        let kernel = kernel.ok_or(Error::MissingSlice(self.times[b].as_f64()))?;
        transition_density_consistent(kernel, &self.theta[b])
    }
}

/// Sum of the L1 errors of both marginal constraints.
/// L1 errors of both marginal constraints given `kg = K w g`.
fn marginal_errors<S: Scalar>(kernel: &KernelMatrix<S>, rho0: &[S], rho_t: &[S], f: &[S], g: &[S], kg: &[S]) -> (S, S) {
    let ktf = kernel.apply_transpose(f);
    let w = kernel.grid().weights();
    let e0 = (0..w.len()).map(|i| w[i] * (f[i] * kg[i] - rho0[i]).abs()).sum();
    let e1 = (0..w.len()).map(|i| w[i] * (g[i] * ktf[i] - rho_t[i]).abs()).sum();
    (e0, e1)
}

fn marginal_residual<S: Scalar>(prob: &BridgeProblem<S>, f: &Profile<S>, g: &Profile<S>) -> S {
    let kg = prob.kernel.apply(g.values());
    let (a, b) = marginal_errors(&prob.kernel, prob.rho0.values(), prob.rho_t.values(), f.values(), g.values(), &kg);
    a.max(b)
}

/// Clips tails below `POSITIVITY_FLOOR · peak` and renormalizes; refuses
/// interior zeros.
fn floor_marginal<S: Scalar>(name: &str, p: &Profile<S>) -> Result<Profile<S>> {
    let v = p.values();
    if let Some((index, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < S::zero()) {
        return Err(Error::NegativeValue { index, value: x.as_f64() });
    }
    let peak = p.max_value();
    let floor = peak * S::lit(POSITIVITY_FLOOR);
    let first = v.iter().position(|&x| x > floor);
    let last = v.iter().rposition(|&x| x > floor);
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::NonPositiveMass(p.integral().as_f64()));
    };
    if let Some(i) = (first..=last).find(|&i| v[i] <= S::zero()) {
        return Err(Error::NodalMarginal(i));
    }
    let clipped = v.iter().filter(|&&x| x < floor).count();
    if clipped == 0 {
        return Ok(p.clone());
    }
    log::warn!("{name}: {clipped} values below {POSITIVITY_FLOOR:e} of the peak raised to the floor");
    Profile::new(*p.grid(), v.iter().map(|&x| x.max(floor)).collect(), p.time())?.normalized()
}

fn divide<S: Scalar>(num: &[S], den: &[S], side: &'static str) -> Result<Vec<S>> {
    num.iter()
        .zip(den)
        .enumerate()
        .map(|(index, (&a, &d))| {
            let q = a / d;
            if !(d > S::zero()) || !q.is_finite() {
                Err(Error::ZeroDenominator { index, side })
            } else {
                Ok(q)
            }
        })
        .collect()
}

/// Runs the fixed-point iteration and returns the solution whether or not it
/// converged; `converged` and `marginal_residual` report the outcome.
pub fn solve_schrodinger_system_unchecked<S: Scalar>(prob: &BridgeProblem<S>, opts: SolveOptions<S>) -> Result<BridgeSolution<S>> {
    if !(opts.tol > S::zero()) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("tol must be positive and max_iter at least 1".into()));
    }
    let rho0 = floor_marginal("rho0", &prob.rho0)?;
    let rho_t = floor_marginal("rhoT", &prob.rho_t)?;
    let grid = *prob.grid();
    let t0 = prob.times.t0();
    let t1 = prob.times.t1();
    // √ρ_T is the exact factor for a zero-duration kernel, which makes short
    // bridges converge without the slow drift through near-free gauges
    let mut g: Vec<S> = rho_t.values().iter().map(|v| v.sqrt()).collect();
    let mut kg = prob.kernel.apply(&g);
    let mut f = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        f = divide(rho0.values(), &kg, "K g")?;
        let ktf = prob.kernel.apply_transpose(&f);
        g = divide(rho_t.values(), &ktf, "K^T f")?;
        kg = prob.kernel.apply(&g);
        let (e0, e1) = marginal_errors(&prob.kernel, rho0.values(), rho_t.values(), &f, &g, &kg);
        let residual = e0.max(e1);
        if let Some(&prev) = history.last() {
            if residual > prev * S::lit(1.0 + 1e-12) {
                log::warn!("marginal residual increased at iteration {iterations}: {prev:e} -> {residual:e}");
            }
        }
        log::trace!("iteration {iterations}: residual {residual:e}");
        history.push(residual);
        if residual <= opts.tol {
            converged = true;
            break;
        }
    }
    let fi: S = grid.weights().iter().zip(&f).map(|(&w, &x)| w * x).sum();
    let gi: S = grid.weights().iter().zip(&g).map(|(&w, &x)| w * x).sum();
    let lambda = (gi / fi).sqrt();
    let f = Profile::new(grid, f.iter().map(|&x| x * lambda).collect(), t0)?;
    let g = Profile::new(grid, g.iter().map(|&x| x / lambda).collect(), t1)?;
    let mut sol = BridgeSolution::from_factors(prob, f, g)?;
    sol.iterations = iterations;
    sol.converged = converged;
    sol.marginal_residual = *history.last().unwrap_or(&S::infinity());
    sol.residual_history = history;
    if converged {
        log::info!("bridge converged in {iterations} iterations, residual {:e}", sol.marginal_residual);
    } else {
        log::warn!("bridge stopped after {iterations} iterations, residual {:e}", sol.marginal_residual);
    }
    Ok(sol)
}

/// Solves the Schrödinger system; non-convergence is an error carrying the
/// last residual.
pub fn solve_schrodinger_system<S: Scalar>(prob: &BridgeProblem<S>, tol: S, max_iter: usize) -> Result<BridgeSolution<S>> {
    let sol = solve_schrodinger_system_unchecked(prob, SolveOptions { tol, max_iter })?;
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged { iterations: sol.iterations, residual: sol.marginal_residual.as_f64() })
    }
}

/// Per-slice `θ` and `θ*`.
pub type ThetaPair<S> = (Vec<Profile<S>>, Vec<Profile<S>>);

/// `θ(·,t_k) = K(t_k,T) w g` and `θ*(·,t_k) = K(0,t_k)ᵀ w f`, with the
/// zero-duration kernels at the ends taken as the identity.
pub fn propagate_theta<S: Scalar>(prob: &BridgeProblem<S>, f: &Profile<S>, g: &Profile<S>) -> Result<ThetaPair<S>> {
    let grid = *prob.grid();
    let m = prob.times.len();
    let slices: Vec<(Profile<S>, Profile<S>)> = (0..m)
        .into_par_iter()
        .map(|k| {
            let t = prob.times.time(k);
            let theta = match prob.kernel_to_end(k) {
                Some(kk) => kk.apply(g.values()),
                None if k + 1 == m => g.values().to_vec(),
                None => return Err(Error::MissingSlice(t.as_f64())),
            };
            let theta_star = match prob.kernel_from_start(k) {
                Some(kk) => kk.apply_transpose(f.values()),
                None if k == 0 => f.values().to_vec(),
                None => return Err(Error::MissingSlice(t.as_f64())),
            };
            Ok((Profile::new(grid, theta, t)?, Profile::new(grid, theta_star, t)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(slices.into_iter().unzip())
}

/// `b(·,t) = 2 ∇ ln θ(·,t)` by central differences, per slice.
pub fn drift_field<S: Scalar>(theta: &[Profile<S>]) -> Result<Vec<Profile<S>>> {
    theta
        .iter()
        .map(|th| {
            if let Some((index, v)) = th.values().iter().enumerate().find(|(_, v)| !(**v > S::zero())) {
                return Err(Error::NonPositiveInterior { index, value: v.as_f64() });
            }
            Ok(th.map(|v| v.ln()).gradient().scaled(S::lit(2.0)))
        })
        .collect()
}

/// Markov transition density `p(y_i, s, x_j, t)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDensity<S> {
    grid: Grid<S>,
    s: S,
    t: S,
    entries: Vec<S>,
}

impl<S: Scalar> TransitionDensity<S> {
    pub fn from_entries(grid: Grid<S>, s: S, t: S, entries: Vec<S>) -> Result<Self> {
        let n = grid.len();
        if entries.len() != n * n {
            return Err(Error::LengthMismatch { len: entries.len(), n: n * n });
        }
        if let Some((index, v)) = entries.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < S::zero()) {
            return Err(Error::NegativeValue { index, value: v.as_f64() });
        }
        Ok(Self { grid, s, t, entries })
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn s(&self) -> S {
        self.s
    }

    pub fn t(&self) -> S {
        self.t
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.entries[i * self.grid.len() + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let n = self.grid.len();
        &self.entries[i * n..(i + 1) * n]
    }

    pub fn entries(&self) -> &[S] {
        &self.entries
    }

    pub fn row_sums(&self) -> Vec<S> {
        let w = self.grid.weights();
        (0..self.grid.len()).map(|i| self.row(i).iter().zip(&w).map(|(&p, &w)| p * w).sum()).collect()
    }

    /// Pushes a density forward: `ρ_t(x_j) = Σ_i w_i ρ_s(y_i) p[i][j]`.
    pub fn propagate(&self, rho: &Profile<S>) -> Result<Profile<S>> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let n = self.grid.len();
        let w = self.grid.weights();
        let mut out = vec![S::zero(); n];
        for i in 0..n {
            let a = w[i] * rho.values()[i];
            for (o, &p) in out.iter_mut().zip(self.row(i)) {
                *o += a * p;
            }
        }
        Profile::new(self.grid, out, self.t)
    }

    /// Chapman-Kolmogorov composition with a later density.
    pub fn compose(&self, later: &Self) -> Result<Self> {
        if self.grid != later.grid {
            return Err(Error::GridMismatch);
        }
        if (self.t - later.s).abs() > S::lit(1e-9) * (S::one() + self.t.abs()) {
            return Err(Error::TimeChain(format!("{} -> {} then {} -> {}", self.s, self.t, later.s, later.t)));
        }
        let n = self.grid.len();
        let w = self.grid.weights();
        let entries = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut out = vec![S::zero(); n];
                for k in 0..n {
                    let a = self.get(i, k) * w[k];
                    for (o, &b) in out.iter_mut().zip(later.row(k)) {
                        *o += a * b;
                    }
                }
                out
            })
            .collect();
        Ok(Self { grid: self.grid, s: self.s, t: later.t, entries })
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.entries.iter().zip(&other.entries).fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }
}

/// `p[i][j] = K[i][j] θ_t[j] / θ_s[i]` with rows renormalized when their
/// quadrature sum is within [`DEFAULT_ROW_TOL`] of one.
pub fn transition_density<S: Scalar>(
    kernel: &KernelMatrix<S>,
    theta_t: &Profile<S>,
    theta_s: &Profile<S>,
) -> Result<TransitionDensity<S>> {
    transition_density_with_tol(kernel, theta_t, theta_s, S::lit(DEFAULT_ROW_TOL))
}

/// Transition density with `θ_s = K w θ_t` computed through `kernel` itself,
/// so every row is stochastic on the truncated grid. Away from the grid ends
/// this `θ_s` agrees with the bridge's own slice to discretization accuracy;
/// near the ends it accounts for the mass the truncation removes.
pub fn transition_density_consistent<S: Scalar>(kernel: &KernelMatrix<S>, theta_t: &Profile<S>) -> Result<TransitionDensity<S>> {
    let theta_s = Profile::new(*kernel.grid(), kernel.apply(theta_t.values()), kernel.s())?;
    transition_density(kernel, theta_t, &theta_s)
}

pub fn transition_density_with_tol<S: Scalar>(
    kernel: &KernelMatrix<S>,
    theta_t: &Profile<S>,
    theta_s: &Profile<S>,
    row_tol: S,
) -> Result<TransitionDensity<S>> {
    let grid = *kernel.grid();
    if theta_t.grid() != &grid || theta_s.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    for th in [theta_t, theta_s] {
        if let Some((index, v)) = th.values().iter().enumerate().find(|(_, v)| !(**v > S::zero())) {
            return Err(Error::NonPositiveInterior { index, value: v.as_f64() });
        }
    }
    let n = grid.len();
    let w = grid.weights();
    let rows: Vec<Vec<S>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let inv = S::one() / theta_s.values()[i];
            let mut row: Vec<S> = kernel.row(i).iter().zip(theta_t.values()).map(|(&k, &th)| k * th * inv).collect();
            let sum: S = row.iter().zip(&w).map(|(&p, &w)| p * w).sum();
            if !((sum - S::one()).abs() < row_tol) {
                return Err(Error::RowSum { row: i, sum: sum.as_f64(), tol: row_tol.as_f64() });
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    TransitionDensity::from_entries(grid, kernel.s(), kernel.t(), rows.into_iter().flatten().collect())
}
