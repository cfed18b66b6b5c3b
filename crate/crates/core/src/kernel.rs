//! Feynman-Kac kernels `k(y, s, x, t)` for the generator `Δ - c(x, t)`, built
//! three ways: closed form, Crank-Nicolson propagation of discrete deltas, and
//! Monte Carlo path integration with first-exit killing and Wiener exclusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, Profile};
use crate::potentials::{PotentialKind, PotentialSpec};
use crate::scalar::{pairwise_sum, Scalar};

/// Discretized kernel between two times: `entries[i*n + j] ≈ k(y_i, s, x_j, t)`.
///
/// Quadrature convention: `∫ f(y) k(y,s,x_j,t) dy ≈ Σ_i w_i f_i K[i][j]` with
/// trapezoid weights `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<S> {
    grid: Grid<S>,
    s: S,
    t: S,
    entries: Vec<S>,
    clamped: S,
}

impl<S: Scalar> KernelMatrix<S> {
    pub fn from_entries(grid: Grid<S>, s: S, t: S, entries: Vec<S>) -> Result<Self> {
        let n = grid.len();
        if entries.len() != n * n {
            return Err(Error::LengthMismatch { len: entries.len(), n: n * n });
        }
        if let Some((index, v)) = entries.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < S::zero()) {
            return Err(Error::NonFinite { index, value: v.as_f64() });
        }
        if t < s {
            return Err(Error::TimeChain(format!("kernel end {t} precedes start {s}")));
        }
        Ok(Self { grid, s, t, entries, clamped: S::zero() })
    }

    /// Zero-duration kernel: the quadrature identity `δ_ij / w_i`.
    pub fn identity(grid: Grid<S>, t: S) -> Self {
        let n = grid.len();
        let mut entries = vec![S::zero(); n * n];
        for i in 0..n {
            entries[i * n + i] = S::one() / grid.weight(i);
        }
        Self { grid, s: t, t, entries, clamped: S::zero() }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    #[inline]
    pub fn s(&self) -> S {
        self.s
    }

    #[inline]
    pub fn t(&self) -> S {
        self.t
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    #[inline]
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

    /// Largest magnitude of negative entries zeroed during assembly.
    pub fn clamped(&self) -> S {
        self.clamped
    }

    pub fn min_entry(&self) -> S {
        self.entries.iter().copied().fold(S::infinity(), S::min)
    }

    /// `(K w v)_i = Σ_j K[i][j] w_j v_j`, i.e. `∫ k(y_i, s, x, t) v(x) dx`.
    pub fn apply(&self, v: &[S]) -> Vec<S> {
        let w = self.grid.weights();
        let wv: Vec<S> = w.iter().zip(v).map(|(&a, &b)| a * b).collect();
        (0..self.n())
            .into_par_iter()
            .map(|i| self.row(i).iter().zip(&wv).map(|(&k, &x)| k * x).sum())
            .collect()
    }

    /// `(Kᵀ w v)_j = Σ_i w_i v_i K[i][j]`, i.e. `∫ v(y) k(y, s, x_j, t) dy`.
    pub fn apply_transpose(&self, v: &[S]) -> Vec<S> {
        let n = self.n();
        let w = self.grid.weights();
        let chunk = 64;
        let partials: Vec<Vec<S>> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(chunk)
            .map(|rows| {
                let mut acc = vec![S::zero(); n];
                for &i in rows {
                    let a = w[i] * v[i];
                    for (o, &k) in acc.iter_mut().zip(self.row(i)) {
                        *o += a * k;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![S::zero(); n];
        for p in partials {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    /// Quadrature integral of each row over `x`.
    pub fn row_integrals(&self) -> Vec<S> {
        let ones = vec![S::one(); self.n()];
        self.apply(&ones)
    }

    /// `Σ_k A[i][k] w_k B[k][j]`.
    pub fn compose(&self, later: &Self) -> Result<Self> {
        if self.grid != later.grid {
            return Err(Error::GridMismatch);
        }
        if !close_times(self.t, later.s) {
            return Err(Error::TimeChain(format!("{} -> {} then {} -> {}", self.s, self.t, later.s, later.t)));
        }
        let n = self.n();
        let w = self.grid.weights();
        let entries: Vec<S> = (0..n)
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
        Ok(Self { grid: self.grid, s: self.s, t: later.t, entries, clamped: S::zero() })
    }

    pub fn transposed_entries(&self) -> Vec<S> {
        let n = self.n();
        let mut out = vec![S::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                out[j * n + i] = self.get(i, j);
            }
        }
        out
    }
}

fn close_times<S: Scalar>(a: S, b: S) -> bool {
    (a - b).abs() <= S::lit(1e-12) * (S::one() + a.abs().max(b.abs()))
}

/// Free kernel `(4πτ)^{-1/2} exp(-(x-y)²/(4τ))` of `∂_t u = Δu`.
pub fn heat_kernel<S: Scalar>(y: S, x: S, tau: S) -> Result<S> {
    if !(tau > S::zero()) {
        return Err(Error::InvalidArgument(format!("heat kernel needs tau > 0, got {tau}")));
    }
    let d = x - y;
    Ok((-(d * d) / (S::lit(4.0) * tau)).exp() / (S::lit(4.0) * S::PI() * tau).sqrt())
}

/// Kernel of `exp(-τ(-Δ + x² - 1))` (Mehler formula shifted by the ground
/// energy). Tends to `π^{-1/2} e^{-(x²+y²)/2}` as `τ → ∞`.
pub fn harmonic_kernel<S: Scalar>(y: S, x: S, tau: S) -> Result<S> {
    if !(tau > S::zero()) {
        return Err(Error::InvalidArgument(format!("harmonic kernel needs tau > 0, got {tau}")));
    }
    let two = S::lit(2.0);
    let e = (-S::lit(4.0) * tau).exp();
    // sinh(2τ) = e^{2τ}(1 - e^{-4τ})/2, coth(2τ) = (1 + e^{-4τ})/(1 - e^{-4τ})
    let one_minus = -(-S::lit(4.0) * tau).exp_m1();
    let coth = (S::one() + e) / one_minus;
    let csch = two * (-two * tau).exp() / one_minus;
    let expo = -((x * x + y * y) * coth - two * x * y * csch) / two;
    // log prefactor: τ - ½ ln(2π sinh 2τ) = -½ ln(π (1 - e^{-4τ}))
    let log_pref = -(S::PI() * one_minus).ln() / two;
    Ok((expo + log_pref).exp())
}

/// Closed-form kernel sampled on the grid (free and harmonic potentials only).
pub fn assemble_kernel_analytic<S: Scalar>(spec: &PotentialSpec<S>, grid: &Grid<S>, s: S, t: S) -> Result<KernelMatrix<S>> {
    if !(t > s) {
        return Err(Error::TimeChain(format!("need t > s, got s = {s}, t = {t}")));
    }
    let f: fn(S, S, S) -> Result<S> = match spec.kind {
        PotentialKind::Free => heat_kernel,
        PotentialKind::Harmonic => harmonic_kernel,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no closed-form kernel for the {} potential",
                spec.name()
            )))
        }
    };
    let nodes = grid.nodes();
    let tau = t - s;
    let entries = nodes
        .iter()
        .flat_map(|&y| nodes.iter().map(move |&x| f(y, x, tau)))
        .collect::<Result<Vec<_>>>()?;
    KernelMatrix::from_entries(*grid, s, t, entries)
}

/// Crank-Nicolson diffusion with ghost-node Dirichlet truncation one spacing
/// beyond each grid end, Strang-split with the exact potential factor
/// `exp(-c Δτ/2)` on both sides of each diffusion step. The first step is
/// replaced by two backward-Euler half steps (Rannacher start) to damp the
/// high-frequency content of delta initial data.
struct Stepper<S> {
    n: usize,
    half_r: S,
    /// Forward-eliminated super-diagonal and pivots of `I - (r/2) L`.
    cprime: Vec<S>,
    pivot: Vec<S>,
}

impl<S: Scalar> Stepper<S> {
    fn new(n: usize, r: S) -> Self {
        let half_r = r / S::lit(2.0);
        let diag = S::one() + r;
        let off = -half_r;
        let mut cprime = vec![S::zero(); n];
        let mut pivot = vec![S::zero(); n];
        pivot[0] = diag;
        cprime[0] = off / diag;
        for i in 1..n {
            pivot[i] = diag - off * cprime[i - 1];
            cprime[i] = off / pivot[i];
        }
        Self { n, half_r, cprime, pivot }
    }

    /// Solves `(I - (r/2) L) x = rhs` in place.
    fn solve(&self, rhs: &mut [S]) {
        let off = -self.half_r;
        rhs[0] /= self.pivot[0];
        for i in 1..self.n {
            rhs[i] = (rhs[i] - off * rhs[i - 1]) / self.pivot[i];
        }
        for i in (0..self.n - 1).rev() {
            let next = rhs[i + 1];
            rhs[i] -= self.cprime[i] * next;
        }
    }

    fn crank_nicolson(&self, u: &mut [S], scratch: &mut [S]) {
        let n = self.n;
        let two = S::lit(2.0);
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { S::zero() };
            let right = if i + 1 < n { u[i + 1] } else { S::zero() };
            scratch[i] = u[i] + self.half_r * (left - two * u[i] + right);
        }
        self.solve(scratch);
        u.copy_from_slice(scratch);
    }

    fn backward_euler_half(&self, u: &mut [S]) {
        self.solve(u);
    }
}

/// Precomputed potential factors for every (sub)step of a propagation.
struct Schedule<S> {
    /// `exp(-c(x, τ_mid) Δτ_k / 2)` per substep; one entry for static potentials.
    factors: Vec<Vec<S>>,
    /// Whether substep `k` is a backward-Euler half step.
    half: Vec<bool>,
    static_potential: bool,
}

impl<S: Scalar> Schedule<S> {
    fn factor(&self, k: usize) -> &[S] {
        if self.static_potential {
            &self.factors[0]
        } else {
            &self.factors[k]
        }
    }
}

/// Midpoint times and lengths of the substeps covering `[s, t]`: the first
/// Crank-Nicolson step is split into two half steps.
fn substeps<S: Scalar>(s: S, t: S, n_steps: usize) -> Vec<(S, S, bool)> {
    let dt = (t - s) / S::lit(n_steps as f64);
    let half = dt / S::lit(2.0);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push((s + half / S::lit(2.0), half, true));
    out.push((s + half + half / S::lit(2.0), half, true));
    for k in 1..n_steps {
        out.push((s + (S::lit(k as f64) + S::lit(0.5)) * dt, dt, false));
    }
    out
}

fn build_schedule<S: Scalar>(
    spec: &PotentialSpec<S>,
    grid: &Grid<S>,
    s: S,
    t: S,
    n_steps: usize,
) -> Result<Schedule<S>> {
    if !(t > s) {
        return Err(Error::TimeChain(format!("need t > s, got s = {s}, t = {t}")));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be positive".into()));
    }
    if let Some(z) = spec.singular_point_within(grid.x_min(), grid.x_max(), s, t) {
        return Err(Error::SingularPotential(format!("{} potential is infinite at x = {z}", spec.name())));
    }
    let dt = (t - s) / S::lit(n_steps as f64);
    let steps = substeps(s, t, n_steps);
    let static_potential = !spec.is_time_dependent();
    let mut factors = Vec::new();
    let mut max_c = S::zero();
    let times: Vec<S> = if static_potential { vec![s] } else { steps.iter().map(|st| st.0).collect() };
    for (k, &tm) in times.iter().enumerate() {
        let c = spec.sample(grid, tm)?;
        if let Some((i, v)) = c.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::SingularPotential(format!("c = {v} at node {i}")));
        }
        max_c = c.iter().fold(max_c, |m, v| m.max(v.abs()));
        let len = if static_potential { dt } else { steps[k].1 };
        let _ = len;
        factors.push(c);
    }
    if dt * max_c > S::lit(0.5) {
        let required = ((t - s) * max_c * S::lit(2.0)).ceil().to_usize().unwrap_or(usize::MAX);
        return Err(Error::StiffnessBound { n_steps, max_c: max_c.as_f64(), required });
    }
    // turn potentials into split factors; static potentials need one per step length
    let half = S::lit(0.5);
    let factors = if static_potential {
        let c = &factors[0];
        vec![
            c.iter().map(|&v| (-v * dt * half).exp()).collect(),
            c.iter().map(|&v| (-v * dt * half * half).exp()).collect(),
        ]
    } else {
        factors
            .iter()
            .zip(&steps)
            .map(|(c, st)| c.iter().map(|&v| (-v * st.1 * half).exp()).collect())
            .collect()
    };
    Ok(Schedule { factors, half: steps.iter().map(|st| st.2).collect(), static_potential })
}

impl<S: Scalar> Schedule<S> {
    fn static_factor(&self, half_step: bool) -> &[S] {
        if half_step {
            &self.factors[1]
        } else {
            &self.factors[0]
        }
    }

    fn len(&self) -> usize {
        self.half.len()
    }

    fn substep_factor(&self, k: usize) -> &[S] {
        if self.static_potential {
            self.static_factor(self.half[k])
        } else {
            self.factor(k)
        }
    }
}

struct Propagation<S> {
    full: Stepper<S>,
    half: Stepper<S>,
    schedule: Schedule<S>,
}

impl<S: Scalar> Propagation<S> {
    fn new(spec: &PotentialSpec<S>, grid: &Grid<S>, s: S, t: S, n_steps: usize) -> Result<Self> {
        let schedule = build_schedule(spec, grid, s, t, n_steps)?;
        let h = grid.spacing();
        let r = (t - s) / S::lit(n_steps as f64) / (h * h);
        Ok(Self { full: Stepper::new(grid.len(), r), half: Stepper::new(grid.len(), r), schedule })
    }

    /// Runs substeps in `order` on `u`.
    fn run(&self, u: &mut [S], reverse: bool) {
        let mut scratch = vec![S::zero(); u.len()];
        let n = self.schedule.len();
        for idx in 0..n {
            let k = if reverse { n - 1 - idx } else { idx };
            let f = self.schedule.substep_factor(k);
            for (x, &g) in u.iter_mut().zip(f) {
                *x *= g;
            }
            if self.schedule.half[k] {
                self.half.backward_euler_half(u);
            } else {
                self.full.crank_nicolson(u, &mut scratch);
            }
            for (x, &g) in u.iter_mut().zip(f) {
                *x *= g;
            }
        }
    }
}

/// Propagates `u(·, s)` to time `t` under `∂_t u = Δu - c u`. Returns the
/// propagated profile and the largest negative value clamped to zero.
pub fn propagate_profile<S: Scalar>(spec: &PotentialSpec<S>, u: &Profile<S>, t: S, n_steps: usize) -> Result<(Profile<S>, S)> {
    let prop = Propagation::new(spec, u.grid(), u.time(), t, n_steps)?;
    let mut v = u.values().to_vec();
    prop.run(&mut v, false);
    let clamped = clamp_negative(&mut v);
    Ok((Profile::new(*u.grid(), v, t)?, clamped))
}

/// Propagates final data `v(·, t)` backward to time `s` under the adjoint
/// equation `∂_t v = -Δv + c v`.
pub fn propagate_profile_backward<S: Scalar>(spec: &PotentialSpec<S>, v: &Profile<S>, s: S, n_steps: usize) -> Result<(Profile<S>, S)> {
    let prop = Propagation::new(spec, v.grid(), s, v.time(), n_steps)?;
    let mut u = v.values().to_vec();
    prop.run(&mut u, true);
    let clamped = clamp_negative(&mut u);
    Ok((Profile::new(*v.grid(), u, s)?, clamped))
}

fn clamp_negative<S: Scalar>(v: &mut [S]) -> S {
    let mut worst = S::zero();
    for x in v.iter_mut() {
        if *x < S::zero() {
            worst = worst.max(-*x);
            *x = S::zero();
        }
    }
    worst
}

/// Kernel from forward propagation of the discrete deltas `e_i / w_i`.
pub fn assemble_kernel_pde<S: Scalar>(
    spec: &PotentialSpec<S>,
    grid: &Grid<S>,
    s: S,
    t: S,
    n_steps: usize,
) -> Result<KernelMatrix<S>> {
    assemble_kernel_pde_padded(spec, grid, s, t, n_steps, 0)
}

/// As [`assemble_kernel_pde`], but the propagation runs on `grid` extended by
/// `pad` nodes on each side and the result is restricted back to `grid`. The
/// Dirichlet truncation then acts beyond the grid, so entries near the grid
/// ends approximate the whole-line kernel pointwise instead of being killed.
pub fn assemble_kernel_pde_padded<S: Scalar>(
    spec: &PotentialSpec<S>,
    grid: &Grid<S>,
    s: S,
    t: S,
    n_steps: usize,
    pad: usize,
) -> Result<KernelMatrix<S>> {
    assemble_kernel_pde_padded_sides(spec, grid, s, t, n_steps, pad, pad)
}

/// Padding chosen per side; a half-line component pads only away from its
/// node so the Dirichlet condition stays on the node.
pub fn assemble_kernel_pde_padded_sides<S: Scalar>(
    spec: &PotentialSpec<S>,
    grid: &Grid<S>,
    s: S,
    t: S,
    n_steps: usize,
    pad_lo: usize,
    pad_hi: usize,
) -> Result<KernelMatrix<S>> {
    let n = grid.len();
    let h = grid.spacing();
    let pad = pad_lo;
    let work = if pad_lo + pad_hi == 0 {
        *grid
    } else {
        let lo = grid.x_min() - S::lit(pad_lo as f64) * h;
        let hi = grid.x_max() + S::lit(pad_hi as f64) * h;
        Grid::uniform(lo, hi, n + pad_lo + pad_hi)?
    };
    let prop = Propagation::new(spec, &work, s, t, n_steps)?;
    let rows: Vec<(Vec<S>, S)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut u = vec![S::zero(); work.len()];
            u[i + pad] = S::one() / work.weight(i + pad);
            prop.run(&mut u, false);
            let c = clamp_negative(&mut u);
            u.truncate(n + pad);
            u.drain(..pad);
            (u, c)
        })
        .collect();
    let clamped = rows.iter().fold(S::zero(), |m, r| m.max(r.1));
    if clamped > S::zero() {
        log::debug!("kernel assembly clamped negative entries down to -{clamped:e}");
    }
    let entries = rows.into_iter().flat_map(|r| r.0).collect();
    let mut k = KernelMatrix::from_entries(*grid, s, t, entries)?;
    k.clamped = clamped;
    Ok(k)
}

/// The same kernel assembled column by column from the time-reversed adjoint
/// equation `∂_t v = -Δv + c v`.
pub fn assemble_kernel_pde_adjoint<S: Scalar>(
    spec: &PotentialSpec<S>,
    grid: &Grid<S>,
    s: S,
    t: S,
    n_steps: usize,
) -> Result<KernelMatrix<S>> {
    let prop = Propagation::new(spec, grid, s, t, n_steps)?;
    let n = grid.len();
    let cols: Vec<(Vec<S>, S)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut v = vec![S::zero(); n];
            v[j] = S::one() / grid.weight(j);
            prop.run(&mut v, true);
            let c = clamp_negative(&mut v);
            (v, c)
        })
        .collect();
    let clamped = cols.iter().fold(S::zero(), |m, c| m.max(c.1));
    let mut entries = vec![S::zero(); n * n];
    for (j, (col, _)) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            entries[i * n + j] = v;
        }
    }
    let mut k = KernelMatrix::from_entries(*grid, s, t, entries)?;
    k.clamped = clamped;
    Ok(k)
}

/// Sup over `(i, j)` of `|Σ_k K_st[i][k] w_k K_tu[k][j] - K_su[i][j]|`,
/// restricted to nodes inside `window` when given.
pub fn chapman_kolmogorov_residual<S: Scalar>(
    k_st: &KernelMatrix<S>,
    k_tu: &KernelMatrix<S>,
    k_su: &KernelMatrix<S>,
    window: Option<(S, S)>,
) -> Result<S> {
    if k_st.grid != k_tu.grid || k_st.grid != k_su.grid {
        return Err(Error::GridMismatch);
    }
    if !close_times(k_st.t, k_tu.s) || !close_times(k_st.s, k_su.s) || !close_times(k_tu.t, k_su.t) {
        return Err(Error::TimeChain(format!(
            "{}->{}, {}->{} do not chain into {}->{}",
            k_st.s, k_st.t, k_tu.s, k_tu.t, k_su.s, k_su.t
        )));
    }
    let grid = k_st.grid;
    let n = grid.len();
    let w = grid.weights();
    let inside: Vec<usize> = match window {
        Some((lo, hi)) => (0..n).filter(|&i| grid.node(i) >= lo && grid.node(i) <= hi).collect(),
        None => (0..n).collect(),
    };
    let worst = inside
        .par_iter()
        .map(|&i| {
            let mut row = vec![S::zero(); n];
            for k in 0..n {
                let a = k_st.get(i, k) * w[k];
                for (o, &b) in row.iter_mut().zip(k_tu.row(k)) {
                    *o += a * b;
                }
            }
            inside.iter().fold(S::zero(), |m, &j| m.max((row[j] - k_su.get(i, j)).abs()))
        })
        .reduce(S::zero, S::max);
    Ok(worst)
}

/// How Monte Carlo paths are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathScheme {
    /// Free paths from `(y, s)`; the final step contributes the Gaussian
    /// transition density into `x`. Unbiased for `c = 0` with a nonzero
    /// standard error.
    Forward,
    /// Brownian bridges pinned at `(y, s)` and `(x, t)`; the estimate is the
    /// free kernel times the mean Feynman-Kac weight.
    PinnedBridge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig<S> {
    pub n_paths: usize,
    pub n_time: usize,
    pub seed: u64,
    /// First-exit killing outside this open interval.
    pub domain: Option<(S, S)>,
    pub scheme: PathScheme,
}

impl<S: Scalar> McConfig<S> {
    pub fn new(n_paths: usize, n_time: usize, seed: u64) -> Self {
        Self { n_paths, n_time, seed, domain: None, scheme: PathScheme::Forward }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate<S> {
    pub mean: S,
    pub std_error: S,
    pub n_paths: usize,
    /// Paths given weight zero by killing or exclusion.
    pub n_excluded: usize,
}

/// Accumulated-potential threshold `ln(1/1e-300)` beyond which a path counts
/// as excluded.
pub fn exclusion_threshold<S: Scalar>() -> S {
    S::lit(300.0 * std::f64::consts::LN_10)
}

/// Per-path random stream: ChaCha8 keyed by `seed`, stream = path index.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Probability that a Brownian bridge with quadratic variation `2δ` between
/// `a` and `b` on the same side of `z` touches `z`.
#[inline]
fn bridge_hit_probability<S: Scalar>(a: S, b: S, z: S, delta: S) -> S {
    (-((a - z) * (b - z)) / delta).exp()
}

enum PathOutcome<S> {
    Weight(S),
    Excluded,
}

/// Monte Carlo estimate of `k(y, s, x, t)`.
///
/// Between sampled points the path is a Brownian bridge; its midpoint is
/// sampled for the midpoint-in-time Riemann sum of `c`, and each half-segment
/// contributes the exact probability of not touching a domain end or a
/// singular point. A path whose sampled points leave the domain, straddle a
/// singular point, land on it, or accumulate `∫c > ln(1e300)` gets weight 0.
pub fn mc_kernel_estimate<S: Scalar>(spec: &PotentialSpec<S>, y: S, x: S, s: S, t: S, cfg: &McConfig<S>) -> Result<McEstimate<S>> {
    if !(t > s) {
        return Err(Error::TimeChain(format!("need t > s, got s = {s}, t = {t}")));
    }
    if cfg.n_time < 8 {
        return Err(Error::InvalidArgument(format!("n_time must be >= 8, got {}", cfg.n_time)));
    }
    if cfg.n_paths < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    for (p, tp) in [(y, s), (x, t)] {
        let outside = cfg.domain.is_some_and(|(lo, hi)| !(p > lo && p < hi));
        if outside || spec.singular_points_at(tp).contains(&p) {
            return Err(Error::PointExcluded(p.as_f64()));
        }
    }
    let weights: Vec<(S, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = path_rng(cfg.seed, idx as u64);
            match path_weight(spec, y, x, s, t, cfg, &mut rng) {
                PathOutcome::Weight(w) => (w, false),
                PathOutcome::Excluded => (S::zero(), true),
            }
        })
        .collect();
    let n_excluded = weights.iter().filter(|w| w.1).count();
    let values: Vec<S> = weights.into_iter().map(|w| w.0).collect();
    let n = S::lit(cfg.n_paths as f64);
    let mean = pairwise_sum(&values) / n;
    let sq: Vec<S> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - S::one());
    let scale = match cfg.scheme {
        PathScheme::Forward => S::one(),
        PathScheme::PinnedBridge => heat_kernel(y, x, t - s)?,
    };
    Ok(McEstimate { mean: mean * scale, std_error: (var / n).sqrt() * scale, n_paths: cfg.n_paths, n_excluded })
}

fn path_weight<S: Scalar>(
    spec: &PotentialSpec<S>,
    y: S,
    x: S,
    s: S,
    t: S,
    cfg: &McConfig<S>,
    rng: &mut ChaCha8Rng,
) -> PathOutcome<S> {
    let two = S::lit(2.0);
    let half = S::lit(0.5);
    let steps = cfg.n_time;
    let dt = (t - s) / S::lit(steps as f64);
    let sub = dt * half;
    let threshold = exclusion_threshold::<S>();
    let time_dependent = spec.is_time_dependent();
    let mut pos = y;
    let mut tau = s;
    let mut action = S::zero();
    let mut survival = S::one();
    let mut last_density = S::one();
    for k in 0..steps {
        let remaining = t - tau;
        let end = if k + 1 == steps {
            x
        } else {
            match cfg.scheme {
                PathScheme::Forward => pos + (two * dt).sqrt() * S::standard_normal(rng),
                PathScheme::PinnedBridge => {
                    let frac = dt / remaining;
                    let mean = pos + (x - pos) * frac;
                    let var = two * dt * (remaining - dt) / remaining;
                    mean + var.sqrt() * S::standard_normal(rng)
                }
            }
        };
        if k + 1 == steps && cfg.scheme == PathScheme::Forward {
            last_density = match heat_kernel(pos, x, dt) {
                Ok(v) => v,
                Err(_) => return PathOutcome::Excluded,
            };
        }
        if let Some((lo, hi)) = cfg.domain {
            if !(end > lo && end < hi) {
                return PathOutcome::Excluded;
            }
        }
        let mid = (pos + end) * half + sub.sqrt() * S::standard_normal(rng);
        let t_mid = tau + sub;
        let c = match spec.evaluate(mid, if time_dependent { t_mid } else { s }) {
            Ok(v) => v,
            Err(_) => return PathOutcome::Excluded,
        };
        if !c.is_finite() {
            return PathOutcome::Excluded;
        }
        action += c * dt;
        if action > threshold {
            return PathOutcome::Excluded;
        }
        for (a, b) in [(pos, mid), (mid, end)] {
            if let Some((lo, hi)) = cfg.domain {
                if !(a > lo && a < hi && b > lo && b < hi) {
                    return PathOutcome::Excluded;
                }
                survival *= S::one() - bridge_hit_probability(a, b, lo, sub);
                survival *= S::one() - bridge_hit_probability(a, b, hi, sub);
            }
            if let Some(z) = spec.singular_point_within(S::neg_infinity(), S::infinity(), tau, tau + dt) {
                if (a - z) * (b - z) <= S::zero() {
                    return PathOutcome::Excluded;
                }
                survival *= S::one() - bridge_hit_probability(a, b, z, sub);
            }
        }
        pos = end;
        tau += dt;
    }
    PathOutcome::Weight(survival * (-action).exp() * last_density)
}
